use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const INP: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/reference25.inp");

fn pipeburst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipeburst"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulate(out: &Path, pipe: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate", "--inp", INP, "--burst-pipe", pipe, "--capture-interval", "0.2",
        "--duration", "40", "--seed", "7", "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    pipeburst(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_201_frames_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let out = simulate(&a, "P2", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("201 frames"));
    assert!(stderr(&out).contains("burst_pipe = P2"));
    assert_eq!(simulate(&b, "P2", &[]).status.code(), Some(0));
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 202);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
}

#[test]
fn simulate_rejects_unknown_pipe() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&dir.path().join("x.csv"), "QQ", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown pipe QQ"), "{}", stderr(&out));
}

#[test]
fn detect_replays_burst_on_pipe_3() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    assert_eq!(simulate(&trace, "3", &["--noise-std", "0"]).status.code(), Some(0));
    let out = pipeburst(&[
        "detect", "--inp", INP, "--replay", trace.to_str().unwrap(), "--detector", "cusum",
        "--threshold", "0.3", "--interval", "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let mut pair = [v["start_node"].as_str().unwrap(), v["end_node"].as_str().unwrap()];
    pair.sort();
    assert_eq!(pair, ["1", "2"]);
    assert!(v["decided_at_s"].as_f64().unwrap() <= 2.0);
}

#[test]
fn detect_on_steady_trace_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("steady.csv");
    // burst after the end of the trace: every frame is steady state
    let sim = simulate(&trace, "P1", &["--noise-std", "0", "--burst-start", "100"]);
    assert_eq!(sim.status.code(), Some(0), "{}", stderr(&sim));
    let out = pipeburst(&[
        "detect", "--inp", INP, "--replay", trace.to_str().unwrap(), "--detector", "shewhart",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout(&out).trim(), r#"{"result":"no_burst_found"}"#);
}

#[test]
fn detect_without_detector_is_a_usage_error() {
    let out = pipeburst(&["detect", "--burst-pipe", "P2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--detector"));
}

#[test]
fn detect_missing_replay_is_an_io_error() {
    let out = pipeburst(&["detect", "--detector", "cusum", "--replay", "/nonexistent/trace.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bench_default_grid_has_100_cells() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = pipeburst(&[
        "bench", "--inp", INP, "--detector", "cusum", "--format", "json", "--jobs", "2",
        "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 100);
    assert_eq!(v["accuracy_by_scenario"].as_object().unwrap().len(), 4);
}

#[test]
fn bench_custom_scenarios_match_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("custom.toml");
    fs::write(
        &rows,
        "[[scenario]]\nname = \"fine\"\ndetector = \"shewhart\"\ncapture_interval = 0.2\n\
         threshold = 1.5\nlocalization_interval = 5\n\n\
         [[scenario]]\nname = \"coarse\"\ndetector = \"shewhart\"\ncapture_interval = 2.0\n\
         threshold = 1.0\nlocalization_interval = 10\n",
    )
    .unwrap();
    let out = pipeburst(&["bench", "--detector", "shewhart", "--scenarios", rows.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 1 + 2 * 25);
}

#[test]
fn bench_unwritable_out_exits_2() {
    let out = pipeburst(&["bench", "--detector", "cusum", "--out", "/nonexistent-dir/report.csv"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

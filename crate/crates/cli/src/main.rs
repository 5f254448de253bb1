//! `pipeburst` command line: simulate burst traces, localize a burst from a
//! trace, and run accuracy grids.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use pipeburst::bench::{
    calibrated_scenarios, emit_report, load_scenarios, run_grid, BenchError, DetectorKind,
    GridOptions, ReportFormat, ScenarioSpec,
};
use pipeburst::cpd::{CusumParams, ShewhartParams};
use pipeburst::localizer::{run_pipeline, LocalizerError};
use pipeburst::network::parse_inp;
use pipeburst::transient::{generate_trace, load_replay, stream, Trace, TransientError};
use pipeburst::{
    BurstScenario, Detector, DirectedNetworkGraph, LocalizerConfig, NetworkModel, Pacing,
    TraceConfig,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("no burst found")]
    NoBurst,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::NoBurst => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<TransientError> for CliError {
    fn from(e: TransientError) -> Self {
        match e {
            TransientError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Io(e) => CliError::Io(e.to_string()),
            BenchError::Transient(e) => e.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "pipeburst", version, about = "Pipe burst localization from nodal pressure traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a burst pressure trace and write it as CSV.
    Simulate(SimulateArgs),
    /// Localize a burst from a replayed or freshly simulated trace.
    Detect(DetectArgs),
    /// Run the per-pipe accuracy grid and write a report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct NetworkArgs {
    /// EPANET-style network file; the built-in 25-pipe network when omitted.
    #[arg(long)]
    inp: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, default_value_t = 0.5)]
    burst_position: f64,
    /// Burst onset, seconds.
    #[arg(long, default_value_t = 10.0)]
    burst_start: f64,
    /// Eventual pressure drop next to the burst, meters.
    #[arg(long, default_value_t = 15.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.2)]
    capture_interval: f64,
    #[arg(long, default_value_t = 40.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
}

impl TraceArgs {
    fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            capture_interval: self.capture_interval,
            duration: self.duration,
            noise_std: self.noise_std,
            rng_seed: self.seed,
            ..TraceConfig::default()
        }
    }

    fn scenario(&self, pipe: &str) -> BurstScenario {
        BurstScenario {
            position: self.burst_position,
            start_time: self.burst_start,
            magnitude: self.magnitude,
            ..BurstScenario::new(pipe)
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long)]
    burst_pipe: String,
    #[command(flatten)]
    trace: TraceArgs,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Cusum,
    Shewhart,
}

impl From<DetectorArg> for DetectorKind {
    fn from(d: DetectorArg) -> Self {
        match d {
            DetectorArg::Cusum => DetectorKind::Cusum,
            DetectorArg::Shewhart => DetectorKind::Shewhart,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PacingArg {
    Realtime,
    Fast,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    network: NetworkArgs,
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// Detector threshold; defaults to 0.3 (cusum) or 1.5 (shewhart).
    #[arg(long)]
    threshold: Option<f64>,
    /// CUSUM drift.
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// New frames per localization batch.
    #[arg(long, default_value_t = 5)]
    interval: usize,
    /// Trace CSV to replay instead of simulating.
    #[arg(long, conflicts_with = "burst_pipe")]
    replay: Option<PathBuf>,
    /// Simulate a burst on this pipe instead of replaying.
    #[arg(long)]
    burst_pipe: Option<String>,
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_enum, default_value = "fast")]
    pacing: PacingArg,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    network: NetworkArgs,
    /// Selects the built-in scenario rows for this detector.
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// TOML file of `[[scenario]]` rows, used instead of the built-in ones.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Use the reference thresholds instead of the calibrated ones.
    #[arg(long)]
    reference_thresholds: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

fn banner(command: &str, entries: &[(&str, String)]) {
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "pipeburst {command}");
    for (k, v) in entries {
        let _ = writeln!(err, "  {k} = {v}");
    }
}

fn load_model(args: &NetworkArgs) -> Result<NetworkModel, CliError> {
    let Some(path) = &args.inp else {
        return Ok(NetworkModel::reference25());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_inp(&text).map_err(|e| usage(format!("--inp {}: {e}", path.display())))
}

fn inp_label(args: &NetworkArgs) -> String {
    args.inp
        .as_ref()
        .map_or("<built-in reference network>".into(), |p| p.display().to_string())
}

/// Fails early when `path` cannot be created, before any work is done.
fn check_writable(path: &Path) -> Result<(), CliError> {
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(|_| ())
        .map_err(|e| usage(format!("--out {} is not writable: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let model = load_model(&args.network)?;
    let cfg = args.trace.trace_config();
    let scenario = args.trace.scenario(&args.burst_pipe);
    banner(
        "simulate",
        &[
            ("inp", inp_label(&args.network)),
            ("burst_pipe", args.burst_pipe.clone()),
            ("burst_position", scenario.position.to_string()),
            ("burst_start_s", scenario.start_time.to_string()),
            ("magnitude", scenario.magnitude.to_string()),
            ("capture_interval_s", cfg.capture_interval.to_string()),
            ("duration_s", cfg.duration.to_string()),
            ("noise_std", cfg.noise_std.to_string()),
            ("seed", cfg.rng_seed.to_string()),
            ("out", args.out.display().to_string()),
        ],
    );
    if model.pipe(&scenario.pipe).is_none() {
        return Err(usage(format!("--burst-pipe: unknown pipe {}", args.burst_pipe)));
    }
    let trace = generate_trace(&model, &scenario, &cfg)?;
    check_writable(&args.out)?;
    trace
        .write_csv(&args.out)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", args.out.display())))?;
    println!("{} frames", trace.frames.len());
    Ok(())
}

fn detect(args: DetectArgs) -> Result<(), CliError> {
    let kind = args
        .detector
        .ok_or_else(|| usage("--detector is required (cusum or shewhart)"))?;
    let model = load_model(&args.network)?;
    let detector = match kind {
        DetectorArg::Cusum => CusumParams::new(args.threshold.unwrap_or(0.3), args.drift)
            .map(Detector::Cusum),
        DetectorArg::Shewhart => ShewhartParams::new(args.threshold.unwrap_or(1.5)).map(Detector::Shewhart),
    }
    .map_err(|e| usage(format!("--threshold/--drift: {e}")))?;

    let (trace, source): (Trace, String) = match (&args.replay, &args.burst_pipe) {
        (Some(path), _) => {
            let trace = load_replay(path).map_err(|e| match e {
                TransientError::Io(e) => CliError::Io(format!("cannot read {}: {e}", path.display())),
                other => usage(format!("--replay {}: {other}", path.display())),
            })?;
            (trace, format!("replay {}", path.display()))
        }
        (None, Some(pipe)) => {
            let scenario = args.trace.scenario(pipe);
            if model.pipe(&scenario.pipe).is_none() {
                return Err(usage(format!("--burst-pipe: unknown pipe {pipe}")));
            }
            let trace = generate_trace(&model, &scenario, &args.trace.trace_config())?;
            (trace, format!("simulated burst on {pipe}"))
        }
        (None, None) => return Err(usage("either --replay or --burst-pipe is required")),
    };

    let pacing = match args.pacing {
        PacingArg::Realtime => Pacing::RealTime,
        PacingArg::Fast => Pacing::AsFastAsPossible,
    };
    banner(
        "detect",
        &[
            ("inp", inp_label(&args.network)),
            ("trace", source),
            ("detector", detector.name().to_string()),
            ("threshold", detector.threshold().to_string()),
            ("drift", args.drift.to_string()),
            ("localization_interval", args.interval.to_string()),
            ("burst_start_s", args.trace.burst_start.to_string()),
            ("pacing", pacing_label(pacing).into()),
        ],
    );

    let graph = DirectedNetworkGraph::outward(&model);
    let cfg = LocalizerConfig {
        detector,
        localization_interval: args.interval,
        metered_nodes: trace.nodes.iter().cloned().collect(),
        burst_start_s: args.trace.burst_start,
    };
    match run_pipeline(stream(trace.frames, pacing), &graph, &cfg) {
        Ok(result) => {
            println!("{}", result.to_json());
            Ok(())
        }
        Err(LocalizerError::NoBurstFound) => {
            println!("{{\"result\":\"no_burst_found\"}}");
            Err(CliError::NoBurst)
        }
        Err(e) => Err(usage(e.to_string())),
    }
}

fn pacing_label(p: Pacing) -> &'static str {
    match p {
        Pacing::RealTime => "realtime",
        Pacing::AsFastAsPossible => "fast",
    }
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let model = load_model(&args.network)?;
    let scenarios: Vec<ScenarioSpec> = match (&args.scenarios, args.detector) {
        (Some(path), kind) => {
            let rows = load_scenarios(path).map_err(|e| match e {
                BenchError::Io(e) => CliError::Io(format!("cannot read {}: {e}", path.display())),
                other => usage(format!("--scenarios {}: {other}", path.display())),
            })?;
            match kind {
                Some(k) => rows.into_iter().filter(|s| s.detector == k.into()).collect(),
                None => rows,
            }
        }
        (None, Some(k)) if args.reference_thresholds => match k {
            DetectorArg::Cusum => ScenarioSpec::cusum_table(),
            DetectorArg::Shewhart => ScenarioSpec::shewhart_table(),
        },
        (None, Some(k)) => calibrated_scenarios(k.into()),
        (None, None) => return Err(usage("--detector or --scenarios is required")),
    };
    if scenarios.is_empty() {
        return Err(usage("no scenario rows match --detector"));
    }
    let opts = GridOptions {
        trace: TraceConfig {
            noise_std: args.noise_std,
            rng_seed: args.seed,
            ..TraceConfig::default()
        },
        jobs: args.jobs,
        ..GridOptions::default()
    };
    banner(
        "bench",
        &[
            ("inp", inp_label(&args.network)),
            (
                "scenarios",
                scenarios
                    .iter()
                    .map(|s| format!("{}({} thr {} dt {} k {})", s.name, s.detector, s.threshold, s.capture_interval, s.localization_interval))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            ("noise_std", opts.trace.noise_std.to_string()),
            ("seed", opts.trace.rng_seed.to_string()),
            ("jobs", opts.jobs.to_string()),
            (
                "out",
                args.out.as_ref().map_or("<stdout>".into(), |p| p.display().to_string()),
            ),
        ],
    );
    if let Some(out) = &args.out {
        check_writable(out)?;
    }
    let report = run_grid(&model, &scenarios, &opts)?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    let text = emit_report(&report, format);
    match &args.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    for (name, acc) in report.accuracy_by_scenario() {
        eprintln!("{name}: {acc}%");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::NoBurst) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}


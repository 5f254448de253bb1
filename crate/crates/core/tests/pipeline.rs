//! End-to-end runs on the 25-pipe reference network.

use std::collections::BTreeSet;

mod common;

use pipeburst::bench::{emit_report, run_grid, GridOptions, ReportFormat, ScenarioSpec};
use pipeburst::localizer::{detect_all_nodes, run_pipeline, LocalizerError};
use pipeburst::transient::{generate_trace, steady_trace, stream, PressureFrame};
use pipeburst::{
    BurstScenario, DirectedNetworkGraph, LinkId, LocalizerConfig, NetworkModel, NodeId, Pacing,
    TraceConfig,
};

fn junctions(model: &NetworkModel) -> BTreeSet<NodeId> {
    model.junctions().iter().map(|j| j.id.clone()).collect()
}

fn config(model: &NetworkModel, spec: &ScenarioSpec) -> LocalizerConfig {
    LocalizerConfig {
        detector: spec.detector().unwrap(),
        localization_interval: spec.localization_interval,
        metered_nodes: junctions(model),
        burst_start_s: 10.0,
    }
}

fn fine_specs() -> [ScenarioSpec; 2] {
    [
        ScenarioSpec::cusum_table().remove(0),
        ScenarioSpec::shewhart_table().remove(0),
    ]
}

#[test]
fn burst_on_pipe_3_is_located_between_1_and_2() {
    let model = NetworkModel::reference25();
    let graph = DirectedNetworkGraph::outward(&model);
    let cfg = TraceConfig {
        noise_std: 0.0,
        ..TraceConfig::default()
    };
    let trace = generate_trace(&model, &BurstScenario::new("3"), &cfg).unwrap();
    for spec in fine_specs() {
        let r = run_pipeline(trace.frames.clone(), &graph, &config(&model, &spec)).unwrap();
        let pair: BTreeSet<&str> = [r.start_node.as_str(), r.end_node.as_str()].into();
        assert_eq!(pair, BTreeSet::from(["1", "2"]), "{}", spec.name);
        assert_eq!(r.link, LinkId::from("3"));
        assert!(r.decided_at > 0.0 && r.decided_at <= 1.0, "{}", r.decided_at);
    }
}

#[test]
fn steady_trace_finds_no_burst() {
    let model = NetworkModel::reference25();
    let graph = DirectedNetworkGraph::outward(&model);
    let trace = steady_trace(&model, &TraceConfig::default()).unwrap();
    for spec in fine_specs() {
        let r = run_pipeline(stream(trace.frames.clone(), Pacing::AsFastAsPossible), &graph, &config(&model, &spec));
        assert!(matches!(r, Err(LocalizerError::NoBurstFound)), "{r:?}");
    }
}

#[test]
fn one_node_step_is_the_only_detection() {
    let model = NetworkModel::reference25();
    let metered = junctions(&model);
    let frames: Vec<PressureFrame> = (0..10)
        .map(|k| {
            let readings = metered
                .iter()
                .map(|n| {
                    let v = if n.as_str() == "N4" && k >= 5 { 35.0 } else { 50.0 };
                    (n.clone(), v)
                })
                .collect();
            PressureFrame {
                timestamp: k as f64 * 0.2,
                readings,
                complete: true,
            }
        })
        .collect();
    let spec = ScenarioSpec::cusum_table().remove(0);
    let events = detect_all_nodes(&frames, &config(&model, &spec)).unwrap();
    assert_eq!(events.keys().map(NodeId::as_str).collect::<Vec<_>>(), ["N4"]);
    let e = &events[&NodeId::from("N4")][0];
    assert_eq!(e.amplitude, -15.0);
    let x: Vec<f64> = frames.iter().map(|f| f.readings[&NodeId::from("N4")]).collect();
    let reference = common::oracle_cusum(&x, 0.3, 0.0, true);
    assert_eq!((reference.s, reference.e), (vec![0], vec![9]));
    // flat stretches never push the zero-drift sums below zero, so both
    // passes keep their origin: the interval spans the whole window
    assert_eq!((e.start_index, e.end_index), (0, 9));
}

#[test]
fn two_scenarios_cover_fifty_cells() {
    let model = NetworkModel::reference25();
    let report = run_grid(&model, &fine_specs(), &GridOptions::noise_free()).unwrap();
    assert_eq!(report.cells.len(), 50);
    assert_eq!(report.accuracy_by_scenario().len(), 2);
    let csv = emit_report(&report, ReportFormat::Csv);
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.starts_with("scenario,pipe,expected,located_start,located_end,rule,correct,decided_at_s\n"));
}

#[test]
fn single_pipe_network_without_signal_reports_no_burst() {
    let text = "[JUNCTIONS]\nA 0 0\n[RESERVOIRS]\nR 50\n[PIPES]\nP R A 1000 0.3 100\n[END]\n";
    let model = pipeburst::network::parse_inp(text).unwrap();
    let opts = GridOptions {
        magnitude: 1e-6,
        ..GridOptions::noise_free()
    };
    let report = run_grid(&model, &fine_specs()[..1], &opts).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    assert!(cell.located.is_none() && !cell.correct && cell.rule.is_none());
    assert!(emit_report(&report, ReportFormat::Csv).contains("no-burst-found"));
}

#[test]
fn reports_are_byte_stable() {
    let model = NetworkModel::reference25();
    let opts = GridOptions {
        trace: TraceConfig {
            rng_seed: 3,
            ..TraceConfig::default()
        },
        ..GridOptions::default()
    };
    let a = run_grid(&model, &fine_specs(), &opts).unwrap();
    let b = run_grid(&model, &fine_specs(), &GridOptions { jobs: 2, ..opts }).unwrap();
    assert_eq!(emit_report(&a, ReportFormat::Json), emit_report(&b, ReportFormat::Json));
    assert_eq!(emit_report(&a, ReportFormat::Csv), emit_report(&b, ReportFormat::Csv));
    let v: serde_json::Value = serde_json::from_str(&emit_report(&a, ReportFormat::Json)).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 50);
}

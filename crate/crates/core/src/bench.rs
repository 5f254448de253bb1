//! Accuracy grids: one burst per pipe for every scenario, each trace pushed
//! through the full localization pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpd::{CusumParams, Detector, ShewhartParams};
use crate::localizer::{run_pipeline, DecisionRule, LocalizerConfig, LocalizerError};
use crate::network::{DirectedNetworkGraph, LinkId, NetworkModel, NodeId, NodeKind};
use crate::transient::{generate_trace, BurstScenario, TraceConfig, TransientError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("accuracy needs at least one pipe")]
    ZeroTotal,
    #[error("correct count {correct} exceeds total {total}")]
    CountOverflow { correct: usize, total: usize },
    #[error("no scenarios to run")]
    NoScenarios,
    #[error("invalid scenario {name}: {message}")]
    InvalidScenario { name: String, message: String },
    #[error("scenario file: {0}")]
    ScenarioFile(String),
    #[error(transparent)]
    Transient(#[from] TransientError),
    #[error(transparent)]
    Localizer(#[from] LocalizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Percentage of correctly located pipes, `100 * correct / total`.
pub fn accuracy(correct: usize, total: usize) -> Result<f64, BenchError> {
    if total == 0 {
        return Err(BenchError::ZeroTotal);
    }
    if correct > total {
        return Err(BenchError::CountOverflow { correct, total });
    }
    // 100 * correct is exact in integers; one rounding in the division
    Ok((100 * correct) as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Cusum,
    Shewhart,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Cusum => "cusum",
            DetectorKind::Shewhart => "shewhart",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub detector: DetectorKind,
    /// Seconds.
    pub capture_interval: f64,
    /// Meters (CUSUM) or the dual-use Shewhart threshold.
    pub threshold: f64,
    /// Frames per localization batch.
    pub localization_interval: usize,
    /// CUSUM drift; ignored for Shewhart.
    #[serde(default)]
    pub drift: f64,
}

impl ScenarioSpec {
    fn row(name: &str, detector: DetectorKind, capture: f64, threshold: f64, interval: usize) -> Self {
        Self {
            name: name.to_owned(),
            detector,
            capture_interval: capture,
            threshold,
            localization_interval: interval,
            drift: 0.0,
        }
    }

    /// The four reference CUSUM scenarios.
    pub fn cusum_table() -> Vec<Self> {
        use DetectorKind::Cusum;
        vec![
            Self::row("S_C1", Cusum, 0.2, 0.3, 5),
            Self::row("S_C2", Cusum, 2.0, 2.0, 10),
            Self::row("S_C3", Cusum, 5.0, 10.0, 10),
            Self::row("S_C4", Cusum, 10.0, 13.0, 10),
        ]
    }

    /// The four reference Shewhart scenarios.
    pub fn shewhart_table() -> Vec<Self> {
        use DetectorKind::Shewhart;
        vec![
            Self::row("S_S1", Shewhart, 0.2, 1.5, 5),
            Self::row("S_S2", Shewhart, 2.0, 3.0, 10),
            Self::row("S_S3", Shewhart, 5.0, 2.0, 10),
            Self::row("S_S4", Shewhart, 10.0, 3.0, 10),
        ]
    }

    pub fn detector(&self) -> Result<Detector, BenchError> {
        let invalid = |e: crate::cpd::CpdError| BenchError::InvalidScenario {
            name: self.name.clone(),
            message: e.to_string(),
        };
        Ok(match self.detector {
            DetectorKind::Cusum => {
                Detector::Cusum(CusumParams::new(self.threshold, self.drift).map_err(invalid)?)
            }
            DetectorKind::Shewhart => {
                Detector::Shewhart(ShewhartParams::new(self.threshold).map_err(invalid)?)
            }
        })
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.detector()?;
        let invalid = |message: String| BenchError::InvalidScenario {
            name: self.name.clone(),
            message,
        };
        if !(self.capture_interval > 0.0 && self.capture_interval.is_finite()) {
            return Err(invalid(format!("capture_interval = {}", self.capture_interval)));
        }
        if self.localization_interval < 2 {
            return Err(invalid(format!(
                "localization_interval = {}",
                self.localization_interval
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ScenarioFile {
    scenario: Vec<ScenarioSpec>,
}

/// Parses a scenario file: a `[[scenario]]` table per row.
pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioSpec>, BenchError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| BenchError::ScenarioFile(e.to_string()))?;
    for s in &file.scenario {
        s.validate()?;
    }
    Ok(file.scenario)
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<ScenarioSpec>, BenchError> {
    parse_scenarios(&std::fs::read_to_string(path)?)
}

pub const CALIBRATED_CUSUM_TOML: &str = include_str!("../scenarios/cusum.toml");
pub const CALIBRATED_SHEWHART_TOML: &str = include_str!("../scenarios/shewhart.toml");

/// Shipped scenario rows for `kind`, with thresholds calibrated against the
/// noise-free synthetic generator.
pub fn calibrated_scenarios(kind: DetectorKind) -> Vec<ScenarioSpec> {
    let text = match kind {
        DetectorKind::Cusum => CALIBRATED_CUSUM_TOML,
        DetectorKind::Shewhart => CALIBRATED_SHEWHART_TOML,
    };
    parse_scenarios(text).expect("shipped scenario file is valid")
}

/// Everything about a grid run other than the scenario rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOptions {
    /// Base trace settings; `capture_interval` is replaced per scenario.
    pub trace: TraceConfig,
    pub burst_position: f64,
    pub burst_start_s: f64,
    pub magnitude: f64,
    pub wave_speed: f64,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        let burst = BurstScenario::new("");
        Self {
            trace: TraceConfig::default(),
            burst_position: burst.position,
            burst_start_s: burst.start_time,
            magnitude: burst.magnitude,
            wave_speed: burst.wave_speed,
            jobs: 0,
        }
    }
}

impl GridOptions {
    pub fn noise_free() -> Self {
        let mut opts = Self::default();
        opts.trace.noise_std = 0.0;
        opts
    }

    /// Trace length for `spec`: the base duration, stretched when needed so
    /// that two full batches fit after the burst.
    pub fn duration_for(&self, spec: &ScenarioSpec) -> f64 {
        let batches = 2.0 * spec.localization_interval as f64 * spec.capture_interval;
        self.trace.duration.max(self.burst_start_s + batches)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub scenario: String,
    pub pipe: LinkId,
    pub expected: LinkId,
    pub located: Option<(NodeId, NodeId)>,
    /// `None` when no burst was found.
    pub rule: Option<DecisionRule>,
    pub correct: bool,
    pub decided_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub scenarios: Vec<ScenarioSpec>,
    pub cells: Vec<CellOutcome>,
}

impl GridReport {
    /// Accuracy per scenario, in declaration order.
    pub fn accuracy_by_scenario(&self) -> Vec<(String, f64)> {
        self.scenarios
            .iter()
            .filter_map(|s| {
                let cells: Vec<_> = self.cells.iter().filter(|c| c.scenario == s.name).collect();
                let correct = cells.iter().filter(|c| c.correct).count();
                accuracy(correct, cells.len()).ok().map(|a| (s.name.clone(), a))
            })
            .collect()
    }

    pub fn accuracy_of(&self, scenario: &str) -> Option<f64> {
        self.accuracy_by_scenario()
            .into_iter()
            .find(|(name, _)| name == scenario)
            .map(|(_, a)| a)
    }
}

/// True when the located edge is the burst pipe or one of its two split
/// segments.
pub fn is_correct_location(model: &NetworkModel, pipe: &LinkId, start: &NodeId, end: &NodeId) -> bool {
    let Some(p) = model.pipe(pipe) else {
        return false;
    };
    if p.connects(start, end) {
        return true;
    }
    let orifice = NodeId::from(format!("{pipe}_burst"));
    let pair = |a: &NodeId, b: &NodeId| (start == a && end == b) || (start == b && end == a);
    pair(&p.start, &orifice) || pair(&orifice, &p.end)
}

fn cell_seed(base: u64, scenario: usize, pipe: usize) -> u64 {
    base.wrapping_add(((scenario as u64) << 32) | pipe as u64)
}

/// Runs one localization per (scenario, pipe) and collects the outcomes in
/// scenario order, then pipe declaration order.
pub fn run_grid(
    model: &NetworkModel,
    scenarios: &[ScenarioSpec],
    opts: &GridOptions,
) -> Result<GridReport, BenchError> {
    if scenarios.is_empty() {
        return Err(BenchError::NoScenarios);
    }
    for s in scenarios {
        s.validate()?;
    }
    let graph = DirectedNetworkGraph::outward(model);
    let metered: std::collections::BTreeSet<NodeId> = model
        .node_ids()
        .filter(|n| model.node_kind(n) == Some(NodeKind::Junction))
        .cloned()
        .collect();

    let jobs: Vec<(usize, &ScenarioSpec, usize, &LinkId)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            model
                .pipes()
                .iter()
                .enumerate()
                .map(move |(pi, p)| (si, s, pi, &p.id))
        })
        .collect();

    let run_cell = |&(si, spec, pi, pipe): &(usize, &ScenarioSpec, usize, &LinkId)| {
        let trace_cfg = TraceConfig {
            capture_interval: spec.capture_interval,
            duration: opts.duration_for(spec),
            rng_seed: cell_seed(opts.trace.rng_seed, si, pi),
            ..opts.trace.clone()
        };
        let burst = BurstScenario {
            pipe: pipe.clone(),
            position: opts.burst_position,
            start_time: opts.burst_start_s,
            magnitude: opts.magnitude,
            wave_speed: opts.wave_speed,
        };
        let trace = generate_trace(model, &burst, &trace_cfg)?;
        let cfg = LocalizerConfig {
            detector: spec.detector()?,
            localization_interval: spec.localization_interval,
            metered_nodes: metered.clone(),
            burst_start_s: opts.burst_start_s,
        };
        let outcome = match run_pipeline(trace.frames, &graph, &cfg) {
            Ok(r) => CellOutcome {
                scenario: spec.name.clone(),
                pipe: pipe.clone(),
                expected: pipe.clone(),
                correct: is_correct_location(model, pipe, &r.start_node, &r.end_node),
                located: Some((r.start_node, r.end_node)),
                rule: Some(r.rule),
                decided_at: Some(r.decided_at),
            },
            Err(LocalizerError::NoBurstFound) => CellOutcome {
                scenario: spec.name.clone(),
                pipe: pipe.clone(),
                expected: pipe.clone(),
                located: None,
                rule: None,
                correct: false,
                decided_at: None,
            },
            Err(e) => return Err(BenchError::from(e)),
        };
        Ok(outcome)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| BenchError::ScenarioFile(format!("thread pool: {e}")))?;
    let cells = pool.install(|| jobs.par_iter().map(run_cell).collect::<Result<Vec<_>, _>>())?;
    Ok(GridReport {
        scenarios: scenarios.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn emit_report(report: &GridReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Json => emit_json(report),
    }
}

fn emit_csv(report: &GridReport) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "scenario",
        "pipe",
        "expected",
        "located_start",
        "located_end",
        "rule",
        "correct",
        "decided_at_s",
    ])
    .expect("in-memory write");
    for c in &report.cells {
        let (start, end) = c
            .located
            .as_ref()
            .map(|(s, e)| (s.0.clone(), e.0.clone()))
            .unwrap_or_default();
        w.write_record([
            c.scenario.clone(),
            c.pipe.0.clone(),
            c.expected.0.clone(),
            start,
            end,
            c.rule.map_or("no-burst-found", |r| r.as_str()).to_owned(),
            c.correct.to_string(),
            c.decided_at.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Serialize)]
struct JsonCell<'a> {
    scenario: &'a str,
    pipe: &'a LinkId,
    expected: &'a LinkId,
    located_start: Option<&'a NodeId>,
    located_end: Option<&'a NodeId>,
    rule: &'static str,
    correct: bool,
    decided_at_s: Option<f64>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    cells: Vec<JsonCell<'a>>,
    accuracy_by_scenario: BTreeMap<String, f64>,
}

fn emit_json(report: &GridReport) -> String {
    let doc = JsonReport {
        cells: report
            .cells
            .iter()
            .map(|c| JsonCell {
                scenario: &c.scenario,
                pipe: &c.pipe,
                expected: &c.expected,
                located_start: c.located.as_ref().map(|l| &l.0),
                located_end: c.located.as_ref().map(|l| &l.1),
                rule: c.rule.map_or("no-burst-found", |r| r.as_str()),
                correct: c.correct,
                decided_at_s: c.decided_at,
            })
            .collect(),
        accuracy_by_scenario: report.accuracy_by_scenario().into_iter().collect(),
    };
    serde_json::to_string_pretty(&doc).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy(23, 25).unwrap(), 92.0);
        assert_eq!(accuracy(24, 25).unwrap(), 96.0);
        assert_eq!(accuracy(0, 25).unwrap(), 0.0);
        assert!(matches!(accuracy(1, 0), Err(BenchError::ZeroTotal)));
        assert!(matches!(accuracy(3, 2), Err(BenchError::CountOverflow { .. })));
    }

    #[test]
    fn table_rows() {
        let c = ScenarioSpec::cusum_table();
        assert_eq!(
            c.iter()
                .map(|s| (s.capture_interval, s.threshold, s.localization_interval))
                .collect::<Vec<_>>(),
            vec![(0.2, 0.3, 5), (2.0, 2.0, 10), (5.0, 10.0, 10), (10.0, 13.0, 10)]
        );
        let s = ScenarioSpec::shewhart_table();
        assert_eq!(
            s.iter()
                .map(|s| (s.capture_interval, s.threshold, s.localization_interval))
                .collect::<Vec<_>>(),
            vec![(0.2, 1.5, 5), (2.0, 3.0, 10), (5.0, 2.0, 10), (10.0, 3.0, 10)]
        );
    }

    #[test]
    fn shipped_scenario_files_parse() {
        assert_eq!(calibrated_scenarios(DetectorKind::Cusum).len(), 4);
        assert_eq!(calibrated_scenarios(DetectorKind::Shewhart).len(), 4);
        assert!(calibrated_scenarios(DetectorKind::Cusum)
            .iter()
            .all(|s| s.detector == DetectorKind::Cusum));
    }

    #[test]
    fn scenario_file_errors() {
        assert!(matches!(parse_scenarios("nope = 1"), Err(BenchError::ScenarioFile(_))));
        let bad = "[[scenario]]\nname='x'\ndetector='cusum'\ncapture_interval=0.2\nthreshold=-1\nlocalization_interval=5\n";
        assert!(matches!(parse_scenarios(bad), Err(BenchError::InvalidScenario { .. })));
    }

    #[test]
    fn correctness_matching_accepts_segments() {
        let m = NetworkModel::reference25();
        let p2: LinkId = "P2".into();
        let n = |s: &str| NodeId::from(s);
        assert!(is_correct_location(&m, &p2, &n("N3"), &n("N4")));
        assert!(is_correct_location(&m, &p2, &n("N4"), &n("N3")));
        assert!(is_correct_location(&m, &p2, &n("N3"), &n("P2_burst")));
        assert!(is_correct_location(&m, &p2, &n("P2_burst"), &n("N4")));
        assert!(!is_correct_location(&m, &p2, &n("R1"), &n("N3")));
    }

    #[test]
    fn report_ordering_and_formats() {
        let report = GridReport {
            scenarios: vec![ScenarioSpec::cusum_table().remove(0)],
            cells: vec![CellOutcome {
                scenario: "S_C1".into(),
                pipe: "P2".into(),
                expected: "P2".into(),
                located: Some(("N3".into(), "N4".into())),
                rule: Some(DecisionRule::TwoNodeNeighbor),
                correct: true,
                decided_at: Some(0.8),
            }],
        };
        let csv = emit_report(&report, ReportFormat::Csv);
        assert_eq!(
            csv,
            "scenario,pipe,expected,located_start,located_end,rule,correct,decided_at_s\n\
             S_C1,P2,P2,N3,N4,two-node-neighbor,true,0.8\n"
        );
        assert_eq!(csv, emit_report(&report, ReportFormat::Csv));
        let json: serde_json::Value =
            serde_json::from_str(&emit_report(&report, ReportFormat::Json)).unwrap();
        assert_eq!(json["cells"].as_array().unwrap().len(), 1);
        assert_eq!(json["accuracy_by_scenario"]["S_C1"], 100.0);
    }
}

//! Burst pressure traces: a distance-attenuated wavefront surrogate for the
//! transient response, CSV replay of externally generated traces, and a
//! paced frame feed emulating real-time meter transmission.
//!
//! After a burst at time `t0` every metered node `n` holds its steady
//! pressure `P0(n)` until the wavefront arrives at `t0 + d(n) / c`, then
//! relaxes towards `P0(n) - A(n)` with time constant `settle_time`, where
//! `A(n) = magnitude * exp(-attenuation * d(n))` and `d(n)` is the pipe
//! distance from the burst orifice.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Junction, LinkId, NetworkModel, NodeId, NodeKind, Pipe};

pub const DEFAULT_WAVE_SPEED: f64 = 1200.0;
pub const DEFAULT_HEAD_GRADIENT: f64 = 0.005;
pub const MIN_STEADY_PRESSURE: f64 = 10.0;
const SPACING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TransientError {
    #[error("unknown pipe {0}")]
    UnknownLink(LinkId),
    #[error("burst position {0} must lie strictly between 0 and 1")]
    PositionOutOfRange(f64),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid burst scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid trace config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("line {line}: timestamp {time} does not increase")]
    NonMonotoneTime { line: usize, time: f64 },
    #[error("line {line}: timestamp {time} breaks the uniform spacing of {spacing}")]
    NonUniformSpacing { line: usize, time: f64, spacing: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstScenario {
    pub pipe: LinkId,
    /// Fraction along the pipe measured from its start node.
    pub position: f64,
    /// Seconds.
    pub start_time: f64,
    /// Head drop at the burst orifice, meters.
    pub magnitude: f64,
    /// m/s.
    pub wave_speed: f64,
}

impl BurstScenario {
    /// Midpoint burst at 10 s with a 15 m drop travelling at 1200 m/s.
    pub fn new(pipe: impl Into<LinkId>) -> Self {
        Self {
            pipe: pipe.into(),
            position: 0.5,
            start_time: 10.0,
            magnitude: 15.0,
            wave_speed: DEFAULT_WAVE_SPEED,
        }
    }

    pub fn validate(&self, model: &NetworkModel) -> Result<(), TransientError> {
        if model.pipe(&self.pipe).is_none() {
            return Err(TransientError::UnknownLink(self.pipe.clone()));
        }
        if !(self.position > 0.0 && self.position < 1.0) {
            return Err(TransientError::PositionOutOfRange(self.position));
        }
        let bad = |what: &str, v: f64| {
            Err(TransientError::InvalidScenario(format!("{what} = {v}")))
        };
        if !(self.start_time >= 0.0 && self.start_time.is_finite()) {
            return bad("start_time", self.start_time);
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return bad("magnitude", self.magnitude);
        }
        if !(self.wave_speed > 0.0 && self.wave_speed.is_finite()) {
            return bad("wave_speed", self.wave_speed);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Seconds between frames.
    pub capture_interval: f64,
    /// Seconds; frames run from 0 to `duration` inclusive.
    pub duration: f64,
    /// Standard deviation of per-reading Gaussian noise, meters.
    pub noise_std: f64,
    /// Per-meter decay rate of the burst amplitude.
    pub attenuation: f64,
    /// First-order settling time constant, seconds.
    pub settle_time: f64,
    pub rng_seed: u64,
    /// Steady-state head loss per meter of pipe from the nearest reservoir.
    pub head_gradient: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            capture_interval: 0.2,
            duration: 40.0,
            noise_std: 0.01,
            attenuation: 5e-4,
            settle_time: 2.0,
            rng_seed: 0,
            head_gradient: DEFAULT_HEAD_GRADIENT,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<(), TransientError> {
        let bad = |what: &str, v: f64| Err(TransientError::InvalidConfig(format!("{what} = {v}")));
        if !(self.capture_interval > 0.0 && self.capture_interval.is_finite()) {
            return bad("capture_interval", self.capture_interval);
        }
        if !(self.duration > self.capture_interval && self.duration.is_finite()) {
            return bad("duration", self.duration);
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", self.noise_std);
        }
        if !(self.attenuation >= 0.0 && self.attenuation.is_finite()) {
            return bad("attenuation", self.attenuation);
        }
        if !(self.settle_time > 0.0 && self.settle_time.is_finite()) {
            return bad("settle_time", self.settle_time);
        }
        if !(self.head_gradient >= 0.0 && self.head_gradient.is_finite()) {
            return bad("head_gradient", self.head_gradient);
        }
        Ok(())
    }

    /// Number of frames: `floor(duration / capture_interval) + 1`.
    pub fn frame_count(&self) -> usize {
        (self.duration / self.capture_interval + SPACING_TOLERANCE).floor() as usize + 1
    }
}

/// One timestamp's readings. `complete` is true iff every metered node
/// reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PressureFrame {
    pub timestamp: f64,
    pub readings: BTreeMap<NodeId, f64>,
    pub complete: bool,
}

impl PressureFrame {
    pub fn new(timestamp: f64, readings: BTreeMap<NodeId, f64>, metered: &[NodeId]) -> Self {
        let complete = metered.iter().all(|n| readings.contains_key(n));
        Self {
            timestamp,
            readings,
            complete,
        }
    }
}

/// A sequence of frames together with the metered node order used for CSV
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub nodes: Vec<NodeId>,
    pub frames: Vec<PressureFrame>,
}

impl Trace {
    pub fn to_csv_string(&self) -> Result<String, TransientError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["time".to_owned()];
        header.extend(self.nodes.iter().map(|n| n.0.clone()));
        w.write_record(&header)?;
        for frame in &self.frames {
            let mut row = vec![frame.timestamp.to_string()];
            row.extend(self.nodes.iter().map(|n| {
                frame
                    .readings
                    .get(n)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            }));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TransientError> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self, TransientError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(r) => r?,
            None => {
                return Err(TransientError::MalformedRow {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        if header.get(0).map(str::trim) != Some("time") || header.len() < 2 {
            return Err(TransientError::MalformedRow {
                line: 1,
                message: "header must be `time,<node-id>,...`".into(),
            });
        }
        let nodes: Vec<NodeId> = header.iter().skip(1).map(|h| h.trim().into()).collect();
        let mut frames: Vec<PressureFrame> = Vec::new();
        let mut spacing = None;
        for record in records {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != nodes.len() + 1 {
                return Err(TransientError::MalformedRow {
                    line,
                    message: format!("expected {} columns, found {}", nodes.len() + 1, record.len()),
                });
            }
            let parse = |cell: &str, what: &str| -> Result<f64, TransientError> {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| TransientError::MalformedRow {
                        line,
                        message: format!("{what} `{cell}` is not a number"),
                    })
            };
            let time = parse(&record[0], "time")?;
            if let Some(prev) = frames.last() {
                let step = time - prev.timestamp;
                if step <= 0.0 {
                    return Err(TransientError::NonMonotoneTime { line, time });
                }
                match spacing {
                    None => spacing = Some(step),
                    Some(s) if (step - s).abs() > SPACING_TOLERANCE => {
                        return Err(TransientError::NonUniformSpacing {
                            line,
                            time,
                            spacing: s,
                        })
                    }
                    Some(_) => {}
                }
            }
            let mut readings = BTreeMap::new();
            for (node, cell) in nodes.iter().zip(record.iter().skip(1)) {
                if !cell.trim().is_empty() {
                    readings.insert(node.clone(), parse(cell, "pressure")?);
                }
            }
            frames.push(PressureFrame::new(time, readings, &nodes));
        }
        Ok(Self { nodes, frames })
    }

    /// Capture interval implied by the first two frames.
    pub fn capture_interval(&self) -> Option<f64> {
        match self.frames.as_slice() {
            [a, b, ..] => Some(b.timestamp - a.timestamp),
            _ => None,
        }
    }
}

/// Reads a trace CSV file.
pub fn load_replay(path: impl AsRef<Path>) -> Result<Trace, TransientError> {
    Trace::from_csv_str(&std::fs::read_to_string(path)?)
}

/// Replaces `pipe` by two pipes joined at a fresh orifice junction.
///
/// The segments are `{pipe}_A` (start → orifice, `position * L`) and
/// `{pipe}_B` (orifice → end, the rest). Returns the new model and the
/// orifice node id, `{pipe}_burst`.
pub fn split_pipe(
    model: &NetworkModel,
    pipe: &LinkId,
    position: f64,
) -> Result<(NetworkModel, NodeId), TransientError> {
    let original = model
        .pipe(pipe)
        .ok_or_else(|| TransientError::UnknownLink(pipe.clone()))?;
    if !(position > 0.0 && position < 1.0) {
        return Err(TransientError::PositionOutOfRange(position));
    }
    let fresh = |base: String, taken: &dyn Fn(&str) -> bool| {
        let mut id = base.clone();
        let mut k = 1;
        while taken(&id) {
            id = format!("{base}{k}");
            k += 1;
        }
        id
    };
    let orifice: NodeId = fresh(format!("{pipe}_burst"), &|id| {
        model.contains_node(&NodeId::from(id))
    })
    .into();
    let link_taken = |id: &str| model.pipe(&LinkId::from(id)).is_some();
    let first_id: LinkId = fresh(format!("{pipe}_A"), &link_taken).into();
    let second_id: LinkId = fresh(format!("{pipe}_B"), &link_taken).into();

    let elevation_of = |n: &NodeId| {
        model
            .junctions()
            .iter()
            .find(|j| &j.id == n)
            .map(|j| j.elevation)
    };
    let elevation = match (elevation_of(&original.start), elevation_of(&original.end)) {
        (Some(a), Some(b)) => a + position * (b - a),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 0.0,
    };

    // round the longer segment, take the shorter as the remainder; the
    // subtraction is then exact and the two lengths sum to L bit for bit
    let (first_len, second_len) = if position >= 0.5 {
        let a = position * original.length;
        (a, original.length - a)
    } else {
        let b = (1.0 - position) * original.length;
        (original.length - b, b)
    };
    let mut pipes = Vec::with_capacity(model.pipes().len() + 1);
    for p in model.pipes() {
        if &p.id == pipe {
            pipes.push(Pipe {
                id: first_id.clone(),
                start: p.start.clone(),
                end: orifice.clone(),
                length: first_len,
                ..p.clone()
            });
            pipes.push(Pipe {
                id: second_id.clone(),
                start: orifice.clone(),
                end: p.end.clone(),
                length: second_len,
                ..p.clone()
            });
        } else {
            pipes.push(p.clone());
        }
    }
    let mut junctions = model.junctions().to_vec();
    junctions.push(Junction {
        id: orifice.clone(),
        elevation,
        base_demand: 0.0,
    });
    let split = NetworkModel::new(junctions, model.reservoirs().to_vec(), pipes)
        .map_err(|e| TransientError::InvalidScenario(e.to_string()))?;
    Ok((split, orifice))
}

/// Steady pressure head of every node under a uniform head gradient: the
/// nearest reservoir's head minus `gradient` per meter of pipe, floored at
/// 10 m. Reservoirs report their own head.
pub fn steady_pressures(model: &NetworkModel, gradient: f64) -> HashMap<NodeId, f64> {
    let per_reservoir: Vec<(f64, HashMap<NodeId, f64>)> = model
        .reservoirs()
        .iter()
        .map(|r| (r.head, model.distances_from([&r.id])))
        .collect();
    let mut out = HashMap::new();
    for r in model.reservoirs() {
        out.insert(r.id.clone(), r.head);
    }
    for j in model.junctions() {
        let nearest = per_reservoir
            .iter()
            .filter_map(|(head, d)| d.get(&j.id).map(|&d| (d, *head)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let p = match nearest {
            Some((d, head)) => (head - gradient * d).max(MIN_STEADY_PRESSURE),
            None => MIN_STEADY_PRESSURE,
        };
        out.insert(j.id.clone(), p);
    }
    out
}

/// Steady pressure head of one node with the default gradient.
pub fn steady_pressure(model: &NetworkModel, node: &NodeId) -> Result<f64, TransientError> {
    if !model.contains_node(node) {
        return Err(TransientError::UnknownNode(node.clone()));
    }
    Ok(steady_pressures(model, DEFAULT_HEAD_GRADIENT)[node])
}

/// Per-node response of the surrogate for one burst.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeResponse {
    pub node: NodeId,
    pub steady: f64,
    /// Pipe distance from the burst orifice, meters.
    pub distance: f64,
    /// Wavefront arrival time, seconds after burst start.
    pub arrival: f64,
    /// Eventual head drop, meters.
    pub drop: f64,
}

#[derive(Debug, Clone)]
pub struct WavefrontModel {
    start_time: f64,
    settle_time: f64,
    responses: Vec<NodeResponse>,
}

impl WavefrontModel {
    /// Responses of every junction of `model` (the metered set) to `scenario`.
    pub fn new(
        model: &NetworkModel,
        scenario: &BurstScenario,
        cfg: &TraceConfig,
    ) -> Result<Self, TransientError> {
        scenario.validate(model)?;
        cfg.validate()?;
        let (split, orifice) = split_pipe(model, &scenario.pipe, scenario.position)?;
        let steady = steady_pressures(&split, cfg.head_gradient);
        let dist = split.distances_from([&orifice]);
        let responses = model
            .junctions()
            .iter()
            .map(|j| {
                let distance = dist.get(&j.id).copied().unwrap_or(f64::INFINITY);
                NodeResponse {
                    node: j.id.clone(),
                    steady: steady[&j.id],
                    distance,
                    arrival: distance / scenario.wave_speed,
                    drop: scenario.magnitude * (-cfg.attenuation * distance).exp(),
                }
            })
            .collect();
        Ok(Self {
            start_time: scenario.start_time,
            settle_time: cfg.settle_time,
            responses,
        })
    }

    pub fn responses(&self) -> &[NodeResponse] {
        &self.responses
    }

    /// Noise-free pressure of response `r` at time `t`.
    pub fn pressure(&self, r: &NodeResponse, t: f64) -> f64 {
        let since = t - self.start_time - r.arrival;
        if since > 0.0 {
            r.steady + r.drop * (-since / self.settle_time).exp_m1()
        } else {
            r.steady
        }
    }
}

/// Synthesizes the metered-junction trace for `scenario`. Identical inputs,
/// seed included, give bit-identical output.
pub fn generate_trace(
    model: &NetworkModel,
    scenario: &BurstScenario,
    cfg: &TraceConfig,
) -> Result<Trace, TransientError> {
    let wave = WavefrontModel::new(model, scenario, cfg)?;
    let nodes: Vec<NodeId> = wave.responses().iter().map(|r| r.node.clone()).collect();
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| TransientError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let frames = (0..cfg.frame_count())
        .map(|k| {
            let t = k as f64 * cfg.capture_interval;
            let readings = wave
                .responses()
                .iter()
                .map(|r| {
                    let mut p = wave.pressure(r, t);
                    if let Some(dist) = &noise {
                        p += dist.sample(&mut rng);
                    }
                    (r.node.clone(), p)
                })
                .collect();
            PressureFrame {
                timestamp: t,
                readings,
                complete: true,
            }
        })
        .collect();
    Ok(Trace { nodes, frames })
}

/// Steady-state trace with no burst, for negative controls.
pub fn steady_trace(model: &NetworkModel, cfg: &TraceConfig) -> Result<Trace, TransientError> {
    cfg.validate()?;
    let steady = steady_pressures(model, cfg.head_gradient);
    let nodes: Vec<NodeId> = model
        .node_ids()
        .filter(|n| model.node_kind(n) == Some(NodeKind::Junction))
        .cloned()
        .collect();
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| TransientError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let frames = (0..cfg.frame_count())
        .map(|k| {
            let readings = nodes
                .iter()
                .map(|n| {
                    let mut p = steady[n];
                    if let Some(dist) = &noise {
                        p += dist.sample(&mut rng);
                    }
                    (n.clone(), p)
                })
                .collect();
            PressureFrame {
                timestamp: k as f64 * cfg.capture_interval,
                readings,
                complete: true,
            }
        })
        .collect();
    Ok(Trace { nodes, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pacing {
    /// Frame `k` is released no earlier than its offset from the first
    /// frame's timestamp, in wall-clock time.
    RealTime,
    AsFastAsPossible,
}

/// Receiving end of a single-producer frame channel.
pub struct FrameFeed {
    rx: mpsc::Receiver<PressureFrame>,
}

impl Iterator for FrameFeed {
    type Item = PressureFrame;

    fn next(&mut self) -> Option<PressureFrame> {
        self.rx.recv().ok()
    }
}

/// Spawns a producer that emits `frames` in order with the given pacing.
/// The feed ends after the last frame or when the consumer is dropped.
pub fn stream(frames: Vec<PressureFrame>, pacing: Pacing) -> FrameFeed {
    let (tx, rx) = mpsc::sync_channel(64);
    thread::spawn(move || {
        let started = Instant::now();
        let origin = frames.first().map_or(0.0, |f| f.timestamp);
        for frame in frames {
            if pacing == Pacing::RealTime {
                let due = started + Duration::from_secs_f64((frame.timestamp - origin).max(0.0));
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
            }
            if tx.send(frame).is_err() {
                break;
            }
        }
    });
    FrameFeed { rx }
}

//! Change-point detectors over a single pressure window.
//!
//! Both detectors are pure functions of `(time, x, params)`; the time axis is
//! only checked for length, detections are reported as sample indices.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpdError {
    #[error("time has {time} samples but values have {values}")]
    LengthMismatch { time: usize, values: usize },
    #[error("window of {0} samples is too short, need at least 2")]
    WindowTooShort(usize),
    #[error("no node registered a change")]
    NoEvents,
    #[error("invalid detector parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumParams {
    /// Alarm level for the drift-free sums, meters.
    pub threshold: f64,
    /// Bias subtracted from every step of the drift-corrected sums.
    #[serde(default)]
    pub drift: f64,
}

impl CusumParams {
    pub fn new(threshold: f64, drift: f64) -> Result<Self, CpdError> {
        let p = Self { threshold, drift };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CpdError> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(CpdError::InvalidParams(format!(
                "cusum threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(CpdError::InvalidParams(format!(
                "cusum drift must be non-negative, got {}",
                self.drift
            )));
        }
        Ok(())
    }
}

/// The Shewhart threshold is used twice: as the multiplier on the window
/// standard deviation and as an absolute deviation floor in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShewhartParams {
    pub threshold: f64,
}

impl ShewhartParams {
    pub fn new(threshold: f64) -> Result<Self, CpdError> {
        let p = Self { threshold };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CpdError> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(CpdError::InvalidParams(format!(
                "shewhart threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CusumDetections {
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShewhartDetections {
    pub starts: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

/// One detected change on one node's series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeEvent {
    pub node: NodeId,
    pub start_index: usize,
    /// Equals `start_index` for Shewhart detections.
    pub end_index: usize,
    /// Signed `x[end] - x[start]` for CUSUM, `|x[start] - mean|` for Shewhart.
    pub amplitude: f64,
}

fn check_window(time: &[f64], x: &[f64]) -> Result<(), CpdError> {
    if time.len() != x.len() {
        return Err(CpdError::LengthMismatch {
            time: time.len(),
            values: x.len(),
        });
    }
    if x.len() < 2 {
        return Err(CpdError::WindowTooShort(x.len()));
    }
    Ok(())
}

/// Accumulator values after step `i` of the forward CUSUM pass, after any
/// reset has been applied.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CusumAccumulators {
    pub gp: f64,
    pub gn: f64,
    pub gp_real: f64,
    pub gn_real: f64,
}

struct ForwardPass {
    alarms: Vec<usize>,
    starts: Vec<usize>,
}

fn forward_pass(
    x: &[f64],
    params: &CusumParams,
    mut observe: impl FnMut(usize, CusumAccumulators),
) -> ForwardPass {
    let (thr, dr) = (params.threshold, params.drift);
    let mut acc = CusumAccumulators::default();
    let (mut tap, mut tan) = (0usize, 0usize);
    let mut alarms = Vec::new();
    let mut starts = Vec::new();
    observe(0, acc);
    for i in 1..x.len() {
        let diff = x[i] - x[i - 1];
        acc.gp = acc.gp + diff - dr;
        acc.gp_real += diff;
        acc.gn = acc.gn - diff - dr;
        acc.gn_real -= diff;
        if acc.gp < 0.0 {
            acc.gp = 0.0;
            acc.gp_real = 0.0;
            tap = i;
        }
        if acc.gn < 0.0 {
            acc.gn = 0.0;
            acc.gn_real = 0.0;
            tan = i;
        }
        if acc.gp_real > thr || acc.gn_real > thr {
            alarms.push(i);
            starts.push(if acc.gp_real > thr { tap } else { tan });
            acc = CusumAccumulators::default();
        }
        observe(i, acc);
    }
    ForwardPass { alarms, starts }
}

/// Per-step accumulator values of the forward pass (index 0 is all zeros).
pub fn cusum_accumulators(x: &[f64], params: &CusumParams) -> Vec<CusumAccumulators> {
    let mut out = Vec::with_capacity(x.len());
    forward_pass(x, params, |_, acc| out.push(acc));
    out
}

/// Position of the first `true`, or 0 when there is none.
fn first_true(mut flags: impl Iterator<Item = bool>) -> usize {
    flags.position(|b| b).unwrap_or(0)
}

/// Two-pass CUSUM: change starts from a forward pass, change ends from the
/// same pass over the reversed series, then reconciliation of the two lists
/// and removal of intervals whose end overlaps the next start.
pub fn cusum_detect(
    time: &[f64],
    x: &[f64],
    params: &CusumParams,
) -> Result<CusumDetections, CpdError> {
    check_window(time, x)?;
    params.validate()?;

    let ForwardPass {
        alarms: raw_alarms,
        starts: raw_starts,
    } = forward_pass(x, params, |_, _| {});
    if raw_starts.is_empty() {
        return Ok(CusumDetections::default());
    }

    let reversed: Vec<f64> = x.iter().rev().copied().collect();
    let backward = forward_pass(&reversed, params, |_, _| {});
    let n = x.len();
    let mut ends: Vec<usize> = backward.starts.iter().rev().map(|&s| n - s - 1).collect();

    // Sorted unique starts, each keeping the alarm of its first occurrence.
    let mut first_seen: BTreeMap<usize, usize> = BTreeMap::new();
    for (&start, &alarm) in raw_starts.iter().zip(&raw_alarms) {
        first_seen.entry(start).or_insert(alarm);
    }
    let mut starts: Vec<usize> = first_seen.keys().copied().collect();
    let alarms: Vec<usize> = first_seen.values().copied().collect();

    match starts.len().cmp(&ends.len()) {
        Ordering::Less => {
            ends = alarms
                .iter()
                .map(|&a| ends[first_true(ends.iter().map(|&e| e >= a))])
                .collect();
        }
        Ordering::Greater => {
            let m = alarms.len();
            let picks: Vec<usize> = ends
                .iter()
                .map(|&e| {
                    let k = first_true(alarms.iter().rev().map(|&a| e >= a));
                    // k - 1 with wrap-around: -1 selects the last alarm
                    (k + m - 1) % m
                })
                .collect();
            starts = picks.iter().map(|&j| starts[j]).collect();
        }
        Ordering::Equal => {}
    }

    // Drop the later interval's start and the earlier interval's end wherever
    // an end runs past the next start.
    let overlap: Vec<bool> = ends
        .iter()
        .zip(starts.iter().skip(1))
        .map(|(&e, &s)| e > s)
        .collect();
    if overlap.iter().any(|&o| o) {
        let keep_start = |k: usize| k == 0 || !overlap[k - 1];
        let keep_end = |k: usize| k >= overlap.len() || !overlap[k];
        starts = starts
            .iter()
            .enumerate()
            .filter(|&(k, _)| keep_start(k))
            .map(|(_, &s)| s)
            .collect();
        ends = ends
            .iter()
            .enumerate()
            .filter(|&(k, _)| keep_end(k))
            .map(|(_, &e)| e)
            .collect();
    }

    let amplitudes = starts.iter().zip(&ends).map(|(&s, &e)| x[e] - x[s]).collect();
    Ok(CusumDetections {
        starts,
        ends,
        amplitudes,
    })
}

fn mean_and_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shewhart chart with an absolute floor: index `i` is flagged when
/// `|x[i] - mean|` exceeds both `threshold * std` and `threshold`. Mean and
/// population standard deviation are taken over the whole window.
pub fn shewhart_detect(
    time: &[f64],
    x: &[f64],
    params: &ShewhartParams,
) -> Result<ShewhartDetections, CpdError> {
    check_window(time, x)?;
    params.validate()?;
    let (mean, std) = mean_and_std(x);
    let limit = params.threshold * std;
    let mut out = ShewhartDetections::default();
    for (i, &v) in x.iter().enumerate() {
        let dev = (v - mean).abs();
        if dev > limit && dev > params.threshold {
            out.starts.push(i);
            out.amplitudes.push(dev);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Detector {
    Cusum(CusumParams),
    Shewhart(ShewhartParams),
}

impl Detector {
    pub fn name(&self) -> &'static str {
        match self {
            Detector::Cusum(_) => "cusum",
            Detector::Shewhart(_) => "shewhart",
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Detector::Cusum(p) => p.threshold,
            Detector::Shewhart(p) => p.threshold,
        }
    }

    pub fn validate(&self) -> Result<(), CpdError> {
        match self {
            Detector::Cusum(p) => p.validate(),
            Detector::Shewhart(p) => p.validate(),
        }
    }

    /// Runs the detector on one node's series and wraps the detections.
    pub fn events(&self, node: &NodeId, time: &[f64], x: &[f64]) -> Result<Vec<ChangeEvent>, CpdError> {
        let event = |start_index, end_index, amplitude| ChangeEvent {
            node: node.clone(),
            start_index,
            end_index,
            amplitude,
        };
        Ok(match self {
            Detector::Cusum(p) => {
                let d = cusum_detect(time, x, p)?;
                d.starts
                    .iter()
                    .zip(&d.ends)
                    .zip(&d.amplitudes)
                    .map(|((&s, &e), &a)| event(s, e, a))
                    .collect()
            }
            Detector::Shewhart(p) => {
                let d = shewhart_detect(time, x, p)?;
                d.starts
                    .iter()
                    .zip(&d.amplitudes)
                    .map(|(&s, &a)| event(s, s, a))
                    .collect()
            }
        })
    }
}

/// Orders events by larger |amplitude|, then earlier start, then lower node
/// id. `Ordering::Less` means `a` ranks ahead of `b`.
pub fn rank_events(a: &ChangeEvent, b: &ChangeEvent) -> Ordering {
    b.amplitude
        .abs()
        .total_cmp(&a.amplitude.abs())
        .then(a.start_index.cmp(&b.start_index))
        .then_with(|| a.node.cmp(&b.node))
}

/// The event with the largest |amplitude| over all nodes.
pub fn max_amplitude_event(
    events: &BTreeMap<NodeId, Vec<ChangeEvent>>,
) -> Result<&ChangeEvent, CpdError> {
    events
        .values()
        .flatten()
        .filter(|e| !e.amplitude.is_nan())
        .min_by(|a, b| rank_events(a, b))
        .ok_or(CpdError::NoEvents)
}

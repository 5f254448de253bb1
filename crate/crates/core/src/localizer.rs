//! Burst pipe localization over a stream of pressure frames.
//!
//! Frames are consumed in batches of `localization_interval` complete frames.
//! Each batch is analysed together with the previous batch; the metered node
//! with the largest detected change anchors the search, and the burst pipe is
//! chosen among the edges entering (or, for a two-node detection, leaving)
//! that node.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpd::{max_amplitude_event, rank_events, ChangeEvent, CpdError, Detector};
use crate::network::{DirectedNetworkGraph, GraphError, LinkId, NodeId};
use crate::transient::PressureFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizerError {
    #[error("feed closed before {wanted} new complete frames arrived (got {got})")]
    FeedClosed { wanted: usize, got: usize },
    #[error("no burst found before the feed ended")]
    NoBurstFound,
    #[error("no node registered a change")]
    NoEvents,
    #[error("node {0} has no predecessor or successor to pair with")]
    NoPredecessor(NodeId),
    #[error("frame at t={timestamp} has no reading for {node}")]
    MissingReading { node: NodeId, timestamp: f64 },
    #[error("invalid localizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Detector(#[from] CpdError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerConfig {
    pub detector: Detector,
    /// New complete frames per batch.
    pub localization_interval: usize,
    pub metered_nodes: BTreeSet<NodeId>,
    /// Time origin for `decided_at`; the burst start when known.
    pub burst_start_s: f64,
}

impl LocalizerConfig {
    pub fn validate(&self, graph: &DirectedNetworkGraph) -> Result<(), LocalizerError> {
        self.detector.validate()?;
        if self.localization_interval < 2 {
            return Err(LocalizerError::InvalidConfig(format!(
                "localization interval must be at least 2, got {}",
                self.localization_interval
            )));
        }
        if self.metered_nodes.is_empty() {
            return Err(LocalizerError::InvalidConfig("no metered nodes".into()));
        }
        if let Some(n) = self.metered_nodes.iter().find(|n| !graph.contains_node(n)) {
            return Err(LocalizerError::InvalidConfig(format!(
                "metered node {n} is not in the network"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    TwoNodeNeighbor,
    SinglePredecessor,
    MaxAmpPredecessor,
    LowestMeanPredecessor,
    /// The anchor node has no predecessor; paired with its strongest successor.
    SourceFallback,
}

impl DecisionRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecisionRule::TwoNodeNeighbor => "two-node-neighbor",
            DecisionRule::SinglePredecessor => "single-predecessor",
            DecisionRule::MaxAmpPredecessor => "max-amp-predecessor",
            DecisionRule::LowestMeanPredecessor => "lowest-mean-predecessor",
            DecisionRule::SourceFallback => "source-fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationResult {
    pub start_node: NodeId,
    pub end_node: NodeId,
    /// Pipe behind the located edge (lowest id among parallel pipes).
    #[serde(skip)]
    pub link: LinkId,
    pub rule: DecisionRule,
    #[serde(rename = "decided_at_s")]
    pub decided_at: f64,
    pub window_frames: usize,
}

impl LocalizationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result serializes")
    }
}

/// Pulls `interval` new complete frames from `feed` (incomplete frames are
/// dropped) and returns them appended to `previous`.
pub fn fetch_window<I>(
    feed: &mut I,
    interval: usize,
    previous: &[PressureFrame],
) -> Result<Vec<PressureFrame>, LocalizerError>
where
    I: Iterator<Item = PressureFrame>,
{
    let mut window = Vec::with_capacity(previous.len() + interval);
    window.extend_from_slice(previous);
    let mut got = 0;
    while got < interval {
        match feed.next() {
            Some(frame) if frame.complete => {
                window.push(frame);
                got += 1;
            }
            Some(_) => {}
            None => {
                return Err(LocalizerError::FeedClosed {
                    wanted: interval,
                    got,
                })
            }
        }
    }
    Ok(window)
}

fn series(window: &[PressureFrame], node: &NodeId) -> Result<Vec<f64>, LocalizerError> {
    window
        .iter()
        .map(|f| {
            f.readings
                .get(node)
                .copied()
                .ok_or_else(|| LocalizerError::MissingReading {
                    node: node.clone(),
                    timestamp: f.timestamp,
                })
        })
        .collect()
}

/// Runs the configured detector on every metered node's series. Nodes
/// without detections are left out.
pub fn detect_all_nodes(
    window: &[PressureFrame],
    cfg: &LocalizerConfig,
) -> Result<BTreeMap<NodeId, Vec<ChangeEvent>>, LocalizerError> {
    if window.len() < 2 {
        return Err(CpdError::WindowTooShort(window.len()).into());
    }
    let time: Vec<f64> = window.iter().map(|f| f.timestamp).collect();
    let per_node = cfg
        .metered_nodes
        .par_iter()
        .map(|node| {
            let x = series(window, node)?;
            let events = cfg.detector.events(node, &time, &x)?;
            Ok((node.clone(), events))
        })
        .collect::<Result<Vec<_>, LocalizerError>>()?;
    Ok(per_node.into_iter().filter(|(_, e)| !e.is_empty()).collect())
}

fn strongest<'a>(
    events: &'a BTreeMap<NodeId, Vec<ChangeEvent>>,
    node: &NodeId,
) -> Option<&'a ChangeEvent> {
    events.get(node)?.iter().min_by(|a, b| rank_events(a, b))
}

/// Names the burst edge from the per-node detections.
///
/// With `anchor` the node holding the largest |amplitude|:
/// 1. exactly two nodes detected and the other one is a successor of
///    `anchor` → `anchor → other`;
/// 2. `anchor` has exactly one predecessor → `pred → anchor`;
/// 3. some predecessors detected a change → the strongest of them;
/// 4. otherwise the predecessor with the lowest mean pressure over `window`.
///
/// A predecessor-less anchor falls back to its strongest successor.
pub fn localize(
    events: &BTreeMap<NodeId, Vec<ChangeEvent>>,
    graph: &DirectedNetworkGraph,
    window: &[PressureFrame],
    time_origin: f64,
) -> Result<LocalizationResult, LocalizerError> {
    let anchor = match max_amplitude_event(events) {
        Ok(e) => e.node.clone(),
        Err(_) => return Err(LocalizerError::NoEvents),
    };
    let successors = graph.successors(&anchor)?;
    let predecessors = graph.predecessors(&anchor)?;

    let by_strength = |a: &&NodeId, b: &&NodeId| {
        let (ea, eb) = (strongest(events, a), strongest(events, b));
        match (ea, eb) {
            (Some(ea), Some(eb)) => rank_events(ea, eb),
            _ => a.cmp(b),
        }
    };

    let (start, end, rule) = 'decide: {
        if events.len() == 2 {
            if let Some(other) = events.keys().find(|k| **k != anchor) {
                if successors.contains(other) {
                    break 'decide (anchor.clone(), other.clone(), DecisionRule::TwoNodeNeighbor);
                }
            }
        }
        if predecessors.len() == 1 {
            let pred = predecessors.iter().next().expect("one predecessor").clone();
            break 'decide (pred, anchor.clone(), DecisionRule::SinglePredecessor);
        }
        if let Some(pred) = predecessors
            .iter()
            .filter(|p| events.contains_key(*p))
            .min_by(by_strength)
        {
            break 'decide (pred.clone(), anchor.clone(), DecisionRule::MaxAmpPredecessor);
        }
        if !predecessors.is_empty() {
            let mean = |n: &NodeId| -> Option<f64> {
                let xs: Vec<f64> = window.iter().filter_map(|f| f.readings.get(n).copied()).collect();
                (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
            };
            // unmetered predecessors (no readings) rank after metered ones
            let pred = predecessors
                .iter()
                .map(|p| (mean(p), p))
                .min_by(|(ma, a), (mb, b)| match (ma, mb) {
                    (Some(x), Some(y)) => x.total_cmp(y).then_with(|| a.cmp(b)),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => a.cmp(b),
                })
                .map(|(_, p)| p.clone())
                .expect("non-empty predecessors");
            break 'decide (pred, anchor.clone(), DecisionRule::LowestMeanPredecessor);
        }
        let succ = successors
            .iter()
            .filter(|s| events.contains_key(*s))
            .min_by(by_strength)
            .or_else(|| successors.iter().next())
            .ok_or_else(|| LocalizerError::NoPredecessor(anchor.clone()))?;
        (anchor.clone(), succ.clone(), DecisionRule::SourceFallback)
    };

    let link = graph
        .edge_between(&start, &end)
        .map(|e| e.link.clone())
        .expect("decision rules only pick graph edges");
    let decided_at = window.last().map_or(0.0, |f| f.timestamp) - time_origin;
    Ok(LocalizationResult {
        start_node: start,
        end_node: end,
        link,
        rule,
        decided_at,
        window_frames: window.len(),
    })
}

/// Consumes `feed` batch by batch until a batch yields detections, then
/// localizes. The previous batch is carried into each window.
pub fn run_pipeline<I>(
    feed: I,
    graph: &DirectedNetworkGraph,
    cfg: &LocalizerConfig,
) -> Result<LocalizationResult, LocalizerError>
where
    I: IntoIterator<Item = PressureFrame>,
{
    cfg.validate(graph)?;
    let mut feed = feed.into_iter();
    let mut previous: Vec<PressureFrame> = Vec::new();
    loop {
        let mut window = match fetch_window(&mut feed, cfg.localization_interval, &previous) {
            Ok(w) => w,
            Err(LocalizerError::FeedClosed { .. }) => return Err(LocalizerError::NoBurstFound),
            Err(e) => return Err(e),
        };
        let events = detect_all_nodes(&window, cfg)?;
        if !events.is_empty() {
            return localize(&events, graph, &window, cfg.burst_start_s);
        }
        previous = window.split_off(previous.len());
    }
}

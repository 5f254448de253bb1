//! Real-time pipe burst localization for water distribution networks.
//!
//! Nodal pressure frames are fed batch by batch to a change-point detector
//! (two-pass CUSUM or a floored Shewhart chart); the node with the largest
//! change anchors a search over the flow-oriented network graph for the
//! burst pipe.
//!
//! * [`network`]: INP subset parsing and the directed graph.
//! * [`transient`]: synthetic burst traces, CSV replay and the frame feed.
//! * [`cpd`]: the detectors.
//! * [`localizer`]: windowing, per-node detection and the decision chain.
//! * [`bench`]: every-pipe × every-scenario accuracy grids.

pub mod bench;
pub mod cpd;
pub mod localizer;
pub mod network;
pub mod transient;

pub use cpd::{ChangeEvent, CusumParams, Detector, ShewhartParams};
pub use localizer::{DecisionRule, LocalizationResult, LocalizerConfig};
pub use network::{DirectedNetworkGraph, FlowField, LinkId, NetworkModel, NodeId};
pub use transient::{BurstScenario, Pacing, PressureFrame, Trace, TraceConfig};

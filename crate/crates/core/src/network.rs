//! Network model, the INP subset reader/writer, and the flow-oriented
//! directed graph consumed by the localizer.
//!
//! Supported sections: `[JUNCTIONS] id elev demand`, `[RESERVOIRS] id head`,
//! `[PIPES] id node1 node2 length diameter roughness`. `[TITLE]`,
//! `[COORDINATES]`, `[OPTIONS]` and `[END]` are skipped silently; any other
//! section is skipped with a warning. Headers are case-insensitive and `;`
//! starts a comment.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(NodeId);
string_id!(LinkId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: NodeId,
    /// Elevation in meters.
    pub elevation: f64,
    /// Base demand in m³/s.
    pub base_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    pub id: NodeId,
    /// Total head in meters.
    pub head: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub id: LinkId,
    pub start: NodeId,
    pub end: NodeId,
    /// Meters.
    pub length: f64,
    /// Meters.
    pub diameter: f64,
    pub roughness: f64,
}

impl Pipe {
    pub fn connects(&self, a: &NodeId, b: &NodeId) -> bool {
        (&self.start == a && &self.end == b) || (&self.start == b && &self.end == a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Junction,
    Reservoir,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("line {line}: malformed [{section}] entry: {message}")]
    MalformedSection {
        line: usize,
        section: String,
        message: String,
    },
    #[error("pipe {pipe} references unknown node {node}")]
    DanglingEndpoint { pipe: LinkId, node: NodeId },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("pipe {0} must have positive length and diameter")]
    NonPositiveGeometry(LinkId),
    #[error("network has no reservoir")]
    NoReservoir,
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
}

/// A validated water distribution network.
///
/// Node ids are unique across junctions and reservoirs, link ids are unique,
/// every pipe endpoint exists, geometry is positive and there is at least one
/// reservoir. Constructed through [`NetworkModel::new`] or [`parse_inp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    junctions: Vec<Junction>,
    reservoirs: Vec<Reservoir>,
    pipes: Vec<Pipe>,
}

impl NetworkModel {
    pub fn new(
        junctions: Vec<Junction>,
        reservoirs: Vec<Reservoir>,
        pipes: Vec<Pipe>,
    ) -> Result<Self, ModelError> {
        let mut nodes = HashSet::new();
        for id in junctions.iter().map(|j| &j.id).chain(reservoirs.iter().map(|r| &r.id)) {
            if !nodes.insert(id) {
                return Err(ModelError::DuplicateId(id.0.clone()));
            }
        }
        if reservoirs.is_empty() {
            return Err(ModelError::NoReservoir);
        }
        let mut links = HashSet::new();
        for pipe in &pipes {
            if !links.insert(&pipe.id) {
                return Err(ModelError::DuplicateId(pipe.id.0.clone()));
            }
            for endpoint in [&pipe.start, &pipe.end] {
                if !nodes.contains(endpoint) {
                    return Err(ModelError::DanglingEndpoint {
                        pipe: pipe.id.clone(),
                        node: endpoint.clone(),
                    });
                }
            }
            if !(pipe.length > 0.0 && pipe.diameter > 0.0) {
                return Err(ModelError::NonPositiveGeometry(pipe.id.clone()));
            }
        }
        Ok(Self {
            junctions,
            reservoirs,
            pipes,
        })
    }

    /// The bundled 25-pipe reference network.
    pub fn reference25() -> Self {
        parse_inp(REFERENCE25_INP).expect("bundled fixture is valid")
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn reservoirs(&self) -> &[Reservoir] {
        &self.reservoirs
    }

    pub fn pipes(&self) -> &[Pipe] {
        &self.pipes
    }

    pub fn pipe(&self, id: &LinkId) -> Option<&Pipe> {
        self.pipes.iter().find(|p| &p.id == id)
    }

    /// Node ids in declaration order: junctions, then reservoirs.
    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.junctions
            .iter()
            .map(|j| &j.id)
            .chain(self.reservoirs.iter().map(|r| &r.id))
    }

    pub fn node_kind(&self, id: &NodeId) -> Option<NodeKind> {
        if self.junctions.iter().any(|j| &j.id == id) {
            Some(NodeKind::Junction)
        } else if self.reservoirs.iter().any(|r| &r.id == id) {
            Some(NodeKind::Reservoir)
        } else {
            None
        }
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.node_kind(id).is_some()
    }

    /// Shortest-path distances in meters over the undirected pipe network
    /// from the nearest of `sources`. Unreachable nodes are absent.
    pub fn distances_from<'a, I>(&self, sources: I) -> HashMap<NodeId, f64>
    where
        I: IntoIterator<Item = &'a NodeId>,
    {
        let adjacency = self.undirected_adjacency();
        let mut dist: HashMap<NodeId, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        for s in sources {
            dist.insert(s.clone(), 0.0);
            heap.push(Frontier(0.0, s.clone()));
        }
        while let Some(Frontier(d, node)) = heap.pop() {
            if d > dist[&node] {
                continue;
            }
            for (next, len) in adjacency.get(&node).into_iter().flatten() {
                let candidate = d + len;
                if dist.get(*next).is_none_or(|&cur| candidate < cur) {
                    dist.insert((*next).clone(), candidate);
                    heap.push(Frontier(candidate, (*next).clone()));
                }
            }
        }
        dist
    }

    /// Breadth-first hop counts from the nearest reservoir.
    pub fn hops_from_reservoirs(&self) -> HashMap<NodeId, usize> {
        let adjacency = self.undirected_adjacency();
        let mut hops = HashMap::new();
        let mut queue = VecDeque::new();
        for r in &self.reservoirs {
            hops.insert(r.id.clone(), 0);
            queue.push_back(&r.id);
        }
        while let Some(node) = queue.pop_front() {
            let h = hops[node];
            for (next, _) in adjacency.get(node).into_iter().flatten() {
                if !hops.contains_key(*next) {
                    hops.insert((*next).clone(), h + 1);
                    queue.push_back(next);
                }
            }
        }
        hops
    }

    fn undirected_adjacency(&self) -> HashMap<&NodeId, Vec<(&NodeId, f64)>> {
        let mut adjacency: HashMap<&NodeId, Vec<(&NodeId, f64)>> = HashMap::new();
        for p in &self.pipes {
            adjacency.entry(&p.start).or_default().push((&p.end, p.length));
            adjacency.entry(&p.end).or_default().push((&p.start, p.length));
        }
        adjacency
    }

    /// Renders the model in the INP subset. `parse_inp` of the output
    /// reproduces the model exactly.
    pub fn to_inp_string(&self) -> String {
        let mut out = String::new();
        out.push_str("[JUNCTIONS]\n;ID\tElev\tDemand\n");
        for j in &self.junctions {
            let _ = writeln!(out, "{}\t{}\t{}", j.id, j.elevation, j.base_demand);
        }
        out.push_str("\n[RESERVOIRS]\n;ID\tHead\n");
        for r in &self.reservoirs {
            let _ = writeln!(out, "{}\t{}", r.id, r.head);
        }
        out.push_str("\n[PIPES]\n;ID\tNode1\tNode2\tLength\tDiameter\tRoughness\n");
        for p in &self.pipes {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                p.id, p.start, p.end, p.length, p.diameter, p.roughness
            );
        }
        out.push_str("\n[END]\n");
        out
    }
}

#[derive(Debug, PartialEq)]
struct Frontier(f64, NodeId);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

pub const REFERENCE25_INP: &str = include_str!("../fixtures/reference25.inp");

#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Junctions,
    Reservoirs,
    Pipes,
    Ignored,
    Unknown,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Junctions => "JUNCTIONS",
            Section::Reservoirs => "RESERVOIRS",
            Section::Pipes => "PIPES",
            Section::Ignored | Section::Unknown => "",
        }
    }
}

/// Parses an INP subset document, discarding warnings.
pub fn parse_inp(text: &str) -> Result<NetworkModel, ModelError> {
    parse_inp_with_warnings(text).map(|(model, _)| model)
}

pub fn parse_inp_with_warnings(
    text: &str,
) -> Result<(NetworkModel, Vec<ParseWarning>), ModelError> {
    let mut warnings = Vec::new();
    let mut section = None;
    let mut seen = [false; 3];
    let mut junctions = Vec::new();
    let mut reservoirs = Vec::new();
    let mut pipes = Vec::new();
    // first line on which each pipe was declared, for error reporting
    let mut pipe_lines = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split(';').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            let name = content
                .trim_start_matches('[')
                .trim_end_matches(']')
                .trim()
                .to_ascii_uppercase();
            let s = match name.as_str() {
                "JUNCTIONS" => Section::Junctions,
                "RESERVOIRS" => Section::Reservoirs,
                "PIPES" => Section::Pipes,
                "TITLE" | "COORDINATES" | "OPTIONS" | "END" => Section::Ignored,
                _ => {
                    warnings.push(ParseWarning {
                        line: line_no,
                        message: format!("ignoring unsupported section [{name}]"),
                    });
                    Section::Unknown
                }
            };
            match s {
                Section::Junctions => seen[0] = true,
                Section::Reservoirs => seen[1] = true,
                Section::Pipes => seen[2] = true,
                _ => {}
            }
            section = Some(s);
            continue;
        }

        let fields: Vec<&str> = content.split_whitespace().collect();
        let Some(current) = section else {
            warnings.push(ParseWarning {
                line: line_no,
                message: "content before first section header".into(),
            });
            continue;
        };
        let malformed = |message: String| ModelError::MalformedSection {
            line: line_no,
            section: current.name().to_owned(),
            message,
        };
        let number = |field: &str, what: &str| -> Result<f64, ModelError> {
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("{what} `{field}` is not a number")))
        };
        match current {
            Section::Junctions => {
                if !(2..=3).contains(&fields.len()) {
                    return Err(malformed(format!(
                        "expected `id elev [demand]`, found {} fields",
                        fields.len()
                    )));
                }
                junctions.push(Junction {
                    id: fields[0].into(),
                    elevation: number(fields[1], "elevation")?,
                    base_demand: match fields.get(2) {
                        Some(f) => number(f, "demand")?,
                        None => 0.0,
                    },
                });
            }
            Section::Reservoirs => {
                if fields.len() != 2 {
                    return Err(malformed(format!(
                        "expected `id head`, found {} fields",
                        fields.len()
                    )));
                }
                reservoirs.push(Reservoir {
                    id: fields[0].into(),
                    head: number(fields[1], "head")?,
                });
            }
            Section::Pipes => {
                if fields.len() != 6 {
                    return Err(malformed(format!(
                        "expected `id node1 node2 length diameter roughness`, found {} fields",
                        fields.len()
                    )));
                }
                let pipe = Pipe {
                    id: fields[0].into(),
                    start: fields[1].into(),
                    end: fields[2].into(),
                    length: number(fields[3], "length")?,
                    diameter: number(fields[4], "diameter")?,
                    roughness: number(fields[5], "roughness")?,
                };
                if !(pipe.length > 0.0 && pipe.diameter > 0.0) {
                    return Err(malformed(format!(
                        "pipe {} must have positive length and diameter",
                        pipe.id
                    )));
                }
                pipe_lines.entry(pipe.id.clone()).or_insert(line_no);
                pipes.push(pipe);
            }
            Section::Ignored | Section::Unknown => {}
        }
    }

    for (i, name) in ["JUNCTIONS", "RESERVOIRS", "PIPES"].into_iter().enumerate() {
        if !seen[i] {
            return Err(ModelError::MissingSection(name));
        }
    }
    let model = NetworkModel::new(junctions, reservoirs, pipes)?;
    Ok((model, warnings))
}

/// Signed pipe flow rates in m³/s, positive in the declared start→end order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowField {
    flows: BTreeMap<LinkId, f64>,
}

impl FlowField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, link: LinkId, flow: f64) {
        self.flows.insert(link, flow);
    }

    pub fn get(&self, link: &LinkId) -> Option<f64> {
        self.flows.get(link).copied()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            flows: self.flows.iter().map(|(k, v)| (k.clone(), -v)).collect(),
        }
    }

    /// Nominal flow field pointing every pipe away from the reservoirs: a pipe
    /// flows start→end unless its end is strictly fewer breadth-first hops
    /// from a reservoir than its start. Magnitudes are a nominal 1 m³/s.
    pub fn outward_from_reservoirs(model: &NetworkModel) -> Self {
        let hops = model.hops_from_reservoirs();
        let flows = model
            .pipes()
            .iter()
            .map(|p| {
                let start = hops.get(&p.start).copied().unwrap_or(usize::MAX);
                let end = hops.get(&p.end).copied().unwrap_or(usize::MAX);
                let sign = if end < start { -1.0 } else { 1.0 };
                (p.id.clone(), sign)
            })
            .collect();
        Self { flows }
    }
}

impl FromIterator<(LinkId, f64)> for FlowField {
    fn from_iter<T: IntoIterator<Item = (LinkId, f64)>>(iter: T) -> Self {
        Self {
            flows: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("no flow given for pipe {0}")]
    MissingFlow(LinkId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DirectedEdge {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
}

impl DirectedEdge {
    /// Orientation has absorbed the flow sign, so every weight is 1.
    pub const fn weight(&self) -> u32 {
        1
    }
}

/// Flow-oriented view of a network: one edge per pipe, pointing downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedNetworkGraph {
    nodes: BTreeSet<NodeId>,
    edges: Vec<DirectedEdge>,
    incoming: HashMap<NodeId, BTreeSet<NodeId>>,
    outgoing: HashMap<NodeId, BTreeSet<NodeId>>,
}

/// Orients every pipe by the sign of its flow; zero flow keeps the declared
/// start→end order.
pub fn build_directed_graph(
    model: &NetworkModel,
    flows: &FlowField,
) -> Result<DirectedNetworkGraph, GraphError> {
    let edges = model
        .pipes()
        .iter()
        .map(|p| {
            let flow = flows
                .get(&p.id)
                .ok_or_else(|| GraphError::MissingFlow(p.id.clone()))?;
            let (from, to) = if flow < 0.0 {
                (p.end.clone(), p.start.clone())
            } else {
                (p.start.clone(), p.end.clone())
            };
            Ok(DirectedEdge {
                link: p.id.clone(),
                from,
                to,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DirectedNetworkGraph::from_parts(
        model.node_ids().cloned().collect(),
        edges,
    ))
}

impl DirectedNetworkGraph {
    fn from_parts(nodes: BTreeSet<NodeId>, edges: Vec<DirectedEdge>) -> Self {
        let mut incoming: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        let mut outgoing: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
        for e in &edges {
            outgoing.entry(e.from.clone()).or_default().insert(e.to.clone());
            incoming.entry(e.to.clone()).or_default().insert(e.from.clone());
        }
        Self {
            nodes,
            edges,
            incoming,
            outgoing,
        }
    }

    /// Graph of `model` under [`FlowField::outward_from_reservoirs`].
    pub fn outward(model: &NetworkModel) -> Self {
        build_directed_graph(model, &FlowField::outward_from_reservoirs(model))
            .expect("outward flow field covers every pipe")
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &[DirectedEdge] {
        &self.edges
    }

    pub fn contains_node(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn predecessors(&self, node: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        self.neighbours(&self.incoming, node)
    }

    pub fn successors(&self, node: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        self.neighbours(&self.outgoing, node)
    }

    fn neighbours(
        &self,
        map: &HashMap<NodeId, BTreeSet<NodeId>>,
        node: &NodeId,
    ) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.nodes.contains(node) {
            return Err(GraphError::UnknownNode(node.clone()));
        }
        Ok(map.get(node).cloned().unwrap_or_default())
    }

    /// Lowest link id among edges `from → to`, if any.
    pub fn edge_between(&self, from: &NodeId, to: &NodeId) -> Option<&DirectedEdge> {
        self.edges
            .iter()
            .filter(|e| &e.from == from && &e.to == to)
            .min_by(|a, b| a.link.cmp(&b.link))
    }

    /// Edge list as `link_id,from,to` CSV.
    pub fn to_edge_csv(&self) -> String {
        let mut out = String::from("link_id,from,to\n");
        for e in &self.edges {
            let _ = writeln!(out, "{},{},{}", e.link, e.from, e.to);
        }
        out
    }
}

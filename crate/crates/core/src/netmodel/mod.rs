//! Static network model: node kinds, port classes, channel legality and
//! topology validation.
//!
//! A [`Topology`] is the hidden ground truth that the discovery protocols
//! try to recover. It is immutable after construction.

mod file;
mod generate;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{load_topology, serialize_topology};
pub use generate::{generate_topology, random_topology, tdc_bank, Family};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("illegal channel: {0}")]
    IllegalChannel(String),
    #[error("cyclic lightpath through switches: {0}")]
    CyclicLightpath(String),
    #[error("duplicate TDC wiring: {0}")]
    DuplicateWiring(String),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "MEAS")]
    Meas,
    #[serde(rename = "BSA")]
    Bsa,
    #[serde(rename = "EPPS")]
    Epps,
    #[serde(rename = "OSW")]
    Osw,
    #[serde(rename = "COMP")]
    Comp,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Osw,
        NodeKind::Bsa,
        NodeKind::Meas,
        NodeKind::Epps,
        NodeKind::Comp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Meas => "MEAS",
            NodeKind::Bsa => "BSA",
            NodeKind::Epps => "EPPS",
            NodeKind::Osw => "OSW",
            NodeKind::Comp => "COMP",
        }
    }

    pub fn can_have(self, dir: Direction) -> bool {
        port_class(self, dir).is_some()
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "in")]
    Input,
    #[serde(rename = "out")]
    Output,
}

/// Role of a port in a lightpath: source, transit or detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortClass {
    S,
    T,
    D,
}

/// Port class as determined by the owning node's kind and the port direction.
pub fn port_class(kind: NodeKind, dir: Direction) -> Option<PortClass> {
    use Direction::*;
    use NodeKind::*;
    match (kind, dir) {
        (Epps | Comp, Output) => Some(PortClass::S),
        (Osw, _) => Some(PortClass::T),
        (Meas | Bsa | Comp, Input) => Some(PortClass::D),
        (Meas | Bsa, Output) | (Epps, Input) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelClass {
    #[serde(rename = "S->T")]
    SourceTransit,
    #[serde(rename = "S->D")]
    SourceDetector,
    #[serde(rename = "T->T")]
    TransitTransit,
    #[serde(rename = "T->D")]
    TransitDetector,
}

impl fmt::Display for ChannelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelClass::SourceTransit => "S→T",
            ChannelClass::SourceDetector => "S→D",
            ChannelClass::TransitTransit => "T→T",
            ChannelClass::TransitDetector => "T→D",
        })
    }
}

/// A port as seen by channel validation: only the owner's kind and the
/// direction matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypedPort {
    pub kind: NodeKind,
    pub dir: Direction,
}

impl TypedPort {
    pub fn new(kind: NodeKind, dir: Direction) -> Self {
        Self { kind, dir }
    }
}

/// Classifies a light path from `src` to `dst`, rejecting every combination
/// that cannot carry light.
pub fn validate_channel(src: TypedPort, dst: TypedPort) -> Result<ChannelClass, NetError> {
    if src.dir != Direction::Output {
        return Err(NetError::IllegalChannel(format!(
            "source port on {} is not an output",
            src.kind
        )));
    }
    if dst.dir != Direction::Input {
        return Err(NetError::IllegalChannel(format!(
            "sink port on {} is not an input",
            dst.kind
        )));
    }
    let row = match src.kind {
        NodeKind::Osw => PortClass::T,
        NodeKind::Epps | NodeKind::Comp => PortClass::S,
        NodeKind::Meas | NodeKind::Bsa => {
            return Err(NetError::IllegalChannel(format!(
                "{} nodes emit no light",
                src.kind
            )))
        }
    };
    let col = match dst.kind {
        NodeKind::Osw => PortClass::T,
        NodeKind::Bsa | NodeKind::Meas | NodeKind::Comp => PortClass::D,
        NodeKind::Epps => {
            return Err(NetError::IllegalChannel(format!(
                "{} -> EPPS: EPPS nodes accept no light",
                src.kind
            )))
        }
    };
    Ok(match (row, col) {
        (PortClass::S, PortClass::T) => ChannelClass::SourceTransit,
        (PortClass::S, _) => ChannelClass::SourceDetector,
        (_, PortClass::T) => ChannelClass::TransitTransit,
        _ => ChannelClass::TransitDetector,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl PortId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Globally unique port address, written `node.port`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub node: NodeId,
    pub port: PortId,
}

impl PortRef {
    pub fn new(node: impl Into<String>, port: impl Into<String>) -> Self {
        Self {
            node: NodeId(node.into()),
            port: PortId(port.into()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (n, p) = s.split_once('.')?;
        if n.is_empty() || p.is_empty() {
            return None;
        }
        Some(Self::new(n, p))
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub id: PortId,
    pub dir: Direction,
    /// Auxiliary light source (input) or auxiliary sensor (output) on a switch.
    /// Aux ports never carry channels.
    pub aux: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub ports: Vec<Port>,
}

impl Node {
    pub fn port(&self, id: &PortId) -> Option<&Port> {
        self.ports.iter().find(|p| &p.id == id)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Port> {
        self.ports
            .iter()
            .filter(|p| p.dir == Direction::Input && !p.aux)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Port> {
        self.ports
            .iter()
            .filter(|p| p.dir == Direction::Output && !p.aux)
    }

    pub fn aux_source(&self) -> Option<&Port> {
        self.ports
            .iter()
            .find(|p| p.aux && p.dir == Direction::Input)
    }

    pub fn aux_sensor(&self) -> Option<&Port> {
        self.ports
            .iter()
            .find(|p| p.aux && p.dir == Direction::Output)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Channel {
    pub src: PortRef,
    pub dst: PortRef,
}

/// One SNSPD-to-TDC cable: detector `detector` of `node` lands on TDC input `chan`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TdcWire {
    pub node: NodeId,
    pub detector: String,
    pub chan: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TdcWiring {
    pub channel_count: u32,
    pub wires: Vec<TdcWire>,
}

/// Validated network: nodes, ground-truth channels and TDC wiring.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    channels: Vec<Channel>,
    tdc: TdcWiring,
    node_index: HashMap<NodeId, usize>,
    by_src: HashMap<PortRef, usize>,
    by_dst: HashMap<PortRef, usize>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.channels == other.channels && self.tdc == other.tdc
    }
}

impl Eq for Topology {}

impl Topology {
    /// Builds a topology, enforcing every structural invariant.
    pub fn new(nodes: Vec<Node>, channels: Vec<Channel>, tdc: TdcWiring) -> Result<Self, NetError> {
        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.id.0.is_empty() || n.id.0.contains('.') {
                return Err(NetError::Invalid(format!("bad node id {:?}", n.id.0)));
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(NetError::Invalid(format!("duplicate node id {}", n.id)));
            }
            check_node(n)?;
        }

        let lookup = |r: &PortRef| -> Result<(&Node, &Port), NetError> {
            let node = node_index
                .get(&r.node)
                .map(|&i| &nodes[i])
                .ok_or_else(|| NetError::Invalid(format!("unknown node in {r}")))?;
            let port = node
                .port(&r.port)
                .ok_or_else(|| NetError::Invalid(format!("unknown port {r}")))?;
            Ok((node, port))
        };

        let mut by_src = HashMap::new();
        let mut by_dst = HashMap::new();
        for (i, c) in channels.iter().enumerate() {
            let (sn, sp) = lookup(&c.src)?;
            let (dn, dp) = lookup(&c.dst)?;
            if sp.aux || dp.aux {
                return Err(NetError::IllegalChannel(format!(
                    "{} -> {}: aux ports carry no channels",
                    c.src, c.dst
                )));
            }
            validate_channel(TypedPort::new(sn.kind, sp.dir), TypedPort::new(dn.kind, dp.dir))
                .map_err(|e| match e {
                    NetError::IllegalChannel(m) => {
                        NetError::IllegalChannel(format!("{} -> {}: {m}", c.src, c.dst))
                    }
                    other => other,
                })?;
            if by_src.insert(c.src.clone(), i).is_some() {
                return Err(NetError::Invalid(format!(
                    "output {} feeds more than one channel",
                    c.src
                )));
            }
            if by_dst.insert(c.dst.clone(), i).is_some() {
                return Err(NetError::Invalid(format!(
                    "input {} terminates more than one channel",
                    c.dst
                )));
            }
        }

        check_acyclic(&nodes, &node_index, &channels)?;

        let mut chans = BTreeSet::new();
        let mut dets = BTreeSet::new();
        for w in &tdc.wires {
            let node = node_index
                .get(&w.node)
                .map(|&i| &nodes[i])
                .ok_or_else(|| NetError::Invalid(format!("TDC wiring names unknown node {}", w.node)))?;
            if !matches!(node.kind, NodeKind::Meas | NodeKind::Bsa | NodeKind::Comp) {
                return Err(NetError::Invalid(format!(
                    "{} node {} has no detectors",
                    node.kind, node.id
                )));
            }
            if w.chan >= tdc.channel_count {
                return Err(NetError::Invalid(format!(
                    "TDC channel {} out of range (channel_count {})",
                    w.chan, tdc.channel_count
                )));
            }
            if !chans.insert(w.chan) {
                return Err(NetError::DuplicateWiring(format!("channel {} wired twice", w.chan)));
            }
            if !dets.insert((w.node.clone(), w.detector.clone())) {
                return Err(NetError::DuplicateWiring(format!(
                    "detector {}/{} wired twice",
                    w.node, w.detector
                )));
            }
        }

        Ok(Self {
            nodes,
            channels,
            tdc,
            node_index,
            by_src,
            by_dst,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn tdc(&self) -> &TdcWiring {
        &self.tdc
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn port(&self, r: &PortRef) -> Option<&Port> {
        self.node(&r.node)?.port(&r.port)
    }

    pub fn kind_of(&self, id: &NodeId) -> Option<NodeKind> {
        self.node(id).map(|n| n.kind)
    }

    pub fn class_of(&self, r: &PortRef) -> Option<PortClass> {
        let node = self.node(&r.node)?;
        let port = node.port(&r.port)?;
        port_class(node.kind, port.dir)
    }

    /// Channel leaving output `src`, if it is connected.
    pub fn channel_from(&self, src: &PortRef) -> Option<&Channel> {
        self.by_src.get(src).map(|&i| &self.channels[i])
    }

    /// Channel arriving at input `dst`, if it is connected.
    pub fn channel_into(&self, dst: &PortRef) -> Option<&Channel> {
        self.by_dst.get(dst).map(|&i| &self.channels[i])
    }

    pub fn class_of_channel(&self, c: &Channel) -> ChannelClass {
        let s = self.node(&c.src.node).expect("validated").kind;
        let d = self.node(&c.dst.node).expect("validated").kind;
        validate_channel(
            TypedPort::new(s, Direction::Output),
            TypedPort::new(d, Direction::Input),
        )
        .expect("validated")
    }

    pub fn switches(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Osw)
    }

    pub fn switch_count(&self) -> usize {
        self.switches().count()
    }

    /// Number of wired detectors, `d`.
    pub fn detector_count(&self) -> usize {
        self.tdc.wires.len()
    }

    /// Ground-truth wiring as a map (node, detector) -> TDC channel.
    pub fn wiring_map(&self) -> BTreeMap<(NodeId, String), u32> {
        self.tdc
            .wires
            .iter()
            .map(|w| ((w.node.clone(), w.detector.clone()), w.chan))
            .collect()
    }

    /// All non-aux output ports of S- and T-type, in node order.
    pub fn emitting_outputs(&self) -> Vec<PortRef> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.outputs()
                    .map(move |p| PortRef::new(n.id.0.clone(), p.id.0.clone()))
            })
            .collect()
    }

    /// Switches ordered so every T->T channel runs from earlier to later.
    pub fn switch_order(&self) -> Vec<NodeId> {
        topo_order(&self.nodes, &self.node_index, &self.channels)
            .expect("acyclic by construction")
            .into_iter()
            .map(|i| &self.nodes[i])
            .filter(|n| n.kind == NodeKind::Osw)
            .map(|n| n.id.clone())
            .collect()
    }

    /// Longest chain of switches any lightpath traverses (0 when there are
    /// no switches on any path).
    pub fn longest_switch_chain(&self) -> usize {
        let mut depth: HashMap<&NodeId, usize> = HashMap::new();
        // Switch order from a topological sort over T->T edges.
        let order = topo_order(&self.nodes, &self.node_index, &self.channels)
            .expect("acyclic by construction");
        let mut best = 0;
        for idx in order {
            let n = &self.nodes[idx];
            let fed = self
                .channels
                .iter()
                .filter(|c| c.dst.node == n.id)
                .filter_map(|c| depth.get(&c.src.node).copied())
                .max()
                .unwrap_or(0);
            let d = fed + 1;
            best = best.max(d);
            depth.insert(&n.id, d);
        }
        best
    }
}

fn check_node(n: &Node) -> Result<(), NetError> {
    let mut seen = BTreeSet::new();
    for p in &n.ports {
        if p.id.0.is_empty() || p.id.0.contains('.') {
            return Err(NetError::Invalid(format!("bad port id {:?} on {}", p.id.0, n.id)));
        }
        if !seen.insert(&p.id) {
            return Err(NetError::Invalid(format!("duplicate port {} on {}", p.id, n.id)));
        }
        if p.aux && n.kind != NodeKind::Osw {
            return Err(NetError::Invalid(format!(
                "aux port {} on non-switch node {}",
                p.id, n.id
            )));
        }
        if !n.kind.can_have(p.dir) {
            return Err(NetError::Invalid(format!(
                "{} node {} cannot have {:?} port {}",
                n.kind, n.id, p.dir, p.id
            )));
        }
    }
    if n.kind == NodeKind::Osw {
        if n.inputs().next().is_none() || n.outputs().next().is_none() {
            return Err(NetError::Invalid(format!(
                "switch {} needs at least one input and one output",
                n.id
            )));
        }
        let aux_in = n.ports.iter().filter(|p| p.aux && p.dir == Direction::Input).count();
        let aux_out = n.ports.iter().filter(|p| p.aux && p.dir == Direction::Output).count();
        if aux_in > 1 || aux_out > 1 {
            return Err(NetError::Invalid(format!("switch {} has more than one aux port per direction", n.id)));
        }
    }
    Ok(())
}

fn topo_order(
    nodes: &[Node],
    index: &HashMap<NodeId, usize>,
    channels: &[Channel],
) -> Result<Vec<usize>, String> {
    let switch_ids: Vec<usize> = (0..nodes.len())
        .filter(|&i| nodes[i].kind == NodeKind::Osw)
        .collect();
    let mut indeg: HashMap<usize, usize> = switch_ids.iter().map(|&i| (i, 0)).collect();
    let mut succ: HashMap<usize, Vec<usize>> = HashMap::new();
    for c in channels {
        let (Some(&s), Some(&d)) = (index.get(&c.src.node), index.get(&c.dst.node)) else {
            continue;
        };
        if nodes[s].kind == NodeKind::Osw && nodes[d].kind == NodeKind::Osw {
            *indeg.get_mut(&d).unwrap() += 1;
            succ.entry(s).or_default().push(d);
        }
    }
    let mut ready: Vec<usize> = switch_ids.iter().copied().filter(|i| indeg[i] == 0).collect();
    ready.reverse();
    let mut order = Vec::new();
    while let Some(i) = ready.pop() {
        order.push(i);
        for &j in succ.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
            let e = indeg.get_mut(&j).unwrap();
            *e -= 1;
            if *e == 0 {
                ready.push(j);
            }
        }
    }
    if order.len() != switch_ids.len() {
        let stuck: Vec<&str> = switch_ids
            .iter()
            .filter(|i| !order.contains(i))
            .map(|&i| nodes[i].id.as_str())
            .collect();
        return Err(stuck.join(", "));
    }
    Ok(order)
}

fn check_acyclic(
    nodes: &[Node],
    index: &HashMap<NodeId, usize>,
    channels: &[Channel],
) -> Result<(), NetError> {
    topo_order(nodes, index, channels)
        .map(|_| ())
        .map_err(NetError::CyclicLightpath)
}

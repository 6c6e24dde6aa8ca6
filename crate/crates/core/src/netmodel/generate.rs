//! Topology generators.
//!
//! The two evaluation families are fixed constructions standing in for the
//! switch-BSA pool and small Q-Fly/DPHD testbeds; only the TDC wiring
//! permutation depends on the seed.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Channel, Direction, NetError, Node, NodeId, NodeKind, Port, PortId, PortRef, TdcWire, TdcWiring, Topology};

/// Ports facing end nodes on each leaf switch of the Q-Fly family.
const LEAF_ARITY: usize = 4;
const MAX_GENERATED_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SwitchBsaPool,
    QflyDphd,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::SwitchBsaPool => "switch_bsa_pool",
            Family::QflyDphd => "qfly_dphd",
        })
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "switch_bsa_pool" => Ok(Family::SwitchBsaPool),
            "qfly_dphd" => Ok(Family::QflyDphd),
            other => Err(format!("unknown topology family {other:?}")),
        }
    }
}

#[derive(Default)]
struct Builder {
    nodes: Vec<Node>,
    channels: Vec<Channel>,
}

impl Builder {
    fn add_node(&mut self, id: String, kind: NodeKind) -> usize {
        self.nodes.push(Node {
            id: NodeId(id),
            kind,
            ports: Vec::new(),
        });
        self.nodes.len() - 1
    }

    fn add_port(&mut self, node: usize, prefix: &str, dir: Direction) -> PortRef {
        let n = &mut self.nodes[node];
        let k = n.ports.iter().filter(|p| p.dir == dir && !p.aux).count();
        let id = format!("{prefix}{k}");
        n.ports.push(Port {
            id: PortId(id.clone()),
            dir,
            aux: false,
        });
        PortRef::new(n.id.0.clone(), id)
    }

    fn connect(&mut self, src: usize, dst: usize) {
        let s = self.add_port(src, "o", Direction::Output);
        let d = self.add_port(dst, "i", Direction::Input);
        self.channels.push(Channel { src: s, dst: d });
    }

    fn add_aux(&mut self) {
        for n in self.nodes.iter_mut().filter(|n| n.kind == NodeKind::Osw) {
            n.ports.push(Port {
                id: PortId::new("aux_in"),
                dir: Direction::Input,
                aux: true,
            });
            n.ports.push(Port {
                id: PortId::new("aux_out"),
                dir: Direction::Output,
                aux: true,
            });
        }
    }

    /// Wires every D-type input to a TDC channel under a seeded permutation.
    fn finish(mut self, seed: u64) -> Result<Topology, NetError> {
        self.add_aux();
        let mut detectors = Vec::new();
        for n in &self.nodes {
            if matches!(n.kind, NodeKind::Meas | NodeKind::Bsa | NodeKind::Comp) {
                for p in n.inputs() {
                    detectors.push((n.id.clone(), p.id.0.clone()));
                }
            }
        }
        let mut chans: Vec<u32> = (0..detectors.len() as u32).collect();
        chans.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let wires = detectors
            .into_iter()
            .zip(chans)
            .map(|((node, detector), chan)| TdcWire { node, detector, chan })
            .collect::<Vec<_>>();
        let tdc = TdcWiring {
            channel_count: wires.len() as u32,
            wires,
        };
        Topology::new(self.nodes, self.channels, tdc)
    }
}

/// Builds one of the evaluation topology families with `n` end nodes.
pub fn generate_topology(family: Family, n: usize, seed: u64) -> Result<Topology, NetError> {
    if n < 2 {
        return Err(NetError::UnsupportedSize(format!("{family} needs n >= 2, got {n}")));
    }
    if n > MAX_GENERATED_NODES {
        return Err(NetError::UnsupportedSize(format!(
            "{family} supports at most {MAX_GENERATED_NODES} end nodes"
        )));
    }
    let mut b = Builder::default();
    match family {
        Family::SwitchBsaPool => {
            let sw = b.add_node("sw0".into(), NodeKind::Osw);
            let ends: Vec<usize> = (0..n)
                .map(|i| b.add_node(format!("c{i}"), NodeKind::Comp))
                .collect();
            for &e in &ends {
                b.connect(e, sw);
            }
            for &e in &ends {
                b.connect(sw, e);
            }
            for j in 0..n.div_ceil(2) {
                let bsa = b.add_node(format!("b{j}"), NodeKind::Bsa);
                b.connect(sw, bsa);
                b.connect(sw, bsa);
            }
        }
        Family::QflyDphd => {
            let leaves: Vec<usize> = (0..n.div_ceil(LEAF_ARITY))
                .map(|l| b.add_node(format!("leaf{l}"), NodeKind::Osw))
                .collect();
            for i in 0..n {
                let e = b.add_node(format!("c{i}"), NodeKind::Comp);
                let leaf = leaves[i / LEAF_ARITY];
                b.connect(e, leaf);
                b.connect(leaf, e);
            }
            for (l, &leaf) in leaves.iter().enumerate() {
                let bsa = b.add_node(format!("b{l}"), NodeKind::Bsa);
                b.connect(leaf, bsa);
                b.connect(leaf, bsa);
            }
            // One directed fiber per leaf pair keeps the switch fabric acyclic.
            for a in 0..leaves.len() {
                for c in a + 1..leaves.len() {
                    b.connect(leaves[a], leaves[c]);
                }
            }
        }
    }
    b.finish(seed)
}

/// A bank of `d` detectors spread over MEAS nodes (four per node) with a
/// seeded random TDC wiring. Used for node-to-TDC experiments.
pub fn tdc_bank(d: usize, seed: u64) -> Result<Topology, NetError> {
    if d == 0 {
        return Err(NetError::UnsupportedSize("a TDC bank needs at least one detector".into()));
    }
    let mut nodes = Vec::new();
    let mut dets = Vec::new();
    for k in 0..d.div_ceil(4) {
        let id = NodeId(format!("m{k}"));
        for j in 0..(d - 4 * k).min(4) {
            dets.push((id.clone(), format!("det{j}")));
        }
        nodes.push(Node {
            id,
            kind: NodeKind::Meas,
            ports: Vec::new(),
        });
    }
    let mut chans: Vec<u32> = (0..d as u32).collect();
    chans.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let wires = dets
        .into_iter()
        .zip(chans)
        .map(|((node, detector), chan)| TdcWire { node, detector, chan })
        .collect();
    Topology::new(
        nodes,
        Vec::new(),
        TdcWiring {
            channel_count: d as u32,
            wires,
        },
    )
}

/// A random valid network of at most 8 nodes and 16 channels in which every
/// switch is reachable from some light source. Every port carries a channel
/// and every switch gets a pair of aux ports.
pub fn random_topology(seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7090);
    let n_src = rng.gen_range(1..=3);
    let n_sw = rng.gen_range(0..=2);
    let n_sink = rng.gen_range(1..=3);

    let mut b = Builder::default();
    let sources: Vec<usize> = (0..n_src)
        .map(|i| {
            let kind = if rng.gen_bool(0.5) { NodeKind::Epps } else { NodeKind::Comp };
            b.add_node(format!("s{i}"), kind)
        })
        .collect();
    let switches: Vec<usize> = (0..n_sw)
        .map(|i| b.add_node(format!("w{i}"), NodeKind::Osw))
        .collect();
    let sinks: Vec<usize> = (0..n_sink)
        .map(|i| {
            let kind = [NodeKind::Meas, NodeKind::Bsa, NodeKind::Comp][rng.gen_range(0..3)];
            b.add_node(format!("d{i}"), kind)
        })
        .collect();

    let absorbers: Vec<usize> = sinks
        .iter()
        .copied()
        .chain(sources.iter().copied().filter(|&s| b.nodes[s].kind == NodeKind::Comp))
        .collect();

    // Legal destinations for a channel leaving `src`.
    let targets = |src: usize| -> Vec<usize> {
        let sw_pos = switches.iter().position(|&w| w == src);
        let mut t: Vec<usize> = match sw_pos {
            Some(p) => switches[p + 1..].to_vec(),
            None => switches.clone(),
        };
        t.extend(absorbers.iter().copied().filter(|&a| a != src));
        t
    };

    for (j, &w) in switches.iter().enumerate() {
        let feeders: Vec<usize> = sources.iter().chain(&switches[..j]).copied().collect();
        let f = feeders[rng.gen_range(0..feeders.len())];
        b.connect(f, w);
    }
    for &w in &switches {
        let t = targets(w);
        let d = t[rng.gen_range(0..t.len())];
        b.connect(w, d);
    }
    for &s in &sources {
        if b.nodes[s].outputs().next().is_none() {
            let t = targets(s);
            if !t.is_empty() {
                let d = t[rng.gen_range(0..t.len())];
                b.connect(s, d);
            }
        }
    }
    let emitters: Vec<usize> = sources.iter().chain(&switches).copied().collect();
    let extra = rng.gen_range(0..=6);
    for _ in 0..extra {
        if b.channels.len() >= 16 {
            break;
        }
        let s = emitters[rng.gen_range(0..emitters.len())];
        let t = targets(s);
        if t.is_empty() {
            continue;
        }
        let d = t[rng.gen_range(0..t.len())];
        b.connect(s, d);
    }
    b.finish(seed).expect("random construction respects every invariant")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{validate_channel, TypedPort};

    fn all_channels_legal(t: &Topology) -> bool {
        t.channels().iter().all(|c| {
            let s = t.kind_of(&c.src.node).unwrap();
            let d = t.kind_of(&c.dst.node).unwrap();
            validate_channel(
                TypedPort::new(s, Direction::Output),
                TypedPort::new(d, Direction::Input),
            )
            .is_ok()
        })
    }

    #[test]
    fn switch_bsa_pool_counts() {
        let t = generate_topology(Family::SwitchBsaPool, 4, 0).unwrap();
        let count = |k| t.nodes().iter().filter(|n| n.kind == k).count();
        assert_eq!(count(NodeKind::Osw), 1);
        assert_eq!(count(NodeKind::Comp), 4);
        assert_eq!(count(NodeKind::Bsa), 2);
        // brute-force enumeration over every (output, input) pair
        let mut enumerated = 0;
        for a in t.nodes() {
            for o in a.outputs() {
                for bnode in t.nodes() {
                    for i in bnode.inputs() {
                        let s = PortRef::new(a.id.0.clone(), o.id.0.clone());
                        let d = PortRef::new(bnode.id.0.clone(), i.id.0.clone());
                        if t.channels().contains(&Channel { src: s, dst: d }) {
                            enumerated += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(enumerated, 12);
        assert!(all_channels_legal(&t));
    }

    #[test]
    fn switch_bsa_pool_shape_is_seed_independent() {
        let a = generate_topology(Family::SwitchBsaPool, 2, 7).unwrap();
        let b = generate_topology(Family::SwitchBsaPool, 2, 0).unwrap();
        assert_eq!(a.nodes(), b.nodes());
        assert_eq!(a.channels(), b.channels());
    }

    #[test]
    fn qfly_eight() {
        let t = generate_topology(Family::QflyDphd, 8, 0).unwrap();
        assert_eq!(t.switch_count(), 2);
        let tt = t
            .channels()
            .iter()
            .filter(|c| t.class_of_channel(c) == crate::netmodel::ChannelClass::TransitTransit)
            .count();
        assert_eq!(tt, 1);
        assert_eq!(t.nodes().iter().filter(|n| n.kind == NodeKind::Bsa).count(), 2);
        assert!(all_channels_legal(&t));
        assert_eq!(t.longest_switch_chain(), 2);
    }

    #[test]
    fn tiny_sizes_rejected() {
        assert!(matches!(
            generate_topology(Family::QflyDphd, 1, 0),
            Err(NetError::UnsupportedSize(_))
        ));
    }

    #[test]
    fn generators_are_pure() {
        for seed in 0..5 {
            assert_eq!(
                generate_topology(Family::QflyDphd, 9, seed).unwrap(),
                generate_topology(Family::QflyDphd, 9, seed).unwrap()
            );
            assert_eq!(random_topology(seed), random_topology(seed));
        }
    }

    #[test]
    fn random_topologies_within_bounds() {
        for seed in 0..200 {
            let t = random_topology(seed);
            assert!(t.nodes().len() <= 8);
            assert!(t.channels().len() <= 16, "seed {seed}");
            assert!(all_channels_legal(&t));
            for w in t.switches() {
                assert!(w.inputs().next().is_some() && w.outputs().next().is_some());
            }
        }
    }

    #[test]
    fn tdc_bank_wiring_is_a_permutation() {
        let t = tdc_bank(10, 3).unwrap();
        let mut chans: Vec<u32> = t.tdc().wires.iter().map(|w| w.chan).collect();
        chans.sort();
        assert_eq!(chans, (0..10).collect::<Vec<_>>());
    }
}

//! TOML topology files.
//!
//! ```toml
//! [[nodes]]
//! id = "e1"
//! kind = "EPPS"
//! ports = [{ id = "o1", dir = "out" }]
//!
//! [[nodes]]
//! id = "m1"
//! kind = "MEAS"
//! ports = [{ id = "i1", dir = "in" }]
//!
//! [[channels]]
//! src = "e1.o1"
//! dst = "m1.i1"
//!
//! [tdc]
//! channel_count = 1
//! wiring = [{ node = "m1", detector = "d0", chan = 0 }]
//! ```
//!
//! Switch ports may carry `aux = true` to mark the auxiliary light source
//! (an input) or the auxiliary sensor (an output).

use serde::{Deserialize, Serialize};

use super::{Channel, Direction, NetError, Node, NodeId, NodeKind, Port, PortId, PortRef, TdcWire, TdcWiring, Topology};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    nodes: Vec<NodeSpec>,
    #[serde(default)]
    channels: Vec<ChannelSpec>,
    #[serde(default)]
    tdc: TdcSpec,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSpec {
    id: String,
    kind: NodeKind,
    #[serde(default)]
    ports: Vec<PortSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PortSpec {
    id: String,
    dir: Direction,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    aux: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSpec {
    src: String,
    dst: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TdcSpec {
    #[serde(default)]
    channel_count: u32,
    #[serde(default)]
    wiring: Vec<TdcWire>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a topology file.
pub fn load_topology(text: &str) -> Result<Topology, NetError> {
    let file: TopologyFile = toml::from_str(text).map_err(|e| NetError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;

    let nodes = file
        .nodes
        .into_iter()
        .map(|n| Node {
            id: NodeId(n.id),
            kind: n.kind,
            ports: n
                .ports
                .into_iter()
                .map(|p| Port {
                    id: PortId(p.id),
                    dir: p.dir,
                    aux: p.aux,
                })
                .collect(),
        })
        .collect();

    let mut channels = Vec::with_capacity(file.channels.len());
    for c in file.channels {
        let parse = |s: &str| {
            PortRef::parse(s).ok_or_else(|| NetError::Parse {
                line: text.find(s).map(|o| line_of(text, o)).unwrap_or(0),
                message: format!("expected \"node.port\", got {s:?}"),
            })
        };
        channels.push(Channel {
            src: parse(&c.src)?,
            dst: parse(&c.dst)?,
        });
    }

    Topology::new(
        nodes,
        channels,
        TdcWiring {
            channel_count: file.tdc.channel_count,
            wires: file.tdc.wiring,
        },
    )
}

pub fn serialize_topology(topo: &Topology) -> String {
    let file = TopologyFile {
        nodes: topo
            .nodes()
            .iter()
            .map(|n| NodeSpec {
                id: n.id.0.clone(),
                kind: n.kind,
                ports: n
                    .ports
                    .iter()
                    .map(|p| PortSpec {
                        id: p.id.0.clone(),
                        dir: p.dir,
                        aux: p.aux,
                    })
                    .collect(),
            })
            .collect(),
        channels: topo
            .channels()
            .iter()
            .map(|c| ChannelSpec {
                src: c.src.to_string(),
                dst: c.dst.to_string(),
            })
            .collect(),
        tdc: TdcSpec {
            channel_count: topo.tdc().channel_count,
            wiring: topo.tdc().wires.clone(),
        },
    };
    toml::to_string(&file).expect("topology is always representable")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[nodes]]
id = "e1"
kind = "EPPS"
ports = [{ id = "o1", dir = "out" }]

[[nodes]]
id = "m1"
kind = "MEAS"
ports = [{ id = "i1", dir = "in" }]

[[channels]]
src = "e1.o1"
dst = "m1.i1"

[tdc]
channel_count = 1
wiring = [{ node = "m1", detector = "d0", chan = 0 }]
"#;

    #[test]
    fn minimal_network() {
        let t = load_topology(MINIMAL).unwrap();
        assert_eq!(t.detector_count(), 1);
        assert_eq!(t.channels().len(), 1);
        assert_eq!(load_topology(&serialize_topology(&t)).unwrap(), t);
    }

    #[test]
    fn meas_output_is_illegal() {
        let text = r#"
[[nodes]]
id = "m1"
kind = "MEAS"
ports = [{ id = "i1", dir = "in" }]

[[nodes]]
id = "m2"
kind = "MEAS"
ports = [{ id = "i1", dir = "in" }]

[[channels]]
src = "m1.i1"
dst = "m2.i1"
"#;
        assert!(matches!(load_topology(text), Err(NetError::IllegalChannel(_))));
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "[[nodes]]\nid = \"a\"\nkind = \"ROUTER\"\n";
        match load_topology(text) {
            Err(NetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}

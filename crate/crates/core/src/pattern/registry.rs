//! Pattern directory: optical pattern -> announcing (node, port).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::netmodel::{NodeId, PortId, PortRef, Topology};
use crate::tdc::{encode_identifier, pattern_bits};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("{ports} output ports do not fit in {bits}-bit patterns")]
    NamespaceExhausted { ports: usize, bits: u32 },
    #[error("pattern value {0} is reserved for framing")]
    Reserved(u64),
    #[error("pattern {value} already registered to {owner}")]
    PatternCollision { value: u64, owner: PortRef },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternRegistry {
    bits: u32,
    entries: BTreeMap<u64, PortRef>,
    by_port: BTreeMap<PortRef, u64>,
}

impl PatternRegistry {
    pub fn new(bits: u32) -> Self {
        Self {
            bits,
            ..Default::default()
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers `node`'s output patterns. Re-announcing an identical
    /// binding is a no-op.
    pub fn announce(&mut self, node: &NodeId, ports: &[(PortId, u64)]) -> Result<(), RegistryError> {
        for (port, value) in ports {
            if *value >= (1u64 << self.bits) - 1 {
                return Err(RegistryError::Reserved(*value));
            }
            let r = PortRef {
                node: node.clone(),
                port: port.clone(),
            };
            if let Some(owner) = self.entries.get(value) {
                if owner != &r {
                    return Err(RegistryError::PatternCollision {
                        value: *value,
                        owner: owner.clone(),
                    });
                }
            }
        }
        for (port, value) in ports {
            let r = PortRef {
                node: node.clone(),
                port: port.clone(),
            };
            if let Some(old) = self.by_port.insert(r.clone(), *value) {
                self.entries.remove(&old);
            }
            self.entries.insert(*value, r);
        }
        Ok(())
    }

    pub fn lookup(&self, value: u64) -> Option<&PortRef> {
        self.entries.get(&value)
    }

    pub fn value_of(&self, port: &PortRef) -> Option<u64> {
        self.by_port.get(port).copied()
    }

    pub fn remove(&mut self, value: u64) -> Option<PortRef> {
        let r = self.entries.remove(&value)?;
        self.by_port.remove(&r);
        Some(r)
    }

    /// Framed bits for `port`'s pattern.
    pub fn frame(&self, port: &PortRef) -> Option<Vec<bool>> {
        let v = self.value_of(port)?;
        Some(encode_identifier(v, self.bits).expect("registered values are valid"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &PortRef)> {
        self.entries.iter().map(|(v, r)| (*v, r))
    }
}

/// Smallest pattern length that covers every emitting output.
pub fn default_pattern_bits(topo: &Topology) -> u32 {
    pattern_bits(topo.emitting_outputs().len() as u64)
}

/// Gives every S- and T-type output a distinct value, in port order.
pub fn assign_patterns(topo: &Topology, bits: u32) -> Result<PatternRegistry, RegistryError> {
    let ports = topo.emitting_outputs();
    if bits == 0 || bits > 31 || ports.len() as u64 > (1u64 << bits) - 1 {
        return Err(RegistryError::NamespaceExhausted {
            ports: ports.len(),
            bits,
        });
    }
    let mut reg = PatternRegistry::new(bits);
    for (v, p) in ports.into_iter().enumerate() {
        reg.announce(&p.node, &[(p.port.clone(), v as u64)])?;
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_topology;

    fn n_sources(k: usize) -> Topology {
        let mut s = String::new();
        for i in 0..k {
            s += &format!(
                "[[nodes]]\nid = \"e{i}\"\nkind = \"EPPS\"\nports = [{{ id = \"o\", dir = \"out\" }}]\n\
                 [[nodes]]\nid = \"m{i}\"\nkind = \"MEAS\"\nports = [{{ id = \"i\", dir = \"in\" }}]\n\
                 [[channels]]\nsrc = \"e{i}.o\"\ndst = \"m{i}.i\"\n"
            );
        }
        if k == 0 {
            s += "[[nodes]]\nid = \"m\"\nkind = \"MEAS\"\nports = []\n";
        }
        load_topology(&s).unwrap()
    }

    #[test]
    fn three_ports_two_bits() {
        let reg = assign_patterns(&n_sources(3), 2).unwrap();
        let vals: Vec<u64> = reg.iter().map(|(v, _)| v).collect();
        assert_eq!(vals, vec![0, 1, 2]);
        for (_, p) in reg.iter() {
            assert_eq!(reg.frame(p).unwrap().len(), 6);
        }
    }

    #[test]
    fn empty_and_exhausted() {
        assert!(assign_patterns(&n_sources(0), 2).unwrap().is_empty());
        assert!(matches!(
            assign_patterns(&n_sources(4), 2),
            Err(RegistryError::NamespaceExhausted { .. })
        ));
    }

    #[test]
    fn announce_rules() {
        let mut reg = PatternRegistry::new(4);
        let a = NodeId::new("A");
        assert_eq!(reg.announce(&a, &[(PortId::new("out1"), 15)]), Err(RegistryError::Reserved(15)));
        reg.announce(&a, &[(PortId::new("out1"), 7)]).unwrap();
        let before = reg.clone();
        reg.announce(&a, &[(PortId::new("out1"), 7)]).unwrap();
        assert_eq!(reg, before);
        assert!(matches!(
            reg.announce(&NodeId::new("B"), &[(PortId::new("o"), 7)]),
            Err(RegistryError::PatternCollision { .. })
        ));
        assert_eq!(reg.lookup(7), Some(&PortRef::new("A", "out1")));
        assert_eq!(reg.lookup(5), None);
        reg.remove(7);
        assert_eq!(reg.lookup(7), None);
    }
}

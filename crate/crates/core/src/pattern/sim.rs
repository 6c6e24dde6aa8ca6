//! Step-driven pattern discovery.
//!
//! Each step every transmitting output (re)starts its framed pattern, every
//! input with a sensor samples one frame, and decoded patterns are resolved
//! through the registry and confirmed by a notify/confirm round trip.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::neighbor::{NeighborEntry, NeighborTable};
use super::registry::{assign_patterns, default_pattern_bits, PatternRegistry, RegistryError};
use crate::netmodel::{NodeId, NodeKind, PortClass, PortId, PortRef, Topology};
use crate::simkernel::{
    bits_to_string, Bus, EmissionState, OpticalConfig, OpticalPlane, SensorMode, SimTime, Trace,
};
use crate::tdc::{decode_stream, frame_len};

pub const REGISTRY_ADDR: &str = "registry";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("switch {0} has no aux source/sensor pair for aux mode")]
    MissingAuxPorts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub mode: SensorMode,
    pub transition_delay: u64,
    pub latency: u64,
    pub ttl: u64,
    /// Steps an aux source stays on one output before moving on.
    pub hold_steps: u64,
    /// Consecutive lit-but-undecodable steps before a decode timeout.
    pub decode_timeout: u64,
    pub max_steps: u64,
    pub pattern_bits: Option<u32>,
    pub trace: bool,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            mode: SensorMode::FullyMonitored,
            transition_delay: 1,
            latency: 0,
            ttl: 10_000,
            hold_steps: 16,
            decode_timeout: 50,
            max_steps: 10_000,
            pattern_bits: None,
            trace: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatternOutcome {
    pub success: bool,
    pub channels_per_step: Vec<u32>,
    pub completion_ticks: Option<u64>,
    pub false_positives: Vec<(PortRef, PortRef)>,
    pub messages: BTreeMap<String, u64>,
}

pub struct PatternSim {
    cfg: PatternConfig,
    topo: Arc<Topology>,
    plane: OpticalPlane,
    registry: PatternRegistry,
    bus: Bus<()>,
    tables: BTreeMap<NodeId, NeighborTable>,
    truth: BTreeSet<(PortRef, PortRef)>,
    /// Switch -> (output fed by the aux source, steps held).
    aux_source: HashMap<NodeId, (PortId, u64)>,
    /// Switch -> (input routed to the aux sensor, it was dark last step).
    aux_sensor: HashMap<NodeId, (PortId, bool)>,
    lit_fail: HashMap<PortRef, u64>,
    false_positives: Vec<(PortRef, PortRef)>,
    trace: Trace,
    now: SimTime,
    step: u64,
}

fn pref(node: &NodeId, port: &PortId) -> PortRef {
    PortRef {
        node: node.clone(),
        port: port.clone(),
    }
}

impl PatternSim {
    pub fn new(topo: Arc<Topology>, cfg: PatternConfig) -> Result<Self, PatternError> {
        let bits = cfg.pattern_bits.unwrap_or_else(|| default_pattern_bits(&topo));
        let full = assign_patterns(&topo, bits)?;
        let mut plane = OpticalPlane::new(
            topo.clone(),
            OpticalConfig {
                transition_delay: cfg.transition_delay,
                switch_port_emitters: cfg.mode == SensorMode::FullyMonitored,
            },
        );
        if cfg.mode == SensorMode::Aux {
            for sw in topo.switches() {
                if sw.aux_source().is_none() || sw.aux_sensor().is_none() {
                    return Err(PatternError::MissingAuxPorts(sw.id.to_string()));
                }
                plane.set_sensor_mode(&sw.id, SensorMode::Aux);
            }
        }
        let mut bus = Bus::new(cfg.latency);
        bus.register(REGISTRY_ADDR);
        for n in topo.nodes() {
            bus.register(n.id.as_str());
        }
        let truth = topo
            .channels()
            .iter()
            .map(|c| (c.src.clone(), c.dst.clone()))
            .collect();
        let mut sim = Self {
            registry: PatternRegistry::new(bits),
            trace: Trace::new(cfg.trace),
            cfg,
            topo,
            plane,
            bus,
            tables: BTreeMap::new(),
            truth,
            aux_source: HashMap::new(),
            aux_sensor: HashMap::new(),
            lit_fail: HashMap::new(),
            false_positives: Vec::new(),
            now: SimTime::ZERO,
            step: 0,
        };
        sim.announce_all(&full)?;
        Ok(sim)
    }

    /// Every node announces its outputs; sources first.
    fn announce_all(&mut self, full: &PatternRegistry) -> Result<(), PatternError> {
        let topo = self.topo.clone();
        let mut nodes: Vec<_> = topo.nodes().iter().collect();
        nodes.sort_by_key(|n| n.kind == NodeKind::Osw);
        for n in nodes {
            let ports: Vec<(PortId, u64)> = n
                .outputs()
                .filter_map(|p| full.value_of(&pref(&n.id, &p.id)).map(|v| (p.id.clone(), v)))
                .collect();
            if ports.is_empty() {
                continue;
            }
            self.message(n.id.as_str(), REGISTRY_ADDR, "ANNOUNCE", json!({ "ports": ports }));
            self.registry.announce(&n.id, &ports)?;
        }
        Ok(())
    }

    fn message(&mut self, from: &str, to: &str, kind: &str, payload: serde_json::Value) {
        self.trace.record(self.now, kind, from, json!({ "to": to, "body": payload }));
        self.bus
            .send(from, to, kind, (), self.now)
            .expect("all nodes are registered");
    }

    pub fn registry(&self) -> &PatternRegistry {
        &self.registry
    }

    pub fn tables(&self) -> &BTreeMap<NodeId, NeighborTable> {
        &self.tables
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn messages(&self) -> &BTreeMap<String, u64> {
        self.bus.counts()
    }

    fn step_len(&self) -> u64 {
        self.cfg.transition_delay + frame_len(self.registry.bits()) as u64 + 4 * self.cfg.latency + 2
    }

    fn has_entry(&self, p: &PortRef) -> bool {
        self.tables
            .get(&p.node)
            .is_some_and(|t| t.get(&p.port, self.now).is_some())
    }

    /// Live discovered channels as (source output, sink input), read from the
    /// source side.
    pub fn discovered(&self) -> BTreeSet<(PortRef, PortRef)> {
        self.tables
            .values()
            .flat_map(|t| t.entries())
            .filter(|e| e.expires_at >= self.now)
            .filter(|e| self.topo.port(&e.local).is_some_and(|p| p.dir == crate::netmodel::Direction::Output))
            .map(|e| (e.local.clone(), e.remote.clone()))
            .collect()
    }

    /// All live entries, both directions.
    pub fn entries(&self) -> Vec<NeighborEntry> {
        self.tables.values().flat_map(|t| t.entries().cloned()).collect()
    }

    /// Moves the clock to `t` and drops expired entries.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
        for (node, table) in self.tables.iter_mut() {
            for e in table.expire(self.now) {
                self.trace.record(
                    self.now,
                    "EXPIRED",
                    node.as_str(),
                    json!({ "local": e.local, "remote": e.remote }),
                );
            }
        }
    }

    /// Re-runs the notify/confirm handshake for the live entry on `local`
    /// (either end) and extends both sides. False if there is no live entry.
    pub fn refresh(&mut self, local: &PortRef) -> bool {
        let Some(e) = self.tables.get(&local.node).and_then(|t| t.get(&local.port, self.now)).cloned() else {
            return false;
        };
        let local_is_input = self
            .topo
            .port(&e.local)
            .is_some_and(|p| p.dir == crate::netmodel::Direction::Input);
        let (sink, src) = if local_is_input { (e.local, e.remote) } else { (e.remote, e.local) };
        self.message(
            sink.node.as_str(),
            src.node.as_str(),
            "NOTIFY",
            json!({ "pattern": e.pattern, "node": sink.node, "port": sink.port }),
        );
        self.message(src.node.as_str(), sink.node.as_str(), "CONFIRM", json!({ "pattern": e.pattern }));
        let expires_at = self.now + 2 * self.cfg.latency + self.cfg.ttl;
        for (a, b) in [(&sink, &src), (&src, &sink)] {
            self.tables.entry(a.node.clone()).or_default().insert(NeighborEntry {
                local: a.clone(),
                remote: b.clone(),
                pattern: e.pattern.clone(),
                expires_at,
            });
        }
        true
    }

    /// Runs steps until every channel is discovered or the step budget is
    /// spent.
    pub fn run(&mut self) -> PatternOutcome {
        let mut per_step = Vec::new();
        let mut completion = None;
        let start = self.now;
        let start_msgs = self.bus.counts().clone();
        for _ in 0..self.cfg.max_steps {
            if self.discovered() == self.truth {
                completion = Some(self.now - start);
                break;
            }
            per_step.push(self.do_step());
        }
        if completion.is_none() && self.discovered() == self.truth {
            completion = Some(self.now - start);
        }
        let mut messages = self.bus.counts().clone();
        for (k, v) in start_msgs {
            *messages.get_mut(&k).expect("counts only grow") -= v;
        }
        PatternOutcome {
            success: completion.is_some() && self.false_positives.is_empty(),
            channels_per_step: per_step,
            completion_ticks: completion,
            false_positives: self.false_positives.clone(),
            messages,
        }
    }

    fn do_step(&mut self) -> u32 {
        let s = self.now;
        self.step += 1;
        self.trace.record(s, "STEP", "world", json!({ "step": self.step }));
        let delay = self.cfg.transition_delay;
        let n = frame_len(self.registry.bits()) as u64;

        let outputs: Vec<(PortRef, PortClass)> = self
            .topo
            .emitting_outputs()
            .into_iter()
            .map(|p| {
                let c = self.topo.class_of(&p).expect("known port");
                (p, c)
            })
            .collect();
        for (p, class) in &outputs {
            if self.has_entry(p) {
                continue;
            }
            let transmit = match class {
                PortClass::S => true,
                _ => {
                    self.cfg.mode == SensorMode::FullyMonitored
                        && self
                            .topo
                            .node(&p.node)
                            .expect("switch")
                            .inputs()
                            .any(|i| self.has_entry(&pref(&p.node, &i.id)))
                }
            };
            if transmit {
                let bits = self.registry.frame(p).expect("announced");
                self.plane.set_pattern(p, &bits, 1, s).expect("emitter");
            }
        }
        if self.cfg.mode == SensorMode::Aux {
            self.schedule_aux(s);
        }

        // Decode one frame on every input that can see.
        let window = (s + delay, s + delay + n);
        self.now = window.1;
        let inputs: Vec<PortRef> = self
            .topo
            .nodes()
            .iter()
            .flat_map(|nd| nd.inputs().map(move |p| pref(&nd.id, &p.id)))
            .collect();
        let mut found = 0;
        for inp in inputs {
            if self.has_entry(&inp) {
                continue;
            }
            let Ok(obs) = self.plane.sense(&inp, window.0, window.1) else {
                continue;
            };
            let mut bits = vec![false; n as usize];
            for o in &obs {
                for t in o.rise.ticks()..o.fall.ticks() {
                    bits[(t - window.0.ticks()) as usize] = true;
                }
            }
            let lit = !obs.is_empty();
            if let Some(sw) = self.aux_sensor.get_mut(&inp.node) {
                if sw.0 == inp.port {
                    sw.1 = !lit;
                }
            }
            let decoded = decode_stream(&bits, self.registry.bits());
            if decoded.is_empty() {
                if lit {
                    let c = self.lit_fail.entry(inp.clone()).or_default();
                    *c += 1;
                    if *c == self.cfg.decode_timeout {
                        self.trace.record(self.now, "DECODE_TIMEOUT", inp.node.as_str(), json!({ "port": inp }));
                    }
                }
                continue;
            }
            self.lit_fail.remove(&inp);
            let value = decoded[0].1;
            let pattern = bits_to_string(&bits);
            self.message(inp.node.as_str(), REGISTRY_ADDR, "LOOKUP_REQ", json!({ "pattern": pattern }));
            let Some(src) = self.registry.lookup(value).cloned() else {
                self.message(REGISTRY_ADDR, inp.node.as_str(), "LOOKUP_REPLY", json!({ "pattern": pattern, "found": null }));
                self.trace.record(self.now, "UNKNOWN_PATTERN", inp.node.as_str(), json!({ "port": inp, "pattern": pattern }));
                continue;
            };
            self.message(REGISTRY_ADDR, inp.node.as_str(), "LOOKUP_REPLY", json!({ "pattern": pattern, "found": src }));
            self.message(
                inp.node.as_str(),
                src.node.as_str(),
                "NOTIFY",
                json!({ "pattern": pattern, "node": inp.node, "port": inp.port }),
            );
            self.message(src.node.as_str(), inp.node.as_str(), "CONFIRM", json!({ "pattern": pattern }));
            let at = self.now + 4 * self.cfg.latency;
            let expires_at = at + self.cfg.ttl;
            self.tables.entry(inp.node.clone()).or_default().insert(NeighborEntry {
                local: inp.clone(),
                remote: src.clone(),
                pattern: pattern.clone(),
                expires_at,
            });
            self.tables.entry(src.node.clone()).or_default().insert(NeighborEntry {
                local: src.clone(),
                remote: inp.clone(),
                pattern,
                expires_at,
            });
            let pair = (src.clone(), inp.clone());
            if !self.truth.contains(&pair) {
                self.false_positives.push(pair.clone());
            }
            self.trace.record(at, "NEIGHBOR", inp.node.as_str(), json!({ "src": src, "dst": inp }));
            found += 1;
        }
        self.now = s + self.step_len();
        found
    }

    /// Points each switch's aux source at one output and its aux sensor at
    /// one input for this step.
    fn schedule_aux(&mut self, s: SimTime) {
        let switches: Vec<_> = self.topo.switches().cloned().collect();
        for sw in switches {
            let src = sw.aux_source().expect("checked").id.clone();
            let sensor = sw.aux_sensor().expect("checked").id.clone();

            let open_out: Vec<PortId> = sw
                .outputs()
                .map(|p| p.id.clone())
                .filter(|o| !self.has_entry(&pref(&sw.id, o)))
                .collect();
            let cur = self.aux_source.get(&sw.id).cloned();
            let pick = match cur {
                Some((o, held)) if open_out.contains(&o) && held < self.cfg.hold_steps => Some((o, held)),
                Some((o, _)) => next_after(&sw.outputs().map(|p| p.id.clone()).collect::<Vec<_>>(), &o, &open_out)
                    .map(|n| (n, 0)),
                None => open_out.first().cloned().map(|o| (o, 0)),
            };
            match pick {
                Some((o, held)) => {
                    let frame = self.registry.frame(&pref(&sw.id, &o)).expect("announced");
                    self.plane.set_switch_route(&sw.id, &src, &o, s).expect("aux route");
                    self.plane.set_pattern(&pref(&sw.id, &src), &frame, 1, s).expect("aux emitter");
                    self.trace.record(s, "AUX_SOURCE", sw.id.as_str(), json!({ "output": o, "step": self.step }));
                    self.aux_source.insert(sw.id.clone(), (o, held + 1));
                }
                None => {
                    if let Some((o, _)) = self.aux_source.remove(&sw.id) {
                        self.plane.clear_switch_route(&sw.id, &o, s).expect("aux route");
                    }
                    self.plane
                        .set_emission(&pref(&sw.id, &src), EmissionState::Off, s)
                        .expect("aux emitter");
                }
            }

            let open_in: Vec<PortId> = sw
                .inputs()
                .map(|p| p.id.clone())
                .filter(|i| !self.has_entry(&pref(&sw.id, i)))
                .collect();
            let cur = self.aux_sensor.get(&sw.id).cloned();
            let pick = match cur {
                Some((i, false)) if open_in.contains(&i) => Some(i),
                Some((i, _)) => next_after(&sw.inputs().map(|p| p.id.clone()).collect::<Vec<_>>(), &i, &open_in),
                None => open_in.first().cloned(),
            };
            match pick {
                Some(i) => {
                    self.plane.set_switch_route(&sw.id, &i, &sensor, s).expect("sensor route");
                    self.trace.record(s, "AUX_SENSE", sw.id.as_str(), json!({ "input": i, "step": self.step }));
                    self.aux_sensor.insert(sw.id.clone(), (i, false));
                }
                None => {
                    if self.aux_sensor.remove(&sw.id).is_some() {
                        self.plane.clear_switch_route(&sw.id, &sensor, s).expect("sensor route");
                    }
                }
            }
        }
    }
}

/// First member of `open` after `cur` in `order`, wrapping around.
fn next_after(order: &[PortId], cur: &PortId, open: &[PortId]) -> Option<PortId> {
    let start = order.iter().position(|p| p == cur).map_or(0, |i| i + 1);
    (0..order.len())
        .map(|k| &order[(start + k) % order.len()])
        .find(|p| open.contains(p))
        .cloned()
}

pub fn run_pattern(topo: Arc<Topology>, cfg: PatternConfig) -> Result<(PatternOutcome, PatternSim), PatternError> {
    let mut sim = PatternSim::new(topo, cfg)?;
    let out = sim.run();
    Ok((out, sim))
}

//! The optical plane: what light is present at each input port.
//!
//! Every controllable emitter has a timeline of drive states, and every
//! switch output has a timeline of which input feeds it. `light_at` walks a
//! channel backwards through switch routes to the emitting port; it reads
//! only timelines, so it is a pure function of the recorded commands.
//! Propagation delay is zero.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{SimError, SimTime};
use crate::netmodel::{Direction, NodeId, NodeKind, PortClass, PortId, PortRef, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionState {
    On,
    Off,
}

/// What an emitter is doing from some instant on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Drive {
    Off,
    On,
    /// Repeats `bits` back to back, one bit per `bit_ticks`, starting at `start`.
    Pattern {
        start: SimTime,
        bit_ticks: u64,
        bits: Arc<[bool]>,
    },
}

impl Drive {
    fn level(&self, t: SimTime) -> bool {
        match self {
            Drive::Off => false,
            Drive::On => true,
            Drive::Pattern {
                start,
                bit_ticks,
                bits,
            } => {
                if t < *start || bits.is_empty() {
                    return false;
                }
                let k = (t - *start) / bit_ticks;
                bits[(k % bits.len() as u64) as usize]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Timeline<T> {
    changes: Vec<(SimTime, T)>,
}

impl<T> Default for Timeline<T> {
    fn default() -> Self {
        Self {
            changes: Vec::new(),
        }
    }
}

impl<T> Timeline<T> {
    /// Installs `value` from `at` onward, discarding anything scheduled later.
    fn set(&mut self, at: SimTime, value: T) {
        let keep = self.changes.partition_point(|(t, _)| *t < at);
        self.changes.truncate(keep);
        self.changes.push((at, value));
    }

    fn at(&self, t: SimTime) -> Option<&T> {
        let i = self.changes.partition_point(|(c, _)| *c <= t);
        if i == 0 {
            None
        } else {
            Some(&self.changes[i - 1].1)
        }
    }

    fn last(&self) -> Option<&T> {
        self.changes.last().map(|(_, v)| v)
    }
}

/// How a switch senses light on its T-type inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    /// Every input port has its own light sensor.
    #[default]
    FullyMonitored,
    /// A single sensor hangs off the aux output; only the input currently
    /// routed to it can be observed.
    Aux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// Ticks between a shutter command and the light actually changing.
    pub transition_delay: u64,
    /// Lets switch outputs carry their own modulated emitter.
    pub switch_port_emitters: bool,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            transition_delay: 1,
            switch_port_emitters: false,
        }
    }
}

/// A maximal interval `[rise, fall)` of light on an input port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseObservation {
    pub port: PortRef,
    pub rise: SimTime,
    pub fall: SimTime,
}

impl PulseObservation {
    pub fn duration(&self) -> u64 {
        self.fall - self.rise
    }
}

pub struct OpticalPlane {
    topo: Arc<Topology>,
    config: OpticalConfig,
    emitters: HashMap<PortRef, Timeline<Drive>>,
    /// Per switch output: which input feeds it.
    routes: HashMap<PortRef, Timeline<Option<PortId>>>,
    /// Latest route state per switch, input -> output.
    current_by_input: HashMap<PortRef, PortId>,
    detectors: Vec<Timeline<Drive>>,
    detector_index: HashMap<(NodeId, String), usize>,
    sensor_modes: HashMap<NodeId, SensorMode>,
}

impl OpticalPlane {
    pub fn new(topo: Arc<Topology>, config: OpticalConfig) -> Self {
        let detector_index = topo
            .tdc()
            .wires
            .iter()
            .enumerate()
            .map(|(i, w)| ((w.node.clone(), w.detector.clone()), i))
            .collect();
        let detectors = vec![Timeline::default(); topo.tdc().wires.len()];
        Self {
            topo,
            config,
            emitters: HashMap::new(),
            routes: HashMap::new(),
            current_by_input: HashMap::new(),
            detectors,
            detector_index,
            sensor_modes: HashMap::new(),
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    pub fn set_sensor_mode(&mut self, switch: &NodeId, mode: SensorMode) {
        self.sensor_modes.insert(switch.clone(), mode);
    }

    pub fn sensor_mode(&self, switch: &NodeId) -> SensorMode {
        self.sensor_modes.get(switch).copied().unwrap_or_default()
    }

    fn check_emitter(&self, port: &PortRef) -> Result<(), SimError> {
        let node = self
            .topo
            .node(&port.node)
            .ok_or_else(|| SimError::UnknownPort(port.clone()))?;
        let p = node
            .port(&port.port)
            .ok_or_else(|| SimError::UnknownPort(port.clone()))?;
        let ok = match (node.kind, p.dir, p.aux) {
            (NodeKind::Osw, Direction::Input, true) => true,
            (NodeKind::Osw, Direction::Output, false) => self.config.switch_port_emitters,
            (kind, dir, false) => crate::netmodel::port_class(kind, dir) == Some(PortClass::S),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::NotAnOutput(port.clone()))
        }
    }

    /// Switches an emitter on or off; light follows after the transition delay.
    pub fn set_emission(
        &mut self,
        port: &PortRef,
        state: EmissionState,
        at: SimTime,
    ) -> Result<(), SimError> {
        self.check_emitter(port)?;
        let drive = match state {
            EmissionState::On => Drive::On,
            EmissionState::Off => Drive::Off,
        };
        let eff = at + self.config.transition_delay;
        self.emitters.entry(port.clone()).or_default().set(eff, drive);
        Ok(())
    }

    /// Starts repeating `bits` on an emitter, one bit per `bit_ticks`.
    pub fn set_pattern(
        &mut self,
        port: &PortRef,
        bits: &[bool],
        bit_ticks: u64,
        at: SimTime,
    ) -> Result<(), SimError> {
        self.check_emitter(port)?;
        let start = at + self.config.transition_delay;
        self.emitters.entry(port.clone()).or_default().set(
            start,
            Drive::Pattern {
                start,
                bit_ticks: bit_ticks.max(1),
                bits: bits.into(),
            },
        );
        Ok(())
    }

    fn detector_idx(&self, node: &NodeId, detector: &str) -> Result<usize, SimError> {
        self.detector_index
            .get(&(node.clone(), detector.to_string()))
            .copied()
            .ok_or_else(|| SimError::UnknownDetector(format!("{node}/{detector}")))
    }

    /// Drives the light reaching a node's detector (its SNSPD feed).
    pub fn set_detector_drive(
        &mut self,
        node: &NodeId,
        detector: &str,
        drive: Drive,
        at: SimTime,
    ) -> Result<(), SimError> {
        let i = self.detector_idx(node, detector)?;
        let eff = at + self.config.transition_delay;
        let drive = match drive {
            Drive::Pattern {
                bit_ticks, bits, ..
            } => Drive::Pattern {
                start: eff,
                bit_ticks: bit_ticks.max(1),
                bits,
            },
            d => d,
        };
        self.detectors[i].set(eff, drive);
        Ok(())
    }

    /// Light at the detector with index `wire` in the topology's TDC wiring.
    pub fn detector_light(&self, wire: usize, t: SimTime) -> bool {
        self.detectors[wire].at(t).is_some_and(|d| d.level(t))
    }

    fn switch_port(&self, switch: &NodeId, port: &PortId, dir: Direction) -> Result<(), SimError> {
        let bad = || SimError::PortNotOnSwitch {
            switch: switch.to_string(),
            port: port.to_string(),
        };
        let node = self.topo.node(switch).ok_or_else(bad)?;
        if node.kind != NodeKind::Osw {
            return Err(bad());
        }
        match node.port(port) {
            Some(p) if p.dir == dir => Ok(()),
            _ => Err(bad()),
        }
    }

    /// Connects `in_port` to `out_port` inside `switch`, displacing any
    /// route that used either port.
    pub fn set_switch_route(
        &mut self,
        switch: &NodeId,
        in_port: &PortId,
        out_port: &PortId,
        at: SimTime,
    ) -> Result<(), SimError> {
        self.switch_port(switch, in_port, Direction::Input)?;
        self.switch_port(switch, out_port, Direction::Output)?;
        let in_ref = PortRef {
            node: switch.clone(),
            port: in_port.clone(),
        };
        let out_ref = PortRef {
            node: switch.clone(),
            port: out_port.clone(),
        };
        if let Some(old_out) = self.current_by_input.get(&in_ref).cloned() {
            if &old_out != out_port {
                self.clear_route_inner(switch, &old_out, at);
            }
        }
        if let Some(Some(old_in)) = self.routes.get(&out_ref).and_then(|t| t.last()).cloned() {
            self.current_by_input.remove(&PortRef {
                node: switch.clone(),
                port: old_in,
            });
        }
        self.routes
            .entry(out_ref)
            .or_default()
            .set(at, Some(in_port.clone()));
        self.current_by_input.insert(in_ref, out_port.clone());
        Ok(())
    }

    /// Removes whatever route feeds `out_port`.
    pub fn clear_switch_route(
        &mut self,
        switch: &NodeId,
        out_port: &PortId,
        at: SimTime,
    ) -> Result<(), SimError> {
        self.switch_port(switch, out_port, Direction::Output)?;
        self.clear_route_inner(switch, out_port, at);
        Ok(())
    }

    fn clear_route_inner(&mut self, switch: &NodeId, out_port: &PortId, at: SimTime) {
        let out_ref = PortRef {
            node: switch.clone(),
            port: out_port.clone(),
        };
        if let Some(tl) = self.routes.get_mut(&out_ref) {
            if let Some(Some(old_in)) = tl.last().cloned() {
                self.current_by_input.remove(&PortRef {
                    node: switch.clone(),
                    port: old_in,
                });
            }
            tl.set(at, None);
        }
    }

    /// Input feeding `out` at time `t`, if any.
    pub fn route_at(&self, out: &PortRef, t: SimTime) -> Option<&PortId> {
        self.routes.get(out)?.at(t)?.as_ref()
    }

    /// Output currently fed by `input` under the most recent commands.
    pub fn current_route_from(&self, input: &PortRef) -> Option<&PortId> {
        self.current_by_input.get(input)
    }

    fn emitter_level(&self, port: &PortRef, t: SimTime) -> bool {
        self.emitters
            .get(port)
            .and_then(|tl| tl.at(t))
            .is_some_and(|d| d.level(t))
    }

    /// Light leaving output `out` at time `t`.
    pub fn light_from(&self, out: &PortRef, t: SimTime) -> bool {
        let Some(kind) = self.topo.kind_of(&out.node) else {
            return false;
        };
        if kind != NodeKind::Osw {
            return self.emitter_level(out, t);
        }
        let own = self.config.switch_port_emitters && self.emitter_level(out, t);
        own || self.route_at(out, t).is_some_and(|inp| {
            self.light_at(
                &PortRef {
                    node: out.node.clone(),
                    port: inp.clone(),
                },
                t,
            )
        })
    }

    /// Light arriving at input `port` at time `t`.
    pub fn light_at(&self, port: &PortRef, t: SimTime) -> bool {
        if let Some(p) = self.topo.port(port) {
            if p.aux && p.dir == Direction::Input {
                return self.emitter_level(port, t);
            }
        }
        match self.topo.channel_into(port) {
            Some(c) => self.light_from(&c.src, t),
            None => false,
        }
    }

    /// Whether `port` can be observed at time `t`.
    pub fn has_sensor(&self, port: &PortRef, t: SimTime) -> Result<bool, SimError> {
        let node = self
            .topo
            .node(&port.node)
            .ok_or_else(|| SimError::UnknownPort(port.clone()))?;
        let p = node
            .port(&port.port)
            .ok_or_else(|| SimError::UnknownPort(port.clone()))?;
        if p.dir != Direction::Input || p.aux {
            return Ok(false);
        }
        Ok(match node.kind {
            NodeKind::Osw => match self.sensor_mode(&node.id) {
                SensorMode::FullyMonitored => true,
                SensorMode::Aux => node.aux_sensor().is_some_and(|s| {
                    self.route_at(
                        &PortRef {
                            node: node.id.clone(),
                            port: s.id.clone(),
                        },
                        t,
                    ) == Some(&port.port)
                }),
            },
            _ => true,
        })
    }

    /// Maximal on-intervals of light at `port` clipped to `[from, to)`.
    ///
    /// An aux-mode switch input must be routed to the aux sensor at `from`;
    /// ticks where the route has moved elsewhere read as dark.
    pub fn sense(
        &self,
        port: &PortRef,
        from: SimTime,
        to: SimTime,
    ) -> Result<Vec<PulseObservation>, SimError> {
        if !self.has_sensor(port, from)? {
            return Err(SimError::NoSensor(port.clone()));
        }
        let mut out = Vec::new();
        let mut rise = None;
        let mut t = from;
        while t < to {
            let lit = self.has_sensor(port, t)? && self.light_at(port, t);
            match (lit, rise) {
                (true, None) => rise = Some(t),
                (false, Some(r)) => {
                    out.push(PulseObservation {
                        port: port.clone(),
                        rise: r,
                        fall: t,
                    });
                    rise = None;
                }
                _ => {}
            }
            t += 1;
        }
        if let Some(r) = rise {
            out.push(PulseObservation {
                port: port.clone(),
                rise: r,
                fall: to,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::load_topology;

    fn chain() -> Arc<Topology> {
        Arc::new(
            load_topology(
                r#"
[[nodes]]
id = "e"
kind = "EPPS"
ports = [{ id = "o", dir = "out" }]
[[nodes]]
id = "w1"
kind = "OSW"
ports = [{ id = "i1", dir = "in" }, { id = "o1", dir = "out" }, { id = "o2", dir = "out" }, { id = "o3", dir = "out" }, { id = "ax", dir = "in", aux = true }, { id = "as", dir = "out", aux = true }]
[[nodes]]
id = "w2"
kind = "OSW"
ports = [{ id = "i1", dir = "in" }, { id = "o1", dir = "out" }]
[[nodes]]
id = "m"
kind = "MEAS"
ports = [{ id = "i", dir = "in" }, { id = "j", dir = "in" }]
[[channels]]
src = "e.o"
dst = "w1.i1"
[[channels]]
src = "w1.o1"
dst = "m.i"
[[channels]]
src = "w1.o2"
dst = "w2.i1"
[[channels]]
src = "w2.o1"
dst = "m.j"
"#,
            )
            .unwrap(),
        )
    }

    fn pr(s: &str) -> PortRef {
        PortRef::parse(s).unwrap()
    }

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn pid(s: &str) -> PortId {
        PortId::new(s)
    }

    #[test]
    fn emission_delay_shifts_rise() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig::default());
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("o1"), SimTime(0)).unwrap();
        o.set_emission(&pr("e.o"), EmissionState::On, SimTime(5)).unwrap();
        let obs = o.sense(&pr("m.i"), SimTime(0), SimTime(10)).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].rise, SimTime(6));
    }

    #[test]
    fn pulse_duration() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig { transition_delay: 0, ..Default::default() });
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("o1"), SimTime(0)).unwrap();
        o.set_emission(&pr("e.o"), EmissionState::On, SimTime(5)).unwrap();
        o.set_emission(&pr("e.o"), EmissionState::Off, SimTime(8)).unwrap();
        let obs = o.sense(&pr("m.i"), SimTime(0), SimTime(20)).unwrap();
        assert_eq!(obs, vec![PulseObservation { port: pr("m.i"), rise: SimTime(5), fall: SimTime(8) }]);
        assert_eq!(obs[0].duration(), 3);
        assert!(o.sense(&pr("m.j"), SimTime(0), SimTime(20)).unwrap().is_empty());
    }

    #[test]
    fn redundant_on_adds_no_edge() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig::default());
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("o1"), SimTime(0)).unwrap();
        o.set_emission(&pr("e.o"), EmissionState::On, SimTime(1)).unwrap();
        o.set_emission(&pr("e.o"), EmissionState::On, SimTime(4)).unwrap();
        assert_eq!(o.sense(&pr("m.i"), SimTime(0), SimTime(10)).unwrap().len(), 1);
    }

    #[test]
    fn not_an_output() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig::default());
        assert!(matches!(
            o.set_emission(&pr("m.i"), EmissionState::On, SimTime(0)),
            Err(SimError::NotAnOutput(_))
        ));
        assert!(matches!(
            o.set_emission(&pr("w1.o1"), EmissionState::On, SimTime(0)),
            Err(SimError::NotAnOutput(_))
        ));
        assert!(o.set_emission(&pr("w1.ax"), EmissionState::On, SimTime(0)).is_ok());
    }

    #[test]
    fn last_route_wins() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig::default());
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("o2"), SimTime(0)).unwrap();
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("o3"), SimTime(1)).unwrap();
        assert_eq!(o.route_at(&pr("w1.o2"), SimTime(2)), None);
        assert_eq!(o.route_at(&pr("w1.o3"), SimTime(2)), Some(&pid("i1")));
        assert_eq!(o.current_route_from(&pr("w1.i1")), Some(&pid("o3")));
        assert!(matches!(
            o.set_switch_route(&id("w1"), &pid("o1"), &pid("o2"), SimTime(2)),
            Err(SimError::PortNotOnSwitch { .. })
        ));
    }

    #[test]
    fn two_factor_truth_table() {
        for emit in [false, true] {
            for route in [false, true] {
                let mut o = OpticalPlane::new(chain(), OpticalConfig { transition_delay: 0, ..Default::default() });
                if emit {
                    o.set_emission(&pr("e.o"), EmissionState::On, SimTime(0)).unwrap();
                }
                if route {
                    o.set_switch_route(&id("w1"), &pid("i1"), &pid("o1"), SimTime(0)).unwrap();
                }
                assert_eq!(o.light_at(&pr("m.i"), SimTime(1)), emit && route);
            }
        }
    }

    #[test]
    fn chained_switches_need_both_routes() {
        for r1 in [false, true] {
            for r2 in [false, true] {
                let mut o = OpticalPlane::new(chain(), OpticalConfig { transition_delay: 0, ..Default::default() });
                o.set_emission(&pr("e.o"), EmissionState::On, SimTime(0)).unwrap();
                if r1 {
                    o.set_switch_route(&id("w1"), &pid("i1"), &pid("o2"), SimTime(0)).unwrap();
                }
                if r2 {
                    o.set_switch_route(&id("w2"), &pid("i1"), &pid("o1"), SimTime(0)).unwrap();
                }
                assert_eq!(o.light_at(&pr("m.j"), SimTime(0)), r1 && r2);
            }
        }
    }

    #[test]
    fn aux_mode_requires_sensor_route() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig::default());
        o.set_sensor_mode(&id("w1"), SensorMode::Aux);
        assert!(matches!(
            o.sense(&pr("w1.i1"), SimTime(0), SimTime(3)),
            Err(SimError::NoSensor(_))
        ));
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("as"), SimTime(0)).unwrap();
        o.set_emission(&pr("e.o"), EmissionState::On, SimTime(0)).unwrap();
        let obs = o.sense(&pr("w1.i1"), SimTime(0), SimTime(3)).unwrap();
        assert_eq!(obs[0].rise, SimTime(1));
    }

    #[test]
    fn pattern_drive_repeats() {
        let mut o = OpticalPlane::new(chain(), OpticalConfig::default());
        o.set_switch_route(&id("w1"), &pid("i1"), &pid("o1"), SimTime(0)).unwrap();
        o.set_pattern(&pr("e.o"), &[false, true], 1, SimTime(0)).unwrap();
        let seen: Vec<bool> = (1..7).map(|t| o.light_at(&pr("m.i"), SimTime(t))).collect();
        assert_eq!(seen, [false, true, false, true, false, true]);
    }
}

//! Round-synchronised pub/sub discovery.
//!
//! A round starts at `R`. Every eligible unconfigured output draws an
//! offset and duration, pulses once and announces it on `channel/active`.
//! At `M`, after every announced pulse has ended, unconfigured inputs report
//! what they saw on `channel/detect` and pick candidates. Sinks then verify
//! one candidate each through a private two-pulse re-test in a shared
//! window `[V0, V1)`. At `E` newly configured sources go steady and
//! switches re-park routes that feed downstream switches.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::messages::{filter_extract, ActiveMsg, PulseMsg, VerifyMsg, TOPIC_ACTIVE, TOPIC_DETECT};
use super::schedule::{backoff_update, Conflict, Schedule};
use crate::netmodel::{NodeId, NodeKind, PortClass, PortId, PortRef, Topology};
use crate::simkernel::{
    Bus, EmissionState, Kernel, OpticalConfig, OpticalPlane, PulseObservation, SensorMode, SimTime, Trace,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PubsubError {
    #[error("pub/sub discovery needs monitored switch inputs; aux sensor mode is not supported")]
    AuxModeUnsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PubsubConfig {
    pub t_init: u64,
    pub d_init: u64,
    pub t_max: u64,
    pub delta: u64,
    pub quiet: u64,
    pub transition_delay: u64,
    pub latency: u64,
    /// Matching tolerance; defaults to the transition delay.
    pub tolerance: Option<u64>,
    pub max_verify_tries: u32,
    pub halt_ticks: u64,
    pub sensor_mode: SensorMode,
    pub budget: u64,
    pub seed: u64,
    pub trace: bool,
}

impl Default for PubsubConfig {
    fn default() -> Self {
        Self {
            t_init: 16,
            d_init: 8,
            t_max: 256,
            delta: 1,
            quiet: 32,
            transition_delay: 1,
            latency: 0,
            tolerance: None,
            max_verify_tries: 3,
            halt_ticks: 256,
            sensor_mode: SensorMode::FullyMonitored,
            budget: 100_000,
            seed: 0,
            trace: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PubsubOutcome {
    pub success: bool,
    /// Configured channels as (source output, sink input).
    pub configured: BTreeSet<(PortRef, PortRef)>,
    pub false_positives: Vec<(PortRef, PortRef)>,
    /// Switch outputs configured while no input of their switch was.
    pub phase_order_violations: Vec<PortRef>,
    pub completion_ticks: Option<u64>,
    pub rounds: u64,
    pub end_time: SimTime,
    pub messages: BTreeMap<String, u64>,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
struct OutPort {
    class: PortClass,
    sched: Schedule,
    halted_until: SimTime,
    last_coincidence: SimTime,
    peer: Option<PortRef>,
    /// This round: announced pulse, switch input lent to it, verify served.
    pulse: Option<(SimTime, u64)>,
    lent_input: Option<PortId>,
    serving: Option<PortRef>,
}

#[derive(Debug, Clone, Default)]
struct InPort {
    peer: Option<PortRef>,
    candidates: Vec<PortRef>,
    plan: Option<(PortRef, Vec<(SimTime, u64)>)>,
    tries: u32,
}

#[derive(Debug, Clone)]
enum Msg {
    Pulse(#[allow(dead_code)] PulseMsg),
    Verify(VerifyMsg),
}

struct World {
    cfg: PubsubConfig,
    tol: u64,
    topo: Arc<Topology>,
    plane: OpticalPlane,
    rng: ChaCha8Rng,
    bus: Bus<Msg>,
    outs: BTreeMap<PortRef, OutPort>,
    ins: BTreeMap<PortRef, InPort>,
    parked: HashMap<NodeId, Vec<(PortId, PortId)>>,
    switch_order: Vec<NodeId>,
    truth: BTreeSet<(PortRef, PortRef)>,
    configured: BTreeSet<(PortRef, PortRef)>,
    false_positives: Vec<(PortRef, PortRef)>,
    phase_violations: Vec<PortRef>,
    trace: Trace,
    round: u64,
}

fn sw_ref(node: &NodeId, port: &PortId) -> PortRef {
    PortRef {
        node: node.clone(),
        port: port.clone(),
    }
}

impl World {
    fn new(topo: Arc<Topology>, cfg: PubsubConfig) -> Self {
        let plane = OpticalPlane::new(
            topo.clone(),
            OpticalConfig {
                transition_delay: cfg.transition_delay,
                switch_port_emitters: false,
            },
        );
        let mut bus = Bus::new(cfg.latency);
        for n in topo.nodes() {
            bus.subscribe(n.id.as_str(), TOPIC_ACTIVE);
            bus.subscribe(n.id.as_str(), TOPIC_DETECT);
        }
        let mut outs = BTreeMap::new();
        let mut ins = BTreeMap::new();
        for n in topo.nodes() {
            for p in n.outputs() {
                let r = sw_ref(&n.id, &p.id);
                let class = topo.class_of(&r).expect("known port");
                outs.insert(
                    r,
                    OutPort {
                        class,
                        sched: Schedule::new(cfg.t_init, cfg.d_init, cfg.t_max, cfg.delta),
                        halted_until: SimTime::ZERO,
                        last_coincidence: SimTime::ZERO,
                        peer: None,
                        pulse: None,
                        lent_input: None,
                        serving: None,
                    },
                );
            }
            for p in n.inputs() {
                ins.insert(sw_ref(&n.id, &p.id), InPort::default());
            }
        }
        let truth = topo
            .channels()
            .iter()
            .map(|c| (c.src.clone(), c.dst.clone()))
            .collect();
        Self {
            tol: cfg.tolerance.unwrap_or(cfg.transition_delay),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            switch_order: topo.switch_order(),
            cfg,
            topo,
            plane,
            bus,
            outs,
            ins,
            parked: HashMap::new(),
            truth,
            configured: BTreeSet::new(),
            false_positives: Vec::new(),
            phase_violations: Vec::new(),
            trace: Trace::new(cfg.trace),
            round: 0,
        }
    }

    fn publish(&mut self, topic: &str, m: PulseMsg, at: SimTime) {
        self.trace.record(
            at,
            if topic == TOPIC_ACTIVE { "ACTIVE" } else { "DETECT" },
            &m.node_id,
            serde_json::to_value(&m).expect("serializable"),
        );
        let from = m.node_id.clone();
        self.bus.publish(&from, topic, Msg::Pulse(m), at);
    }

    fn send(&mut self, kernel: &mut Kernel<VerifyMsg>, to: &NodeId, m: VerifyMsg, at: SimTime) {
        let from = match &m {
            VerifyMsg::VerifyReq { sink, .. } | VerifyMsg::VerifyResult { sink, .. } => sink.node.clone(),
            VerifyMsg::VerifyPlan { source, .. } | VerifyMsg::Busy { source, .. } | VerifyMsg::Nack { source, .. } => {
                source.node.clone()
            }
        };
        self.trace.record(
            at,
            m.kind(),
            from.as_str(),
            serde_json::to_value(&m).expect("serializable"),
        );
        let env = self
            .bus
            .send(from.as_str(), to.as_str(), m.kind(), Msg::Verify(m), at)
            .expect("every node is registered");
        if let Msg::Verify(m) = env.msg {
            kernel.schedule(env.deliver_at, m).expect("not in the past");
        }
    }

    fn is_lit_free_input(&self, sw: &NodeId, inp: &PortId, t: SimTime) -> bool {
        let r = sw_ref(sw, inp);
        self.ins.get(&r).is_some_and(|p| p.peer.is_some())
            && !self
                .parked
                .get(sw)
                .is_some_and(|v| v.iter().any(|(_, i)| i == inp))
            && self.plane.light_at(&r, t)
    }

    /// Runs one round starting at `r`; returns the next round's start.
    fn round(&mut self, r: SimTime) -> (SimTime, SimTime) {
        let delay = self.cfg.transition_delay;
        let lat = self.cfg.latency;
        self.trace.record(r, "ROUND", "world", json!({ "round": self.round }));
        for o in self.outs.values_mut() {
            o.pulse = None;
            o.lent_input = None;
            o.serving = None;
        }

        // Which switch inputs may drive which outputs this round.
        let order = self.switch_order.clone();
        for sw in &order {
            let node = self.topo.node(sw).expect("switch exists").clone();
            let mut free: Vec<PortId> = node
                .inputs()
                .map(|p| p.id.clone())
                .filter(|i| self.is_lit_free_input(sw, i, r))
                .collect();
            let mut wanting: Vec<PortId> = node
                .outputs()
                .map(|p| p.id.clone())
                .filter(|o| {
                    let st = &self.outs[&sw_ref(sw, o)];
                    st.peer.is_none() && st.halted_until <= r
                })
                .collect();
            if !wanting.is_empty() {
                let k = self.round as usize % wanting.len();
                wanting.rotate_left(k);
            }
            free.reverse();
            for o in wanting {
                let Some(i) = free.pop() else { break };
                self.outs.get_mut(&sw_ref(sw, &o)).expect("output").lent_input = Some(i);
            }
        }

        // Activation.
        let mut actives: Vec<ActiveMsg> = Vec::new();
        let keys: Vec<PortRef> = self.outs.keys().cloned().collect();
        for k in &keys {
            let st = &self.outs[k];
            let eligible = st.peer.is_none()
                && st.halted_until <= r
                && (st.class == PortClass::S || st.lent_input.is_some());
            if !eligible {
                continue;
            }
            let (t_hi, d_hi) = (st.sched.t_hi, st.sched.d_hi);
            let off = self.rng.gen_range(0..=t_hi);
            let d = self.rng.gen_range(1..=d_hi);
            let vis = r + off + delay;
            self.pulse_on(k, vis, d);
            let st = self.outs.get_mut(k).expect("output");
            st.sched.t = off;
            st.sched.d = d;
            st.pulse = Some((vis, d));
            let m = PulseMsg::new(k, vis, d);
            actives.push(m.clone());
            self.publish(TOPIC_ACTIVE, m, r);
        }

        let m_time = actives
            .iter()
            .map(|a| a.t + a.d + 1)
            .max()
            .unwrap_or(r)
            .max(r + lat + 1);

        // Matching.
        let mut detects: Vec<PulseMsg> = Vec::new();
        let sinks: Vec<PortRef> = self
            .ins
            .iter()
            .filter(|(_, p)| p.peer.is_none())
            .map(|(k, _)| k.clone())
            .collect();
        for s in &sinks {
            let obs = self.plane.sense(s, r, m_time).expect("inputs are monitored");
            let mut cands = Vec::new();
            for o in &obs {
                let det = PulseMsg::new(s, o.rise, o.duration());
                detects.push(det.clone());
                self.publish(TOPIC_DETECT, det, m_time);
                for c in filter_extract(&actives, o, self.tol) {
                    if !cands.contains(&c) {
                        cands.push(c);
                    }
                }
            }
            let ip = self.ins.get_mut(s).expect("input");
            ip.candidates = cands;
            ip.plan = None;
            ip.tries = 0;
        }
        self.backoff_after_matching(&actives, &detects, m_time + lat);

        // Verification.
        let v0 = m_time + 2 * lat * self.cfg.max_verify_tries as u64 + delay + 1;
        let half = self.cfg.d_init + 4;
        let v1 = v0 + 2 * half;
        let mut kernel: Kernel<VerifyMsg> = Kernel::new();
        for s in &sinks {
            self.try_next(&mut kernel, s, m_time);
        }
        let mut plans: BTreeMap<PortRef, Vec<(SimTime, u64)>> = BTreeMap::new();
        while let Ok(ev) = kernel.step() {
            let now = ev.time;
            match ev.event {
                VerifyMsg::VerifyReq { sink, source } => {
                    let st = &self.outs[&source];
                    let reply = if st.peer.is_some() {
                        VerifyMsg::Nack { sink: sink.clone(), source: source.clone() }
                    } else if st.serving.is_some() || st.pulse.is_none() {
                        VerifyMsg::Busy { sink: sink.clone(), source: source.clone() }
                    } else {
                        let pulses = self.draw_plan(v0, half);
                        for &(t, d) in &pulses {
                            self.pulse_on(&source, t, d);
                            self.publish(TOPIC_ACTIVE, PulseMsg::new(&source, t, d), now);
                        }
                        plans.insert(source.clone(), pulses.clone());
                        self.outs.get_mut(&source).expect("output").serving = Some(sink.clone());
                        VerifyMsg::VerifyPlan { sink: sink.clone(), source: source.clone(), pulses }
                    };
                    self.send(&mut kernel, &sink.node, reply, now);
                }
                VerifyMsg::VerifyPlan { sink, source, pulses } => {
                    self.ins.get_mut(&sink).expect("input").plan = Some((source, pulses));
                }
                VerifyMsg::Busy { sink, .. } => self.try_next(&mut kernel, &sink, now),
                VerifyMsg::Nack { sink, source } => {
                    self.ins.get_mut(&sink).expect("input").candidates.retain(|c| c != &source);
                    self.try_next(&mut kernel, &sink, now);
                }
                VerifyMsg::VerifyResult { .. } => {}
            }
        }

        // Evaluate at V1.
        let mut results = Vec::new();
        for s in &sinks {
            let Some((cand, plan)) = self.ins[s].plan.clone() else { continue };
            let obs = self.plane.sense(s, v0, v1).expect("inputs are monitored");
            let fits = |p: &[(SimTime, u64)]| {
                p.len() == obs.len()
                    && p.iter()
                        .zip(&obs)
                        .all(|(&(t, d), o)| PulseMsg::new(s, t, d).matches(o.rise, o.duration(), self.tol))
            };
            let collision = plans.iter().any(|(src, p)| src != &cand && fits(p));
            let (ok, conflict) = if obs.is_empty() {
                (false, false)
            } else if fits(&plan) && !collision {
                (true, false)
            } else {
                (false, true)
            };
            results.push((s.clone(), cand, ok, conflict, obs));
        }
        for (sink, source, ok, conflict, obs) in results {
            self.trace.record(
                v1,
                "VERIFY_OBSERVED",
                sink.node.as_str(),
                json!({ "sink": sink, "source": source, "observed": obs_json(&obs) }),
            );
            if ok {
                self.configure(&source, &sink, v1);
            } else if !conflict {
                self.ins.get_mut(&sink).expect("input").candidates.retain(|c| c != &source);
            }
            let msg = VerifyMsg::VerifyResult { sink: sink.clone(), source: source.clone(), ok, conflict };
            self.send(&mut kernel, &source.node, msg, v1);
        }
        while let Ok(ev) = kernel.step() {
            if let VerifyMsg::VerifyResult { source, conflict: true, .. } = ev.event {
                let halt = ev.time + self.cfg.halt_ticks;
                let st = self.outs.get_mut(&source).expect("output");
                st.sched = backoff_update(st.sched, Conflict::VerifyConflict);
                st.halted_until = halt;
                st.last_coincidence = ev.time;
                self.trace.record(
                    ev.time,
                    "BACKOFF",
                    source.node.as_str(),
                    json!({ "port": source, "conflict": Conflict::VerifyConflict, "t_hi": st.sched.t_hi }),
                );
            }
        }

        let e = v1 + lat;
        self.quiet_updates(e);
        let next = e + delay + 1;
        self.settle(e, next);
        self.round += 1;
        (v1, next)
    }

    fn try_next(&mut self, kernel: &mut Kernel<VerifyMsg>, sink: &PortRef, now: SimTime) {
        let ip = self.ins.get_mut(sink).expect("input");
        if ip.tries >= self.cfg.max_verify_tries || ip.plan.is_some() {
            return;
        }
        let Some(c) = ip.candidates.get(ip.tries as usize).cloned() else {
            return;
        };
        ip.tries += 1;
        let msg = VerifyMsg::VerifyReq { sink: sink.clone(), source: c.clone() };
        self.send(kernel, &c.node, msg, now);
    }

    fn draw_plan(&mut self, v0: SimTime, half: u64) -> Vec<(SimTime, u64)> {
        (0..2)
            .map(|k| {
                let d = self.rng.gen_range(1..=self.cfg.d_init.min(half - 2));
                let a = self.rng.gen_range(0..=half - 1 - d);
                (v0 + k * half + a, d)
            })
            .collect()
    }

    /// Makes light visible on `port` during `[vis, vis + d)`.
    fn pulse_on(&mut self, port: &PortRef, vis: SimTime, d: u64) {
        let delay = self.cfg.transition_delay;
        let st = &self.outs[port];
        match st.class {
            PortClass::S => {
                let at = SimTime(vis.ticks() - delay);
                self.plane.set_emission(port, EmissionState::On, at).expect("S output");
                self.plane.set_emission(port, EmissionState::Off, at + d).expect("S output");
            }
            _ => {
                let inp = st.lent_input.clone().expect("switch output lent an input");
                self.plane
                    .set_switch_route(&port.node, &inp, &port.port, vis)
                    .expect("ports on switch");
                self.plane
                    .clear_switch_route(&port.node, &port.port, vis + d)
                    .expect("port on switch");
            }
        }
    }

    fn backoff_after_matching(&mut self, actives: &[ActiveMsg], detects: &[PulseMsg], now: SimTime) {
        for a in actives {
            let me = a.sender();
            let pair = detects.iter().any(|det| {
                a.matches(det.t, det.d, self.tol)
                    && actives
                        .iter()
                        .any(|b| b.sender() != me && b.matches(det.t, det.d, self.tol))
            });
            let same_d = actives.iter().any(|b| b.sender() != me && b.d == a.d);
            let conflict = if pair {
                Conflict::SameDetectionPair
            } else if same_d {
                Conflict::SameDurationPublished
            } else {
                continue;
            };
            let st = self.outs.get_mut(&me).expect("output");
            st.sched = backoff_update(st.sched, conflict);
            st.last_coincidence = now;
            self.trace.record(
                now,
                "BACKOFF",
                me.node.as_str(),
                json!({ "port": me, "conflict": conflict, "t_hi": st.sched.t_hi, "d_hi": st.sched.d_hi }),
            );
        }
    }

    fn quiet_updates(&mut self, now: SimTime) {
        let q = self.cfg.quiet.max(1);
        for st in self.outs.values_mut().filter(|s| s.peer.is_none()) {
            let idle = now - st.last_coincidence.min(now);
            if idle >= q {
                for _ in 0..idle / q {
                    st.sched = backoff_update(st.sched, Conflict::QuietPeriod);
                }
                st.last_coincidence = now;
            }
        }
    }

    fn configure(&mut self, source: &PortRef, sink: &PortRef, at: SimTime) {
        if self.outs[source].class == PortClass::T {
            let sw = self.topo.node(&source.node).expect("switch");
            let fed = sw
                .inputs()
                .any(|p| self.ins[&sw_ref(&sw.id, &p.id)].peer.is_some());
            if !fed {
                self.phase_violations.push(source.clone());
            }
        }
        self.outs.get_mut(source).expect("output").peer = Some(sink.clone());
        self.ins.get_mut(sink).expect("input").peer = Some(source.clone());
        let pair = (source.clone(), sink.clone());
        if !self.truth.contains(&pair) {
            self.false_positives.push(pair.clone());
        }
        self.configured.insert(pair);
        self.trace.record(
            at,
            "CONFIGURED",
            sink.node.as_str(),
            json!({ "src": source, "dst": sink }),
        );
    }

    /// Steady light on configured sources and re-parked switch routes.
    fn settle(&mut self, e: SimTime, next: SimTime) {
        let delay = self.cfg.transition_delay;
        let steady: Vec<PortRef> = self
            .outs
            .iter()
            .filter(|(_, o)| o.class == PortClass::S && o.peer.is_some())
            .map(|(k, _)| k.clone())
            .collect();
        for k in steady {
            self.plane.set_emission(&k, EmissionState::On, e).expect("S output");
        }
        let park_first = self.round % 2 == 1;
        for sw in self.switch_order.clone() {
            for (o, _) in self.parked.remove(&sw).unwrap_or_default() {
                self.plane.clear_switch_route(&sw, &o, e).expect("switch port");
            }
            let node = self.topo.node(&sw).expect("switch").clone();
            let mut lit: Vec<PortId> = node
                .inputs()
                .map(|p| p.id.clone())
                .filter(|i| self.is_lit_free_input(&sw, i, e + delay))
                .collect();
            let mut demand: Vec<PortId> = node
                .outputs()
                .filter(|p| {
                    self.outs[&sw_ref(&sw, &p.id)]
                        .peer
                        .as_ref()
                        .is_some_and(|peer| self.topo.kind_of(&peer.node) == Some(NodeKind::Osw))
                })
                .map(|p| p.id.clone())
                .collect();
            let needed = node
                .outputs()
                .filter(|p| {
                    let st = &self.outs[&sw_ref(&sw, &p.id)];
                    st.peer.is_none() && st.halted_until <= next
                })
                .count();
            let budget = if park_first {
                lit.len()
            } else {
                lit.len().saturating_sub(needed)
            };
            if !demand.is_empty() {
                let k = (self.round as usize / 2) % demand.len();
                demand.rotate_left(k);
            }
            if !lit.is_empty() {
                let k = (self.round as usize / 2) % lit.len();
                lit.rotate_left(k);
            }
            let mut parked = Vec::new();
            for (o, i) in demand.into_iter().zip(lit).take(budget) {
                self.plane.set_switch_route(&sw, &i, &o, e).expect("switch ports");
                parked.push((o, i));
            }
            if !parked.is_empty() {
                self.parked.insert(sw, parked);
            }
        }
    }
}

fn obs_json(obs: &[PulseObservation]) -> serde_json::Value {
    json!(obs.iter().map(|o| [o.rise.ticks(), o.duration()]).collect::<Vec<_>>())
}

pub fn run_pubsub(topo: Arc<Topology>, cfg: PubsubConfig) -> Result<PubsubOutcome, PubsubError> {
    if cfg.sensor_mode == SensorMode::Aux {
        return Err(PubsubError::AuxModeUnsupported);
    }
    let mut w = World::new(topo, cfg);
    let mut r = SimTime::ZERO;
    let mut completion = None;
    let mut end = r;
    while r.ticks() <= cfg.budget {
        if w.configured.len() == w.truth.len() {
            break;
        }
        let (v1, next) = w.round(r);
        end = v1;
        if w.configured.len() == w.truth.len() && completion.is_none() {
            completion = Some(v1.ticks());
        }
        r = next;
    }
    if w.truth.is_empty() {
        completion = Some(0);
    }
    let success = completion.is_some() && w.false_positives.is_empty() && w.configured == w.truth;
    Ok(PubsubOutcome {
        success,
        configured: w.configured,
        false_positives: w.false_positives,
        phase_order_violations: w.phase_violations,
        completion_ticks: completion,
        rounds: w.round,
        end_time: end,
        messages: w.bus.counts().clone(),
        trace: w.trace,
    })
}

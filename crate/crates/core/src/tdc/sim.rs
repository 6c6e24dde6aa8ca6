//! Runs a TDC service and its node agents over the simulation kernel.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::agent::{AgentAction, AgentError, NodeAgent};
use super::codec::frame_len;
use super::messages::IdMessage;
use super::service::{DetectorKey, IdMode, Phase, TdcConfig, TdcService};
use crate::netmodel::{NodeId, Topology};
use crate::simkernel::{Bus, Drive, ErrorModel, Kernel, NoiseStream, OpticalConfig, OpticalPlane, SimTime, Trace};

pub const TDC_ADDR: &str = "tdc";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdcRunConfig {
    pub mode: IdMode,
    pub p_bit: f64,
    pub seed: u64,
    pub t_act: u64,
    pub latency: u64,
    pub dark_ticks: u64,
    pub timeout_repeats: u64,
    pub decode_margin: u32,
    pub budget: u64,
    pub trace: bool,
}

impl TdcRunConfig {
    pub fn new(mode: IdMode) -> Self {
        Self {
            mode,
            p_bit: 0.0,
            seed: 0,
            t_act: 1,
            latency: 0,
            dark_ticks: 2,
            timeout_repeats: 50,
            decode_margin: 1,
            budget: 100_000,
            trace: true,
        }
    }
}

#[derive(Debug)]
enum Ev {
    Deliver { from: String, to: String, msg: IdMessage },
    Wake(usize),
}

#[derive(Debug, Clone)]
pub struct TdcOutcome {
    pub success: bool,
    pub accepting_at: Option<SimTime>,
    pub configured_at: Option<SimTime>,
    /// Ticks from accepting requests to CONFIGURED, if reached.
    pub completion_ticks: Option<u64>,
    pub bindings: BTreeMap<u32, DetectorKey>,
    /// Per bound channel (parallel mode): frames sent until the first
    /// error-free reception.
    pub repeats: Vec<u64>,
    pub messages: BTreeMap<String, u64>,
    pub violations: Vec<String>,
    pub trace: Trace,
}

impl TdcOutcome {
    pub fn mean_repeats(&self) -> Option<f64> {
        if self.repeats.is_empty() {
            None
        } else {
            Some(self.repeats.iter().sum::<u64>() as f64 / self.repeats.len() as f64)
        }
    }
}

/// A stepped TDC simulation. Tests can inject extra messages between ticks.
pub struct TdcSim {
    cfg: TdcRunConfig,
    topo: Arc<Topology>,
    plane: OpticalPlane,
    service: TdcService,
    agents: Vec<NodeAgent>,
    agent_by_addr: HashMap<String, usize>,
    /// Wire index feeding each TDC channel.
    wire_of_chan: Vec<Option<usize>>,
    kernel: Kernel<Ev>,
    bus: Bus<IdMessage>,
    noise: Vec<NoiseStream>,
    flips: Vec<Vec<u64>>,
    pattern_start: Vec<Option<(SimTime, usize)>>,
    inbox: Vec<(String, IdMessage)>,
    trace: Trace,
    violations: Vec<String>,
    now: SimTime,
    started: bool,
}

impl TdcSim {
    pub fn new(topo: Arc<Topology>, cfg: TdcRunConfig) -> Self {
        let t_act = cfg.t_act.max(1);
        let plane = OpticalPlane::new(
            topo.clone(),
            OpticalConfig {
                transition_delay: t_act,
                switch_port_emitters: false,
            },
        );
        let wiring = topo.tdc();
        let d = wiring.wires.len();
        let mut tcfg = TdcConfig::new(cfg.mode, d, wiring.channel_count);
        tcfg.t_act = t_act;
        tcfg.dark_ticks = cfg.dark_ticks;
        tcfg.timeout_repeats = cfg.timeout_repeats;
        tcfg.decode_margin = cfg.decode_margin;
        let mut wire_of_chan = vec![None; wiring.channel_count as usize];
        let mut bus = Bus::new(cfg.latency);
        bus.register(TDC_ADDR);
        let mut agents = Vec::new();
        let mut agent_by_addr = HashMap::new();
        for (i, w) in wiring.wires.iter().enumerate() {
            wire_of_chan[w.chan as usize] = Some(i);
            let a = NodeAgent::new(w.node.as_str(), w.detector.clone());
            bus.register(a.address());
            agent_by_addr.insert(a.address(), i);
            agents.push(a);
        }
        let model = ErrorModel::new(cfg.p_bit, cfg.seed);
        let channels = wiring.channel_count as usize;
        Self {
            service: TdcService::new(tcfg),
            noise: (0..channels as u64).map(|c| model.stream(c)).collect(),
            flips: vec![Vec::new(); channels],
            pattern_start: vec![None; d],
            cfg,
            topo,
            plane,
            agents,
            agent_by_addr,
            wire_of_chan,
            kernel: Kernel::new(),
            bus,
            inbox: Vec::new(),
            trace: Trace::new(cfg.trace),
            violations: Vec::new(),
            now: SimTime::ZERO,
            started: false,
        }
    }

    pub fn service(&self) -> &TdcService {
        &self.service
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Sends `msg` from `from` to the TDC at the current tick.
    pub fn inject(&mut self, from: &str, msg: IdMessage) {
        self.bus.register(from);
        self.send(from, TDC_ADDR, msg);
    }

    /// Replies the TDC sent to addresses that are not node agents.
    pub fn take_inbox(&mut self) -> Vec<(String, IdMessage)> {
        std::mem::take(&mut self.inbox)
    }

    fn send(&mut self, from: &str, to: &str, msg: IdMessage) {
        self.trace.record(
            self.now,
            msg.kind(),
            from,
            json!({ "to": to, "msg": msg }),
        );
        match self.bus.send(from, to, msg.kind(), msg.clone(), self.now) {
            Ok(env) => {
                self.kernel
                    .schedule(
                        env.deliver_at,
                        Ev::Deliver {
                            from: env.from,
                            to: env.to,
                            msg: env.msg,
                        },
                    )
                    .expect("delivery is never in the past");
            }
            Err(e) => self.violations.push(e.to_string()),
        }
    }

    fn apply(&mut self, idx: usize, actions: Vec<AgentAction>) {
        let addr = self.agents[idx].address();
        for act in actions {
            match act {
                AgentAction::Send(m) => self.send(&addr, TDC_ADDR, m),
                AgentAction::WakeAt(t) => {
                    self.kernel.schedule(t, Ev::Wake(idx)).expect("wake in the future");
                }
                AgentAction::Drive(drive) => {
                    let a = &self.agents[idx];
                    let node = NodeId::new(a.node_id.clone());
                    let eff = self.now + self.cfg.t_act.max(1);
                    self.pattern_start[idx] = match &drive {
                        Drive::Pattern { bits, .. } => Some((eff, bits.len())),
                        _ => self.pattern_start[idx],
                    };
                    self.trace.record(
                        self.now,
                        "DRIVE",
                        &addr,
                        json!({ "drive": match &drive {
                            Drive::On => "on".to_string(),
                            Drive::Off => "off".to_string(),
                            Drive::Pattern { bits, .. } => crate::simkernel::bits_to_string(bits),
                        }}),
                    );
                    if let Err(e) = self.plane.set_detector_drive(&node, &a.detector_id, drive, self.now) {
                        self.violations.push(e.to_string());
                    }
                }
            }
        }
    }

    fn on_agent_result(&mut self, idx: usize, r: Result<Vec<AgentAction>, AgentError>) {
        match r {
            Ok(acts) => self.apply(idx, acts),
            Err(e) => self.violations.push(e.to_string()),
        }
    }

    /// Runs one tick. Returns `true` once the service is CONFIGURED.
    pub fn tick(&mut self) -> bool {
        if !self.started {
            self.started = true;
            for i in 0..self.agents.len() {
                let acts = self.agents[i].start();
                self.apply(i, acts);
            }
        }
        let t = self.now;
        let noisy = self.cfg.mode == IdMode::Parallel && self.cfg.p_bit > 0.0;
        let accepting = self.service.phase() == Phase::UnconfiguredAccepting;
        let mut light = Vec::with_capacity(self.wire_of_chan.len());
        for c in 0..self.wire_of_chan.len() {
            let mut lit = self.wire_of_chan[c].is_some_and(|w| self.plane.detector_light(w, t));
            if noisy && accepting && !self.service.is_bound(c as u32) && self.noise[c].next_flip() {
                lit = !lit;
                self.flips[c].push(t.ticks());
            }
            light.push(lit);
        }
        for (to, msg) in self.service.observe(t, &light) {
            self.send(TDC_ADDR, &to, msg);
        }
        while self.kernel.peek_time() == Some(t) {
            let ev = self.kernel.step().expect("peeked").event;
            match ev {
                Ev::Deliver { from, to, msg } => {
                    if to == TDC_ADDR {
                        for (to, m) in self.service.handle(&from, &msg, t) {
                            self.send(TDC_ADDR, &to, m);
                        }
                    } else if let Some(&i) = self.agent_by_addr.get(&to) {
                        let r = self.agents[i].on_message(&msg, t);
                        self.on_agent_result(i, r);
                    } else {
                        self.inbox.push((to, msg));
                    }
                }
                Ev::Wake(i) => {
                    let acts = self.agents[i].wake(t);
                    self.apply(i, acts);
                }
            }
        }
        self.now = t + 1;
        self.service.phase() == Phase::Configured
    }

    /// Runs until CONFIGURED or the tick budget is spent.
    pub fn run(mut self) -> TdcOutcome {
        let mut done = false;
        while !done && self.now.ticks() <= self.cfg.budget {
            done = self.tick();
        }
        self.finish()
    }

    fn repeats(&self) -> Vec<u64> {
        if self.cfg.mode != IdMode::Parallel {
            return Vec::new();
        }
        let t_act = self.cfg.t_act.max(1);
        let n = frame_len(self.service.pattern_bits()) as u64 * t_act;
        let mut out = Vec::new();
        for (chan, key) in self.service.bindings() {
            let Some(&i) = self.agent_by_addr.get(&format!("{}/{}", key.0, key.1)) else {
                continue;
            };
            let Some((start, _)) = self.pattern_start[i] else {
                continue;
            };
            let flips: Vec<u64> = self.flips[chan as usize]
                .iter()
                .filter(|&&f| f >= start.ticks())
                .map(|&f| (f - start.ticks()) / n)
                .collect();
            // first frame index with no flip
            let mut k = 0;
            for f in flips {
                if f == k {
                    k += 1;
                } else if f > k {
                    break;
                }
            }
            out.push(k + 1);
        }
        out
    }

    pub fn finish(self) -> TdcOutcome {
        let bindings = self.service.bindings();
        let truth: BTreeMap<u32, DetectorKey> = self
            .topo
            .tdc()
            .wires
            .iter()
            .map(|w| (w.chan, (w.node.to_string(), w.detector.clone())))
            .collect();
        let configured = self.service.phase() == Phase::Configured;
        let completion_ticks = match (self.service.accepting_at(), self.service.configured_at()) {
            (Some(a), Some(c)) => Some((c - a) / self.cfg.t_act.max(1)),
            _ => None,
        };
        TdcOutcome {
            success: configured && bindings == truth && self.violations.is_empty(),
            accepting_at: self.service.accepting_at(),
            configured_at: self.service.configured_at(),
            completion_ticks,
            repeats: self.repeats(),
            bindings,
            messages: self.bus.counts().clone(),
            violations: self.violations,
            trace: self.trace,
        }
    }
}

pub fn run_tdc(topo: Arc<Topology>, cfg: TdcRunConfig) -> TdcOutcome {
    TdcSim::new(topo, cfg).run()
}

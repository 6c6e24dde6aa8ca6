//! The TDC service state machine.
//!
//! `observe` is called once per tick with the light level on every TDC
//! channel, before any message for that tick is handled. `handle` answers
//! one message. Both return the replies to send.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::codec::{encode_identifier, frame_len, pattern_bits, StreamDecoder};
use super::messages::{IdErrorType, IdMessage, ServiceStatus};
use crate::simkernel::{bits_to_string, SimTime};

/// `(node_id, detector_id)`.
pub type DetectorKey = (String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMode {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    ValidatingDark,
    UnconfiguredAccepting,
    Configured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdcConfig {
    pub mode: IdMode,
    /// Ticks per `t_act`; also the bit period of parallel patterns.
    pub t_act: u64,
    pub dark_ticks: u64,
    /// Frame repeats without any decode before `ID_ERROR{TIMEOUT}`.
    pub timeout_repeats: u64,
    /// Lead a decoded value needs over every other value on a channel.
    pub decode_margin: u32,
    /// Number of detectors `d` wired to this TDC.
    pub expected_count: usize,
    pub channel_count: u32,
}

impl TdcConfig {
    pub fn new(mode: IdMode, expected_count: usize, channel_count: u32) -> Self {
        Self {
            mode,
            t_act: 1,
            dark_ticks: 2,
            timeout_repeats: 50,
            decode_margin: 1,
            expected_count,
            channel_count,
        }
    }
}

#[derive(Debug, Clone)]
struct Assignment {
    addr: String,
    value: Option<u64>,
    granted_at: SimTime,
    last_progress: SimTime,
}

/// A reply and who it goes to.
pub type Outgoing = (String, IdMessage);

#[derive(Debug, Clone)]
pub struct TdcService {
    cfg: TdcConfig,
    phase: Phase,
    dark_seen: u64,
    accepting_at: Option<SimTime>,
    configured_at: Option<SimTime>,
    last_observed: Option<SimTime>,
    bound: Vec<Option<DetectorKey>>,
    bound_count: usize,
    known: BTreeSet<DetectorKey>,
    active: BTreeMap<DetectorKey, Assignment>,
    waiting: Vec<DetectorKey>,
    prev_light: Vec<bool>,
    l: u32,
    decoders: Vec<Vec<StreamDecoder>>,
    counts: Vec<BTreeMap<u64, u32>>,
}

impl TdcService {
    pub fn new(cfg: TdcConfig) -> Self {
        let n = cfg.channel_count as usize;
        let l = pattern_bits(cfg.expected_count.max(1) as u64);
        let t_act = cfg.t_act.max(1) as usize;
        Self {
            cfg,
            phase: Phase::ValidatingDark,
            dark_seen: 0,
            accepting_at: None,
            configured_at: None,
            last_observed: None,
            bound: vec![None; n],
            bound_count: 0,
            known: BTreeSet::new(),
            active: BTreeMap::new(),
            waiting: Vec::new(),
            prev_light: vec![false; n],
            l,
            decoders: vec![vec![StreamDecoder::new(l); t_act]; n],
            counts: vec![BTreeMap::new(); n],
        }
    }

    pub fn config(&self) -> &TdcConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pattern_bits(&self) -> u32 {
        self.l
    }

    pub fn accepting_at(&self) -> Option<SimTime> {
        self.accepting_at
    }

    pub fn configured_at(&self) -> Option<SimTime> {
        self.configured_at
    }

    pub fn is_bound(&self, chan: u32) -> bool {
        self.bound[chan as usize].is_some()
    }

    /// Channel -> detector for every configured channel.
    pub fn bindings(&self) -> BTreeMap<u32, DetectorKey> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(c, k)| k.clone().map(|k| (c as u32, k)))
            .collect()
    }

    pub fn active_values(&self) -> Vec<u64> {
        self.active.values().filter_map(|a| a.value).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    fn frame_ticks(&self) -> u64 {
        frame_len(self.l) as u64 * self.cfg.t_act.max(1)
    }

    /// Feeds one tick of channel levels. Repeated calls for the same tick
    /// are ignored.
    pub fn observe(&mut self, now: SimTime, light: &[bool]) -> Vec<Outgoing> {
        if self.last_observed.is_some_and(|t| t >= now) {
            return Vec::new();
        }
        self.last_observed = Some(now);
        let mut out = Vec::new();
        match self.phase {
            Phase::ValidatingDark => {
                if light.iter().any(|&b| b) {
                    self.dark_seen = 0;
                } else {
                    self.dark_seen += 1;
                }
                if self.dark_seen >= self.cfg.dark_ticks {
                    self.phase = Phase::UnconfiguredAccepting;
                    self.accepting_at = Some(now);
                    if self.cfg.expected_count == 0 {
                        self.phase = Phase::Configured;
                        self.configured_at = Some(now);
                    }
                }
            }
            Phase::UnconfiguredAccepting => match self.cfg.mode {
                IdMode::Serial => self.observe_serial(now, light, &mut out),
                IdMode::Parallel => self.observe_parallel(now, light, &mut out),
            },
            Phase::Configured => {}
        }
        let n = self.prev_light.len();
        self.prev_light.copy_from_slice(&light[..n]);
        out
    }

    fn observe_serial(&mut self, now: SimTime, light: &[bool], out: &mut Vec<Outgoing>) {
        let newly: Vec<u32> = (0..self.bound.len())
            .filter(|&c| self.bound[c].is_none() && light[c] && !self.prev_light[c])
            .map(|c| c as u32)
            .collect();
        let Some((key, a)) = self.active.iter().next().map(|(k, a)| (k.clone(), a.clone())) else {
            return;
        };
        match newly.len() {
            0 => {
                let limit = self.cfg.timeout_repeats * self.cfg.t_act.max(1) + self.cfg.t_act;
                if now - a.granted_at > limit {
                    self.active.clear();
                    out.push((a.addr, IdMessage::IdError { error: IdErrorType::Timeout }));
                }
            }
            1 => self.bind(newly[0], key, now, out),
            _ => {
                self.active.clear();
                out.push((a.addr, IdMessage::IdError { error: IdErrorType::Ambiguous }));
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn observe_parallel(&mut self, now: SimTime, light: &[bool], out: &mut Vec<Outgoing>) {
        let phase = (now.ticks() % self.cfg.t_act.max(1)) as usize;
        let mut binds = Vec::new();
        for c in 0..self.bound.len() {
            if self.bound[c].is_some() {
                continue;
            }
            let Some(v) = self.decoders[c][phase].push(light[c]) else {
                continue;
            };
            *self.counts[c].entry(v).or_default() += 1;
            for a in self.active.values_mut() {
                if a.value == Some(v) {
                    a.last_progress = now;
                }
            }
            let lead = self.counts[c][&v] as i64
                - self.counts[c]
                    .iter()
                    .filter(|(&k, _)| k != v)
                    .map(|(_, &n)| n as i64)
                    .max()
                    .unwrap_or(0);
            if lead >= self.cfg.decode_margin as i64 {
                if let Some(key) = self
                    .active
                    .iter()
                    .find(|(_, a)| a.value == Some(v))
                    .map(|(k, _)| k.clone())
                {
                    binds.push((c as u32, key));
                }
            }
        }
        for (c, key) in binds {
            if self.active.contains_key(&key) {
                self.bind(c, key, now, out);
            }
        }
        if self.phase == Phase::Configured {
            return;
        }
        let limit = self.cfg.timeout_repeats * self.frame_ticks();
        let expired: Vec<DetectorKey> = self
            .active
            .iter()
            .filter(|(_, a)| now - a.last_progress > limit)
            .map(|(k, _)| k.clone())
            .collect();
        for key in expired {
            let a = self.active.remove(&key).expect("listed above");
            self.forget_value(a.value);
            out.push((a.addr, IdMessage::IdError { error: IdErrorType::Timeout }));
        }
    }

    fn forget_value(&mut self, v: Option<u64>) {
        if let Some(v) = v {
            for c in &mut self.counts {
                c.remove(&v);
            }
        }
    }

    fn bind(&mut self, chan: u32, key: DetectorKey, now: SimTime, out: &mut Vec<Outgoing>) {
        let a = self.active.remove(&key).expect("binding an active request");
        self.forget_value(a.value);
        self.counts[chan as usize].clear();
        self.bound[chan as usize] = Some(key.clone());
        self.bound_count += 1;
        out.push((
            a.addr,
            IdMessage::IdComplete {
                node_id: key.0,
                detector_id: key.1,
                chan_id: chan,
            },
        ));
        if self.bound_count == self.cfg.expected_count {
            self.phase = Phase::Configured;
            self.configured_at = Some(now);
            self.active.clear();
            self.waiting.clear();
        }
    }

    fn chan_of(&self, key: &DetectorKey) -> Option<u32> {
        self.bound
            .iter()
            .position(|k| k.as_ref() == Some(key))
            .map(|c| c as u32)
    }

    pub fn handle(&mut self, from: &str, msg: &IdMessage, now: SimTime) -> Vec<Outgoing> {
        let reply = |m| vec![(from.to_string(), m)];
        match msg {
            IdMessage::IdReq {
                node_id,
                detector_id,
            } => {
                let key = (node_id.clone(), detector_id.clone());
                self.known.insert(key.clone());
                if self.phase == Phase::Configured {
                    return reply(IdMessage::IdError {
                        error: IdErrorType::AlreadyConfigured,
                    });
                }
                if let Some(chan_id) = self.chan_of(&key) {
                    return reply(IdMessage::IdComplete {
                        node_id: key.0,
                        detector_id: key.1,
                        chan_id,
                    });
                }
                match self.phase {
                    Phase::Configured => reply(IdMessage::IdError {
                        error: IdErrorType::AlreadyConfigured,
                    }),
                    Phase::ValidatingDark => reply(IdMessage::IdRetry {
                        wait: self.cfg.dark_ticks.saturating_sub(self.dark_seen).max(1),
                    }),
                    Phase::UnconfiguredAccepting => match self.cfg.mode {
                        IdMode::Serial => reply(self.request_serial(from, key, now)),
                        IdMode::Parallel => reply(self.request_parallel(from, key, now)),
                    },
                }
            }
            IdMessage::IdLookupReq {
                node_id,
                detector_id,
            } => {
                let key = (node_id.clone(), detector_id.clone());
                if let Some(chan_id) = self.chan_of(&key) {
                    reply(IdMessage::IdLookupConf {
                        node_id: key.0,
                        detector_id: key.1,
                        chan_id,
                    })
                } else if self.known.contains(&key) {
                    reply(IdMessage::IdLookupUnconf {
                        node_id: key.0,
                        detector_id: key.1,
                    })
                } else {
                    reply(IdMessage::IdLookupError {})
                }
            }
            IdMessage::IdStatusReq {} => reply(match self.phase {
                Phase::ValidatingDark => IdMessage::IdStatusError {},
                Phase::UnconfiguredAccepting => IdMessage::IdStatus {
                    status: ServiceStatus::Unconfigured,
                },
                Phase::Configured => IdMessage::IdStatus {
                    status: ServiceStatus::Configured,
                },
            }),
            _ => Vec::new(),
        }
    }

    fn request_serial(&mut self, from: &str, key: DetectorKey, now: SimTime) -> IdMessage {
        let start = IdMessage::IdStart {
            duration: 0,
            pattern: None,
        };
        if self.active.contains_key(&key) {
            return start;
        }
        if let Some(a) = self.active.values().next() {
            let idx = match self.waiting.iter().position(|k| k == &key) {
                Some(i) => i,
                None => {
                    self.waiting.push(key);
                    self.waiting.len() - 1
                }
            };
            let t = self.cfg.t_act.max(1);
            let wait = ((idx as u64 + 1) * t).saturating_sub(now - a.granted_at).max(1);
            return IdMessage::IdRetry { wait };
        }
        self.waiting.retain(|k| k != &key);
        self.active.insert(
            key,
            Assignment {
                addr: from.to_string(),
                value: None,
                granted_at: now,
                last_progress: now,
            },
        );
        start
    }

    fn request_parallel(&mut self, from: &str, key: DetectorKey, now: SimTime) -> IdMessage {
        let value = match self.active.get(&key) {
            Some(a) => a.value.expect("parallel assignments carry a value"),
            None => {
                let used: BTreeSet<u64> = self.active.values().filter_map(|a| a.value).collect();
                let v = (0..).find(|v| !used.contains(v)).expect("unbounded range");
                self.active.insert(
                    key,
                    Assignment {
                        addr: from.to_string(),
                        value: Some(v),
                        granted_at: now,
                        last_progress: now,
                    },
                );
                v
            }
        };
        let bits = encode_identifier(value, self.l).expect("fewer requesters than values");
        IdMessage::IdStart {
            duration: self.cfg.t_act.max(1),
            pattern: Some(bits_to_string(&bits)),
        }
    }
}

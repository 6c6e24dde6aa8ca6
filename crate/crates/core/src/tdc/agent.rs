//! Node-side client of the TDC service, one per detector.

use thiserror::Error;

use super::messages::{IdErrorType, IdMessage};
use crate::simkernel::{parse_bits, Drive, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("ID_COMPLETE for {got:?} received by {expected:?}")]
    ProtocolViolation {
        expected: (String, String),
        got: (String, String),
    },
    #[error("malformed pattern {0:?}")]
    BadPattern(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    Send(IdMessage),
    Drive(Drive),
    WakeAt(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentState {
    Idle,
    Waiting(SimTime),
    Requested,
    Emitting,
    Done,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct NodeAgent {
    pub node_id: String,
    pub detector_id: String,
    state: AgentState,
}

impl NodeAgent {
    pub fn new(node_id: impl Into<String>, detector_id: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            detector_id: detector_id.into(),
            state: AgentState::Idle,
        }
    }

    pub fn address(&self) -> String {
        format!("{}/{}", self.node_id, self.detector_id)
    }

    pub fn state(&self) -> AgentState {
        self.state
    }

    fn request(&mut self) -> AgentAction {
        self.state = AgentState::Requested;
        AgentAction::Send(IdMessage::IdReq {
            node_id: self.node_id.clone(),
            detector_id: self.detector_id.clone(),
        })
    }

    /// Starts dark and asks for identification.
    pub fn start(&mut self) -> Vec<AgentAction> {
        vec![AgentAction::Drive(Drive::Off), self.request()]
    }

    pub fn wake(&mut self, now: SimTime) -> Vec<AgentAction> {
        match self.state {
            AgentState::Waiting(until) if now >= until => vec![self.request()],
            _ => Vec::new(),
        }
    }

    pub fn on_message(&mut self, msg: &IdMessage, now: SimTime) -> Result<Vec<AgentAction>, AgentError> {
        if matches!(self.state, AgentState::Done | AgentState::Stopped) {
            return Ok(Vec::new());
        }
        Ok(match msg {
            IdMessage::IdRetry { wait } => {
                let until = now + *wait;
                self.state = AgentState::Waiting(until);
                vec![AgentAction::WakeAt(until)]
            }
            IdMessage::IdStart { duration: 0, .. } => {
                self.state = AgentState::Emitting;
                vec![AgentAction::Drive(Drive::On)]
            }
            IdMessage::IdStart {
                duration,
                pattern: Some(p),
            } => {
                let bits = parse_bits(p).ok_or_else(|| AgentError::BadPattern(p.clone()))?;
                self.state = AgentState::Emitting;
                vec![AgentAction::Drive(Drive::Pattern {
                    start: now,
                    bit_ticks: *duration,
                    bits: bits.into(),
                })]
            }
            IdMessage::IdStart { pattern: None, .. } => {
                return Err(AgentError::BadPattern(String::new()));
            }
            IdMessage::IdComplete {
                node_id,
                detector_id,
                ..
            } => {
                if node_id != &self.node_id || detector_id != &self.detector_id {
                    return Err(AgentError::ProtocolViolation {
                        expected: (self.node_id.clone(), self.detector_id.clone()),
                        got: (node_id.clone(), detector_id.clone()),
                    });
                }
                self.state = AgentState::Done;
                vec![AgentAction::Drive(Drive::On)]
            }
            IdMessage::IdError {
                error: IdErrorType::AlreadyConfigured,
            } => {
                self.state = AgentState::Stopped;
                vec![AgentAction::Drive(Drive::Off)]
            }
            IdMessage::IdError { .. } => vec![AgentAction::Drive(Drive::Off), self.request()],
            _ => Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_wait() {
        let mut a = NodeAgent::new("m", "d");
        a.start();
        let acts = a.on_message(&IdMessage::IdRetry { wait: 5 }, SimTime(2)).unwrap();
        assert_eq!(acts, vec![AgentAction::WakeAt(SimTime(7))]);
        assert!(a.wake(SimTime(6)).is_empty());
        assert!(matches!(a.wake(SimTime(7))[0], AgentAction::Send(IdMessage::IdReq { .. })));
    }

    #[test]
    fn wrong_completion() {
        let mut a = NodeAgent::new("m", "d");
        let bad = IdMessage::IdComplete { node_id: "x".into(), detector_id: "d".into(), chan_id: 0 };
        assert!(matches!(a.on_message(&bad, SimTime(0)), Err(AgentError::ProtocolViolation { .. })));
    }

    #[test]
    fn pattern_start() {
        let mut a = NodeAgent::new("m", "d");
        let acts = a
            .on_message(&IdMessage::IdStart { duration: 1, pattern: Some("01".into()) }, SimTime(0))
            .unwrap();
        assert!(matches!(&acts[0], AgentAction::Drive(Drive::Pattern { bit_ticks: 1, bits, .. }) if bits[..] == [false, true]));
    }
}

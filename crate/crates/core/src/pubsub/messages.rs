use serde::{Deserialize, Serialize};

use crate::netmodel::PortRef;
use crate::simkernel::{PulseObservation, SimTime};

pub const TOPIC_ACTIVE: &str = "channel/active";
pub const TOPIC_DETECT: &str = "channel/detect";

/// A pulse announcement on `channel/active`, or a detection report on
/// `channel/detect`. `T_i` is the tick the light is visible (or was seen).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseMsg {
    #[serde(rename = "T_i")]
    pub t: SimTime,
    #[serde(rename = "D_i")]
    pub d: u64,
    #[serde(rename = "NODE_ID")]
    pub node_id: String,
    #[serde(rename = "PORT_ID")]
    pub port_id: String,
}

pub type ActiveMsg = PulseMsg;
pub type DetectMsg = PulseMsg;

impl PulseMsg {
    pub fn new(sender: &PortRef, t: SimTime, d: u64) -> Self {
        Self {
            t,
            d,
            node_id: sender.node.to_string(),
            port_id: sender.port.to_string(),
        }
    }

    pub fn sender(&self) -> PortRef {
        PortRef::new(self.node_id.clone(), self.port_id.clone())
    }

    pub fn matches(&self, rise: SimTime, duration: u64, tol: u64) -> bool {
        self.t.ticks().abs_diff(rise.ticks()) <= tol && self.d.abs_diff(duration) <= tol
    }
}

/// Direct messages of the verification handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerifyMsg {
    VerifyReq { sink: PortRef, source: PortRef },
    VerifyPlan { sink: PortRef, source: PortRef, pulses: Vec<(SimTime, u64)> },
    Busy { sink: PortRef, source: PortRef },
    Nack { sink: PortRef, source: PortRef },
    VerifyResult { sink: PortRef, source: PortRef, ok: bool, conflict: bool },
}

impl VerifyMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            VerifyMsg::VerifyReq { .. } => "VERIFY_REQ",
            VerifyMsg::VerifyPlan { .. } => "VERIFY_PLAN",
            VerifyMsg::Busy { .. } => "BUSY",
            VerifyMsg::Nack { .. } => "NACK",
            VerifyMsg::VerifyResult { .. } => "VERIFY_RESULT",
        }
    }
}

/// Senders whose announced pulse matches the observation within `tol`.
pub fn filter_extract(active: &[ActiveMsg], obs: &PulseObservation, tol: u64) -> Vec<PortRef> {
    let mut out: Vec<PortRef> = Vec::new();
    for m in active {
        if m.matches(obs.rise, obs.duration(), tol) {
            let s = m.sender();
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(n: &str, t: u64, d: u64) -> ActiveMsg {
        PulseMsg::new(&PortRef::new(n, "o"), SimTime(t), d)
    }

    fn obs(rise: u64, d: u64) -> PulseObservation {
        PulseObservation { port: PortRef::new("m", "i"), rise: SimTime(rise), fall: SimTime(rise + d) }
    }

    #[test]
    fn exact_match() {
        let got = filter_extract(&[msg("A", 5, 3), msg("B", 9, 2)], &obs(5, 3), 0);
        assert_eq!(got, vec![PortRef::new("A", "o")]);
    }

    #[test]
    fn collision() {
        assert_eq!(filter_extract(&[msg("A", 5, 3), msg("B", 5, 3)], &obs(5, 3), 0).len(), 2);
    }

    #[test]
    fn tolerance() {
        assert_eq!(filter_extract(&[msg("A", 5, 3)], &obs(6, 3), 1).len(), 1);
        assert!(filter_extract(&[msg("A", 5, 3)], &obs(6, 3), 0).is_empty());
    }

    #[test]
    fn wire_names() {
        let s = serde_json::to_string(&msg("A", 5, 3)).unwrap();
        assert_eq!(s, r#"{"T_i":5,"D_i":3,"NODE_ID":"A","PORT_ID":"o"}"#);
    }
}

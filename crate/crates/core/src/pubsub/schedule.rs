//! Activation parameters and the backoff rules applied on congestion.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conflict {
    /// Another port published the same activation duration.
    SameDurationPublished,
    /// A monitor's detection matched this port and another one.
    SameDetectionPair,
    /// A verification pulse coincided with foreign light.
    VerifyConflict,
    /// No coincidence for a full quiet period.
    QuietPeriod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Last activation offset `T_i`.
    pub t: u64,
    /// Last pulse duration `D_i`.
    pub d: u64,
    /// Upper bound for the next offset draw.
    pub t_hi: u64,
    /// Upper bound for the next duration draw.
    pub d_hi: u64,
    pub t_init: u64,
    pub d_init: u64,
    pub t_max: u64,
    pub delta: u64,
}

impl Schedule {
    pub fn new(t_init: u64, d_init: u64, t_max: u64, delta: u64) -> Self {
        Self {
            t: 0,
            d: 1,
            t_hi: t_init,
            d_hi: d_init.max(1),
            t_init,
            d_init: d_init.max(1),
            t_max,
            delta,
        }
    }
}

pub fn backoff_update(s: Schedule, conflict: Conflict) -> Schedule {
    let mut s = s;
    match conflict {
        Conflict::SameDurationPublished => {
            s.t += s.delta;
            s.d += s.delta;
        }
        Conflict::SameDetectionPair => {
            s.t = (2 * s.t).max(1);
            s.d *= 2;
        }
        Conflict::VerifyConflict => s.t = s.t_max,
        Conflict::QuietPeriod => {
            s.t = s.t.saturating_sub(s.delta).max(s.t_init);
            s.t_hi = s.t_hi.saturating_sub(s.delta).max(s.t_init);
            s.d_hi = s.d_hi.saturating_sub(s.delta).max(s.d_init);
        }
    }
    s.t = s.t.min(s.t_max);
    s.d = s.d.clamp(1, s.t_max);
    if conflict != Conflict::QuietPeriod {
        s.t_hi = s.t_hi.max(s.t).min(s.t_max);
        s.d_hi = s.d_hi.max(s.d).min(s.t_max);
    }
    s
}

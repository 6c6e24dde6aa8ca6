//! Deterministic discrete-event kernel.
//!
//! Time advances in integer ticks of `t_act`. The kernel itself only orders
//! events; the optical plane, the classical bus and the bit-error model are
//! separate pieces that protocol drivers compose.

mod bus;
mod noise;
mod optical;
mod queue;
mod trace;

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::PortRef;

pub use bus::{Address, Bus, Envelope};
pub use noise::{bits_to_string, corrupt_bits, parse_bits, ErrorModel, NoiseStream};
pub use optical::{Drive, EmissionState, OpticalConfig, OpticalPlane, PulseObservation, SensorMode};
pub use queue::{Kernel, Scheduled};
pub use trace::{Trace, TraceRecord};

/// Simulation time in ticks; one tick is one `t_act`.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, rhs: u64) -> SimTime {
        SimTime(self.0.saturating_sub(rhs))
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl AddAssign<u64> for SimTime {
    fn add_assign(&mut self, rhs: u64) {
        self.0 += rhs;
    }
}

impl Sub for SimTime {
    type Output = u64;
    fn sub(self, rhs: SimTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event queue is empty")]
    EmptyQueue,
    #[error("cannot schedule at {at} before current time {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("{0} is not a controllable output")]
    NotAnOutput(PortRef),
    #[error("port {port} does not belong to switch {switch}")]
    PortNotOnSwitch { switch: String, port: String },
    #[error("no sensor available on {0}")]
    NoSensor(PortRef),
    #[error("unknown port {0}")]
    UnknownPort(PortRef),
    #[error("unknown detector {0}")]
    UnknownDetector(String),
    #[error("unknown recipient {0}")]
    UnknownRecipient(String),
}

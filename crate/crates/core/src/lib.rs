//! Simulation of automatic configuration protocols for quantum networks.

pub mod netmodel;
pub mod simkernel;
pub mod tdc;
pub mod pubsub;
pub mod pattern;
pub mod harness;

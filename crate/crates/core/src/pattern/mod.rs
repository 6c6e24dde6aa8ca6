//! Node-to-node discovery by decoding per-port optical patterns.

mod neighbor;
mod registry;
mod sim;

pub use neighbor::{write_neighbors, NeighborEntry, NeighborTable};
pub use registry::{assign_patterns, default_pattern_bits, PatternRegistry, RegistryError};
pub use sim::{run_pattern, PatternConfig, PatternError, PatternOutcome, PatternSim, REGISTRY_ADDR};

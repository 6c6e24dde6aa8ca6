//! Node-to-node discovery with single on-off pulses and pub/sub matching.

mod messages;
mod schedule;
mod sim;

pub use messages::{filter_extract, ActiveMsg, DetectMsg, PulseMsg, VerifyMsg, TOPIC_ACTIVE, TOPIC_DETECT};
pub use schedule::{backoff_update, Conflict, Schedule};
pub use sim::{run_pubsub, PubsubConfig, PubsubError, PubsubOutcome};

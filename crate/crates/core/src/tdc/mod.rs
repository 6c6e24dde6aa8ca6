//! Node-to-TDC channel identification.

mod agent;
mod codec;
mod messages;
mod runtime;
mod service;
mod sim;

pub use agent::{AgentAction, AgentError, AgentState, NodeAgent};
pub use codec::{
    decode_frame, decode_stream, encode_identifier, frame_len, pattern_bits, CodecError, StreamDecoder,
};
pub use messages::{IdErrorType, IdMessage, ServiceStatus};
pub use runtime::{parallel_runtime, serial_runtime};
pub use service::{DetectorKey, IdMode, Outgoing, Phase, TdcConfig, TdcService};
pub use sim::{run_tdc, TdcOutcome, TdcRunConfig, TdcSim, TDC_ADDR};

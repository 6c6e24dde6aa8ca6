//! The `ID_*` message family and its wire form.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IdErrorType {
    AlreadyConfigured,
    Timeout,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceStatus {
    Unconfigured,
    Configured,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IdMessage {
    IdReq {
        #[serde(rename = "NODE_ID")]
        node_id: String,
        #[serde(rename = "DETECTOR_ID")]
        detector_id: String,
    },
    IdStart {
        #[serde(rename = "DURATION")]
        duration: u64,
        #[serde(rename = "PATTERN", default, skip_serializing_if = "Option::is_none")]
        pattern: Option<String>,
    },
    IdRetry {
        #[serde(rename = "WAIT")]
        wait: u64,
    },
    IdError {
        #[serde(rename = "TYPE")]
        error: IdErrorType,
    },
    IdComplete {
        #[serde(rename = "NODE_ID")]
        node_id: String,
        #[serde(rename = "DETECTOR_ID")]
        detector_id: String,
        #[serde(rename = "CHAN_ID")]
        chan_id: u32,
    },
    IdLookupReq {
        #[serde(rename = "NODE_ID")]
        node_id: String,
        #[serde(rename = "DETECTOR_ID")]
        detector_id: String,
    },
    IdLookupConf {
        #[serde(rename = "NODE_ID")]
        node_id: String,
        #[serde(rename = "DETECTOR_ID")]
        detector_id: String,
        #[serde(rename = "CHAN_ID")]
        chan_id: u32,
    },
    IdLookupUnconf {
        #[serde(rename = "NODE_ID")]
        node_id: String,
        #[serde(rename = "DETECTOR_ID")]
        detector_id: String,
    },
    IdLookupError {},
    IdStatusReq {},
    IdStatus {
        #[serde(rename = "STATUS")]
        status: ServiceStatus,
    },
    IdStatusError {},
}

impl IdMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            IdMessage::IdReq { .. } => "ID_REQ",
            IdMessage::IdStart { .. } => "ID_START",
            IdMessage::IdRetry { .. } => "ID_RETRY",
            IdMessage::IdError { .. } => "ID_ERROR",
            IdMessage::IdComplete { .. } => "ID_COMPLETE",
            IdMessage::IdLookupReq { .. } => "ID_LOOKUP_REQ",
            IdMessage::IdLookupConf { .. } => "ID_LOOKUP_CONF",
            IdMessage::IdLookupUnconf { .. } => "ID_LOOKUP_UNCONF",
            IdMessage::IdLookupError {} => "ID_LOOKUP_ERROR",
            IdMessage::IdStatusReq {} => "ID_STATUS_REQ",
            IdMessage::IdStatus { .. } => "ID_STATUS",
            IdMessage::IdStatusError {} => "ID_STATUS_ERROR",
        }
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn from_wire(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

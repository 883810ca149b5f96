//! JSON text frames exchanged with the tablet client, schema version 1.
//!
//! Every frame is a flat object carrying `v`, `seq`, `t_ms` and a `type`
//! tag next to the payload fields:
//!
//! ```text
//! -> {"v":1,"seq":3,"t_ms":120.5,"type":"pose","x":0.25,"y":-0.5}
//! <- {"v":1,"seq":9,"t_ms":1450,"type":"spot","x_mm":0.498,"y_mm":-1.0}
//! ```
//!
//! Sequence numbers increase strictly per direction. Inbound `t_ms` is the
//! client clock; outbound `t_ms` is milliseconds since the service started.

use magscan_core::control::MappingMatrix;
use magscan_core::harness::{EndReason, SessionReport, ShapeId};
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Idle,
    Teleoperation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Pose {
        x: f64,
        y: f64,
    },
    /// Without `shape` the service's default shape is used.
    SessionStart {
        #[serde(default)]
        shape: Option<ShapeId>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        save_frames: Option<bool>,
    },
    SessionEnd,
    /// `idle` closes the running session; `teleoperation` may carry a
    /// mapping matrix for the next session.
    Mode {
        mode: ModeName,
        #[serde(default)]
        mapping: Option<MappingMatrix>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Spot {
        x_mm: f64,
        y_mm: f64,
    },
    Shape {
        id: ShapeId,
        points_mm: Vec<[f64; 2]>,
        band_mm: f64,
    },
    Mode {
        mode: ModeName,
    },
    SessionStart {
        session: String,
        shape: ShapeId,
    },
    SessionEnd {
        session: String,
        reason: EndReason,
        partial: bool,
        report: Box<SessionReport>,
    },
    Error {
        category: String,
        message: String,
    },
    Busy {
        message: String,
    },
}

impl ServerMessage {
    pub fn error(category: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            category: category.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame<T> {
    pub v: u32,
    pub seq: u64,
    pub t_ms: f64,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Frame<T> {
    pub fn new(seq: u64, t_ms: f64, body: T) -> Self {
        Self {
            v: WIRE_VERSION,
            seq,
            t_ms,
            body,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire frames always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0}, expected {WIRE_VERSION}")]
    Version(u32),
    #[error("sequence number {got} does not follow {last}")]
    Sequence { last: u64, got: u64 },
}

impl WireError {
    pub fn category(&self) -> &'static str {
        match self {
            WireError::Malformed(_) => "parse",
            WireError::Version(_) => "version",
            WireError::Sequence { .. } => "sequencing",
        }
    }
}

/// Parses inbound frames and enforces the version and sequence rules.
#[derive(Debug, Default)]
pub struct InboundDecoder {
    last_seq: Option<u64>,
}

impl InboundDecoder {
    pub fn decode(&mut self, text: &str) -> Result<Frame<ClientMessage>, WireError> {
        let frame: Frame<ClientMessage> = serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
        if frame.v != WIRE_VERSION {
            return Err(WireError::Version(frame.v));
        }
        if let Some(last) = self.last_seq {
            if frame.seq <= last {
                return Err(WireError::Sequence { last, got: frame.seq });
            }
        }
        if !frame.t_ms.is_finite() {
            return Err(WireError::Malformed("t_ms must be finite".into()));
        }
        self.last_seq = Some(frame.seq);
        Ok(frame)
    }
}

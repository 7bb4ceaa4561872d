//! Typed bodies carried inside [`Frame`](crate::frame::Frame)s.
//!
//! The twelve frame types are fixed; several of them carry a `kind` or
//! `stage` discriminator in the body to distinguish related exchanges.

use serde::{Deserialize, Serialize};

use crate::engine::RoundPlan;
use crate::field::FieldElement;
use crate::identity::{Fingerprint, PublicKey};
use crate::session::{Operation, ParticipantInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPurpose {
    /// Peer to gateway: pairing, heartbeats, session control.
    Control,
    /// Participant to participant protocol traffic for one session.
    Smc,
}

/// Body of `hello` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hello {
    HandshakeInit {
        public_key: PublicKey,
        /// X25519 ephemeral public key, hex.
        ephemeral: String,
        nonce: String,
        purpose: ChannelPurpose,
        #[serde(default)]
        session_id: Option<String>,
    },
    HandshakeReply {
        public_key: PublicKey,
        ephemeral: String,
        nonce: String,
        /// Signature over the handshake transcript, hex.
        signature: String,
    },
    HandshakeFinish {
        signature: String,
    },
    /// Peer asks to promote a paired connection to its control channel.
    Connect {
        name: String,
    },
    Connected,
    Echo {
        seq: u32,
        payload: serde_json::Value,
    },
    EchoReply {
        seq: u32,
        payload: serde_json::Value,
        /// Time the peer spent inside its adapter, microseconds.
        adapter_us: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub seq: u64,
    #[serde(default)]
    pub ack: bool,
}

/// Body of `pair_accept`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAccept {
    pub gateway: Fingerprint,
    pub groups: Vec<String>,
}

/// What every participant needs to join one session attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareOrder {
    pub plan: RoundPlan,
    pub operation: Operation,
    pub data_type: String,
    pub attempt: u32,
    /// Stable across attempts of one request, so a peer reuses its reading.
    pub request_id: String,
    /// Public keys of every other participant.
    pub trust: Vec<ParticipantInfo>,
}

/// Body of `session_prepare`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum SessionPrepare {
    Prepare(PrepareOrder),
    Ready,
    Start,
}

/// Durations a participant measured locally, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalTiming {
    /// Adapter `prepare` call, end to end.
    pub adapter_prepare_ms: f64,
    /// Adapter `execute` call, end to end.
    pub execute_call_ms: f64,
    /// Time spent inside the SMC instance executing the protocol.
    pub protocol_ms: f64,
}

impl LocalTiming {
    /// Adapter overhead: everything spent talking to the SMC instance that is
    /// not protocol execution.
    pub fn adapter_ms(&self) -> f64 {
        self.adapter_prepare_ms + (self.execute_call_ms - self.protocol_ms).max(0.0)
    }
}

/// Body of `session_result`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum SessionResult {
    /// Participant finished its part of the protocol.
    Done { timing: LocalTiming },
    /// Gateway tells participants the outcome.
    Teardown {
        result: FieldElement,
        contributors: usize,
        attempt: u32,
    },
}

/// Body of `session_abort`, in either direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAbort {
    pub reason: String,
    #[serde(default)]
    pub missing: Vec<Fingerprint>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn stage_tags() {
        let v = serde_json::to_value(SessionPrepare::Ready).unwrap();
        assert_eq!(v, json!({"stage": "ready"}));
        let back: SessionPrepare = serde_json::from_value(json!({"stage": "start"})).unwrap();
        assert_eq!(back, SessionPrepare::Start);
        let hb: Heartbeat = serde_json::from_value(json!({"seq": 4})).unwrap();
        assert!(!hb.ack);
    }

    #[test]
    fn hello_kinds() {
        let v = serde_json::to_value(Hello::Connect { name: "p1".into() }).unwrap();
        assert_eq!(v, json!({"kind": "connect", "name": "p1"}));
        let e: Hello = serde_json::from_value(json!({"kind": "echo", "seq": 1, "payload": [1, "x"]})).unwrap();
        assert_eq!(
            e,
            Hello::Echo {
                seq: 1,
                payload: json!([1, "x"])
            }
        );
    }

    #[test]
    fn adapter_share_of_timing() {
        let t = LocalTiming {
            adapter_prepare_ms: 0.5,
            execute_call_ms: 12.0,
            protocol_ms: 11.0,
        };
        assert!((t.adapter_ms() - 1.5).abs() < 1e-12);
    }
}

//! Length-prefixed JSON frames.
//!
//! Every frame on the wire is a 4-byte big-endian length followed by exactly
//! that many bytes of UTF-8 JSON:
//!
//! ```text
//! {"type":"heartbeat","sender":"<fingerprint>","session_id":null,"body":{...}}
//! ```
//!
//! Frames travelling over an authenticated channel carry an extra `auth`
//! member (sequence number and MAC tag) that the channel layer fills in.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Largest payload accepted in either direction.
pub const MAX_FRAME_LEN: usize = 1 << 20;

const LEN_PREFIX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Announce,
    PairRequest,
    PairAccept,
    Hello,
    Heartbeat,
    SessionPrepare,
    RoundMessage,
    SessionResult,
    SessionAbort,
    ClientRequest,
    ClientResponse,
    Error,
}

impl MessageType {
    pub const ALL: [MessageType; 12] = [
        MessageType::Announce,
        MessageType::PairRequest,
        MessageType::PairAccept,
        MessageType::Hello,
        MessageType::Heartbeat,
        MessageType::SessionPrepare,
        MessageType::RoundMessage,
        MessageType::SessionResult,
        MessageType::SessionAbort,
        MessageType::ClientRequest,
        MessageType::ClientResponse,
        MessageType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Announce => "announce",
            MessageType::PairRequest => "pair_request",
            MessageType::PairAccept => "pair_accept",
            MessageType::Hello => "hello",
            MessageType::Heartbeat => "heartbeat",
            MessageType::SessionPrepare => "session_prepare",
            MessageType::RoundMessage => "round_message",
            MessageType::SessionResult => "session_result",
            MessageType::SessionAbort => "session_abort",
            MessageType::ClientRequest => "client_request",
            MessageType::ClientResponse => "client_response",
            MessageType::Error => "error",
        }
    }
}

impl FromStr for MessageType {
    type Err = FrameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| FrameError::UnknownType(s.to_owned()))
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-frame authenticator added by a secure channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAuth {
    pub seq: u64,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub sender: String,
    pub session_id: Option<String>,
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<FrameAuth>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN} byte limit")]
    FrameTooLarge(usize),
    #[error("incomplete frame: have {have} bytes, need {need}")]
    Incomplete { have: usize, need: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("malformed frame json: {0}")]
    MalformedJson(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed {kind} body: {reason}")]
    MalformedBody { kind: MessageType, reason: String },
}

impl Frame {
    pub fn new<B: Serialize>(
        kind: MessageType,
        sender: impl Into<String>,
        session_id: Option<String>,
        body: &B,
    ) -> Self {
        Frame {
            kind,
            sender: sender.into(),
            session_id,
            body: serde_json::to_value(body).expect("message bodies serialize to json"),
            auth: None,
        }
    }

    pub fn body_as<T: DeserializeOwned>(&self) -> Result<T, FrameError> {
        T::deserialize(&self.body).map_err(|e| FrameError::MalformedBody {
            kind: self.kind,
            reason: e.to_string(),
        })
    }

    /// Canonical JSON of the frame without its authenticator; what a MAC covers.
    pub fn unauthenticated_bytes(&self) -> Vec<u8> {
        let mut bare = self.clone();
        bare.auth = None;
        serde_json::to_vec(&bare).expect("frames serialize to json")
    }
}

/// The JSON payload of a frame, without the length prefix.
pub fn encode_payload(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let payload = serde_json::to_vec(frame).map_err(|e| FrameError::MalformedJson(e.to_string()))?;
    if payload.len() > MAX_FRAME_LEN {
        return Err(FrameError::FrameTooLarge(payload.len()));
    }
    Ok(payload)
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let payload = encode_payload(frame)?;
    let mut out = Vec::with_capacity(LEN_PREFIX + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes exactly one complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < LEN_PREFIX {
        return Err(FrameError::Incomplete {
            have: bytes.len(),
            need: LEN_PREFIX,
        });
    }
    let len = declared_len(bytes);
    if len > MAX_FRAME_LEN {
        return Err(FrameError::FrameTooLarge(len));
    }
    let need = LEN_PREFIX + len;
    match bytes.len().cmp(&need) {
        std::cmp::Ordering::Less => Err(FrameError::Incomplete {
            have: bytes.len(),
            need,
        }),
        std::cmp::Ordering::Greater => Err(FrameError::TrailingBytes(bytes.len() - need)),
        std::cmp::Ordering::Equal => decode_payload(&bytes[LEN_PREFIX..]),
    }
}

/// Parses a frame payload (the JSON after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<Frame, FrameError> {
    let text = std::str::from_utf8(payload).map_err(|e| FrameError::MalformedJson(e.to_string()))?;
    let value: Value = serde_json::from_str(text).map_err(|e| FrameError::MalformedJson(e.to_string()))?;
    let Some(obj) = value.as_object() else {
        return Err(FrameError::MalformedJson("frame is not a json object".into()));
    };
    match obj.get("type") {
        Some(Value::String(t)) => {
            t.parse::<MessageType>()?;
        }
        _ => return Err(FrameError::MalformedJson("missing string field \"type\"".into())),
    }
    for field in ["sender", "session_id", "body"] {
        if !obj.contains_key(field) {
            return Err(FrameError::MalformedJson(format!("missing field {field:?}")));
        }
    }
    serde_json::from_value(value).map_err(|e| FrameError::MalformedJson(e.to_string()))
}

pub fn declared_len(bytes: &[u8]) -> usize {
    u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize
}

/// Incremental decoder for a byte stream. Partial input never yields a frame.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Returns the next complete frame, `Ok(None)` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if self.buf.len() < LEN_PREFIX {
            return Ok(None);
        }
        let len = declared_len(&self.buf);
        if len > MAX_FRAME_LEN {
            return Err(FrameError::FrameTooLarge(len));
        }
        if self.buf.len() < LEN_PREFIX + len {
            return Ok(None);
        }
        let rest = self.buf.split_off(LEN_PREFIX + len);
        let whole = std::mem::replace(&mut self.buf, rest);
        decode_payload(&whole[LEN_PREFIX..]).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn heartbeat() -> Frame {
        Frame::new(MessageType::Heartbeat, "ab".repeat(32), None, &json!({"seq": 1, "ack": false}))
    }

    #[test]
    fn prefix_is_big_endian_payload_length() {
        let bytes = encode_frame(&heartbeat()).unwrap();
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - 4);
        let text = std::str::from_utf8(&bytes[4..]).unwrap();
        assert!(text.starts_with(r#"{"type":"heartbeat","sender":""#));
        assert!(text.contains(r#""session_id":null"#));
    }

    #[test]
    fn type_strings_are_snake_case() {
        for t in MessageType::ALL {
            assert_eq!(serde_json::to_value(t).unwrap(), json!(t.as_str()));
            assert_eq!(t.as_str().parse::<MessageType>().unwrap(), t);
        }
        assert_eq!(MessageType::SessionPrepare.as_str(), "session_prepare");
        assert_eq!(MessageType::RoundMessage.as_str(), "round_message");
    }

    #[test]
    fn oversized_payload_rejected() {
        let big = "x".repeat(2 * MAX_FRAME_LEN);
        let frame = Frame::new(MessageType::Hello, "s", None, &json!({ "pad": big }));
        assert!(matches!(encode_frame(&frame), Err(FrameError::FrameTooLarge(_))));

        let mut forged = ((2 * MAX_FRAME_LEN) as u32).to_be_bytes().to_vec();
        forged.extend_from_slice(b"{}");
        assert!(matches!(decode_frame(&forged), Err(FrameError::FrameTooLarge(_))));
        let mut dec = FrameDecoder::new();
        dec.push(&forged);
        assert!(matches!(dec.next_frame(), Err(FrameError::FrameTooLarge(_))));
    }

    #[test]
    fn malformed_and_unknown_rejected() {
        let wrap = |s: &str| {
            let mut v = (s.len() as u32).to_be_bytes().to_vec();
            v.extend_from_slice(s.as_bytes());
            v
        };
        assert!(matches!(decode_frame(&wrap("{not json")), Err(FrameError::MalformedJson(_))));
        assert!(matches!(decode_frame(&wrap("[1,2]")), Err(FrameError::MalformedJson(_))));
        assert_eq!(
            decode_frame(&wrap(r#"{"type":"gossip","sender":"a","session_id":null,"body":{}}"#)),
            Err(FrameError::UnknownType("gossip".into()))
        );
        assert!(matches!(
            decode_frame(&wrap(r#"{"type":"hello","sender":"a","body":{}}"#)),
            Err(FrameError::MalformedJson(_))
        ));
        let ok = wrap(r#"{"type":"hello","sender":"a","session_id":"s1","body":{}}"#);
        assert_eq!(decode_frame(&ok).unwrap().session_id.as_deref(), Some("s1"));
        let mut trailing = ok.clone();
        trailing.push(b' ');
        assert_eq!(decode_frame(&trailing), Err(FrameError::TrailingBytes(1)));
    }

    #[test]
    fn decoder_handles_back_to_back_frames() {
        let a = encode_frame(&heartbeat()).unwrap();
        let b = encode_frame(&Frame::new(MessageType::Error, "gw", Some("s".into()), &json!({"code": "x"}))).unwrap();
        let mut dec = FrameDecoder::new();
        let mut stream = a.clone();
        stream.extend_from_slice(&b);
        dec.push(&stream);
        assert_eq!(dec.next_frame().unwrap().unwrap().kind, MessageType::Heartbeat);
        assert_eq!(dec.next_frame().unwrap().unwrap().kind, MessageType::Error);
        assert_eq!(dec.next_frame().unwrap(), None);
        assert_eq!(dec.buffered(), 0);
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (
            proptest::sample::select(MessageType::ALL.to_vec()),
            "[0-9a-f]{0,64}",
            proptest::option::of("[a-z0-9-]{1,20}"),
            proptest::collection::btree_map("[a-z_]{1,8}", ".{0,40}", 0..6),
            proptest::option::of((any::<u64>(), "[0-9a-f]{64}")),
        )
            .prop_map(|(kind, sender, session_id, body, auth)| Frame {
                kind,
                sender,
                session_id,
                body: serde_json::to_value(body).unwrap(),
                auth: auth.map(|(seq, tag)| FrameAuth { seq, tag }),
            })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(frame in arb_frame()) {
            let bytes = encode_frame(&frame).unwrap();
            let back = decode_frame(&bytes).unwrap();
            prop_assert_eq!(&back, &frame);
            prop_assert_eq!(encode_frame(&back).unwrap(), bytes);
        }

        #[test]
        fn partial_reads_never_yield_a_frame(frame in arb_frame(), cut in 0usize..10_000) {
            let bytes = encode_frame(&frame).unwrap();
            let cut = cut % bytes.len();
            let mut dec = FrameDecoder::new();
            dec.push(&bytes[..cut]);
            prop_assert_eq!(dec.next_frame().unwrap(), None);
            prop_assert!(decode_frame(&bytes[..cut]).is_err());
            dec.push(&bytes[cut..]);
            prop_assert_eq!(dec.next_frame().unwrap(), Some(frame));
        }

        #[test]
        fn byte_at_a_time_feeding(frame in arb_frame()) {
            let bytes = encode_frame(&frame).unwrap();
            let mut dec = FrameDecoder::new();
            let mut got = None;
            for (i, b) in bytes.iter().enumerate() {
                dec.push(std::slice::from_ref(b));
                let next = dec.next_frame().unwrap();
                if i + 1 < bytes.len() {
                    prop_assert!(next.is_none());
                } else {
                    got = next;
                }
            }
            prop_assert_eq!(got, Some(frame));
        }
    }
}

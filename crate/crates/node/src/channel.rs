//! Mutually authenticated, integrity-protected channels over a [`Link`].
//!
//! Handshake (three `hello` frames):
//!
//! 1. initiator -> responder: `handshake_init` with its identity key, an
//!    X25519 ephemeral key, a nonce, the channel purpose and session.
//! 2. responder -> initiator: `handshake_reply` with the same fields and a
//!    signature over the transcript hash.
//! 3. initiator -> responder: `handshake_finish` with its signature.
//!
//! Both sides derive two directional HMAC keys from the ephemeral
//! Diffie-Hellman secret, salted with the transcript hash. Every later frame
//! carries `auth = {seq, tag}`; a frame recorded on one channel fails the MAC
//! on any other, and an old sequence number is discarded.

use std::io;
use std::time::Duration;

use flexsmc_core::frame::{decode_payload, encode_payload, Frame, FrameAuth, FrameError, MessageType};
use flexsmc_core::identity::{Fingerprint, Identity, PublicKey};
use flexsmc_core::messages::{ChannelPurpose, Hello};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::Serialize;
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey as DhPublic, StaticSecret};

use crate::net::{Link, PayloadSink, PayloadSource};

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("fingerprint mismatch: expected {expected:?}, presented {presented:?}")]
    FingerprintMismatch {
        expected: Fingerprint,
        presented: Fingerprint,
    },
    #[error("handshake timed out")]
    HandshakeTimeout,
    #[error("refused: {0}")]
    Refused(String),
    #[error("handshake protocol violation: {0}")]
    Protocol(String),
    #[error("frame failed authentication")]
    AuthFailed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What the local side accepts as the remote identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    /// Pinned fingerprint; anything else is an impersonation attempt.
    Pinned(Fingerprint),
    /// Trust on first use: accept and let the caller pin the result.
    Tofu,
}

impl Expect {
    fn check(&self, presented: &PublicKey) -> Result<(), ChannelError> {
        match self {
            Expect::Pinned(fp) if *fp != presented.fingerprint() => Err(ChannelError::FingerprintMismatch {
                expected: fp.clone(),
                presented: presented.fingerprint(),
            }),
            _ => Ok(()),
        }
    }
}

/// Sending half of a secure channel.
pub struct SecureSender {
    sink: Box<dyn PayloadSink>,
    key: [u8; 32],
    seq: u64,
    local: Fingerprint,
}

/// Receiving half of a secure channel.
pub struct SecureReceiver {
    source: Box<dyn PayloadSource>,
    key: [u8; 32],
    last_seq: u64,
}

pub struct SecureChannel {
    pub local: Fingerprint,
    pub remote: PublicKey,
    pub purpose: ChannelPurpose,
    pub session_id: Option<String>,
    pub established_at: Duration,
    pub tx: SecureSender,
    pub rx: SecureReceiver,
}

impl SecureChannel {
    pub fn remote_fingerprint(&self) -> Fingerprint {
        self.remote.fingerprint()
    }

    pub fn split(self) -> (SecureSender, SecureReceiver) {
        (self.tx, self.rx)
    }
}

fn tag(key: &[u8; 32], seq: u64, frame: &Frame) -> String {
    let mut mac = HmacSha256::new_from_slice(key).expect("any key length");
    mac.update(&seq.to_be_bytes());
    mac.update(&frame.unauthenticated_bytes());
    hex::encode(mac.finalize().into_bytes())
}

fn verify_tag(key: &[u8; 32], seq: u64, frame: &Frame, tag_hex: &str) -> bool {
    let Ok(tag) = hex::decode(tag_hex) else {
        return false;
    };
    let mut mac = HmacSha256::new_from_slice(key).expect("any key length");
    mac.update(&seq.to_be_bytes());
    mac.update(&frame.unauthenticated_bytes());
    mac.verify_slice(&tag).is_ok()
}

impl SecureSender {
    pub fn local(&self) -> &Fingerprint {
        &self.local
    }

    pub async fn send<B: Serialize>(
        &mut self,
        kind: MessageType,
        session_id: Option<&str>,
        body: &B,
    ) -> Result<(), ChannelError> {
        let frame = Frame::new(kind, self.local.as_str(), session_id.map(str::to_owned), body);
        self.send_frame(frame).await
    }

    pub async fn send_frame(&mut self, mut frame: Frame) -> Result<(), ChannelError> {
        self.seq += 1;
        frame.auth = None;
        let tag = tag(&self.key, self.seq, &frame);
        frame.auth = Some(FrameAuth { seq: self.seq, tag });
        self.sink.send(encode_payload(&frame)?).await?;
        Ok(())
    }

    pub async fn close(&mut self) {
        self.sink.close().await;
    }
}

impl SecureReceiver {
    /// Next authenticated frame, `None` at end of stream. Frames repeating an
    /// already seen sequence number are discarded silently.
    pub async fn recv(&mut self) -> Result<Option<Frame>, ChannelError> {
        loop {
            let Some(payload) = self.source.recv().await? else {
                return Ok(None);
            };
            let mut frame = decode_payload(&payload)?;
            let Some(auth) = frame.auth.take() else {
                return Err(ChannelError::AuthFailed);
            };
            if !verify_tag(&self.key, auth.seq, &frame, &auth.tag) {
                return Err(ChannelError::AuthFailed);
            }
            if auth.seq <= self.last_seq {
                continue;
            }
            self.last_seq = auth.seq;
            return Ok(Some(frame));
        }
    }
}

struct Offer {
    public_key: PublicKey,
    ephemeral: [u8; 32],
    nonce: [u8; 16],
}

fn transcript(purpose: ChannelPurpose, session: Option<&str>, init: &Offer, reply: &Offer) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"flexsmc-channel-v1");
    h.update(match purpose {
        ChannelPurpose::Control => b"control".as_slice(),
        ChannelPurpose::Smc => b"smc".as_slice(),
    });
    h.update(session.unwrap_or("").as_bytes());
    h.update([0u8]);
    for o in [init, reply] {
        h.update(o.public_key.to_hex().as_bytes());
        h.update(o.ephemeral);
        h.update(o.nonce);
    }
    h.finalize().into()
}

fn signed(transcript: &[u8; 32], role: &[u8]) -> Vec<u8> {
    let mut m = transcript.to_vec();
    m.extend_from_slice(role);
    m
}

fn derive_keys(secret: &StaticSecret, remote_eph: &[u8; 32], transcript: &[u8; 32]) -> ([u8; 32], [u8; 32]) {
    let shared = secret.diffie_hellman(&DhPublic::from(*remote_eph));
    let hk = Hkdf::<Sha256>::new(Some(transcript), shared.as_bytes());
    let mut i2r = [0u8; 32];
    let mut r2i = [0u8; 32];
    hk.expand(b"initiator to responder", &mut i2r).expect("32 bytes");
    hk.expand(b"responder to initiator", &mut r2i).expect("32 bytes");
    (i2r, r2i)
}

fn hex32(s: &str) -> Result<[u8; 32], ChannelError> {
    hex::decode(s)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| ChannelError::Protocol("bad 32-byte hex field".into()))
}

fn hex16(s: &str) -> Result<[u8; 16], ChannelError> {
    hex::decode(s)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| ChannelError::Protocol("bad nonce".into()))
}

async fn send_hello(sink: &mut dyn PayloadSink, sender: &Fingerprint, session: Option<&str>, hello: &Hello) -> Result<(), ChannelError> {
    let frame = Frame::new(MessageType::Hello, sender.as_str(), session.map(str::to_owned), hello);
    sink.send(encode_payload(&frame)?).await?;
    Ok(())
}

async fn recv_hello(source: &mut dyn PayloadSource) -> Result<Hello, ChannelError> {
    let payload = source
        .recv()
        .await?
        .ok_or_else(|| ChannelError::Refused("connection closed during handshake".into()))?;
    let frame = decode_payload(&payload)?;
    match frame.kind {
        MessageType::Hello => Ok(frame.body_as()?),
        MessageType::Error => {
            let msg = frame.body.get("message").and_then(|m| m.as_str()).unwrap_or("refused");
            Err(ChannelError::Refused(msg.to_owned()))
        }
        other => Err(ChannelError::Protocol(format!("expected hello, got {}", other.as_str()))),
    }
}

fn offer<R: RngCore>(identity: &Identity, rng: &mut R) -> (StaticSecret, Offer) {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let secret = StaticSecret::from(seed);
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let o = Offer {
        public_key: identity.public_key(),
        ephemeral: DhPublic::from(&secret).to_bytes(),
        nonce,
    };
    (secret, o)
}

/// Dials side of the handshake. `timeout` bounds the whole exchange.
#[allow(clippy::too_many_arguments)]
pub async fn open_secure_channel<R: RngCore>(
    identity: &Identity,
    link: Link,
    purpose: ChannelPurpose,
    session_id: Option<&str>,
    expect: &Expect,
    timeout: Duration,
    now: Duration,
    rng: &mut R,
) -> Result<SecureChannel, ChannelError> {
    let (secret, mine) = offer(identity, rng);
    let local = identity.fingerprint();
    let Link { mut tx, mut rx, .. } = link;
    let fut = async {
        send_hello(
            tx.as_mut(),
            &local,
            session_id,
            &Hello::HandshakeInit {
                public_key: mine.public_key,
                ephemeral: hex::encode(mine.ephemeral),
                nonce: hex::encode(mine.nonce),
                purpose,
                session_id: session_id.map(str::to_owned),
            },
        )
        .await?;
        let Hello::HandshakeReply {
            public_key,
            ephemeral,
            nonce,
            signature,
        } = recv_hello(rx.as_mut()).await?
        else {
            return Err(ChannelError::Protocol("expected handshake_reply".into()));
        };
        let theirs = Offer {
            public_key,
            ephemeral: hex32(&ephemeral)?,
            nonce: hex16(&nonce)?,
        };
        let th = transcript(purpose, session_id, &mine, &theirs);
        let sig = hex::decode(&signature).map_err(|_| ChannelError::Protocol("bad signature hex".into()))?;
        if !theirs.public_key.verify(&signed(&th, b"responder"), &sig) {
            return Err(ChannelError::Protocol("responder signature invalid".into()));
        }
        expect.check(&theirs.public_key)?;
        send_hello(
            tx.as_mut(),
            &local,
            session_id,
            &Hello::HandshakeFinish {
                signature: hex::encode(identity.sign(&signed(&th, b"initiator"))),
            },
        )
        .await?;
        let (i2r, r2i) = derive_keys(&secret, &theirs.ephemeral, &th);
        Ok((theirs.public_key, i2r, r2i))
    };
    let (remote, i2r, r2i) = tokio::time::timeout(timeout, fut)
        .await
        .map_err(|_| ChannelError::HandshakeTimeout)??;
    Ok(SecureChannel {
        local: local.clone(),
        remote,
        purpose,
        session_id: session_id.map(str::to_owned),
        established_at: now,
        tx: SecureSender {
            sink: tx,
            key: i2r,
            seq: 0,
            local,
        },
        rx: SecureReceiver {
            source: rx,
            key: r2i,
            last_seq: 0,
        },
    })
}

/// What the responder learns from `handshake_init` before committing.
pub struct InitInfo {
    pub public_key: PublicKey,
    pub purpose: ChannelPurpose,
    pub session_id: Option<String>,
}

/// Accepting side. `decide` sees the claimed identity and purpose and returns
/// the expectation to enforce, or a refusal reason.
pub async fn accept_secure_channel<R, F>(
    identity: &Identity,
    link: Link,
    decide: F,
    timeout: Duration,
    now: Duration,
    rng: &mut R,
) -> Result<SecureChannel, ChannelError>
where
    R: RngCore,
    F: FnOnce(&InitInfo) -> Result<Expect, String>,
{
    let local = identity.fingerprint();
    let Link { mut tx, mut rx, .. } = link;
    let (secret, mine) = offer(identity, rng);
    let fut = async {
        let Hello::HandshakeInit {
            public_key,
            ephemeral,
            nonce,
            purpose,
            session_id,
        } = recv_hello(rx.as_mut()).await?
        else {
            return Err(ChannelError::Protocol("expected handshake_init".into()));
        };
        let info = InitInfo {
            public_key,
            purpose,
            session_id: session_id.clone(),
        };
        let expect = match decide(&info) {
            Ok(e) => e,
            Err(reason) => {
                let frame = Frame::new(
                    MessageType::Error,
                    local.as_str(),
                    session_id.clone(),
                    &serde_json::json!({"code": "bad_request", "message": reason}),
                );
                let _ = tx.send(encode_payload(&frame)?).await;
                return Err(ChannelError::Refused(reason));
            }
        };
        let theirs = Offer {
            public_key,
            ephemeral: hex32(&ephemeral)?,
            nonce: hex16(&nonce)?,
        };
        let th = transcript(purpose, session_id.as_deref(), &theirs, &mine);
        send_hello(
            tx.as_mut(),
            &local,
            session_id.as_deref(),
            &Hello::HandshakeReply {
                public_key: mine.public_key,
                ephemeral: hex::encode(mine.ephemeral),
                nonce: hex::encode(mine.nonce),
                signature: hex::encode(identity.sign(&signed(&th, b"responder"))),
            },
        )
        .await?;
        let Hello::HandshakeFinish { signature } = recv_hello(rx.as_mut()).await? else {
            return Err(ChannelError::Protocol("expected handshake_finish".into()));
        };
        let sig = hex::decode(&signature).map_err(|_| ChannelError::Protocol("bad signature hex".into()))?;
        if !theirs.public_key.verify(&signed(&th, b"initiator"), &sig) {
            return Err(ChannelError::Protocol("initiator signature invalid".into()));
        }
        expect.check(&theirs.public_key)?;
        let (i2r, r2i) = derive_keys(&secret, &theirs.ephemeral, &th);
        Ok((theirs.public_key, purpose, session_id, i2r, r2i))
    };
    let (remote, purpose, session_id, i2r, r2i) = tokio::time::timeout(timeout, fut)
        .await
        .map_err(|_| ChannelError::HandshakeTimeout)??;
    Ok(SecureChannel {
        local: local.clone(),
        remote,
        purpose,
        session_id,
        established_at: now,
        tx: SecureSender {
            sink: tx,
            key: r2i,
            seq: 0,
            local,
        },
        rx: SecureReceiver {
            source: rx,
            key: i2r,
            last_seq: 0,
        },
    })
}

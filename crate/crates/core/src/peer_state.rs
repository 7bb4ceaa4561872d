//! Peer lifecycle: Discovery -> Pairing -> Connecting -> Operation.
//!
//! Transition table (anything else is [`IllegalTransition`]):
//!
//! | from       | event                         | to         |
//! |------------|-------------------------------|------------|
//! | Discovery  | GatewayFound                  | Pairing    |
//! | Pairing    | PairOk                        | Connecting |
//! | Pairing    | PairFail                      | Discovery  |
//! | Connecting | ChannelUp                     | Operation  |
//! | Connecting | PairFail                      | Discovery  |
//! | Pairing, Connecting, Operation | ChannelLost   | Discovery  |
//! | Operation  | HeartbeatAckMissed            | Discovery  |
//!
//! A permanent `PairFail` excludes the failed gateway from the next
//! selection round.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::discovery::GatewayTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Discovery,
    Pairing,
    Connecting,
    Operation,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Discovery, Phase::Pairing, Phase::Connecting, Phase::Operation];
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Discovery => "discovery",
            Phase::Pairing => "pairing",
            Phase::Connecting => "connecting",
            Phase::Operation => "operation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transient,
    Permanent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PeerEvent {
    GatewayFound(GatewayTarget),
    PairOk,
    PairFail(FailureKind),
    ChannelUp,
    ChannelLost,
    HeartbeatAckMissed,
}

impl PeerEvent {
    pub fn name(&self) -> &'static str {
        match self {
            PeerEvent::GatewayFound(_) => "gateway_found",
            PeerEvent::PairOk => "pair_ok",
            PeerEvent::PairFail(_) => "pair_fail",
            PeerEvent::ChannelUp => "channel_up",
            PeerEvent::ChannelLost => "channel_lost",
            PeerEvent::HeartbeatAckMissed => "heartbeat_ack_missed",
        }
    }
}

/// Current phase plus the context carried across transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerState {
    pub phase: Phase,
    pub gateway: Option<GatewayTarget>,
    /// Gateway to skip in the next selection after a permanent failure.
    pub excluded: Option<GatewayTarget>,
    /// Consecutive failed attempts since the last time Operation was reached.
    pub retries: u32,
}

impl Default for PeerState {
    fn default() -> Self {
        PeerState {
            phase: Phase::Discovery,
            gateway: None,
            excluded: None,
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition: {event} in {from}")]
pub struct IllegalTransition {
    pub from: Phase,
    pub event: &'static str,
}

impl PeerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Takes the exclusion for the next selection round, clearing it.
    pub fn take_exclusion(&mut self) -> Option<GatewayTarget> {
        self.excluded.take()
    }
}

pub fn advance(state: &PeerState, event: PeerEvent) -> Result<PeerState, IllegalTransition> {
    use Phase::*;
    let illegal = || IllegalTransition {
        from: state.phase,
        event: event.name(),
    };
    let mut next = state.clone();
    match (state.phase, &event) {
        (Discovery, PeerEvent::GatewayFound(ann)) => {
            next.phase = Pairing;
            next.gateway = Some(ann.clone());
        }
        (Pairing, PeerEvent::PairOk) => next.phase = Connecting,
        (Connecting, PeerEvent::ChannelUp) => {
            next.phase = Operation;
            next.retries = 0;
        }
        (Pairing | Connecting, PeerEvent::PairFail(kind)) => {
            if *kind == FailureKind::Permanent {
                next.excluded = state.gateway.clone();
            }
            next.retries += 1;
            next.phase = Discovery;
            next.gateway = None;
        }
        (Pairing | Connecting | Operation, PeerEvent::ChannelLost) | (Operation, PeerEvent::HeartbeatAckMissed) => {
            if state.phase != Operation {
                next.retries += 1;
            }
            next.phase = Discovery;
            next.gateway = None;
        }
        _ => return Err(illegal()),
    }
    Ok(next)
}

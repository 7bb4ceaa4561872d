//! Fault plans for the simulated network.
//!
//! Nodes are named (`"gateway"`, `"peer1"`, ...); a link is the set of all
//! connections between two named nodes.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::RoundKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    FixedMs(f64),
    /// Uniform in `[lo, hi]` milliseconds.
    UniformMs(f64, f64),
}

impl Default for Latency {
    fn default() -> Self {
        Latency::FixedMs(0.2)
    }
}

impl Latency {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Duration {
        let ms = match *self {
            Latency::FixedMs(v) => v,
            Latency::UniformMs(lo, hi) if hi > lo => rng.gen_range(lo..=hi),
            Latency::UniformMs(lo, _) => lo,
        };
        Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }
}

/// Silently drops every frame between `a` and `b` from `at_ms` after the plan
/// is armed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDrop {
    pub a: String,
    pub b: String,
    #[serde(default)]
    pub at_ms: u64,
}

/// From the first protocol frame of `round` (or later) the peer sends, all
/// its links go silent in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerKill {
    pub peer: String,
    pub round: RoundKind,
}

/// Closes the protocol channel between `a` and `b` when the first frame of
/// `round` crosses it. Fires once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelClose {
    pub a: String,
    pub b: String,
    pub round: RoundKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub latency: Latency,
    #[serde(default)]
    pub drop_link_at: Vec<LinkDrop>,
    #[serde(default)]
    pub kill_peer_at: Vec<PeerKill>,
    #[serde(default)]
    pub close_channel_at: Vec<ChannelClose>,
    /// Deliver every frame twice.
    #[serde(default)]
    pub duplicate: bool,
    /// Let frames on one connection overtake each other.
    #[serde(default)]
    pub reorder: bool,
}

impl FaultPlan {
    pub fn is_empty(&self) -> bool {
        self.drop_link_at.is_empty()
            && self.kill_peer_at.is_empty()
            && self.close_channel_at.is_empty()
            && !self.duplicate
            && !self.reorder
    }
}

pub fn same_link(a: &str, b: &str, x: &str, y: &str) -> bool {
    (a == x && b == y) || (a == y && b == x)
}

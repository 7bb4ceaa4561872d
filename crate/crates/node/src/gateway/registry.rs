//! Paired peers, their liveness and the groups they form.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use flexsmc_core::discovery::PeerMetadata;
use flexsmc_core::identity::{Fingerprint, PublicKey};
use flexsmc_core::liveness::{Liveness, LivenessPolicy};
use flexsmc_core::session::{Catalog, CatalogGroup, CatalogPeer, ParticipantInfo};
use tokio::sync::{mpsc, Notify};

use super::Outgoing;

pub(crate) struct PeerEntry {
    pub metadata: PeerMetadata,
    pub public_key: PublicKey,
    pub liveness: Liveness,
    pub last_heartbeat: Duration,
    /// Generation of the control connection currently owning this entry.
    pub conn: u64,
    pub control: Option<mpsc::UnboundedSender<Outgoing>>,
    pub close: Arc<Notify>,
}

impl PeerEntry {
    pub fn info(&self) -> ParticipantInfo {
        ParticipantInfo {
            fingerprint: self.metadata.fingerprint.clone(),
            public_key: self.public_key,
            endpoint: self.metadata.endpoint.clone(),
        }
    }
}

/// Read-only view of one registry entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerView {
    pub name: String,
    pub fingerprint: Fingerprint,
    pub liveness: Liveness,
    pub connected: bool,
    pub groups: Vec<String>,
}

#[derive(Default)]
pub(crate) struct Registry {
    pub peers: BTreeMap<String, PeerEntry>,
    /// Peers taking part in a running session.
    pub busy: BTreeSet<Fingerprint>,
}

impl Registry {
    pub fn by_fingerprint(&self, fp: &Fingerprint) -> Option<&PeerEntry> {
        self.peers.values().find(|e| &e.metadata.fingerprint == fp)
    }

    pub fn is_active(&self, fp: &Fingerprint) -> bool {
        self.by_fingerprint(fp).is_some_and(|e| e.liveness == Liveness::Active)
    }

    pub fn group_known(&self, label: &str) -> bool {
        self.peers.values().any(|e| e.metadata.groups.iter().any(|g| g == label))
    }

    /// Active members of `label` offering `capability`, by fingerprint.
    pub fn active_members(&self, label: &str, capability: &str) -> Vec<ParticipantInfo> {
        let mut out: Vec<ParticipantInfo> = self
            .peers
            .values()
            .filter(|e| e.liveness == Liveness::Active && e.control.is_some())
            .filter(|e| e.metadata.groups.iter().any(|g| g == label))
            .filter(|e| e.metadata.capabilities.iter().any(|c| c == capability))
            .map(PeerEntry::info)
            .collect();
        out.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        out
    }

    /// Reclassifies every connected entry. Returns newly unlisted entries'
    /// close signals and fingerprints.
    pub fn sweep(&mut self, now: Duration, policy: &LivenessPolicy) -> Vec<(Fingerprint, Arc<Notify>)> {
        let mut unlisted = Vec::new();
        for e in self.peers.values_mut() {
            if e.liveness == Liveness::Unlisted {
                continue;
            }
            let verdict = policy.classify(now.saturating_sub(e.last_heartbeat));
            if verdict == Liveness::Unlisted {
                e.control = None;
                unlisted.push((e.metadata.fingerprint.clone(), e.close.clone()));
            }
            e.liveness = verdict;
        }
        unlisted
    }

    pub fn catalog(&self) -> Catalog {
        let active: Vec<&PeerEntry> = self.peers.values().filter(|e| e.liveness == Liveness::Active).collect();
        let mut groups: BTreeMap<String, Vec<Fingerprint>> = BTreeMap::new();
        let mut caps = BTreeSet::new();
        let mut peers = Vec::new();
        for e in &active {
            for g in &e.metadata.groups {
                groups.entry(g.clone()).or_default().push(e.metadata.fingerprint.clone());
            }
            caps.extend(e.metadata.capabilities.iter().cloned());
            peers.push(CatalogPeer {
                fingerprint: e.metadata.fingerprint.clone(),
                location: e.metadata.location.clone(),
                capabilities: e.metadata.capabilities.clone(),
            });
        }
        peers.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        Catalog {
            groups: groups
                .into_iter()
                .map(|(label, mut members)| {
                    members.sort();
                    CatalogGroup { label, members }
                })
                .collect(),
            peers,
            capabilities: caps.into_iter().collect(),
        }
    }

    pub fn views(&self) -> Vec<PeerView> {
        self.peers
            .iter()
            .map(|(name, e)| PeerView {
                name: name.clone(),
                fingerprint: e.metadata.fingerprint.clone(),
                liveness: e.liveness,
                connected: e.control.is_some(),
                groups: e.metadata.groups.clone(),
            })
            .collect()
    }
}

//! Gateway announcements, gateway selection and peer metadata.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::identity::Fingerprint;

/// Protocol identifier every peer must support.
pub const SUM_PROTOCOL: &str = "shamir_sum_v1";

/// Default re-broadcast period of announcements.
pub const ANNOUNCE_PERIOD: Duration = Duration::from_secs(2);

/// Cache entries expire after this many missed periods.
pub const MISSED_PERIODS_BEFORE_EXPIRY: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayAnnouncement {
    pub fingerprint: Fingerprint,
    /// Control endpoint peers connect to for pairing.
    pub endpoint: String,
    #[serde(default)]
    pub client_endpoint: Option<String>,
    pub location: String,
    pub purpose: String,
    pub protocols: Vec<String>,
}

/// Where a peer tries to pair: an announced gateway, or a statically
/// configured endpoint whose fingerprint may be unknown until first contact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayTarget {
    pub endpoint: String,
    #[serde(default)]
    pub fingerprint: Option<Fingerprint>,
}

impl From<&GatewayAnnouncement> for GatewayTarget {
    fn from(ann: &GatewayAnnouncement) -> Self {
        GatewayTarget {
            endpoint: ann.endpoint.clone(),
            fingerprint: Some(ann.fingerprint.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionPolicy {
    Manual {
        fingerprint: Fingerprint,
    },
    Auto {
        #[serde(default)]
        location: Option<String>,
        #[serde(default)]
        purpose: Option<String>,
    },
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::Auto {
            location: None,
            purpose: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("no gateway candidates")]
    NoCandidates,
    #[error("manually selected gateway {0:?} was not announced")]
    ManualTargetAbsent(Fingerprint),
}

/// Picks a gateway. `Auto` prefers a matching location, then a matching
/// purpose, then the lowest fingerprint.
pub fn select_gateway<'a>(
    candidates: &'a [GatewayAnnouncement],
    policy: &SelectionPolicy,
) -> Result<&'a GatewayAnnouncement, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    match policy {
        SelectionPolicy::Manual { fingerprint } => candidates
            .iter()
            .find(|c| &c.fingerprint == fingerprint)
            .ok_or_else(|| SelectionError::ManualTargetAbsent(fingerprint.clone())),
        SelectionPolicy::Auto { location, purpose } => {
            let score = |c: &GatewayAnnouncement| {
                let loc = location.as_deref() == Some(c.location.as_str());
                let pur = purpose.as_deref() == Some(c.purpose.as_str());
                (!loc, !pur)
            };
            Ok(candidates
                .iter()
                .min_by(|a, b| score(a).cmp(&score(b)).then_with(|| a.fingerprint.cmp(&b.fingerprint)))
                .expect("nonempty"))
        }
    }
}

/// Announcements seen recently, keyed by fingerprint.
#[derive(Debug, Clone, Default)]
pub struct DiscoveryCache {
    entries: BTreeMap<Fingerprint, (GatewayAnnouncement, Duration)>,
}

impl DiscoveryCache {
    pub fn observe(&mut self, ann: GatewayAnnouncement, now: Duration) {
        self.entries.insert(ann.fingerprint.clone(), (ann, now));
    }

    /// Drops entries older than three periods and returns the rest.
    pub fn live(&mut self, now: Duration, period: Duration) -> Vec<GatewayAnnouncement> {
        let horizon = period * MISSED_PERIODS_BEFORE_EXPIRY;
        self.entries.retain(|_, (_, seen)| now.saturating_sub(*seen) <= horizon);
        self.entries.values().map(|(a, _)| a.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// What a peer tells the gateway about itself while pairing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerMetadata {
    /// Stable node name; re-pairing under the same name must reuse the key.
    pub name: String,
    pub fingerprint: Fingerprint,
    /// Endpoint for protocol channels.
    pub endpoint: String,
    pub location: String,
    pub capabilities: Vec<String>,
    pub protocols: Vec<String>,
    /// Filled in by the gateway.
    #[serde(default)]
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetadataError {
    #[error("peer advertises no capabilities")]
    NoCapabilities,
    #[error("peer does not support {SUM_PROTOCOL}")]
    UnsupportedProtocol,
}

impl PeerMetadata {
    pub fn validate(&self) -> Result<(), MetadataError> {
        if self.capabilities.is_empty() {
            return Err(MetadataError::NoCapabilities);
        }
        if !self.protocols.iter().any(|p| p == SUM_PROTOCOL) {
            return Err(MetadataError::UnsupportedProtocol);
        }
        Ok(())
    }

    /// `"<location>/<capability>"` for every capability.
    pub fn derive_groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = self.capabilities.iter().map(|c| group_label(&self.location, c)).collect();
        groups.sort();
        groups.dedup();
        groups
    }
}

pub fn group_label(location: &str, capability: &str) -> String {
    format!("{location}/{capability}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(c: char) -> Fingerprint {
        Fingerprint::parse(&c.to_string().repeat(64)).unwrap()
    }

    fn ann(c: char, location: &str, purpose: &str) -> GatewayAnnouncement {
        GatewayAnnouncement {
            fingerprint: fp(c),
            endpoint: format!("gw-{c}:7000"),
            client_endpoint: None,
            location: location.into(),
            purpose: purpose.into(),
            protocols: vec![SUM_PROTOCOL.into()],
        }
    }

    #[test]
    fn singleton_auto() {
        let c = [ann('a', "floor1", "stats")];
        assert_eq!(select_gateway(&c, &SelectionPolicy::default()).unwrap(), &c[0]);
    }

    #[test]
    fn tie_break_is_lowest_fingerprint() {
        let c = [ann('b', "x", "y"), ann('a', "x", "y")];
        assert_eq!(select_gateway(&c, &SelectionPolicy::default()).unwrap().fingerprint, fp('a'));
        let reversed = [c[1].clone(), c[0].clone()];
        assert_eq!(select_gateway(&reversed, &SelectionPolicy::default()).unwrap().fingerprint, fp('a'));
    }

    #[test]
    fn auto_prefers_location_then_purpose() {
        let c = [ann('a', "floor1", "stats"), ann('b', "floor2", "hvac"), ann('c', "floor2", "stats")];
        let policy = SelectionPolicy::Auto {
            location: Some("floor2".into()),
            purpose: Some("stats".into()),
        };
        assert_eq!(select_gateway(&c, &policy).unwrap().fingerprint, fp('c'));
        let loc_only = SelectionPolicy::Auto {
            location: Some("floor2".into()),
            purpose: None,
        };
        assert_eq!(select_gateway(&c, &loc_only).unwrap().fingerprint, fp('b'));
        let purpose_only = SelectionPolicy::Auto {
            location: None,
            purpose: Some("hvac".into()),
        };
        assert_eq!(select_gateway(&c, &purpose_only).unwrap().fingerprint, fp('b'));
    }

    #[test]
    fn manual_and_empty() {
        let c = [ann('a', "x", "y")];
        let absent = SelectionPolicy::Manual { fingerprint: fp('f') };
        assert_eq!(select_gateway(&c, &absent), Err(SelectionError::ManualTargetAbsent(fp('f'))));
        let present = SelectionPolicy::Manual { fingerprint: fp('a') };
        assert_eq!(select_gateway(&c, &present).unwrap().fingerprint, fp('a'));
        assert_eq!(select_gateway(&[], &SelectionPolicy::default()), Err(SelectionError::NoCandidates));
    }

    #[test]
    fn cache_expires_after_three_periods() {
        let mut cache = DiscoveryCache::default();
        let period = Duration::from_secs(2);
        cache.observe(ann('a', "x", "y"), Duration::from_secs(0));
        cache.observe(ann('b', "x", "y"), Duration::from_secs(4));
        assert_eq!(cache.live(Duration::from_secs(6), period).len(), 2);
        let live = cache.live(Duration::from_secs(7), period);
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].fingerprint, fp('b'));
    }

    #[test]
    fn metadata_rules() {
        let mut m = PeerMetadata {
            name: "p1".into(),
            fingerprint: fp('1'),
            endpoint: "p1:7100".into(),
            location: "floor2".into(),
            capabilities: vec!["temperature_c".into(), "presence_count".into()],
            protocols: vec![SUM_PROTOCOL.into()],
            groups: vec![],
        };
        assert_eq!(m.validate(), Ok(()));
        assert_eq!(m.derive_groups(), vec!["floor2/presence_count", "floor2/temperature_c"]);
        m.protocols.clear();
        assert_eq!(m.validate(), Err(MetadataError::UnsupportedProtocol));
        m.capabilities.clear();
        assert_eq!(m.validate(), Err(MetadataError::NoCapabilities));
    }
}

//! Heartbeat-based liveness classification.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Liveness {
    Active,
    Suspect,
    Unlisted,
}

/// A window is one heartbeat interval plus half an interval of slack, so
/// ordinary jitter never counts as a miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessPolicy {
    pub interval: Duration,
    pub suspect_after: u32,
    pub unlist_after: u32,
}

impl Default for LivenessPolicy {
    fn default() -> Self {
        LivenessPolicy {
            interval: Duration::from_secs(1),
            suspect_after: 1,
            unlist_after: 3,
        }
    }
}

impl LivenessPolicy {
    pub fn grace(&self) -> Duration {
        self.interval / 2
    }

    pub fn classify(&self, since_last_heartbeat: Duration) -> Liveness {
        if since_last_heartbeat > self.interval * self.unlist_after + self.grace() {
            Liveness::Unlisted
        } else if since_last_heartbeat > self.interval * self.suspect_after + self.grace() {
            Liveness::Suspect
        } else {
            Liveness::Active
        }
    }

    /// How often the monitor should re-evaluate.
    pub fn check_period(&self) -> Duration {
        self.interval / 4
    }

    /// Worst-case delay from the last heartbeat to being unlisted.
    pub fn detection_bound(&self) -> Duration {
        self.interval * self.unlist_after + self.grace() + self.check_period()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn thresholds() {
        let p = LivenessPolicy::default();
        assert_eq!(p.classify(ms(900)), Liveness::Active);
        assert_eq!(p.classify(ms(1400)), Liveness::Active);
        assert_eq!(p.classify(ms(1600)), Liveness::Suspect);
        assert_eq!(p.classify(ms(3400)), Liveness::Suspect);
        assert_eq!(p.classify(ms(3600)), Liveness::Unlisted);
    }

    #[test]
    fn detection_bound_within_three_intervals_plus_a_window() {
        let p = LivenessPolicy::default();
        assert!(p.detection_bound() <= p.interval * 3 + p.interval);
    }
}

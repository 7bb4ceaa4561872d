//! Trust-on-first-use store: pinned public keys, persisted as JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use flexsmc_core::identity::{Fingerprint, PublicKey};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub public_key: PublicKey,
    /// Unix seconds.
    pub first_seen: u64,
    /// Stable name the key was pinned under, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrustError {
    #[error("{label:?} is pinned to {pinned:?} but presented {presented:?}")]
    FingerprintMismatch {
        label: String,
        pinned: Fingerprint,
        presented: Fingerprint,
    },
    #[error("trust store {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trust store {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct TrustStore {
    path: Option<PathBuf>,
    entries: BTreeMap<Fingerprint, TrustEntry>,
}

impl TrustStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the store at `path`, or starts empty if the file does not exist.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TrustError> {
        let path = path.as_ref().to_path_buf();
        let entries = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|source| TrustError::Json {
                path: path.clone(),
                source,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(TrustError::Io { path, source }),
        };
        Ok(TrustStore {
            path: Some(path),
            entries,
        })
    }

    pub fn contains(&self, fp: &Fingerprint) -> bool {
        self.entries.contains_key(fp)
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<&TrustEntry> {
        self.entries.get(fp)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = &Fingerprint> {
        self.entries.keys()
    }

    /// Fingerprint pinned under `label`.
    pub fn pinned_for(&self, label: &str) -> Option<Fingerprint> {
        self.entries
            .iter()
            .find(|(_, e)| e.label.as_deref() == Some(label))
            .map(|(fp, _)| fp.clone())
    }

    /// Pins `key`, optionally under a stable label. Returns whether the key is
    /// new. A label already pinned to a different key is an impersonation
    /// attempt.
    pub fn pin(&mut self, key: &PublicKey, label: Option<&str>) -> Result<bool, TrustError> {
        let fp = key.fingerprint();
        if let Some(label) = label {
            if let Some(pinned) = self.pinned_for(label) {
                if pinned != fp {
                    return Err(TrustError::FingerprintMismatch {
                        label: label.to_owned(),
                        pinned,
                        presented: fp,
                    });
                }
            }
        }
        if let Some(e) = self.entries.get_mut(&fp) {
            if e.label.is_none() && label.is_some() {
                e.label = label.map(str::to_owned);
                self.save()?;
            }
            return Ok(false);
        }
        let first_seen = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.entries.insert(
            fp,
            TrustEntry {
                public_key: *key,
                first_seen,
                label: label.map(str::to_owned),
            },
        );
        self.save()?;
        Ok(true)
    }

    fn save(&self) -> Result<(), TrustError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let text = serde_json::to_vec_pretty(&self.entries).map_err(|source| TrustError::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(path, text).map_err(|source| TrustError::Io {
            path: path.clone(),
            source,
        })
    }
}

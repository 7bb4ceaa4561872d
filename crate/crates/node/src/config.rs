//! JSON configuration files for gateways and peers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use flexsmc_core::discovery::{GatewayTarget, SelectionPolicy};
use flexsmc_core::identity::Identity;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| ConfigError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Where a node's long-term key comes from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyConfig {
    /// Hex secret key file; generated on first start if missing.
    #[serde(default)]
    pub key_path: Option<PathBuf>,
    #[serde(default)]
    pub secret_hex: Option<String>,
}

impl KeyConfig {
    /// Loads or creates the identity. Without any key material the identity
    /// is derived from `seed` so simulated runs are reproducible.
    pub fn load(&self, seed: u64) -> Result<Identity, ConfigError> {
        if let Some(hex) = &self.secret_hex {
            return Identity::from_secret_hex(hex).ok_or_else(|| ConfigError::Invalid("bad secret_hex".into()));
        }
        let fresh = || Identity::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(seed));
        let Some(path) = &self.key_path else {
            return Ok(fresh());
        };
        match std::fs::read_to_string(path) {
            Ok(s) => Identity::from_secret_hex(&s)
                .ok_or_else(|| ConfigError::Invalid(format!("{}: not a hex secret key", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let id = Identity::generate(&mut rand::rngs::OsRng);
                std::fs::write(path, id.secret_hex()).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(id)
            }
            Err(source) => Err(ConfigError::Io {
                path: path.clone(),
                source,
            }),
        }
    }
}

/// Produces a peer's reading for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Fixed { value: u32 },
    /// Reproducible reading derived from the seed and the request id, so
    /// every attempt of one request sees the same value.
    Seeded { seed: u64 },
}

impl DataSource {
    pub fn read(&self, request_id: &str) -> u32 {
        match self {
            DataSource::Fixed { value } => *value,
            DataSource::Seeded { seed } => {
                let mut h = Sha256::new();
                h.update(seed.to_be_bytes());
                h.update(request_id.as_bytes());
                let d = h.finalize();
                u32::from_be_bytes([d[0], d[1], d[2], d[3]])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    #[default]
    Inproc,
    Socket,
}

impl std::str::FromStr for AdapterMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(AdapterMode::Inproc),
            "socket" => Ok(AdapterMode::Socket),
            other => Err(format!("unknown adapter mode {other:?}")),
        }
    }
}

fn ms(v: u64) -> Duration {
    Duration::from_millis(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeerTunables {
    pub heartbeat_ms: u64,
    pub heartbeat_miss_limit: u32,
    pub handshake_timeout_ms: u64,
    pub round_timeout_ms: u64,
    pub reply_timeout_ms: u64,
    pub retry_backoff_ms: u64,
}

impl Default for PeerTunables {
    fn default() -> Self {
        PeerTunables {
            heartbeat_ms: 1000,
            heartbeat_miss_limit: 3,
            handshake_timeout_ms: 5000,
            round_timeout_ms: 10_000,
            reply_timeout_ms: 5000,
            retry_backoff_ms: 500,
        }
    }
}

impl PeerTunables {
    pub fn heartbeat(&self) -> Duration {
        ms(self.heartbeat_ms)
    }
    pub fn handshake_timeout(&self) -> Duration {
        ms(self.handshake_timeout_ms)
    }
    pub fn round_timeout(&self) -> Duration {
        ms(self.round_timeout_ms)
    }
    pub fn reply_timeout(&self) -> Duration {
        ms(self.reply_timeout_ms)
    }
    pub fn retry_backoff(&self) -> Duration {
        ms(self.retry_backoff_ms)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerDiscovery {
    #[serde(default)]
    pub policy: SelectionPolicy,
    /// UDP port to listen on for announcements.
    #[serde(default)]
    pub port: Option<u16>,
    /// Fallback when no announcement is heard.
    #[serde(default)]
    pub static_gateways: Vec<GatewayTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerConfig {
    pub name: String,
    #[serde(flatten)]
    pub key: KeyConfig,
    #[serde(default)]
    pub trust_store: Option<PathBuf>,
    pub location: String,
    /// Capability tag to data source.
    pub capabilities: BTreeMap<String, DataSource>,
    #[serde(default)]
    pub discovery: PeerDiscovery,
    #[serde(default = "default_bind")]
    pub smc_bind: String,
    #[serde(default)]
    pub adapter: AdapterMode,
    #[serde(default)]
    pub tunables: PeerTunables,
}

impl PeerConfig {
    pub fn new(name: &str, location: &str, capabilities: BTreeMap<String, DataSource>) -> Self {
        PeerConfig {
            name: name.into(),
            key: KeyConfig::default(),
            trust_store: None,
            location: location.into(),
            capabilities,
            discovery: PeerDiscovery::default(),
            smc_bind: default_bind(),
            adapter: AdapterMode::default(),
            tunables: PeerTunables::default(),
        }
    }
}

pub fn default_bind() -> String {
    "127.0.0.1:0".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayTunables {
    pub heartbeat_ms: u64,
    pub retry_budget: u32,
    pub min_group: usize,
    pub channel_wait_ms: u64,
    pub prepare_timeout_ms: u64,
    pub round_timeout_ms: u64,
    pub handshake_timeout_ms: u64,
    /// Overrides the default `floor((n - 1) / 2)`.
    pub threshold: Option<usize>,
}

impl Default for GatewayTunables {
    fn default() -> Self {
        GatewayTunables {
            heartbeat_ms: 1000,
            retry_budget: 3,
            min_group: 3,
            channel_wait_ms: 0,
            prepare_timeout_ms: 5000,
            round_timeout_ms: 10_000,
            handshake_timeout_ms: 5000,
            threshold: None,
        }
    }
}

impl GatewayTunables {
    pub fn heartbeat(&self) -> Duration {
        ms(self.heartbeat_ms)
    }
    pub fn prepare_timeout(&self) -> Duration {
        ms(self.prepare_timeout_ms)
    }
    pub fn round_timeout(&self) -> Duration {
        ms(self.round_timeout_ms)
    }
    pub fn handshake_timeout(&self) -> Duration {
        ms(self.handshake_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayDiscovery {
    /// Datagram destinations, e.g. `"255.255.255.255:7400"`.
    pub announce_targets: Vec<String>,
    pub period_ms: u64,
    pub bind: String,
    pub location: String,
    pub purpose: String,
}

impl Default for GatewayDiscovery {
    fn default() -> Self {
        GatewayDiscovery {
            announce_targets: Vec::new(),
            period_ms: 2000,
            bind: "0.0.0.0:0".into(),
            location: String::new(),
            purpose: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default = "default_gateway_name")]
    pub name: String,
    #[serde(flatten)]
    pub key: KeyConfig,
    #[serde(default)]
    pub trust_store: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub control_bind: String,
    #[serde(default = "default_bind")]
    pub client_bind: String,
    #[serde(default = "default_bind")]
    pub smc_bind: String,
    /// Optional JSON-over-HTTP facade for the client API.
    #[serde(default)]
    pub http_bind: Option<String>,
    #[serde(default)]
    pub discovery: GatewayDiscovery,
    #[serde(default)]
    pub tunables: GatewayTunables,
}

fn default_gateway_name() -> String {
    "gateway".into()
}

impl GatewayConfig {
    pub fn new(name: &str) -> Self {
        GatewayConfig {
            name: name.into(),
            key: KeyConfig::default(),
            trust_store: None,
            control_bind: default_bind(),
            client_bind: default_bind(),
            smc_bind: default_bind(),
            http_bind: None,
            discovery: GatewayDiscovery::default(),
            tunables: GatewayTunables::default(),
        }
    }
}

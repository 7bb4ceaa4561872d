use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use flexsmc_client::GatewayClient;
use flexsmc_core::discovery::GatewayTarget;
use flexsmc_core::peer_state::Phase;
use flexsmc_core::{Fingerprint, Identity};
use flexsmc_node::config::{DataSource, GatewayConfig, PeerConfig};
use flexsmc_node::gateway::{spawn_gateway, GatewayHandle};
use flexsmc_node::net::{SharedNetwork, SimNetwork, TcpNetwork};
use flexsmc_node::peer::{spawn_peer, PeerHandle};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::{HarnessError, Scenario, Transport};

pub const LOCATION: &str = "floor2";
pub const CAPABILITY: &str = "presence_count";
pub const GROUP: &str = "floor2/presence_count";

pub const GATEWAY_NODE: &str = "gateway";
const READY_TIMEOUT: Duration = Duration::from_secs(30);

pub fn peer_node(i: usize) -> String {
    format!("peer{}", i + 1)
}

/// A running gateway plus its peers.
pub struct Deployment {
    pub gateway: GatewayHandle,
    pub peers: Vec<PeerHandle>,
    /// Data source of each peer, by node name.
    pub sources: BTreeMap<String, DataSource>,
    /// Present on the simulated backend.
    pub sim: Option<SimNetwork>,
    gateway_net: SharedNetwork,
    client_net: SharedNetwork,
}

fn identity(seed: u64, i: u64) -> Identity {
    Identity::generate(&mut ChaCha20Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i)))
}

impl Deployment {
    /// Starts the nodes and waits until every peer is in Operation. On the
    /// simulated backend the fault plan is armed once they are.
    pub async fn launch(s: &Scenario) -> Result<Self, HarnessError> {
        let setup = |what: &str, e: &dyn std::fmt::Display| HarnessError::ScenarioSetupFailed(format!("{what}: {e}"));
        let sim = match s.transport {
            Transport::Sim => Some(SimNetwork::new(s.fault.clone(), s.seed)),
            Transport::Tcp if !s.fault.is_empty() => {
                return Err(HarnessError::ScenarioSetupFailed(
                    "fault injection needs the sim transport".into(),
                ))
            }
            Transport::Tcp => None,
        };
        let node = |name: &str| -> SharedNetwork {
            match &sim {
                Some(sim) => sim.node(name),
                None => Arc::new(TcpNetwork::new()),
            }
        };

        let mut gcfg = GatewayConfig::new(GATEWAY_NODE);
        gcfg.tunables.channel_wait_ms = s.channel_wait_ms;
        let gateway_net = node(GATEWAY_NODE);
        let gateway = spawn_gateway(gcfg, identity(s.seed, 0), gateway_net.clone(), s.seed)
            .await
            .map_err(|e| setup("gateway", &e))?;

        let mut peers = Vec::new();
        let mut sources = BTreeMap::new();
        for i in 0..s.peers {
            let name = peer_node(i);
            let source = DataSource::Seeded {
                seed: s.seed.wrapping_mul(31).wrapping_add(i as u64),
            };
            let mut caps = BTreeMap::new();
            caps.insert(CAPABILITY.to_owned(), source.clone());
            let mut cfg = PeerConfig::new(&name, LOCATION, caps);
            cfg.adapter = s.adapter;
            cfg.discovery.static_gateways = vec![GatewayTarget {
                endpoint: gateway.control_endpoint.clone(),
                fingerprint: Some(gateway.fingerprint()),
            }];
            let seed = s.seed.wrapping_add(i as u64 + 1);
            let p = spawn_peer(cfg, identity(s.seed, i as u64 + 1), node(&name), seed)
                .await
                .map_err(|e| setup(&name, &e))?;
            peers.push(p);
            sources.insert(name, source);
        }
        for p in peers.iter_mut() {
            tokio::time::timeout(READY_TIMEOUT, p.wait_for(Phase::Operation))
                .await
                .map_err(|_| HarnessError::ScenarioSetupFailed(format!("{} never reached operation", p.name)))?;
        }
        if let Some(sim) = &sim {
            sim.arm();
        }
        let client_net = node("client");
        Ok(Deployment {
            gateway,
            peers,
            sources,
            sim,
            gateway_net,
            client_net,
        })
    }

    pub async fn client(&self) -> Result<GatewayClient, HarnessError> {
        Ok(GatewayClient::connect(self.client_net.clone(), &self.gateway.client_endpoint).await?)
    }

    /// The gateway's clock.
    pub fn now(&self) -> Duration {
        self.gateway_net.now()
    }

    pub fn name_of(&self, fp: &Fingerprint) -> Option<&str> {
        self.peers.iter().find(|p| &p.fingerprint == fp).map(|p| p.name.as_str())
    }

    /// Plain integer sum of the named peers' readings for `request_id`.
    pub fn oracle_sum<'a>(&self, names: impl IntoIterator<Item = &'a str>, request_id: &str) -> u64 {
        names
            .into_iter()
            .map(|n| u64::from(self.sources[n].read(request_id)))
            .sum()
    }
}

//! Launches a gateway plus N peers on the simulated or the loopback TCP
//! backend and measures them.
//!
//! Simulated runs must execute on a runtime with paused time (see
//! [`runtime`]); their timings are virtual and reproducible.

use std::collections::BTreeMap;
use std::io;

use flexsmc_core::fault::FaultPlan;
use flexsmc_node::config::AdapterMode;
use serde::{Deserialize, Serialize};

mod bench;
mod chaos;
mod deployment;
pub mod stats;

pub use bench::{run_echo_benchmark, run_paired_echo_benchmark, run_sum_benchmark};
pub use chaos::{chaos_suite, run_chaos_scenario, ChaosCase, ChaosOutcome, ChaosVerdict, Expectation};
pub use deployment::{Deployment, CAPABILITY, GROUP, LOCATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Sim,
    Tcp,
}

impl std::str::FromStr for Transport {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Transport::Sim),
            "tcp" => Ok(Transport::Tcp),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Sim => "sim",
            Transport::Tcp => "tcp",
        }
    }
}

/// Everything that determines a run. On the simulated backend the seed
/// fixes identities, inputs and latency samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub peers: usize,
    pub reps: usize,
    pub transport: Transport,
    pub channel_wait_ms: u64,
    pub adapter: AdapterMode,
    #[serde(default)]
    pub fault: FaultPlan,
    pub seed: u64,
    /// Echo requests per batch.
    pub echoes: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            peers: 3,
            reps: 100,
            transport: Transport::Sim,
            channel_wait_ms: 0,
            adapter: AdapterMode::Inproc,
            fault: FaultPlan::default(),
            seed: 1,
            echoes: 10,
        }
    }
}

impl Scenario {
    pub fn parameters(&self) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        p.insert("transport".into(), self.transport.as_str().into());
        p.insert("reps".into(), self.reps.to_string());
        p.insert("channel_wait_ms".into(), self.channel_wait_ms.to_string());
        p.insert(
            "adapter".into(),
            match self.adapter {
                AdapterMode::Inproc => "inproc",
                AdapterMode::Socket => "socket",
            }
            .into(),
        );
        p.insert("seed".into(), self.seed.to_string());
        if !self.fault.is_empty() {
            p.insert("fault".into(), serde_json::to_string(&self.fault).expect("plans serialize"));
        }
        p
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario setup failed: {0}")]
    ScenarioSetupFailed(String),
    #[error(transparent)]
    Client(#[from] flexsmc_client::ClientError),
    #[error("session {session} returned {got}, oracle says {expected}")]
    WrongResult { session: String, expected: u64, got: u64 },
    #[error("echo from {peer} came back altered")]
    EchoMismatch { peer: String },
}

/// A runtime suited to `transport`: paused time on the simulated backend.
pub fn runtime(transport: Transport) -> io::Result<tokio::runtime::Runtime> {
    match transport {
        Transport::Sim => tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .start_paused(true)
            .build(),
        Transport::Tcp => tokio::runtime::Builder::new_multi_thread().enable_all().build(),
    }
}

//! Runs a gateway.
//!
//! Over TCP the gateway prints its endpoints as one JSON line, then one line
//! per peer liveness change, and serves until interrupted. With `--transport sim` it runs together with the
//! `--peer` configs on a simulated network in this process and answers
//! client calls read as JSON lines from stdin.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;
use flexsmc_cli::{init_logging, parse_transport};
use flexsmc_core::discovery::GatewayTarget;
use flexsmc_core::fault::FaultPlan;
use flexsmc_core::liveness::Liveness;
use flexsmc_core::peer_state::Phase;
use flexsmc_core::session::ClientCall;
use flexsmc_harness::Transport;
use flexsmc_node::config::{load_json, GatewayConfig, PeerConfig};
use flexsmc_node::gateway::{spawn_gateway, GatewayHandle};
use flexsmc_node::net::{SimNetwork, TcpNetwork};
use flexsmc_node::peer::spawn_peer;
use serde_json::json;
use tokio::io::{AsyncBufReadExt, BufReader};

#[derive(Parser)]
#[command(about = "Run a FlexSMC gateway")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "tcp", value_parser = parse_transport)]
    transport: Transport,
    /// Peer configs to run alongside the gateway (sim transport only).
    #[arg(long = "peer")]
    peers: Vec<PathBuf>,
    /// Seed for keys generated without key material.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let args = Args::parse();
    let cfg: GatewayConfig = load_json(&args.config)?;
    let identity = cfg.key.load(args.seed)?;
    match args.transport {
        Transport::Tcp => {
            if !args.peers.is_empty() {
                bail!("--peer needs --transport sim; over TCP run each peer as its own process");
            }
            let gw = spawn_gateway(cfg, identity, Arc::new(TcpNetwork::new()), args.seed).await?;
            announce(&gw);
            tokio::select! {
                r = tokio::signal::ctrl_c() => r.context("waiting for interrupt")?,
                _ = report_liveness(&gw) => {}
            }
        }
        Transport::Sim => {
            let sim = SimNetwork::new(FaultPlan::default(), args.seed);
            let gw = spawn_gateway(cfg, identity, sim.node("gateway"), args.seed).await?;
            announce(&gw);
            let mut peers = Vec::new();
            for (i, path) in args.peers.iter().enumerate() {
                let mut pc: PeerConfig = load_json(path)?;
                pc.discovery.static_gateways = vec![GatewayTarget {
                    endpoint: gw.control_endpoint.clone(),
                    fingerprint: Some(gw.fingerprint()),
                }];
                let seed = args.seed.wrapping_add(i as u64 + 1);
                let id = pc.key.load(seed)?;
                let node = sim.node(&pc.name);
                peers.push(spawn_peer(pc, id, node, seed).await?);
            }
            for p in peers.iter_mut() {
                p.wait_for(Phase::Operation).await;
            }
            let mut lines = BufReader::new(tokio::io::stdin()).lines();
            while let Some(line) = lines.next_line().await? {
                if line.trim().is_empty() {
                    continue;
                }
                let reply = match serde_json::from_str::<ClientCall>(&line) {
                    Ok(call) => match gw.request(call, None).await {
                        Ok(r) => serde_json::to_value(r)?,
                        Err(e) => json!({"error": e}),
                    },
                    Err(e) => json!({"error": {"code": "bad_request", "message": e.to_string()}}),
                };
                println!("{reply}");
            }
        }
    }
    Ok(())
}

async fn report_liveness(gw: &GatewayHandle) {
    let mut known: BTreeMap<String, (String, Liveness)> = BTreeMap::new();
    loop {
        for v in gw.peers() {
            let now = (v.fingerprint.as_str().to_owned(), v.liveness);
            if known.get(&v.name) != Some(&now) {
                println!("{}", json!({"peer": v.name, "fingerprint": now.0, "liveness": now.1}));
                known.insert(v.name, now);
            }
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

fn announce(gw: &GatewayHandle) {
    println!(
        "{}",
        json!({
            "name": gw.name(),
            "fingerprint": gw.fingerprint(),
            "control": gw.control_endpoint,
            "client": gw.client_endpoint,
            "smc": gw.smc_endpoint(),
            "http": gw.http_endpoint,
        })
    );
}

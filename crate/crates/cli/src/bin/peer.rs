//! Runs a peer daemon over TCP. Prints its identity as one JSON line, then
//! one line per lifecycle phase change.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::bail;
use clap::Parser;
use flexsmc_cli::{init_logging, parse_transport};
use flexsmc_harness::Transport;
use flexsmc_node::config::{load_json, PeerConfig};
use flexsmc_node::net::TcpNetwork;
use flexsmc_node::peer::spawn_peer;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Run a FlexSMC peer")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Seed for keys generated without key material.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tcp", value_parser = parse_transport)]
    transport: Transport,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_logging();
    let args = Args::parse();
    if args.transport == Transport::Sim {
        bail!("a simulated peer lives inside its gateway's process: use `gateway --transport sim --peer <config>`");
    }
    let cfg: PeerConfig = load_json(&args.config)?;
    let identity = cfg.key.load(args.seed)?;
    let peer = spawn_peer(cfg, identity, Arc::new(TcpNetwork::new()), args.seed).await?;
    println!("{}", json!({"name": peer.name, "fingerprint": peer.fingerprint}));
    let mut status = peer.status.clone();
    let mut last = None;
    loop {
        let phase = status.borrow_and_update().phase;
        if last != Some(phase) {
            println!("{}", json!({"phase": phase}));
            last = Some(phase);
        }
        tokio::select! {
            changed = status.changed() => if changed.is_err() { break },
            _ = tokio::signal::ctrl_c() => break,
        }
    }
    Ok(())
}

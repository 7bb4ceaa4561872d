use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use flexsmc_client::{ClientError, GatewayClient};
use flexsmc_core::discovery::GatewayTarget;
use flexsmc_core::fault::FaultPlan;
use flexsmc_core::peer_state::Phase;
use flexsmc_core::session::ErrorCode;
use flexsmc_core::{FieldElement, Identity};
use flexsmc_node::config::{DataSource, GatewayConfig, PeerConfig};
use flexsmc_node::gateway::{spawn_gateway, GatewayHandle};
use flexsmc_node::net::{SharedNetwork, SimNetwork, TcpNetwork};
use flexsmc_node::peer::{spawn_peer, PeerHandle};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const GROUP: &str = "floor2/presence_count";
const CAP: &str = "presence_count";

fn identity(seed: u64) -> Identity {
    Identity::generate(&mut ChaCha20Rng::seed_from_u64(seed))
}

async fn deployment(
    node: impl Fn(&str) -> SharedNetwork,
    inputs: &[u32],
    bind: &str,
) -> (GatewayHandle, Vec<PeerHandle>) {
    let mut cfg = GatewayConfig::new("gw");
    cfg.control_bind = format!("{bind}:0");
    cfg.client_bind = format!("{bind}:0");
    cfg.smc_bind = format!("{bind}:0");
    let gw = spawn_gateway(cfg, identity(1000), node("gw"), 1000).await.unwrap();
    let mut peers = Vec::new();
    for (i, v) in inputs.iter().enumerate() {
        let name = format!("p{}", i + 1);
        let mut caps = BTreeMap::new();
        caps.insert(CAP.to_owned(), DataSource::Fixed { value: *v });
        let mut pc = PeerConfig::new(&name, "floor2", caps);
        pc.smc_bind = format!("{bind}:0");
        pc.discovery.static_gateways = vec![GatewayTarget {
            endpoint: gw.control_endpoint.clone(),
            fingerprint: Some(gw.fingerprint()),
        }];
        let seed = i as u64 + 1;
        peers.push(spawn_peer(pc, identity(seed), node(&name), seed).await.unwrap());
    }
    for p in peers.iter_mut() {
        tokio::time::timeout(Duration::from_secs(30), p.wait_for(Phase::Operation))
            .await
            .expect("peer reaches operation");
    }
    (gw, peers)
}

#[tokio::test(start_paused = true)]
async fn queries_catalog_and_errors_over_one_connection() {
    let sim = SimNetwork::new(FaultPlan::default(), 3);
    let (gw, _peers) = deployment(|n| sim.node(n), &[4, 5, 6], "0.0.0.0").await;
    let client = GatewayClient::connect(sim.node("client"), &gw.client_endpoint).await.unwrap();

    let c = client.catalog().await.unwrap();
    assert_eq!(c.group(GROUP).unwrap().members.len(), 3);
    assert_eq!(c.capabilities, vec![CAP.to_owned()]);

    let r = client.query(GROUP, "sum", CAP).await.unwrap();
    assert_eq!(r.result, FieldElement::new(15));
    assert_eq!(r.contributors, 3);
    assert!(!r.request_id.is_empty());

    match client.query("roof/wind", "sum", "wind").await {
        Err(ClientError::Gateway(e)) => assert_eq!(e.code, ErrorCode::UnknownGroup),
        other => panic!("{other:?}"),
    }
    match client.query(GROUP, "median", CAP).await {
        Err(ClientError::Gateway(e)) => assert_eq!(e.code, ErrorCode::UnsupportedOperation),
        other => panic!("{other:?}"),
    }
}

#[tokio::test(start_paused = true)]
async fn concurrent_requests_each_get_one_reply() {
    let sim = SimNetwork::new(FaultPlan::default(), 4);
    let (gw, _peers) = deployment(|n| sim.node(n), &[1, 2, 3, 4], "0.0.0.0").await;
    let client = Arc::new(GatewayClient::connect(sim.node("client"), &gw.client_endpoint).await.unwrap());
    let mut tasks = Vec::new();
    for op in ["sum", "average", "sum"] {
        let c = client.clone();
        tasks.push(tokio::spawn(async move { c.query(GROUP, op, CAP).await }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        let r = t.await.unwrap().unwrap();
        assert_eq!(r.result, FieldElement::new(10));
        ids.push(r.session_id);
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 3);
}

#[tokio::test(start_paused = true)]
async fn dropped_gateway_fails_pending_calls() {
    let sim = SimNetwork::new(FaultPlan::default(), 5);
    let (gw, _peers) = deployment(|n| sim.node(n), &[1, 2, 3], "0.0.0.0").await;
    let client = GatewayClient::connect(sim.node("client"), &gw.client_endpoint).await.unwrap();
    sim.kill("gw");
    let client = client.with_timeout(Duration::from_secs(2));
    assert!(matches!(client.catalog().await, Err(ClientError::Timeout(_))));
    drop(gw);
    assert!(GatewayClient::connect(sim.node("client"), "gw:1").await.is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sum_over_loopback_tcp() {
    let (gw, _peers) = deployment(|_| Arc::new(TcpNetwork::new()), &[7, 8, 9], "127.0.0.1").await;
    let client = GatewayClient::connect(Arc::new(TcpNetwork::new()), &gw.client_endpoint).await.unwrap();
    let r = client.query(GROUP, "sum", CAP).await.unwrap();
    assert_eq!(r.result, FieldElement::new(24));
    assert_eq!(r.timing.len(), 3);
}

#[tokio::test(start_paused = true)]
async fn separate_clients_get_separate_sessions() {
    let sim = SimNetwork::new(FaultPlan::default(), 6);
    let (gw, _peers) = deployment(|n| sim.node(n), &[1, 2, 3], "0.0.0.0").await;
    let a = GatewayClient::connect(sim.node("a"), &gw.client_endpoint).await.unwrap();
    let b = GatewayClient::connect(sim.node("b"), &gw.client_endpoint).await.unwrap();
    let (ra, rb) = tokio::join!(a.query(GROUP, "sum", CAP), b.query(GROUP, "sum", CAP));
    let (ra, rb) = (ra.unwrap(), rb.unwrap());
    assert_ne!(ra.request_id, rb.request_id);
    assert_ne!(ra.session_id, rb.session_id);
    assert_eq!(ra.result, rb.result);
}

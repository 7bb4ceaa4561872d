use std::sync::Arc;
use std::time::Duration;

use flexsmc_core::engine::{plan_session, PlanParams, RoundKind, RoundPlan};
use flexsmc_core::fault::{FaultPlan, PeerKill};
use flexsmc_core::session::{Operation, ParticipantInfo, SessionDescriptor};
use flexsmc_core::{FieldElement, Identity};
use flexsmc_node::net::{Network, SimNetwork};
use flexsmc_node::smc::{
    serve_adapter, Adapter, AdapterError, InProcessAdapter, PrepareRequest, SmcConfig, SmcError, SmcInstance,
    SocketAdapter,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

struct Node {
    name: String,
    inst: Arc<SmcInstance>,
    info: ParticipantInfo,
}

async fn node(sim: &SimNetwork, name: &str, seed: u64) -> Node {
    let id = Identity::generate(&mut ChaCha20Rng::seed_from_u64(seed));
    let info_key = id.public_key();
    let inst = SmcInstance::start(id, sim.node(name), ":0", SmcConfig::default(), seed).await.unwrap();
    let info = ParticipantInfo {
        fingerprint: info_key.fingerprint(),
        public_key: info_key,
        endpoint: inst.endpoint().to_owned(),
    };
    Node {
        name: name.to_owned(),
        inst,
        info,
    }
}

fn plan(sid: &str, gw: &Node, peers: &[Node], channel_wait_ms: u64) -> RoundPlan {
    let desc = SessionDescriptor {
        session_id: sid.into(),
        group: "floor1/presence".into(),
        operation: Operation::Sum,
        data_type: "u32".into(),
        participants: peers.iter().map(|p| p.info.clone()).collect(),
        gateway: gw.info.clone(),
        retry_budget: 0,
        attempt: 1,
        client: None,
    };
    plan_session(
        &desc,
        &PlanParams {
            session_id: sid.into(),
            threshold: None,
            channel_wait_ms,
            min_contributors: 2,
        },
    )
    .unwrap()
}

async fn run_sum(
    gw: &Node,
    peers: &[Node],
    inputs: &[u32],
    plan: &RoundPlan,
) -> Vec<Result<Option<FieldElement>, SmcError>> {
    gw.inst
        .prepare(PrepareRequest {
            plan: plan.clone(),
            input: None,
        })
        .unwrap();
    for (p, x) in peers.iter().zip(inputs) {
        p.inst
            .prepare(PrepareRequest {
                plan: plan.clone(),
                input: Some(FieldElement::from(*x)),
            })
            .unwrap();
    }
    let sid = plan.session_id.clone();
    let mut handles = Vec::new();
    for inst in std::iter::once(&gw.inst).chain(peers.iter().map(|p| &p.inst)) {
        let inst = inst.clone();
        let sid = sid.clone();
        handles.push(tokio::spawn(async move { inst.execute(&sid).await.map(|o| o.result) }));
    }
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test(start_paused = true)]
async fn three_peers_sum_to_the_plain_total() {
    let sim = SimNetwork::new(FaultPlan::default(), 3);
    let gw = node(&sim, "gw", 100).await;
    let mut peers = Vec::new();
    for i in 1..=3 {
        peers.push(node(&sim, &format!("p{i}"), i).await);
    }
    let inputs = [3_000_000_000u32, 7, 4_000_000_000];
    let p = plan("s1", &gw, &peers, 0);
    let out = run_sum(&gw, &peers, &inputs, &p).await;
    let total: u64 = inputs.iter().map(|&x| x as u64).sum();
    assert_eq!(out[0], Ok(Some(FieldElement::new(total))));
    for r in &out[1..] {
        assert_eq!(*r, Ok(None));
    }
}

#[tokio::test(start_paused = true)]
async fn channel_wait_is_a_floor_on_protocol_time() {
    let sim = SimNetwork::new(FaultPlan::default(), 3);
    let gw = node(&sim, "gw", 100).await;
    let peers = vec![node(&sim, "p1", 1).await, node(&sim, "p2", 2).await];
    let p = plan("s1", &gw, &peers, 1000);
    gw.inst.prepare(PrepareRequest { plan: p.clone(), input: None }).unwrap();
    for q in &peers {
        q.inst
            .prepare(PrepareRequest {
                plan: p.clone(),
                input: Some(FieldElement::from(1)),
            })
            .unwrap();
    }
    let mut hs = Vec::new();
    for inst in std::iter::once(&gw.inst).chain(peers.iter().map(|q| &q.inst)) {
        let inst = inst.clone();
        hs.push(tokio::spawn(async move { inst.execute("s1").await.unwrap() }));
    }
    for h in hs {
        let out = h.await.unwrap();
        assert!(out.protocol_ms >= 1000.0, "{}", out.protocol_ms);
    }
}

#[tokio::test(start_paused = true)]
async fn execute_without_prepare_is_a_protocol_error() {
    let sim = SimNetwork::new(FaultPlan::default(), 3);
    let n = node(&sim, "p1", 1).await;
    let inproc = InProcessAdapter(n.inst.clone());
    assert!(matches!(inproc.execute("nope").await, Err(AdapterError::Protocol(_))));

    let client_net = sim.node(&n.name);
    let listener = client_net.listen(":0").await.unwrap();
    let addr = listener.local_addr();
    let _srv = serve_adapter(listener, n.inst.clone());
    let sock = SocketAdapter::connect(client_net.as_ref(), &addr).await.unwrap();
    assert!(matches!(sock.execute("nope").await, Err(AdapterError::Protocol(_))));
}

#[tokio::test(start_paused = true)]
async fn echo_is_identity_through_both_adapters() {
    let sim = SimNetwork::new(FaultPlan::default(), 3);
    let n = node(&sim, "p1", 1).await;
    let net = sim.node("p1");
    let listener = net.listen(":0").await.unwrap();
    let addr = listener.local_addr();
    let _srv = serve_adapter(listener, n.inst.clone());
    let sock = SocketAdapter::connect(net.as_ref(), &addr).await.unwrap();
    let inproc = InProcessAdapter(n.inst.clone());
    let v = json!({"seq": 1, "blob": "x".repeat(100), "nested": [1, 2, {"a": null}]});
    assert_eq!(inproc.echo(v.clone()).await.unwrap(), v);
    assert_eq!(sock.echo(v.clone()).await.unwrap(), v);
}

#[tokio::test(start_paused = true)]
async fn sum_through_socket_adapters() {
    let sim = SimNetwork::new(FaultPlan::default(), 5);
    let gw = node(&sim, "gw", 100).await;
    let peers = vec![node(&sim, "p1", 1).await, node(&sim, "p2", 2).await, node(&sim, "p3", 3).await];
    let p = plan("s9", &gw, &peers, 0);
    gw.inst.prepare(PrepareRequest { plan: p.clone(), input: None }).unwrap();
    let mut adapters = Vec::new();
    for q in &peers {
        let net = sim.node(&q.name);
        let l = net.listen(":0").await.unwrap();
        let addr = l.local_addr();
        serve_adapter(l, q.inst.clone());
        let a = SocketAdapter::connect(net.as_ref(), &addr).await.unwrap();
        a.prepare(PrepareRequest {
            plan: p.clone(),
            input: Some(FieldElement::from(10)),
        })
        .await
        .unwrap();
        adapters.push(Arc::new(a));
    }
    let g = gw.inst.clone();
    let gh = tokio::spawn(async move { g.execute("s9").await });
    let mut hs = Vec::new();
    for a in &adapters {
        let a = a.clone();
        hs.push(tokio::spawn(async move { a.execute("s9").await }));
    }
    for h in hs {
        assert_eq!(h.await.unwrap().unwrap().result, None);
    }
    assert_eq!(gh.await.unwrap().unwrap().result, Some(FieldElement::new(30)));
}

#[tokio::test(start_paused = true)]
async fn unreachable_participant_fails_channel_setup() {
    let sim = SimNetwork::new(FaultPlan::default(), 3);
    let gw = node(&sim, "gw", 100).await;
    let mut peers = vec![node(&sim, "p1", 1).await, node(&sim, "p2", 2).await];
    let mut ghost = node(&sim, "p3", 3).await;
    ghost.info.endpoint = "nowhere:1".into();
    let ghost_fp = ghost.info.fingerprint.clone();
    peers.push(ghost);
    let p = plan("s1", &gw, &peers, 0);
    gw.inst.prepare(PrepareRequest { plan: p.clone(), input: None }).unwrap();
    for q in &peers[..2] {
        q.inst
            .prepare(PrepareRequest {
                plan: p.clone(),
                input: Some(FieldElement::from(1)),
            })
            .unwrap();
    }
    let mut hs = Vec::new();
    for inst in std::iter::once(&gw.inst).chain(peers[..2].iter().map(|q| &q.inst)) {
        let inst = inst.clone();
        hs.push(tokio::spawn(async move { inst.execute("s1").await }));
    }
    for h in hs {
        let err = h.await.unwrap().unwrap_err();
        match err {
            SmcError::ChannelEstablishmentFailed { missing } => assert!(missing.contains(&ghost_fp), "{missing:?}"),
            other => panic!("{other:?}"),
        }
    }
}

#[tokio::test(start_paused = true)]
async fn killed_contributor_is_named_in_the_failure() {
    let plan_faults = FaultPlan {
        kill_peer_at: vec![PeerKill {
            peer: "p2".into(),
            round: RoundKind::Distribute,
        }],
        ..FaultPlan::default()
    };
    let sim = SimNetwork::new(plan_faults, 3);
    sim.arm();
    let gw = node(&sim, "gw", 100).await;
    let peers = vec![node(&sim, "p1", 1).await, node(&sim, "p2", 2).await, node(&sim, "p3", 3).await];
    let victim = peers[1].info.fingerprint.clone();
    let p = plan("s1", &gw, &peers, 0);
    let started = tokio::time::Instant::now();
    let out = run_sum(&gw, &peers, &[1, 2, 3], &p).await;
    assert!(started.elapsed() <= Duration::from_secs(11));
    for (i, r) in out.iter().enumerate() {
        if i == 2 {
            continue;
        }
        let e = r.clone().unwrap_err();
        assert!(e.missing().contains(&victim), "{i}: {e:?}");
    }
}

//! Deterministic in-process network with fault injection.
//!
//! Frames are handed over immediately in tokio time but stamped with a
//! virtual arrival time: departure (after the sender's outgoing queue drains)
//! plus per-link latency. Each node keeps a causal clock, the later of tokio
//! time and the latest arrival it has observed, so sub-millisecond latencies
//! accumulate exactly even though tokio timers have millisecond resolution.
//! Run it on a current-thread runtime with paused time for reproducible
//! schedules.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use flexsmc_core::engine::RoundKind;
use flexsmc_core::fault::{same_link, FaultPlan};
use flexsmc_core::frame::MAX_FRAME_LEN;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::time::Instant;

use super::{Datagram, Link, Listener, Network, PayloadSink, PayloadSource};

/// Serialization cost of a frame on the sender's outgoing queue.
const TX_PER_FRAME: Duration = Duration::from_micros(10);
const TX_NS_PER_BYTE: u64 = 10;
/// Latency between two endpoints on the same node.
const LOCAL_LATENCY: Duration = Duration::from_micros(20);
const FIRST_EPHEMERAL_PORT: u16 = 40000;

/// One frame as seen by the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub conn: u64,
    pub from: String,
    pub to: String,
    pub arrival_us: u64,
    pub payload: String,
}

type Delivery = Option<(Vec<u8>, Duration)>;

struct Conn {
    id: u64,
    a: String,
    b: String,
    to_a: mpsc::UnboundedSender<Delivery>,
    to_b: mpsc::UnboundedSender<Delivery>,
    closed: AtomicBool,
}

impl Conn {
    fn force_close(&self) {
        if !self.closed.swap(true, Ordering::SeqCst) {
            let _ = self.to_a.send(None);
            let _ = self.to_b.send(None);
        }
    }
}

type DatagramSender = mpsc::UnboundedSender<(Vec<u8>, Duration)>;

#[derive(Default)]
struct NodeClock {
    floor: Duration,
    egress_free: Duration,
}

struct Core {
    epoch: Instant,
    plan: FaultPlan,
    rng: ChaCha8Rng,
    armed_at: Option<Duration>,
    listeners: BTreeMap<String, (String, mpsc::UnboundedSender<Link>)>,
    datagrams: BTreeMap<String, (String, DatagramSender)>,
    clocks: BTreeMap<String, NodeClock>,
    dead: BTreeSet<String>,
    fired_closes: BTreeSet<usize>,
    next_port: u16,
    next_conn: u64,
    transcript: Option<Vec<TranscriptEntry>>,
    next_seq: u64,
}

impl Core {
    fn tokio_now(&self) -> Duration {
        Instant::now().saturating_duration_since(self.epoch)
    }

    fn now(&mut self, node: &str) -> Duration {
        let t = self.tokio_now();
        t.max(self.clocks.entry(node.to_owned()).or_default().floor)
    }

    fn observe(&mut self, node: &str, at: Duration) {
        let c = self.clocks.entry(node.to_owned()).or_default();
        c.floor = c.floor.max(at);
    }

    fn link_dropped(&self, a: &str, b: &str, at: Duration) -> bool {
        let Some(armed) = self.armed_at else {
            return false;
        };
        self.plan
            .drop_link_at
            .iter()
            .any(|d| same_link(&d.a, &d.b, a, b) && at >= armed + Duration::from_millis(d.at_ms))
    }

    fn silenced(&self, a: &str, b: &str, at: Duration) -> bool {
        self.dead.contains(a) || self.dead.contains(b) || self.link_dropped(a, b, at)
    }

    /// Departure and arrival stamps for a payload from `from` to `to`.
    fn schedule(&mut self, from: &str, to: &str, len: usize) -> Duration {
        let now = self.now(from);
        let cost = TX_PER_FRAME + Duration::from_nanos(TX_NS_PER_BYTE * len as u64);
        let clock = self.clocks.entry(from.to_owned()).or_default();
        let depart = now.max(clock.egress_free) + cost;
        clock.egress_free = depart;
        let latency = if from == to {
            LOCAL_LATENCY
        } else {
            self.plan.latency.sample(&mut self.rng)
        };
        depart + latency
    }

    fn record(&mut self, conn: u64, from: &str, to: &str, arrival: Duration, payload: &[u8]) {
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry {
                seq: self.next_seq,
                conn,
                from: from.to_owned(),
                to: to.to_owned(),
                arrival_us: arrival.as_micros() as u64,
                payload: String::from_utf8_lossy(payload).into_owned(),
            });
            self.next_seq += 1;
        }
    }

    fn alloc_port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port += 1;
        p
    }
}

fn round_of(payload: &[u8]) -> Option<RoundKind> {
    #[derive(Deserialize)]
    struct Probe {
        #[serde(rename = "type")]
        kind: String,
        body: Option<RoundProbe>,
    }
    #[derive(Deserialize)]
    struct RoundProbe {
        round: Option<RoundKind>,
    }
    let probe: Probe = serde_json::from_slice(payload).ok()?;
    if probe.kind != "round_message" {
        return None;
    }
    probe.body?.round
}

fn is_authenticated(payload: &[u8]) -> bool {
    serde_json::from_slice::<serde_json::Value>(payload)
        .ok()
        .is_some_and(|v| v.get("auth").is_some_and(|a| !a.is_null()))
}

/// Handle to the whole simulated network.
#[derive(Clone)]
pub struct SimNetwork {
    core: Arc<Mutex<Core>>,
}

impl SimNetwork {
    pub fn new(plan: FaultPlan, seed: u64) -> Self {
        SimNetwork {
            core: Arc::new(Mutex::new(Core {
                epoch: Instant::now(),
                plan,
                rng: ChaCha8Rng::seed_from_u64(seed),
                armed_at: None,
                listeners: BTreeMap::new(),
                datagrams: BTreeMap::new(),
                clocks: BTreeMap::new(),
                dead: BTreeSet::new(),
                fired_closes: BTreeSet::new(),
                next_port: FIRST_EPHEMERAL_PORT,
                next_conn: 0,
                transcript: None,
                next_seq: 0,
            })),
        }
    }

    /// The view of the network from the node called `name`.
    pub fn node(&self, name: &str) -> Arc<SimNode> {
        Arc::new(SimNode {
            name: name.to_owned(),
            core: self.core.clone(),
        })
    }

    /// Starts the clock for time-based faults.
    pub fn arm(&self) {
        let mut core = self.core.lock().unwrap();
        core.armed_at = Some(core.tokio_now());
    }

    pub fn set_recording(&self, on: bool) {
        let mut core = self.core.lock().unwrap();
        core.transcript = if on { Some(Vec::new()) } else { None };
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.core.lock().unwrap().transcript.clone().unwrap_or_default()
    }

    /// Silences every link of `node` until [`revive`](Self::revive).
    pub fn kill(&self, node: &str) {
        self.core.lock().unwrap().dead.insert(node.to_owned());
    }

    pub fn revive(&self, node: &str) {
        self.core.lock().unwrap().dead.remove(node);
    }

    pub fn is_dead(&self, node: &str) -> bool {
        self.core.lock().unwrap().dead.contains(node)
    }

    pub fn dead_nodes(&self) -> Vec<String> {
        self.core.lock().unwrap().dead.iter().cloned().collect()
    }
}

pub struct SimNode {
    name: String,
    core: Arc<Mutex<Core>>,
}

impl SimNode {
    pub fn name(&self) -> &str {
        &self.name
    }

    fn normalize(&self, addr: &str) -> io::Result<(String, u16)> {
        let (host, port) = addr
            .rsplit_once(':')
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("bad address {addr:?}")))?;
        let port: u16 = port
            .parse()
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("bad port in {addr:?}")))?;
        let host = match host {
            "" | "0.0.0.0" | "127.0.0.1" | "localhost" => self.name.clone(),
            h => h.to_owned(),
        };
        Ok((host, port))
    }
}

struct SimSink {
    core: Arc<Mutex<Core>>,
    conn: Arc<Conn>,
    from: String,
    to: String,
    out: mpsc::UnboundedSender<Delivery>,
}

impl SimSink {
    fn deliver(&self, core: &mut Core, payload: Vec<u8>) {
        let arrival = core.schedule(&self.from, &self.to, payload.len());
        core.record(self.conn.id, &self.from, &self.to, arrival, &payload);
        let twice = core.plan.duplicate && is_authenticated(&payload);
        if twice {
            let _ = self.out.send(Some((payload.clone(), arrival)));
        }
        let _ = self.out.send(Some((payload, arrival)));
    }
}

#[async_trait]
impl PayloadSink for SimSink {
    async fn send(&mut self, payload: Vec<u8>) -> io::Result<()> {
        if payload.len() > MAX_FRAME_LEN {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
        }
        if self.conn.closed.load(Ordering::SeqCst) {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "connection closed"));
        }
        let mut core = self.core.lock().unwrap();
        let now = core.now(&self.from);
        if core.silenced(&self.from, &self.to, now) {
            return Ok(());
        }
        if let Some(round) = round_of(&payload) {
            let killed = core
                .plan
                .kill_peer_at
                .iter()
                .any(|k| k.peer == self.from && round.index() >= k.round.index());
            if killed {
                core.dead.insert(self.from.clone());
                return Ok(());
            }
            let close = core.plan.close_channel_at.iter().enumerate().find_map(|(i, c)| {
                (same_link(&c.a, &c.b, &self.from, &self.to) && c.round == round).then_some(i)
            });
            if let Some(i) = close {
                if core.fired_closes.insert(i) {
                    self.conn.force_close();
                    return Ok(());
                }
            }
        }
        self.deliver(&mut core, payload);
        Ok(())
    }

    async fn close(&mut self) {
        let _ = self.out.send(None);
    }
}

impl Drop for SimSink {
    fn drop(&mut self) {
        let _ = self.out.send(None);
    }
}

struct SimSource {
    core: Arc<Mutex<Core>>,
    node: String,
    rx: mpsc::UnboundedReceiver<Delivery>,
    /// Artificial scheduling jitter that lets connections overtake each other.
    jitter: bool,
    _conn: Arc<Conn>,
}

#[async_trait]
impl PayloadSource for SimSource {
    async fn recv(&mut self) -> io::Result<Option<Vec<u8>>> {
        match self.rx.recv().await {
            Some(Some((payload, arrival))) => {
                if self.jitter {
                    let yields = self.core.lock().unwrap().rng.gen_range(0..4);
                    for _ in 0..yields {
                        tokio::task::yield_now().await;
                    }
                }
                self.core.lock().unwrap().observe(&self.node, arrival);
                Ok(Some(payload))
            }
            Some(None) | None => Ok(None),
        }
    }
}

struct SimListener {
    addr: String,
    core: Arc<Mutex<Core>>,
    rx: mpsc::UnboundedReceiver<Link>,
}

#[async_trait]
impl Listener for SimListener {
    async fn accept(&mut self) -> io::Result<Link> {
        self.rx
            .recv()
            .await
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "listener closed"))
    }

    fn local_addr(&self) -> String {
        self.addr.clone()
    }
}

impl Drop for SimListener {
    fn drop(&mut self) {
        self.core.lock().unwrap().listeners.remove(&self.addr);
    }
}

struct SimDatagram {
    node: String,
    addr: String,
    port: u16,
    core: Arc<Mutex<Core>>,
    rx: tokio::sync::Mutex<mpsc::UnboundedReceiver<(Vec<u8>, Duration)>>,
}

#[async_trait]
impl Datagram for SimDatagram {
    async fn send_to(&self, payload: &[u8], addr: &str) -> io::Result<()> {
        let (host, port) = addr
            .rsplit_once(':')
            .and_then(|(h, p)| Some((h.to_owned(), p.parse::<u16>().ok()?)))
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("bad address {addr:?}")))?;
        let broadcast = host == "*" || host == "255.255.255.255";
        let mut core = self.core.lock().unwrap();
        let targets: Vec<(String, String, mpsc::UnboundedSender<(Vec<u8>, Duration)>)> = core
            .datagrams
            .iter()
            .filter(|(a, (_, _))| {
                let same_port = a.rsplit_once(':').is_some_and(|(_, p)| p == port.to_string());
                if broadcast {
                    same_port && **a != self.addr
                } else {
                    **a == format!("{host}:{port}")
                }
            })
            .map(|(a, (owner, tx))| (a.clone(), owner.clone(), tx.clone()))
            .collect();
        for (_, owner, tx) in targets {
            let now = core.now(&self.node);
            if core.silenced(&self.node, &owner, now) {
                continue;
            }
            let arrival = core.schedule(&self.node, &owner, payload.len());
            let _ = tx.send((payload.to_vec(), arrival));
        }
        Ok(())
    }

    async fn recv(&self) -> io::Result<Vec<u8>> {
        let (payload, arrival) = self
            .rx
            .lock()
            .await
            .recv()
            .await
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "socket closed"))?;
        self.core.lock().unwrap().observe(&self.node, arrival);
        Ok(payload)
    }

    fn local_addr(&self) -> String {
        format!("{}:{}", self.node, self.port)
    }
}

impl Drop for SimDatagram {
    fn drop(&mut self) {
        self.core.lock().unwrap().datagrams.remove(&self.addr);
    }
}

#[async_trait]
impl Network for SimNode {
    async fn listen(&self, addr: &str) -> io::Result<Box<dyn Listener>> {
        let (host, mut port) = self.normalize(addr)?;
        let mut core = self.core.lock().unwrap();
        if port == 0 {
            port = core.alloc_port();
        }
        let addr = format!("{host}:{port}");
        if core.listeners.contains_key(&addr) {
            return Err(io::Error::new(io::ErrorKind::AddrInUse, addr));
        }
        let (tx, rx) = mpsc::unbounded_channel();
        core.listeners.insert(addr.clone(), (self.name.clone(), tx));
        Ok(Box::new(SimListener {
            addr,
            core: self.core.clone(),
            rx,
        }))
    }

    async fn connect(&self, addr: &str) -> io::Result<Link> {
        let (host, port) = self.normalize(addr)?;
        let addr = format!("{host}:{port}");
        let mut core = self.core.lock().unwrap();
        let Some((owner, accept)) = core.listeners.get(&addr).cloned() else {
            return Err(io::Error::new(io::ErrorKind::ConnectionRefused, addr));
        };
        let now = core.now(&self.name);
        if core.silenced(&self.name, &owner, now) {
            return Err(io::Error::new(io::ErrorKind::ConnectionRefused, addr));
        }
        let (to_a, rx_a) = mpsc::unbounded_channel();
        let (to_b, rx_b) = mpsc::unbounded_channel();
        let id = core.next_conn;
        core.next_conn += 1;
        let jitter = core.plan.reorder;
        let conn = Arc::new(Conn {
            id,
            a: self.name.clone(),
            b: owner.clone(),
            to_a: to_a.clone(),
            to_b: to_b.clone(),
            closed: AtomicBool::new(false),
        });
        let server_side = Link {
            tx: Box::new(SimSink {
                core: self.core.clone(),
                conn: conn.clone(),
                from: conn.b.clone(),
                to: conn.a.clone(),
                out: to_a,
            }),
            rx: Box::new(SimSource {
                core: self.core.clone(),
                node: owner.clone(),
                rx: rx_b,
                jitter,
                _conn: conn.clone(),
            }),
            remote: self.name.clone(),
        };
        accept
            .send(server_side)
            .map_err(|_| io::Error::new(io::ErrorKind::ConnectionRefused, addr.clone()))?;
        Ok(Link {
            tx: Box::new(SimSink {
                core: self.core.clone(),
                conn: conn.clone(),
                from: self.name.clone(),
                to: owner.clone(),
                out: to_b,
            }),
            rx: Box::new(SimSource {
                core: self.core.clone(),
                node: self.name.clone(),
                rx: rx_a,
                jitter,
                _conn: conn,
            }),
            remote: addr,
        })
    }

    async fn bind_datagram(&self, addr: &str) -> io::Result<Box<dyn Datagram>> {
        let (host, mut port) = self.normalize(addr)?;
        let mut core = self.core.lock().unwrap();
        if port == 0 {
            port = core.alloc_port();
        }
        let addr = format!("{host}:{port}");
        if core.datagrams.contains_key(&addr) {
            return Err(io::Error::new(io::ErrorKind::AddrInUse, addr));
        }
        let (tx, rx) = mpsc::unbounded_channel();
        core.datagrams.insert(addr.clone(), (self.name.clone(), tx));
        Ok(Box::new(SimDatagram {
            node: self.name.clone(),
            addr,
            port,
            core: self.core.clone(),
            rx: tokio::sync::Mutex::new(rx),
        }))
    }

    fn now(&self) -> Duration {
        self.core.lock().unwrap().now(&self.name)
    }

    async fn sleep(&self, d: Duration) {
        let start = self.now();
        tokio::time::sleep(d).await;
        self.core.lock().unwrap().observe(&self.name, start + d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use flexsmc_core::fault::{ChannelClose, LinkDrop, PeerKill};

    async fn pair(net: &SimNetwork, a: &str, b: &str) -> (Link, Link) {
        let mut l = net.node(b).listen(":7000").await.unwrap();
        let client = net.node(a).connect(&format!("{b}:7000")).await.unwrap();
        let server = l.accept().await.unwrap();
        (client, server)
    }

    fn round_frame(round: &str) -> Vec<u8> {
        format!(r#"{{"type":"round_message","sender":"x","session_id":"s","body":{{"round":"{round}"}}}}"#).into_bytes()
    }

    #[tokio::test(start_paused = true)]
    async fn fifo_exactly_once_with_latency() {
        let net = SimNetwork::new(FaultPlan::default(), 1);
        let (mut c, mut s) = pair(&net, "a", "b").await;
        for i in 0..5u8 {
            c.tx.send(vec![i]).await.unwrap();
        }
        c.tx.close().await;
        for i in 0..5u8 {
            assert_eq!(s.rx.recv().await.unwrap(), Some(vec![i]));
        }
        assert_eq!(s.rx.recv().await.unwrap(), None);
        let b = net.node("b");
        assert!(b.now() >= Duration::from_micros(200));
    }

    #[tokio::test(start_paused = true)]
    async fn sleeping_advances_the_causal_clock_exactly() {
        let net = SimNetwork::new(FaultPlan::default(), 1);
        let (mut c, mut s) = pair(&net, "a", "b").await;
        c.tx.send(vec![1]).await.unwrap();
        s.rx.recv().await.unwrap();
        let b = net.node("b");
        let before = b.now();
        b.sleep(Duration::from_millis(1000)).await;
        assert_eq!(b.now() - before, Duration::from_millis(1000));
    }

    #[tokio::test(start_paused = true)]
    async fn dropped_link_goes_silent_after_arming() {
        let plan = FaultPlan {
            drop_link_at: vec![LinkDrop {
                a: "gateway".into(),
                b: "peer3".into(),
                at_ms: 0,
            }],
            ..FaultPlan::default()
        };
        let net = SimNetwork::new(plan, 1);
        let (mut c, mut s) = pair(&net, "peer3", "gateway").await;
        let mut l2 = net.node("gateway").listen(":7001").await.unwrap();
        let mut other = net.node("peer1").connect("gateway:7001").await.unwrap();
        let mut other_s = l2.accept().await.unwrap();
        c.tx.send(b"before".to_vec()).await.unwrap();
        net.arm();
        c.tx.send(b"after".to_vec()).await.unwrap();
        other.tx.send(b"unaffected".to_vec()).await.unwrap();
        assert_eq!(s.rx.recv().await.unwrap(), Some(b"before".to_vec()));
        assert_eq!(other_s.rx.recv().await.unwrap(), Some(b"unaffected".to_vec()));
        let pending = tokio::time::timeout(Duration::from_secs(5), s.rx.recv()).await;
        assert!(pending.is_err());
    }

    #[tokio::test(start_paused = true)]
    async fn killed_peer_is_silenced_from_its_round() {
        let plan = FaultPlan {
            kill_peer_at: vec![PeerKill {
                peer: "peer2".into(),
                round: RoundKind::Reveal,
            }],
            ..FaultPlan::default()
        };
        let net = SimNetwork::new(plan, 1);
        let (mut c, mut s) = pair(&net, "peer2", "gateway").await;
        c.tx.send(round_frame("distribute")).await.unwrap();
        c.tx.send(round_frame("reveal")).await.unwrap();
        c.tx.send(b"later".to_vec()).await.unwrap();
        s.tx.send(b"to the dead".to_vec()).await.unwrap();
        assert_eq!(s.rx.recv().await.unwrap(), Some(round_frame("distribute")));
        assert!(tokio::time::timeout(Duration::from_secs(5), s.rx.recv()).await.is_err());
        assert!(tokio::time::timeout(Duration::from_secs(5), c.rx.recv()).await.is_err());
        assert!(net.is_dead("peer2"));
        assert!(net.node("peer2").connect("gateway:7000").await.is_err());
    }

    #[tokio::test(start_paused = true)]
    async fn channel_close_fires_once() {
        let plan = FaultPlan {
            close_channel_at: vec![ChannelClose {
                a: "gateway".into(),
                b: "peer1".into(),
                round: RoundKind::Distribute,
            }],
            ..FaultPlan::default()
        };
        let net = SimNetwork::new(plan, 1);
        let (mut c, mut s) = pair(&net, "peer1", "gateway").await;
        c.tx.send(round_frame("distribute")).await.unwrap();
        assert_eq!(s.rx.recv().await.unwrap(), None);
        assert_eq!(c.rx.recv().await.unwrap(), None);
        assert!(c.tx.send(vec![1]).await.is_err());
        let mut l = net.node("gateway").listen(":7002").await.unwrap();
        let mut c2 = net.node("peer1").connect("gateway:7002").await.unwrap();
        let mut s2 = l.accept().await.unwrap();
        c2.tx.send(round_frame("distribute")).await.unwrap();
        assert_eq!(s2.rx.recv().await.unwrap(), Some(round_frame("distribute")));
    }

    #[tokio::test(start_paused = true)]
    async fn duplicates_only_authenticated_frames() {
        let plan = FaultPlan {
            duplicate: true,
            ..FaultPlan::default()
        };
        let net = SimNetwork::new(plan, 1);
        let (mut c, mut s) = pair(&net, "a", "b").await;
        c.tx.send(br#"{"auth":{"seq":1}}"#.to_vec()).await.unwrap();
        c.tx.send(br#"{"auth":null}"#.to_vec()).await.unwrap();
        c.tx.close().await;
        let mut got = Vec::new();
        while let Some(p) = s.rx.recv().await.unwrap() {
            got.push(p);
        }
        assert_eq!(got.len(), 3);
    }

    async fn scripted(seed: u64) -> Vec<TranscriptEntry> {
        let net = SimNetwork::new(
            FaultPlan {
                latency: flexsmc_core::fault::Latency::UniformMs(0.1, 0.5),
                reorder: true,
                ..FaultPlan::default()
            },
            seed,
        );
        net.set_recording(true);
        let (mut c, mut s) = pair(&net, "a", "b").await;
        for i in 0..20u8 {
            c.tx.send(vec![b'0' + i % 10]).await.unwrap();
            s.tx.send(vec![b'a' + i % 20]).await.unwrap();
        }
        for _ in 0..20 {
            s.rx.recv().await.unwrap();
            c.rx.recv().await.unwrap();
        }
        net.transcript()
    }

    #[tokio::test(start_paused = true)]
    async fn same_seed_same_transcript() {
        let a = scripted(9).await;
        let b = scripted(9).await;
        assert_eq!(a.len(), 40);
        assert_eq!(a, b);
        assert_ne!(a, scripted(10).await);
    }

    #[tokio::test(start_paused = true)]
    async fn broadcast_datagrams_reach_every_listener_on_the_port() {
        let net = SimNetwork::new(FaultPlan::default(), 1);
        let gw = net.node("gateway").bind_datagram(":0").await.unwrap();
        let p1 = net.node("peer1").bind_datagram(":7400").await.unwrap();
        let p2 = net.node("peer2").bind_datagram(":7400").await.unwrap();
        gw.send_to(b"hi", "*:7400").await.unwrap();
        assert_eq!(p1.recv().await.unwrap(), b"hi");
        assert_eq!(p2.recv().await.unwrap(), b"hi");
        p1.send_to(b"direct", "peer2:7400").await.unwrap();
        assert_eq!(p2.recv().await.unwrap(), b"direct");
    }
}

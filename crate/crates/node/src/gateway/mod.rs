//! The gateway: pairs peers, tracks their liveness, answers clients and
//! orchestrates summation sessions with bounded retry.

use std::collections::{BTreeSet, HashMap};
use std::pin::pin;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use flexsmc_core::discovery::{GatewayAnnouncement, PeerMetadata, SUM_PROTOCOL};
use flexsmc_core::frame::{Frame, MessageType};
use flexsmc_core::identity::{Fingerprint, Identity};
use flexsmc_core::liveness::{Liveness, LivenessPolicy};
use flexsmc_core::messages::{ChannelPurpose, Heartbeat, Hello, PairAccept};
use flexsmc_core::session::{Catalog, ClientCall, ClientReply, ErrorBody, ErrorCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::JoinHandle;

use crate::channel::{accept_secure_channel, Expect};
use crate::config::GatewayConfig;
use crate::discovery::announce_loop;
use crate::net::{ms, Link, SharedNetwork};
use crate::smc::{InProcessAdapter, SmcConfig, SmcInstance};
use crate::trust::TrustStore;

mod client;
mod http;
mod registry;
mod session;

pub use registry::PeerView;
use registry::{PeerEntry, Registry};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("bind {what}: {source}")]
    Bind { what: &'static str, source: std::io::Error },
    #[error(transparent)]
    Trust(#[from] crate::trust::TrustError),
    #[error("no connected peer {0}")]
    UnknownPeer(String),
    #[error("peer {0} did not answer in time")]
    Timeout(String),
    #[error("control channel to {0} closed")]
    Disconnected(String),
}

pub(crate) enum Outgoing {
    Frame {
        kind: MessageType,
        session_id: Option<String>,
        body: Value,
    },
    Close,
}

impl Outgoing {
    pub(crate) fn frame<B: Serialize>(kind: MessageType, session_id: Option<&str>, body: &B) -> Self {
        Outgoing::Frame {
            kind,
            session_id: session_id.map(str::to_owned),
            body: serde_json::to_value(body).expect("message bodies serialize"),
        }
    }
}

/// Session traffic from one peer; `None` means its control channel is gone.
type RouteEvent = (Fingerprint, Option<Frame>);

/// One measured echo round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoSample {
    pub rtt_ms: f64,
    pub adapter_ms: f64,
    pub payload: Value,
}

/// Reply slot for one outstanding echo: the payload and the peer-side adapter time.
type EchoWaiter = oneshot::Sender<(Value, u64)>;

pub(crate) struct Inner {
    cfg: GatewayConfig,
    identity: Identity,
    net: SharedNetwork,
    smc: Arc<SmcInstance>,
    adapter: InProcessAdapter,
    registry: Mutex<Registry>,
    busy_changed: Notify,
    trust: Mutex<TrustStore>,
    routes: Mutex<HashMap<String, mpsc::UnboundedSender<RouteEvent>>>,
    echoes: Mutex<HashMap<(Fingerprint, u32), EchoWaiter>>,
    echo_seq: AtomicU32,
    next_conn: AtomicU64,
    next_request: AtomicU64,
    rng: Mutex<ChaCha8Rng>,
}

impl Inner {
    fn fingerprint(&self) -> Fingerprint {
        self.identity.fingerprint()
    }

    fn policy(&self) -> LivenessPolicy {
        LivenessPolicy {
            interval: self.cfg.tunables.heartbeat(),
            ..LivenessPolicy::default()
        }
    }

    fn child_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng.lock().unwrap().gen())
    }

    fn fresh_request_id(&self) -> String {
        let n = self.next_request.fetch_add(1, Ordering::Relaxed);
        let tag: u32 = self.rng.lock().unwrap().gen();
        format!("{tag:08x}-{n}")
    }

    fn catalog(&self) -> Catalog {
        self.registry.lock().unwrap().catalog()
    }

    pub(crate) async fn call(self: &Arc<Self>, call: ClientCall, request_id: Option<String>) -> Result<ClientReply, ErrorBody> {
        match call {
            ClientCall::ListMetadata { .. } => Ok(ClientReply::Catalog(self.catalog())),
            ClientCall::Query(q) => {
                let rid = request_id.unwrap_or_else(|| self.fresh_request_id());
                session::handle_query(self, q, rid).await.map(ClientReply::Result)
            }
        }
    }

    fn notify_lost(&self, fp: &Fingerprint) {
        for r in self.routes.lock().unwrap().values() {
            let _ = r.send((fp.clone(), None));
        }
    }

    fn on_frame(&self, fp: &Fingerprint, name: &str, conn: u64, out: &mpsc::UnboundedSender<Outgoing>, f: Frame) {
        match f.kind {
            MessageType::Heartbeat => {
                let Ok(hb) = f.body_as::<Heartbeat>() else { return };
                {
                    let mut reg = self.registry.lock().unwrap();
                    if let Some(e) = reg.peers.get_mut(name).filter(|e| e.conn == conn) {
                        e.last_heartbeat = self.net.now();
                        e.liveness = Liveness::Active;
                    }
                }
                let _ = out.send(Outgoing::frame(MessageType::Heartbeat, None, &Heartbeat { seq: hb.seq, ack: true }));
            }
            MessageType::Hello => {
                if let Ok(Hello::EchoReply {
                    seq,
                    payload,
                    adapter_us,
                }) = f.body_as()
                {
                    if let Some(w) = self.echoes.lock().unwrap().remove(&(fp.clone(), seq)) {
                        let _ = w.send((payload, adapter_us));
                    }
                }
            }
            MessageType::SessionPrepare | MessageType::SessionResult | MessageType::SessionAbort | MessageType::Error => {
                let Some(sid) = f.session_id.clone() else { return };
                if let Some(r) = self.routes.lock().unwrap().get(&sid) {
                    let _ = r.send((fp.clone(), Some(f)));
                }
            }
            _ => {}
        }
    }

    async fn echo(&self, peer: &Fingerprint, payload: Value, timeout: Duration) -> Result<EchoSample, GatewayError> {
        let seq = self.echo_seq.fetch_add(1, Ordering::Relaxed);
        let control = {
            let reg = self.registry.lock().unwrap();
            reg.by_fingerprint(peer).and_then(|e| e.control.clone())
        }
        .ok_or_else(|| GatewayError::UnknownPeer(peer.short().to_owned()))?;
        let (tx, rx) = oneshot::channel();
        self.echoes.lock().unwrap().insert((peer.clone(), seq), tx);
        let t0 = self.net.now();
        let sent = control.send(Outgoing::frame(MessageType::Hello, None, &Hello::Echo { seq, payload }));
        if sent.is_err() {
            self.echoes.lock().unwrap().remove(&(peer.clone(), seq));
            return Err(GatewayError::Disconnected(peer.short().to_owned()));
        }
        let reply = tokio::time::timeout(timeout, rx).await;
        self.echoes.lock().unwrap().remove(&(peer.clone(), seq));
        match reply {
            Ok(Ok((payload, adapter_us))) => Ok(EchoSample {
                rtt_ms: ms(self.net.now().saturating_sub(t0)),
                adapter_ms: adapter_us as f64 / 1000.0,
                payload,
            }),
            Ok(Err(_)) => Err(GatewayError::Disconnected(peer.short().to_owned())),
            Err(_) => Err(GatewayError::Timeout(peer.short().to_owned())),
        }
    }

    /// Pairing handshake, registration and the control loop for one peer.
    async fn serve_control(self: Arc<Self>, link: Link) {
        let mut rng = self.child_rng();
        let timeout = self.cfg.tunables.handshake_timeout();
        let decide = |info: &crate::channel::InitInfo| match info.purpose {
            ChannelPurpose::Control => Ok(Expect::Tofu),
            ChannelPurpose::Smc => Err("this endpoint only accepts control channels".to_string()),
        };
        let Ok(ch) = accept_secure_channel(&self.identity, link, decide, timeout, self.net.now(), &mut rng).await else {
            return;
        };
        let remote = ch.remote;
        let fp = remote.fingerprint();
        let (mut tx, mut rx) = ch.split();

        let Ok(Ok(Some(f))) = tokio::time::timeout(timeout, rx.recv()).await else {
            return;
        };
        let md = (f.kind == MessageType::PairRequest)
            .then(|| f.body_as::<PeerMetadata>().ok())
            .flatten();
        let Some(mut md) = md else {
            let _ = tx.send(MessageType::Error, None, &ErrorBody::new(ErrorCode::BadRequest, "expected pair_request")).await;
            tx.close().await;
            return;
        };
        let verdict = if md.fingerprint != fp {
            Err(ErrorBody::new(
                ErrorCode::FingerprintMismatch,
                "metadata fingerprint differs from the channel key",
            ))
        } else if let Err(e) = self.trust.lock().unwrap().pin(&remote, Some(&format!("peer:{}", md.name))) {
            Err(ErrorBody::new(ErrorCode::FingerprintMismatch, e.to_string()))
        } else {
            md.validate()
                .map_err(|e| ErrorBody::new(ErrorCode::MetadataRejected, e.to_string()))
        };
        if let Err(body) = verdict {
            let _ = tx.send(MessageType::Error, None, &body).await;
            tx.close().await;
            return;
        }
        md.groups = md.derive_groups();
        let accept = PairAccept {
            gateway: self.fingerprint(),
            groups: md.groups.clone(),
        };
        if tx.send(MessageType::PairAccept, None, &accept).await.is_err() {
            return;
        }
        let Ok(Ok(Some(f))) = tokio::time::timeout(timeout, rx.recv()).await else {
            return;
        };
        match f.body_as::<Hello>() {
            Ok(Hello::Connect { name }) if f.kind == MessageType::Hello && name == md.name => {}
            _ => {
                tx.close().await;
                return;
            }
        }

        // Listed before the peer can see `connected`.
        let name = md.name.clone();
        let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Outgoing>();
        let close = Arc::new(Notify::new());
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        {
            let mut reg = self.registry.lock().unwrap();
            let entry = PeerEntry {
                metadata: md,
                public_key: remote,
                liveness: Liveness::Active,
                last_heartbeat: self.net.now(),
                conn,
                control: Some(out_tx.clone()),
                close: close.clone(),
            };
            if let Some(old) = reg.peers.insert(name.clone(), entry) {
                old.close.notify_one();
            }
        }
        if tx.send(MessageType::Hello, None, &Hello::Connected).await.is_err() {
            self.unlist(&name, conn);
            return;
        }
        let writer = AbortOnDrop(tokio::spawn(async move {
            while let Some(o) = out_rx.recv().await {
                match o {
                    Outgoing::Frame { kind, session_id, body } => {
                        if tx.send(kind, session_id.as_deref(), &body).await.is_err() {
                            break;
                        }
                    }
                    Outgoing::Close => break,
                }
            }
            tx.close().await;
        }));
        loop {
            tokio::select! {
                _ = close.notified() => break,
                f = rx.recv() => match f {
                    Ok(Some(f)) => self.on_frame(&fp, &name, conn, &out_tx, f),
                    _ => break,
                },
            }
        }
        self.unlist(&name, conn);
        let _ = out_tx.send(Outgoing::Close);
        drop(out_tx);
        self.notify_lost(&fp);
        let mut writer = writer;
        let _ = tokio::time::timeout(Duration::from_secs(1), &mut writer.0).await;
    }

    /// Unlists `name` unless a newer connection has replaced `conn`.
    fn unlist(&self, name: &str, conn: u64) {
        let mut reg = self.registry.lock().unwrap();
        if let Some(e) = reg.peers.get_mut(name).filter(|e| e.conn == conn) {
            e.liveness = Liveness::Unlisted;
            e.control = None;
        }
    }

    async fn monitor(self: Arc<Self>) {
        let policy = self.policy();
        loop {
            self.net.sleep(policy.check_period()).await;
            let gone = self.registry.lock().unwrap().sweep(self.net.now(), &policy);
            for (fp, close) in gone {
                close.notify_one();
                self.notify_lost(&fp);
            }
        }
    }
}

struct AbortOnDrop(JoinHandle<()>);

impl Drop for AbortOnDrop {
    fn drop(&mut self) {
        self.0.abort();
    }
}

/// Holds peers for one session; overlapping sessions wait for each other.
pub(crate) struct BusyGuard {
    inner: Arc<Inner>,
    fps: Vec<Fingerprint>,
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        let mut reg = self.inner.registry.lock().unwrap();
        for fp in &self.fps {
            reg.busy.remove(fp);
        }
        drop(reg);
        self.inner.busy_changed.notify_waiters();
    }
}

pub(crate) async fn acquire(inner: &Arc<Inner>, fps: Vec<Fingerprint>) -> BusyGuard {
    loop {
        let mut notified = pin!(inner.busy_changed.notified());
        notified.as_mut().enable();
        {
            let mut reg = inner.registry.lock().unwrap();
            if fps.iter().all(|f| !reg.busy.contains(f)) {
                reg.busy.extend(fps.iter().cloned());
                return BusyGuard {
                    inner: inner.clone(),
                    fps,
                };
            }
        }
        notified.await;
    }
}

pub struct GatewayHandle {
    inner: Arc<Inner>,
    pub control_endpoint: String,
    pub client_endpoint: String,
    pub http_endpoint: Option<String>,
    tasks: Vec<JoinHandle<()>>,
    _stop_announce: watch::Sender<bool>,
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl GatewayHandle {
    pub fn fingerprint(&self) -> Fingerprint {
        self.inner.fingerprint()
    }

    pub fn name(&self) -> &str {
        &self.inner.cfg.name
    }

    pub fn smc_endpoint(&self) -> &str {
        self.inner.smc.endpoint()
    }

    pub fn announcement(&self) -> GatewayAnnouncement {
        GatewayAnnouncement {
            fingerprint: self.fingerprint(),
            endpoint: self.control_endpoint.clone(),
            client_endpoint: Some(self.client_endpoint.clone()),
            location: self.inner.cfg.discovery.location.clone(),
            purpose: self.inner.cfg.discovery.purpose.clone(),
            protocols: vec![SUM_PROTOCOL.to_owned()],
        }
    }

    pub fn peers(&self) -> Vec<PeerView> {
        self.inner.registry.lock().unwrap().views()
    }

    pub fn liveness_of(&self, name: &str) -> Option<Liveness> {
        self.inner.registry.lock().unwrap().peers.get(name).map(|e| e.liveness)
    }

    pub fn catalog(&self) -> Catalog {
        self.inner.catalog()
    }

    /// Runs a client call in process, as if it came over the client endpoint.
    pub async fn request(&self, call: ClientCall, request_id: Option<String>) -> Result<ClientReply, ErrorBody> {
        self.inner.call(call, request_id).await
    }

    /// Round trip through the peer's control channel and adapter.
    pub async fn echo(&self, peer: &Fingerprint, payload: Value, timeout: Duration) -> Result<EchoSample, GatewayError> {
        self.inner.echo(peer, payload, timeout).await
    }

    /// Drops the control channel of `name` from the gateway side.
    pub fn disconnect(&self, name: &str) -> bool {
        let reg = self.inner.registry.lock().unwrap();
        match reg.peers.get(name).filter(|e| e.control.is_some()) {
            Some(e) => {
                e.close.notify_one();
                true
            }
            None => false,
        }
    }
}

/// Binds every endpoint and starts the gateway's tasks.
pub async fn spawn_gateway(
    cfg: GatewayConfig,
    identity: Identity,
    net: SharedNetwork,
    seed: u64,
) -> Result<GatewayHandle, GatewayError> {
    let bind = |what: &'static str| move |source| GatewayError::Bind { what, source };
    let smc_cfg = SmcConfig {
        round_timeout: cfg.tunables.round_timeout(),
        handshake_timeout: cfg.tunables.handshake_timeout(),
    };
    let smc = SmcInstance::start(identity.clone(), net.clone(), &cfg.smc_bind, smc_cfg, seed)
        .await
        .map_err(bind("smc"))?;
    let mut control = net.listen(&cfg.control_bind).await.map_err(bind("control"))?;
    let clients = net.listen(&cfg.client_bind).await.map_err(bind("client"))?;
    let http_listener = match &cfg.http_bind {
        Some(addr) => Some(tokio::net::TcpListener::bind(addr).await.map_err(bind("http"))?),
        None => None,
    };
    let trust = match &cfg.trust_store {
        Some(p) => TrustStore::open(p)?,
        None => TrustStore::in_memory(),
    };
    let announce_socket = if cfg.discovery.announce_targets.is_empty() {
        None
    } else {
        Some(net.bind_datagram(&cfg.discovery.bind).await.map_err(bind("discovery"))?)
    };
    let inner = Arc::new(Inner {
        adapter: InProcessAdapter(smc.clone()),
        smc,
        identity,
        net: net.clone(),
        registry: Mutex::new(Registry::default()),
        busy_changed: Notify::new(),
        trust: Mutex::new(trust),
        routes: Mutex::new(HashMap::new()),
        echoes: Mutex::new(HashMap::new()),
        echo_seq: AtomicU32::new(1),
        next_conn: AtomicU64::new(1),
        next_request: AtomicU64::new(1),
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d)),
        cfg,
    });
    let control_endpoint = control.local_addr();
    let client_endpoint = clients.local_addr();
    let mut tasks = Vec::new();
    let i = inner.clone();
    tasks.push(tokio::spawn(async move {
        while let Ok(link) = control.accept().await {
            tokio::spawn(i.clone().serve_control(link));
        }
    }));
    tasks.push(client::serve_clients(inner.clone(), clients));
    tasks.push(tokio::spawn(inner.clone().monitor()));
    let http_endpoint = match http_listener {
        Some(l) => {
            let addr = l.local_addr().map_err(bind("http"))?.to_string();
            tasks.push(tokio::spawn(http::serve_http(inner.clone(), l)));
            Some(addr)
        }
        None => None,
    };
    let (stop, stop_rx) = watch::channel(false);
    let mut handle = GatewayHandle {
        inner: inner.clone(),
        control_endpoint,
        client_endpoint,
        http_endpoint,
        tasks,
        _stop_announce: stop,
    };
    if let Some(sock) = announce_socket {
        let d = &inner.cfg.discovery;
        let ann = handle.announcement();
        handle.tasks.push(tokio::spawn({
            let (targets, period) = (d.announce_targets.clone(), Duration::from_millis(d.period_ms));
            async move {
                let _ = announce_loop(sock, net, ann, targets, period, stop_rx).await;
            }
        }));
    }
    Ok(handle)
}

/// Participants named in failure evidence that the registry still calls
/// Active.
pub(crate) fn still_active(inner: &Inner, evidence: &[Fingerprint]) -> BTreeSet<Fingerprint> {
    let reg = inner.registry.lock().unwrap();
    evidence
        .iter()
        .filter(|fp| reg.by_fingerprint(fp).is_some_and(|e| e.liveness == Liveness::Active))
        .cloned()
        .collect()
}

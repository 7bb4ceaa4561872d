//! The peer daemon: finds a gateway, pairs, holds the control channel and
//! drives the local SMC instance through the adapter on the gateway's orders.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use flexsmc_core::discovery::{
    select_gateway, DiscoveryCache, GatewayAnnouncement, GatewayTarget, PeerMetadata, ANNOUNCE_PERIOD, SUM_PROTOCOL,
};
use flexsmc_core::frame::{Frame, MessageType};
use flexsmc_core::identity::{Fingerprint, Identity};
use flexsmc_core::messages::{
    ChannelPurpose, Heartbeat, Hello, LocalTiming, PairAccept, PrepareOrder, SessionAbort, SessionPrepare,
    SessionResult,
};
use flexsmc_core::peer_state::{advance, FailureKind, PeerEvent, PeerState, Phase};
use flexsmc_core::session::{ErrorBody, ErrorCode};
use flexsmc_core::FieldElement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use tokio::sync::{mpsc, watch};
use tokio::task::{JoinHandle, JoinSet};

use crate::channel::{open_secure_channel, ChannelError, Expect, SecureChannel};
use crate::config::{AdapterMode, PeerConfig};
use crate::discovery::listen_announcements;
use crate::net::{ms, SharedNetwork};
use crate::smc::{serve_adapter, Adapter, InProcessAdapter, PrepareRequest, SmcConfig, SmcInstance, SocketAdapter};
use crate::trust::TrustStore;

const HISTORY_LEN: usize = 64;
const MAX_BACKOFF_STEPS: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum PeerError {
    #[error("smc endpoint: {0}")]
    Bind(std::io::Error),
    #[error(transparent)]
    Adapter(#[from] crate::smc::AdapterError),
    #[error(transparent)]
    Trust(#[from] crate::trust::TrustError),
}

/// One applied state transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub from: Phase,
    pub event: &'static str,
    pub to: Phase,
}

/// Outcome of the last session this peer saw torn down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    pub session_id: String,
    pub result: FieldElement,
    pub contributors: usize,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerStatus {
    pub phase: Phase,
    pub gateway: Option<GatewayTarget>,
    pub gateway_fingerprint: Option<Fingerprint>,
    pub retries: u32,
    pub last_result: Option<SessionOutcome>,
    /// Most recent transitions, oldest first.
    pub history: Vec<Transition>,
}

impl Default for PeerStatus {
    fn default() -> Self {
        PeerStatus {
            phase: Phase::Discovery,
            gateway: None,
            gateway_fingerprint: None,
            retries: 0,
            last_result: None,
            history: Vec::new(),
        }
    }
}

pub struct PeerHandle {
    pub name: String,
    pub fingerprint: Fingerprint,
    pub smc: Arc<SmcInstance>,
    pub status: watch::Receiver<PeerStatus>,
    tasks: Vec<JoinHandle<()>>,
}

impl Drop for PeerHandle {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl PeerHandle {
    pub fn phase(&self) -> Phase {
        self.status.borrow().phase
    }

    /// Waits until the daemon reports `phase`.
    pub async fn wait_for(&mut self, phase: Phase) {
        let _ = self.status.wait_for(|s| s.phase == phase).await;
    }

}

/// Label under which a gateway's key is pinned.
pub fn gateway_label(endpoint: &str) -> String {
    format!("gateway@{endpoint}")
}

/// Starts the SMC instance, the adapter and the daemon loop.
pub async fn spawn_peer(
    cfg: PeerConfig,
    identity: Identity,
    net: SharedNetwork,
    seed: u64,
) -> Result<PeerHandle, PeerError> {
    let smc_cfg = SmcConfig {
        round_timeout: cfg.tunables.round_timeout(),
        handshake_timeout: cfg.tunables.handshake_timeout(),
    };
    let smc = SmcInstance::start(identity.clone(), net.clone(), &cfg.smc_bind, smc_cfg, seed)
        .await
        .map_err(PeerError::Bind)?;
    let mut tasks = Vec::new();
    let adapter: Arc<dyn Adapter> = match cfg.adapter {
        AdapterMode::Inproc => Arc::new(InProcessAdapter(smc.clone())),
        AdapterMode::Socket => {
            let listener = net.listen("127.0.0.1:0").await.map_err(PeerError::Bind)?;
            let addr = listener.local_addr();
            tasks.push(serve_adapter(listener, smc.clone()));
            Arc::new(SocketAdapter::connect(net.as_ref(), &addr).await?)
        }
    };
    let trust = match &cfg.trust_store {
        Some(p) => TrustStore::open(p)?,
        None => TrustStore::in_memory(),
    };
    let (ann_tx, ann_rx) = mpsc::unbounded_channel();
    if let Some(port) = cfg.discovery.port {
        let sock = net
            .bind_datagram(&format!("0.0.0.0:{port}"))
            .await
            .map_err(PeerError::Bind)?;
        tasks.push(listen_announcements(sock, ann_tx));
    }
    let (status_tx, status) = watch::channel(PeerStatus::default());
    let name = cfg.name.clone();
    let daemon = Daemon {
        identity: identity.clone(),
        endpoint: smc.endpoint().to_owned(),
        cfg,
        net,
        adapter,
        trust: Arc::new(Mutex::new(trust)),
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        status: status_tx,
        announcements: ann_rx,
        cache: DiscoveryCache::default(),
    };
    tasks.push(tokio::spawn(daemon.run()));
    Ok(PeerHandle {
        name,
        fingerprint: identity.fingerprint(),
        smc,
        status,
        tasks,
    })
}

struct Daemon {
    identity: Identity,
    endpoint: String,
    cfg: PeerConfig,
    net: SharedNetwork,
    adapter: Arc<dyn Adapter>,
    trust: Arc<Mutex<TrustStore>>,
    rng: ChaCha8Rng,
    status: watch::Sender<PeerStatus>,
    announcements: mpsc::UnboundedReceiver<GatewayAnnouncement>,
    cache: DiscoveryCache,
}

impl Daemon {
    async fn run(mut self) {
        let mut state = PeerState::new();
        let mut channel: Option<SecureChannel> = None;
        loop {
            let event = match state.phase {
                Phase::Discovery => {
                    channel = None;
                    self.discover(&mut state).await
                }
                Phase::Pairing => {
                    let target = state.gateway.clone().expect("pairing has a target");
                    match self.pair(&target).await {
                        Ok(ch) => {
                            self.status.send_modify(|s| s.gateway_fingerprint = Some(ch.remote_fingerprint()));
                            channel = Some(ch);
                            PeerEvent::PairOk
                        }
                        Err(ev) => ev,
                    }
                }
                Phase::Connecting => {
                    let ch = channel.as_mut().expect("paired channel");
                    self.connect(ch).await
                }
                Phase::Operation => {
                    let ch = channel.take().expect("connected channel");
                    self.operate(ch).await
                }
            };
            let from = state.phase;
            let name = event.name();
            match advance(&state, event) {
                Ok(next) => state = next,
                Err(e) => {
                    // The loop only produces events legal in the current phase.
                    debug_assert!(false, "{e}");
                    continue;
                }
            }
            tracing::info!(peer = %self.cfg.name, %from, event = name, to = %state.phase, "transition");
            let st = state.clone();
            self.status.send_modify(|s| {
                s.phase = st.phase;
                s.gateway = st.gateway.clone();
                s.retries = st.retries;
                if st.phase == Phase::Discovery {
                    s.gateway_fingerprint = None;
                }
                if s.history.len() == HISTORY_LEN {
                    s.history.remove(0);
                }
                s.history.push(Transition {
                    from,
                    event: name,
                    to: st.phase,
                });
            });
        }
    }

    fn drain_announcements(&mut self) {
        let now = self.net.now();
        while let Ok(a) = self.announcements.try_recv() {
            self.cache.observe(a, now);
        }
    }

    fn pick(&mut self, state: &mut PeerState) -> Option<GatewayTarget> {
        self.drain_announcements();
        let excluded = state.take_exclusion();
        let live: Vec<GatewayAnnouncement> = self
            .cache
            .live(self.net.now(), ANNOUNCE_PERIOD)
            .into_iter()
            .filter(|a| excluded.as_ref().is_none_or(|x| x.fingerprint.as_ref() != Some(&a.fingerprint)))
            .collect();
        if let Ok(a) = select_gateway(&live, &self.cfg.discovery.policy) {
            return Some(GatewayTarget::from(a));
        }
        let statics: Vec<&GatewayTarget> = self
            .cfg
            .discovery
            .static_gateways
            .iter()
            .filter(|t| excluded.as_ref() != Some(*t))
            .collect();
        if statics.is_empty() {
            // Keep the exclusion until there is something to choose from.
            state.excluded = excluded;
            return None;
        }
        Some(statics[state.retries as usize % statics.len()].clone())
    }

    async fn discover(&mut self, state: &mut PeerState) -> PeerEvent {
        if state.retries > 0 {
            let steps = (state.retries - 1).min(MAX_BACKOFF_STEPS);
            self.net.sleep(self.cfg.tunables.retry_backoff() * (1 << steps)).await;
        }
        loop {
            if let Some(t) = self.pick(state) {
                return PeerEvent::GatewayFound(t);
            }
            tokio::select! {
                Some(a) = self.announcements.recv() => {
                    let now = self.net.now();
                    self.cache.observe(a, now);
                }
                _ = self.net.sleep(self.cfg.tunables.retry_backoff()) => {}
            }
        }
    }

    fn metadata(&self) -> PeerMetadata {
        PeerMetadata {
            name: self.cfg.name.clone(),
            fingerprint: self.identity.fingerprint(),
            endpoint: self.endpoint.clone(),
            location: self.cfg.location.clone(),
            capabilities: self.cfg.capabilities.keys().cloned().collect(),
            protocols: vec![SUM_PROTOCOL.to_owned()],
            groups: Vec::new(),
        }
    }

    async fn pair(&mut self, target: &GatewayTarget) -> Result<SecureChannel, PeerEvent> {
        let transient = PeerEvent::PairFail(FailureKind::Transient);
        let permanent = PeerEvent::PairFail(FailureKind::Permanent);
        let label = gateway_label(&target.endpoint);
        let expect = match &target.fingerprint {
            Some(fp) => Expect::Pinned(fp.clone()),
            None => match self.trust.lock().unwrap().pinned_for(&label) {
                Some(fp) => Expect::Pinned(fp),
                None => Expect::Tofu,
            },
        };
        let link = self.net.connect(&target.endpoint).await.map_err(|_| transient.clone())?;
        let mut ch = open_secure_channel(
            &self.identity,
            link,
            ChannelPurpose::Control,
            None,
            &expect,
            self.cfg.tunables.handshake_timeout(),
            self.net.now(),
            &mut self.rng,
        )
        .await
        .map_err(|e| match e {
            ChannelError::FingerprintMismatch { .. } => permanent.clone(),
            _ => transient.clone(),
        })?;
        let remote = ch.remote;
        if self.trust.lock().unwrap().pin(&remote, Some(&label)).is_err() {
            return Err(permanent);
        }
        if ch
            .tx
            .send(MessageType::PairRequest, None, &self.metadata())
            .await
            .is_err()
        {
            return Err(PeerEvent::ChannelLost);
        }
        let reply = tokio::time::timeout(self.cfg.tunables.reply_timeout(), ch.rx.recv()).await;
        match reply {
            Err(_) => Err(transient),
            Ok(Ok(None)) => Err(PeerEvent::ChannelLost),
            Ok(Err(_)) => Err(transient),
            Ok(Ok(Some(f))) => match f.kind {
                MessageType::PairAccept => match f.body_as::<PairAccept>() {
                    Ok(acc) if acc.gateway == remote.fingerprint() => Ok(ch),
                    _ => Err(transient),
                },
                MessageType::Error => match f.body_as::<ErrorBody>() {
                    Ok(b) if matches!(b.code, ErrorCode::FingerprintMismatch | ErrorCode::MetadataRejected) => {
                        Err(permanent)
                    }
                    _ => Err(transient),
                },
                _ => Err(transient),
            },
        }
    }

    async fn connect(&mut self, ch: &mut SecureChannel) -> PeerEvent {
        let hello = Hello::Connect {
            name: self.cfg.name.clone(),
        };
        if ch.tx.send(MessageType::Hello, None, &hello).await.is_err() {
            return PeerEvent::ChannelLost;
        }
        let deadline = tokio::time::Instant::now() + self.cfg.tunables.reply_timeout();
        loop {
            match tokio::time::timeout_at(deadline, ch.rx.recv()).await {
                Err(_) => return PeerEvent::PairFail(FailureKind::Transient),
                Ok(Ok(None)) | Ok(Err(_)) => return PeerEvent::ChannelLost,
                Ok(Ok(Some(f))) => {
                    if f.kind == MessageType::Hello && matches!(f.body_as::<Hello>(), Ok(Hello::Connected)) {
                        return PeerEvent::ChannelUp;
                    }
                    if f.kind == MessageType::Error {
                        return PeerEvent::PairFail(FailureKind::Transient);
                    }
                }
            }
        }
    }

    async fn operate(&mut self, ch: SecureChannel) -> PeerEvent {
        let (mut tx, mut rx) = ch.split();
        let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Outgoing>();
        let (in_tx, mut inbound) = mpsc::unbounded_channel::<Option<Frame>>();
        let mut io = JoinSet::new();
        io.spawn(async move {
            while let Some(o) = out_rx.recv().await {
                if tx.send(o.kind, o.session_id.as_deref(), &o.body).await.is_err() {
                    break;
                }
            }
            tx.close().await;
        });
        io.spawn(async move {
            loop {
                match rx.recv().await {
                    Ok(Some(f)) => {
                        if in_tx.send(Some(f)).is_err() {
                            break;
                        }
                    }
                    _ => {
                        let _ = in_tx.send(None);
                        break;
                    }
                }
            }
        });
        let ctx = SessionCtx {
            out: out_tx,
            adapter: self.adapter.clone(),
            net: self.net.clone(),
            cfg: self.cfg.clone(),
            trust: self.trust.clone(),
            status: self.status.clone(),
            sessions: Arc::new(Mutex::new(HashMap::new())),
        };
        let mut work = JoinSet::new();
        let interval = self.cfg.tunables.heartbeat();
        let mut next_beat = self.net.now() + interval;
        let mut sent: u64 = 0;
        let mut acked: u64 = 0;
        let event = loop {
            let wait = next_beat.saturating_sub(self.net.now());
            tokio::select! {
                f = inbound.recv() => match f.flatten() {
                    None => break PeerEvent::ChannelLost,
                    Some(f) => {
                        if f.kind == MessageType::Heartbeat {
                            if let Ok(hb) = f.body_as::<Heartbeat>() {
                                if hb.ack {
                                    acked = acked.max(hb.seq);
                                }
                            }
                        } else {
                            ctx.handle(f, &mut work);
                        }
                    }
                },
                _ = self.net.sleep(wait) => {
                    if sent - acked >= u64::from(self.cfg.tunables.heartbeat_miss_limit) {
                        break PeerEvent::HeartbeatAckMissed;
                    }
                    sent += 1;
                    ctx.send(MessageType::Heartbeat, None, &Heartbeat { seq: sent, ack: false });
                    next_beat += interval;
                }
                Some(_) = work.join_next(), if !work.is_empty() => {}
            }
        };
        work.abort_all();
        io.abort_all();
        let open: Vec<String> = ctx.sessions.lock().unwrap().keys().cloned().collect();
        for sid in open {
            let _ = self.adapter.abort(&sid).await;
        }
        event
    }
}

struct Outgoing {
    kind: MessageType,
    session_id: Option<String>,
    body: Value,
}

#[derive(Default)]
struct LocalSession {
    adapter_prepare_ms: f64,
}

#[derive(Clone)]
struct SessionCtx {
    out: mpsc::UnboundedSender<Outgoing>,
    adapter: Arc<dyn Adapter>,
    net: SharedNetwork,
    cfg: PeerConfig,
    trust: Arc<Mutex<TrustStore>>,
    status: watch::Sender<PeerStatus>,
    sessions: Arc<Mutex<HashMap<String, LocalSession>>>,
}

impl SessionCtx {
    fn send<B: Serialize>(&self, kind: MessageType, session_id: Option<&str>, body: &B) {
        let body = serde_json::to_value(body).expect("message bodies serialize");
        let _ = self.out.send(Outgoing {
            kind,
            session_id: session_id.map(str::to_owned),
            body,
        });
    }

    fn abort_frame(&self, sid: &str, reason: String, missing: Vec<Fingerprint>) {
        self.send(MessageType::SessionAbort, Some(sid), &SessionAbort { reason, missing });
    }

    fn handle(&self, f: Frame, work: &mut JoinSet<()>) {
        let sid = f.session_id.clone().unwrap_or_default();
        match f.kind {
            MessageType::SessionPrepare => match f.body_as::<SessionPrepare>() {
                Ok(SessionPrepare::Prepare(order)) => {
                    let ctx = self.clone();
                    work.spawn(async move { ctx.prepare(order).await });
                }
                Ok(SessionPrepare::Start) => {
                    let ctx = self.clone();
                    work.spawn(async move { ctx.execute(sid).await });
                }
                Ok(SessionPrepare::Ready) | Err(_) => {}
            },
            MessageType::SessionAbort => {
                let known = self.sessions.lock().unwrap().remove(&sid).is_some();
                if known {
                    let adapter = self.adapter.clone();
                    work.spawn(async move {
                        let _ = adapter.abort(&sid).await;
                    });
                }
            }
            MessageType::SessionResult => {
                if let Ok(SessionResult::Teardown {
                    result,
                    contributors,
                    attempt,
                }) = f.body_as()
                {
                    self.sessions.lock().unwrap().remove(&sid);
                    self.status.send_modify(|s| {
                        s.last_result = Some(SessionOutcome {
                            session_id: sid,
                            result,
                            contributors,
                            attempt,
                        })
                    });
                }
            }
            MessageType::Hello => {
                if let Ok(Hello::Echo { seq, payload }) = f.body_as() {
                    let ctx = self.clone();
                    work.spawn(async move { ctx.echo(seq, payload).await });
                }
            }
            _ => {}
        }
    }

    async fn prepare(&self, order: PrepareOrder) {
        let sid = order.plan.session_id.clone();
        let Some(source) = self.cfg.capabilities.get(&order.data_type) else {
            let mut err = ErrorBody::new(
                ErrorCode::CapabilityMissing,
                format!("no data source for {:?}", order.data_type),
            );
            err.attempts = Some(order.attempt);
            self.send(MessageType::Error, Some(&sid), &err);
            return;
        };
        {
            let mut trust = self.trust.lock().unwrap();
            for p in &order.trust {
                let _ = trust.pin(&p.public_key, None);
            }
        }
        let input = FieldElement::from(source.read(&order.request_id));
        let t0 = self.net.now();
        let prepared = self
            .adapter
            .prepare(PrepareRequest {
                plan: order.plan,
                input: Some(input),
            })
            .await;
        let adapter_prepare_ms = ms(self.net.now().saturating_sub(t0));
        match prepared {
            Ok(()) => {
                self.sessions
                    .lock()
                    .unwrap()
                    .insert(sid.clone(), LocalSession { adapter_prepare_ms });
                self.send(MessageType::SessionPrepare, Some(&sid), &SessionPrepare::Ready);
            }
            Err(e) => self.abort_frame(&sid, e.to_string(), Vec::new()),
        }
    }

    async fn execute(&self, sid: String) {
        let adapter_prepare_ms = match self.sessions.lock().unwrap().get(&sid) {
            Some(s) => s.adapter_prepare_ms,
            None => {
                self.abort_frame(&sid, format!("session {sid:?} was not prepared"), Vec::new());
                return;
            }
        };
        let t0 = self.net.now();
        let r = self.adapter.execute(&sid).await;
        let execute_call_ms = ms(self.net.now().saturating_sub(t0));
        match r {
            Ok(out) => {
                let timing = LocalTiming {
                    adapter_prepare_ms,
                    execute_call_ms,
                    protocol_ms: out.protocol_ms,
                };
                self.send(MessageType::SessionResult, Some(&sid), &SessionResult::Done { timing });
            }
            Err(e) => {
                self.sessions.lock().unwrap().remove(&sid);
                let missing = match &e {
                    crate::smc::AdapterError::Failed(f) => f.missing(),
                    _ => Vec::new(),
                };
                self.abort_frame(&sid, e.to_string(), missing);
            }
        }
    }

    async fn echo(&self, seq: u32, payload: Value) {
        let t0 = self.net.now();
        let Ok(back) = self.adapter.echo(payload).await else {
            return;
        };
        let adapter_us = self.net.now().saturating_sub(t0).as_micros() as u64;
        self.send(
            MessageType::Hello,
            None,
            &Hello::EchoReply {
                seq,
                payload: back,
                adapter_us,
            },
        );
    }
}

//! A local SMC instance: accepts protocol channels from other participants
//! and drives the summation engine for prepared sessions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io;
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use flexsmc_core::engine::{EngineEvent, EngineState, Phase, RoundKind, RoundMessage, RoundPlan};
use flexsmc_core::field::FieldElement;
use flexsmc_core::frame::{Frame, MessageType};
use flexsmc_core::identity::{Fingerprint, Identity};
use flexsmc_core::messages::ChannelPurpose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, watch, Notify};
use tokio::task::JoinHandle;

use crate::channel::{accept_secure_channel, open_secure_channel, Expect, SecureChannel, SecureSender};
use crate::net::{ms, SharedNetwork};

pub const DEFAULT_ROUND_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy)]
pub struct SmcConfig {
    pub round_timeout: Duration,
    pub handshake_timeout: Duration,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            round_timeout: DEFAULT_ROUND_TIMEOUT,
            handshake_timeout: crate::channel::DEFAULT_HANDSHAKE_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmcError {
    #[error("session {session_id:?} was not prepared")]
    NotPrepared { session_id: String },
    #[error("session {session_id:?} is already prepared or running")]
    AlreadyPrepared { session_id: String },
    #[error("channels to {missing:?} could not be established")]
    ChannelEstablishmentFailed { missing: Vec<Fingerprint> },
    #[error("round {round} timed out waiting for {missing:?}")]
    RoundTimeout { round: String, missing: Vec<Fingerprint> },
    #[error("lost the channel to {peer:?}")]
    PeerLost { peer: Fingerprint },
    #[error("protocol error: {message}")]
    Engine { message: String },
    #[error("session aborted")]
    Aborted,
}

impl SmcError {
    /// Participants the failure points at.
    pub fn missing(&self) -> Vec<Fingerprint> {
        match self {
            SmcError::ChannelEstablishmentFailed { missing } | SmcError::RoundTimeout { missing, .. } => missing.clone(),
            SmcError::PeerLost { peer } => vec![peer.clone()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareRequest {
    pub plan: RoundPlan,
    /// `None` for the inputless gateway.
    pub input: Option<FieldElement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    /// Reconstructed total; only the reveal collector has one.
    pub result: Option<FieldElement>,
    pub protocol_ms: f64,
}

type Incoming = (Fingerprint, SecureChannel);

struct Slot {
    plan: RoundPlan,
    input: Option<FieldElement>,
    incoming_tx: mpsc::UnboundedSender<Incoming>,
    incoming_rx: Option<mpsc::UnboundedReceiver<Incoming>>,
    abort: Arc<Notify>,
}

pub struct SmcInstance {
    identity: Identity,
    net: SharedNetwork,
    endpoint: String,
    cfg: SmcConfig,
    sessions: Mutex<BTreeMap<String, Slot>>,
    rng: Mutex<ChaCha8Rng>,
    shutdown: watch::Sender<bool>,
}

impl Drop for SmcInstance {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
    }
}

impl SmcInstance {
    /// Binds the protocol endpoint and starts accepting channels.
    pub async fn start(
        identity: Identity,
        net: SharedNetwork,
        bind: &str,
        cfg: SmcConfig,
        seed: u64,
    ) -> io::Result<Arc<Self>> {
        let mut listener = net.listen(bind).await?;
        let (shutdown, mut stop) = watch::channel(false);
        let inst = Arc::new(SmcInstance {
            identity,
            net,
            endpoint: listener.local_addr(),
            cfg,
            sessions: Mutex::new(BTreeMap::new()),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            shutdown,
        });
        let weak = Arc::downgrade(&inst);
        tokio::spawn(async move {
            loop {
                let link = tokio::select! {
                    biased;
                    _ = stop.changed() => break,
                    r = listener.accept() => match r {
                        Ok(l) => l,
                        Err(_) => break,
                    },
                };
                let Some(inst) = weak.upgrade() else { break };
                tokio::spawn(accept_one(Arc::downgrade(&inst), link));
            }
        });
        Ok(inst)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.identity.fingerprint()
    }

    fn child_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng.lock().unwrap().gen())
    }

    pub fn prepare(&self, req: PrepareRequest) -> Result<(), SmcError> {
        let sid = req.plan.session_id.clone();
        EngineState::new(req.plan.clone(), self.fingerprint()).map_err(|e| SmcError::Engine {
            message: e.to_string(),
        })?;
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.contains_key(&sid) {
            return Err(SmcError::AlreadyPrepared { session_id: sid });
        }
        let (tx, rx) = mpsc::unbounded_channel();
        sessions.insert(
            sid,
            Slot {
                plan: req.plan,
                input: req.input,
                incoming_tx: tx,
                incoming_rx: Some(rx),
                abort: Arc::new(Notify::new()),
            },
        );
        Ok(())
    }

    pub fn abort(&self, session_id: &str) {
        if let Some(slot) = self.sessions.lock().unwrap().remove(session_id) {
            slot.abort.notify_one();
        }
    }

    pub fn prepared_sessions(&self) -> Vec<String> {
        self.sessions.lock().unwrap().keys().cloned().collect()
    }

    /// Runs a prepared session to completion.
    pub async fn execute(&self, session_id: &str) -> Result<ExecOutcome, SmcError> {
        let (plan, input, incoming, abort) = {
            let mut sessions = self.sessions.lock().unwrap();
            let slot = sessions.get_mut(session_id).ok_or_else(|| SmcError::NotPrepared {
                session_id: session_id.to_owned(),
            })?;
            let incoming = slot.incoming_rx.take().ok_or_else(|| SmcError::AlreadyPrepared {
                session_id: session_id.to_owned(),
            })?;
            (slot.plan.clone(), slot.input, incoming, slot.abort.clone())
        };
        let start = self.net.now();
        let outcome = tokio::select! {
            biased;
            _ = abort.notified() => Err(SmcError::Aborted),
            r = self.run(plan, input, incoming) => r,
        };
        self.sessions.lock().unwrap().remove(session_id);
        outcome.map(|result| ExecOutcome {
            result,
            protocol_ms: ms(self.net.now().saturating_sub(start)),
        })
    }

    async fn run(
        &self,
        plan: RoundPlan,
        input: Option<FieldElement>,
        incoming: mpsc::UnboundedReceiver<Incoming>,
    ) -> Result<Option<FieldElement>, SmcError> {
        let mut rng = self.child_rng();
        let (events_tx, mut events) = mpsc::unbounded_channel::<(Fingerprint, Option<Frame>)>();
        let mut readers = Readers(Vec::new());
        let mut senders = self.establish_channels(&plan, incoming, &events_tx, &mut readers, &mut rng).await?;
        drop(events_tx);

        let me = self.fingerprint();
        let mut engine = EngineState::new(plan.clone(), me.clone()).map_err(engine_err)?;
        let mut queue = VecDeque::from([EngineEvent::ChannelsReady, EngineEvent::LocalInput(input)]);
        let mut closed: BTreeSet<Fingerprint> = BTreeSet::new();
        let mut phase = engine.phase();
        let mut deadline = tokio::time::Instant::now() + self.cfg.round_timeout;
        loop {
            while let Some(ev) = queue.pop_front() {
                let out = engine.step(ev, &mut rng).map_err(engine_err)?;
                for m in out.outbound {
                    if m.to == me {
                        queue.push_back(EngineEvent::Message(m));
                        continue;
                    }
                    let Some(tx) = senders.get_mut(&m.to) else {
                        return Err(SmcError::PeerLost { peer: m.to });
                    };
                    let sent = tx.send(MessageType::RoundMessage, Some(&plan.session_id), &m).await;
                    // A reveal may race the collector's teardown; only shares
                    // that someone still waits for must get through.
                    if sent.is_err() && m.round == RoundKind::Distribute {
                        return Err(SmcError::PeerLost { peer: m.to });
                    }
                }
            }
            if engine.is_done() {
                break;
            }
            if engine.phase() != phase {
                phase = engine.phase();
                deadline = tokio::time::Instant::now() + self.cfg.round_timeout;
            }
            check_lost(&engine, &closed)?;
            let next = tokio::time::timeout_at(deadline, events.recv()).await;
            match next {
                Err(_) | Ok(None) => {
                    let round = match engine.phase() {
                        Phase::Round(r) => r.to_string(),
                        Phase::Done => "done".into(),
                    };
                    return Err(SmcError::RoundTimeout {
                        round,
                        missing: engine.missing_senders(),
                    });
                }
                Ok(Some((from, None))) => {
                    closed.insert(from);
                }
                Ok(Some((from, Some(frame)))) => {
                    if frame.kind != MessageType::RoundMessage {
                        continue;
                    }
                    let m: RoundMessage = frame.body_as().map_err(|e| SmcError::Engine { message: e.to_string() })?;
                    if m.from != from {
                        return Err(SmcError::Engine {
                            message: format!("round message claims sender {:?} on the channel of {:?}", m.from, from),
                        });
                    }
                    queue.push_back(EngineEvent::Message(m));
                }
            }
        }
        for tx in senders.values_mut() {
            tx.close().await;
        }
        Ok(engine.result())
    }

    /// Lower indices dial higher ones. After dialing, waits `channel_wait`
    /// and then until every inbound channel has arrived.
    async fn establish_channels(
        &self,
        plan: &RoundPlan,
        mut incoming: mpsc::UnboundedReceiver<Incoming>,
        events: &mpsc::UnboundedSender<(Fingerprint, Option<Frame>)>,
        readers: &mut Readers,
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<Fingerprint, SecureSender>, SmcError> {
        let me = self.fingerprint();
        let my_index = plan.participant(&me).map(|p| p.index).unwrap_or(0);
        let mut senders = BTreeMap::new();
        let mut missing = Vec::new();
        for q in plan.participants.iter().filter(|q| q.index > my_index) {
            let dialed = async {
                let link = self.net.connect(&q.endpoint).await.ok()?;
                open_secure_channel(
                    &self.identity,
                    link,
                    ChannelPurpose::Smc,
                    Some(&plan.session_id),
                    &Expect::Pinned(q.fingerprint.clone()),
                    self.cfg.handshake_timeout,
                    self.net.now(),
                    rng,
                )
                .await
                .ok()
            }
            .await;
            match dialed {
                Some(ch) => {
                    let (tx, rx) = ch.split();
                    readers.spawn(q.fingerprint.clone(), rx, events.clone());
                    senders.insert(q.fingerprint.clone(), tx);
                }
                None => missing.push(q.fingerprint.clone()),
            }
        }
        if plan.channel_wait_ms > 0 {
            self.net.sleep(Duration::from_millis(plan.channel_wait_ms)).await;
        }
        let mut expected: BTreeSet<Fingerprint> = plan
            .participants
            .iter()
            .filter(|q| q.index < my_index)
            .map(|q| q.fingerprint.clone())
            .collect();
        let deadline = tokio::time::Instant::now() + self.cfg.handshake_timeout;
        while !expected.is_empty() {
            match tokio::time::timeout_at(deadline, incoming.recv()).await {
                Ok(Some((fp, ch))) => {
                    if expected.remove(&fp) {
                        let (tx, rx) = ch.split();
                        readers.spawn(fp.clone(), rx, events.clone());
                        senders.insert(fp, tx);
                    }
                }
                _ => break,
            }
        }
        missing.extend(expected);
        if !missing.is_empty() {
            missing.sort();
            return Err(SmcError::ChannelEstablishmentFailed { missing });
        }
        Ok(senders)
    }
}

fn engine_err(e: flexsmc_core::engine::EngineError) -> SmcError {
    SmcError::Engine { message: e.to_string() }
}

/// Fails fast when a participant whose message is still needed hung up.
fn check_lost(engine: &EngineState, closed: &BTreeSet<Fingerprint>) -> Result<(), SmcError> {
    let missing = engine.missing_senders();
    if engine.is_gateway() && engine.phase() == Phase::Round(RoundKind::Reveal) {
        let alive = missing.iter().filter(|m| !closed.contains(*m)).count();
        if engine.received_count(RoundKind::Reveal) + alive < engine.plan().threshold + 1 {
            let peer = missing.into_iter().find(|m| closed.contains(m)).expect("someone hung up");
            return Err(SmcError::PeerLost { peer });
        }
        return Ok(());
    }
    match missing.into_iter().find(|m| closed.contains(m)) {
        Some(peer) => Err(SmcError::PeerLost { peer }),
        None => Ok(()),
    }
}

/// Reader tasks that are stopped when the session ends.
struct Readers(Vec<JoinHandle<()>>);

impl Readers {
    fn spawn(
        &mut self,
        from: Fingerprint,
        mut rx: crate::channel::SecureReceiver,
        events: mpsc::UnboundedSender<(Fingerprint, Option<Frame>)>,
    ) {
        self.0.push(tokio::spawn(async move {
            loop {
                match rx.recv().await {
                    Ok(Some(f)) => {
                        if events.send((from.clone(), Some(f))).is_err() {
                            break;
                        }
                    }
                    _ => {
                        let _ = events.send((from, None));
                        break;
                    }
                }
            }
        }));
    }
}

impl Drop for Readers {
    fn drop(&mut self) {
        for h in &self.0 {
            h.abort();
        }
    }
}

async fn accept_one(inst: Weak<SmcInstance>, link: crate::net::Link) {
    let Some(strong) = inst.upgrade() else { return };
    let mut rng = strong.child_rng();
    let identity = strong.identity.clone();
    let timeout = strong.cfg.handshake_timeout;
    let now = strong.net.now();
    drop(strong);
    let decide = |info: &crate::channel::InitInfo| -> Result<Expect, String> {
        if info.purpose != ChannelPurpose::Smc {
            return Err("this endpoint only accepts protocol channels".into());
        }
        let sid = info.session_id.as_deref().ok_or("missing session id")?;
        let inst = inst.upgrade().ok_or("shutting down")?;
        let sessions = inst.sessions.lock().unwrap();
        let slot = sessions.get(sid).ok_or_else(|| format!("unknown session {sid:?}"))?;
        let fp = info.public_key.fingerprint();
        slot.plan
            .participant(&fp)
            .ok_or_else(|| "not a participant".to_string())?;
        Ok(Expect::Pinned(fp))
    };
    let Ok(ch) = accept_secure_channel(&identity, link, decide, timeout, now, &mut rng).await else {
        return;
    };
    let Some(inst) = inst.upgrade() else { return };
    let sessions = inst.sessions.lock().unwrap();
    if let Some(slot) = ch.session_id.as_ref().and_then(|s| sessions.get(s)) {
        let _ = slot.incoming_tx.send((ch.remote_fingerprint(), ch));
    }
}

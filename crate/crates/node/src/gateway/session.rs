//! Resolving client queries into sessions, running attempts and recovering.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use flexsmc_core::engine::{plan_session, PlanParams};
use flexsmc_core::frame::MessageType;
use flexsmc_core::identity::Fingerprint;
use flexsmc_core::messages::{LocalTiming, PrepareOrder, SessionAbort, SessionPrepare, SessionResult};
use flexsmc_core::report::TimingRecord;
use flexsmc_core::session::{
    ClientQuery, ClientResult, ErrorBody, ErrorCode, Operation, ParticipantInfo, Rational, SessionDescriptor,
};
use tokio::sync::mpsc;

use super::{acquire, still_active, Inner, Outgoing, RouteEvent};
use crate::net::ms;
use crate::smc::{Adapter, PrepareRequest};

/// Why one attempt failed and whom the evidence points at.
#[derive(Debug, Clone)]
struct Failure {
    reason: String,
    missing: Vec<Fingerprint>,
}

impl Failure {
    fn new(reason: impl Into<String>, missing: Vec<Fingerprint>) -> Self {
        Failure {
            reason: reason.into(),
            missing,
        }
    }
}

pub(crate) async fn handle_query(inner: &Arc<Inner>, q: ClientQuery, request_id: String) -> Result<ClientResult, ErrorBody> {
    let op: Operation = q
        .operation
        .parse()
        .map_err(|e: flexsmc_core::engine::PlanError| ErrorBody::new(ErrorCode::UnsupportedOperation, e.to_string()))?;
    let tun = &inner.cfg.tunables;
    let min = tun.min_group;
    let mut participants = {
        let reg = inner.registry.lock().unwrap();
        if !reg.group_known(&q.group) {
            return Err(ErrorBody::new(ErrorCode::UnknownGroup, format!("no group {:?}", q.group)));
        }
        reg.active_members(&q.group, &q.data_type)
    };
    if participants.len() < min {
        return Err(ErrorBody::new(
            ErrorCode::GroupTooSmall,
            format!("{} active contributing peers, need at least {min}", participants.len()),
        ));
    }
    let budget = tun.retry_budget.max(1);
    let mut attempts = 0;
    let mut last = Failure::new("no attempt ran", Vec::new());
    while attempts < budget {
        let fps = participants.iter().map(|p| p.fingerprint.clone()).collect();
        let guard = acquire(inner, fps).await;
        {
            let reg = inner.registry.lock().unwrap();
            participants.retain(|p| reg.is_active(&p.fingerprint));
        }
        if participants.len() < min {
            last = Failure::new(
                format!("group shrank to {} active peers, need {min}", participants.len()),
                Vec::new(),
            );
            break;
        }
        attempts += 1;
        match run_attempt(inner, &q, op, &request_id, attempts, &participants).await {
            Ok(r) => return Ok(r),
            Err(f) => {
                tracing::warn!(session = %request_id, attempt = attempts, reason = %f.reason, "attempt failed");
                drop(guard);
                await_liveness_verdict(inner, &f.missing).await;
                last = f;
            }
        }
    }
    let mut err = ErrorBody::new(
        ErrorCode::SessionFailed,
        format!("gave up after {attempts} attempt(s): {}", last.reason),
    );
    err.attempts = Some(attempts);
    Err(err)
}

/// Gives the liveness monitor up to one detection bound to rule on the
/// participants a failure named, so a crashed peer is not retried.
async fn await_liveness_verdict(inner: &Inner, evidence: &[Fingerprint]) {
    let policy = inner.policy();
    let deadline = inner.net.now() + policy.detection_bound();
    while !still_active(inner, evidence).is_empty() && inner.net.now() < deadline {
        inner.net.sleep(policy.check_period()).await;
    }
}

struct RouteGuard<'a> {
    inner: &'a Inner,
    sid: String,
}

impl Drop for RouteGuard<'_> {
    fn drop(&mut self) {
        self.inner.routes.lock().unwrap().remove(&self.sid);
    }
}

async fn run_attempt(
    inner: &Arc<Inner>,
    q: &ClientQuery,
    op: Operation,
    request_id: &str,
    attempt: u32,
    participants: &[ParticipantInfo],
) -> Result<ClientResult, Failure> {
    let tun = &inner.cfg.tunables;
    let sid = format!("{request_id}-a{attempt}");
    let gateway = ParticipantInfo {
        fingerprint: inner.fingerprint(),
        public_key: inner.identity.public_key(),
        endpoint: inner.smc.endpoint().to_owned(),
    };
    let desc = SessionDescriptor {
        session_id: sid.clone(),
        group: q.group.clone(),
        operation: op,
        data_type: q.data_type.clone(),
        participants: participants.to_vec(),
        gateway,
        retry_budget: tun.retry_budget,
        attempt,
        client: None,
    };
    let plan = plan_session(
        &desc,
        &PlanParams {
            session_id: sid.clone(),
            threshold: tun.threshold,
            channel_wait_ms: tun.channel_wait_ms,
            min_contributors: tun.min_group,
        },
    )
    .map_err(|e| Failure::new(e.to_string(), Vec::new()))?;

    let (route_tx, mut route) = mpsc::unbounded_channel::<RouteEvent>();
    inner.routes.lock().unwrap().insert(sid.clone(), route_tx);
    let _route = RouteGuard {
        inner,
        sid: sid.clone(),
    };

    let mut controls = BTreeMap::new();
    let mut names = BTreeMap::new();
    {
        let reg = inner.registry.lock().unwrap();
        for p in participants {
            match reg.by_fingerprint(&p.fingerprint) {
                Some(e) if e.control.is_some() => {
                    controls.insert(p.fingerprint.clone(), e.control.clone().expect("checked"));
                    names.insert(p.fingerprint.clone(), e.metadata.name.clone());
                }
                _ => {
                    return Err(Failure::new(
                        "participant has no control channel",
                        vec![p.fingerprint.clone()],
                    ))
                }
            }
        }
    }
    let broadcast = |o: &dyn Fn() -> Outgoing| {
        for c in controls.values() {
            let _ = c.send(o());
        }
    };
    let fail = |f: Failure| {
        broadcast(&|| {
            Outgoing::frame(
                MessageType::SessionAbort,
                Some(&sid),
                &SessionAbort {
                    reason: f.reason.clone(),
                    missing: f.missing.clone(),
                },
            )
        });
        inner.smc.abort(&sid);
        Err(f)
    };

    // Trust bundles and prepare orders.
    let mut sent_at = BTreeMap::new();
    for (fp, control) in &controls {
        let order = PrepareOrder {
            plan: plan.clone(),
            operation: op,
            data_type: q.data_type.clone(),
            attempt,
            request_id: request_id.to_owned(),
            trust: plan
                .participants
                .iter()
                .filter(|p| &p.fingerprint != fp)
                .map(|p| ParticipantInfo {
                    fingerprint: p.fingerprint.clone(),
                    public_key: p.public_key,
                    endpoint: p.endpoint.clone(),
                })
                .collect(),
        };
        sent_at.insert(fp.clone(), inner.net.now());
        let _ = control.send(Outgoing::frame(
            MessageType::SessionPrepare,
            Some(&sid),
            &SessionPrepare::Prepare(order),
        ));
    }
    if let Err(e) = inner
        .adapter
        .prepare(PrepareRequest {
            plan: plan.clone(),
            input: None,
        })
        .await
    {
        return fail(Failure::new(e.to_string(), Vec::new()));
    }

    let deadline = tokio::time::Instant::now() + tun.prepare_timeout();
    let mut ready = BTreeSet::new();
    while ready.len() < controls.len() {
        let ev = match tokio::time::timeout_at(deadline, route.recv()).await {
            Ok(Some(ev)) => ev,
            _ => {
                let missing = controls.keys().filter(|fp| !ready.contains(*fp)).cloned().collect();
                return fail(Failure::new("prepare timeout", missing));
            }
        };
        if let Some(f) = peer_failure(&controls, ev, |fp, f| {
            if f.kind == MessageType::SessionPrepare && matches!(f.body_as(), Ok(SessionPrepare::Ready)) {
                ready.insert(fp.clone());
            }
        }) {
            return fail(f);
        }
    }

    broadcast(&|| Outgoing::frame(MessageType::SessionPrepare, Some(&sid), &SessionPrepare::Start));
    let mut done: BTreeMap<Fingerprint, (LocalTiming, std::time::Duration)> = BTreeMap::new();
    let mut peer_abort: Option<Failure> = None;
    let mut lost = BTreeSet::new();
    let exec = inner.adapter.execute(&sid);
    tokio::pin!(exec);
    let outcome = loop {
        tokio::select! {
            r = &mut exec => break r,
            Some(ev) = route.recv() => {
                if let Some(f) = absorb(&controls, ev, inner, &mut done, &mut lost) {
                    if peer_abort.is_none() {
                        peer_abort = Some(f);
                        inner.smc.abort(&sid);
                    }
                }
            }
        }
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let own = Failure::new(e.to_string(), match &e {
                crate::smc::AdapterError::Failed(s) => s.missing(),
                _ => Vec::new(),
            });
            let f = match peer_abort {
                Some(mut p) => {
                    for m in own.missing {
                        if !p.missing.contains(&m) {
                            p.missing.push(m);
                        }
                    }
                    p
                }
                None => own,
            };
            return fail(f);
        }
    };
    let Some(result) = outcome.result else {
        return fail(Failure::new("gateway did not reconstruct a result", Vec::new()));
    };

    // The result only counts once every participant has finished: a
    // contributor that vanished mid-session fails the attempt so that the
    // retry sums the survivors.
    let deadline = tokio::time::Instant::now() + tun.round_timeout();
    while done.len() < controls.len() && lost.iter().all(|fp| done.contains_key(fp)) {
        match tokio::time::timeout_at(deadline, route.recv()).await {
            Ok(Some(ev)) => {
                if let Some(f) = absorb(&controls, ev, inner, &mut done, &mut lost) {
                    return fail(f);
                }
            }
            _ => break,
        }
    }
    if done.len() < controls.len() {
        let missing = controls.keys().filter(|fp| !done.contains_key(*fp)).cloned().collect();
        return fail(Failure::new("participants did not finish", missing));
    }
    let n = participants.len();
    broadcast(&|| {
        Outgoing::frame(
            MessageType::SessionResult,
            Some(&sid),
            &SessionResult::Teardown {
                result,
                contributors: n,
                attempt,
            },
        )
    });

    let timing = done
        .iter()
        .map(|(fp, (t, at))| {
            let total = ms(at.saturating_sub(sent_at[fp]));
            let adapter = t.adapter_ms();
            TimingRecord {
                peer: names[fp].clone(),
                t_flex_ms: (total - adapter - t.protocol_ms).max(0.0),
                t_adapter_ms: adapter.min(total),
                t_total_ms: total,
            }
        })
        .collect();
    Ok(ClientResult {
        session_id: sid.clone(),
        request_id: request_id.to_owned(),
        operation: op,
        result,
        average: (op == Operation::Average).then(|| Rational::new(result.value(), n as u64)),
        contributors: n,
        attempts: attempt,
        participants: participants.iter().map(|p| p.fingerprint.clone()).collect(),
        timing,
    })
}

/// Records a route event during execution; returns a peer's abort.
fn absorb(
    controls: &BTreeMap<Fingerprint, mpsc::UnboundedSender<Outgoing>>,
    (fp, frame): RouteEvent,
    inner: &Inner,
    done: &mut BTreeMap<Fingerprint, (LocalTiming, std::time::Duration)>,
    lost: &mut BTreeSet<Fingerprint>,
) -> Option<Failure> {
    if !controls.contains_key(&fp) {
        return None;
    }
    let Some(f) = frame else {
        lost.insert(fp);
        return None;
    };
    match f.kind {
        MessageType::SessionResult => {
            if let Ok(SessionResult::Done { timing }) = f.body_as() {
                done.insert(fp, (timing, inner.net.now()));
            }
            None
        }
        MessageType::SessionAbort => {
            let body: SessionAbort = f.body_as().unwrap_or(SessionAbort {
                reason: "aborted".into(),
                missing: Vec::new(),
            });
            let missing = if body.missing.is_empty() { vec![fp] } else { body.missing };
            Some(Failure::new(body.reason, missing))
        }
        _ => None,
    }
}

/// Turns a route event during preparation into a failure, or hands the
/// frame to `on_frame`.
fn peer_failure(
    controls: &BTreeMap<Fingerprint, mpsc::UnboundedSender<Outgoing>>,
    (fp, frame): RouteEvent,
    mut on_frame: impl FnMut(&Fingerprint, &flexsmc_core::frame::Frame),
) -> Option<Failure> {
    if !controls.contains_key(&fp) {
        return None;
    }
    let Some(f) = frame else {
        return Some(Failure::new("participant lost its control channel", vec![fp]));
    };
    match f.kind {
        MessageType::SessionAbort => {
            let body: SessionAbort = f.body_as().ok()?;
            let missing = if body.missing.is_empty() { vec![fp] } else { body.missing };
            Some(Failure::new(body.reason, missing))
        }
        MessageType::Error => {
            let body: ErrorBody = f.body_as().ok()?;
            Some(Failure::new(body.message, vec![fp]))
        }
        _ => {
            on_frame(&fp, &f);
            None
        }
    }
}

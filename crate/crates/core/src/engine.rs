//! Round-synchronized secure summation.
//!
//! A session runs three rounds in order:
//!
//! 1. `Distribute`: every contributing participant Shamir-shares its input
//!    and sends share `i` to the participant holding index `i` (itself
//!    included).
//! 2. `AggregateLocal`: once a participant holds one share from every
//!    contributor it adds them up. No messages.
//! 3. `Reveal`: each participant sends its summed share to the gateway,
//!    which reconstructs the total from any `t + 1` of them.
//!
//! [`EngineState::step`] is a pure transition function: the caller delivers
//! events, ships the returned messages (self-addressed ones included) and
//! owns all I/O and time.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::field::FieldElement;
use crate::identity::{Fingerprint, PublicKey};
use crate::session::SessionDescriptor;
use crate::shamir::{reconstruct, share_secret, Share, SharingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    Distribute,
    AggregateLocal,
    Reveal,
}

impl RoundKind {
    pub const PLAN: [RoundKind; 3] = [RoundKind::Distribute, RoundKind::AggregateLocal, RoundKind::Reveal];

    pub fn index(self) -> usize {
        match self {
            RoundKind::Distribute => 0,
            RoundKind::AggregateLocal => 1,
            RoundKind::Reveal => 2,
        }
    }

    /// Whether the round exchanges messages at all.
    pub fn communicates(self) -> bool {
        !matches!(self, RoundKind::AggregateLocal)
    }
}

impl fmt::Display for RoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundKind::Distribute => "distribute",
            RoundKind::AggregateLocal => "aggregate_local",
            RoundKind::Reveal => "reveal",
        })
    }
}

/// One member of a session with its assigned evaluation point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub fingerprint: Fingerprint,
    pub public_key: PublicKey,
    /// Where the participant accepts protocol channels.
    pub endpoint: String,
    pub index: u32,
    /// False for the gateway, which joins without an input.
    pub contributes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub session_id: String,
    pub rounds: Vec<RoundKind>,
    pub participants: Vec<Participant>,
    pub threshold: usize,
    pub channel_wait_ms: u64,
    /// The participant that collects reveal shares.
    pub gateway: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("group too small: {contributors} contributing peers, need at least {minimum}")]
    GroupTooSmall { contributors: usize, minimum: usize },
    #[error("unsupported operation {0:?}")]
    UnsupportedOperation(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

impl RoundPlan {
    pub fn n(&self) -> usize {
        self.participants.len()
    }

    pub fn participant(&self, fp: &Fingerprint) -> Option<&Participant> {
        self.participants.iter().find(|p| &p.fingerprint == fp)
    }

    pub fn contributors(&self) -> impl Iterator<Item = &Participant> {
        self.participants.iter().filter(|p| p.contributes)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidPlan(m.to_owned()));
        if self.rounds != RoundKind::PLAN {
            return bad("rounds must be distribute, aggregate_local, reveal");
        }
        let n = self.n();
        if self.threshold < 1 || self.threshold >= n {
            return bad("threshold must satisfy 1 <= t < n");
        }
        let mut idx: Vec<u32> = self.participants.iter().map(|p| p.index).collect();
        idx.sort_unstable();
        if idx != (1..=n as u32).collect::<Vec<_>>() {
            return bad("share indices must be exactly 1..n");
        }
        let mut fps: Vec<&Fingerprint> = self.participants.iter().map(|p| &p.fingerprint).collect();
        fps.sort();
        fps.dedup();
        if fps.len() != n {
            return bad("duplicate participant");
        }
        if self.participant(&self.gateway).is_none() {
            return bad("gateway is not a participant");
        }
        if self.contributors().count() == 0 {
            return bad("no contributing participants");
        }
        Ok(())
    }
}

/// Parameters the gateway fixes when turning a descriptor into a plan.
#[derive(Debug, Clone)]
pub struct PlanParams {
    pub session_id: String,
    pub threshold: Option<usize>,
    pub channel_wait_ms: u64,
    pub min_contributors: usize,
}

/// `floor((n - 1) / 2)`, the largest threshold with an honest majority.
pub fn default_threshold(n: usize) -> usize {
    n.saturating_sub(1) / 2
}

/// Resolves a descriptor into a deterministic plan: indices follow ascending
/// fingerprint order, the gateway participates without input.
pub fn plan_session(desc: &SessionDescriptor, params: &PlanParams) -> Result<RoundPlan, PlanError> {
    let contributors = desc.participants.len();
    let minimum = params.min_contributors.max(2);
    if contributors < minimum || contributors + 1 < 3 {
        return Err(PlanError::GroupTooSmall { contributors, minimum });
    }
    let mut members: Vec<(bool, &crate::session::ParticipantInfo)> =
        desc.participants.iter().map(|p| (true, p)).collect();
    members.push((false, &desc.gateway));
    members.sort_by(|a, b| a.1.fingerprint.cmp(&b.1.fingerprint));

    let n = members.len();
    let threshold = params.threshold.unwrap_or_else(|| default_threshold(n));
    let plan = RoundPlan {
        session_id: params.session_id.clone(),
        rounds: RoundKind::PLAN.to_vec(),
        participants: members
            .into_iter()
            .enumerate()
            .map(|(i, (contributes, info))| Participant {
                fingerprint: info.fingerprint.clone(),
                public_key: info.public_key,
                endpoint: info.endpoint.clone(),
                index: i as u32 + 1,
                contributes,
            })
            .collect(),
        threshold,
        channel_wait_ms: params.channel_wait_ms,
        gateway: desc.gateway.fingerprint.clone(),
    };
    plan.validate()?;
    Ok(plan)
}

/// A protocol message between two participants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundMessage {
    pub session_id: String,
    pub round: RoundKind,
    pub from: Fingerprint,
    pub to: Fingerprint,
    pub share: Share,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    /// All pairwise channels are live; shares may now be sent.
    ChannelsReady,
    /// This participant's input, `None` for the inputless gateway.
    LocalInput(Option<FieldElement>),
    Message(RoundMessage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Round(RoundKind),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("message for round {round} is outside the buffering window of round {current:?}")]
    OutOfOrderMessage { round: RoundKind, current: Phase },
    #[error("sender {0:?} is not part of the plan")]
    UnknownSender(Fingerprint),
    #[error("duplicate {round} message from {from:?}")]
    DuplicateMessage { round: RoundKind, from: Fingerprint },
    #[error("message belongs to session {0:?}")]
    WrongSession(String),
    #[error("message addressed to {0:?}")]
    Misrouted(Fingerprint),
    #[error("invalid share from {from:?}: {reason}")]
    InvalidShare { from: Fingerprint, reason: String },
    #[error("local input already supplied")]
    InputAlreadySupplied,
    #[error("input presence does not match the plan (contributor: {contributes})")]
    InputMismatch { contributes: bool },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct StepOutput {
    pub outbound: Vec<RoundMessage>,
    pub result: Option<FieldElement>,
}

/// Per-participant protocol state for one session.
#[derive(Debug, Clone)]
pub struct EngineState {
    plan: RoundPlan,
    me: Fingerprint,
    my_index: u32,
    contributes: bool,
    phase: Phase,
    channels_ready: bool,
    input: Option<Option<FieldElement>>,
    distributed: bool,
    received: BTreeMap<RoundKind, BTreeMap<Fingerprint, Share>>,
    local_sum_share: Option<Share>,
    result: Option<FieldElement>,
}

impl EngineState {
    pub fn new(plan: RoundPlan, me: Fingerprint) -> Result<Self, EngineError> {
        plan.validate()?;
        let mine = plan
            .participant(&me)
            .ok_or_else(|| PlanError::InvalidPlan("local node is not a participant".into()))?;
        let (my_index, contributes) = (mine.index, mine.contributes);
        Ok(EngineState {
            plan,
            me,
            my_index,
            contributes,
            phase: Phase::Round(RoundKind::Distribute),
            channels_ready: false,
            input: None,
            distributed: false,
            received: BTreeMap::new(),
            local_sum_share: None,
            result: None,
        })
    }

    pub fn plan(&self) -> &RoundPlan {
        &self.plan
    }

    pub fn me(&self) -> &Fingerprint {
        &self.me
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_gateway(&self) -> bool {
        self.me == self.plan.gateway
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn local_sum_share(&self) -> Option<Share> {
        self.local_sum_share
    }

    pub fn result(&self) -> Option<FieldElement> {
        self.result
    }

    pub fn received(&self, round: RoundKind) -> impl Iterator<Item = (&Fingerprint, &Share)> {
        self.received.get(&round).into_iter().flat_map(|m| m.iter())
    }

    pub fn received_count(&self, round: RoundKind) -> usize {
        self.received.get(&round).map_or(0, |m| m.len())
    }

    /// Senders whose message for the current round has not arrived yet.
    pub fn missing_senders(&self) -> Vec<Fingerprint> {
        let expected: Vec<&Participant> = match self.phase {
            Phase::Round(RoundKind::Distribute) => self.plan.contributors().collect(),
            Phase::Round(RoundKind::Reveal) if self.is_gateway() => self.plan.participants.iter().collect(),
            _ => Vec::new(),
        };
        let round = match self.phase {
            Phase::Round(r) => r,
            Phase::Done => return Vec::new(),
        };
        expected
            .into_iter()
            .filter(|p| self.received.get(&round).map_or(true, |m| !m.contains_key(&p.fingerprint)))
            .map(|p| p.fingerprint.clone())
            .collect()
    }

    /// Applies one event. On error the state is left untouched.
    pub fn step<R: RngCore + ?Sized>(&mut self, event: EngineEvent, rng: &mut R) -> Result<StepOutput, EngineError> {
        let mut out = StepOutput::default();
        match event {
            EngineEvent::ChannelsReady => {
                self.channels_ready = true;
            }
            EngineEvent::LocalInput(value) => {
                if self.input.is_some() {
                    return Err(EngineError::InputAlreadySupplied);
                }
                if value.is_some() != self.contributes {
                    return Err(EngineError::InputMismatch {
                        contributes: self.contributes,
                    });
                }
                self.input = Some(value);
            }
            EngineEvent::Message(msg) => {
                if !self.accept(&msg)? {
                    return Ok(out);
                }
                self.received.entry(msg.round).or_default().insert(msg.from, msg.share);
            }
        }
        self.maybe_distribute(rng, &mut out)?;
        self.advance(&mut out)?;
        Ok(out)
    }

    /// Validates an inbound message. `Ok(false)` means "late but harmless".
    fn accept(&self, msg: &RoundMessage) -> Result<bool, EngineError> {
        if msg.session_id != self.plan.session_id {
            return Err(EngineError::WrongSession(msg.session_id.clone()));
        }
        let Some(sender) = self.plan.participant(&msg.from) else {
            return Err(EngineError::UnknownSender(msg.from.clone()));
        };
        if msg.to != self.me {
            return Err(EngineError::Misrouted(msg.to.clone()));
        }
        if !msg.round.communicates() {
            return Err(EngineError::OutOfOrderMessage {
                round: msg.round,
                current: self.phase,
            });
        }
        if self.received.get(&msg.round).is_some_and(|m| m.contains_key(&msg.from)) {
            return Err(EngineError::DuplicateMessage {
                round: msg.round,
                from: msg.from.clone(),
            });
        }
        let invalid = |reason: &str| EngineError::InvalidShare {
            from: msg.from.clone(),
            reason: reason.to_owned(),
        };
        match msg.round {
            RoundKind::Distribute => {
                if !sender.contributes {
                    return Err(invalid("sender has no input to distribute"));
                }
                if msg.share.index != self.my_index {
                    return Err(invalid("share is not evaluated at the receiver's index"));
                }
            }
            RoundKind::Reveal => {
                if !self.is_gateway() {
                    return Err(EngineError::Misrouted(msg.to.clone()));
                }
                if msg.share.index != sender.index {
                    return Err(invalid("reveal share index differs from the sender's index"));
                }
            }
            RoundKind::AggregateLocal => unreachable!("rejected above"),
        }
        // Late reveal shares after reconstruction are ignored.
        Ok(self.phase != Phase::Done)
    }

    fn maybe_distribute<R: RngCore + ?Sized>(&mut self, rng: &mut R, out: &mut StepOutput) -> Result<(), EngineError> {
        if self.distributed || !self.channels_ready {
            return Ok(());
        }
        let Some(input) = self.input else {
            return Ok(());
        };
        self.distributed = true;
        let Some(secret) = input else {
            return Ok(());
        };
        let shares = share_secret(secret, self.plan.n(), self.plan.threshold, rng)?;
        for p in &self.plan.participants {
            out.outbound.push(RoundMessage {
                session_id: self.plan.session_id.clone(),
                round: RoundKind::Distribute,
                from: self.me.clone(),
                to: p.fingerprint.clone(),
                share: shares[p.index as usize - 1],
            });
        }
        Ok(())
    }

    fn advance(&mut self, out: &mut StepOutput) -> Result<(), EngineError> {
        loop {
            match self.phase {
                Phase::Round(RoundKind::Distribute) => {
                    let expected = self.plan.contributors().count();
                    if !self.distributed || self.received_count(RoundKind::Distribute) < expected {
                        return Ok(());
                    }
                    self.phase = Phase::Round(RoundKind::AggregateLocal);
                }
                Phase::Round(RoundKind::AggregateLocal) => {
                    let sum = self.received(RoundKind::Distribute).map(|(_, s)| s.value).sum();
                    let share = Share::new(self.my_index, sum);
                    self.local_sum_share = Some(share);
                    self.phase = Phase::Round(RoundKind::Reveal);
                    out.outbound.push(RoundMessage {
                        session_id: self.plan.session_id.clone(),
                        round: RoundKind::Reveal,
                        from: self.me.clone(),
                        to: self.plan.gateway.clone(),
                        share,
                    });
                }
                Phase::Round(RoundKind::Reveal) => {
                    if !self.is_gateway() {
                        self.phase = Phase::Done;
                        return Ok(());
                    }
                    if self.received_count(RoundKind::Reveal) < self.plan.threshold + 1 {
                        return Ok(());
                    }
                    let shares: Vec<Share> = self.received(RoundKind::Reveal).map(|(_, s)| *s).collect();
                    let value = reconstruct(&shares, self.plan.threshold)?;
                    self.result = Some(value);
                    out.result = Some(value);
                    self.phase = Phase::Done;
                    return Ok(());
                }
                Phase::Done => return Ok(()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identity;
    use crate::session::{Operation, ParticipantInfo};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn infos(count: usize, seed: u64) -> Vec<ParticipantInfo> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let id = Identity::generate(&mut rng);
                ParticipantInfo {
                    fingerprint: id.fingerprint(),
                    public_key: id.public_key(),
                    endpoint: format!("node{i}:smc"),
                }
            })
            .collect()
    }

    fn descriptor(peers: usize) -> SessionDescriptor {
        let mut all = infos(peers + 1, peers as u64);
        let gateway = all.pop().unwrap();
        SessionDescriptor {
            session_id: "s-1".into(),
            group: "floor2/presence_count".into(),
            operation: Operation::Sum,
            data_type: "presence_count".into(),
            participants: all,
            gateway,
            retry_budget: 3,
            attempt: 1,
            client: None,
        }
    }

    fn params() -> PlanParams {
        PlanParams {
            session_id: "s-1/1".into(),
            threshold: None,
            channel_wait_ms: 0,
            min_contributors: 3,
        }
    }

    #[test]
    fn plan_thresholds() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        assert_eq!((plan.n(), plan.threshold), (4, 1));
        let mut idx: Vec<u32> = plan.participants.iter().map(|p| p.index).collect();
        idx.sort();
        assert_eq!(idx, vec![1, 2, 3, 4]);

        let plan = plan_session(&descriptor(11), &params()).unwrap();
        assert_eq!((plan.n(), plan.threshold), (12, 5));

        assert_eq!(
            plan_session(&descriptor(2), &params()),
            Err(PlanError::GroupTooSmall { contributors: 2, minimum: 3 })
        );
    }

    #[test]
    fn plan_indices_follow_fingerprint_order() {
        let plan = plan_session(&descriptor(5), &params()).unwrap();
        let mut sorted = plan.participants.clone();
        sorted.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
        assert_eq!(sorted, plan.participants);
        assert_eq!(plan.contributors().count(), 5);
        assert!(!plan.participant(&plan.gateway).unwrap().contributes);
        // Deterministic.
        assert_eq!(plan, plan_session(&descriptor(5), &params()).unwrap());
    }

    #[test]
    fn threshold_override_is_validated() {
        let mut p = params();
        p.threshold = Some(3);
        assert_eq!(plan_session(&descriptor(3), &p).unwrap().threshold, 3);
        p.threshold = Some(4);
        assert!(matches!(plan_session(&descriptor(3), &p), Err(PlanError::InvalidPlan(_))));
    }

    /// Runs all engines to completion delivering messages FIFO.
    fn run(plan: &RoundPlan, inputs: &BTreeMap<Fingerprint, u64>, seed: u64) -> Option<FieldElement> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut engines: BTreeMap<Fingerprint, EngineState> = plan
            .participants
            .iter()
            .map(|p| (p.fingerprint.clone(), EngineState::new(plan.clone(), p.fingerprint.clone()).unwrap()))
            .collect();
        let mut queue = std::collections::VecDeque::new();
        let mut result = None;
        for (fp, eng) in engines.iter_mut() {
            let input = inputs.get(fp).map(|&v| FieldElement::new(v));
            for ev in [EngineEvent::LocalInput(input), EngineEvent::ChannelsReady] {
                let out = eng.step(ev, &mut rng).unwrap();
                queue.extend(out.outbound);
            }
        }
        while let Some(msg) = queue.pop_front() {
            let out = engines.get_mut(&msg.to).unwrap().step(EngineEvent::Message(msg), &mut rng).unwrap();
            queue.extend(out.outbound);
            result = result.or(out.result);
        }
        assert!(engines.values().all(|e| e.is_done()));
        result
    }

    fn peer_inputs(plan: &RoundPlan, values: &[u64]) -> BTreeMap<Fingerprint, u64> {
        plan.contributors().map(|p| p.fingerprint.clone()).zip(values.iter().copied()).collect()
    }

    #[test]
    fn zero_inputs_sum_to_zero() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        assert_eq!(run(&plan, &peer_inputs(&plan, &[0, 0, 0]), 1), Some(FieldElement::ZERO));
    }

    #[test]
    fn three_peers_sum() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        let inputs = [5u64, 10, 20];
        let oracle: u64 = inputs.iter().sum();
        assert_eq!(run(&plan, &peer_inputs(&plan, &inputs), 2), Some(FieldElement::new(oracle)));
    }

    #[test]
    fn unknown_sender_rejected() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        let me = plan.participants[0].fingerprint.clone();
        let mut eng = EngineState::new(plan.clone(), me.clone()).unwrap();
        let stranger = infos(1, 999).pop().unwrap().fingerprint;
        let msg = RoundMessage {
            session_id: plan.session_id.clone(),
            round: RoundKind::Distribute,
            from: stranger.clone(),
            to: me,
            share: Share::new(1, FieldElement::ONE),
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(eng.step(EngineEvent::Message(msg), &mut rng), Err(EngineError::UnknownSender(stranger)));
    }

    #[test]
    fn duplicate_and_misrouted_messages_rejected() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        let contributor = plan.contributors().next().unwrap().clone();
        let target = plan.participants.iter().find(|p| p.fingerprint != contributor.fingerprint).unwrap().clone();
        let mut eng = EngineState::new(plan.clone(), target.fingerprint.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let msg = RoundMessage {
            session_id: plan.session_id.clone(),
            round: RoundKind::Distribute,
            from: contributor.fingerprint.clone(),
            to: target.fingerprint.clone(),
            share: Share::new(target.index, FieldElement::new(9)),
        };
        eng.step(EngineEvent::Message(msg.clone()), &mut rng).unwrap();
        assert!(matches!(
            eng.step(EngineEvent::Message(msg.clone()), &mut rng),
            Err(EngineError::DuplicateMessage { .. })
        ));
        let mut wrong = msg.clone();
        wrong.to = contributor.fingerprint.clone();
        assert!(matches!(eng.step(EngineEvent::Message(wrong), &mut rng), Err(EngineError::Misrouted(_))));
        let mut other = msg.clone();
        other.session_id = "other".into();
        assert!(matches!(eng.step(EngineEvent::Message(other), &mut rng), Err(EngineError::WrongSession(_))));
        let mut local = msg;
        local.round = RoundKind::AggregateLocal;
        assert!(matches!(
            eng.step(EngineEvent::Message(local), &mut rng),
            Err(EngineError::OutOfOrderMessage { .. })
        ));
    }

    #[test]
    fn input_contract() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut gw = EngineState::new(plan.clone(), plan.gateway.clone()).unwrap();
        assert_eq!(
            gw.step(EngineEvent::LocalInput(Some(FieldElement::ONE)), &mut rng),
            Err(EngineError::InputMismatch { contributes: false })
        );
        gw.step(EngineEvent::LocalInput(None), &mut rng).unwrap();
        assert_eq!(gw.step(EngineEvent::LocalInput(None), &mut rng), Err(EngineError::InputAlreadySupplied));
        // Inputless gateway sends nothing in distribute even once channels are up.
        let out = gw.step(EngineEvent::ChannelsReady, &mut rng).unwrap();
        assert!(out.outbound.is_empty());
    }

    #[test]
    fn shares_wait_for_channels() {
        let plan = plan_session(&descriptor(3), &params()).unwrap();
        let peer = plan.contributors().next().unwrap().fingerprint.clone();
        let mut eng = EngineState::new(plan.clone(), peer).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let out = eng.step(EngineEvent::LocalInput(Some(FieldElement::new(3))), &mut rng).unwrap();
        assert!(out.outbound.is_empty());
        let out = eng.step(EngineEvent::ChannelsReady, &mut rng).unwrap();
        assert_eq!(out.outbound.len(), plan.n());
        assert!(out.outbound.iter().all(|m| m.round == RoundKind::Distribute));
    }
}

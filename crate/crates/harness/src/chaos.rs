use flexsmc_client::ClientError;
use flexsmc_core::engine::RoundKind;
use flexsmc_core::fault::{ChannelClose, FaultPlan, LinkDrop, PeerKill};
use flexsmc_core::session::ErrorBody;
use serde::{Deserialize, Serialize};

use crate::deployment::{peer_node, Deployment, CAPABILITY, GATEWAY_NODE, GROUP};
use crate::{HarnessError, Scenario, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChaosVerdict {
    /// Success, and the result equals the sum over the final participants.
    CorrectSum,
    WrongSum,
    Failed,
}

/// What happened to one faulted session. Contains no wall-clock data, so
/// two runs with the same scenario compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosOutcome {
    pub peers: usize,
    pub plan: FaultPlan,
    pub seed: u64,
    pub attempts: u32,
    /// Node names of the final attempt's participants.
    pub participants: Vec<String>,
    pub result: Option<u64>,
    /// Survivor-sum oracle over `participants`.
    pub expected: Option<u64>,
    pub error: Option<ErrorBody>,
    pub verdict: ChaosVerdict,
}

/// Runs one sum request under the scenario's fault plan.
pub async fn run_chaos_scenario(s: &Scenario) -> Result<ChaosOutcome, HarnessError> {
    if s.transport != Transport::Sim {
        return Err(HarnessError::ScenarioSetupFailed(
            "chaos scenarios need the sim transport".into(),
        ));
    }
    let d = Deployment::launch(s).await?;
    let client = d.client().await?;
    let mut out = ChaosOutcome {
        peers: s.peers,
        plan: s.fault.clone(),
        seed: s.seed,
        attempts: 0,
        participants: Vec::new(),
        result: None,
        expected: None,
        error: None,
        verdict: ChaosVerdict::Failed,
    };
    match client.query(GROUP, "sum", CAPABILITY).await {
        Ok(r) => {
            let mut names: Vec<String> = r
                .participants
                .iter()
                .filter_map(|fp| d.name_of(fp).map(str::to_owned))
                .collect();
            names.sort();
            let expected = d.oracle_sum(names.iter().map(String::as_str), &r.request_id);
            out.attempts = r.attempts;
            out.participants = names;
            out.result = Some(r.result.value());
            out.expected = Some(expected);
            out.verdict = if r.result.value() == expected && r.participants.len() == out.participants.len() {
                ChaosVerdict::CorrectSum
            } else {
                ChaosVerdict::WrongSum
            };
        }
        Err(ClientError::Gateway(e)) => {
            out.attempts = e.attempts.unwrap_or(0);
            out.error = Some(e);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Success with exactly this many contributors.
    Success { contributors: usize },
    SessionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosCase {
    pub name: String,
    pub scenario: Scenario,
    pub expect: Expectation,
}

/// The regression suite: five peers, one fault each.
pub fn chaos_suite(seed: u64) -> Vec<ChaosCase> {
    let base = Scenario {
        peers: 5,
        reps: 1,
        transport: Transport::Sim,
        seed,
        ..Scenario::default()
    };
    let case = |name: String, fault: FaultPlan, expect: Expectation| ChaosCase {
        name,
        scenario: Scenario { fault, ..base.clone() },
        expect,
    };
    let kill = |peers: &[usize], round: RoundKind| FaultPlan {
        kill_peer_at: peers
            .iter()
            .map(|&i| PeerKill {
                peer: peer_node(i),
                round,
            })
            .collect(),
        ..FaultPlan::default()
    };
    let mut suite = Vec::new();
    for round in RoundKind::PLAN {
        suite.push(case(
            format!("kill 1 of 5 at {round}"),
            kill(&[2], round),
            Expectation::Success { contributors: 4 },
        ));
    }
    suite.push(case(
        "kill 2 of 5 at distribute".into(),
        kill(&[1, 3], RoundKind::Distribute),
        Expectation::Success { contributors: 3 },
    ));
    suite.push(case(
        "kill 3 of 5 at distribute".into(),
        kill(&[0, 2, 4], RoundKind::Distribute),
        Expectation::SessionFailed,
    ));
    suite.push(case(
        "drop the gateway link of one peer".into(),
        FaultPlan {
            drop_link_at: vec![LinkDrop {
                a: GATEWAY_NODE.into(),
                b: peer_node(3),
                at_ms: 0,
            }],
            ..FaultPlan::default()
        },
        Expectation::Success { contributors: 4 },
    ));
    suite.push(case(
        "close a gateway-side protocol channel at distribute".into(),
        FaultPlan {
            close_channel_at: vec![ChannelClose {
                a: GATEWAY_NODE.into(),
                b: peer_node(1),
                round: RoundKind::Distribute,
            }],
            ..FaultPlan::default()
        },
        Expectation::Success { contributors: 5 },
    ));
    suite
}

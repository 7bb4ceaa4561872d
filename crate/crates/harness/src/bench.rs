use std::time::Duration;

use flexsmc_client::ClientError;
use flexsmc_core::report::{Repetition, TimingRecord, TimingReport};
use flexsmc_core::session::ErrorCode;
use flexsmc_node::config::AdapterMode;
use flexsmc_node::net::ms;
use futures::future::try_join_all;
use serde_json::json;

use crate::deployment::{Deployment, CAPABILITY, GROUP};
use crate::{HarnessError, Scenario};

const ECHO_TIMEOUT: Duration = Duration::from_secs(10);

/// Each repetition sends `echoes` consecutive echo requests to every peer
/// over its control channel, all peers in parallel. A record covers one
/// peer's whole batch; `t_adapter` is the part spent inside its adapter.
pub async fn run_echo_benchmark(s: &Scenario) -> Result<TimingReport, HarnessError> {
    let d = Deployment::launch(s).await?;
    let mut report = echo_report(s);
    for rep in 0..s.reps {
        let records = echo_batch(&d, s, rep).await?;
        report.repetitions.push(Repetition { n: s.peers, records });
    }
    Ok(report)
}

/// Runs the echo benchmark for the in-process and the socket adapter side by
/// side. Each repetition runs one batch on both deployments, alternating
/// which goes first, so drift in the host affects both samples of a pair.
pub async fn run_paired_echo_benchmark(s: &Scenario) -> Result<(TimingReport, TimingReport), HarnessError> {
    let inproc_s = Scenario {
        adapter: AdapterMode::Inproc,
        ..s.clone()
    };
    let socket_s = Scenario {
        adapter: AdapterMode::Socket,
        ..s.clone()
    };
    let inproc = Deployment::launch(&inproc_s).await?;
    let socket = Deployment::launch(&socket_s).await?;
    let (mut a, mut b) = (echo_report(&inproc_s), echo_report(&socket_s));
    for rep in 0..s.reps {
        let (ra, rb) = if rep % 2 == 0 {
            let ra = echo_batch(&inproc, s, rep).await?;
            (ra, echo_batch(&socket, s, rep).await?)
        } else {
            let rb = echo_batch(&socket, s, rep).await?;
            (echo_batch(&inproc, s, rep).await?, rb)
        };
        a.repetitions.push(Repetition { n: s.peers, records: ra });
        b.repetitions.push(Repetition { n: s.peers, records: rb });
    }
    Ok((a, b))
}

fn echo_report(s: &Scenario) -> TimingReport {
    let mut report = TimingReport {
        benchmark: "echo".into(),
        parameters: s.parameters(),
        batch_size: Some(s.echoes),
        ..TimingReport::default()
    };
    report.parameters.insert("peers".into(), s.peers.to_string());
    report
}

/// `s.echoes` consecutive echoes to every peer, peers in parallel.
async fn echo_batch(d: &Deployment, s: &Scenario, rep: usize) -> Result<Vec<TimingRecord>, HarnessError> {
    let batches = d.peers.iter().map(|p| async move {
        let t0 = d.now();
        let mut adapter_ms = 0.0;
        for k in 0..s.echoes {
            let payload = json!({"rep": rep, "k": k});
            let sample = d
                .gateway
                .echo(&p.fingerprint, payload.clone(), ECHO_TIMEOUT)
                .await
                .map_err(|e| HarnessError::ScenarioSetupFailed(format!("echo to {}: {e}", p.name)))?;
            if sample.payload != payload {
                return Err(HarnessError::EchoMismatch { peer: p.name.clone() });
            }
            adapter_ms += sample.adapter_ms;
        }
        let total = ms(d.now().saturating_sub(t0));
        let adapter_ms = adapter_ms.min(total);
        Ok(TimingRecord {
            peer: p.name.clone(),
            t_flex_ms: total - adapter_ms,
            t_adapter_ms: adapter_ms,
            t_total_ms: total,
        })
    });
    try_join_all(batches).await
}

/// One client request to result cycle per repetition, for every peer count
/// in `ns`. Failed sessions are counted; a wrong sum is an error.
pub async fn run_sum_benchmark(s: &Scenario, ns: &[usize]) -> Result<TimingReport, HarnessError> {
    let mut report = TimingReport {
        benchmark: "sum".into(),
        parameters: s.parameters(),
        ..TimingReport::default()
    };
    report.parameters.insert(
        "peers".into(),
        ns.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    for &n in ns {
        let scenario = Scenario { peers: n, ..s.clone() };
        let d = Deployment::launch(&scenario).await?;
        let client = d.client().await?;
        for _ in 0..s.reps {
            let r = match client.query(GROUP, "sum", CAPABILITY).await {
                Ok(r) => r,
                Err(ClientError::Gateway(e)) if e.code == ErrorCode::SessionFailed => {
                    report.failures += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let names: Vec<&str> = r.participants.iter().filter_map(|fp| d.name_of(fp)).collect();
            let expected = d.oracle_sum(names, &r.request_id);
            if r.result.value() != expected {
                return Err(HarnessError::WrongResult {
                    session: r.session_id,
                    expected,
                    got: r.result.value(),
                });
            }
            report.repetitions.push(Repetition { n, records: r.timing });
        }
    }
    Ok(report)
}

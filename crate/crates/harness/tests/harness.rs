use flexsmc_core::report::{emit_report, Metric, ReportFormat};
use flexsmc_harness::stats::linear_fit;
use flexsmc_harness::{
    chaos_suite, run_chaos_scenario, run_echo_benchmark, run_sum_benchmark, ChaosVerdict, Expectation, Scenario,
    Transport,
};
use flexsmc_node::config::AdapterMode;

fn sim(peers: usize, reps: usize) -> Scenario {
    Scenario {
        peers,
        reps,
        transport: Transport::Sim,
        seed: 11,
        ..Scenario::default()
    }
}

#[tokio::test(start_paused = true)]
async fn echo_batches_are_ordered_and_socket_is_slower() {
    let inproc = run_echo_benchmark(&sim(5, 5)).await.unwrap();
    assert_eq!(inproc.repetitions.len(), 5);
    assert_eq!(inproc.batch_size, Some(10));
    for rep in &inproc.repetitions {
        assert_eq!(rep.records.len(), 5);
        assert!(rep.records.iter().all(|r| r.is_ordered() && r.t_total_ms > 0.0));
    }
    let socket = run_echo_benchmark(&Scenario {
        adapter: AdapterMode::Socket,
        ..sim(5, 5)
    })
    .await
    .unwrap();
    let a = inproc.median_max(5, Metric::TTotal).unwrap();
    let b = socket.median_max(5, Metric::TTotal).unwrap();
    assert!(b > a, "{b} <= {a}");
    assert!(socket.median_max(5, Metric::TAdapter).unwrap() > inproc.median_max(5, Metric::TAdapter).unwrap());
}

#[tokio::test(start_paused = true)]
async fn sum_benchmark_is_correct_and_deterministic() {
    let s = Scenario {
        channel_wait_ms: 1000,
        ..sim(3, 4)
    };
    let a = run_sum_benchmark(&s, &[3, 6]).await.unwrap();
    assert_eq!(a.failures, 0);
    assert_eq!(a.repetitions.len(), 8);
    for rep in &a.repetitions {
        assert_eq!(rep.records.len(), rep.n);
        assert!(rep.records.iter().all(|r| r.is_ordered()));
    }
    let m3 = a.median_max(3, Metric::TTotal).unwrap();
    let m6 = a.median_max(6, Metric::TTotal).unwrap();
    assert!((1000.0..1200.0).contains(&m3), "{m3}");
    assert!(m6 >= m3);
    let b = run_sum_benchmark(&s, &[3, 6]).await.unwrap();
    assert_eq!(emit_report(&a, ReportFormat::Json), emit_report(&b, ReportFormat::Json));
}

#[tokio::test(start_paused = true)]
async fn sum_scaling_is_linear_on_the_sim() {
    let ns: Vec<usize> = (3..=11).collect();
    let r = run_sum_benchmark(&sim(3, 5), &ns).await.unwrap();
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| (n as f64, r.median_max(n, Metric::TTotal).unwrap()))
        .collect();
    let fit = linear_fit(&pts).unwrap();
    assert!(fit.slope > 0.0 && fit.r2 >= 0.8, "{fit:?}");
}

#[tokio::test(start_paused = true)]
async fn chaos_suite_meets_expectations_deterministically() {
    for case in chaos_suite(5) {
        let out = run_chaos_scenario(&case.scenario).await.unwrap();
        match case.expect {
            Expectation::Success { contributors } => {
                assert_eq!(out.verdict, ChaosVerdict::CorrectSum, "{}: {out:?}", case.name);
                assert_eq!(out.participants.len(), contributors, "{}", case.name);
                assert!(out.attempts <= 3);
            }
            Expectation::SessionFailed => {
                assert_eq!(out.verdict, ChaosVerdict::Failed, "{}: {out:?}", case.name);
            }
        }
        let again = run_chaos_scenario(&case.scenario).await.unwrap();
        assert_eq!(again, out, "{}", case.name);
    }
}

#[tokio::test(start_paused = true)]
async fn tcp_scenarios_refuse_fault_plans() {
    let mut s = sim(3, 1);
    s.transport = Transport::Tcp;
    s.fault = chaos_suite(1)[0].scenario.fault.clone();
    assert!(run_chaos_scenario(&s).await.is_err());
}

//! Benchmarks and fault-injection runs against an in-process deployment.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use flexsmc_cli::{emit_chaos, init_logging, parse_peer_counts, parse_transport};
use flexsmc_core::fault::FaultPlan;
use flexsmc_core::report::{emit_report, ReportFormat};
use flexsmc_harness::{chaos_suite, run_chaos_scenario, run_echo_benchmark, run_sum_benchmark, runtime, Scenario, Transport};
use flexsmc_node::config::{load_json, AdapterMode};

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Echo,
    Sum,
    Chaos,
}

#[derive(Parser)]
#[command(about = "Run echo, sum or chaos scenarios and print a report")]
struct Args {
    kind: Kind,
    /// Peer count; sum also takes ranges and lists such as 3-11 or 3,5,7.
    #[arg(long, default_value = "3")]
    peers: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value = "sim", value_parser = parse_transport)]
    transport: Transport,
    /// Milliseconds every node waits after opening its protocol channels.
    #[arg(long = "channel-wait", default_value_t = 0)]
    channel_wait: u64,
    #[arg(long, default_value = "inproc")]
    adapter: AdapterMode,
    /// JSON fault plan. Chaos without a plan runs the regression suite.
    #[arg(long)]
    fault: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

fn main() -> anyhow::Result<()> {
    init_logging();
    let args = Args::parse();
    let ns = parse_peer_counts(&args.peers)?;
    let fault: FaultPlan = match &args.fault {
        Some(path) => load_json(path)?,
        None => FaultPlan::default(),
    };
    let scenario = Scenario {
        peers: ns[0],
        reps: args.reps,
        transport: args.transport,
        channel_wait_ms: args.channel_wait,
        adapter: args.adapter,
        fault,
        seed: args.seed,
        ..Scenario::default()
    };
    let rt = runtime(args.transport).context("starting the runtime")?;
    let out = rt.block_on(async {
        anyhow::Ok(match args.kind {
            Kind::Echo => emit_report(&run_echo_benchmark(&scenario).await?, args.format),
            Kind::Sum => emit_report(&run_sum_benchmark(&scenario, &ns).await?, args.format),
            Kind::Chaos => {
                let cases: Vec<(String, Scenario)> = if args.fault.is_some() {
                    vec![("fault plan".to_owned(), scenario.clone())]
                } else {
                    chaos_suite(args.seed).into_iter().map(|c| (c.name, c.scenario)).collect()
                };
                let mut outcomes = Vec::new();
                for (name, s) in cases {
                    outcomes.push((name, run_chaos_scenario(&s).await?));
                }
                emit_chaos(&outcomes, args.format)
            }
        })
    })?;
    print!("{out}");
    Ok(())
}

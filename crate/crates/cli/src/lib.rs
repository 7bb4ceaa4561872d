//! Shared pieces of the command-line tools.

use std::fmt::Write as _;
use std::io::IsTerminal;

use anyhow::{bail, Context};
use flexsmc_core::report::ReportFormat;
use flexsmc_harness::{ChaosOutcome, Transport};

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();
}

pub fn parse_transport(s: &str) -> Result<Transport, String> {
    s.parse()
}

/// `"5"`, `"3-11"` or `"3,5,7"`.
pub fn parse_peer_counts(s: &str) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().with_context(|| format!("bad peer count {lo:?}"))?;
                let hi: usize = hi.trim().parse().with_context(|| format!("bad peer count {hi:?}"))?;
                if lo > hi {
                    bail!("empty range {part:?}");
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().with_context(|| format!("bad peer count {part:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("no peer counts in {s:?}");
    }
    Ok(out)
}

pub const CHAOS_CSV_HEADER: &str = "name,peers,attempts,participants,result,expected,verdict";

/// Serializes chaos outcomes, each under its case name.
pub fn emit_chaos(outcomes: &[(String, ChaosOutcome)], format: ReportFormat) -> String {
    let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
    match format {
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> = outcomes
                .iter()
                .map(|(name, o)| serde_json::json!({"name": name, "outcome": o}))
                .collect();
            let mut s = serde_json::to_string_pretty(&rows).expect("outcomes serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = format!("{CHAOS_CSV_HEADER}\n");
            for (name, o) in outcomes {
                let _ = writeln!(
                    s,
                    "\"{name}\",{},{},{},{},{},{}",
                    o.peers,
                    o.attempts,
                    o.participants.join(" "),
                    opt(o.result),
                    opt(o.expected),
                    verdict(o)
                );
            }
            s
        }
        ReportFormat::Text => {
            let mut s = String::new();
            for (name, o) in outcomes {
                let _ = writeln!(s, "{name}");
                let _ = writeln!(s, "  attempts: {}  participants: {}", o.attempts, o.participants.join(", "));
                match &o.error {
                    Some(e) => {
                        let _ = writeln!(s, "  failed: {}", e.message);
                    }
                    None => {
                        let _ = writeln!(s, "  result: {}  oracle: {}", opt(o.result), opt(o.expected));
                    }
                }
                let _ = writeln!(s, "  verdict: {}", verdict(o));
            }
            s
        }
    }
}

fn verdict(o: &ChaosOutcome) -> String {
    serde_json::to_value(o.verdict)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

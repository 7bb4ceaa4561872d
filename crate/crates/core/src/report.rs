//! Per-peer timing records, max-over-peers aggregation and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Durations observed for one peer in one repetition, in milliseconds.
///
/// `t_flex` is orchestration messaging, `t_adapter` the extra time spent
/// talking to the local SMC instance, `t_total` the full path including the
/// protocol itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub peer: String,
    pub t_flex_ms: f64,
    pub t_adapter_ms: f64,
    pub t_total_ms: f64,
}

impl TimingRecord {
    /// `t_flex <= t_flex + t_adapter <= t_total`, with a little float slack.
    pub fn is_ordered(&self) -> bool {
        const EPS: f64 = 1e-9;
        self.t_flex_ms >= 0.0
            && self.t_adapter_ms >= 0.0
            && self.t_flex_ms + self.t_adapter_ms <= self.t_total_ms + EPS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TFlex,
    TAdapter,
    TTotal,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::TFlex, Metric::TAdapter, Metric::TTotal];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TFlex => "t_flex",
            Metric::TAdapter => "t_adapter",
            Metric::TTotal => "t_total",
        }
    }

    pub fn of(self, r: &TimingRecord) -> f64 {
        match self {
            Metric::TFlex => r.t_flex_ms,
            Metric::TAdapter => r.t_adapter_ms,
            Metric::TTotal => r.t_total_ms,
        }
    }
}

/// All per-peer records of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub n: usize,
    pub records: Vec<TimingRecord>,
}

impl Repetition {
    /// The slowest peer decides: aggregate is the maximum, never the mean.
    pub fn max(&self, metric: Metric) -> Option<f64> {
        self.records.iter().map(|r| metric.of(r)).reduce(f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub benchmark: String,
    pub parameters: BTreeMap<String, String>,
    pub repetitions: Vec<Repetition>,
    /// Repetitions that ended in an error instead of a measurement.
    pub failures: usize,
    /// Items per repetition (e.g. echoes per batch); enables per-item rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u32>,
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub metric: String,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl TimingReport {
    /// Max-over-peers values of every repetition with `n` participants.
    pub fn per_repetition_max(&self, n: usize, metric: Metric) -> Vec<f64> {
        self.repetitions
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.max(metric))
            .collect()
    }

    pub fn peer_counts(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.repetitions.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    pub fn median_max(&self, n: usize, metric: Metric) -> Option<f64> {
        median(&self.per_repetition_max(n, metric))
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for n in self.peer_counts() {
            for metric in Metric::ALL {
                let values = self.per_repetition_max(n, metric);
                if let Some(row) = summarize(n, metric.name(), &values) {
                    rows.push(row);
                }
            }
            if let Some(batch) = self.batch_size.filter(|&b| b > 0) {
                for metric in Metric::ALL {
                    let values: Vec<f64> = self
                        .per_repetition_max(n, metric)
                        .into_iter()
                        .map(|v| v / batch as f64)
                        .collect();
                    if let Some(row) = summarize(n, &format!("{}_per_item", metric.name()), &values) {
                        rows.push(row);
                    }
                }
            }
        }
        rows
    }
}

fn summarize(n: usize, metric: &str, values: &[f64]) -> Option<SummaryRow> {
    Some(SummaryRow {
        n,
        metric: metric.to_owned(),
        median: median(values)?,
        p90: percentile(values, 90.0)?,
        max: values.iter().copied().reduce(f64::max)?,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub const CSV_HEADER: &str = "n,metric,median,p90,max";

/// Deterministic serialization of a report.
pub fn emit_report(report: &TimingReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for row in report.summary() {
                let _ = writeln!(s, "{},{},{:.3},{:.3},{:.3}", row.n, row.metric, row.median, row.p90, row.max);
            }
            s
        }
        ReportFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "benchmark: {}", report.benchmark);
            for (k, v) in &report.parameters {
                let _ = writeln!(s, "  {k}: {v}");
            }
            let _ = writeln!(s, "  repetitions: {}  failures: {}", report.repetitions.len(), report.failures);
            let _ = writeln!(s, "{:>4}  {:<22} {:>12} {:>12} {:>12}", "n", "metric", "median ms", "p90 ms", "max ms");
            for row in report.summary() {
                let _ = writeln!(
                    s,
                    "{:>4}  {:<22} {:>12.3} {:>12.3} {:>12.3}",
                    row.n, row.metric, row.median, row.p90, row.max
                );
            }
            s
        }
    }
}

use std::collections::BTreeMap;
use std::io;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::runtime::{Breakdown, InvocationOutcome, OutcomeSink, ResourceSample, Status};
use crate::sim::SimTime;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 10] =
    ["t_s", "offered_rps", "achieved_rps", "error_ratio", "p50_ms", "p95_ms", "p99_ms", "warm_containers", "replicas", "cores_allocated"];

#[derive(Debug, Clone, Default)]
struct Bin {
    offered: u64,
    completed: u64,
    failed: u64,
    rejected: u64,
    latencies_ms: Vec<f64>,
    warm: Option<u32>,
    replicas: Option<u32>,
    cores: Option<f64>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// One row of the per-second series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t_s: u64,
    pub offered_rps: f64,
    pub achieved_rps: f64,
    pub error_ratio: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub warm_containers: u32,
    pub replicas: u32,
    pub cores_allocated: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BreakdownMs {
    pub queue: f64,
    pub cold_start: f64,
    pub data_access: f64,
    pub execution: f64,
    pub commit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub duration_s: f64,
    pub offered: u64,
    pub completed: u64,
    pub failed: u64,
    pub rejected: u64,
    /// Failed and rejected counts keyed by reason.
    pub reasons: BTreeMap<String, u64>,
    /// Measured arrivals still unfinished when the drain grace ran out.
    pub pending_at_cutoff: u64,
    pub offered_rps: f64,
    pub achieved_rps: f64,
    /// Failed plus rejected over offered.
    pub error_ratio: f64,
    pub mean_latency_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// Mean per completed invocation.
    pub breakdown_ms: BreakdownMs,
    /// Share of mean latency spent outside method execution.
    pub overhead_share: f64,
    pub mean_warm_containers: f64,
    pub max_warm_containers: u32,
    pub replicas: u32,
    pub core_seconds: f64,
}

/// Collects outcomes whose arrival falls inside the measurement window, binned
/// by arrival second.
#[derive(Debug, Clone)]
pub struct MetricsCollector {
    start: SimTime,
    end: SimTime,
    bins: Vec<Bin>,
    breakdown: [Duration; 5],
    reasons: BTreeMap<String, u64>,
    pending_at_cutoff: u64,
}

impl MetricsCollector {
    pub fn new(start: SimTime, end: SimTime) -> Self {
        let n = (end - start).as_secs_f64().ceil() as usize;
        MetricsCollector { start, end, bins: vec![Bin::default(); n], breakdown: [Duration::ZERO; 5], reasons: BTreeMap::new(), pending_at_cutoff: 0 }
    }

    fn bin(&mut self, t: SimTime) -> Option<&mut Bin> {
        if t < self.start || t >= self.end {
            return None;
        }
        let i = ((t - self.start).as_nanos() / 1_000_000_000) as usize;
        self.bins.get_mut(i)
    }

    pub fn set_pending_at_cutoff(&mut self, n: u64) {
        self.pending_at_cutoff = n;
    }

    fn add_breakdown(&mut self, b: &Breakdown) {
        for (acc, d) in self.breakdown.iter_mut().zip([b.queue, b.cold_start, b.data_access, b.execution, b.commit]) {
            *acc += d;
        }
    }

    pub fn series(&self) -> Vec<SeriesRow> {
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut l = b.latencies_ms.clone();
                l.sort_by(f64::total_cmp);
                let errors = b.failed + b.rejected;
                SeriesRow {
                    t_s: i as u64,
                    offered_rps: b.offered as f64,
                    achieved_rps: b.completed as f64,
                    error_ratio: if b.offered == 0 { 0.0 } else { errors as f64 / b.offered as f64 },
                    p50_ms: percentile(&l, 50.0),
                    p95_ms: percentile(&l, 95.0),
                    p99_ms: percentile(&l, 99.0),
                    warm_containers: b.warm.unwrap_or(0),
                    replicas: b.replicas.unwrap_or(0),
                    cores_allocated: b.cores.unwrap_or(0.0),
                }
            })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let duration_s = (self.end - self.start).as_secs_f64();
        let (mut offered, mut completed, mut failed, mut rejected) = (0, 0, 0, 0);
        let mut all = Vec::new();
        for b in &self.bins {
            offered += b.offered;
            completed += b.completed;
            failed += b.failed;
            rejected += b.rejected;
            all.extend_from_slice(&b.latencies_ms);
        }
        all.sort_by(f64::total_cmp);
        let mean = |d: Duration| if completed == 0 { 0.0 } else { d.as_secs_f64() * 1e3 / completed as f64 };
        let [q, c, d, e, m] = self.breakdown;
        let breakdown_ms = BreakdownMs { queue: mean(q), cold_start: mean(c), data_access: mean(d), execution: mean(e), commit: mean(m) };
        let total = q + c + d + e + m;
        let overhead_share = if total.is_zero() { 0.0 } else { 1.0 - e.as_secs_f64() / total.as_secs_f64() };
        let warm: Vec<u32> = self.bins.iter().filter_map(|b| b.warm).collect();
        Summary {
            schema_version: SCHEMA_VERSION,
            duration_s,
            offered,
            completed,
            failed,
            rejected,
            reasons: self.reasons.clone(),
            pending_at_cutoff: self.pending_at_cutoff,
            offered_rps: offered as f64 / duration_s,
            achieved_rps: completed as f64 / duration_s,
            error_ratio: if offered == 0 { 0.0 } else { (failed + rejected) as f64 / offered as f64 },
            mean_latency_ms: if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 },
            p50_ms: percentile(&all, 50.0),
            p95_ms: percentile(&all, 95.0),
            p99_ms: percentile(&all, 99.0),
            breakdown_ms,
            overhead_share,
            mean_warm_containers: if warm.is_empty() { 0.0 } else { warm.iter().map(|&w| w as f64).sum::<f64>() / warm.len() as f64 },
            max_warm_containers: warm.iter().copied().max().unwrap_or(0),
            replicas: self.bins.iter().filter_map(|b| b.replicas).max().unwrap_or(0),
            core_seconds: self.bins.iter().filter_map(|b| b.cores).sum(),
        }
    }
}

impl OutcomeSink for MetricsCollector {
    fn record(&mut self, o: &InvocationOutcome) {
        let completed = o.status == Status::Completed;
        let Some(bin) = self.bin(o.start) else { return };
        bin.offered += 1;
        match o.status {
            Status::Completed => {
                bin.completed += 1;
                bin.latencies_ms.push(o.latency().as_secs_f64() * 1e3);
            }
            Status::Failed => bin.failed += 1,
            Status::Rejected => bin.rejected += 1,
        }
        if completed {
            self.add_breakdown(&o.breakdown);
        } else if let Some(r) = o.reason {
            *self.reasons.entry(r.as_str().to_string()).or_default() += 1;
        }
    }

    fn sample(&mut self, s: &ResourceSample) {
        // A sample closes the second that ends at `s.at`.
        let Some(at) = s.at.as_nanos().checked_sub(1) else { return };
        if let Some(bin) = self.bin(SimTime::from_nanos(at)) {
            bin.warm = Some(s.warm_containers);
            bin.replicas = Some(s.replicas);
            bin.cores = Some(s.cores_allocated);
        }
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.4}")
}

pub fn write_csv<W: io::Write>(rows: &[SeriesRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.t_s.to_string(),
            fmt(r.offered_rps),
            fmt(r.achieved_rps),
            fmt(r.error_ratio),
            fmt(r.p50_ms),
            fmt(r.p95_ms),
            fmt(r.p99_ms),
            r.warm_containers.to_string(),
            r.replicas.to_string(),
            fmt(r.cores_allocated),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<SeriesRow>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().collect()
}

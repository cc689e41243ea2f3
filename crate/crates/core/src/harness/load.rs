use std::time::Duration;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::runtime::{LoadTarget, Platform, RuntimeError};
use crate::sim::{secs, SimRng, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LoadPattern {
    /// Evenly spaced arrivals at `rps`, or a Poisson process with that mean.
    ConstantRate {
        rps: f64,
        #[serde(default)]
        poisson: bool,
    },
    /// Idle, then a burst at `rps`, repeating.
    Burst {
        rps: f64,
        #[serde(default = "default_idle")]
        idle_s: f64,
        #[serde(default = "default_burst")]
        burst_s: f64,
    },
    /// A fixed number of clients, each sending its next request when the last ends.
    ClosedLoop { clients: u32 },
}

fn default_idle() -> f64 {
    60.0
}

fn default_burst() -> f64 {
    1.0
}

impl LoadPattern {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            LoadPattern::ConstantRate { rps, .. } => rps.is_finite() && rps > 0.0,
            LoadPattern::Burst { rps, idle_s, burst_s } => rps.is_finite() && rps > 0.0 && idle_s >= 0.0 && burst_s > 0.0,
            LoadPattern::ClosedLoop { clients } => clients > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid load pattern {self:?}"))
        }
    }

    /// Mean offered rate over a long window, if open loop.
    pub fn mean_rate(&self) -> Option<f64> {
        match *self {
            LoadPattern::ConstantRate { rps, .. } => Some(rps),
            LoadPattern::Burst { rps, idle_s, burst_s } => Some(rps * burst_s / (idle_s + burst_s)),
            LoadPattern::ClosedLoop { .. } => None,
        }
    }
}

/// Arrival instants of an open-loop pattern in `[start, end)`.
/// Closed-loop patterns yield nothing here; see [`generate_load`].
pub fn arrivals(pattern: &LoadPattern, start: SimTime, end: SimTime, mut rng: SimRng) -> Box<dyn Iterator<Item = SimTime>> {
    match *pattern {
        LoadPattern::ConstantRate { rps, poisson: false } => {
            let gap = 1e9 / rps;
            Box::new((0u64..).map(move |k| start + Duration::from_nanos((k as f64 * gap).round() as u64)).take_while(move |&t| t < end))
        }
        LoadPattern::ConstantRate { rps, poisson: true } => {
            let exp = Exp::new(rps).expect("positive rate");
            let mut t = start.as_secs_f64();
            Box::new(
                std::iter::from_fn(move || {
                    t += exp.sample(&mut rng);
                    Some(SimTime::from_secs_f64(t))
                })
                .take_while(move |&t| t < end),
            )
        }
        LoadPattern::Burst { rps, idle_s, burst_s } => {
            let gap = 1e9 / rps;
            let per_burst = (rps * burst_s).round().max(1.0) as u64;
            let cycle = secs(idle_s + burst_s);
            Box::new(
                (0u64..)
                    .flat_map(move |c| {
                        let b0 = start + secs(idle_s) + Duration::from_nanos(cycle.as_nanos() as u64 * c);
                        (0..per_burst).map(move |k| b0 + Duration::from_nanos((k as f64 * gap).round() as u64))
                    })
                    .take_while(move |&t| t < end),
            )
        }
        LoadPattern::ClosedLoop { .. } => Box::new(std::iter::empty()),
    }
}

/// Attaches a load driver to the platform for `[start, end)`.
pub fn generate_load(
    platform: &mut Platform,
    target: &LoadTarget,
    pattern: &LoadPattern,
    start: SimTime,
    end: SimTime,
    rng: SimRng,
) -> Result<u32, RuntimeError> {
    pattern.validate().map_err(RuntimeError::Config)?;
    match pattern {
        LoadPattern::ClosedLoop { clients } => {
            if start > platform.now() {
                platform.run_until(start);
            }
            platform.add_closed_load(target, *clients, end)
        }
        _ => platform.add_open_load(target, arrivals(pattern, start, end, rng)),
    }
}

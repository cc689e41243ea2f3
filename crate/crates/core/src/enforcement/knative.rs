use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

/// Desired pod count for an observed concurrency.
pub fn autoscale_knative_like(observed_concurrency: f64, target_per_container: f64) -> u32 {
    if observed_concurrency <= 0.0 || target_per_container <= 0.0 {
        return 0;
    }
    (observed_concurrency / target_per_container - 1e-9).ceil().max(0.0) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnativeConfig {
    /// Soft target of concurrent requests per pod.
    pub target_concurrency: f64,
    /// Hard per-pod limit; the default mimics an unbounded setting.
    pub container_concurrency: u32,
    #[serde(with = "crate::sim::serde_secs")]
    pub tick: Duration,
    #[serde(with = "crate::sim::serde_secs")]
    pub stable_window: Duration,
    #[serde(with = "crate::sim::serde_secs")]
    pub panic_window: Duration,
    /// Panic when the panic-window demand reaches this multiple of ready pods.
    pub panic_threshold: f64,
    /// Requests the activator buffers while pods start; beyond it, rejected.
    pub queue_depth: usize,
}

impl Default for KnativeConfig {
    fn default() -> Self {
        KnativeConfig {
            target_concurrency: 100.0,
            container_concurrency: 1000,
            tick: Duration::from_secs(2),
            stable_window: Duration::from_secs(60),
            panic_window: Duration::from_secs(6),
            panic_threshold: 2.0,
            queue_depth: 1000,
        }
    }
}

impl KnativeConfig {
    /// Same autoscaler, with the per-pod limit capped at `cap` and the target at 70% of it.
    pub fn concurrency_capped(cap: u32) -> Self {
        KnativeConfig { container_concurrency: cap.max(1), target_concurrency: (cap.max(1) as f64 * 0.7).max(0.5), ..Default::default() }
    }
}

/// Windowed concurrency autoscaler with stable and panic modes and scale to zero.
#[derive(Debug, Clone)]
pub struct KnativeScaler {
    pub config: KnativeConfig,
    samples: VecDeque<(SimTime, f64)>,
    panic_until: Option<SimTime>,
    last_desired: u32,
}

impl KnativeScaler {
    pub fn new(config: KnativeConfig) -> Self {
        KnativeScaler { config, samples: VecDeque::new(), panic_until: None, last_desired: 0 }
    }

    pub fn in_panic(&self, now: SimTime) -> bool {
        self.panic_until.is_some_and(|t| now < t)
    }

    fn average(&self, now: SimTime, window: Duration) -> f64 {
        let from = now - window;
        let (sum, n) = self.samples.iter().filter(|(t, _)| *t > from).fold((0.0, 0u32), |(s, n), (_, c)| (s + c, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Records the mean concurrency of the tick that just ended and returns
    /// the desired pod count.
    pub fn tick(&mut self, now: SimTime, observed: f64, ready: u32) -> u32 {
        self.samples.push_back((now, observed));
        while self.samples.front().is_some_and(|(t, _)| *t + self.config.stable_window <= now) {
            self.samples.pop_front();
        }
        let target = self.config.target_concurrency;
        let stable = autoscale_knative_like(self.average(now, self.config.stable_window), target);
        let panic = autoscale_knative_like(self.average(now, self.config.panic_window), target);
        if panic as f64 >= self.config.panic_threshold * ready.max(1) as f64 && panic > ready {
            self.panic_until = Some(now + self.config.stable_window);
        }
        let desired = if self.in_panic(now) { panic.max(stable).max(self.last_desired) } else { stable };
        self.last_desired = desired;
        desired
    }
}

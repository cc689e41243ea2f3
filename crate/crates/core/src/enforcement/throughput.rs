use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EnforcementError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    #[serde(with = "crate::sim::serde_secs")]
    pub interval: Duration,
    pub drift_threshold: f64,
    pub error_threshold: f64,
    pub headroom: f64,
    pub alpha: f64,
    pub min_samples: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            interval: Duration::from_secs(10),
            drift_threshold: 0.15,
            error_threshold: 0.01,
            headroom: 0.0,
            alpha: 0.3,
            min_samples: 50,
        }
    }
}

/// What one function's pool did during one adjustment interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricWindow {
    pub duration: Duration,
    pub arrivals: u64,
    pub completed: u64,
    pub failed: u64,
    pub rejected: u64,
    /// Sum over completed invocations of the time each held its container slot.
    pub occupancy_secs: f64,
    pub concurrency_limit: u32,
}

impl MetricWindow {
    pub fn arrival_rate(&self) -> f64 {
        if self.duration.is_zero() {
            0.0
        } else {
            self.arrivals as f64 / self.duration.as_secs_f64()
        }
    }

    pub fn error_ratio(&self) -> f64 {
        let done = self.completed + self.failed + self.rejected;
        if done == 0 {
            0.0
        } else {
            (self.failed + self.rejected) as f64 / done as f64
        }
    }

    /// Per-container capacity measured in this window, if it has enough samples.
    pub fn raw_capacity(&self, min_samples: u64) -> Option<f64> {
        if self.completed < min_samples.max(1) || self.occupancy_secs <= 0.0 {
            return None;
        }
        Some(self.concurrency_limit as f64 / (self.occupancy_secs / self.completed as f64))
    }
}

/// Exponentially smoothed per-container capacity κ (requests per second).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimator {
    pub alpha: f64,
    pub min_samples: u64,
    pub bootstrap: f64,
    kappa: f64,
    measured: bool,
}

impl CapacityEstimator {
    pub fn new(bootstrap: f64, alpha: f64, min_samples: u64) -> Self {
        CapacityEstimator { alpha, min_samples, bootstrap, kappa: bootstrap, measured: false }
    }

    /// Prior for a container with `concurrency_limit` slots and the declared mean service time.
    pub fn bootstrap_for(concurrency_limit: u32, mean_service: Duration, config: &ControllerConfig) -> Self {
        let prior = concurrency_limit as f64 / mean_service.as_secs_f64().max(1e-9);
        Self::new(prior, config.alpha, config.min_samples)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_measured(&self) -> bool {
        self.measured
    }

    /// Replaces the estimate outright, e.g. after a detected regime change.
    pub fn reset(&mut self, kappa: f64) {
        self.kappa = kappa;
        self.measured = true;
    }
}

/// Folds one window into the estimate. The first usable window replaces the
/// prior; later ones are smoothed. Windows with too few samples leave it as is.
pub fn estimate_capacity(window: &MetricWindow, estimator: &mut CapacityEstimator) -> f64 {
    if let Some(raw) = window.raw_capacity(estimator.min_samples) {
        estimator.kappa = if estimator.measured { estimator.alpha * raw + (1.0 - estimator.alpha) * estimator.kappa } else { raw };
        estimator.measured = true;
    }
    estimator.kappa
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPlan {
    /// Rate the pool is sized for.
    pub guaranteed_rate: f64,
    pub kappa: f64,
    pub warm_containers: u32,
}

/// Warm containers needed so that `a` requests per second can start without
/// waiting for a cold start.
pub fn plan_throughput(a: f64, kappa: f64, headroom: f64) -> Result<ThroughputPlan, EnforcementError> {
    if !(a >= 0.0) || !(kappa > 0.0) || !(headroom >= 0.0) {
        return Err(EnforcementError::Domain(format!("plan_throughput needs a >= 0, kappa > 0, headroom >= 0 (got {a}, {kappa}, {headroom})")));
    }
    let warm = if a == 0.0 { 0 } else { (a * (1.0 + headroom) / kappa - 1e-9).ceil().max(1.0) as u32 };
    Ok(ThroughputPlan { guaranteed_rate: a, kappa, warm_containers: warm })
}

/// Splits `demand` over nodes by `shares` so that each node on its own
/// satisfies the guarantee for its share of the traffic.
pub fn split_by_share(demand: f64, kappa: f64, shares: &[f64]) -> Vec<u32> {
    let total: f64 = shares.iter().sum();
    if demand <= 0.0 || total <= 0.0 {
        return vec![0; shares.len()];
    }
    shares.iter().map(|s| if *s <= 0.0 { 0 } else { (demand * s / total / kappa - 1e-9).ceil().max(1.0) as u32 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Monitoring,
    ChangeDetection,
    ConfigurationEvaluation,
    Reconfiguration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChangeReason {
    CapacityDrift,
    ErrorRatio,
    DemandChange,
}

impl ChangeReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeReason::CapacityDrift => "capacity-drift",
            ChangeReason::ErrorRatio => "error-ratio",
            ChangeReason::DemandChange => "demand-change",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationAction {
    pub from: u32,
    pub to: u32,
    pub plan: ThroughputPlan,
    pub reason: ChangeReason,
}

/// Per-function state of the adaptive throughput controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub config: ControllerConfig,
    /// Declared guaranteed rate; 0 when the method declares none.
    pub guaranteed_rate: f64,
    pub estimator: CapacityEstimator,
    pub plan: ThroughputPlan,
    pub phase: Phase,
    /// Phases visited during the last step, in order.
    pub trail: Vec<Phase>,
}

impl ControllerState {
    pub fn new(config: ControllerConfig, guaranteed_rate: f64, estimator: CapacityEstimator) -> Result<Self, EnforcementError> {
        let plan = plan_throughput(guaranteed_rate, estimator.kappa(), config.headroom)?;
        Ok(ControllerState { config, guaranteed_rate, estimator, plan, phase: Phase::Monitoring, trail: Vec::new() })
    }

    /// Rate to provision for: the guarantee, or the observed rate when higher.
    pub fn demand(&self, window: &MetricWindow) -> f64 {
        self.guaranteed_rate.max(window.arrival_rate())
    }

    fn enter(&mut self, p: Phase) {
        self.phase = p;
        self.trail.push(p);
    }
}

fn relative_change(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (new - old).abs() / old
    }
}

/// One pass of the four-phase loop. `feasible` answers whether the cluster
/// can host a candidate warm-container count. Returns the reconfiguration to
/// apply, or `None` when nothing changed. An infeasible plan leaves the prior
/// plan in force and is reported as an error.
pub fn control_step(
    state: &mut ControllerState,
    window: &MetricWindow,
    feasible: impl FnOnce(&ThroughputPlan) -> bool,
) -> Result<Option<ReconfigurationAction>, EnforcementError> {
    state.trail.clear();

    state.enter(Phase::Monitoring);
    let raw = window.raw_capacity(state.config.min_samples);
    let smoothed = estimate_capacity(window, &mut state.estimator);
    let demand = state.demand(window);

    state.enter(Phase::ChangeDetection);
    let drift = raw.map_or(0.0, |r| relative_change(r, state.plan.kappa));
    let reason = if drift > state.config.drift_threshold {
        // A regime change: plan on the fresh measurement, not the smoothed history.
        state.estimator.reset(raw.expect("drift implies a measurement"));
        Some(ChangeReason::CapacityDrift)
    } else if window.error_ratio() > state.config.error_threshold {
        Some(ChangeReason::ErrorRatio)
    } else if relative_change(demand, state.plan.guaranteed_rate) > state.config.drift_threshold
        || (demand > 0.0 && state.plan.warm_containers as f64 * smoothed < demand * (1.0 + state.config.headroom))
    {
        Some(ChangeReason::DemandChange)
    } else {
        None
    };
    let Some(reason) = reason else {
        state.enter(Phase::Monitoring);
        return Ok(None);
    };

    state.enter(Phase::ConfigurationEvaluation);
    let candidate = plan_throughput(demand, state.estimator.kappa(), state.config.headroom)?;
    if candidate.warm_containers == state.plan.warm_containers {
        state.plan = candidate;
        state.enter(Phase::Monitoring);
        return Ok(None);
    }
    if !feasible(&candidate) {
        state.enter(Phase::Monitoring);
        return Err(EnforcementError::InfeasiblePlan { warm_containers: candidate.warm_containers });
    }

    state.enter(Phase::Reconfiguration);
    let action = ReconfigurationAction { from: state.plan.warm_containers, to: candidate.warm_containers, plan: candidate, reason };
    state.plan = candidate;
    state.enter(Phase::Monitoring);
    Ok(Some(action))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(completed: u64, mean_occupancy: f64, arrivals: u64) -> MetricWindow {
        MetricWindow {
            duration: Duration::from_secs(10),
            arrivals,
            completed,
            failed: 0,
            rejected: 0,
            occupancy_secs: completed as f64 * mean_occupancy,
            concurrency_limit: 10,
        }
    }

    #[test]
    fn capacity_from_window() {
        let mut e = CapacityEstimator::new(1.0, 0.3, 50);
        assert!((estimate_capacity(&window(100, 0.1, 100), &mut e) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_window_keeps_prior() {
        let mut e = CapacityEstimator::new(42.0, 0.3, 50);
        assert_eq!(estimate_capacity(&MetricWindow::default(), &mut e), 42.0);
        assert_eq!(estimate_capacity(&window(49, 0.1, 49), &mut e), 42.0);
    }

    #[test]
    fn smoothing() {
        let mut e = CapacityEstimator::new(1.0, 0.3, 50);
        estimate_capacity(&window(100, 0.1, 100), &mut e);
        let k = estimate_capacity(&window(100, 0.05, 100), &mut e);
        assert!((k - 130.0).abs() < 1e-9, "{k}");
    }

    #[test]
    fn plan_examples() {
        assert_eq!(plan_throughput(100.0, 40.0, 0.0).unwrap().warm_containers, 3);
        assert_eq!(plan_throughput(0.0, 40.0, 0.0).unwrap().warm_containers, 0);
        assert_eq!(plan_throughput(10_000.0, 2500.0, 0.1).unwrap().warm_containers, 5);
        assert!(plan_throughput(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn split_covers_each_share() {
        assert_eq!(split_by_share(100.0, 10.0, &[0.5, 0.25, 0.25]), vec![5, 3, 3]);
        assert_eq!(split_by_share(0.0, 10.0, &[1.0]), vec![0]);
        assert_eq!(split_by_share(10.0, 10.0, &[1.0, 0.0]), vec![1, 0]);
    }

    fn steady_state(rate: f64, occupancy: f64) -> ControllerState {
        let cfg = ControllerConfig::default();
        let est = CapacityEstimator::new(10.0 / occupancy, cfg.alpha, cfg.min_samples);
        ControllerState::new(cfg, rate, est).unwrap()
    }

    #[test]
    fn steady_workload_is_noop() {
        let mut s = steady_state(100.0, 0.1);
        assert_eq!(s.plan.warm_containers, 1);
        for _ in 0..5 {
            assert_eq!(control_step(&mut s, &window(1000, 0.1, 1000), |_| true).unwrap(), None);
        }
        assert_eq!(s.trail.first(), Some(&Phase::Monitoring));
    }

    #[test]
    fn doubled_service_time_doubles_pool() {
        let mut s = steady_state(1000.0, 0.1);
        assert_eq!(s.plan.warm_containers, 10);
        let a = control_step(&mut s, &window(10_000, 0.2, 10_000), |_| true).unwrap().unwrap();
        assert_eq!((a.from, a.to, a.reason), (10, 20, ChangeReason::CapacityDrift));
        assert_eq!(
            s.trail,
            [Phase::Monitoring, Phase::ChangeDetection, Phase::ConfigurationEvaluation, Phase::Reconfiguration, Phase::Monitoring]
        );
    }

    #[test]
    fn infeasible_plan_keeps_prior() {
        let mut s = steady_state(1000.0, 0.1);
        let before = s.plan;
        let err = control_step(&mut s, &window(10_000, 0.2, 10_000), |p| p.warm_containers <= 15).unwrap_err();
        assert_eq!(err, EnforcementError::InfeasiblePlan { warm_containers: 20 });
        assert_eq!(s.plan, before);
    }

    #[test]
    fn observed_rate_above_guarantee_scales_out() {
        let mut s = steady_state(100.0, 0.1);
        let a = control_step(&mut s, &window(3000, 0.1, 3000), |_| true).unwrap().unwrap();
        assert_eq!(a.to, 3);
        assert_eq!(a.reason, ChangeReason::DemandChange);
    }
}

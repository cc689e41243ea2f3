use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng::SimRng;
use super::time::secs;
use super::{SimError, SimTime};

/// Which containers the injector kills.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureTargets {
    /// Invoker shards, which also host the object replicas.
    #[default]
    Invokers,
    /// Function containers only.
    Functions,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureConfig {
    /// Mean up-time between a recovery and the next kill.
    #[serde(with = "super::serde_secs")]
    pub mtbf: Duration,
    #[serde(with = "super::serde_secs", default = "default_jitter")]
    pub jitter_stddev: Duration,
    /// Kill to ready again, cold start included.
    #[serde(with = "super::serde_secs", default = "default_recovery")]
    pub recovery_time: Duration,
    #[serde(default)]
    pub targets: FailureTargets,
}

fn default_jitter() -> Duration {
    Duration::from_secs(10)
}

fn default_recovery() -> Duration {
    Duration::from_millis(10_760)
}

impl Default for FailureConfig {
    fn default() -> Self {
        FailureConfig {
            mtbf: Duration::from_secs(180),
            jitter_stddev: default_jitter(),
            recovery_time: default_recovery(),
            targets: FailureTargets::Invokers,
        }
    }
}

impl FailureConfig {
    /// Long-run fraction of time a target is up.
    pub fn stability(&self) -> f64 {
        let up = self.mtbf.as_secs_f64();
        up / (up + self.recovery_time.as_secs_f64())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.mtbf.is_zero() || self.recovery_time.is_zero() {
            return Err(SimError::InvalidConfig("mtbf and recovery_time must be positive".into()));
        }
        Ok(())
    }
}

/// One kill of one target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureCycle {
    pub kill: SimTime,
    pub recovered: SimTime,
}

/// Per-target kill schedule. The first kill lands uniformly within one mtbf
/// of `start` so targets do not fail in lockstep; later kills follow each
/// recovery after a gap of `mtbf + N(0, jitter)`, floored at zero.
#[derive(Debug, Clone)]
pub struct FailureSchedule {
    config: FailureConfig,
    rng: SimRng,
    next_kill: SimTime,
    jitter: Option<Normal<f64>>,
}

impl FailureSchedule {
    pub fn new(config: FailureConfig, mut rng: SimRng, start: SimTime) -> Self {
        let phase = rng.random::<f64>() * config.mtbf.as_secs_f64();
        let jitter = (!config.jitter_stddev.is_zero())
            .then(|| Normal::new(0.0, config.jitter_stddev.as_secs_f64()).expect("finite stddev"));
        FailureSchedule { config, rng, next_kill: start + secs(phase), jitter }
    }

    /// A schedule whose kills are exactly `mtbf + recovery` apart, starting at `first`.
    pub fn periodic(config: FailureConfig, rng: SimRng, first: SimTime) -> Self {
        let mut s = Self::new(FailureConfig { jitter_stddev: Duration::ZERO, ..config }, rng, first);
        s.next_kill = first;
        s
    }

    pub fn next_kill(&self) -> SimTime {
        self.next_kill
    }

    pub fn config(&self) -> &FailureConfig {
        &self.config
    }

    fn gap(&mut self) -> Duration {
        let mean = self.config.mtbf.as_secs_f64();
        match &self.jitter {
            Some(n) => secs((mean + n.sample(&mut self.rng)).max(0.0)),
            None => self.config.mtbf,
        }
    }

    /// Consumes the pending kill and schedules the one after it.
    pub fn advance(&mut self) -> FailureCycle {
        let kill = self.next_kill;
        let recovered = kill + self.config.recovery_time;
        self.next_kill = recovered + self.gap();
        FailureCycle { kill, recovered }
    }
}

impl Iterator for FailureSchedule {
    type Item = FailureCycle;

    fn next(&mut self) -> Option<FailureCycle> {
        Some(self.advance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::cluster::{Cluster, ClusterConfig, FunctionRef, Millicores, SiteId};
    use crate::sim::queue::EventQueue;
    use crate::sim::rng::RandomSource;

    #[test]
    fn stability_of_defaults() {
        assert!((FailureConfig::default().stability() - 0.9436).abs() < 5e-5);
    }

    #[test]
    fn zero_jitter_is_periodic() {
        let cfg = FailureConfig { jitter_stddev: Duration::ZERO, ..Default::default() };
        let s = FailureSchedule::new(cfg, RandomSource::new(1).stream("failure", 0), SimTime::ZERO);
        let kills: Vec<_> = s.take(50).map(|c| c.kill).collect();
        let period = cfg.mtbf + cfg.recovery_time;
        for w in kills.windows(2) {
            assert_eq!(w[1] - w[0], period);
        }
    }

    #[derive(Debug)]
    enum Ev {
        Kill,
        Restart,
        Ready(u32),
    }

    /// Drives a real container through 10^4 kill/recover cycles and measures
    /// the fraction of time it is ready.
    #[test]
    fn uptime_converges_to_stability() {
        let cfg = FailureConfig::default();
        let mut cluster = Cluster::new(ClusterConfig::default());
        let node = cluster.add_node("n0", SiteId(0), Millicores::from_cores(1.0));
        let (id, ready_at) = cluster.start_container(FunctionRef::new("C", "f"), node, Millicores(1000), 1, SimTime::ZERO).unwrap();
        let cold = cluster.config.cold_start_delay;
        let mut q = EventQueue::new();
        q.schedule(Ev::Ready(0), ready_at).unwrap();
        let mut schedule = FailureSchedule::new(cfg, RandomSource::new(42).stream("failure", 0), ready_at);

        let (mut cycles, mut down_since, mut downtime) = (0u32, SimTime::ZERO, Duration::ZERO);
        let mut end = SimTime::ZERO;
        while let Some((now, ev)) = q.pop() {
            match ev {
                Ev::Kill => {
                    let c = schedule.advance();
                    cluster.kill(id).unwrap();
                    down_since = now;
                    q.schedule(Ev::Restart, c.recovered - cold).unwrap();
                }
                Ev::Restart => {
                    let inc = cluster.restart(id, now, now + cold).unwrap();
                    q.schedule_in(Ev::Ready(inc), cold);
                }
                Ev::Ready(inc) => {
                    assert!(cluster.mark_ready(id, inc));
                    if cycles > 0 {
                        downtime += now - down_since;
                    }
                    cycles += 1;
                    if cycles > 10_000 {
                        end = now;
                        break;
                    }
                    q.schedule(Ev::Kill, schedule.next_kill()).unwrap();
                }
            }
        }
        let span = (end - ready_at).as_secs_f64();
        let uptime = 1.0 - downtime.as_secs_f64() / span;
        assert!((uptime - 0.9436).abs() < 0.005, "uptime {uptime}");
    }

    #[test]
    fn unregistered_container_is_never_killed() {
        // Schedules are only built for registered targets; a container
        // without one keeps running however long the simulation lasts.
        let mut cluster = Cluster::new(ClusterConfig::default());
        let node = cluster.add_node("n0", SiteId(0), Millicores::from_cores(2.0));
        let f = FunctionRef::new("C", "f");
        let (victim, _) = cluster.start_container(f.clone(), node, Millicores(1000), 1, SimTime::ZERO).unwrap();
        let (bystander, _) = cluster.start_container(f, node, Millicores(1000), 1, SimTime::ZERO).unwrap();
        cluster.mark_ready(victim, 0);
        cluster.mark_ready(bystander, 0);
        let schedule = FailureSchedule::new(FailureConfig::default(), RandomSource::new(3).stream("failure", victim.0 as u64), SimTime::ZERO);
        for cycle in schedule.take(100) {
            assert!(cycle.kill < SimTime::MAX);
            cluster.kill(victim).unwrap();
        }
        assert_eq!(cluster.container(bystander).unwrap().incarnation(), 0);
        assert!(cluster.container(bystander).unwrap().is_ready());
    }
}

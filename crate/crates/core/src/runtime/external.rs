use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::sim::{SimTime, SiteId};

/// Shared document database used by the baseline policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExternalDbConfig {
    /// Operations served in parallel.
    pub servers: u32,
    /// Service time of one read or write.
    #[serde(with = "crate::sim::serde_secs")]
    pub op_time: Duration,
    /// Coefficient of variation of the operation time; 0 is deterministic.
    pub op_cv: f64,
    pub site: SiteId,
}

impl Default for ExternalDbConfig {
    fn default() -> Self {
        ExternalDbConfig { servers: 1, op_time: Duration::from_micros(51), op_cv: 2.0, site: SiteId(0) }
    }
}

/// FIFO multi-server queue with deterministic service. Requests must be
/// offered in nondecreasing arrival order for the FIFO order to be exact.
#[derive(Debug, Clone)]
pub struct ExternalDb {
    pub config: ExternalDbConfig,
    free_at: BinaryHeap<Reverse<SimTime>>,
    op_time: Option<LogNormal<f64>>,
    served: u64,
}

impl ExternalDb {
    pub fn new(config: ExternalDbConfig) -> Self {
        let free_at = (0..config.servers.max(1)).map(|_| Reverse(SimTime::ZERO)).collect();
        let op_time = (config.op_cv > 0.0).then(|| LogNormal::from_mean_cv(config.op_time.as_secs_f64(), config.op_cv).expect("valid op time"));
        ExternalDb { config, free_at, op_time, served: 0 }
    }

    /// Completion time of one operation arriving at `arrive`.
    pub fn serve(&mut self, arrive: SimTime, rng: &mut impl Rng) -> SimTime {
        let op = match &self.op_time {
            Some(d) => Duration::from_secs_f64(d.sample(rng)),
            None => self.config.op_time,
        };
        let Reverse(free) = self.free_at.pop().expect("at least one server");
        let done = free.max(arrive) + op;
        self.free_at.push(Reverse(done));
        self.served += 1;
        done
    }

    pub fn served(&self) -> u64 {
        self.served
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn queues_beyond_server_count() {
        let mut db = ExternalDb::new(ExternalDbConfig { servers: 2, op_time: Duration::from_millis(1), op_cv: 0.0, site: SiteId(0) });
        let mut rng = crate::sim::SimRng::seed_from_u64(0);
        let t = SimTime::from_secs(1);
        let done: Vec<_> = (0..4).map(|_| db.serve(t, &mut rng)).collect();
        let ms = |n| t + Duration::from_millis(n);
        assert_eq!(done, [ms(1), ms(1), ms(2), ms(2)]);
        assert_eq!(db.serve(SimTime::from_secs(5), &mut rng), SimTime::from_secs(5) + Duration::from_millis(1));
    }

    #[test]
    fn variable_op_time_keeps_its_mean() {
        let mut db = ExternalDb::new(ExternalDbConfig { servers: 1, op_time: Duration::from_micros(50), op_cv: 2.0, site: SiteId(0) });
        let mut rng = crate::sim::SimRng::seed_from_u64(9);
        let n = 200_000;
        let mut last = SimTime::ZERO;
        for _ in 0..n {
            last = db.serve(SimTime::ZERO, &mut rng);
        }
        let mean_us = last.as_secs_f64() * 1e6 / n as f64;
        assert!((mean_us - 50.0).abs() < 2.5, "{mean_us}");
        assert_eq!(db.served(), n);
    }
}

use serde::{Deserialize, Serialize};

/// Phase-one update of hand tuning: scale pods by target over measured.
pub fn manual_refinement_step(current_pods: u32, measured: f64, target: f64) -> u32 {
    if measured <= 0.0 {
        return current_pods.saturating_mul(2).max(1);
    }
    ((target / measured) * current_pods as f64 - 1e-9).ceil().max(1.0) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefinementPhase {
    /// Scale up until the target is met.
    ScaleUp,
    /// Remove pods one at a time until the target is missed.
    TrimPods,
    /// Double per-pod concurrency while halving pods.
    RaiseConcurrency,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deployment {
    pub pods: u32,
    pub concurrency: u32,
}

/// A developer refining a deployment by hand, one measured round at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualRefinement {
    pub target: f64,
    /// Fraction of the target that counts as meeting it.
    pub tolerance: f64,
    pub phase: RefinementPhase,
    pub current: Deployment,
    pub best: Option<Deployment>,
    pub rounds: u32,
    pub scale_up_rounds: u32,
    pub max_concurrency: u32,
}

impl ManualRefinement {
    pub fn new(target: f64, tolerance: f64, start: Deployment) -> Self {
        ManualRefinement {
            target,
            tolerance,
            phase: RefinementPhase::ScaleUp,
            current: start,
            best: None,
            rounds: 0,
            scale_up_rounds: 0,
            max_concurrency: 64,
        }
    }

    fn meets(&self, measured: f64) -> bool {
        measured >= self.target * self.tolerance
    }

    /// Feeds the throughput measured for `self.current` and returns the next
    /// deployment to try, or `None` when refinement is finished.
    pub fn observe(&mut self, measured: f64) -> Option<Deployment> {
        self.rounds += 1;
        let ok = self.meets(measured);
        let cur = self.current;
        match self.phase {
            RefinementPhase::ScaleUp => {
                self.scale_up_rounds += 1;
                if ok {
                    self.best = Some(cur);
                    self.phase = RefinementPhase::TrimPods;
                    return self.trim();
                }
                let next = manual_refinement_step(cur.pods, measured, self.target).max(cur.pods + 1);
                self.current = Deployment { pods: next, ..cur };
            }
            RefinementPhase::TrimPods => {
                if ok {
                    self.best = Some(cur);
                    return self.trim();
                }
                return self.raise();
            }
            RefinementPhase::RaiseConcurrency => {
                if ok {
                    self.best = Some(cur);
                    return self.raise();
                }
                self.phase = RefinementPhase::Done;
                return None;
            }
            RefinementPhase::Done => return None,
        }
        Some(self.current)
    }

    fn trim(&mut self) -> Option<Deployment> {
        let best = self.best.expect("trim follows a passing round");
        if best.pods <= 1 {
            return self.raise();
        }
        self.current = Deployment { pods: best.pods - 1, ..best };
        Some(self.current)
    }

    fn raise(&mut self) -> Option<Deployment> {
        self.phase = RefinementPhase::RaiseConcurrency;
        let best = self.best.expect("raise follows a passing round");
        if best.pods <= 1 || best.concurrency * 2 > self.max_concurrency {
            self.phase = RefinementPhase::Done;
            return None;
        }
        self.current = Deployment { pods: best.pods.div_ceil(2), concurrency: best.concurrency * 2 };
        Some(self.current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        assert_eq!(manual_refinement_step(1, 2500.0, 10_000.0), 4);
        assert_eq!(manual_refinement_step(7, 10_000.0, 10_000.0), 7);
    }

    #[test]
    fn linear_system_converges_quickly() {
        let per_pod = 2500.0;
        let mut r = ManualRefinement::new(10_000.0, 0.95, Deployment { pods: 1, concurrency: 1 });
        while let Some(d) = r.observe(per_pod * r.current.pods as f64 * r.current.concurrency as f64) {
            assert!(d.pods >= 1);
            assert!(r.rounds < 50);
        }
        assert_eq!(r.scale_up_rounds, 2);
        let best = r.best.unwrap();
        assert!(per_pod * (best.pods * best.concurrency) as f64 >= 9500.0);
    }

    #[test]
    fn sublinear_system_needs_more_rounds() {
        let x = |p: u32| 2500.0 * (p as f64).sqrt();
        let mut r = ManualRefinement::new(10_000.0, 0.95, Deployment { pods: 1, concurrency: 1 });
        while r.phase == RefinementPhase::ScaleUp {
            r.observe(x(r.current.pods));
        }
        assert!(r.scale_up_rounds >= 4, "{}", r.scale_up_rounds);
    }
}

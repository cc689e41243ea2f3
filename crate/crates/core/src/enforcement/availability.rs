use serde::{Deserialize, Serialize};

use super::EnforcementError;

/// Slack for the ceiling so that exact boundaries such as (0.99, 0.9), where
/// the quotient is mathematically 2, do not round up through float error.
const CEIL_SLACK: f64 = 1e-9;

/// Smallest replica count N with `1 - (1 - p)^N >= a`, at least 1.
pub fn required_replicas(a: f64, p: f64) -> Result<u32, EnforcementError> {
    for (name, v) in [("target availability", a), ("resource stability", p)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(EnforcementError::Domain(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let n = ((1.0 - a).ln() / (1.0 - p).ln() - CEIL_SLACK).ceil();
    Ok(n.max(1.0) as u32)
}

/// Availability of a group of `n` independent replicas, each up with probability `p`.
pub fn group_availability(p: f64, n: u32) -> f64 {
    1.0 - (1.0 - p).powi(n as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityPlan {
    pub target: f64,
    pub stability: f64,
    pub n_replicas: u32,
}

impl AvailabilityPlan {
    pub fn new(target: f64, stability: f64) -> Result<Self, EnforcementError> {
        Ok(AvailabilityPlan { target, stability, n_replicas: required_replicas(target, stability)? })
    }

    /// Expected availability of the planned group.
    pub fn expected(&self) -> f64 {
        group_availability(self.stability, self.n_replicas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(required_replicas(0.99, 0.9436).unwrap(), 2);
        assert_eq!(required_replicas(0.99999, 0.9436).unwrap(), 5);
        assert_eq!(required_replicas(0.5, 0.9436).unwrap(), 1);
        assert_eq!(required_replicas(0.999, 0.9436).unwrap(), 3);
    }

    #[test]
    fn exact_boundaries() {
        assert_eq!(required_replicas(0.9, 0.9).unwrap(), 1);
        assert_eq!(required_replicas(0.99, 0.9).unwrap(), 2);
        assert_eq!(required_replicas(0.9999, 0.9).unwrap(), 4);
        assert_eq!(required_replicas(0.9999, 0.99).unwrap(), 2);
    }

    #[test]
    fn domain() {
        for (a, p) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (f64::NAN, 0.5)] {
            assert!(matches!(required_replicas(a, p), Err(EnforcementError::Domain(_))));
        }
    }

    #[test]
    fn plan_meets_target_minimally() {
        let plan = AvailabilityPlan::new(0.999, 0.9436).unwrap();
        assert!(plan.expected() >= 0.999);
        assert!(group_availability(0.9436, plan.n_replicas - 1) < 0.999);
    }
}

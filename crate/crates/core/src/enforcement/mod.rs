//! Requirement controllers: replica planning for availability, warm-pool
//! sizing and its adaptation loop for throughput, and the baseline policies
//! used for comparison.

pub mod availability;
pub mod knative;
pub mod refinement;
pub mod throughput;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use availability::{group_availability, required_replicas, AvailabilityPlan};
pub use knative::{autoscale_knative_like, KnativeConfig, KnativeScaler};
pub use refinement::{manual_refinement_step, Deployment, ManualRefinement, RefinementPhase};
pub use throughput::{
    control_step, estimate_capacity, plan_throughput, split_by_share, CapacityEstimator, ChangeReason, ControllerConfig,
    ControllerState, MetricWindow, Phase, ReconfigurationAction, ThroughputPlan,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnforcementError {
    #[error("{0}")]
    Domain(String),
    #[error("cluster cannot host {warm_containers} warm containers; keeping the previous plan")]
    InfeasiblePlan { warm_containers: u32 },
}

/// How a deployment is sized and where its state lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Requirement-driven: replicated in-memory state, locality routing,
    /// adaptive warm pools.
    Oprc,
    /// Concurrency autoscaler, no per-pod limit, external database.
    #[serde(rename = "knative")]
    KnativeLike,
    /// Concurrency autoscaler with a per-pod limit.
    #[serde(rename = "knative-con")]
    KnativeConcurrencyCapped,
    /// Rate-guarantee warm pools in front of the external database.
    #[serde(rename = "knative-rts")]
    KnativeRts,
    /// A fixed pod count chosen by hand.
    #[serde(rename = "manual")]
    ManualRefinement,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Oprc,
        PolicyKind::KnativeLike,
        PolicyKind::KnativeConcurrencyCapped,
        PolicyKind::KnativeRts,
        PolicyKind::ManualRefinement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Oprc => "oprc",
            PolicyKind::KnativeLike => "knative",
            PolicyKind::KnativeConcurrencyCapped => "knative-con",
            PolicyKind::KnativeRts => "knative-rts",
            PolicyKind::ManualRefinement => "manual",
        }
    }

    /// Whether object state is read and written through the external database.
    pub fn uses_external_store(self) -> bool {
        !matches!(self, PolicyKind::Oprc)
    }

    /// Whether the warm pool follows the rate-guarantee controller.
    pub fn uses_rate_controller(self) -> bool {
        matches!(self, PolicyKind::Oprc | PolicyKind::KnativeRts)
    }

    pub fn uses_knative_scaler(self) -> bool {
        matches!(self, PolicyKind::KnativeLike | PolicyKind::KnativeConcurrencyCapped)
    }

    /// Whether an extra warm-up round of load precedes measurement.
    pub fn has_warmup_round(self) -> bool {
        matches!(self, PolicyKind::Oprc)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected one of oprc, knative, knative-con, knative-rts, manual)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.as_str().parse::<PolicyKind>().unwrap(), p);
            assert_eq!(serde_json::to_value(p).unwrap(), p.as_str());
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}

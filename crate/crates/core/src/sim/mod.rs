//! Discrete-event substrate: clock and queue, nodes and containers, network
//! tiers, failure injection and seeded randomness.

pub mod cluster;
pub mod failure;
pub mod network;
pub mod queue;
pub mod rng;
pub mod time;

pub use cluster::{
    contention_factor, Cluster, ClusterConfig, Completion, Container, ContainerId, ContainerState, FunctionRef,
    Millicores, Node, NodeId, SiteId, Work,
};
pub use failure::{FailureConfig, FailureCycle, FailureSchedule, FailureTargets};
pub use network::{LatencyDist, Location, NetworkModel, Tier};
pub use queue::{EventHandle, EventQueue};
pub use rng::{RandomSource, SimRng};
pub use time::{secs, SimTime};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("cannot schedule at {at} ns, clock is already at {now} ns")]
    PastTimestamp { at: SimTime, now: SimTime },
    #[error("node {node} has {} free cores, {} requested", free.as_cores(), requested.as_cores())]
    InsufficientCapacity { node: NodeId, requested: Millicores, free: Millicores },
    #[error("container {0} is not warm")]
    ContainerCold(ContainerId),
    #[error("container {container} already runs {limit} invocations")]
    ConcurrencyExceeded { container: ContainerId, limit: u32 },
    #[error("container {0} still has work in flight")]
    ContainerBusy(ContainerId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown container {0}")]
    UnknownContainer(ContainerId),
    #[error("site {} has no entry in the latency matrix", .0 .0)]
    UnknownTier(SiteId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Serde adapter: `Duration` as fractional seconds.
pub mod serde_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(serde::de::Error::custom(format!("duration must be a non-negative number of seconds, got {v}")));
        }
        Ok(super::time::secs(v))
    }
}

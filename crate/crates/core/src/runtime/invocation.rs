use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::{NodeId, SimTime, Tier};
use crate::store::ObjectId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRequest {
    pub class: String,
    pub object_id: ObjectId,
    pub function: String,
    /// Attribute overrides the method writes; keys must be structured keySpecs.
    #[serde(default)]
    pub args: Value,
    /// Where the client sits relative to the platform. The load balancer is
    /// a pass-through, so this is informational.
    #[serde(default = "default_origin")]
    pub origin: Tier,
}

fn default_origin() -> Tier {
    Tier::Datacenter
}

impl InvocationRequest {
    pub fn new(class: impl Into<String>, object_id: ObjectId, function: impl Into<String>) -> Self {
        InvocationRequest { class: class.into(), object_id, function: function.into(), args: Value::Null, origin: Tier::Datacenter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Failed,
    Rejected,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Completed => "completed",
            Status::Failed => "failed",
            Status::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailReason {
    /// The function container died with the invocation on it.
    ContainerKilled,
    /// The invoker shard coordinating the invocation died before commit.
    PrimaryLost,
    NoPrimary,
    AllReplicasDown,
    ObjectLost,
    StaleRevision,
    QueueTimeout,
    QueueFull,
    /// The class was redeployed with a different store layout mid-flight.
    Redeployed,
}

impl FailReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailReason::ContainerKilled => "container-killed",
            FailReason::PrimaryLost => "primary-lost",
            FailReason::NoPrimary => "no-primary",
            FailReason::AllReplicasDown => "all-replicas-down",
            FailReason::ObjectLost => "object-lost",
            FailReason::StaleRevision => "stale-revision",
            FailReason::QueueTimeout => "queue-timeout",
            FailReason::QueueFull => "queue-full",
            FailReason::Redeployed => "redeployed",
        }
    }
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the time of one invocation went. The parts sum to `end - start`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub queue: Duration,
    pub cold_start: Duration,
    pub data_access: Duration,
    pub execution: Duration,
    pub commit: Duration,
}

impl Breakdown {
    pub fn total(&self) -> Duration {
        self.queue + self.cold_start + self.data_access + self.execution + self.commit
    }

    /// Everything except execution.
    pub fn overhead(&self) -> Duration {
        self.total() - self.execution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvocationOutcome {
    pub id: u64,
    pub class: u16,
    pub function: u16,
    pub object: ObjectId,
    pub status: Status,
    pub start: SimTime,
    pub end: SimTime,
    pub breakdown: Breakdown,
    /// Revision committed by this invocation.
    pub revision: Option<u64>,
    /// Node the method ran on.
    pub node: Option<NodeId>,
    /// Node of the primary replica when the task was dispatched.
    pub primary_node: Option<NodeId>,
    /// Tier crossed to fetch state.
    pub data_tier: Option<Tier>,
    pub reason: Option<FailReason>,
}

impl InvocationOutcome {
    pub fn latency(&self) -> Duration {
        self.end - self.start
    }
}

/// Periodic snapshot of resource use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceSample {
    /// End of the one-second interval.
    pub at: SimTime,
    pub warm_containers: u32,
    pub replicas: u32,
    /// Mean cores reserved over the interval.
    pub cores_allocated: f64,
}

/// Receives every terminal outcome and resource sample.
pub trait OutcomeSink {
    fn record(&mut self, outcome: &InvocationOutcome);
    fn sample(&mut self, _sample: &ResourceSample) {}
}

/// Keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct OutcomeLog {
    pub outcomes: Vec<InvocationOutcome>,
    pub samples: Vec<ResourceSample>,
}

impl OutcomeSink for OutcomeLog {
    fn record(&mut self, outcome: &InvocationOutcome) {
        self.outcomes.push(outcome.clone());
    }

    fn sample(&mut self, sample: &ResourceSample) {
        self.samples.push(*sample);
    }
}

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::time::scale;
use super::{SimError, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContainerId(pub u32);

/// Network site a node lives in (a datacenter, or a region across the internet).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for ContainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// CPU in thousandths of a core; integral so capacity checks are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Millicores(pub u32);

impl Millicores {
    pub fn from_cores(cores: f64) -> Self {
        Millicores((cores * 1000.0).round().max(0.0) as u32)
    }

    pub fn as_cores(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContainerState {
    Cold,
    Warming,
    Warm,
    Busy,
}

/// The method a container serves. Platform-internal containers (invoker
/// shards) use a reserved function name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionRef {
    pub class: String,
    pub function: String,
}

impl FunctionRef {
    pub fn new(class: impl Into<String>, function: impl Into<String>) -> Self {
        FunctionRef { class: class.into(), function: function.into() }
    }
}

impl fmt::Display for FunctionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.function)
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub site: SiteId,
    pub cpu_capacity: Millicores,
    allocated: u32,
    containers: Vec<ContainerId>,
}

impl Node {
    pub fn allocated(&self) -> Millicores {
        Millicores(self.allocated)
    }

    pub fn free(&self) -> Millicores {
        Millicores(self.cpu_capacity.0 - self.allocated)
    }

    pub fn containers(&self) -> &[ContainerId] {
        &self.containers
    }
}

#[derive(Debug, Clone)]
pub struct Container {
    pub id: ContainerId,
    pub node: NodeId,
    pub function: FunctionRef,
    pub cpu: Millicores,
    pub concurrency_limit: u32,
    pub created_at: SimTime,
    state: ContainerState,
    in_flight: u32,
    /// Bumped on every kill; completions carrying an older value were dropped.
    incarnation: u32,
    /// Start of the current warming phase.
    warming_since: SimTime,
    ready_at: SimTime,
}

impl Container {
    pub fn state(&self) -> ContainerState {
        self.state
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn incarnation(&self) -> u32 {
        self.incarnation
    }

    /// When the current warming phase ends (or ended).
    pub fn ready_at(&self) -> SimTime {
        self.ready_at
    }

    pub fn warming_since(&self) -> SimTime {
        self.warming_since
    }

    pub fn is_ready(&self) -> bool {
        matches!(self.state, ContainerState::Warm | ContainerState::Busy)
    }

    pub fn has_free_slot(&self) -> bool {
        self.is_ready() && self.in_flight < self.concurrency_limit
    }
}

/// What a container is asked to run.
#[derive(Debug, Clone, Copy)]
pub struct Work {
    /// Service time with no contention.
    pub base_service: Duration,
    /// Time the slot is held before execution starts (input transfer).
    pub start_delay: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub container: ContainerId,
    pub incarnation: u32,
    pub service: Duration,
    pub at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    #[serde(with = "super::serde_secs")]
    pub cold_start_delay: Duration,
    pub threads_per_core: u32,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { cold_start_delay: Duration::from_secs(1), threads_per_core: 1 }
    }
}

/// Contention multiplier: one when in-flight work fits the container's hardware
/// threads, growing linearly with oversubscription beyond that.
pub fn contention_factor(in_flight: u32, cpu: Millicores, threads_per_core: u32) -> f64 {
    let threads = cpu.as_cores() * threads_per_core as f64;
    if threads <= 0.0 {
        return in_flight.max(1) as f64;
    }
    (in_flight as f64 / threads).max(1.0)
}

#[derive(Debug, Clone, Default)]
struct CostMeter {
    allocated: u64,
    since: SimTime,
    milli_ns: u128,
}

impl CostMeter {
    fn change(&mut self, now: SimTime, delta: i64) {
        self.milli_ns += self.allocated as u128 * (now - self.since).as_nanos();
        self.since = now.max(self.since);
        self.allocated = (self.allocated as i64 + delta) as u64;
    }

    fn core_seconds(&self, now: SimTime) -> f64 {
        let total = self.milli_ns + self.allocated as u128 * (now - self.since).as_nanos();
        total as f64 / 1e12
    }
}

/// Simulated nodes and the containers placed on them. Pure state: callers own
/// the event queue and schedule the readiness and completion instants this
/// type hands back.
#[derive(Debug, Clone, Default)]
pub struct Cluster {
    pub config: ClusterConfig,
    nodes: Vec<Node>,
    containers: Vec<Option<Container>>,
    cost: CostMeter,
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Self {
        Cluster { config, ..Default::default() }
    }

    pub fn add_node(&mut self, name: impl Into<String>, site: SiteId, cpu_capacity: Millicores) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, name: name.into(), site, cpu_capacity, allocated: 0, containers: Vec::new() });
        id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, SimError> {
        self.nodes.get(id.0 as usize).ok_or(SimError::UnknownNode(id))
    }

    pub fn container(&self, id: ContainerId) -> Result<&Container, SimError> {
        self.containers.get(id.0 as usize).and_then(Option::as_ref).ok_or(SimError::UnknownContainer(id))
    }

    fn container_mut(&mut self, id: ContainerId) -> Result<&mut Container, SimError> {
        self.containers.get_mut(id.0 as usize).and_then(Option::as_mut).ok_or(SimError::UnknownContainer(id))
    }

    pub fn containers(&self) -> impl Iterator<Item = &Container> {
        self.containers.iter().flatten()
    }

    pub fn total_capacity(&self) -> Millicores {
        Millicores(self.nodes.iter().map(|n| n.cpu_capacity.0).sum())
    }

    pub fn total_allocated(&self) -> Millicores {
        Millicores(self.nodes.iter().map(|n| n.allocated).sum())
    }

    /// Reserves `cpu` on `node` and begins a cold start.
    /// Returns the container and the instant it becomes warm.
    pub fn start_container(
        &mut self,
        function: FunctionRef,
        node: NodeId,
        cpu: Millicores,
        concurrency_limit: u32,
        now: SimTime,
    ) -> Result<(ContainerId, SimTime), SimError> {
        let n = self.nodes.get_mut(node.0 as usize).ok_or(SimError::UnknownNode(node))?;
        if n.free() < cpu {
            return Err(SimError::InsufficientCapacity { node, requested: cpu, free: n.free() });
        }
        n.allocated += cpu.0;
        let id = ContainerId(self.containers.len() as u32);
        n.containers.push(id);
        let ready_at = now + self.config.cold_start_delay;
        self.containers.push(Some(Container {
            id,
            node,
            function,
            cpu,
            concurrency_limit: concurrency_limit.max(1),
            created_at: now,
            state: ContainerState::Warming,
            in_flight: 0,
            incarnation: 0,
            warming_since: now,
            ready_at,
        }));
        self.cost.change(now, cpu.0 as i64);
        Ok((id, ready_at))
    }

    /// Finishes a cold start. Stale calls (the container was killed meanwhile)
    /// return false and change nothing.
    pub fn mark_ready(&mut self, id: ContainerId, incarnation: u32) -> bool {
        match self.container_mut(id) {
            Ok(c) if c.incarnation == incarnation && c.state == ContainerState::Warming => {
                c.state = ContainerState::Warm;
                true
            }
            _ => false,
        }
    }

    /// Admits one unit of work and returns when it completes.
    pub fn execute(&mut self, id: ContainerId, work: &Work, now: SimTime) -> Result<Completion, SimError> {
        let threads = self.config.threads_per_core;
        let c = self.container_mut(id)?;
        if !c.is_ready() {
            return Err(SimError::ContainerCold(id));
        }
        if c.in_flight >= c.concurrency_limit {
            return Err(SimError::ConcurrencyExceeded { container: id, limit: c.concurrency_limit });
        }
        c.in_flight += 1;
        c.state = ContainerState::Busy;
        let service = scale(work.base_service, contention_factor(c.in_flight, c.cpu, threads));
        Ok(Completion { container: id, incarnation: c.incarnation, service, at: now + work.start_delay + service })
    }

    /// Releases the slot held by a completion. False if the work was dropped
    /// by a kill in between.
    pub fn complete(&mut self, completion: &Completion) -> bool {
        match self.container_mut(completion.container) {
            Ok(c) if c.incarnation == completion.incarnation => {
                debug_assert!(c.in_flight > 0);
                c.in_flight -= 1;
                if c.in_flight == 0 {
                    c.state = ContainerState::Warm;
                }
                true
            }
            _ => false,
        }
    }

    /// Fails the container: in-flight work is dropped and it goes cold. The
    /// CPU reservation is kept for the restart. Returns the dropped count.
    pub fn kill(&mut self, id: ContainerId) -> Result<u32, SimError> {
        let c = self.container_mut(id)?;
        let dropped = c.in_flight;
        c.in_flight = 0;
        c.state = ContainerState::Cold;
        c.incarnation += 1;
        Ok(dropped)
    }

    /// Brings a cold container back through a fresh cold start that completes
    /// at `ready_at`. Returns the incarnation to pass to [`Cluster::mark_ready`].
    pub fn restart(&mut self, id: ContainerId, now: SimTime, ready_at: SimTime) -> Result<u32, SimError> {
        let c = self.container_mut(id)?;
        if c.state != ContainerState::Cold {
            return Ok(c.incarnation);
        }
        c.state = ContainerState::Warming;
        c.warming_since = now;
        c.ready_at = ready_at.max(now);
        Ok(c.incarnation)
    }

    /// Removes an idle container and releases its CPU.
    pub fn stop(&mut self, id: ContainerId, now: SimTime) -> Result<(), SimError> {
        let c = self.container(id)?;
        if c.in_flight > 0 {
            return Err(SimError::ContainerBusy(id));
        }
        let (node, cpu) = (c.node, c.cpu);
        self.containers[id.0 as usize] = None;
        let n = &mut self.nodes[node.0 as usize];
        n.allocated -= cpu.0;
        n.containers.retain(|&x| x != id);
        self.cost.change(now, -(cpu.0 as i64));
        Ok(())
    }

    /// Integral of reserved cores over time, in core-seconds.
    pub fn core_seconds(&self, now: SimTime) -> f64 {
        self.cost.core_seconds(now)
    }

    /// Checks the state invariants; used as an audit hook after transitions.
    pub fn audit(&self) -> Result<(), String> {
        for n in &self.nodes {
            let sum: u32 = n.containers.iter().map(|&c| self.containers[c.0 as usize].as_ref().map_or(0, |c| c.cpu.0)).sum();
            if sum != n.allocated {
                return Err(format!("{}: allocation ledger {} != resident sum {}", n.id, n.allocated, sum));
            }
            if n.allocated > n.cpu_capacity.0 {
                return Err(format!("{}: allocated {} exceeds capacity {}", n.id, n.allocated, n.cpu_capacity.0));
            }
        }
        for c in self.containers() {
            if c.in_flight > c.concurrency_limit {
                return Err(format!("{}: in_flight {} > limit {}", c.id, c.in_flight, c.concurrency_limit));
            }
            if (c.state == ContainerState::Busy) != (c.in_flight >= 1) {
                return Err(format!("{}: state {:?} with {} in flight", c.id, c.state, c.in_flight));
            }
        }
        Ok(())
    }
}

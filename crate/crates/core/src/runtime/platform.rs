use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::enforcement::{
    control_step, required_replicas, split_by_share, CapacityEstimator, ControllerConfig, ControllerState, EnforcementError,
    KnativeConfig, KnativeScaler, MetricWindow, PolicyKind,
};
use crate::hash::StableHasher;
use crate::package::{load_classes, KeyKind, Locality, ResolvedClass, WorkloadProfile, Archetype};
use crate::sim::{
    Cluster, ClusterConfig, Completion, ContainerId, EventQueue, FailureConfig, FailureSchedule, FailureTargets, FunctionRef,
    Location, Millicores, NetworkModel, NodeId, RandomSource, SimRng, SimTime, SiteId, Tier, Work,
};
use crate::store::{BlobRef, ObjectId, ObjectRecord, ObjectStore, ShardId, StoreConfig, StoreError, StoreEvent};

use super::external::{ExternalDb, ExternalDbConfig};
use super::invocation::{Breakdown, FailReason, InvocationOutcome, InvocationRequest, OutcomeLog, OutcomeSink, ResourceSample, Status};
use super::template::{default_registry, select_template, ClassRuntimeTemplate};
use super::RuntimeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default)]
    pub site: SiteId,
    pub cores: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatformConfig {
    pub seed: u64,
    pub nodes: Vec<NodeSpec>,
    pub cluster: ClusterConfig,
    pub network: NetworkModel,
    pub failures: Option<FailureConfig>,
    /// Per-replica stability used for replica planning when no failure model is set.
    pub resource_stability: f64,
    #[serde(with = "crate::sim::serde_secs")]
    pub queue_timeout: Duration,
    #[serde(with = "crate::sim::serde_secs")]
    pub election_window: Duration,
    /// Time for the primary to apply a commit.
    #[serde(with = "crate::sim::serde_secs")]
    pub commit_time: Duration,
    pub vnodes: u32,
    /// Shards per class; 0 means one per node. Never fewer than the replica count.
    pub shards_per_class: u32,
    pub shard_cores: f64,
    pub function_cores: f64,
    /// Nodes allowed to host function containers; empty means all. Ignored
    /// for node-local methods, which run beside their primary.
    pub function_nodes: Vec<String>,
    /// Nodes allowed to host shards; empty means all.
    pub store_nodes: Vec<String>,
    pub controller: ControllerConfig,
    pub knative: KnativeConfig,
    pub external_db: ExternalDbConfig,
    pub trace: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            seed: 0,
            nodes: (0..3).map(|i| NodeSpec { name: format!("node-{i}"), site: SiteId(0), cores: 64.0 }).collect(),
            cluster: ClusterConfig::default(),
            network: NetworkModel::default(),
            failures: None,
            resource_stability: 0.9436,
            queue_timeout: Duration::from_secs(30),
            election_window: Duration::from_secs(1),
            commit_time: Duration::from_micros(10),
            vnodes: crate::store::DEFAULT_VNODES,
            shards_per_class: 0,
            shard_cores: 0.25,
            function_cores: 1.0,
            function_nodes: Vec::new(),
            store_nodes: Vec::new(),
            controller: ControllerConfig::default(),
            knative: KnativeConfig::default(),
            external_db: ExternalDbConfig::default(),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeployOptions {
    pub policy: PolicyKind,
    /// Fixed pod count for the manual policy.
    pub pods: u32,
    /// Per-pod concurrency for the manual and concurrency-capped policies.
    pub concurrency: u32,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions { policy: PolicyKind::Oprc, pods: 1, concurrency: 1 }
    }
}

impl DeployOptions {
    pub fn policy(policy: PolicyKind) -> Self {
        let concurrency = if policy == PolicyKind::KnativeConcurrencyCapped { 10 } else { 1 };
        DeployOptions { policy, concurrency, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeploymentInfo {
    pub class: String,
    pub template: String,
    pub policy: PolicyKind,
    pub replicas: u32,
    pub shards: u32,
    pub warm_containers: u32,
    pub warnings: Vec<String>,
}

/// Requests sent by a load driver: one chain of methods on one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadTarget {
    pub class: String,
    /// Methods run in sequence per request; one entry for a single call.
    pub functions: Vec<String>,
    /// Objects to pick from uniformly; empty means every object of the class.
    #[serde(default)]
    pub objects: Vec<ObjectId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counters {
    pub submitted: u64,
    pub completed: u64,
    pub failed: u64,
    pub rejected: u64,
}

impl Counters {
    pub fn terminal(&self) -> u64 {
        self.completed + self.failed + self.rejected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Shard { class: u16, shard: ShardId },
    Function { class: u16, func: u16 },
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrive(u32),
    Retry(u32),
    ExecDone(u32),
    Commit(u32),
    Ready { container: ContainerId, incarnation: u32 },
    Kill(ContainerId),
    Restart(ContainerId),
    Control { class: u16, func: u16 },
    Autoscale { class: u16, func: u16 },
    Sample,
}

#[derive(Debug, Clone)]
struct Chain {
    functions: Arc<[u16]>,
    /// Index of the step after the current one.
    next: usize,
    driver: Option<u32>,
}

#[derive(Debug, Clone)]
struct Inv {
    id: u64,
    class: u16,
    func: u16,
    object: ObjectId,
    args: Option<Box<Value>>,
    arrival: SimTime,
    retried: bool,
    primary: Option<(ShardId, u32)>,
    primary_node: Option<NodeId>,
    queued_on: usize,
    dispatched: Option<SimTime>,
    container: Option<Completion>,
    cold: Duration,
    fetch: Duration,
    write_back: Duration,
    tier: Option<Tier>,
    node: Option<NodeId>,
    input_revision: u64,
    output: Option<Value>,
    chain: Option<Chain>,
    /// Counted in the pool's admission buffer until dispatched.
    admitted: bool,
    locked: bool,
}

#[derive(Debug, Clone, Default)]
struct LoadMeter {
    value: u64,
    since: SimTime,
    area: f64,
}

impl LoadMeter {
    fn change(&mut self, now: SimTime, delta: i64) {
        self.area += self.value as f64 * (now - self.since).as_secs_f64();
        self.since = now;
        self.value = (self.value as i64 + delta) as u64;
    }

    fn take_mean(&mut self, now: SimTime, over: Duration) -> f64 {
        self.change(now, 0);
        let m = self.area / over.as_secs_f64().max(1e-9);
        self.area = 0.0;
        m
    }
}

#[derive(Debug, Clone, Default)]
struct WindowAcc {
    arrivals: u64,
    completed: u64,
    failed: u64,
    rejected: u64,
    occupancy: f64,
    by_node: Vec<u64>,
}

struct Pool {
    fref: FunctionRef,
    profile: WorkloadProfile,
    local: bool,
    cpu: Millicores,
    concurrency: u32,
    queue_bound: usize,
    /// Admitted invocations not yet running, lock waiters included.
    waiting: usize,
    /// Active containers; retiring ones are dropped from here.
    containers: Vec<ContainerId>,
    by_node: Vec<Vec<ContainerId>>,
    /// One queue per node for node-local methods, else a single queue.
    queues: Vec<VecDeque<u32>>,
    controller: Option<ControllerState>,
    scaler: Option<KnativeScaler>,
    window: WindowAcc,
    load: LoadMeter,
    lognormal: Option<LogNormal<f64>>,
}

struct ClassRt {
    resolved: ResolvedClass,
    template: String,
    policy: PolicyKind,
    store: usize,
    replicas: u32,
    pools: Vec<Pool>,
    structured: BTreeSet<String>,
    blob_keys: BTreeSet<String>,
    retired: bool,
}

struct StoreSlot {
    store: ObjectStore,
    shards: Vec<ContainerId>,
    shard_killed_at: Vec<SimTime>,
    busy: Vec<bool>,
    waiters: BTreeMap<u64, VecDeque<u32>>,
    external: bool,
    retired: bool,
}

enum DriverKind {
    Open(Box<dyn Iterator<Item = SimTime>>),
    Closed { end: SimTime },
}

struct Driver {
    class: u16,
    functions: Arc<[u16]>,
    objects: Vec<ObjectId>,
    rng: SimRng,
    kind: DriverKind,
}

/// The deployed platform: cluster, stores, pools and the event loop driving them.
pub struct Platform {
    config: PlatformConfig,
    cluster: Cluster,
    queue: EventQueue<Ev>,
    random: RandomSource,
    templates: Vec<ClassRuntimeTemplate>,
    classes: Vec<ClassRt>,
    by_name: BTreeMap<String, u16>,
    stores: Vec<StoreSlot>,
    roles: Vec<Option<Role>>,
    killed_at: Vec<SimTime>,
    retiring: Vec<bool>,
    failures: Vec<Option<FailureSchedule>>,
    ever_ready: Vec<bool>,
    db: ExternalDb,
    invs: Vec<Option<Inv>>,
    free: Vec<u32>,
    next_id: u64,
    drivers: Vec<Driver>,
    sink: Box<dyn OutcomeSink>,
    watch: Option<(u64, Option<InvocationOutcome>)>,
    /// Invocations holding their object lock and waiting to be routed.
    runnable: VecDeque<u32>,
    trace: Option<Vec<String>>,
    counters: Counters,
    last_core_seconds: f64,
    function_nodes: Vec<NodeId>,
    store_nodes: Vec<NodeId>,
}

fn overlap(a0: SimTime, a1: SimTime, b0: SimTime, b1: SimTime) -> Duration {
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    hi - lo
}

impl Platform {
    pub fn new(config: PlatformConfig) -> Result<Self, RuntimeError> {
        config.network.validate()?;
        if let Some(f) = &config.failures {
            f.validate()?;
        }
        if config.nodes.is_empty() {
            return Err(RuntimeError::Config("at least one node is required".into()));
        }
        if !(config.resource_stability > 0.0 && config.resource_stability < 1.0) {
            return Err(RuntimeError::Config(format!("resource_stability must lie in (0, 1), got {}", config.resource_stability)));
        }
        let mut cluster = Cluster::new(config.cluster);
        for n in &config.nodes {
            if n.site.0 >= config.network.sites {
                return Err(RuntimeError::Sim(crate::sim::SimError::UnknownTier(n.site)));
            }
            cluster.add_node(n.name.clone(), n.site, Millicores::from_cores(n.cores));
        }
        let function_nodes = Self::node_list(&cluster, &config.function_nodes, "function_nodes")?;
        let store_nodes = Self::node_list(&cluster, &config.store_nodes, "store_nodes")?;
        let mut queue = EventQueue::new();
        queue.schedule(Ev::Sample, SimTime::from_secs(1)).expect("future");
        Ok(Platform {
            random: RandomSource::new(config.seed),
            db: ExternalDb::new(config.external_db),
            trace: config.trace.then(Vec::new),
            config,
            cluster,
            queue,
            templates: default_registry(),
            classes: Vec::new(),
            by_name: BTreeMap::new(),
            stores: Vec::new(),
            roles: Vec::new(),
            killed_at: Vec::new(),
            retiring: Vec::new(),
            failures: Vec::new(),
            ever_ready: Vec::new(),
            invs: Vec::new(),
            free: Vec::new(),
            next_id: 0,
            drivers: Vec::new(),
            sink: Box::new(OutcomeLog::default()),
            watch: None,
            runnable: VecDeque::new(),
            counters: Counters::default(),
            last_core_seconds: 0.0,
            function_nodes,
            store_nodes,
        })
    }

    fn node_list(cluster: &Cluster, names: &[String], field: &str) -> Result<Vec<NodeId>, RuntimeError> {
        if names.is_empty() {
            return Ok(cluster.nodes().iter().map(|n| n.id).collect());
        }
        names
            .iter()
            .map(|name| {
                cluster
                    .nodes()
                    .iter()
                    .find(|n| &n.name == name)
                    .map(|n| n.id)
                    .ok_or_else(|| RuntimeError::Config(format!("{field} names unknown node `{name}`")))
            })
            .collect()
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Invocations submitted but not yet terminal.
    pub fn in_flight(&self) -> u64 {
        self.counters.submitted - self.counters.terminal()
    }

    pub fn set_templates(&mut self, templates: Vec<ClassRuntimeTemplate>) {
        self.templates = templates;
    }

    pub fn set_sink(&mut self, sink: Box<dyn OutcomeSink>) -> Box<dyn OutcomeSink> {
        std::mem::replace(&mut self.sink, sink)
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
            for s in &mut self.stores {
                s.store.record_events(true);
            }
        }
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn log(&mut self, line: impl FnOnce() -> String) {
        if let Some(t) = &mut self.trace {
            let now = self.queue.now();
            t.push(format!("{:.6} {}", now.as_secs_f64(), line()));
        }
    }

    fn drain_store_events(&mut self, slot: usize) {
        if self.trace.is_none() {
            return;
        }
        let events = self.stores[slot].store.drain_events();
        for e in events {
            let line = match e {
                StoreEvent::Elected { object, from, to, at } => format!("{:.6} elect store={slot} obj={object} from={from} to={to}", at.as_secs_f64()),
                StoreEvent::BackFilled { object, shard, revision, from_backing, at } => format!(
                    "{:.6} backfill store={slot} obj={object} shard={shard} rev={revision} source={}",
                    at.as_secs_f64(),
                    if from_backing { "backing" } else { "replica" }
                ),
                StoreEvent::Lost { object, at } => format!("{:.6} lost store={slot} obj={object}", at.as_secs_f64()),
            };
            self.trace.as_mut().expect("checked").push(line);
        }
    }

    pub fn class_index(&self, name: &str) -> Result<u16, RuntimeError> {
        self.by_name.get(name).copied().ok_or_else(|| RuntimeError::UnknownClass(name.to_string()))
    }

    pub fn class_name(&self, class: u16) -> &str {
        &self.classes[class as usize].resolved.name
    }

    pub fn function_name(&self, class: u16, func: u16) -> &str {
        &self.classes[class as usize].resolved.functions[func as usize].name
    }

    pub fn function_index(&self, class: u16, name: &str) -> Result<u16, RuntimeError> {
        let c = &self.classes[class as usize];
        c.resolved.functions.iter().position(|f| f.name == name).map(|i| i as u16).ok_or_else(|| RuntimeError::UnknownFunction {
            class: c.resolved.name.clone(),
            function: name.to_string(),
        })
    }

    pub fn resolved_class(&self, name: &str) -> Result<&ResolvedClass, RuntimeError> {
        Ok(&self.classes[self.class_index(name)? as usize].resolved)
    }

    pub fn replicas(&self, class: &str) -> Result<u32, RuntimeError> {
        Ok(self.classes[self.class_index(class)? as usize].replicas)
    }

    pub fn template(&self, class: &str) -> Result<&str, RuntimeError> {
        Ok(&self.classes[self.class_index(class)? as usize].template)
    }

    pub fn policy(&self, class: &str) -> Result<PolicyKind, RuntimeError> {
        Ok(self.classes[self.class_index(class)? as usize].policy)
    }

    /// Ready function containers of the class.
    pub fn warm_containers(&self, class: &str) -> Result<u32, RuntimeError> {
        let c = &self.classes[self.class_index(class)? as usize];
        Ok(c.pools.iter().flat_map(|p| &p.containers).filter(|&&id| self.cluster.container(id).is_ok_and(|c| c.is_ready())).count() as u32)
    }

    /// Current throughput plan of one method, if it is rate controlled.
    pub fn controller(&self, class: &str, function: &str) -> Result<Option<&ControllerState>, RuntimeError> {
        let ci = self.class_index(class)?;
        let fi = self.function_index(ci, function)?;
        Ok(self.classes[ci as usize].pools[fi as usize].controller.as_ref())
    }

    pub fn object_ids(&self, class: &str) -> Result<Vec<ObjectId>, RuntimeError> {
        let ci = self.class_index(class)?;
        let slot = &self.stores[self.classes[ci as usize].store];
        Ok(slot.store.object_ids().collect())
    }

    pub fn object(&self, class: &str, id: ObjectId) -> Result<ObjectRecord, RuntimeError> {
        let ci = self.class_index(class)?;
        Ok(self.stores[self.classes[ci as usize].store].store.record(id)?)
    }

    pub fn store(&self, class: &str) -> Result<&ObjectStore, RuntimeError> {
        let ci = self.class_index(class)?;
        Ok(&self.stores[self.classes[ci as usize].store].store)
    }

    pub fn store_mut(&mut self, class: &str) -> Result<&mut ObjectStore, RuntimeError> {
        let ci = self.class_index(class)?;
        let s = self.classes[ci as usize].store;
        Ok(&mut self.stores[s].store)
    }

    /// Container hosting each shard of the class, indexed by shard id.
    pub fn shard_containers(&self, class: &str) -> Result<&[ContainerId], RuntimeError> {
        let ci = self.class_index(class)?;
        Ok(&self.stores[self.classes[ci as usize].store].shards)
    }

    /// Parses, resolves and deploys every class of a manifest.
    pub fn deploy_manifest(&mut self, source: &str, options: DeployOptions) -> Result<Vec<DeploymentInfo>, RuntimeError> {
        let classes = load_classes(source)?;
        classes.iter().map(|c| self.deploy(c, options)).collect()
    }

    fn stability(&self) -> f64 {
        self.config.failures.as_ref().map_or(self.config.resource_stability, |f| f.stability())
    }

    /// Deploys (or redeploys) one resolved class and waits for its shards and
    /// initial warm pool to come up.
    pub fn deploy(&mut self, class: &ResolvedClass, options: DeployOptions) -> Result<DeploymentInfo, RuntimeError> {
        let template = select_template(class, &self.templates)?.id.clone();
        let policy = options.policy;
        let external = policy.uses_external_store();
        if policy == PolicyKind::ManualRefinement && (options.pods == 0 || options.concurrency == 0) {
            return Err(RuntimeError::Config("manual deployments need at least one pod and one slot".into()));
        }
        let replicas = match class.max_availability() {
            Some(a) if !external => required_replicas(a / 100.0, self.stability())?,
            _ => 1,
        };
        let now = self.now();
        let ci = match self.by_name.get(&class.name) {
            Some(&i) => i,
            None => {
                if self.classes.len() >= u16::MAX as usize {
                    return Err(RuntimeError::Config("too many classes".into()));
                }
                self.classes.len() as u16
            }
        };

        // Redeploy: retire the old pools; keep the store when its layout still fits.
        let mut reuse_store = None;
        let mut carried: Vec<(String, Value, BTreeMap<String, BlobRef>)> = Vec::new();
        if (ci as usize) < self.classes.len() {
            let old = &self.classes[ci as usize];
            let old_store = old.store;
            let same_layout = old.replicas == replicas && self.stores[old_store].external == external;
            let ids: Vec<ContainerId> = old.pools.iter().flat_map(|p| p.containers.iter().copied()).collect();
            for id in ids {
                self.retire(id);
            }
            if same_layout {
                reuse_store = Some(old_store);
            } else {
                let slot = &mut self.stores[old_store];
                slot.retired = true;
                for id in slot.store.object_ids().collect::<Vec<_>>() {
                    let r = slot.store.record(id)?;
                    let attrs = (*slot.store.committed_attributes(id)?).clone();
                    carried.push((r.class_name, attrs, r.blobs));
                }
                let shards = slot.shards.clone();
                for id in shards {
                    self.failures[id.0 as usize] = None;
                    self.retire(id);
                }
            }
            self.log(|| format!("redeploy class={} replicas={replicas} store={}", class.name, if reuse_store.is_some() { "kept" } else { "rebuilt" }));
        }

        let store_slot = match reuse_store {
            Some(s) => s,
            None => self.new_store(ci, replicas, class.constraint.is_persistent(), external)?,
        };
        for (cls, attrs, blobs) in carried {
            let slot = &mut self.stores[store_slot];
            slot.store.create(&cls, attrs, blobs, now)?;
            slot.busy.push(false);
        }

        let mut pools = Vec::new();
        for (fi, f) in class.functions.iter().enumerate() {
            let profile = f.workload_profile.clone().unwrap_or_else(|| WorkloadProfile::preset(Archetype::Chatty));
            let local = !external && f.requirements.qos.locality == Some(Locality::Local);
            let threads = (self.config.function_cores * self.config.cluster.threads_per_core as f64).round().max(1.0) as u32;
            let concurrency = match policy {
                PolicyKind::Oprc | PolicyKind::KnativeRts => threads,
                PolicyKind::KnativeLike => self.config.knative.container_concurrency,
                PolicyKind::KnativeConcurrencyCapped | PolicyKind::ManualRefinement => options.concurrency.max(1),
            };
            let queue_bound = if policy == PolicyKind::Oprc { usize::MAX } else { self.config.knative.queue_depth };
            let mean = Duration::from_secs_f64(profile.service_time.mean_ms.max(1e-6) / 1e3);
            let controller = if policy.uses_rate_controller() {
                let a = f.requirements.qos.throughput.unwrap_or(0) as f64;
                let est = CapacityEstimator::bootstrap_for(concurrency, mean, &self.config.controller);
                Some(ControllerState::new(self.config.controller, a, est)?)
            } else {
                None
            };
            let scaler = match policy {
                PolicyKind::KnativeLike => Some(KnativeScaler::new(self.config.knative)),
                PolicyKind::KnativeConcurrencyCapped => {
                    let k = KnativeConfig { ..KnativeConfig::concurrency_capped(options.concurrency) };
                    Some(KnativeScaler::new(KnativeConfig { tick: self.config.knative.tick, queue_depth: self.config.knative.queue_depth, ..k }))
                }
                _ => None,
            };
            let cv = profile.service_time.cv;
            let lognormal = (cv > 0.0).then(|| LogNormal::from_mean_cv(profile.service_time.mean_ms, cv).expect("valid profile"));
            let nodes = self.cluster.nodes().len();
            pools.push(Pool {
                fref: FunctionRef::new(class.name.clone(), f.name.clone()),
                profile,
                local,
                cpu: Millicores::from_cores(self.config.function_cores),
                concurrency,
                queue_bound,
                waiting: 0,
                containers: Vec::new(),
                by_node: vec![Vec::new(); nodes],
                queues: vec![VecDeque::new(); if local { nodes } else { 1 }],
                controller,
                scaler,
                window: WindowAcc { by_node: vec![0; nodes], ..Default::default() },
                load: LoadMeter { since: now, ..Default::default() },
                lognormal,
            });
            let _ = fi;
        }

        let rt = ClassRt {
            structured: class.key_specs.iter().filter(|k| k.kind == KeyKind::Structured).map(|k| k.name.clone()).collect(),
            blob_keys: class.key_specs.iter().filter(|k| k.kind != KeyKind::Structured).map(|k| k.name.clone()).collect(),
            resolved: class.clone(),
            template: template.clone(),
            policy,
            store: store_slot,
            replicas,
            pools,
            retired: false,
        };
        if (ci as usize) < self.classes.len() {
            self.classes[ci as usize] = rt;
        } else {
            self.classes.push(rt);
            self.by_name.insert(class.name.clone(), ci);
        }

        // Initial pools.
        for fi in 0..self.classes[ci as usize].pools.len() {
            let fi = fi as u16;
            match policy {
                PolicyKind::ManualRefinement => {
                    for _ in 0..options.pods {
                        let node = self.roomiest_node(ci, fi).ok_or_else(|| self.capacity_error(ci, fi))?;
                        self.spawn(ci, fi, node)?;
                    }
                }
                PolicyKind::Oprc | PolicyKind::KnativeRts => {
                    let (demand, kappa) = {
                        let c = self.classes[ci as usize].pools[fi as usize].controller.as_ref().expect("rate controlled");
                        (c.plan.guaranteed_rate, c.plan.kappa)
                    };
                    self.apply_plan(ci, fi, demand, kappa)?;
                    let interval = self.config.controller.interval;
                    self.queue.schedule_in(Ev::Control { class: ci, func: fi }, interval);
                }
                PolicyKind::KnativeLike | PolicyKind::KnativeConcurrencyCapped => {
                    let tick = self.config.knative.tick;
                    self.queue.schedule_in(Ev::Autoscale { class: ci, func: fi }, tick);
                }
            }
        }
        let shards = self.stores[store_slot].shards.len() as u32;
        let info = DeploymentInfo {
            class: class.name.clone(),
            template,
            policy,
            replicas,
            shards,
            warm_containers: self.classes[ci as usize].pools.iter().map(|p| p.containers.len() as u32).sum(),
            warnings: class.warnings(),
        };
        self.log(|| format!("deploy class={} template={} policy={} replicas={} shards={}", info.class, info.template, policy, replicas, shards));
        let settle = self.now() + self.config.cluster.cold_start_delay;
        self.run_until(settle);
        Ok(info)
    }

    fn capacity_error(&self, ci: u16, fi: u16) -> RuntimeError {
        let cpu = self.classes[ci as usize].pools[fi as usize].cpu;
        let (node, free) = self.cluster.nodes().iter().map(|n| (n.id, n.free())).max_by_key(|(_, f)| *f).expect("nodes");
        RuntimeError::Sim(crate::sim::SimError::InsufficientCapacity { node, requested: cpu, free })
    }

    fn new_store(&mut self, ci: u16, replicas: u32, persistent: bool, external: bool) -> Result<usize, RuntimeError> {
        let idx = self.stores.len();
        let cfg = StoreConfig {
            replicas: replicas as usize,
            vnodes: self.config.vnodes,
            election_window: self.config.election_window,
            persistent: persistent || external,
            hash_seed: self.config.seed,
        };
        let mut store = ObjectStore::new(cfg, self.config.network.clone(), self.random.stream("store", idx as u64));
        store.record_events(self.trace.is_some());
        let nodes: Vec<(NodeId, SiteId)> = self.store_nodes.iter().map(|&n| (n, self.cluster.node(n).expect("node").site)).collect();
        let count = if self.config.shards_per_class == 0 { nodes.len() as u32 } else { self.config.shards_per_class }.max(replicas);
        let cpu = if external { Millicores(0) } else { Millicores::from_cores(self.config.shard_cores) };
        let now = self.now();
        let mut shards = Vec::new();
        for i in 0..count {
            let (node, site) = nodes[i as usize % nodes.len()];
            let fref = FunctionRef::new(self.classes.get(ci as usize).map_or("", |c| c.resolved.name.as_str()), format!("shard-{i}"));
            let (id, ready_at) = self.cluster.start_container(fref, node, cpu, 1, now)?;
            let shard = store.add_shard(Location { node, site }, now);
            self.register(id, Role::Shard { class: ci, shard });
            self.queue.schedule(Ev::Ready { container: id, incarnation: 0 }, ready_at)?;
            shards.push(id);
        }
        self.stores.push(StoreSlot {
            store,
            shard_killed_at: vec![SimTime::ZERO; shards.len()],
            shards,
            busy: Vec::new(),
            waiters: BTreeMap::new(),
            external,
            retired: false,
        });
        Ok(idx)
    }

    fn register(&mut self, id: ContainerId, role: Role) {
        let i = id.0 as usize;
        if self.roles.len() <= i {
            self.roles.resize(i + 1, None);
            self.killed_at.resize(i + 1, SimTime::ZERO);
            self.retiring.resize(i + 1, false);
            self.failures.resize_with(i + 1, || None);
            self.ever_ready.resize(i + 1, false);
        }
        self.roles[i] = Some(role);
    }

    fn spawn(&mut self, ci: u16, fi: u16, node: NodeId) -> Result<ContainerId, RuntimeError> {
        let now = self.now();
        let p = &self.classes[ci as usize].pools[fi as usize];
        let (id, ready_at) = self.cluster.start_container(p.fref.clone(), node, p.cpu, p.concurrency, now)?;
        self.register(id, Role::Function { class: ci, func: fi });
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        p.containers.push(id);
        p.by_node[node.0 as usize].push(id);
        self.queue.schedule(Ev::Ready { container: id, incarnation: 0 }, ready_at)?;
        self.log(|| format!("start container={id} node={node} class={ci} fn={fi}"));
        Ok(id)
    }

    /// Takes a container out of service; it stops once idle.
    fn retire(&mut self, id: ContainerId) {
        let Some(role) = self.roles.get(id.0 as usize).copied().flatten() else {
            return;
        };
        if let Role::Function { class, func } = role {
            let p = &mut self.classes[class as usize].pools[func as usize];
            p.containers.retain(|&c| c != id);
            for v in &mut p.by_node {
                v.retain(|&c| c != id);
            }
        }
        self.retiring[id.0 as usize] = true;
        self.try_stop(id);
    }

    fn try_stop(&mut self, id: ContainerId) {
        if !self.retiring[id.0 as usize] {
            return;
        }
        if self.cluster.container(id).is_ok_and(|c| c.in_flight() == 0) {
            let now = self.now();
            self.cluster.stop(id, now).expect("idle container stops");
            self.roles[id.0 as usize] = None;
            self.failures[id.0 as usize] = None;
            self.log(|| format!("stop container={id}"));
        }
    }

    fn allowed_nodes(&self) -> &[NodeId] {
        &self.function_nodes
    }

    fn roomiest_node(&self, ci: u16, fi: u16) -> Option<NodeId> {
        let cpu = self.classes[ci as usize].pools[fi as usize].cpu;
        self.allowed_nodes()
            .iter()
            .map(|&n| (n, self.cluster.node(n).expect("node").free()))
            .filter(|(_, f)| *f >= cpu)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(n, _)| n)
    }

    /// Containers that could still be started for this pool.
    fn spare_slots(&self, ci: u16, fi: u16) -> u64 {
        let p = &self.classes[ci as usize].pools[fi as usize];
        let nodes: Vec<NodeId> = if p.local { self.cluster.nodes().iter().map(|n| n.id).collect() } else { self.allowed_nodes().to_vec() };
        nodes.iter().map(|&n| self.cluster.node(n).map_or(0, |n| if p.cpu.0 == 0 { u64::MAX / 4 } else { (n.free().0 / p.cpu.0) as u64 })).sum()
    }

    /// Share of primaries per node, from the last window's arrivals or, failing
    /// that, from shard placement.
    fn node_shares(&self, ci: u16, fi: u16) -> Vec<f64> {
        let p = &self.classes[ci as usize].pools[fi as usize];
        let total: u64 = p.window.by_node.iter().sum();
        if total > 0 {
            return p.window.by_node.iter().map(|&x| x as f64 / total as f64).collect();
        }
        let slot = &self.stores[self.classes[ci as usize].store];
        let mut shares = vec![0.0; self.cluster.nodes().len()];
        for sh in &slot.shards {
            if let Ok(c) = self.cluster.container(*sh) {
                shares[c.node.0 as usize] += 1.0;
            }
        }
        shares
    }

    /// Resizes a rate-controlled pool for `demand` at `kappa` per container.
    fn apply_plan(&mut self, ci: u16, fi: u16, demand: f64, kappa: f64) -> Result<(), RuntimeError> {
        let demand = demand * (1.0 + self.config.controller.headroom);
        let local = self.classes[ci as usize].pools[fi as usize].local;
        if local {
            let targets = split_by_share(demand, kappa, &self.node_shares(ci, fi));
            for (n, &want) in targets.iter().enumerate() {
                let node = NodeId(n as u32);
                let have = self.classes[ci as usize].pools[fi as usize].by_node[n].len() as u32;
                for _ in have..want {
                    if self.spawn(ci, fi, node).is_err() {
                        break;
                    }
                }
                if want < have {
                    self.shrink(ci, fi, Some(node), (have - want) as usize);
                }
            }
        } else {
            let want = if demand <= 0.0 { 0 } else { (demand / kappa - 1e-9).ceil().max(1.0) as u32 };
            self.resize(ci, fi, want);
        }
        Ok(())
    }

    fn resize(&mut self, ci: u16, fi: u16, want: u32) {
        let have = self.classes[ci as usize].pools[fi as usize].containers.len() as u32;
        for _ in have..want {
            let Some(node) = self.roomiest_node(ci, fi) else { break };
            if self.spawn(ci, fi, node).is_err() {
                break;
            }
        }
        if want < have {
            self.shrink(ci, fi, None, (have - want) as usize);
        }
    }

    /// Retires `count` containers, idle ones first, youngest first.
    fn shrink(&mut self, ci: u16, fi: u16, node: Option<NodeId>, count: usize) {
        let p = &self.classes[ci as usize].pools[fi as usize];
        let list = match node {
            Some(n) => &p.by_node[n.0 as usize],
            None => &p.containers,
        };
        let mut order: Vec<(bool, std::cmp::Reverse<SimTime>, ContainerId)> = list
            .iter()
            .map(|&id| {
                let c = self.cluster.container(id).expect("live");
                (c.in_flight() > 0, std::cmp::Reverse(c.created_at), id)
            })
            .collect();
        order.sort();
        for (_, _, id) in order.into_iter().take(count) {
            self.retire(id);
        }
    }

    /// Creates an object after checking it against the class's keySpecs.
    pub fn create_object(&mut self, class: &str, attributes: Value, blobs: BTreeMap<String, BlobRef>) -> Result<ObjectId, RuntimeError> {
        let ci = self.class_index(class)?;
        let c = &self.classes[ci as usize];
        match &attributes {
            Value::Object(m) => {
                if let Some(k) = m.keys().find(|k| !c.structured.contains(*k)) {
                    return Err(RuntimeError::Schema(format!("class {class} declares no structured key `{k}`")));
                }
            }
            Value::Null => {}
            _ => return Err(RuntimeError::Schema("object attributes must be a JSON object".into())),
        }
        if let Some(k) = blobs.keys().find(|k| !c.blob_keys.contains(*k)) {
            return Err(RuntimeError::Schema(format!("class {class} declares no unstructured key `{k}`")));
        }
        let attributes = if attributes.is_null() { Value::Object(Default::default()) } else { attributes };
        let now = self.now();
        let slot = &mut self.stores[c.store];
        let id = slot.store.create(class, attributes, blobs, now)?;
        slot.busy.push(false);
        Ok(id)
    }

    fn validate_request(&self, req: &InvocationRequest) -> Result<(u16, u16), RuntimeError> {
        let ci = self.class_index(&req.class)?;
        let fi = self.function_index(ci, &req.function)?;
        let c = &self.classes[ci as usize];
        let slot = &self.stores[c.store];
        if req.object_id.0 as usize >= slot.store.len() {
            return Err(RuntimeError::Store(StoreError::NotFound(req.object_id)));
        }
        match &req.args {
            Value::Null => {}
            Value::Object(m) => {
                if let Some(k) = m.keys().find(|k| !c.structured.contains(*k)) {
                    return Err(RuntimeError::Schema(format!("{} may only write keys declared by {}; `{k}` is not", req.function, req.class)));
                }
            }
            _ => return Err(RuntimeError::Schema("invocation args must be a JSON object".into())),
        }
        Ok((ci, fi))
    }

    /// Queues a request at the current instant and returns its id.
    pub fn submit(&mut self, req: &InvocationRequest) -> Result<u64, RuntimeError> {
        let (ci, fi) = self.validate_request(req)?;
        let args = (!req.args.is_null()).then(|| Box::new(req.args.clone()));
        let id = self.begin(ci, fi, req.object_id, args, None);
        self.pump();
        Ok(id)
    }

    /// Runs one invocation to completion and returns its outcome.
    pub fn invoke(&mut self, req: &InvocationRequest) -> Result<InvocationOutcome, RuntimeError> {
        let (ci, fi) = self.validate_request(req)?;
        let args = (!req.args.is_null()).then(|| Box::new(req.args.clone()));
        let id = self.next_id;
        self.watch = Some((id, None));
        let got = self.begin(ci, fi, req.object_id, args, None);
        debug_assert_eq!(got, id);
        self.pump();
        let limit = self.now() + Duration::from_secs(86_400);
        while self.watch.as_ref().is_some_and(|(_, o)| o.is_none()) {
            match self.queue.pop_until(limit) {
                Some((_, ev)) => self.handle(ev),
                None => break,
            }
        }
        let (_, out) = self.watch.take().expect("watching");
        out.ok_or_else(|| RuntimeError::Config("invocation did not finish within a simulated day".into()))
    }

    /// Runs methods in order on one object, stopping at the first that does not complete.
    pub fn invoke_chain(&mut self, class: &str, object: ObjectId, functions: &[&str]) -> Result<Vec<InvocationOutcome>, RuntimeError> {
        let mut out = Vec::new();
        for f in functions {
            let o = self.invoke(&InvocationRequest::new(class, object, *f))?;
            let done = o.status == Status::Completed;
            out.push(o);
            if !done {
                break;
            }
        }
        Ok(out)
    }

    /// Adds an open-loop driver. `arrivals` must be nondecreasing.
    pub fn add_open_load(&mut self, target: &LoadTarget, arrivals: Box<dyn Iterator<Item = SimTime>>) -> Result<u32, RuntimeError> {
        let d = self.add_driver(target, DriverKind::Open(arrivals))?;
        self.schedule_next_arrival(d);
        Ok(d)
    }

    /// Adds `clients` closed-loop clients, each issuing its next request as
    /// soon as the previous one ends, until `end`.
    pub fn add_closed_load(&mut self, target: &LoadTarget, clients: u32, end: SimTime) -> Result<u32, RuntimeError> {
        let d = self.add_driver(target, DriverKind::Closed { end })?;
        for _ in 0..clients {
            self.issue(d);
        }
        self.pump();
        Ok(d)
    }

    fn add_driver(&mut self, target: &LoadTarget, kind: DriverKind) -> Result<u32, RuntimeError> {
        let ci = self.class_index(&target.class)?;
        if target.functions.is_empty() {
            return Err(RuntimeError::Config("a load target needs at least one function".into()));
        }
        let functions: Vec<u16> = target.functions.iter().map(|f| self.function_index(ci, f)).collect::<Result<_, _>>()?;
        let objects = if target.objects.is_empty() { self.object_ids(&target.class)? } else { target.objects.clone() };
        if objects.is_empty() {
            return Err(RuntimeError::Config(format!("class {} has no objects to load", target.class)));
        }
        let n = self.store(&target.class)?.len() as u64;
        if let Some(o) = objects.iter().find(|o| o.0 >= n) {
            return Err(RuntimeError::Store(StoreError::NotFound(*o)));
        }
        let d = self.drivers.len() as u32;
        self.drivers.push(Driver { class: ci, functions: functions.into(), objects, rng: self.random.stream("load", d as u64), kind });
        Ok(d)
    }

    fn schedule_next_arrival(&mut self, d: u32) {
        let now = self.now();
        if let DriverKind::Open(it) = &mut self.drivers[d as usize].kind {
            if let Some(t) = it.next() {
                self.queue.schedule(Ev::Arrive(d), t.max(now)).expect("not in the past");
            }
        }
    }

    fn issue(&mut self, d: u32) {
        let dr = &mut self.drivers[d as usize];
        let object = dr.objects[dr.rng.random_range(0..dr.objects.len())];
        let (ci, fns) = (dr.class, dr.functions.clone());
        let chain = Chain { functions: fns.clone(), next: 1, driver: Some(d) };
        self.begin(ci, fns[0], object, None, Some(chain));
    }

    /// Dispatches every event due at or before `t`.
    pub fn run_until(&mut self, t: SimTime) {
        while let Some((_, ev)) = self.queue.pop_until(t) {
            self.handle(ev);
        }
        self.queue.advance_to(t.max(self.now()));
    }

    pub fn run_for(&mut self, d: Duration) {
        let t = self.now() + d;
        self.run_until(t);
    }

    /// Rejects everything still queued past its timeout and returns how many
    /// invocations remain unfinished.
    pub fn pending(&mut self) -> u64 {
        self.purge_expired();
        self.in_flight()
    }

    fn begin(&mut self, ci: u16, fi: u16, object: ObjectId, args: Option<Box<Value>>, chain: Option<Chain>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.counters.submitted += 1;
        let now = self.now();
        let inv = Inv {
            id,
            class: ci,
            func: fi,
            object,
            args,
            arrival: now,
            retried: false,
            primary: None,
            primary_node: None,
            queued_on: 0,
            dispatched: None,
            container: None,
            cold: Duration::ZERO,
            fetch: Duration::ZERO,
            write_back: Duration::ZERO,
            tier: None,
            node: None,
            input_revision: 0,
            output: None,
            chain,
            admitted: false,
            locked: false,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.invs[s as usize] = Some(inv);
                s
            }
            None => {
                self.invs.push(Some(inv));
                (self.invs.len() - 1) as u32
            }
        };
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        p.window.arrivals += 1;
        if p.waiting >= p.queue_bound {
            self.reject(slot, FailReason::QueueFull);
            return id;
        }
        p.waiting += 1;
        self.inv_mut(slot).admitted = true;
        self.acquire(slot);
        id
    }

    fn inv(&self, slot: u32) -> &Inv {
        self.invs[slot as usize].as_ref().expect("live invocation")
    }

    fn inv_mut(&mut self, slot: u32) -> &mut Inv {
        self.invs[slot as usize].as_mut().expect("live invocation")
    }

    fn store_of(&self, slot: u32) -> usize {
        self.classes[self.inv(slot).class as usize].store
    }

    /// Per-object FIFO lock: one invocation per object at a time.
    fn acquire(&mut self, slot: u32) {
        let s = self.store_of(slot);
        let obj = self.inv(slot).object;
        let st = &mut self.stores[s];
        if st.busy[obj.0 as usize] {
            st.waiters.entry(obj.0).or_default().push_back(slot);
        } else {
            st.busy[obj.0 as usize] = true;
            self.inv_mut(slot).locked = true;
            self.runnable.push_back(slot);
        }
    }

    fn release(&mut self, store: usize, obj: ObjectId) {
        let st = &mut self.stores[store];
        let next = match st.waiters.get_mut(&obj.0) {
            Some(q) => {
                let n = q.pop_front();
                if q.is_empty() {
                    st.waiters.remove(&obj.0);
                }
                n
            }
            None => None,
        };
        match next {
            Some(slot) => {
                self.inv_mut(slot).locked = true;
                self.runnable.push_back(slot);
            }
            None => st.busy[obj.0 as usize] = false,
        }
    }

    fn expired(&self, slot: u32) -> bool {
        self.now() >= self.inv(slot).arrival + self.config.queue_timeout
    }

    /// Finds the primary, then dispatches or queues. Holds the object lock.
    fn route(&mut self, slot: u32) {
        if self.expired(slot) {
            return self.reject(slot, FailReason::QueueTimeout);
        }
        let s = self.store_of(slot);
        if self.stores[s].retired {
            return self.fail(slot, FailReason::Redeployed, self.now());
        }
        let now = self.now();
        let obj = self.inv(slot).object;
        let res = self.stores[s].store.primary(obj, now);
        self.drain_store_events(s);
        match res {
            Ok(shard) => {
                let epoch = self.stores[s].store.shard_epoch(shard);
                let node = self.stores[s].store.shard_location(shard).node;
                let inv = self.inv_mut(slot);
                inv.primary = Some((shard, epoch));
                inv.primary_node = Some(node);
                self.dispatch(slot);
            }
            Err(StoreError::NoPrimary(_)) if !self.inv(slot).retried => {
                self.inv_mut(slot).retried = true;
                let w = self.config.election_window;
                self.queue.schedule_in(Ev::Retry(slot), w);
            }
            Err(StoreError::NoPrimary(_)) => self.fail(slot, FailReason::NoPrimary, now),
            Err(StoreError::ObjectLost(_)) => self.fail(slot, FailReason::ObjectLost, now),
            Err(_) => self.fail(slot, FailReason::AllReplicasDown, now),
        }
    }

    fn pick(&self, ci: u16, fi: u16, key: usize) -> Option<ContainerId> {
        let p = &self.classes[ci as usize].pools[fi as usize];
        let list = if p.local { &p.by_node[key] } else { &p.containers };
        let mut best: Option<(u32, ContainerId)> = None;
        for &id in list {
            let c = self.cluster.container(id).expect("pool container");
            if c.has_free_slot() && best.is_none_or(|(n, _)| c.in_flight() < n) {
                best = Some((c.in_flight(), id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn dispatch(&mut self, slot: u32) {
        let (ci, fi, pnode) = {
            let i = self.inv(slot);
            (i.class, i.func, i.primary_node.expect("routed"))
        };
        let local = self.classes[ci as usize].pools[fi as usize].local;
        let key = if local { pnode.0 as usize } else { 0 };
        if let Some(cid) = self.pick(ci, fi, key) {
            return self.start(slot, cid);
        }
        let now = self.now();
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        if p.queues[key].len() >= p.queue_bound {
            return self.reject(slot, FailReason::QueueFull);
        }
        p.queues[key].push_back(slot);
        p.load.change(now, 1);
        let empty = if local { p.by_node[key].is_empty() } else { p.containers.is_empty() };
        self.inv_mut(slot).queued_on = key;
        if empty {
            // Scale from zero: node-local pools on the primary's node, others anywhere.
            let node = if local { Some(pnode) } else { self.roomiest_node(ci, fi) };
            if let Some(node) = node {
                let _ = self.spawn(ci, fi, node);
            }
        }
    }

    fn service_time(&self, ci: u16, fi: u16, rng: &mut SimRng) -> Duration {
        let p = &self.classes[ci as usize].pools[fi as usize];
        let ms = match &p.lognormal {
            Some(d) => d.sample(rng),
            None => p.profile.service_time.mean_ms,
        };
        Duration::from_secs_f64(ms.max(0.0) / 1e3)
    }

    fn inv_rng(&self, id: u64) -> SimRng {
        SimRng::seed_from_u64(StableHasher::new(self.config.seed).str("invocation").u64(id).finish())
    }

    fn db_location(&self) -> Location {
        Location { node: NodeId(u32::MAX), site: self.config.external_db.site }
    }

    fn start(&mut self, slot: u32, cid: ContainerId) {
        let now = self.now();
        let (ci, fi, obj, arrival, id, primary) = {
            let i = self.inv(slot);
            (i.class, i.func, i.object, i.arrival, i.id, i.primary)
        };
        let s = self.classes[ci as usize].store;
        let c = self.cluster.container(cid).expect("live container");
        let cold = overlap(arrival, now, c.warming_since(), c.ready_at());
        let loc = Location { node: c.node, site: self.cluster.node(c.node).expect("node").site };
        let mut rng = self.inv_rng(id);
        let bytes_in = self.classes[ci as usize].pools[fi as usize].profile.bytes_in;
        let store = &self.stores[s].store;
        let attr_bytes = store.attribute_bytes(obj).unwrap_or(0);
        let net = &self.config.network;
        let (tier, fetch) = if self.stores[s].external {
            let db = self.db_location();
            let tier = net.tier(loc, db).unwrap_or(Tier::Internet);
            let arrive = now + net.latency(tier).sample(&mut rng);
            let done = self.db.serve(arrive, &mut rng);
            let back = done + net.tier_delay(tier, attr_bytes + bytes_in, &mut rng);
            (tier, back - now)
        } else {
            let (shard, _) = primary.expect("routed");
            let src = store.shard_location(shard);
            let tier = net.tier(src, loc).unwrap_or(Tier::Internet);
            (tier, net.tier_delay(tier, attr_bytes + bytes_in, &mut rng))
        };
        let input_revision = self.stores[s].store.revision(obj).unwrap_or(0);
        let service = self.service_time(ci, fi, &mut rng);
        let completion = self.cluster.execute(cid, &Work { base_service: service, start_delay: fetch }, now).expect("picked a free slot");
        let inv = self.inv_mut(slot);
        let admitted = std::mem::take(&mut inv.admitted);
        inv.dispatched = Some(now);
        inv.cold = cold;
        inv.fetch = fetch;
        inv.tier = Some(tier);
        inv.node = Some(loc.node);
        inv.input_revision = input_revision;
        inv.container = Some(completion);
        self.queue.schedule(Ev::ExecDone(slot), completion.at).expect("future");
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        if admitted {
            p.waiting = p.waiting.saturating_sub(1);
        }
        p.load.change(now, 1);
    }

    fn new_attributes(&self, slot: u32, rng: &mut SimRng) -> Value {
        let inv = self.inv(slot);
        let c = &self.classes[inv.class as usize];
        let mut doc = (*self.stores[c.store].store.committed_attributes(inv.object).expect("object exists")).clone();
        let Value::Object(map) = &mut doc else { return doc };
        if let Some(Value::Object(args)) = inv.args.as_deref() {
            for (k, v) in args {
                map.insert(k.clone(), v.clone());
            }
            return doc;
        }
        if map.is_empty() {
            return doc;
        }
        let k = rng.random_range(0..map.len());
        let (_, v) = map.iter_mut().nth(k).expect("in range");
        let stamp = Value::from(rng.random::<u32>());
        match v {
            Value::Object(inner) if !inner.is_empty() => {
                let j = rng.random_range(0..inner.len());
                *inner.iter_mut().nth(j).expect("in range").1 = stamp;
            }
            other => *other = stamp,
        }
        doc
    }

    fn exec_done(&mut self, slot: u32) {
        let now = self.now();
        let completion = self.inv(slot).container.expect("dispatched");
        let (ci, fi) = (self.inv(slot).class, self.inv(slot).func);
        self.classes[ci as usize].pools[fi as usize].load.change(now, -1);
        if !self.cluster.complete(&completion) {
            let at = self.killed_at[completion.container.0 as usize].max(self.inv(slot).arrival);
            return self.fail(slot, FailReason::ContainerKilled, at);
        }
        let dispatched = self.inv(slot).dispatched.expect("dispatched");
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        p.window.occupancy += (now - dispatched).as_secs_f64();
        self.drain_container(completion.container);
        self.try_stop(completion.container);

        let mut rng = self.inv_rng(self.inv(slot).id ^ 0x5bd1_e995);
        let output = self.new_attributes(slot, &mut rng);
        let s = self.classes[ci as usize].store;
        let bytes_out = self.classes[ci as usize].pools[fi as usize].profile.bytes_out;
        let attr_bytes = crate::store::document_bytes(&output);
        let node = self.cluster.container(completion.container).map(|c| c.node).unwrap_or(NodeId(0));
        let loc = Location { node, site: self.cluster.node(node).expect("node").site };
        let net = &self.config.network;
        let wb = if self.stores[s].external {
            let tier = net.tier(loc, self.db_location()).unwrap_or(Tier::Internet);
            let arrive = now + net.tier_delay(tier, attr_bytes + bytes_out, &mut rng);
            let done = self.db.serve(arrive, &mut rng);
            done + net.latency(tier).sample(&mut rng) - now
        } else {
            let (shard, _) = self.inv(slot).primary.expect("routed");
            let dst = self.stores[s].store.shard_location(shard);
            let tier = net.tier(loc, dst).unwrap_or(Tier::Internet);
            net.tier_delay(tier, attr_bytes + bytes_out, &mut rng)
        };
        let inv = self.inv_mut(slot);
        inv.output = Some(output);
        inv.write_back = wb;
        let at = now + wb + self.config.commit_time;
        self.queue.schedule(Ev::Commit(slot), at).expect("future");
    }

    fn commit(&mut self, slot: u32) {
        let now = self.now();
        let s = self.store_of(slot);
        if self.stores[s].retired {
            return self.fail(slot, FailReason::Redeployed, now);
        }
        let (obj, rev, primary) = {
            let i = self.inv(slot);
            (i.object, i.input_revision, i.primary)
        };
        if !self.stores[s].external {
            let (shard, epoch) = primary.expect("routed");
            if self.stores[s].store.shard_epoch(shard) != epoch {
                let at = self.stores[s].shard_killed_at[shard.0 as usize].max(self.inv(slot).arrival);
                return self.fail(slot, FailReason::PrimaryLost, at);
            }
        }
        let output = self.inv_mut(slot).output.take().expect("executed");
        let res = self.stores[s].store.commit(obj, output, rev, now);
        self.drain_store_events(s);
        match res {
            Ok(revision) => {
                self.log(|| format!("commit store={s} obj={obj} rev={revision} primary={}", primary.map_or("db".to_string(), |(p, e)| format!("{p}@{e}"))));
                self.finish(slot, Status::Completed, None, now, Some(revision));
            }
            Err(StoreError::StaleRevision { .. }) => self.fail(slot, FailReason::StaleRevision, now),
            Err(StoreError::ObjectLost(_)) => self.fail(slot, FailReason::ObjectLost, now),
            Err(StoreError::NoPrimary(_)) => self.fail(slot, FailReason::NoPrimary, now),
            Err(_) => self.fail(slot, FailReason::AllReplicasDown, now),
        }
    }

    fn fail(&mut self, slot: u32, reason: FailReason, end: SimTime) {
        self.finish(slot, Status::Failed, Some(reason), end, None);
    }

    fn reject(&mut self, slot: u32, reason: FailReason) {
        let end = match reason {
            FailReason::QueueTimeout => self.inv(slot).arrival + self.config.queue_timeout,
            _ => self.now(),
        };
        self.finish(slot, Status::Rejected, Some(reason), end, None);
    }

    fn breakdown(inv: &Inv, end: SimTime) -> Breakdown {
        let clamp = |t: SimTime| t.min(end).max(inv.arrival);
        let Some(d) = inv.dispatched else {
            return Breakdown { queue: end - inv.arrival, ..Default::default() };
        };
        let exec = inv.container.map_or(d, |c| c.at);
        let t1 = clamp(d);
        let t2 = clamp(d + inv.fetch);
        let t3 = clamp(exec);
        let t4 = clamp(exec + inv.write_back);
        let wait = t1 - inv.arrival;
        let cold = inv.cold.min(wait);
        Breakdown {
            queue: wait - cold,
            cold_start: cold,
            data_access: (t2 - t1) + (t4 - t3),
            execution: t3 - t2,
            commit: end.max(inv.arrival) - t4,
        }
    }

    fn finish(&mut self, slot: u32, status: Status, reason: Option<FailReason>, end: SimTime, revision: Option<u64>) {
        let inv = self.invs[slot as usize].take().expect("live invocation");
        self.free.push(slot);
        let end = end.max(inv.arrival);
        let outcome = InvocationOutcome {
            id: inv.id,
            class: inv.class,
            function: inv.func,
            object: inv.object,
            status,
            start: inv.arrival,
            end,
            breakdown: Self::breakdown(&inv, end),
            revision,
            node: inv.node,
            primary_node: inv.primary_node,
            data_tier: inv.tier,
            reason,
        };
        let p = &mut self.classes[inv.class as usize].pools[inv.func as usize];
        if inv.admitted {
            p.waiting = p.waiting.saturating_sub(1);
        }
        let w = &mut p.window;
        match status {
            Status::Completed => {
                self.counters.completed += 1;
                w.completed += 1;
                if let Some(n) = inv.primary_node {
                    if let Some(x) = w.by_node.get_mut(n.0 as usize) {
                        *x += 1;
                    }
                }
            }
            Status::Failed => {
                self.counters.failed += 1;
                w.failed += 1;
            }
            Status::Rejected => {
                self.counters.rejected += 1;
                w.rejected += 1;
            }
        }
        if status != Status::Completed {
            self.log(|| format!("{} id={} obj={} reason={}", status.as_str(), inv.id, inv.object, reason.map_or("", |r| r.as_str())));
        }
        self.sink.record(&outcome);
        if let Some((id, slot)) = &mut self.watch {
            if *id == inv.id {
                *slot = Some(outcome);
            }
        }
        if inv.locked {
            let store = self.classes[inv.class as usize].store;
            self.release(store, inv.object);
        }

        if let Some(chain) = inv.chain {
            if status == Status::Completed && chain.next < chain.functions.len() {
                let f = chain.functions[chain.next];
                let next = Chain { next: chain.next + 1, ..chain };
                self.begin(inv.class, f, inv.object, None, Some(next));
            } else if let Some(d) = chain.driver {
                if let DriverKind::Closed { end } = self.drivers[d as usize].kind {
                    if self.now() < end {
                        self.issue(d);
                    }
                }
            }
        }
    }

    /// Fills a container's free slots from its queue.
    fn drain_container(&mut self, cid: ContainerId) {
        let Some(Role::Function { class: ci, func: fi }) = self.roles.get(cid.0 as usize).copied().flatten() else {
            return;
        };
        if self.retiring[cid.0 as usize] {
            return;
        }
        let (node, local) = {
            let c = self.cluster.container(cid).expect("live");
            (c.node, self.classes[ci as usize].pools[fi as usize].local)
        };
        let key = if local { node.0 as usize } else { 0 };
        while self.cluster.container(cid).is_ok_and(|c| c.has_free_slot()) {
            let now = self.now();
            let p = &mut self.classes[ci as usize].pools[fi as usize];
            let Some(slot) = p.queues[key].pop_front() else { break };
            p.load.change(now, -1);
            if self.expired(slot) {
                self.reject(slot, FailReason::QueueTimeout);
                continue;
            }
            if !self.primary_still_valid(slot) {
                self.route(slot);
                continue;
            }
            self.start(slot, cid);
        }
    }

    fn primary_still_valid(&self, slot: u32) -> bool {
        let s = self.store_of(slot);
        let st = &self.stores[s];
        if st.external {
            return true;
        }
        let Some((shard, epoch)) = self.inv(slot).primary else { return false };
        st.store.shard_up(shard) && st.store.shard_epoch(shard) == epoch
    }

    fn purge_expired(&mut self) {
        let now = self.now();
        let timeout = self.config.queue_timeout;
        let mut expired = Vec::new();
        for ci in 0..self.classes.len() {
            for fi in 0..self.classes[ci].pools.len() {
                for qi in 0..self.classes[ci].pools[fi].queues.len() {
                    loop {
                        let front = self.classes[ci].pools[fi].queues[qi].front().copied();
                        match front {
                            Some(slot) if now >= self.inv(slot).arrival + timeout => {
                                let p = &mut self.classes[ci].pools[fi];
                                p.queues[qi].pop_front();
                                p.load.change(now, -1);
                                expired.push(slot);
                            }
                            _ => break,
                        }
                    }
                }
            }
        }
        for slot in expired {
            self.reject(slot, FailReason::QueueTimeout);
        }
    }

    fn on_ready(&mut self, cid: ContainerId, incarnation: u32) {
        if !self.cluster.mark_ready(cid, incarnation) {
            return;
        }
        let now = self.now();
        let Some(role) = self.roles.get(cid.0 as usize).copied().flatten() else { return };
        let first = !self.ever_ready[cid.0 as usize];
        self.ever_ready[cid.0 as usize] = true;
        self.log(|| format!("ready container={cid}"));
        let targets = self.config.failures.map(|f| f.targets);
        match role {
            Role::Shard { class, shard } => {
                let s = self.classes.get(class as usize).map_or(self.stores.len() - 1, |c| c.store);
                let s = self.stores.iter().position(|st| st.shards.contains(&cid)).unwrap_or(s);
                if !first {
                    self.stores[s].store.shard_recovered(shard, now);
                    self.log(|| format!("recover store={s} shard={shard}"));
                }
                if first && !self.stores[s].external && matches!(targets, Some(FailureTargets::Invokers | FailureTargets::All)) {
                    self.arm_failures(cid);
                }
            }
            Role::Function { .. } => {
                if first && matches!(targets, Some(FailureTargets::Functions | FailureTargets::All)) {
                    self.arm_failures(cid);
                }
                self.drain_container(cid);
                self.try_stop(cid);
            }
        }
    }

    fn arm_failures(&mut self, cid: ContainerId) {
        let cfg = self.config.failures.expect("failure model");
        let sched = FailureSchedule::new(cfg, self.random.stream("failure", cid.0 as u64), self.now());
        let at = sched.next_kill();
        self.failures[cid.0 as usize] = Some(sched);
        self.queue.schedule(Ev::Kill(cid), at).expect("future");
    }

    fn on_kill(&mut self, cid: ContainerId) {
        let now = self.now();
        let Some(sched) = self.failures.get_mut(cid.0 as usize).and_then(Option::as_mut) else { return };
        if self.cluster.container(cid).is_err() {
            return;
        }
        let cycle = sched.advance();
        let next = sched.next_kill();
        let cold = self.config.cluster.cold_start_delay;
        let restart_at = if cycle.recovered - cold > now { cycle.recovered - cold } else { now };
        self.cluster.kill(cid).expect("live container");
        self.killed_at[cid.0 as usize] = now;
        self.queue.schedule(Ev::Restart(cid), restart_at).expect("future");
        self.queue.schedule(Ev::Kill(cid), next.max(cycle.recovered)).expect("future");
        if let Some(Role::Shard { shard, .. }) = self.roles[cid.0 as usize] {
            if let Some(s) = self.stores.iter().position(|st| st.shards.contains(&cid)) {
                self.stores[s].store.shard_killed(shard, now);
                self.stores[s].shard_killed_at[shard.0 as usize] = now;
            }
        }
        self.log(|| format!("kill container={cid}"));
    }

    fn on_restart(&mut self, cid: ContainerId) {
        let now = self.now();
        if self.cluster.container(cid).is_err() || self.roles[cid.0 as usize].is_none() {
            return;
        }
        let ready_at = now + self.config.cluster.cold_start_delay;
        let inc = self.cluster.restart(cid, now, ready_at).expect("live container");
        self.queue.schedule(Ev::Ready { container: cid, incarnation: inc }, ready_at).expect("future");
    }

    fn window(&mut self, ci: u16, fi: u16, duration: Duration) -> MetricWindow {
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        let w = std::mem::replace(&mut p.window, WindowAcc { by_node: vec![0; p.by_node.len()], ..Default::default() });
        MetricWindow {
            duration,
            arrivals: w.arrivals,
            completed: w.completed,
            failed: w.failed,
            rejected: w.rejected,
            occupancy_secs: w.occupancy,
            concurrency_limit: p.concurrency,
        }
    }

    fn on_control(&mut self, ci: u16, fi: u16) {
        if self.classes[ci as usize].retired || self.classes[ci as usize].pools[fi as usize].controller.is_none() {
            return;
        }
        let interval = self.config.controller.interval;
        self.queue.schedule_in(Ev::Control { class: ci, func: fi }, interval);
        let shares = self.node_shares(ci, fi);
        let window = self.window(ci, fi, interval);
        let spare = self.spare_slots(ci, fi);
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        let current = p.containers.len() as u64;
        let local = p.local;
        let state = p.controller.as_mut().expect("checked");
        let headroom = state.config.headroom;
        let res = control_step(state, &window, |plan| {
            let need = if local { split_by_share(plan.guaranteed_rate * (1.0 + headroom), plan.kappa, &shares).iter().map(|&x| x as u64).sum() } else { plan.warm_containers as u64 };
            need <= current + spare
        });
        let name = self.classes[ci as usize].resolved.name.clone();
        let fname = self.classes[ci as usize].resolved.functions[fi as usize].name.clone();
        match res {
            Ok(Some(action)) => {
                // Size per node from the window that triggered the change.
                let p = &mut self.classes[ci as usize].pools[fi as usize];
                p.window.by_node = shares.iter().map(|s| (s * 1e6) as u64).collect();
                let _ = self.apply_plan(ci, fi, action.plan.guaranteed_rate, action.plan.kappa);
                let p = &mut self.classes[ci as usize].pools[fi as usize];
                p.window.by_node.iter_mut().for_each(|x| *x = 0);
                let warm = p.containers.len();
                self.log(|| {
                    format!(
                        "reconfig class={name} fn={fname} from={} to={} warm={warm} kappa={:.1} demand={:.1} reason={}",
                        action.from,
                        action.to,
                        action.plan.kappa,
                        action.plan.guaranteed_rate,
                        action.reason.as_str()
                    )
                });
            }
            Ok(None) => {}
            Err(EnforcementError::InfeasiblePlan { warm_containers }) => {
                self.log(|| format!("infeasible class={name} fn={fname} warm={warm_containers}"));
            }
            Err(e) => self.log(|| format!("controller-error class={name} fn={fname} {e}")),
        }
    }

    fn on_autoscale(&mut self, ci: u16, fi: u16) {
        if self.classes[ci as usize].retired {
            return;
        }
        let now = self.now();
        let tick = self.config.knative.tick;
        self.queue.schedule_in(Ev::Autoscale { class: ci, func: fi }, tick);
        let ready = {
            let p = &self.classes[ci as usize].pools[fi as usize];
            p.containers.iter().filter(|&&id| self.cluster.container(id).is_ok_and(|c| c.is_ready())).count() as u32
        };
        let p = &mut self.classes[ci as usize].pools[fi as usize];
        let observed = p.load.take_mean(now, tick);
        let queued = p.queues.iter().map(|q| q.len()).sum::<usize>();
        let Some(scaler) = p.scaler.as_mut() else { return };
        let mut desired = scaler.tick(now, observed, ready);
        if queued > 0 {
            desired = desired.max(1);
        }
        let have = p.containers.len() as u32;
        if desired != have {
            self.resize(ci, fi, desired);
            self.log(|| format!("scale class={ci} fn={fi} from={have} to={desired} observed={observed:.1}"));
        }
    }

    fn on_sample(&mut self) {
        let now = self.now();
        self.queue.schedule_in(Ev::Sample, Duration::from_secs(1));
        self.purge_expired();
        let cs = self.cluster.core_seconds(now);
        let cores = cs - self.last_core_seconds;
        self.last_core_seconds = cs;
        let warm = self
            .classes
            .iter()
            .flat_map(|c| c.pools.iter().flat_map(|p| p.containers.iter()))
            .filter(|&&id| self.cluster.container(id).is_ok_and(|c| c.is_ready()))
            .count() as u32;
        let replicas = self.classes.iter().filter(|c| !c.retired).map(|c| c.replicas).max().unwrap_or(0);
        self.sink.sample(&ResourceSample { at: now, warm_containers: warm, replicas, cores_allocated: cores });
    }

    fn pump(&mut self) {
        while let Some(slot) = self.runnable.pop_front() {
            self.route(slot);
        }
    }

    fn handle(&mut self, ev: Ev) {
        self.dispatch_event(ev);
        self.pump();
    }

    fn dispatch_event(&mut self, ev: Ev) {
        match ev {
            Ev::Arrive(d) => {
                self.issue(d);
                self.schedule_next_arrival(d);
            }
            Ev::Retry(slot) => self.route(slot),
            Ev::ExecDone(slot) => self.exec_done(slot),
            Ev::Commit(slot) => self.commit(slot),
            Ev::Ready { container, incarnation } => self.on_ready(container, incarnation),
            Ev::Kill(c) => self.on_kill(c),
            Ev::Restart(c) => self.on_restart(c),
            Ev::Control { class, func } => self.on_control(class, func),
            Ev::Autoscale { class, func } => self.on_autoscale(class, func),
            Ev::Sample => self.on_sample(),
        }
    }

    /// Structural checks over cluster and pools.
    pub fn audit(&self) -> Result<(), String> {
        self.cluster.audit()?;
        for c in &self.classes {
            for p in &c.pools {
                for &id in &p.containers {
                    let k = self.cluster.container(id).map_err(|e| e.to_string())?;
                    if k.in_flight() > p.concurrency {
                        return Err(format!("{id} exceeds its pool concurrency"));
                    }
                }
            }
        }
        Ok(())
    }
}

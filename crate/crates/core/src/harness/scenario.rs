use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::enforcement::PolicyKind;
use crate::runtime::{DeployOptions, LoadTarget, NodeSpec, PlatformConfig};
use crate::sim::{FailureConfig, NetworkModel, SiteId};

use super::load::LoadPattern;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: String,
    pub count: u32,
    #[serde(default)]
    pub attributes: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub target: LoadTarget,
    pub pattern: LoadPattern,
}

/// One experiment: platform, classes, objects and offered load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub platform: PlatformConfig,
    /// Class package, as YAML text.
    pub manifest: String,
    #[serde(default)]
    pub deploy: DeployOptions,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub loads: Vec<LoadSpec>,
    /// Length of the unmeasured round run by policies that take one.
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    pub duration_s: f64,
    /// Grace after the measured round for in-flight work; defaults to the
    /// queue timeout plus five seconds.
    #[serde(default)]
    pub drain_s: Option<f64>,
}

fn default_warmup() -> f64 {
    60.0
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scenarios serialize")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(format!("{}: {m}", self.name)));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.warmup_s.is_finite() && self.warmup_s >= 0.0) {
            return bad(format!("warmup_s must be non-negative, got {}", self.warmup_s));
        }
        if self.drain_s.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
            return bad("drain_s must be non-negative".into());
        }
        if self.loads.is_empty() {
            return bad("at least one load is required".into());
        }
        for l in &self.loads {
            l.pattern.validate().or_else(|e| bad(e))?;
        }
        Ok(())
    }

    pub fn with_policy(&self, policy: PolicyKind) -> Scenario {
        let mut s = self.clone();
        s.deploy = DeployOptions { policy, ..DeployOptions::policy(policy) };
        if policy == PolicyKind::ManualRefinement {
            s.deploy.pods = self.deploy.pods.max(1);
        }
        s
    }

    pub fn drain(&self) -> Duration {
        self.drain_s.map_or(self.platform.queue_timeout + Duration::from_secs(5), crate::sim::secs)
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 11] = [
    "tp-chatty-10k",
    "tp-chatty-10k-burst",
    "tp-data-400",
    "tp-compute-20",
    "avail-99",
    "avail-99.9",
    "avail-99.99",
    "avail-99.999",
    "latency-local-vs-remote",
    "refinement-manual-vs-auto",
    "sweep-services-1to10",
];

/// Three nodes of 64 cores in one site.
pub fn default_cluster() -> Vec<NodeSpec> {
    (0..3).map(|i| NodeSpec { name: format!("node-{i}"), site: SiteId(0), cores: 64.0 }).collect()
}

fn profile_yaml(archetype: &str) -> &'static str {
    match archetype {
        "chatty" => "{ archetype: chatty, serviceTime: { meanMs: 1.0, cv: 0.2 }, bytesIn: 1024, bytesOut: 1024, chainLength: 1 }",
        "data-intensive" => "{ archetype: data-intensive, serviceTime: { meanMs: 50.0, cv: 0.2 }, bytesIn: 524288, bytesOut: 262144 }",
        _ => "{ archetype: compute-intensive, serviceTime: { meanMs: 2000.0, cv: 0.1 }, bytesIn: 65536, bytesOut: 65536 }",
    }
}

/// Single-method class with a structured `doc` key.
pub fn single_method_manifest(class: &str, function: &str, archetype: &str, qos: &[(&str, String)], locality: &str) -> String {
    let mut class_qos = format!("      locality: {locality}\n");
    let mut fn_qos = String::new();
    for (k, v) in qos {
        match *k {
            "availability" => class_qos.push_str(&format!("      availability: {v}\n")),
            _ => fn_qos.push_str(&format!("          {k}: {v}\n")),
        }
    }
    let fn_qos = if fn_qos.is_empty() { String::new() } else { format!("        qos:\n{fn_qos}") };
    format!(
        "classes:\n  - name: {class}\n    qos:\n{class_qos}    keySpecs:\n      - name: doc\n        kind: structured\n    functions:\n      - name: {function}\n{fn_qos}        x-sim: {}\n",
        profile_yaml(archetype)
    )
}

/// Ten-key document used as object state.
pub fn chatty_document() -> Value {
    let m: serde_json::Map<String, Value> = (0..10).map(|i| (format!("k{i}"), json!(0))).collect();
    json!({ "doc": m })
}

fn base(name: &str, manifest: String, class: &str, function: &str, pattern: LoadPattern, duration_s: f64) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed: 1,
        platform: PlatformConfig { nodes: default_cluster(), ..Default::default() },
        manifest,
        deploy: DeployOptions::default(),
        objects: vec![ObjectSpec { class: class.to_string(), count: 1000, attributes: chatty_document() }],
        loads: vec![LoadSpec { target: LoadTarget { class: class.to_string(), functions: vec![function.to_string()], objects: vec![] }, pattern }],
        warmup_s: 60.0,
        duration_s,
        drain_s: None,
    }
}

/// Guaranteed-throughput run for one workload archetype.
pub fn throughput_scenario(name: &str, archetype: &str, rate: u64) -> Scenario {
    let manifest = single_method_manifest("Workload", "step", archetype, &[("throughput", rate.to_string())], "Local");
    base(name, manifest, "Workload", "step", LoadPattern::ConstantRate { rps: rate as f64, poisson: false }, 60.0)
}

/// The chatty 10k class driven by one-second bursts after idle minutes.
pub fn burst_scenario(seed: u64) -> Scenario {
    let mut s = throughput_scenario("tp-chatty-10k-burst", "chatty", 10_000);
    s.seed = seed;
    s.loads[0].pattern = LoadPattern::Burst { rps: 10_000.0, idle_s: 60.0, burst_s: 1.0 };
    s.warmup_s = 0.0;
    s.duration_s = 305.0;
    s
}

/// Availability run: 200 rps against a class requiring `target` percent,
/// with invoker failures every three minutes.
pub fn availability_scenario(target: &str, seed: u64) -> Scenario {
    let manifest =
        single_method_manifest("Ledger", "update", "chatty", &[("availability", target.to_string()), ("throughput", "200".into())], "None");
    let mut s = base(&format!("avail-{target}"), manifest, "Ledger", "update", LoadPattern::ConstantRate { rps: 200.0, poisson: false }, 5400.0);
    s.seed = seed;
    s.platform.failures = Some(FailureConfig::default());
    s
}

/// Where the state lives relative to the code in the latency comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    Local,
    NoneDatacenter,
    NoneInternet,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Local, Placement::NoneDatacenter, Placement::NoneInternet];

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Local => "local",
            Placement::NoneDatacenter => "none-datacenter",
            Placement::NoneInternet => "none-internet",
        }
    }
}

/// Ten-step chatty chains at 200 chains per second.
pub fn latency_scenario(placement: Placement) -> Scenario {
    let locality = if placement == Placement::Local { "Local" } else { "None" };
    let manifest = single_method_manifest("Pipeline", "step", "chatty", &[("throughput", "2000".into())], locality);
    let mut s = base(
        &format!("latency-{}", placement.as_str()),
        manifest,
        "Pipeline",
        "step",
        LoadPattern::ConstantRate { rps: 200.0, poisson: false },
        60.0,
    );
    s.loads[0].target.functions = vec!["step".to_string(); 10];
    s.warmup_s = 30.0;
    s.platform.controller.headroom = 0.25;
    s.platform.function_cores = 4.0;
    match placement {
        Placement::Local => {}
        Placement::NoneDatacenter => {
            s.platform.store_nodes = vec!["node-0".into(), "node-1".into()];
            s.platform.function_nodes = vec!["node-2".into()];
        }
        Placement::NoneInternet => {
            s.platform.nodes[2].site = SiteId(1);
            s.platform.network = NetworkModel::preset(25.0, 2);
            s.platform.store_nodes = vec!["node-0".into(), "node-1".into()];
            s.platform.function_nodes = vec!["node-2".into()];
        }
    }
    s
}

/// `k` independent services, each guaranteed 500 rps and offered that much.
pub fn sweep_scenario(k: u32) -> Scenario {
    let mut manifest = String::from("classes:\n");
    let mut loads = Vec::new();
    let mut objects = Vec::new();
    for i in 0..k {
        let one = single_method_manifest(&format!("Svc{i}"), "call", "chatty", &[("throughput", "500".into())], "Local");
        manifest.push_str(one.strip_prefix("classes:\n").expect("manifest header"));
        loads.push(LoadSpec {
            target: LoadTarget { class: format!("Svc{i}"), functions: vec!["call".into()], objects: vec![] },
            pattern: LoadPattern::ConstantRate { rps: 500.0, poisson: false },
        });
        objects.push(ObjectSpec { class: format!("Svc{i}"), count: 200, attributes: chatty_document() });
    }
    Scenario {
        name: format!("sweep-services-{k}"),
        seed: 1,
        platform: PlatformConfig { nodes: default_cluster(), ..Default::default() },
        manifest,
        deploy: DeployOptions::default(),
        objects,
        loads,
        warmup_s: 30.0,
        duration_s: 30.0,
        drain_s: None,
    }
}

/// Scenarios behind a preset name, with `seed` applied.
pub fn preset(name: &str, seed: u64) -> Result<Vec<Scenario>, HarnessError> {
    let mut v = match name {
        "tp-chatty-10k" => vec![throughput_scenario(name, "chatty", 10_000)],
        "tp-chatty-10k-burst" => vec![burst_scenario(seed)],
        "tp-data-400" => vec![throughput_scenario(name, "data-intensive", 400)],
        "tp-compute-20" => vec![throughput_scenario(name, "compute-intensive", 20)],
        "avail-99" | "avail-99.9" | "avail-99.99" | "avail-99.999" => vec![availability_scenario(&name[6..], seed)],
        "latency-local-vs-remote" => Placement::ALL.into_iter().map(latency_scenario).collect(),
        "refinement-manual-vs-auto" => vec![refinement_base()],
        "sweep-services-1to10" => (1..=10).map(sweep_scenario).collect(),
        _ => return Err(HarnessError::UnknownPreset(name.to_string())),
    };
    for s in &mut v {
        s.seed = seed;
        s.platform.seed = seed;
    }
    Ok(v)
}

/// The chatty 10k scenario with 30-second rounds, used by both sides of the
/// refinement comparison.
pub fn refinement_base() -> Scenario {
    let mut s = throughput_scenario("refinement-manual-vs-auto", "chatty", 10_000);
    s.duration_s = 30.0;
    s.warmup_s = 30.0;
    s
}

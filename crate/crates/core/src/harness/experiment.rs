use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use serde::Serialize;

use crate::enforcement::{Deployment, ManualRefinement, PolicyKind, RefinementPhase};
use crate::hash::StableHasher;
use crate::runtime::{DeployOptions, DeploymentInfo, InvocationOutcome, OutcomeSink, Platform, ResourceSample};
use crate::sim::{secs, SimRng, SimTime};

use super::load::generate_load;
use super::metrics::{MetricsCollector, SeriesRow, Summary};
use super::scenario::Scenario;
use super::HarnessError;

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub deployments: Vec<DeploymentInfo>,
    pub summary: Summary,
    #[serde(skip)]
    pub series: Vec<SeriesRow>,
    #[serde(skip)]
    pub trace: Vec<String>,
}

#[derive(Clone)]
struct SharedCollector(Rc<RefCell<MetricsCollector>>);

impl OutcomeSink for SharedCollector {
    fn record(&mut self, o: &InvocationOutcome) {
        self.0.borrow_mut().record(o);
    }

    fn sample(&mut self, s: &ResourceSample) {
        self.0.borrow_mut().sample(s);
    }
}

fn attach_loads(platform: &mut Platform, scenario: &Scenario, round: &str, start: SimTime, end: SimTime) -> Result<(), HarnessError> {
    for (i, l) in scenario.loads.iter().enumerate() {
        let seed = StableHasher::new(scenario.seed).str("arrivals").str(round).u64(i as u64).finish();
        generate_load(platform, &l.target, &l.pattern, start, end, SimRng::seed_from_u64(seed))?;
    }
    Ok(())
}

/// Builds the platform, deploys the scenario's classes and creates its objects.
pub fn prepare(scenario: &Scenario, trace: bool) -> Result<(Platform, Vec<DeploymentInfo>), HarnessError> {
    scenario.validate()?;
    let mut config = scenario.platform.clone();
    config.seed = scenario.seed;
    config.trace |= trace;
    let mut platform = Platform::new(config)?;
    let deployments = platform.deploy_manifest(&scenario.manifest, scenario.deploy)?;
    for o in &scenario.objects {
        for _ in 0..o.count {
            platform.create_object(&o.class, o.attributes.clone(), BTreeMap::new())?;
        }
    }
    Ok((platform, deployments))
}

/// Runs one scenario: optional warm-up round, measured round, then drain.
pub fn run_experiment(scenario: &Scenario, trace: bool) -> Result<ExperimentResult, HarnessError> {
    let (mut platform, _) = prepare(scenario, trace)?;
    let policy = scenario.deploy.policy;
    if policy.has_warmup_round() && scenario.warmup_s > 0.0 {
        let t = platform.now();
        let end = t + secs(scenario.warmup_s);
        attach_loads(&mut platform, scenario, "warmup", t, end)?;
        platform.run_until(end);
    }
    let start = platform.now();
    let end = start + secs(scenario.duration_s);
    let collector = Rc::new(RefCell::new(MetricsCollector::new(start, end)));
    platform.set_sink(Box::new(SharedCollector(collector.clone())));
    attach_loads(&mut platform, scenario, "measure", start, end)?;
    platform.run_until(end + scenario.drain());
    let pending = platform.pending();
    platform.audit().map_err(HarnessError::Audit)?;
    let mut c = collector.borrow_mut();
    c.set_pending_at_cutoff(pending);
    let deployments = scenario
        .objects
        .iter()
        .map(|o| o.class.as_str())
        .chain(scenario.loads.iter().map(|l| l.target.class.as_str()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|class| deployment_snapshot(&platform, class, policy))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentResult {
        scenario: scenario.name.clone(),
        policy,
        seed: scenario.seed,
        deployments,
        summary: c.summary(),
        series: c.series(),
        trace: platform.take_trace(),
    })
}

fn deployment_snapshot(p: &Platform, class: &str, policy: PolicyKind) -> Result<DeploymentInfo, HarnessError> {
    Ok(DeploymentInfo {
        class: class.to_string(),
        template: p.template(class)?.to_string(),
        policy,
        replicas: p.replicas(class)?,
        shards: p.shard_containers(class)?.len() as u32,
        warm_containers: p.warm_containers(class)?,
        warnings: Vec::new(),
    })
}

/// Runs the same scenario under each policy.
pub fn compare_policies(scenario: &Scenario, policies: &[PolicyKind], trace: bool) -> Result<Vec<ExperimentResult>, HarnessError> {
    policies.iter().map(|&p| run_experiment(&scenario.with_policy(p), trace)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementRound {
    pub pods: u32,
    pub concurrency: u32,
    pub achieved_rps: f64,
    pub error_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementReport {
    pub target_rps: f64,
    pub manual_rounds: Vec<RefinementRound>,
    /// Rounds spent scaling up, counting the first one that met the target.
    pub manual_scale_up_rounds: u32,
    pub manual_met_target: bool,
    pub manual_final: Option<Deployment>,
    pub auto: ExperimentResult,
    pub auto_met_target: bool,
}

/// Hand tuning, one fresh deployment per round, against the automatic
/// controller given a single warm-up round.
pub fn refinement_comparison(base: &Scenario, target_rps: f64, tolerance: f64, max_rounds: u32) -> Result<RefinementReport, HarnessError> {
    let mut dev = ManualRefinement::new(target_rps, tolerance, Deployment { pods: 1, concurrency: 1 });
    let mut rounds = Vec::new();
    let mut met = false;
    while dev.rounds < max_rounds {
        let d = dev.current;
        let mut s = base.with_policy(PolicyKind::ManualRefinement);
        s.deploy = DeployOptions { policy: PolicyKind::ManualRefinement, pods: d.pods, concurrency: d.concurrency };
        s.name = format!("{}-manual-{}", base.name, dev.rounds + 1);
        let r = run_experiment(&s, false)?;
        rounds.push(RefinementRound { pods: d.pods, concurrency: d.concurrency, achieved_rps: r.summary.achieved_rps, error_ratio: r.summary.error_ratio });
        let next = dev.observe(r.summary.achieved_rps);
        if dev.phase != RefinementPhase::ScaleUp {
            met = true;
        }
        if next.is_none() || met {
            break;
        }
    }
    let auto = run_experiment(&base.with_policy(PolicyKind::Oprc), false)?;
    let auto_met_target = auto.summary.achieved_rps >= target_rps * tolerance;
    Ok(RefinementReport {
        target_rps,
        manual_rounds: rounds,
        manual_scale_up_rounds: dev.scale_up_rounds,
        manual_met_target: met,
        manual_final: dev.best,
        auto,
        auto_met_target,
    })
}

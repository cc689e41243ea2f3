//! Property checks shared by the `properties` test target and the acceptance runner.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::time::Duration;

use oaas_core::enforcement::PolicyKind;
use oaas_core::harness::{run_experiment, scenario, write_csv, LoadPattern};
use oaas_core::runtime::{
    Counters, DeployOptions, InvocationOutcome, LoadTarget, OutcomeSink, Platform, PlatformConfig, ResourceSample,
};
use oaas_core::sim::{Cluster, ClusterConfig, FailureConfig, FailureTargets, FunctionRef, Millicores, NetworkModel, SimRng, SimTime, SiteId, Location, NodeId};
use oaas_core::store::{HashRing, ObjectId, ObjectStore, ShardId, StoreConfig, StoreError};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use serde_json::json;

pub const COUNTER: &str = r#"
classes:
  - name: Counter
    qos:
      availability: 99.9
      locality: Local
    keySpecs:
      - name: doc
        kind: structured
    functions:
      - name: bump
        qos:
          throughput: 300
        x-sim:
          archetype: chatty
          serviceTime: { meanMs: 1.0, cv: 0.2 }
          bytesIn: 1024
          bytesOut: 1024
"#;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn check<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

#[derive(Clone, Default)]
pub struct Recorder {
    pub outcomes: Rc<RefCell<Vec<InvocationOutcome>>>,
    pub samples: Rc<RefCell<Vec<ResourceSample>>>,
}

impl OutcomeSink for Recorder {
    fn record(&mut self, o: &InvocationOutcome) {
        self.outcomes.borrow_mut().push(o.clone());
    }

    fn sample(&mut self, s: &ResourceSample) {
        self.samples.borrow_mut().push(*s);
    }
}

pub struct Run {
    pub outcomes: Vec<InvocationOutcome>,
    pub samples: Vec<ResourceSample>,
    pub trace: Vec<String>,
    pub counters: Counters,
    pub pending: u64,
    pub capacity_cores: f64,
    pub audit: Result<(), String>,
}

pub fn policy_strategy() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(PolicyKind::ALL.to_vec())
}

/// A loaded Counter run with shard and function failures.
pub fn small_run(seed: u64, policy: PolicyKind, rps: f64, secs: u64, failures: bool) -> Run {
    let mut config = PlatformConfig { seed, trace: true, ..Default::default() };
    if failures {
        config.failures = Some(FailureConfig {
            mtbf: Duration::from_secs(6),
            recovery_time: Duration::from_secs(2),
            jitter_stddev: Duration::from_secs(1),
            targets: FailureTargets::All,
        });
    }
    let capacity_cores = config.nodes.iter().map(|n| n.cores).sum();
    let mut p = Platform::new(config).expect("valid config");
    let opts = DeployOptions { pods: 4, ..DeployOptions::policy(policy) };
    p.deploy_manifest(COUNTER, opts).expect("deploys");
    for _ in 0..40 {
        p.create_object("Counter", json!({"doc": {"k0": 0, "k1": 0}}), BTreeMap::new()).expect("object");
    }
    let rec = Recorder::default();
    p.set_sink(Box::new(rec.clone()));
    let target = LoadTarget { class: "Counter".into(), functions: vec!["bump".into(), "bump".into()], objects: vec![] };
    let start = p.now();
    let end = start + Duration::from_secs(secs);
    let rng = SimRng::seed_from_u64(seed);
    let arrivals = oaas_core::harness::arrivals(&LoadPattern::ConstantRate { rps, poisson: true }, start, end, rng);
    p.add_open_load(&target, arrivals).expect("load");
    let mut audit = Ok(());
    let mut t = start;
    while t < end + Duration::from_secs(40) {
        t += Duration::from_secs(1);
        p.run_until(t);
        if audit.is_ok() {
            audit = p.audit();
        }
    }
    let pending = p.pending();
    let outcomes = rec.outcomes.borrow().clone();
    let samples = rec.samples.borrow().clone();
    Run { outcomes, samples, trace: p.take_trace(), counters: p.counters(), pending, capacity_cores, audit }
}

fn parse_kv(line: &str) -> (f64, &str, HashMap<&str, &str>) {
    let mut it = line.split_whitespace();
    let t: f64 = it.next().and_then(|x| x.parse().ok()).unwrap_or(f64::NAN);
    let kind = it.next().unwrap_or("");
    let kv = it.filter_map(|w| w.split_once('=')).collect();
    (t, kind, kv)
}

/// Replays elect and commit lines: every commit must come from the object's
/// current primary, and revisions must run 1, 2, 3 ... without gaps.
pub fn audit_trace(trace: &[String]) -> Result<usize, String> {
    let mut lines: Vec<(f64, usize, &String)> = trace.iter().enumerate().map(|(i, l)| (parse_kv(l).0, i, l)).collect();
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut primary: HashMap<(String, String), String> = HashMap::new();
    let mut revision: HashMap<(String, String), u64> = HashMap::new();
    let mut epochs: HashMap<(String, String), u32> = HashMap::new();
    let mut commits = 0;
    for (_, _, line) in lines {
        let (_, kind, kv) = parse_kv(line);
        match kind {
            "elect" => {
                let key = (kv["store"].to_string(), kv["obj"].to_string());
                if let Some(cur) = primary.get(&key) {
                    if cur != kv["from"] {
                        return Err(format!("election from {} but primary was {cur}: {line}", kv["from"]));
                    }
                }
                primary.insert(key, kv["to"].to_string());
            }
            "commit" => {
                commits += 1;
                let key = (kv["store"].to_string(), kv["obj"].to_string());
                let rev: u64 = kv["rev"].parse().map_err(|_| format!("bad rev: {line}"))?;
                let prev = revision.insert(key.clone(), rev).unwrap_or(0);
                if rev != prev + 1 {
                    return Err(format!("revision gap {prev} -> {rev}: {line}"));
                }
                let by = kv["primary"];
                if by == "db" {
                    continue;
                }
                let (shard, epoch) = by.split_once('@').ok_or_else(|| format!("bad primary: {line}"))?;
                let epoch: u32 = epoch.parse().map_err(|_| format!("bad epoch: {line}"))?;
                match primary.get(&key) {
                    Some(cur) if cur != shard => return Err(format!("commit by {shard} while {cur} is primary: {line}")),
                    Some(_) => {}
                    None => {
                        primary.insert(key.clone(), shard.to_string());
                    }
                }
                let ek = (key.0.clone(), shard.to_string());
                let seen = epochs.entry(ek).or_insert(epoch);
                if epoch < *seen {
                    return Err(format!("epoch went backwards on {shard}: {line}"));
                }
                *seen = epoch;
            }
            _ => {}
        }
    }
    Ok(commits)
}

/// Adding a member moves only keys to it; removing one moves only its keys.
pub fn ring_minimal_disruption(cases: u32) -> Result<(), String> {
    let keys = 10_000u64;
    check(cases, (1u32..12, any::<u64>(), 1u32..64), |(members, seed, vnodes)| {
        let mut ring = HashRing::new(vnodes, seed);
        for m in 0..members {
            ring.insert(ShardId(m)).unwrap();
        }
        let before: Vec<ShardId> = (0..keys).map(|k| ring.lookup(k).unwrap()).collect();
        let added = ShardId(members);
        ring.insert(added).unwrap();
        let mut moved = 0;
        for k in 0..keys {
            let now = ring.lookup(k).unwrap();
            if now != before[k as usize] {
                prop_assert_eq!(now, added, "key {} moved between old members", k);
                moved += 1;
            }
        }
        prop_assert!(moved > 0 || keys == 0);
        ring.remove(added).unwrap();
        for k in 0..keys {
            prop_assert_eq!(ring.lookup(k).unwrap(), before[k as usize]);
        }
        if members > 1 {
            let gone = ShardId(seed as u32 % members);
            ring.remove(gone).unwrap();
            for k in 0..keys {
                let now = ring.lookup(k).unwrap();
                prop_assert_ne!(now, gone);
                if before[k as usize] != gone {
                    prop_assert_eq!(now, before[k as usize], "key {} moved off a surviving member", k);
                }
            }
        }
        Ok(())
    })
}

pub fn single_primary(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 100.0f64..400.0), |(seed, rps)| {
        let run = small_run(seed, PolicyKind::Oprc, rps, 20, true);
        let commits = audit_trace(&run.trace).map_err(TestCaseError::fail)?;
        prop_assert!(commits > 0);
        prop_assert!(run.trace.iter().any(|l| l.contains(" kill ")), "no failures were injected");
        Ok(())
    })
}

#[derive(Debug, Clone)]
enum StoreOp {
    Commit(u8),
    Stale(u8),
    Kill(u8),
    Recover(u8),
    Wait(u16),
}

fn store_op() -> impl Strategy<Value = StoreOp> {
    prop_oneof![
        4 => any::<u8>().prop_map(StoreOp::Commit),
        1 => any::<u8>().prop_map(StoreOp::Stale),
        1 => any::<u8>().prop_map(StoreOp::Kill),
        1 => any::<u8>().prop_map(StoreOp::Recover),
        2 => (0u16..3000).prop_map(StoreOp::Wait),
    ]
}

/// Successful commits number each object's revisions 1, 2, 3 ... whatever
/// failures and stale writes happen in between.
pub fn revision_gap_freedom(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..4, 3u32..6, prop::collection::vec(store_op(), 1..200)), |(seed, replicas, shards, ops)| {
        let config = StoreConfig { replicas, hash_seed: seed, persistent: true, ..Default::default() };
        let mut store = ObjectStore::new(config, NetworkModel::default(), SimRng::seed_from_u64(seed));
        let mut now = SimTime::ZERO;
        for s in 0..shards {
            store.add_shard(Location { node: NodeId(s), site: SiteId(0) }, now);
        }
        let objects = 8u64;
        for _ in 0..objects {
            store.create("C", json!({"v": 0}), BTreeMap::new(), now).unwrap();
        }
        let mut committed = vec![0u64; objects as usize];
        for op in ops {
            match op {
                StoreOp::Commit(o) | StoreOp::Stale(o) => {
                    let id = ObjectId(o as u64 % objects);
                    let cur = store.revision(id).unwrap();
                    let expected = if matches!(op, StoreOp::Stale(_)) { cur.wrapping_sub(1) } else { cur };
                    match store.commit(id, json!({"v": cur + 1}), expected, now) {
                        Ok(rev) => {
                            prop_assert!(expected == cur, "stale write accepted");
                            prop_assert_eq!(rev, committed[id.0 as usize] + 1);
                            committed[id.0 as usize] = rev;
                        }
                        Err(StoreError::StaleRevision { .. }) => prop_assert!(expected != cur),
                        Err(_) => {}
                    }
                    prop_assert_eq!(store.revision(id).unwrap(), committed[id.0 as usize]);
                }
                StoreOp::Kill(s) => store.shard_killed(ShardId(s as u32 % shards), now),
                StoreOp::Recover(s) => {
                    let sh = ShardId(s as u32 % shards);
                    if !store.shard_up(sh) {
                        store.shard_recovered(sh, now);
                    }
                }
                StoreOp::Wait(ms) => now += Duration::from_millis(ms as u64),
            }
        }
        Ok(())
    })
}

/// Every submitted invocation ends exactly once, as completed, failed or rejected.
pub fn conservation(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), policy_strategy(), 50.0f64..600.0, any::<bool>()), |(seed, policy, rps, failures)| {
        let run = small_run(seed, policy, rps, 15, failures);
        prop_assert_eq!(run.pending, 0);
        let c = run.counters;
        prop_assert_eq!(c.submitted, c.completed + c.failed + c.rejected);
        prop_assert_eq!(run.outcomes.len() as u64, c.submitted);
        let mut ids: Vec<u64> = run.outcomes.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len() as u64, c.submitted);
        Ok(())
    })
}

fn scenario_csv(seed: u64, policy: PolicyKind) -> Vec<u8> {
    let mut s = scenario::throughput_scenario("det", "chatty", 800).with_policy(policy);
    s.seed = seed;
    s.objects[0].count = 100;
    s.warmup_s = 5.0;
    s.duration_s = 10.0;
    s.platform.failures = Some(FailureConfig { mtbf: Duration::from_secs(4), ..FailureConfig::default() });
    let r = run_experiment(&s, false).expect("runs");
    let mut buf = Vec::new();
    write_csv(&r.series, &mut buf).expect("csv");
    buf
}

/// The same seed gives byte-identical series.
pub fn determinism(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), policy_strategy()), |(seed, policy)| {
        let a = scenario_csv(seed, policy);
        let b = scenario_csv(seed, policy);
        prop_assert!(a == b, "series differ for seed {}", seed);
        prop_assert!(a.len() > 100);
        Ok(())
    })
}

#[derive(Debug, Clone)]
enum ClusterOp {
    Start(u8, u16),
    Stop(u8),
    Kill(u8),
}

/// Reservations never exceed node capacity, in the bare cluster or under load.
pub fn capacity(cases: u32) -> Result<(), String> {
    let op = prop_oneof![
        3 => (any::<u8>(), 1u16..3000).prop_map(|(n, m)| ClusterOp::Start(n, m)),
        1 => any::<u8>().prop_map(ClusterOp::Stop),
        1 => any::<u8>().prop_map(ClusterOp::Kill),
    ];
    check(cases, prop::collection::vec(op, 1..300), |ops| {
        let mut c = Cluster::new(ClusterConfig::default());
        let nodes: Vec<_> = (0..3).map(|i| c.add_node(format!("n{i}"), SiteId(0), Millicores::from_cores(4.0))).collect();
        let mut live = Vec::new();
        let now = SimTime::ZERO;
        for op in ops {
            match op {
                ClusterOp::Start(n, m) => {
                    let node = nodes[n as usize % nodes.len()];
                    let free = c.node(node).unwrap().free();
                    match c.start_container(FunctionRef::new("C", "f"), node, Millicores(m as u32), 1, now) {
                        Ok((id, _)) => {
                            prop_assert!(m as u32 <= free.0);
                            live.push(id);
                        }
                        Err(_) => prop_assert!(m as u32 > free.0),
                    }
                }
                ClusterOp::Stop(i) if !live.is_empty() => {
                    let id = live.swap_remove(i as usize % live.len());
                    c.stop(id, now).unwrap();
                }
                ClusterOp::Kill(i) if !live.is_empty() => {
                    c.kill(live[i as usize % live.len()]).unwrap();
                }
                _ => {}
            }
            c.audit().map_err(TestCaseError::fail)?;
            prop_assert!(c.total_allocated() <= c.total_capacity());
        }
        Ok(())
    })?;
    check(cases.div_ceil(4).max(2), (any::<u64>(), policy_strategy(), 100.0f64..2000.0), |(seed, policy, rps)| {
        let run = small_run(seed, policy, rps, 10, true);
        run.audit.clone().map_err(TestCaseError::fail)?;
        for s in &run.samples {
            prop_assert!(s.cores_allocated <= run.capacity_cores + 1e-9, "{} cores > {}", s.cores_allocated, run.capacity_cores);
        }
        Ok(())
    })
}

/// queue + cold start + data access + execution + commit = end - start.
pub fn breakdown_identity(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), policy_strategy(), 50.0f64..800.0, any::<bool>()), |(seed, policy, rps, failures)| {
        let run = small_run(seed, policy, rps, 10, failures);
        for o in &run.outcomes {
            prop_assert_eq!(o.breakdown.total(), o.end - o.start, "outcome {:?}", o);
        }
        Ok(())
    })
}

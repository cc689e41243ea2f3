use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::time::Duration;

use oaas_core::enforcement::PolicyKind;
use oaas_core::runtime::{
    ClassRuntimeTemplate, DeployOptions, InvocationOutcome, InvocationRequest, LoadTarget, NodeSpec, OutcomeSink, Platform,
    PlatformConfig, RuntimeError, Status,
};
use oaas_core::sim::{FailureConfig, FailureTargets, SiteId, Tier};
use oaas_core::store::{BlobRef, ObjectId};
use serde_json::json;

const IMAGE: &str = include_str!("data/image.yaml");

const COUNTER: &str = r#"
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
          throughput: 200
        x-sim:
          archetype: chatty
          serviceTime: { meanMs: 1.0, cv: 0.2 }
          bytesIn: 1024
          bytesOut: 1024
"#;

fn platform(config: PlatformConfig) -> Platform {
    Platform::new(config).unwrap()
}

fn doc() -> serde_json::Value {
    json!({ "doc": { "k0": 0, "k1": 0, "k2": 0 } })
}

#[test]
fn listing_deploys_with_ltag_and_invokes() {
    let mut p = platform(PlatformConfig::default());
    let infos = p.deploy_manifest(IMAGE, DeployOptions::default()).unwrap();
    assert_eq!(infos.len(), 2);
    for i in &infos {
        assert_eq!(i.template, "ltag");
        assert_eq!(i.replicas, 3);
    }
    let mut blobs = BTreeMap::new();
    blobs.insert("image".to_string(), BlobRef { size: 4096, digest: 1 });
    let id = p.create_object("LabelledImage", json!({}), blobs).unwrap();
    let out = p.invoke(&InvocationRequest::new("LabelledImage", id, "resize")).unwrap();
    assert_eq!(out.status, Status::Completed);
    assert_eq!(out.revision, Some(1));
    assert_eq!(out.breakdown.total(), out.end - out.start);
    let outs = p.invoke_chain("LabelledImage", id, &["analyze", "resize", "detectObject"]).unwrap();
    assert_eq!(outs.len(), 3);
    assert_eq!(p.object("LabelledImage", id).unwrap().revision, 4);
    p.audit().unwrap();
}

#[test]
fn schema_violations() {
    let mut p = platform(PlatformConfig::default());
    p.deploy_manifest(IMAGE, DeployOptions::default()).unwrap();
    assert!(matches!(p.create_object("Image", json!({"nope": 1}), BTreeMap::new()), Err(RuntimeError::Schema(_))));
    let mut blobs = BTreeMap::new();
    blobs.insert("labels".to_string(), BlobRef { size: 1, digest: 0 });
    assert!(matches!(p.create_object("Image", json!({}), blobs), Err(RuntimeError::Schema(_))));
    let id = p.create_object("Image", json!({}), BTreeMap::new()).unwrap();
    let mut req = InvocationRequest::new("Image", id, "resize");
    req.args = json!({"labels": "x"});
    assert!(matches!(p.invoke(&req), Err(RuntimeError::Schema(_))));
    assert!(matches!(p.invoke(&InvocationRequest::new("Image", ObjectId(99), "resize")), Err(RuntimeError::Store(_))));
    assert!(matches!(p.invoke(&InvocationRequest::new("Image", id, "analyze")), Err(RuntimeError::UnknownFunction { .. })));
    assert!(matches!(p.create_object("Nope", json!({}), BTreeMap::new()), Err(RuntimeError::UnknownClass(_))));
}

#[test]
fn empty_registry_refuses_deploy() {
    let mut p = platform(PlatformConfig::default());
    p.set_templates(Vec::new());
    assert!(matches!(p.deploy_manifest(IMAGE, DeployOptions::default()), Err(RuntimeError::NoTemplate(_))));
    p.set_templates(vec![ClassRuntimeTemplate::ltag()]);
    assert!(p.deploy_manifest(IMAGE, DeployOptions::default()).is_ok());
}

#[test]
fn args_write_declared_keys() {
    let mut p = platform(PlatformConfig::default());
    p.deploy_manifest(COUNTER, DeployOptions::default()).unwrap();
    let id = p.create_object("Counter", doc(), BTreeMap::new()).unwrap();
    let mut req = InvocationRequest::new("Counter", id, "bump");
    req.args = json!({"doc": {"hello": "world"}});
    let out = p.invoke(&req).unwrap();
    assert_eq!(out.status, Status::Completed);
    assert_eq!(p.object("Counter", id).unwrap().attributes, json!({"doc": {"hello": "world"}}));
}

#[test]
fn local_methods_run_beside_the_primary() {
    let mut p = platform(PlatformConfig::default());
    p.deploy_manifest(COUNTER, DeployOptions::default()).unwrap();
    for _ in 0..30 {
        p.create_object("Counter", doc(), BTreeMap::new()).unwrap();
    }
    for o in p.object_ids("Counter").unwrap() {
        let out = p.invoke(&InvocationRequest::new("Counter", o, "bump")).unwrap();
        assert_eq!(out.status, Status::Completed);
        assert_eq!(out.node, out.primary_node);
        assert_eq!(out.data_tier, Some(Tier::Local));
    }
}

#[test]
fn remote_store_costs_two_internet_hops() {
    let config = PlatformConfig {
        nodes: vec![
            NodeSpec { name: "store".into(), site: SiteId(0), cores: 16.0 },
            NodeSpec { name: "edge".into(), site: SiteId(1), cores: 16.0 },
        ],
        shards_per_class: 1,
        function_nodes: vec!["edge".into()],
        ..Default::default()
    };
    let one_way = config.network.internet.mean();
    let mut p = platform(config);
    let manifest = COUNTER.replace("locality: Local", "locality: None").replace("availability: 99.9", "availability: 50");
    p.deploy_manifest(&manifest, DeployOptions::default()).unwrap();
    let id = p.create_object("Counter", doc(), BTreeMap::new()).unwrap();
    let out = p.invoke(&InvocationRequest::new("Counter", id, "bump")).unwrap();
    assert_eq!(out.data_tier, Some(Tier::Internet));
    assert!(out.breakdown.data_access >= one_way * 2);
}

#[derive(Clone, Default)]
struct Shared(Rc<RefCell<Vec<InvocationOutcome>>>);

impl OutcomeSink for Shared {
    fn record(&mut self, o: &InvocationOutcome) {
        self.0.borrow_mut().push(o.clone());
    }
}

fn loaded_run(seed: u64, failures: bool) -> (Vec<InvocationOutcome>, Vec<String>) {
    let mut config = PlatformConfig { seed, trace: true, ..Default::default() };
    if failures {
        config.failures = Some(FailureConfig {
            mtbf: Duration::from_secs(5),
            recovery_time: Duration::from_secs(2),
            jitter_stddev: Duration::from_secs(1),
            targets: FailureTargets::All,
        });
    }
    let mut p = platform(config);
    p.deploy_manifest(COUNTER, DeployOptions::default()).unwrap();
    for _ in 0..50 {
        p.create_object("Counter", doc(), BTreeMap::new()).unwrap();
    }
    let sink = Shared::default();
    p.set_sink(Box::new(sink.clone()));
    let target = LoadTarget { class: "Counter".into(), functions: vec!["bump".into()], objects: vec![] };
    let start = p.now();
    p.add_open_load(&target, Box::new((0..4000u64).map(move |k| start + Duration::from_micros(k * 5000)))).unwrap();
    p.run_until(start + Duration::from_secs(60));
    assert_eq!(p.pending(), 0);
    p.audit().unwrap();
    let out = sink.0.borrow().clone();
    (out, p.take_trace())
}

#[test]
fn steady_load_completes_everything() {
    let (outs, _) = loaded_run(1, false);
    assert_eq!(outs.len(), 4000);
    assert!(outs.iter().all(|o| o.status == Status::Completed));
    for o in &outs {
        assert_eq!(o.breakdown.total(), o.end - o.start);
    }
}

#[test]
fn failures_cause_some_errors_but_no_loss() {
    let (outs, trace) = loaded_run(3, true);
    assert_eq!(outs.len(), 4000);
    let ok = outs.iter().filter(|o| o.status == Status::Completed).count();
    assert!(ok > 3000 && ok < 4000, "{ok}");
    assert!(trace.iter().any(|l| l.contains(" kill ")));
    assert!(trace.iter().any(|l| l.contains(" commit ")));
}

#[test]
fn traces_are_deterministic() {
    let (_, a) = loaded_run(11, true);
    let (_, b) = loaded_run(11, true);
    assert_eq!(a, b);
    let (_, c) = loaded_run(12, true);
    assert_ne!(a, c);
}

#[test]
fn knative_scales_from_zero_and_back() {
    let mut p = platform(PlatformConfig::default());
    p.deploy_manifest(COUNTER, DeployOptions::policy(PolicyKind::KnativeLike)).unwrap();
    let id = p.create_object("Counter", doc(), BTreeMap::new()).unwrap();
    assert_eq!(p.warm_containers("Counter").unwrap(), 0);
    let out = p.invoke(&InvocationRequest::new("Counter", id, "bump")).unwrap();
    assert_eq!(out.status, Status::Completed);
    assert!(out.breakdown.cold_start >= Duration::from_millis(900), "{:?}", out.breakdown);
    assert_eq!(out.data_tier, Some(Tier::Datacenter));
    p.run_for(Duration::from_secs(120));
    assert_eq!(p.warm_containers("Counter").unwrap(), 0);
}

#[test]
fn queue_timeout_rejects() {
    let config = PlatformConfig { queue_timeout: Duration::from_millis(1500), ..Default::default() };
    let mut p = platform(config);
    p.deploy_manifest(COUNTER, DeployOptions { policy: PolicyKind::ManualRefinement, pods: 1, concurrency: 1 }).unwrap();
    let ids: Vec<_> = (0..5).map(|_| p.create_object("Counter", doc(), BTreeMap::new()).unwrap()).collect();
    for _ in 0..3000 {
        for &id in &ids {
            p.submit(&InvocationRequest::new("Counter", id, "bump")).unwrap();
        }
    }
    p.run_for(Duration::from_secs(40));
    assert_eq!(p.pending(), 0);
    let c = p.counters();
    assert!(c.rejected > 0, "{c:?}");
    assert_eq!(c.submitted, c.terminal());
}

#[test]
fn redeploy_keeps_objects() {
    let mut p = platform(PlatformConfig::default());
    p.deploy_manifest(COUNTER, DeployOptions::default()).unwrap();
    let id = p.create_object("Counter", doc(), BTreeMap::new()).unwrap();
    p.invoke(&InvocationRequest::new("Counter", id, "bump")).unwrap();
    let stronger = COUNTER.replace("99.9", "99.999");
    let info = p.deploy_manifest(&stronger, DeployOptions::default()).unwrap();
    assert_eq!(info[0].replicas, 5);
    let before = p.object("Counter", id).unwrap().attributes;
    assert_ne!(before, doc());
    let out = p.invoke(&InvocationRequest::new("Counter", id, "bump")).unwrap();
    assert_eq!(out.status, Status::Completed);
}

//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero on any failure.

mod common;

use std::time::Instant;

use num_bigint::BigUint;
use oaas_core::enforcement::{required_replicas, PolicyKind};
use oaas_core::harness::{preset, refinement_comparison, run_experiment, scenario, Placement};
use oaas_core::package::{effective_requirements, load_classes};

/// Parses a decimal literal into an exact fraction.
fn ratio(s: &str) -> (BigUint, BigUint) {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let num: BigUint = format!("{int}{frac}").parse().expect("decimal");
    (num, BigUint::from(10u32).pow(frac.len() as u32))
}

/// Smallest N with (1 - p)^N <= 1 - a, by exact integer arithmetic.
fn oracle_replicas(a: &str, p: &str) -> u32 {
    let (an, ad) = ratio(a);
    let (pn, pd) = ratio(p);
    let q = &pd - &pn;
    let slack = &ad - &an;
    (1..1000)
        .find(|&n| q.pow(n) * &ad <= &slack * pd.pow(n))
        .expect("converges")
}

fn criterion_1() -> (bool, String) {
    let started = Instant::now();
    let targets = ["0.9", "0.99", "0.999", "0.9999", "0.99999"];
    let stabilities = ["0.80", "0.90", "0.9436", "0.99"];
    let mut matched = 0;
    let mut misses = Vec::new();
    for a in targets {
        for p in stabilities {
            let got = required_replicas(a.parse().unwrap(), p.parse().unwrap()).ok();
            let want = oracle_replicas(a, p);
            if got == Some(want) {
                matched += 1;
            } else {
                misses.push(format!("({a},{p}) got {got:?} want {want}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (matched == 20 && secs < 1.0, format!("{matched}/20 match the exact oracle in {secs:.3}s {}", misses.join(" ")))
}

fn availability_ratios(target: &str, seeds: u64) -> Vec<f64> {
    (1..=seeds)
        .map(|seed| {
            let s = preset(&format!("avail-{target}"), seed).expect("preset").remove(0);
            run_experiment(&s, false).expect("runs").summary.error_ratio
        })
        .collect()
}

fn criterion_2() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut means = Vec::new();
    for (target, a) in [("99", 0.99), ("99.9", 0.999), ("99.99", 0.9999)] {
        let r = availability_ratios(target, 5);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let bound = 1.2 * (1.0 - a);
        ok &= mean <= bound;
        detail.push(format!("{target}: {mean:.2e} <= {bound:.1e}"));
        means.push(mean);
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    ok &= decreasing;
    let r = availability_ratios("99.999", 10);
    let worst = r.iter().copied().fold(0.0, f64::max);
    ok &= worst <= 1e-4;
    detail.push(format!("99.999 worst of 10: {worst:.2e} <= 1e-4"));
    detail.push(format!("strictly decreasing: {decreasing}"));
    (ok, detail.join(", "))
}

fn criterion_3() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, target) in [("tp-chatty-10k", 10_000.0), ("tp-data-400", 400.0), ("tp-compute-20", 20.0)] {
        let s = preset(name, 1).expect("preset").remove(0);
        let r = run_experiment(&s, false).expect("runs").summary;
        let pass = r.achieved_rps >= 0.95 * target && r.error_ratio < 0.01;
        ok &= pass;
        detail.push(format!("{name} {:.1}/{target} rps err {:.2e}", r.achieved_rps, r.error_ratio));
    }
    let burst = scenario::burst_scenario(1);
    let oprc = run_experiment(&burst.with_policy(PolicyKind::Oprc), false).expect("runs").summary.error_ratio;
    let knative = run_experiment(&burst.with_policy(PolicyKind::KnativeLike), false).expect("runs").summary.error_ratio;
    ok &= knative > oprc;
    detail.push(format!("burst err knative {knative:.3} > oprc {oprc:.3}"));
    (ok, detail.join(", "))
}

fn criterion_4() -> (bool, String) {
    let run = |p| run_experiment(&scenario::latency_scenario(p), false).expect("runs").summary;
    let local = run(Placement::Local);
    let dc = run(Placement::NoneDatacenter);
    let inet = run(Placement::NoneInternet);
    let ordered = inet.mean_latency_ms > dc.mean_latency_ms && dc.mean_latency_ms > local.mean_latency_ms;
    let overhead = local.overhead_share <= 0.10;
    (
        ordered && overhead,
        format!(
            "mean e2e internet {:.3} ms > datacenter {:.3} ms > local {:.3} ms, local overhead {:.1}% <= 10%",
            inet.mean_latency_ms,
            dc.mean_latency_ms,
            local.mean_latency_ms,
            local.overhead_share * 100.0
        ),
    )
}

fn criterion_5() -> (bool, String) {
    let base = scenario::refinement_base();
    let r = refinement_comparison(&base, 10_000.0, 0.95, 12).expect("runs");
    let auto = &r.auto.summary;
    let auto_ok = r.auto_met_target && auto.error_ratio < 0.01;
    let manual_ok = r.manual_met_target && r.manual_scale_up_rounds >= 4;
    let rounds: Vec<String> = r.manual_rounds.iter().map(|x| format!("{}:{:.0}", x.pods, x.achieved_rps)).collect();
    (
        manual_ok && auto_ok,
        format!(
            "manual needed {} rounds [{}], auto {:.0} rps after one warm-up round",
            r.manual_scale_up_rounds,
            rounds.join(" "),
            auto.achieved_rps
        ),
    )
}

fn criterion_6() -> (bool, String) {
    let classes = load_classes(include_str!("data/image.yaml")).expect("listing parses");
    let labelled = classes.iter().find(|c| c.name == "LabelledImage").expect("class");
    let resize = effective_requirements(labelled, "resize").expect("resize");
    let analyze = effective_requirements(labelled, "analyze").expect("analyze");
    let ok = resize.qos.throughput == Some(100) && resize.qos.availability == Some(99.9) && analyze.qos.throughput == Some(50);
    (
        ok,
        format!(
            "resize throughput {:?} availability {:?}, analyze throughput {:?}",
            resize.qos.throughput, resize.qos.availability, analyze.qos.throughput
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let started = Instant::now();
    let suites: [(&str, fn() -> Result<(), String>); 7] = [
        ("ring", || common::ring_minimal_disruption(24)),
        ("single-primary", || common::single_primary(16)),
        ("gap-free", || common::revision_gap_freedom(256)),
        ("conservation", || common::conservation(24)),
        ("determinism", || common::determinism(8)),
        ("capacity", || common::capacity(64)),
        ("breakdown", || common::breakdown_identity(24)),
    ];
    let mut failed = Vec::new();
    for (name, f) in suites {
        if let Err(e) = f() {
            failed.push(format!("{name}: {e}"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (failed.is_empty() && secs < 60.0, format!("7 suites in {secs:.1}s {}", failed.join("; ")))
}

fn main() {
    let criteria: [fn() -> (bool, String); 7] = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7];
    let mut all = true;
    for (i, c) in criteria.iter().enumerate() {
        let started = Instant::now();
        let (pass, detail) = c();
        all &= pass;
        println!("criterion {}: {} ({:.1}s) {detail}", i + 1, if pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
    }
    if !all {
        std::process::exit(1);
    }
}

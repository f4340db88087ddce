mod common;

use common::*;
use critflow_core::lp::reroute;
use critflow_core::metrics::*;
use critflow_core::selectors::*;
use critflow_core::traffic::{generate_tms, TrafficModel};
use critflow_core::{EcmpFractions, Topology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn brute_force_matches_full_enumeration() {
    let topo = tiny5();
    let fr = EcmpFractions::compute(&topo).unwrap();
    for tm in tiny5_tms() {
        let (sel, u) = brute_force_best(&topo, &fr, &tm, 2, DEFAULT_BRUTE_FORCE_CAP).unwrap();
        let mut best = f64::INFINITY;
        for a in 0..20 {
            for b in a + 1..20 {
                best = best.min(reroute(&topo, &tm, &fr, &[a, b]).unwrap().u);
            }
        }
        assert!((u - best).abs() < 1e-12, "{}: {u} vs {best}", tm.id());
        assert!((reroute(&topo, &tm, &fr, &sel.flows).unwrap().u - u).abs() < 1e-12);
    }
}

#[test]
fn brute_force_beats_every_heuristic() {
    let topo = tiny5();
    let fr = EcmpFractions::compute(&topo).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for tm in tiny5_tms() {
        for k in 1..=4 {
            let (_, best) = brute_force_best(&topo, &fr, &tm, k, DEFAULT_BRUTE_FORCE_CAP).unwrap();
            let others = [
                top_k(&tm, k).unwrap(),
                top_k_critical(&topo, &fr, &tm, k).unwrap(),
                random_k(&tm, k, &mut rng).unwrap(),
            ];
            for sel in others {
                let u = reroute(&topo, &tm, &fr, &sel.flows).unwrap().u;
                assert!(best <= u + 1e-9, "{} k={k}: {} gives {u} < {best}", tm.id(), sel.method);
            }
        }
    }
}

#[test]
fn suite_invariants() {
    let topo = Topology::random("r", 6, 4, 3, &[1.0, 2.0], 17).unwrap();
    let tms = generate_tms(&topo, TrafficModel::Exponential, 6, 0.9, 4).unwrap();
    let methods = [
        SelectionMethod::Ecmp,
        SelectionMethod::TopK,
        SelectionMethod::TopKCritical,
        SelectionMethod::Random,
    ];
    let report = eval_suite(&topo, &tms, &methods, None, 3, 9).unwrap();
    assert_eq!(report.records.len(), tms.len() * methods.len());
    let fr = EcmpFractions::compute(&topo).unwrap();
    for r in &report.records {
        assert!(r.pr_u > 0.0 && r.pr_u <= 1.0 + 1e-7, "{r:?}");
        assert!(r.pr_omega > 0.0 && r.pr_omega <= 1.0 + 1e-7, "{r:?}");
        assert!((0.0..=1.0).contains(&r.rd));
        let tm = tms.iter().find(|t| t.id() == r.tm_id).unwrap();
        let u_ecmp = fr.link_loads(&topo, tm, &[]).max_utilization;
        assert!(r.u_method <= u_ecmp + 1e-7);
    }
    let ecmp_mean = report.records_of(SelectionMethod::Ecmp).map(|r| r.u_optimal / r.u_method).sum::<f64>() / 6.0;
    let summary = report.summary(SelectionMethod::Ecmp, Metric::PrU).unwrap();
    assert!((summary.mean - ecmp_mean).abs() < 1e-12);
    for s in report.summaries.values() {
        assert!(s.cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        assert_eq!(s.cdf.last().unwrap().1, 1.0);
        assert!(s.cdf[0].1 > 0.0);
    }
    // Same seed, same answer.
    let again = eval_suite(&topo, &tms, &methods, None, 3, 9).unwrap();
    assert_eq!(again.records, report.records);
}

#[test]
fn disturbance_is_scale_invariant() {
    let topo = tiny5();
    let fr = EcmpFractions::compute(&topo).unwrap();
    for tm in tiny5_tms() {
        let sel = top_k_critical(&topo, &fr, &tm, 3).unwrap();
        let a = rerouting_disturbance(&tm, &sel.flows);
        let b = rerouting_disturbance(&tm.scaled(123.0), &sel.flows);
        assert!((a - b).abs() < 1e-15);
    }
}

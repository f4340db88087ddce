//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the report is always printed.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use critflow_core::lp::{evaluate_delay, reroute, solve_delay_optimal, solve_optimal_all_flows, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use critflow_core::checkpoint::Checkpoint;
use critflow_core::policy::{self, gradients, surrogate_objective, Architecture, PolicyParams, Solution, GROUP_NAMES};
use critflow_core::selectors::{brute_force_best, top_k, top_k_critical, DEFAULT_BRUTE_FORCE_CAP};
use critflow_core::topology::all_flows;
use critflow_core::trainer::{replay_update, train, RerouteEnv, Trainer, TrainerConfig};
use critflow_core::traffic::{generate_tms, TrafficModel};
use critflow_core::{flow_index, flow_of_index, EcmpFractions, LinkLoads, Topology, TrafficMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:.1?}, limit {limit:?}"));
    }
    Ok(())
}

fn data(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn lp_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut seed = 0u64;
    // Draw instances until 25 have the rerouted flow, not the background,
    // setting U; the flow carries half as much as all other traffic.
    while cases < 25 {
        ensure!(seed < 500, "only {cases} usable instances in {seed} draws");
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(4..=5);
        let topo = Topology::random("acc", n, rng.random_range(0..=4), 4, &[1.0, 2.0, 3.0], 1000 + seed).unwrap();
        let fr = EcmpFractions::compute(&topo).unwrap();
        let base = generate_tms(&topo, TrafficModel::Exponential, 1, 0.9, seed).unwrap().remove(0);
        seed += 1;
        let flow = rng.random_range(0..topo.flow_count());
        let (s, d) = flow_of_index(flow, n).unwrap();
        let mut demand = base.as_slice().to_vec();
        demand[s * n + d] = 0.5 * (base.total() - base.get(s, d));
        let tm = TrafficMatrix::new(n, demand, "acc").unwrap();
        let demand = tm.get(s, d);
        let bg = fr.link_loads(&topo, &tm, &[flow]);
        let sol = reroute(&topo, &tm, &fr, &[flow]).map_err(|e| e.to_string())?;

        // Min-max over all s-d routings, from exhaustive cut enumeration.
        let oracle = single_flow_min_max_by_cuts(&topo, s, d, demand, &bg.load);
        if oracle <= bg.max_utilization + 1e-9 {
            continue;
        }
        cases += 1;
        worst = worst.max((sol.u - oracle).abs());
        ensure!((sol.u - oracle).abs() < 1e-6, "seed {seed}: lp {} oracle {oracle}", sol.u);

        // The LP routing decomposes onto enumerated simple paths and its
        // path loads attain the same utilization.
        let paths = simple_paths(&topo, s, d);
        let parts = decompose_into_paths(&topo, s, d, &sol.sigma[0]);
        let total: f64 = parts.iter().map(|p| p.1).sum();
        ensure!((total - 1.0).abs() < 1e-7, "seed {seed}: decomposition carries {total}");
        let mut load = bg.load.clone();
        for (p, w) in &parts {
            ensure!(paths.contains(p), "seed {seed}: decomposed path {p:?} is not simple");
            for &l in p {
                load[l] += w * demand;
            }
        }
        let u_paths = LinkLoads::new(&topo, load).max_utilization;
        ensure!((u_paths - oracle).abs() < 1e-6, "seed {seed}: path split {u_paths} oracle {oracle}");
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!(
        "{cases} instances where the flow sets U ({seed} drawn), max |u - oracle| = {worst:.1e}, {:.2?}",
        start.elapsed()
    ))
}

fn optimal_bound() -> Outcome {
    let topo = Topology::load(data("abilene.topo")).unwrap();
    let fr = EcmpFractions::compute(&topo).unwrap();
    let tms = generate_tms(&topo, TrafficModel::Exponential, 100, 0.9, 7).unwrap();
    let k = 13;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min_pr: f64 = f64::INFINITY;
    let mut max_pr: f64 = 0.0;
    for tm in &tms {
        let (u_opt, _) = solve_optimal_all_flows(&topo, tm).map_err(|e| e.to_string())?;
        let u_ecmp = fr.link_loads(&topo, tm, &[]).max_utilization;
        ensure!(u_opt <= u_ecmp + 1e-7, "{}: u_opt {u_opt} > u_ecmp {u_ecmp}", tm.id());
        let random: Vec<usize> = rand::seq::index::sample(&mut rng, topo.flow_count(), k).into_vec();
        let selections = [
            Vec::new(),
            top_k(tm, k).unwrap().flows,
            top_k_critical(&topo, &fr, tm, k).unwrap().flows,
            random,
        ];
        for sel in selections {
            let u = reroute(&topo, tm, &fr, &sel).map_err(|e| e.to_string())?.u;
            let pr = u_opt / u;
            ensure!(pr > 0.0 && pr <= 1.0 + 1e-7, "{}: pr_u {pr}", tm.id());
            min_pr = min_pr.min(pr);
            max_pr = max_pr.max(pr);
        }
    }
    Ok(format!("100 Abilene matrices, pr_u in [{min_pr:.4}, {max_pr:.7}]"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..3u64 {
        let arch = Architecture::new(4);
        let params = PolicyParams::init(arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let demand: Vec<f64> = (0..16)
            .map(|i| if i % 5 == 0 { 0.0 } else { rng.random_range(0.0..10.0) })
            .collect();
        let tm = TrafficMatrix::new(4, demand, "fd").unwrap();
        let sol = Solution::new(vec![0, 7, 11]);
        let (adv, beta) = (0.8, 0.1);
        let grad = gradients(&params, &tm, &sol, adv, beta).unwrap();
        let f = |p: &PolicyParams| surrogate_objective(p, &tm, &sol, adv, beta).unwrap();
        for (g, name) in GROUP_NAMES.iter().enumerate() {
            let len = grad.groups()[g].len();
            // The largest components plus a random sample.
            let mut idx: Vec<usize> = (0..len).collect();
            idx.sort_by(|&a, &b| grad.groups()[g][b].abs().total_cmp(&grad.groups()[g][a].abs()));
            idx.truncate(10);
            idx.extend((0..30).map(|_| rng.random_range(0..len)));
            for i in idx {
                let numeric = central_difference(&params, g, i, 1e-5, &f);
                let err = rel_err(grad.groups()[g][i], numeric);
                worst = worst.max(err);
                checked += 1;
                ensure!(err < 1e-4, "seed {seed} {name}[{i}]: analytic {} numeric {numeric}", grad.groups()[g][i]);
            }
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("{checked} components at width 128, max rel err {worst:.1e}, {:.1?}", start.elapsed()))
}

fn mean_random_pair_reward(topo: &Topology, fr: &EcmpFractions, tm: &TrafficMatrix) -> f64 {
    let nf = topo.flow_count();
    let mut sum = 0.0;
    let mut count = 0.0;
    for a in 0..nf {
        for b in a + 1..nf {
            sum += 1.0 / reroute(topo, tm, fr, &[a, b]).unwrap().u;
            count += 1.0;
        }
    }
    sum / count
}

fn learning_gain() -> Outcome {
    let start = Instant::now();
    let topo = tiny5();
    let tms = tiny5_tms();
    let env = RerouteEnv::new(topo.clone(), tms.clone()).unwrap();
    let config = TrainerConfig {
        k: 2,
        total_iterations: 2000,
        seed: 0,
        ..TrainerConfig::default()
    };
    let out = train(&env, &[0, 1], &config).map_err(|e| e.to_string())?;
    let fr = &env.fractions;
    let (mut greedy, mut best, mut random) = (0.0, 0.0, 0.0);
    for tm in &tms {
        let dist = policy::forward(&out.params, tm).unwrap();
        let sel = policy::greedy_top_k(&dist, 2);
        greedy += 1.0 / reroute(&topo, tm, fr, &sel.actions).unwrap().u;
        best += 1.0 / brute_force_best(&topo, fr, tm, 2, DEFAULT_BRUTE_FORCE_CAP).unwrap().1;
        random += mean_random_pair_reward(&topo, fr, tm);
    }
    let m = tms.len() as f64;
    let (greedy, best, random) = (greedy / m, best / m, random / m);
    ensure!(greedy >= 0.95 * best, "greedy reward {greedy:.4} < 0.95 x best {best:.4}");
    ensure!(greedy > random, "greedy reward {greedy:.4} <= random mean {random:.4}");
    within(Duration::from_secs(600), start)?;
    Ok(format!(
        "greedy {greedy:.4} vs best {best:.4} ({:.1}%), random {random:.4}, {:.1?}",
        100.0 * greedy / best,
        start.elapsed()
    ))
}

fn k_sweep_shape() -> Outcome {
    let topo = tiny5();
    let fr = EcmpFractions::compute(&topo).unwrap();
    let tms = tiny5_tms();
    let optima: Vec<f64> = tms.iter().map(|tm| solve_optimal_all_flows(&topo, tm).unwrap().0).collect();
    let n_flows = topo.flow_count();
    let mut curve = Vec::new();
    for k in 0..=n_flows {
        let mut sum = 0.0;
        for (tm, u_opt) in tms.iter().zip(&optima) {
            let u = if k == 0 {
                fr.link_loads(&topo, tm, &[]).max_utilization
            } else {
                brute_force_best(&topo, &fr, tm, k, DEFAULT_BRUTE_FORCE_CAP).map_err(|e| e.to_string())?.1
            };
            sum += u_opt / u;
        }
        curve.push(sum / tms.len() as f64);
    }
    for (k, w) in curve.windows(2).enumerate() {
        ensure!(w[1] >= w[0] - 1e-9, "mean pr_u drops from {} at K={k} to {}", w[0], w[1]);
    }
    let last = curve[n_flows];
    ensure!((last - 1.0).abs() <= 1e-6, "pr_u at K = {n_flows} is {last}");
    Ok(format!(
        "K=0..{n_flows}: {:.4} -> {:.4} -> {:.4} -> ... -> {last:.6}",
        curve[0], curve[1], curve[2]
    ))
}

fn heuristic_dominance() -> Outcome {
    let topo = tiny5();
    let fr = EcmpFractions::compute(&topo).unwrap();
    for tm in tiny5_tms() {
        for k in 1..=4 {
            let (_, best) = brute_force_best(&topo, &fr, &tm, k, DEFAULT_BRUTE_FORCE_CAP).unwrap();
            let u_top = reroute(&topo, &tm, &fr, &top_k(&tm, k).unwrap().flows).unwrap().u;
            let u_crit = reroute(&topo, &tm, &fr, &top_k_critical(&topo, &fr, &tm, k).unwrap().flows)
                .unwrap()
                .u;
            ensure!(best <= u_top + 1e-9 && best <= u_crit + 1e-9, "{} K={k}: brute force {best}, top_k {u_top}, critical {u_crit}", tm.id());
        }
    }
    let mut notes = Vec::new();
    for name in ["abilene.topo", "ebone-synthetic.topo"] {
        let topo = Topology::load(data(name)).unwrap();
        let fr = EcmpFractions::compute(&topo).unwrap();
        let k = ((0.1 * topo.flow_count() as f64) + 0.5).floor() as usize;
        let tms = generate_tms(&topo, TrafficModel::Exponential, 50, 0.9, 21).unwrap();
        let (mut rd_top, mut rd_crit) = (0.0, 0.0);
        for tm in &tms {
            rd_top += critflow_core::metrics::rerouting_disturbance(tm, &top_k(tm, k).unwrap().flows);
            rd_crit += critflow_core::metrics::rerouting_disturbance(tm, &top_k_critical(&topo, &fr, tm, k).unwrap().flows);
        }
        let (rd_top, rd_crit) = (rd_top / 50.0, rd_crit / 50.0);
        ensure!(rd_top > rd_crit, "{name}: mean rd top_k {rd_top:.4} <= top_k_critical {rd_crit:.4}");
        notes.push(format!("{}: rd {rd_top:.3} > {rd_crit:.3}", topo.name()));
    }
    Ok(format!("brute force dominates on tiny5; {}", notes.join(", ")))
}

fn delay_oracle() -> Outcome {
    let t = triangle();
    let tm = TrafficMatrix::from_entries(3, &[(0, 2, 0.9)], "t").unwrap();
    let opt = solve_delay_optimal(&t, &tm, DEFAULT_MAX_ITERS, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let grid = triangle_delay_grid(0.9, 1e-5);
    ensure!((opt.omega - grid).abs() < 1e-4, "frank-wolfe {} grid {grid}", opt.omega);
    let single = Topology::parse("nodes 2\nedge 0 1 1 1\n").unwrap();
    let half = LinkLoads::new(&single, vec![0.5, 0.0]);
    let v = evaluate_delay(&single, &half);
    ensure!(v == 1.0, "evaluate_delay(0.5, 1) = {v}");
    Ok(format!("omega {:.6} vs grid {grid:.6}; delay(0.5, 1) = 1", opt.omega))
}

fn determinism_and_replay() -> Outcome {
    let env = RerouteEnv::new(tiny5(), tiny5_tms()).unwrap();
    let config = TrainerConfig {
        k: 2,
        width: 16,
        total_iterations: 40,
        seed: 5,
        ..TrainerConfig::default()
    };
    let a = train(&env, &[0, 1], &config).map_err(|e| e.to_string())?;
    let b = train(&env, &[0, 1], &config).map_err(|e| e.to_string())?;
    ensure!(a.params == b.params, "parameters differ between identical runs");
    let rewards = |o: &critflow_core::trainer::TrainOutcome| -> Vec<u64> {
        o.log.iter().map(|l| l.mean_reward.to_bits()).collect()
    };
    ensure!(rewards(&a) == rewards(&b), "reward logs differ between identical runs");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("iter.ckpt");
    let mut trainer = Trainer::new(&env, &[0, 1], config.clone()).map_err(|e| e.to_string())?;
    for _ in 0..17 {
        trainer.step().map_err(|e| e.to_string())?;
    }
    trainer.checkpoint().save(&path).map_err(|e| e.to_string())?;
    let before = trainer.params().clone();
    let (batch, log) = trainer.step().map_err(|e| e.to_string())?;
    let mut applied = trainer.params().clone();
    applied.add_scaled(&before, -1.0);

    let restored = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let delta = replay_update(&env, &restored.params, &batch, log.alpha, restored.schedule.beta).map_err(|e| e.to_string())?;
    let diff = delta.max_abs_diff(&applied);
    ensure!(diff <= 1e-9, "replayed delta differs by {diff:e}");
    Ok(format!("bit-identical reruns; replay of iteration 17 off by {diff:.1e}"))
}

fn ecmp_semantics() -> Outcome {
    let d = diamond();
    let fr = EcmpFractions::compute(&d).unwrap();
    let flow = flow_index(0, 3, 4).unwrap();
    for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
        let f = fr.fraction(flow, d.find_link(a, b).unwrap());
        ensure!(f == 0.5, "diamond link {a}->{b} carries {f}");
    }
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let n = 3 + (seed as usize % 4);
        let topo = Topology::random("ecmp", n, 1 + seed as usize % 5, 3, &[1.0], 500 + seed).unwrap();
        let fr = EcmpFractions::compute(&topo).unwrap();
        for (s, t) in all_flows(n) {
            let oracle = ecmp_fractions_by_paths(&topo, s, t);
            let got = fr.dense(flow_index(s, t, n).unwrap());
            for (x, y) in got.iter().zip(&oracle) {
                worst = worst.max((x - y).abs());
            }
        }
        ensure!(worst < 1e-9, "seed {seed}: max deviation {worst:e}");
    }
    Ok(format!("diamond split exact; 10 random graphs, max deviation {worst:.1e}"))
}

fn schedule_fidelity() -> Outcome {
    let c = TrainerConfig::default();
    for (i, want) in [(0u64, 0.001), (499, 0.001), (500, 0.00096), (10_000, 0.001 * 0.96f64.powi(20))] {
        let got = c.learning_rate(i);
        ensure!((got - want).abs() <= 1e-15, "alpha({i}) = {got}, expected {want}");
    }
    let a = c.learning_rate(10_000);
    ensure!((a - 0.000442).abs() < 5e-7, "alpha(10000) = {a}");
    Ok(format!("alpha(0, 499, 500, 10000) = 0.001, 0.001, 0.00096, {a:.6}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("LP oracle equivalence", lp_oracle_equivalence),
        ("optimal-oracle feasibility bound", optimal_bound),
        ("gradient correctness", gradient_correctness),
        ("learning gain", learning_gain),
        ("K-sweep shape", k_sweep_shape),
        ("heuristic dominance ordering", heuristic_dominance),
        ("delay-oracle correctness", delay_oracle),
        ("determinism and replay", determinism_and_replay),
        ("ECMP semantics", ecmp_semantics),
        ("schedule fidelity", schedule_fidelity),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("[FAIL] {:>2}. {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

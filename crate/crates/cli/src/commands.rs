use std::path::Path;
use std::time::Instant;

use critflow_core::checkpoint::Checkpoint;
use critflow_core::lp::{build_rerouting_lp, default_epsilon};
use critflow_core::metrics::{eval_suite, select, Metric, SuiteReport};
use critflow_core::policy::PolicyParams;
use critflow_core::selectors::{binomial, SelectionMethod, DEFAULT_BRUTE_FORCE_CAP};
use critflow_core::traffic::save_tms;
use critflow_core::trainer::{train_parallel, RerouteEnv, TrainError, TrainOutcome, Trainer, TrainerConfig};
use critflow_core::{EcmpFractions, Topology, TrafficMatrix};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::experiment::{write_file, Experiment};
use crate::output::{self, Csv};

pub fn inspect_topology(exp: &Experiment) -> Result<(), CliError> {
    let topo = exp.topology()?;
    let fractions = EcmpFractions::compute(&topo).map_err(CliError::runtime)?;
    let caps = topo.capacities();
    let (lo, hi) = caps
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    println!(
        "# {}: {} nodes, {} directed links, {} flows, capacity {lo}..{hi}, strongly connected",
        topo.name(),
        topo.node_count(),
        topo.link_count(),
        topo.flow_count()
    );
    let mut crossing = vec![0usize; topo.link_count()];
    for f in 0..topo.flow_count() {
        for &(l, _) in fractions.flow(f) {
            crossing[l] += 1;
        }
    }
    println!("link,src,dst,capacity,cost,ecmp_flows");
    for (l, link) in topo.links().iter().enumerate() {
        println!("{l},{},{},{},{},{}", link.src, link.dst, link.capacity, link.cost, crossing[l]);
    }
    Ok(())
}

pub fn generate_tm(exp: &Experiment) -> Result<(), CliError> {
    let topo = exp.topology()?;
    let tms = exp.generate(&topo)?;
    let out = exp.prepare_out()?;
    let path = out.join("traffic.tm");
    save_tms(&path, &tms).map_err(CliError::runtime)?;
    println!("wrote {} matrices to {}", tms.len(), path.display());
    Ok(())
}

fn train_error(e: TrainError, out: Option<&Path>) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Usage(m),
        TrainError::NonFinite { iteration, last_finite } => {
            let saved = out.map(|dir| {
                let path = dir.join("diverged.ckpt");
                match last_finite.save(&path) {
                    Ok(()) => format!("; last finite state saved to {}", path.display()),
                    Err(e) => format!("; could not save the last finite state: {e}"),
                }
            });
            CliError::Runtime(format!("training diverged at iteration {iteration}{}", saved.unwrap_or_default()))
        }
        other => CliError::runtime(other),
    }
}

/// Trains serially with one actor, otherwise with the actor/learner setup.
/// With `out`, periodic checkpoints go to `out/checkpoints`.
fn run_training(
    exp: &Experiment,
    env: &RerouteEnv,
    states: &[usize],
    config: &TrainerConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome, CliError> {
    let ckpt_dir = out.map(|o| o.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    let mut save_error = None;
    let mut on_checkpoint = |c: &Checkpoint| {
        if let Some(dir) = &ckpt_dir {
            let path = dir.join(format!("iter-{}.ckpt", c.iteration));
            if let Err(e) = c.save(&path) {
                save_error.get_or_insert_with(|| CliError::Runtime(format!("{}: {e}", path.display())));
            }
        }
    };
    let every = if out.is_some() { exp.checkpoint_every() } else { 0 };
    let outcome = match (&exp.opts.resume, config.actor_count) {
        (Some(path), 1) => {
            let ckpt = Checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
            info!("resuming from {path} at iteration {}", ckpt.iteration);
            Trainer::resume(env, states, config.clone(), ckpt)
                .and_then(|t| t.run(every, &mut on_checkpoint))
        }
        (Some(_), _) => return Err(CliError::Usage("--resume needs serial training (--actors 1)".into())),
        (None, 1) => Trainer::new(env, states, config.clone()).and_then(|t| t.run(every, &mut on_checkpoint)),
        (None, _) => train_parallel(env, states, config, every, &mut on_checkpoint),
    }
    .map_err(|e| train_error(e, out))?;
    match save_error {
        Some(e) => Err(e),
        None => Ok(outcome),
    }
}

pub fn train(exp: &Experiment) -> Result<(), CliError> {
    let topo = exp.topology()?;
    let k = exp.k(&topo)?;
    let config = exp.trainer_config(k)?;
    let data = exp.dataset(&topo)?;
    let out = exp.prepare_out()?;
    let env = RerouteEnv::new(topo, data.matrices).map_err(CliError::runtime)?;
    info!(
        "training on {} matrices, K = {k}, {} actor(s), {} updates",
        data.train_indices.len(),
        config.actor_count,
        config.total_iterations
    );
    let started = Instant::now();
    let outcome = run_training(exp, &env, &data.train_indices, &config, Some(&out))?;

    let ckpt = Checkpoint::new(outcome.params.clone(), outcome.updates, &config, outcome.baseline.clone());
    ckpt.save(out.join("policy.ckpt")).map_err(CliError::runtime)?;
    output::write_train_log(&out.join("train_log.csv"), &outcome.log, exp.wall_time())?;
    output::write_experiences(&out.join("experiences.csv"), &env, &outcome.history)?;
    let tail = &outcome.log[outcome.log.len().saturating_sub(100)..];
    let recent = tail.iter().map(|e| e.mean_reward).sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "trained {} updates in {:.1}s; mean reward over the last {} updates {recent:.6}; policy at {}",
        outcome.updates,
        started.elapsed().as_secs_f64(),
        tail.len(),
        out.join("policy.ckpt").display()
    );
    Ok(())
}

fn load_policy(exp: &Experiment, topo: &Topology) -> Result<Option<PolicyParams>, CliError> {
    let Some(path) = &exp.opts.checkpoint else { return Ok(None) };
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
    let n = ckpt.params.arch().n;
    if n != topo.node_count() {
        return Err(CliError::Usage(format!(
            "checkpoint {path} is for {n}-node networks but {} has {} nodes",
            topo.name(),
            topo.node_count()
        )));
    }
    Ok(Some(ckpt.params))
}

fn dump_lp(
    path: &Path,
    exp: &Experiment,
    topo: &Topology,
    tm: &TrafficMatrix,
    methods: &[SelectionMethod],
    k: usize,
    policy: Option<&PolicyParams>,
) -> Result<(), CliError> {
    let fractions = EcmpFractions::compute(topo).map_err(CliError::runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed());
    for &m in methods {
        let flows = select(topo, &fractions, tm, m, k, policy, &mut rng).map_err(CliError::runtime)?;
        if flows.is_empty() {
            continue;
        }
        let background = fractions.link_loads(topo, tm, &flows);
        let lp = build_rerouting_lp(topo, tm, &flows, &background, default_epsilon(topo.link_count(), flows.len()));
        info!("writing the {m} rerouting LP of {} to {}", tm.id(), path.display());
        return write_file(path, &lp.to_lp_format());
    }
    Err(CliError::Usage("--dump-lp: no requested method reroutes any flow".into()))
}

fn print_summary(report: &SuiteReport, methods: &[SelectionMethod]) {
    println!("{:<16}{:>12}{:>12}{:>12}", "method", "pr_u", "pr_omega", "rd");
    for &m in methods {
        let mean = |metric| report.summary(m, metric).map_or(f64::NAN, |s| s.mean);
        println!(
            "{:<16}{:>12.6}{:>12.6}{:>12.6}",
            m.name(),
            mean(Metric::PrU),
            mean(Metric::PrOmega),
            mean(Metric::Rd)
        );
    }
}

pub fn eval(exp: &Experiment) -> Result<(), CliError> {
    let topo = exp.topology()?;
    let k = exp.k(&topo)?;
    let methods = exp.methods()?;
    let policy = load_policy(exp, &topo)?;
    let data = exp.dataset(&topo)?;
    let tms: Vec<TrafficMatrix> = data.test().cloned().collect();
    let out = exp.prepare_out()?;
    if let Some(path) = &exp.opts.dump_lp {
        dump_lp(Path::new(path), exp, &topo, &tms[0], &methods, k, policy.as_ref())?;
    }
    info!("evaluating {} methods on {} matrices, K = {k}", methods.len(), tms.len());
    let report = eval_suite(&topo, &tms, &methods, policy.as_ref(), k, exp.seed()).map_err(CliError::runtime)?;
    output::write_records(&out.join("results.csv"), &report.records)?;
    output::write_cdf(&out.join("cdf.csv"), &report)?;
    output::write_summary(&out.join("summary.csv"), &report, &methods)?;
    println!("K = {k}, {} matrices", tms.len());
    print_summary(&report, &methods);
    Ok(())
}

/// True when brute force stays within its cap on every matrix for every K.
fn brute_force_feasible(tms: &[TrafficMatrix], ks: &[usize]) -> bool {
    tms.iter().all(|tm| {
        let p = tm.flow_demands().iter().filter(|&&d| d > 0.0).count() as u64;
        ks.iter()
            .all(|&k| binomial(p, (k as u64).min(p)) <= DEFAULT_BRUTE_FORCE_CAP)
    })
}

pub fn sweep_k(exp: &Experiment) -> Result<(), CliError> {
    let topo = exp.topology()?;
    let fractions = exp.fractions()?;
    let flows = topo.flow_count();
    let ks: Vec<usize> = fractions
        .iter()
        .map(|&f| crate::experiment::resolve_k(f, flows))
        .collect::<Result<_, _>>()?;
    let data = exp.dataset(&topo)?;
    let test: Vec<TrafficMatrix> = data.test().cloned().collect();
    let method = match exp.sweep_method().as_str() {
        "auto" if brute_force_feasible(&test, &ks) => SelectionMethod::BruteForce,
        "auto" | "policy" => SelectionMethod::Policy,
        "brute_force" => SelectionMethod::BruteForce,
        other => return Err(CliError::Usage(format!("sweep-method `{other}` is not auto, brute_force or policy"))),
    };
    let out = exp.prepare_out()?;
    let env = RerouteEnv::new(topo.clone(), data.matrices.clone()).map_err(CliError::runtime)?;
    let mut csv = Csv::create(&out.join("sweep_k.csv"), &["k_frac", "k", "method", "mean_pr_u", "std_pr_u", "count"])?;
    let mut emit = |frac: f64, k: usize, method: SelectionMethod, report: &SuiteReport| -> Result<(), CliError> {
        let s = report.summary(method, Metric::PrU).expect("method evaluated");
        println!("K = {k:>4} ({method}): mean pr_u {:.6}", s.mean);
        csv.row([
            frac.to_string(),
            k.to_string(),
            method.name().to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.count.to_string(),
        ])
    };

    let ecmp = eval_suite(&topo, &test, &[SelectionMethod::Ecmp], None, 1, exp.seed()).map_err(CliError::runtime)?;
    emit(0.0, 0, SelectionMethod::Ecmp, &ecmp)?;
    for (&frac, &k) in fractions.iter().zip(&ks) {
        let params = if method == SelectionMethod::Policy {
            let config = exp.trainer_config(k)?;
            info!("training a K = {k} policy");
            let outcome = run_training(exp, &env, &data.train_indices, &config, None)?;
            Checkpoint::new(outcome.params.clone(), outcome.updates, &config, outcome.baseline)
                .save(out.join(format!("policy-k{k}.ckpt")))
                .map_err(CliError::runtime)?;
            Some(outcome.params)
        } else {
            None
        };
        let report = eval_suite(&topo, &test, &[method], params.as_ref(), k, exp.seed()).map_err(CliError::runtime)?;
        emit(frac, k, method, &report)?;
    }
    csv.finish()
}

/// Adds `value` to `axis` unless an equal value is already present.
fn with_default<T: PartialEq + Copy>(mut axis: Vec<T>, value: T) -> Vec<T> {
    if !axis.contains(&value) {
        axis.push(value);
    }
    axis
}

pub fn sweep_hyper(exp: &Experiment) -> Result<(), CliError> {
    let topo = exp.topology()?;
    let k = exp.k(&topo)?;
    let base = TrainerConfig {
        total_iterations: exp.sweep_iterations(),
        ..exp.trainer_config(k)?
    };
    let (alphas, widths, betas) = exp.grid()?;
    let alphas = with_default(alphas, base.alpha0);
    let widths = with_default(widths, base.width);
    let betas = with_default(betas, base.beta);
    let data = exp.dataset(&topo)?;
    let test: Vec<TrafficMatrix> = data.test().cloned().collect();
    let out = exp.prepare_out()?;
    let env = RerouteEnv::new(topo.clone(), data.matrices.clone()).map_err(CliError::runtime)?;
    let mut csv = Csv::create(
        &out.join("sweep_hyper.csv"),
        &["alpha", "width", "beta", "iterations", "mean_pr_u", "std_pr_u", "count"],
    )?;
    for &alpha0 in &alphas {
        for &width in &widths {
            for &beta in &betas {
                let config = TrainerConfig {
                    alpha0,
                    alpha_min: base.alpha_min.min(alpha0),
                    width,
                    beta,
                    ..base.clone()
                };
                info!("cell alpha = {alpha0}, width = {width}, beta = {beta}");
                let outcome = run_training(exp, &env, &data.train_indices, &config, None)?;
                let report = eval_suite(&topo, &test, &[SelectionMethod::Policy], Some(&outcome.params), k, exp.seed())
                    .map_err(CliError::runtime)?;
                let s = report.summary(SelectionMethod::Policy, Metric::PrU).expect("policy evaluated");
                println!("alpha {alpha0:<8} width {width:<4} beta {beta:<6} mean pr_u {:.6}", s.mean);
                csv.row([
                    alpha0.to_string(),
                    width.to_string(),
                    beta.to_string(),
                    config.total_iterations.to_string(),
                    s.mean.to_string(),
                    s.std.to_string(),
                    s.count.to_string(),
                ])?;
            }
        }
    }
    csv.finish()
}

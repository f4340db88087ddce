//! Evaluation metrics: load-balancing ratio `U_opt / U`, delay ratio
//! `Ω_opt / Ω` and rerouting disturbance (share of traffic rerouted).

use std::collections::BTreeMap;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ecmp::EcmpFractions;
use crate::lp::{
    evaluate_delay, reroute, solve_delay_optimal, solve_optimal_all_flows, DelayError, LpError, DEFAULT_TOL,
};
use crate::policy::{self, PolicyError, PolicyParams};
use crate::selectors::{self, SelectError, SelectionMethod, DEFAULT_BRUTE_FORCE_CAP};
use crate::topology::Topology;
use crate::traffic::TrafficMatrix;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("the policy method needs policy parameters")]
    MissingPolicy,
    #[error("routing error: {0}")]
    Routing(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub tm_id: String,
    pub method: SelectionMethod,
    pub k: usize,
    pub u_method: f64,
    pub u_optimal: f64,
    pub pr_u: f64,
    pub omega_method: f64,
    pub omega_optimal: f64,
    pub pr_omega: f64,
    pub rd: f64,
}

/// Column names of [`EvalRecord::to_row`].
pub const RECORD_HEADER: [&str; 10] = [
    "tm_id",
    "method",
    "k",
    "u_method",
    "u_optimal",
    "pr_u",
    "omega_method",
    "omega_optimal",
    "pr_omega",
    "rd",
];

impl EvalRecord {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.tm_id.clone(),
            self.method.to_string(),
            self.k.to_string(),
            self.u_method.to_string(),
            self.u_optimal.to_string(),
            self.pr_u.to_string(),
            self.omega_method.to_string(),
            self.omega_optimal.to_string(),
            self.pr_omega.to_string(),
            self.rd.to_string(),
        ]
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::PrU => self.pr_u,
            Metric::PrOmega => self.pr_omega,
            Metric::Rd => self.rd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    PrU,
    PrOmega,
    Rd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::PrU, Metric::PrOmega, Metric::Rd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PrU => "pr_u",
            Metric::PrOmega => "pr_omega",
            Metric::Rd => "rd",
        }
    }
}

/// Frank-Wolfe budget for reference delays. The solver default stops at a
/// relative gap near 1e-4 on backbone-sized instances, which is as large as
/// the differences being measured.
pub const EVAL_DELAY_MAX_ITERS: usize = 5000;

/// Per-matrix optima shared by every method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optima {
    pub u: f64,
    pub omega: f64,
}

pub fn optima(topo: &Topology, tm: &TrafficMatrix) -> Result<Optima, EvalError> {
    let (u, _) = solve_optimal_all_flows(topo, tm)?;
    let omega = solve_delay_optimal(topo, tm, EVAL_DELAY_MAX_ITERS, DEFAULT_TOL)?.omega;
    Ok(Optima { u, omega })
}

/// `optimal / achieved`, with 0/0 read as 1.
fn ratio(optimal: f64, achieved: f64) -> f64 {
    if achieved == 0.0 && optimal == 0.0 {
        1.0
    } else {
        optimal / achieved
    }
}

/// Share of total demand carried by `selection`; 0 for an empty matrix.
pub fn rerouting_disturbance(tm: &TrafficMatrix, selection: &[usize]) -> f64 {
    let total = tm.total();
    if total == 0.0 {
        return 0.0;
    }
    let demands = tm.flow_demands();
    selection.iter().fold(0.0, |acc, &f| acc + demands[f]) / total
}

/// Scores one selection against precomputed optima.
pub fn eval_with_optima(
    topo: &Topology,
    fractions: &EcmpFractions,
    tm: &TrafficMatrix,
    method: SelectionMethod,
    selection: &[usize],
    opt: Optima,
) -> Result<EvalRecord, EvalError> {
    let sol = reroute(topo, tm, fractions, selection)?;
    let omega_method = evaluate_delay(topo, &sol.link_loads);
    Ok(EvalRecord {
        tm_id: tm.id().to_string(),
        method,
        k: selection.len(),
        u_method: sol.u,
        u_optimal: opt.u,
        pr_u: ratio(opt.u, sol.u),
        omega_method,
        omega_optimal: opt.omega,
        pr_omega: ratio(opt.omega, omega_method),
        rd: rerouting_disturbance(tm, selection),
    })
}

pub fn eval_one(
    topo: &Topology,
    fractions: &EcmpFractions,
    tm: &TrafficMatrix,
    method: SelectionMethod,
    selection: &[usize],
) -> Result<EvalRecord, EvalError> {
    let opt = optima(topo, tm)?;
    eval_with_optima(topo, fractions, tm, method, selection, opt)
}

/// Flows chosen by `method` for `tm`. The policy takes its K most probable
/// actions; the random selector draws from `rng`.
pub fn select(
    topo: &Topology,
    fractions: &EcmpFractions,
    tm: &TrafficMatrix,
    method: SelectionMethod,
    k: usize,
    policy_params: Option<&PolicyParams>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, EvalError> {
    Ok(match method {
        SelectionMethod::Ecmp => Vec::new(),
        SelectionMethod::Policy => {
            let params = policy_params.ok_or(EvalError::MissingPolicy)?;
            let dist = policy::forward(params, tm)?;
            policy::greedy_top_k(&dist, k).actions
        }
        SelectionMethod::TopK => selectors::top_k(tm, k)?.flows,
        SelectionMethod::TopKCritical => selectors::top_k_critical(topo, fractions, tm, k)?.flows,
        SelectionMethod::Random => selectors::random_k(tm, k, rng)?.flows,
        SelectionMethod::BruteForce => {
            selectors::brute_force_best(topo, fractions, tm, k, DEFAULT_BRUTE_FORCE_CAP)?
                .0
                .flows
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub count: usize,
    /// Sorted values `x` with `F(x) = rank / count`.
    pub cdf: Vec<(f64, f64)>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        let mean = if count == 0 { 0.0 } else { values.iter().sum::<f64>() / count as f64 };
        let std = if count < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let cdf = sorted
            .into_iter()
            .enumerate()
            .map(|(i, x)| (x, (i + 1) as f64 / count as f64))
            .collect();
        Summary { mean, std, count, cdf }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    /// Ordered by matrix, then by method in the requested order.
    pub records: Vec<EvalRecord>,
    pub summaries: BTreeMap<(SelectionMethod, Metric), Summary>,
}

impl SuiteReport {
    pub fn summary(&self, method: SelectionMethod, metric: Metric) -> Option<&Summary> {
        self.summaries.get(&(method, metric))
    }

    pub fn records_of(&self, method: SelectionMethod) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }
}

/// Evaluates every method on every matrix, spreading matrices over threads.
/// Each matrix gets its own random stream derived from `seed` and its
/// position, so results do not depend on the thread count.
pub fn eval_suite(
    topo: &Topology,
    tms: &[TrafficMatrix],
    methods: &[SelectionMethod],
    policy_params: Option<&PolicyParams>,
    k: usize,
    seed: u64,
) -> Result<SuiteReport, EvalError> {
    if methods.contains(&SelectionMethod::Policy) && policy_params.is_none() {
        return Err(EvalError::MissingPolicy);
    }
    let fractions = EcmpFractions::compute(topo).map_err(|e| EvalError::Routing(e.to_string()))?;
    let eval_tm = |idx: usize| -> Result<Vec<EvalRecord>, EvalError> {
        let tm = &tms[idx];
        let opt = optima(topo, tm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        methods
            .iter()
            .map(|&m| {
                let sel = select(topo, &fractions, tm, m, k, policy_params, &mut rng)?;
                eval_with_optima(topo, &fractions, tm, m, &sel, opt)
            })
            .collect()
    };

    let threads = thread::available_parallelism().map_or(1, |n| n.get()).min(tms.len().max(1));
    let mut per_tm: Vec<Option<Result<Vec<EvalRecord>, EvalError>>> = (0..tms.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let chunk = tms.len().div_ceil(threads).max(1);
        let eval_tm = &eval_tm;
        let handles: Vec<_> = per_tm
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, slots)| {
                scope.spawn(move || {
                    for (i, slot) in slots.iter_mut().enumerate() {
                        *slot = Some(eval_tm(c * chunk + i));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().expect("evaluation thread panicked");
        }
    });

    let mut records = Vec::with_capacity(tms.len() * methods.len());
    for r in per_tm {
        records.extend(r.expect("every matrix evaluated")?);
    }
    let mut summaries = BTreeMap::new();
    for &m in methods {
        for metric in Metric::ALL {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.metric(metric))
                .collect();
            summaries.insert((m, metric), Summary::of(&values));
        }
    }
    Ok(SuiteReport { records, summaries })
}

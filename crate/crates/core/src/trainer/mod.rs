//! REINFORCE training of the selection policy.
//!
//! Each iteration samples a batch of states, draws one K-flow solution per
//! state from the current policy, scores it with the rerouting LP (reward
//! `1/U`), and takes one gradient-ascent step on
//! `sum_t (r_t - b(s_t)) ∇log π(solution_t) + β ∇H(π(·|s_t))`, where the
//! baseline `b(s)` is the running mean reward of state `s`.

mod parallel;

use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::ecmp::EcmpFractions;
use crate::lp::{reroute, LpError};
use crate::policy::{self, Architecture, PolicyError, PolicyParams, Solution};
use crate::topology::Topology;
use crate::traffic::TrafficMatrix;

pub use parallel::train_parallel;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("degenerate state {0}: zero traffic gives zero utilization")]
    Degenerate(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    /// Parameters or activations stopped being finite; carries the state
    /// before the failing update.
    #[error("training diverged at iteration {iteration}: non-finite parameters or activations")]
    NonFinite { iteration: u64, last_finite: Box<Checkpoint> },
    #[error("all actors terminated after {updates} learner updates")]
    ActorsExhausted { updates: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub alpha0: f64,
    pub decay_every: u64,
    pub decay_base: f64,
    pub alpha_min: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub k: usize,
    pub actor_count: usize,
    pub total_iterations: u64,
    pub seed: u64,
    /// Convolution filters and hidden units.
    pub width: usize,
    /// Parallel mode only: run actors round-robin on one thread.
    pub sync: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            alpha0: 0.001,
            decay_every: 500,
            decay_base: 0.96,
            alpha_min: 0.0001,
            beta: 0.1,
            batch_size: 20,
            k: 1,
            actor_count: 20,
            total_iterations: 10_000,
            seed: 0,
            width: policy::DEFAULT_WIDTH,
            sync: false,
        }
    }
}

impl TrainerConfig {
    /// `max(alpha_min, alpha0 · decay_base^⌊i / decay_every⌋)`
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let steps = (iteration / self.decay_every) as i32;
        (self.alpha0 * self.decay_base.powi(steps)).max(self.alpha_min)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.alpha0 > 0.0 && self.alpha_min > 0.0 && self.alpha_min <= self.alpha0) {
            return bad("need 0 < alpha_min <= alpha0");
        }
        if !(self.decay_base > 0.0) || self.decay_every == 0 {
            return bad("decay_base and decay_every must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.batch_size == 0 || self.k == 0 || self.actor_count == 0 || self.width == 0 {
            return bad("batch_size, k, actor_count and width must be at least 1");
        }
        Ok(())
    }
}

/// Running reward sums and visit counts per state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineTable {
    entries: BTreeMap<usize, (f64, u64)>,
}

impl BaselineTable {
    /// Mean recorded reward of `state`; 0 for a state never recorded.
    pub fn baseline(&self, state: usize) -> f64 {
        match self.entries.get(&state) {
            Some(&(v, n)) if n > 0 => v / n as f64,
            _ => 0.0,
        }
    }

    pub fn record(&mut self, state: usize, reward: f64) {
        let e = self.entries.entry(state).or_insert((0.0, 0));
        e.0 += reward;
        e.1 += 1;
    }

    pub fn get(&self, state: usize) -> Option<(f64, u64)> {
        self.entries.get(&state).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64, u64)> + '_ {
        self.entries.iter().map(|(&s, &(v, n))| (s, v, n))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (usize, f64, u64)>) -> BaselineTable {
        BaselineTable {
            entries: entries.into_iter().map(|(s, v, n)| (s, (v, n))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: usize,
    pub solution: Solution,
    pub reward: f64,
    pub baseline: f64,
    pub advantage: f64,
    /// Policy entropy at the state when the solution was drawn.
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: u64,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub alpha: f64,
    pub wall_ms: u128,
}

/// A source of states and rewards.
pub trait Environment: Sync {
    fn num_states(&self) -> usize;
    fn state(&self, id: usize) -> &TrafficMatrix;
    fn reward(&self, id: usize, solution: &Solution) -> Result<f64, TrainError>;
}

/// Reward `1/U` after rerouting the selected flows on `topo`.
pub fn compute_reward(
    topo: &Topology,
    fractions: &EcmpFractions,
    tm: &TrafficMatrix,
    solution: &Solution,
) -> Result<f64, TrainError> {
    let u = reroute(topo, tm, fractions, &solution.actions)?.u;
    if u <= 0.0 {
        return Err(TrainError::Degenerate(tm.id().to_string()));
    }
    Ok(1.0 / u)
}

/// Traffic matrices on a fixed topology, rewarded by the rerouting LP.
pub struct RerouteEnv {
    pub topo: Topology,
    pub fractions: EcmpFractions,
    pub matrices: Vec<TrafficMatrix>,
}

impl RerouteEnv {
    pub fn new(topo: Topology, matrices: Vec<TrafficMatrix>) -> Result<RerouteEnv, TrainError> {
        let fractions = EcmpFractions::compute(&topo).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(RerouteEnv {
            topo,
            fractions,
            matrices,
        })
    }
}

impl Environment for RerouteEnv {
    fn num_states(&self) -> usize {
        self.matrices.len()
    }

    fn state(&self, id: usize) -> &TrafficMatrix {
        &self.matrices[id]
    }

    fn reward(&self, id: usize, solution: &Solution) -> Result<f64, TrainError> {
        compute_reward(&self.topo, &self.fractions, &self.matrices[id], solution)
    }
}

/// Drops all-zero matrices, which have no meaningful reward.
pub fn usable_states<E: Environment>(env: &E, candidates: &[usize]) -> Vec<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&s| {
            let zero = env.state(s).is_zero();
            if zero {
                warn!("skipping all-zero traffic matrix {} (state {s})", env.state(s).id());
            }
            !zero
        })
        .collect()
}

/// Sum over a batch of `advantage · ∇log π + β ∇H`, evaluated at `params`.
pub fn batch_gradient<E: Environment>(
    env: &E,
    params: &PolicyParams,
    batch: &[Experience],
    beta: f64,
) -> Result<PolicyParams, TrainError> {
    let mut grad = PolicyParams::zeros(params.arch());
    for e in batch {
        policy::accumulate_gradients(params, env.state(e.state), &e.solution, e.advantage, beta, 1.0, &mut grad)?;
    }
    Ok(grad)
}

/// The parameter change applied for one logged batch: `alpha · batch_gradient`.
pub fn replay_update<E: Environment>(
    env: &E,
    params: &PolicyParams,
    batch: &[Experience],
    alpha: f64,
    beta: f64,
) -> Result<PolicyParams, TrainError> {
    let mut delta = batch_gradient(env, params, batch, beta)?;
    for g in delta.groups_mut() {
        g.iter_mut().for_each(|v| *v *= alpha);
    }
    Ok(delta)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub baseline: BaselineTable,
    pub log: Vec<IterationLog>,
    /// Experiences of every update, in update order.
    pub history: Vec<Vec<Experience>>,
    pub updates: u64,
}

/// Serial trainer. Bit-deterministic for a fixed configuration.
pub struct Trainer<'a, E: Environment> {
    env: &'a E,
    config: TrainerConfig,
    states: Vec<usize>,
    params: PolicyParams,
    baseline: BaselineTable,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl<'a, E: Environment> Trainer<'a, E> {
    pub fn new(env: &'a E, train_states: &[usize], config: TrainerConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let states = usable_states(env, train_states);
        if states.is_empty() {
            return Err(TrainError::Config("training set has no usable states".into()));
        }
        let n = env.state(states[0]).n();
        if config.k > n * (n - 1) {
            return Err(TrainError::Config(format!("k = {} exceeds the {} available flows", config.k, n * (n - 1))));
        }
        let params = PolicyParams::init(Architecture::with_width(n, config.width), config.seed);
        Ok(Trainer {
            env,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            config,
            states,
            params,
            baseline: BaselineTable::default(),
            iteration: 0,
        })
    }

    /// Continues from a checkpoint; the sampling stream restarts from the
    /// configured seed mixed with the checkpoint iteration.
    pub fn resume(env: &'a E, train_states: &[usize], config: TrainerConfig, ckpt: Checkpoint) -> Result<Self, TrainError> {
        let mut t = Trainer::new(env, train_states, config)?;
        if ckpt.params.arch() != t.params.arch() {
            return Err(TrainError::Config("checkpoint architecture does not match".into()));
        }
        t.rng = ChaCha8Rng::seed_from_u64(t.config.seed.wrapping_add(1) ^ ckpt.iteration.rotate_left(32));
        t.params = ckpt.params;
        t.baseline = ckpt.baseline;
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn baseline(&self) -> &BaselineTable {
        &self.baseline
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone(), self.iteration, &self.config, self.baseline.clone())
    }

    fn diverged(&self, e: TrainError) -> TrainError {
        diverged(e, || self.checkpoint())
    }

    /// Runs one iteration and returns its experiences and log entry.
    pub fn step(&mut self) -> Result<(Vec<Experience>, IterationLog), TrainError> {
        let start = Instant::now();
        let alpha = self.config.learning_rate(self.iteration);
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let state = self.states[self.rng.random_range(0..self.states.len())];
            let dist = policy::forward(&self.params, self.env.state(state)).map_err(|e| self.diverged(e.into()))?;
            let solution = policy::sample_solution(&dist, self.config.k, &mut self.rng)?;
            let reward = self.env.reward(state, &solution)?;
            let baseline = self.baseline.baseline(state);
            batch.push(Experience {
                state,
                solution,
                reward,
                baseline,
                advantage: reward - baseline,
                entropy: policy::entropy(&dist),
            });
        }
        let delta = replay_update(self.env, &self.params, &batch, alpha, self.config.beta).map_err(|e| self.diverged(e))?;
        let mut next = self.params.clone();
        next.add_scaled(&delta, 1.0);
        if !next.is_finite() {
            return Err(self.diverged(TrainError::Policy(PolicyError::NonFinite { layer: "update" })));
        }
        self.params = next;
        for e in &batch {
            self.baseline.record(e.state, e.reward);
        }
        let log = summarize(self.iteration, &batch, alpha, start);
        self.iteration += 1;
        Ok((batch, log))
    }

    /// Runs until `total_iterations`, calling `on_checkpoint` every
    /// `checkpoint_every` iterations (if nonzero) and at the end.
    pub fn run(
        mut self,
        checkpoint_every: u64,
        mut on_checkpoint: impl FnMut(&Checkpoint),
    ) -> Result<TrainOutcome, TrainError> {
        let mut log = Vec::new();
        let mut history = Vec::new();
        while self.iteration < self.config.total_iterations {
            let (batch, entry) = self.step()?;
            log.push(entry);
            history.push(batch);
            if checkpoint_every > 0 && self.iteration % checkpoint_every == 0 {
                on_checkpoint(&self.checkpoint());
            }
        }
        on_checkpoint(&self.checkpoint());
        Ok(TrainOutcome {
            updates: self.iteration,
            params: self.params,
            baseline: self.baseline,
            log,
            history,
        })
    }
}

/// Turns a non-finite policy error into [`TrainError::NonFinite`].
fn diverged(e: TrainError, checkpoint: impl FnOnce() -> Checkpoint) -> TrainError {
    match e {
        TrainError::Policy(PolicyError::NonFinite { .. }) => {
            let last_finite = checkpoint();
            TrainError::NonFinite {
                iteration: last_finite.iteration,
                last_finite: Box::new(last_finite),
            }
        }
        other => other,
    }
}

fn summarize(iteration: u64, batch: &[Experience], alpha: f64, start: Instant) -> IterationLog {
    let n = batch.len().max(1) as f64;
    IterationLog {
        iteration,
        mean_reward: batch.iter().map(|e| e.reward).sum::<f64>() / n,
        mean_entropy: batch.iter().map(|e| e.entropy).sum::<f64>() / n,
        alpha,
        wall_ms: start.elapsed().as_millis(),
    }
}

/// Serial training over `train_states` of `env`.
pub fn train<E: Environment>(env: &E, train_states: &[usize], config: &TrainerConfig) -> Result<TrainOutcome, TrainError> {
    Trainer::new(env, train_states, config.clone())?.run(0, |_| {})
}

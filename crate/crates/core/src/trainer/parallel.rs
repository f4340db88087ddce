//! Actor/learner training.
//!
//! Each actor owns a disjoint slice of the training states and a private
//! random stream. It snapshots the current parameters, samples a batch of
//! states from its slice, draws solutions and computes rewards, asks the
//! learner for baselines and ships the batch. The learner applies one
//! gradient step per received batch, using its current parameters, and
//! publishes the new snapshot. Actors never block on each other; the
//! bounded channel caps how far they can run ahead.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Instant;

use log::{error, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    diverged, replay_update, summarize, usable_states, BaselineTable, Environment, Experience, TrainError, TrainOutcome,
    TrainerConfig,
};
use crate::checkpoint::Checkpoint;
use crate::policy::{self, Architecture, PolicyError, PolicyParams, Solution};

struct Sample {
    state: usize,
    solution: Solution,
    reward: f64,
    entropy: f64,
}

struct Actor<'a, E: Environment> {
    id: usize,
    env: &'a E,
    states: Vec<usize>,
    rng: ChaCha8Rng,
    k: usize,
    batch_size: usize,
}

impl<E: Environment> Actor<'_, E> {
    fn sample(&mut self, params: &PolicyParams) -> Result<Vec<Sample>, TrainError> {
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let state = self.states[self.rng.random_range(0..self.states.len())];
            let dist = policy::forward(params, self.env.state(state))?;
            let solution = policy::sample_solution(&dist, self.k, &mut self.rng)?;
            let reward = self.env.reward(state, &solution)?;
            out.push(Sample {
                state,
                solution,
                reward,
                entropy: policy::entropy(&dist),
            });
        }
        Ok(out)
    }
}

fn into_experiences(samples: Vec<Sample>, baselines: &[f64]) -> Vec<Experience> {
    samples
        .into_iter()
        .zip(baselines)
        .map(|(s, &b)| Experience {
            state: s.state,
            solution: s.solution,
            reward: s.reward,
            baseline: b,
            advantage: s.reward - b,
            entropy: s.entropy,
        })
        .collect()
}

enum Msg {
    Baseline { states: Vec<usize>, reply: mpsc::Sender<Vec<f64>> },
    Batch { actor: usize, batch: Vec<Experience> },
}

struct Learner<'a, E: Environment> {
    env: &'a E,
    config: &'a TrainerConfig,
    params: PolicyParams,
    baseline: BaselineTable,
    updates: u64,
    log: Vec<super::IterationLog>,
    history: Vec<Vec<Experience>>,
    last_update: Instant,
}

impl<E: Environment> Learner<'_, E> {
    fn baselines(&self, states: &[usize]) -> Vec<f64> {
        states.iter().map(|&s| self.baseline.baseline(s)).collect()
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone(), self.updates, self.config, self.baseline.clone())
    }

    fn apply(&mut self, batch: Vec<Experience>) -> Result<(), TrainError> {
        let alpha = self.config.learning_rate(self.updates);
        let delta = replay_update(self.env, &self.params, &batch, alpha, self.config.beta)
            .map_err(|e| diverged(e, || self.checkpoint()))?;
        let mut next = self.params.clone();
        next.add_scaled(&delta, 1.0);
        if !next.is_finite() {
            let e = TrainError::Policy(PolicyError::NonFinite { layer: "update" });
            return Err(diverged(e, || self.checkpoint()));
        }
        self.params = next;
        for e in &batch {
            self.baseline.record(e.state, e.reward);
        }
        self.log.push(summarize(self.updates, &batch, alpha, self.last_update));
        self.last_update = Instant::now();
        self.history.push(batch);
        self.updates += 1;
        Ok(())
    }

    fn finish(self) -> TrainOutcome {
        TrainOutcome {
            params: self.params,
            baseline: self.baseline,
            log: self.log,
            history: self.history,
            updates: self.updates,
        }
    }
}

/// Trains with `config.actor_count` actors for `config.total_iterations`
/// learner updates. With `config.sync` the actors take turns on the calling
/// thread, which makes the run deterministic.
pub fn train_parallel<E: Environment>(
    env: &E,
    train_states: &[usize],
    config: &TrainerConfig,
    checkpoint_every: u64,
    mut on_checkpoint: impl FnMut(&Checkpoint),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let states = usable_states(env, train_states);
    if states.is_empty() {
        return Err(TrainError::Config("training set has no usable states".into()));
    }
    let n = env.state(states[0]).n();
    if config.k > n * (n - 1) {
        return Err(TrainError::Config(format!("k = {} exceeds the {} available flows", config.k, n * (n - 1))));
    }
    if config.actor_count > states.len() {
        warn!(
            "{} actors but only {} training states; extra actors stay idle",
            config.actor_count,
            states.len()
        );
    }
    let actors: Vec<Actor<E>> = (0..config.actor_count.min(states.len()))
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(id as u64 + 1);
            Actor {
                id,
                env,
                states: states.iter().copied().skip(id).step_by(config.actor_count).collect(),
                rng,
                k: config.k,
                batch_size: config.batch_size,
            }
        })
        .collect();

    let mut learner = Learner {
        env,
        config,
        params: PolicyParams::init(Architecture::with_width(n, config.width), config.seed),
        baseline: BaselineTable::default(),
        updates: 0,
        log: Vec::new(),
        history: Vec::new(),
        last_update: Instant::now(),
    };

    if config.sync {
        run_sync(&mut learner, actors, checkpoint_every, &mut on_checkpoint)?;
    } else {
        run_async(&mut learner, actors, checkpoint_every, &mut on_checkpoint)?;
    }
    on_checkpoint(&learner.checkpoint());
    Ok(learner.finish())
}

fn run_sync<E: Environment>(
    learner: &mut Learner<E>,
    mut actors: Vec<Actor<E>>,
    checkpoint_every: u64,
    on_checkpoint: &mut impl FnMut(&Checkpoint),
) -> Result<(), TrainError> {
    let total = learner.config.total_iterations;
    while learner.updates < total {
        let idx = (learner.updates % actors.len() as u64) as usize;
        let samples = actors[idx]
            .sample(&learner.params)
            .map_err(|e| diverged(e, || learner.checkpoint()))?;
        let states: Vec<usize> = samples.iter().map(|s| s.state).collect();
        let baselines = learner.baselines(&states);
        learner.apply(into_experiences(samples, &baselines))?;
        if checkpoint_every > 0 && learner.updates % checkpoint_every == 0 {
            on_checkpoint(&learner.checkpoint());
        }
    }
    Ok(())
}

fn actor_loop<E: Environment>(
    mut actor: Actor<E>,
    shared: &RwLock<Arc<PolicyParams>>,
    stop: &AtomicBool,
    tx: SyncSender<Msg>,
) {
    while !stop.load(Ordering::Relaxed) {
        let snapshot = Arc::clone(&shared.read().expect("parameter lock poisoned"));
        let samples = match actor.sample(&snapshot) {
            Ok(s) => s,
            Err(e) => {
                error!("actor {} stopped: {e}", actor.id);
                return;
            }
        };
        let (reply_tx, reply_rx) = mpsc::channel();
        let states = samples.iter().map(|s| s.state).collect();
        if tx.send(Msg::Baseline { states, reply: reply_tx }).is_err() {
            return;
        }
        let Ok(baselines) = reply_rx.recv() else { return };
        let batch = into_experiences(samples, &baselines);
        if tx.send(Msg::Batch { actor: actor.id, batch }).is_err() {
            return;
        }
    }
}

fn run_async<E: Environment>(
    learner: &mut Learner<E>,
    actors: Vec<Actor<E>>,
    checkpoint_every: u64,
    on_checkpoint: &mut impl FnMut(&Checkpoint),
) -> Result<(), TrainError> {
    let shared = RwLock::new(Arc::new(learner.params.clone()));
    let stop = AtomicBool::new(false);
    let (tx, rx): (SyncSender<Msg>, Receiver<Msg>) = mpsc::sync_channel(4 * actors.len());
    let total = learner.config.total_iterations;

    thread::scope(|scope| {
        let handles: Vec<_> = actors
            .into_iter()
            .map(|actor| {
                let tx = tx.clone();
                let (shared, stop) = (&shared, &stop);
                let id = actor.id;
                let handle = thread::Builder::new()
                    .name(format!("actor-{id}"))
                    .spawn_scoped(scope, move || actor_loop(actor, shared, stop, tx))
                    .expect("spawn actor thread");
                (id, handle)
            })
            .collect();
        drop(tx);

        let mut result = Ok(());
        while learner.updates < total {
            match rx.recv() {
                Ok(Msg::Baseline { states, reply }) => {
                    // A closed reply channel means the actor has gone.
                    let _ = reply.send(learner.baselines(&states));
                }
                Ok(Msg::Batch { actor, batch }) => {
                    if let Err(e) = learner.apply(batch) {
                        result = Err(e);
                        break;
                    }
                    *shared.write().expect("parameter lock poisoned") = Arc::new(learner.params.clone());
                    if checkpoint_every > 0 && learner.updates % checkpoint_every == 0 {
                        on_checkpoint(&learner.checkpoint());
                    }
                    if learner.updates % 100 == 0 {
                        info!("update {} from actor {actor}", learner.updates);
                    }
                }
                Err(_) => {
                    result = Err(TrainError::ActorsExhausted {
                        updates: learner.updates,
                    });
                    break;
                }
            }
        }
        stop.store(true, Ordering::Relaxed);
        drop(rx);
        for (id, h) in handles {
            if h.join().is_err() {
                warn!("actor {id} panicked");
            }
        }
        result
    })
}

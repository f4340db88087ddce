//! Critical-flow selection policy.
//!
//! The network maps an N×N traffic matrix to a softmax over the N(N-1)
//! flows: a 3×3 same-padded convolution with `filters` channels, a fully
//! connected layer of `hidden` units (both Leaky ReLU) and a linear output
//! layer. Gradients are computed by hand; there is no autodiff.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::traffic::TrafficMatrix;

pub const DEFAULT_WIDTH: usize = 128;
pub const LEAKY_SLOPE: f64 = 0.01;
const KERNEL: usize = 3;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {layer}")]
    NonFinite { layer: &'static str },
    #[error("invalid solution: {0}")]
    Solution(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub n: usize,
    pub filters: usize,
    pub hidden: usize,
}

impl Architecture {
    pub fn new(n: usize) -> Architecture {
        Architecture::with_width(n, DEFAULT_WIDTH)
    }

    /// Same number of convolution filters and hidden units.
    pub fn with_width(n: usize, width: usize) -> Architecture {
        Architecture {
            n,
            filters: width,
            hidden: width,
        }
    }

    pub fn actions(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// Flattened convolution output size, `filters · N²`.
    pub fn conv_out(&self) -> usize {
        self.filters * self.n * self.n
    }
}

/// Weights and biases of all three layers. Also used as the gradient
/// container.
///
/// Layouts: `conv_w[f*9 + ky*3 + kx]`; the flattened convolution output is
/// indexed `(r*N + c) * filters + f`; `fc1_w[i*hidden + j]`;
/// `fc2_w[j*actions + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

pub const GROUP_NAMES: [&str; 6] = ["conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"];

impl PolicyParams {
    pub fn zeros(arch: Architecture) -> PolicyParams {
        PolicyParams {
            arch,
            conv_w: vec![0.0; arch.filters * KERNEL * KERNEL],
            conv_b: vec![0.0; arch.filters],
            fc1_w: vec![0.0; arch.conv_out() * arch.hidden],
            fc1_b: vec![0.0; arch.hidden],
            fc2_w: vec![0.0; arch.hidden * arch.actions()],
            fc2_b: vec![0.0; arch.actions()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::zeros(arch);
        let field = (KERNEL * KERNEL) as f64;
        let mut fill = |w: &mut [f64], fan_in: f64, fan_out: f64| {
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        };
        fill(&mut p.conv_w, field, field * arch.filters as f64);
        fill(&mut p.fc1_w, arch.conv_out() as f64, arch.hidden as f64);
        fill(&mut p.fc2_w, arch.hidden as f64, arch.actions() as f64);
        p
    }

    /// Rebuilds parameters from groups in [`GROUP_NAMES`] order.
    pub fn from_groups(arch: Architecture, groups: Vec<Vec<f64>>) -> Result<PolicyParams, PolicyError> {
        let mut p = PolicyParams::zeros(arch);
        if groups.len() != GROUP_NAMES.len() {
            return Err(PolicyError::Shape(format!("expected 6 parameter groups, got {}", groups.len())));
        }
        for ((name, dst), src) in GROUP_NAMES.iter().zip(p.groups_mut()).zip(groups) {
            if dst.len() != src.len() {
                return Err(PolicyError::Shape(format!(
                    "group {name}: expected {} values, got {}",
                    dst.len(),
                    src.len()
                )));
            }
            dst.copy_from_slice(&src);
        }
        Ok(p)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn groups(&self) -> [&[f64]; 6] {
        [&self.conv_w, &self.conv_b, &self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &PolicyParams) -> f64 {
        self.groups()
            .iter()
            .zip(other.groups())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Softmax distribution over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(logits: Vec<f64>) -> ActionDistribution {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        ActionDistribution {
            logits,
            probs,
            log_probs,
        }
    }

    pub fn uniform(actions: usize) -> ActionDistribution {
        ActionDistribution::from_logits(vec![0.0; actions])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// K distinct actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    pub actions: Vec<usize>,
    /// Set when fewer than K actions had positive probability and the rest
    /// were drawn uniformly from the remaining actions.
    pub filled_uniform: bool,
}

impl Solution {
    pub fn new(actions: Vec<usize>) -> Solution {
        Solution {
            actions,
            filled_uniform: false,
        }
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Intermediate activations kept for backpropagation.
struct Activations {
    input: Vec<f64>,
    conv_pre: Vec<f64>,
    conv_act: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    dist: ActionDistribution,
}

/// Max-normalized input; an all-zero matrix stays all-zero.
fn normalized_input(tm: &TrafficMatrix) -> Vec<f64> {
    let max = tm.max();
    if max > 0.0 {
        tm.as_slice().iter().map(|v| v / max).collect()
    } else {
        vec![0.0; tm.as_slice().len()]
    }
}

fn check_finite(values: &[f64], layer: &'static str) -> Result<(), PolicyError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PolicyError::NonFinite { layer })
    }
}

fn run_forward(params: &PolicyParams, tm: &TrafficMatrix) -> Result<Activations, PolicyError> {
    let arch = params.arch;
    let n = arch.n;
    if tm.n() != n {
        return Err(PolicyError::Shape(format!("traffic matrix has N = {}, policy expects {n}", tm.n())));
    }
    let (nf, nh, na) = (arch.filters, arch.hidden, arch.actions());
    let input = normalized_input(tm);

    let mut conv_pre = vec![0.0; arch.conv_out()];
    for r in 0..n {
        for c in 0..n {
            let out = &mut conv_pre[(r * n + c) * nf..(r * n + c + 1) * nf];
            out.copy_from_slice(&params.conv_b);
            for ky in 0..KERNEL {
                let y = r as isize + ky as isize - 1;
                if y < 0 || y >= n as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let x = c as isize + kx as isize - 1;
                    if x < 0 || x >= n as isize {
                        continue;
                    }
                    let v = input[y as usize * n + x as usize];
                    if v == 0.0 {
                        continue;
                    }
                    let k = ky * KERNEL + kx;
                    for (f, o) in out.iter_mut().enumerate() {
                        *o += params.conv_w[f * KERNEL * KERNEL + k] * v;
                    }
                }
            }
        }
    }
    let conv_act: Vec<f64> = conv_pre.iter().map(|&z| leaky(z)).collect();

    let mut fc1_pre = params.fc1_b.clone();
    for (i, &a) in conv_act.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &params.fc1_w[i * nh..(i + 1) * nh];
        for (h, w) in fc1_pre.iter_mut().zip(row) {
            *h += a * w;
        }
    }
    let fc1_act: Vec<f64> = fc1_pre.iter().map(|&z| leaky(z)).collect();

    let mut logits = params.fc2_b.clone();
    for (j, &a) in fc1_act.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &params.fc2_w[j * na..(j + 1) * na];
        for (z, w) in logits.iter_mut().zip(row) {
            *z += a * w;
        }
    }
    check_finite(&logits, "output")?;
    Ok(Activations {
        input,
        conv_pre,
        conv_act,
        fc1_pre,
        fc1_act,
        dist: ActionDistribution::from_logits(logits),
    })
}

pub fn forward(params: &PolicyParams, tm: &TrafficMatrix) -> Result<ActionDistribution, PolicyError> {
    run_forward(params, tm).map(|a| a.dist)
}

/// Draws `k` distinct actions sequentially, renormalizing after each draw.
pub fn sample_solution(dist: &ActionDistribution, k: usize, rng: &mut impl Rng) -> Result<Solution, PolicyError> {
    let na = dist.len();
    if k == 0 || k > na {
        return Err(PolicyError::Solution(format!("k = {k} outside [1, {na}]")));
    }
    let mut weights = dist.probs.clone();
    let mut chosen = vec![false; na];
    let mut actions = Vec::with_capacity(k);
    let mut filled_uniform = false;
    while actions.len() < k {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (a, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(a);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            filled_uniform = true;
            let remaining: Vec<usize> = (0..na).filter(|&a| !chosen[a]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        chosen[pick] = true;
        weights[pick] = 0.0;
        actions.push(pick);
    }
    Ok(Solution { actions, filled_uniform })
}

/// The `k` most probable actions, ties broken by lower action id.
pub fn greedy_top_k(dist: &ActionDistribution, k: usize) -> Solution {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist.logits[b].total_cmp(&dist.logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Solution::new(idx)
}

/// Sum of per-action log-probabilities (the with-replacement product
/// approximation of the solution probability).
pub fn solution_log_prob(dist: &ActionDistribution, sol: &Solution) -> f64 {
    sol.actions
        .iter()
        .map(|&a| if dist.probs[a] == 0.0 { f64::NEG_INFINITY } else { dist.log_probs[a] })
        .sum()
}

pub fn entropy(dist: &ActionDistribution) -> f64 {
    -dist
        .probs
        .iter()
        .zip(&dist.log_probs)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lp)| p * lp)
        .sum::<f64>()
}

/// `advantage · log π(sol) + beta · H(π)`, the per-state training objective.
pub fn surrogate_objective(
    params: &PolicyParams,
    tm: &TrafficMatrix,
    sol: &Solution,
    advantage: f64,
    beta: f64,
) -> Result<f64, PolicyError> {
    let dist = forward(params, tm)?;
    let mut value = beta * entropy(&dist);
    if advantage != 0.0 {
        value += advantage * solution_log_prob(&dist, sol);
    }
    Ok(value)
}

/// Gradient of [`surrogate_objective`] with respect to every parameter
/// (an ascent direction).
pub fn gradients(
    params: &PolicyParams,
    tm: &TrafficMatrix,
    sol: &Solution,
    advantage: f64,
    beta: f64,
) -> Result<PolicyParams, PolicyError> {
    let mut grad = PolicyParams::zeros(params.arch);
    accumulate_gradients(params, tm, sol, advantage, beta, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale` times the gradient of the training objective into `grad`.
pub fn accumulate_gradients(
    params: &PolicyParams,
    tm: &TrafficMatrix,
    sol: &Solution,
    advantage: f64,
    beta: f64,
    scale: f64,
    grad: &mut PolicyParams,
) -> Result<(), PolicyError> {
    let arch = params.arch;
    let (n, nf, nh, na) = (arch.n, arch.filters, arch.hidden, arch.actions());
    if grad.arch != arch {
        return Err(PolicyError::Shape("gradient buffer architecture differs".into()));
    }
    if let Some(&bad) = sol.actions.iter().find(|&&a| a >= na) {
        return Err(PolicyError::Solution(format!("action {bad} out of range")));
    }
    let act = run_forward(params, tm)?;
    let dist = &act.dist;

    // d objective / d logits
    let h = entropy(dist);
    let k = sol.actions.len() as f64;
    let mut d_logits: Vec<f64> = dist
        .probs
        .iter()
        .zip(&dist.log_probs)
        .map(|(&p, &lp)| {
            let ent = if p > 0.0 { -beta * p * (lp + h) } else { 0.0 };
            ent - advantage * k * p
        })
        .collect();
    for &a in &sol.actions {
        d_logits[a] += advantage;
    }
    d_logits.iter_mut().for_each(|g| *g *= scale);
    check_finite(&d_logits, "softmax")?;

    // Output layer.
    let mut d_fc1 = vec![0.0; nh];
    for j in 0..nh {
        let a = act.fc1_act[j];
        let row = j * na..(j + 1) * na;
        let w = &params.fc2_w[row.clone()];
        let gw = &mut grad.fc2_w[row];
        let mut back = 0.0;
        for ((g, &wv), &dz) in gw.iter_mut().zip(w).zip(&d_logits) {
            *g += a * dz;
            back += wv * dz;
        }
        d_fc1[j] = back * leaky_grad(act.fc1_pre[j]);
    }
    for (g, dz) in grad.fc2_b.iter_mut().zip(&d_logits) {
        *g += dz;
    }
    check_finite(&d_fc1, "fc2")?;

    // Hidden layer.
    let mut d_conv = vec![0.0; arch.conv_out()];
    for i in 0..arch.conv_out() {
        let a = act.conv_act[i];
        let row = i * nh..(i + 1) * nh;
        let w = &params.fc1_w[row.clone()];
        let gw = &mut grad.fc1_w[row];
        let mut back = 0.0;
        for ((g, &wv), &dz) in gw.iter_mut().zip(w).zip(&d_fc1) {
            *g += a * dz;
            back += wv * dz;
        }
        d_conv[i] = back * leaky_grad(act.conv_pre[i]);
    }
    for (g, dz) in grad.fc1_b.iter_mut().zip(&d_fc1) {
        *g += dz;
    }
    check_finite(&d_conv, "fc1")?;

    // Convolution.
    for r in 0..n {
        for c in 0..n {
            let dz = &d_conv[(r * n + c) * nf..(r * n + c + 1) * nf];
            for (g, d) in grad.conv_b.iter_mut().zip(dz) {
                *g += d;
            }
            for ky in 0..KERNEL {
                let y = r as isize + ky as isize - 1;
                if y < 0 || y >= n as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let x = c as isize + kx as isize - 1;
                    if x < 0 || x >= n as isize {
                        continue;
                    }
                    let v = act.input[y as usize * n + x as usize];
                    if v == 0.0 {
                        continue;
                    }
                    let k = ky * KERNEL + kx;
                    for (f, d) in dz.iter().enumerate() {
                        grad.conv_w[f * KERNEL * KERNEL + k] += d * v;
                    }
                }
            }
        }
    }
    check_finite(&grad.conv_w, "conv")?;
    Ok(())
}

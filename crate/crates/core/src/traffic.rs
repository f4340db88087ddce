//! Traffic matrices, synthetic generation and dataset splitting.
//!
//! File format: one matrix per line, N² whitespace-separated values in
//! row-major order (diagonal included), with an optional leading
//! `id:<string>` token. Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::ecmp::EcmpFractions;
use crate::topology::{all_flows, Topology};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid traffic matrix: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficMatrix {
    n: usize,
    demand: Vec<f64>,
    id: String,
}

impl TrafficMatrix {
    /// Builds a matrix from row-major demands. Entries must be finite and
    /// non-negative; the diagonal must be zero.
    pub fn new(n: usize, demand: Vec<f64>, id: impl Into<String>) -> Result<Self, TrafficError> {
        if demand.len() != n * n {
            return Err(TrafficError::Invalid(format!("expected {} entries, got {}", n * n, demand.len())));
        }
        for (i, &v) in demand.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(TrafficError::Invalid(format!(
                    "demand ({}, {}) = {v} is negative or not finite",
                    i / n,
                    i % n
                )));
            }
            if i / n == i % n && v != 0.0 {
                return Err(TrafficError::Invalid(format!("diagonal entry ({0}, {0}) is {v}", i / n)));
            }
        }
        Ok(TrafficMatrix { n, demand, id: id.into() })
    }

    pub fn zeros(n: usize, id: impl Into<String>) -> Self {
        TrafficMatrix {
            n,
            demand: vec![0.0; n * n],
            id: id.into(),
        }
    }

    /// Builds a matrix from a sparse list of `(s, d, demand)` entries.
    pub fn from_entries(n: usize, entries: &[(usize, usize, f64)], id: impl Into<String>) -> Result<Self, TrafficError> {
        let mut demand = vec![0.0; n * n];
        for &(s, d, v) in entries {
            if s >= n || d >= n {
                return Err(TrafficError::Invalid(format!("entry ({s}, {d}) out of range")));
            }
            demand[s * n + d] = v;
        }
        TrafficMatrix::new(n, demand, id)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn get(&self, s: usize, d: usize) -> f64 {
        self.demand[s * self.n + d]
    }

    /// Row-major N×N demands.
    pub fn as_slice(&self) -> &[f64] {
        &self.demand
    }

    /// Demands in action-id order (length N(N-1)).
    pub fn flow_demands(&self) -> Vec<f64> {
        all_flows(self.n).map(|(s, d)| self.get(s, d)).collect()
    }

    pub fn total(&self) -> f64 {
        self.demand.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.demand.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.demand.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, k: f64) -> TrafficMatrix {
        TrafficMatrix {
            n: self.n,
            demand: self.demand.iter().map(|v| v * k).collect(),
            id: self.id.clone(),
        }
    }
}

/// Rescales `tm` so that its ECMP maximum utilization becomes 0.9, given the
/// current ECMP maximum utilization `u_ecmp`.
pub fn scale_tm_for_delay(tm: &TrafficMatrix, u_ecmp: f64) -> Result<TrafficMatrix, TrafficError> {
    if !(u_ecmp > 0.0 && u_ecmp.is_finite()) {
        return Err(TrafficError::Domain(format!("ECMP utilization must be positive, got {u_ecmp}")));
    }
    Ok(tm.scaled(0.9 / u_ecmp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrafficModel {
    /// i.i.d. unit-mean exponential demands.
    Exponential,
    /// i.i.d. Uniform[0, 1] demands.
    Uniform,
}

impl std::str::FromStr for TrafficModel {
    type Err = TrafficError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" | "exp" => Ok(TrafficModel::Exponential),
            "uniform" | "uni" => Ok(TrafficModel::Uniform),
            other => Err(TrafficError::Domain(format!("unknown traffic model `{other}`"))),
        }
    }
}

impl std::fmt::Display for TrafficModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrafficModel::Exponential => "exponential",
            TrafficModel::Uniform => "uniform",
        })
    }
}

/// Draws `count` synthetic matrices and rescales each one so that its ECMP
/// maximum link utilization equals `target_ecmp_util`.
pub fn generate_tms(
    topo: &Topology,
    model: TrafficModel,
    count: usize,
    target_ecmp_util: f64,
    seed: u64,
) -> Result<Vec<TrafficMatrix>, TrafficError> {
    if count == 0 {
        return Err(TrafficError::Domain("count must be at least 1".into()));
    }
    if !(target_ecmp_util > 0.0 && target_ecmp_util <= 1.0) {
        return Err(TrafficError::Domain(format!("target utilization {target_ecmp_util} not in (0, 1]")));
    }
    let n = topo.node_count();
    let fractions = EcmpFractions::compute(topo).map_err(|e| TrafficError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut demand = vec![0.0; n * n];
        for (s, d) in all_flows(n) {
            demand[s * n + d] = match model {
                TrafficModel::Exponential => Exp1.sample(&mut rng),
                TrafficModel::Uniform => rng.random::<f64>(),
            };
        }
        let tm = TrafficMatrix::new(n, demand, format!("{model}-{i}"))?;
        let u = fractions.link_loads(topo, &tm, &[]).max_utilization;
        out.push(if u > 0.0 { tm.scaled(target_ecmp_util / u) } else { tm });
    }
    Ok(out)
}

/// A list of matrices with a disjoint train/test index split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub matrices: Vec<TrafficMatrix>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &TrafficMatrix> {
        self.train_indices.iter().map(|&i| &self.matrices[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &TrafficMatrix> {
        self.test_indices.iter().map(|&i| &self.matrices[i])
    }

    /// Uses every matrix for both training and testing.
    pub fn all_train(matrices: Vec<TrafficMatrix>) -> Dataset {
        let idx: Vec<usize> = (0..matrices.len()).collect();
        Dataset {
            matrices,
            train_indices: idx.clone(),
            test_indices: idx,
            seed: 0,
        }
    }
}

/// Uniformly random split with `round(train_fraction · total)` training
/// matrices, clamped so both sides are non-empty.
pub fn split_dataset(matrices: Vec<TrafficMatrix>, train_fraction: f64, seed: u64) -> Result<Dataset, TrafficError> {
    if matrices.len() < 2 {
        return Err(TrafficError::Domain(format!("need at least 2 matrices to split, got {}", matrices.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TrafficError::Domain(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let total = matrices.len();
    let n_train = ((train_fraction * total as f64).round() as usize).clamp(1, total - 1);
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_indices = idx[..n_train].to_vec();
    let mut test_indices = idx[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Dataset {
        matrices,
        train_indices,
        test_indices,
        seed,
    })
}

pub fn parse_tms(text: &str, n: usize) -> Result<Vec<TrafficMatrix>, TrafficError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace().peekable();
        let id = match toks.peek() {
            Some(t) if t.starts_with("id:") => {
                let id = t["id:".len()..].to_string();
                toks.next();
                id
            }
            _ => format!("tm-{}", out.len()),
        };
        let mut demand = Vec::with_capacity(n * n);
        for t in toks {
            let v: f64 = t.parse().map_err(|_| TrafficError::Parse {
                line: lineno,
                msg: format!("bad value `{t}`"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(TrafficError::Parse {
                    line: lineno,
                    msg: format!("negative or non-finite demand {v}"),
                });
            }
            demand.push(v);
        }
        if demand.len() != n * n {
            return Err(TrafficError::Parse {
                line: lineno,
                msg: format!("expected {} values for N = {n}, got {}", n * n, demand.len()),
            });
        }
        for i in 0..n {
            if demand[i * n + i] != 0.0 {
                warn!("line {lineno}: zeroing nonzero diagonal demand at ({i}, {i})");
                demand[i * n + i] = 0.0;
            }
        }
        out.push(TrafficMatrix::new(n, demand, id)?);
    }
    Ok(out)
}

pub fn load_tms(path: impl AsRef<Path>, n: usize) -> Result<Vec<TrafficMatrix>, TrafficError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TrafficError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tms(&text, n)
}

pub fn tms_to_text(tms: &[TrafficMatrix]) -> String {
    let mut out = String::new();
    for tm in tms {
        write!(out, "id:{}", tm.id()).unwrap();
        for v in tm.as_slice() {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_tms(path: impl AsRef<Path>, tms: &[TrafficMatrix]) -> Result<(), TrafficError> {
    let path = path.as_ref();
    fs::write(path, tms_to_text(tms)).map_err(|source| TrafficError::Io {
        path: path.display().to_string(),
        source,
    })
}

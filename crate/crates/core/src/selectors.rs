//! Critical-flow selection rules used as baselines for the learned policy.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::ecmp::EcmpFractions;
use crate::lp::{reroute, LpError};
use crate::topology::Topology;
use crate::traffic::TrafficMatrix;

/// Flows with an ECMP share at or below this are treated as not crossing a link.
pub const CROSSING_THRESHOLD: f64 = 1e-12;
pub const DEFAULT_BRUTE_FORCE_CAP: u64 = 10_000;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("k = {k} outside [1, {flows}]")]
    BadK { k: usize, flows: usize },
    #[error("{combinations} combinations exceed the brute-force cap of {cap}")]
    TooMany { combinations: u64, cap: u64 },
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SelectionMethod {
    /// The empty selection: everything stays on ECMP.
    Ecmp,
    Policy,
    TopK,
    TopKCritical,
    Random,
    BruteForce,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 6] = [
        SelectionMethod::Ecmp,
        SelectionMethod::Policy,
        SelectionMethod::TopK,
        SelectionMethod::TopKCritical,
        SelectionMethod::Random,
        SelectionMethod::BruteForce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Ecmp => "ecmp",
            SelectionMethod::Policy => "policy",
            SelectionMethod::TopK => "top_k",
            SelectionMethod::TopKCritical => "top_k_critical",
            SelectionMethod::Random => "random_k",
            SelectionMethod::BruteForce => "brute_force",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectionMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown selection method '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    /// Action ids, in selection order.
    pub flows: Vec<usize>,
}

fn check_k(tm: &TrafficMatrix, k: usize) -> Result<usize, SelectError> {
    let flows = tm.n() * (tm.n() - 1);
    if k == 0 || k > flows {
        return Err(SelectError::BadK { k, flows });
    }
    Ok(flows)
}

/// Flows by decreasing demand, ties by lower id.
fn by_demand(demands: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = candidates.collect();
    v.sort_by(|&a, &b| demands[b].total_cmp(&demands[a]).then(a.cmp(&b)));
    v
}

/// The K largest demands.
pub fn top_k(tm: &TrafficMatrix, k: usize) -> Result<SelectionResult, SelectError> {
    let flows = check_k(tm, k)?;
    let mut sel = by_demand(&tm.flow_demands(), 0..flows);
    sel.truncate(k);
    Ok(SelectionResult {
        method: SelectionMethod::TopK,
        flows: sel,
    })
}

/// Largest flows on the most utilized links: links are visited by
/// decreasing ECMP utilization and, on each, crossing flows are taken by
/// decreasing demand. If every link is exhausted first, the remainder comes
/// from the global demand order.
pub fn top_k_critical(
    topo: &Topology,
    fractions: &EcmpFractions,
    tm: &TrafficMatrix,
    k: usize,
) -> Result<SelectionResult, SelectError> {
    let flows = check_k(tm, k)?;
    let demands = tm.flow_demands();
    let util = fractions.link_loads(topo, tm, &[]).utilization(topo);
    let mut links: Vec<usize> = (0..topo.link_count()).collect();
    links.sort_by(|&a, &b| util[b].total_cmp(&util[a]).then(a.cmp(&b)));

    let mut crossing: Vec<Vec<usize>> = vec![Vec::new(); topo.link_count()];
    for f in 0..flows {
        for &(l, frac) in fractions.flow(f) {
            if frac > CROSSING_THRESHOLD && demands[f] > 0.0 {
                crossing[l].push(f);
            }
        }
    }
    let mut taken = vec![false; flows];
    let mut sel = Vec::with_capacity(k);
    'links: for &l in &links {
        for f in by_demand(&demands, crossing[l].iter().copied()) {
            if sel.len() == k {
                break 'links;
            }
            if !taken[f] {
                taken[f] = true;
                sel.push(f);
            }
        }
    }
    if sel.len() < k {
        for f in by_demand(&demands, 0..flows) {
            if sel.len() == k {
                break;
            }
            if !taken[f] {
                taken[f] = true;
                sel.push(f);
            }
        }
    }
    Ok(SelectionResult {
        method: SelectionMethod::TopKCritical,
        flows: sel,
    })
}

/// K distinct flows uniformly at random.
pub fn random_k(tm: &TrafficMatrix, k: usize, rng: &mut impl Rng) -> Result<SelectionResult, SelectError> {
    let flows = check_k(tm, k)?;
    Ok(SelectionResult {
        method: SelectionMethod::Random,
        flows: index::sample(rng, flows, k).into_vec(),
    })
}

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// The K-subset with the lowest rerouted utilization and that utilization.
///
/// Only positive-demand flows are enumerated: a zero-demand flow never
/// changes the LP, and adding a flow to the critical set never raises the
/// optimum, so the best K-subset is the best `min(K, P)`-subset of the `P`
/// positive flows, padded with the lowest-id zero-demand flows. Ties keep
/// the lexicographically smallest candidate subset.
pub fn brute_force_best(
    topo: &Topology,
    fractions: &EcmpFractions,
    tm: &TrafficMatrix,
    k: usize,
    cap: u64,
) -> Result<(SelectionResult, f64), SelectError> {
    let flows = check_k(tm, k)?;
    let demands = tm.flow_demands();
    let positive: Vec<usize> = (0..flows).filter(|&f| demands[f] > 0.0).collect();
    let kk = k.min(positive.len());
    let combinations = binomial(positive.len() as u64, kk as u64);
    if combinations > cap {
        return Err(SelectError::TooMany { combinations, cap });
    }
    let p = positive.len();
    let mut cur: Vec<usize> = (0..kk).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let subset: Vec<usize> = cur.iter().map(|&i| positive[i]).collect();
        let u = reroute(topo, tm, fractions, &subset)?.u;
        if best.as_ref().is_none_or(|(_, b)| u < *b - 1e-12) {
            best = Some((subset, u));
        }
        // next combination in lexicographic order
        let Some(i) = (0..kk).rev().find(|&i| cur[i] < p - kk + i) else {
            break;
        };
        cur[i] += 1;
        for j in i + 1..kk {
            cur[j] = cur[j - 1] + 1;
        }
    }
    let (mut sel, u) = best.expect("at least one combination");
    sel.extend((0..flows).filter(|&f| demands[f] == 0.0).take(k - kk));
    Ok((
        SelectionResult {
            method: SelectionMethod::BruteForce,
            flows: sel,
        },
        u,
    ))
}

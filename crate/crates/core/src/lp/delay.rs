//! Network delay `sum l/(c-l)` and its minimization over all routings by
//! Frank-Wolfe on link loads.

use log::warn;
use thiserror::Error;

use crate::ecmp::{distances_to, EcmpFractions, LinkLoads};
use crate::lp::rerouting::solve_optimal_all_flows;
use crate::lp::simplex::LpError;
use crate::topology::Topology;
use crate::traffic::TrafficMatrix;

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DelayError {
    #[error("overloaded instance: no routing keeps every link below capacity (best utilization {0})")]
    Overloaded(f64),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("routing error: {0}")]
    Routing(String),
}

/// Delay of a load vector; `f64::INFINITY` when any link is saturated.
pub fn evaluate_delay(topo: &Topology, loads: &LinkLoads) -> f64 {
    let mut omega = 0.0;
    for (l, link) in loads.load.iter().zip(topo.links()) {
        if *l >= link.capacity {
            return f64::INFINITY;
        }
        omega += l / (link.capacity - l);
    }
    omega
}

#[derive(Clone, Debug)]
pub struct DelayOptimum {
    pub omega: f64,
    pub loads: LinkLoads,
    /// Frank-Wolfe duality gap at termination; `omega - gap` lower-bounds the optimum.
    pub gap: f64,
    pub iterations: usize,
}

/// All-or-nothing assignment of `tm` on shortest paths under `weights`.
fn all_or_nothing(topo: &Topology, tm: &TrafficMatrix, weights: &[f64]) -> Vec<f64> {
    let n = topo.node_count();
    let mut y = vec![0.0; topo.link_count()];
    let mut mass = vec![0.0; n];
    for d in 0..n {
        if (0..n).all(|s| tm.get(s, d) == 0.0) {
            continue;
        }
        let dist = distances_to(topo, d, |l| weights[l]);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        for s in 0..n {
            mass[s] = tm.get(s, d);
        }
        for &i in &order {
            if i == d || mass[i] == 0.0 {
                continue;
            }
            let next = topo
                .out_links(i)
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = weights[a] + dist[topo.link(a).dst];
                    let db = weights[b] + dist[topo.link(b).dst];
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("strongly connected topology");
            y[next] += mass[i];
            mass[topo.link(next).dst] += mass[i];
            mass[i] = 0.0;
        }
    }
    y
}

fn delay_slope(caps: &[f64], x: &[f64], dir: &[f64], gamma: f64) -> f64 {
    caps.iter()
        .zip(x)
        .zip(dir)
        .map(|((c, l), d)| {
            let r = c - (l + gamma * d);
            d * c / (r * r)
        })
        .sum()
}

/// Minimizes delay over all multicommodity routings of `tm`.
///
/// Stops once the duality gap falls below `tol` relative to the current
/// delay, or after `max_iters` iterations.
pub fn solve_delay_optimal(
    topo: &Topology,
    tm: &TrafficMatrix,
    max_iters: usize,
    tol: f64,
) -> Result<DelayOptimum, DelayError> {
    if tm.is_zero() {
        return Ok(DelayOptimum {
            omega: 0.0,
            loads: LinkLoads::zeros(topo),
            gap: 0.0,
            iterations: 0,
        });
    }
    let caps = topo.capacities();
    let fractions = EcmpFractions::compute(topo).map_err(|e| DelayError::Routing(e.to_string()))?;
    let mut x = fractions.link_loads(topo, tm, &[]).load;
    if x.iter().zip(&caps).any(|(l, c)| l >= c) {
        let (u_opt, sol) = solve_optimal_all_flows(topo, tm)?;
        if u_opt >= 1.0 {
            return Err(DelayError::Overloaded(u_opt));
        }
        x = sol.link_loads.load;
    }

    let omega_of = |x: &[f64]| -> f64 { x.iter().zip(&caps).map(|(l, c)| l / (c - l)).sum() };
    let mut omega = omega_of(&x);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let weights: Vec<f64> = x.iter().zip(&caps).map(|(l, c)| c / ((c - l) * (c - l))).collect();
        let y = all_or_nothing(topo, tm, &weights);
        gap = weights.iter().zip(&x).zip(&y).map(|((w, a), b)| w * (a - b)).sum();
        if gap <= tol * omega {
            break;
        }
        let dir: Vec<f64> = y.iter().zip(&x).map(|(b, a)| b - a).collect();
        let mut gamma_max: f64 = 1.0;
        for ((c, l), d) in caps.iter().zip(&x).zip(&dir) {
            if *d > 0.0 && l + d >= *c {
                gamma_max = gamma_max.min((c - l) / d * (1.0 - 1e-9));
            }
        }
        let gamma = if delay_slope(&caps, &x, &dir, gamma_max) <= 0.0 {
            gamma_max
        } else {
            let (mut lo, mut hi) = (0.0, gamma_max);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if delay_slope(&caps, &x, &dir, mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        for (a, d) in x.iter_mut().zip(&dir) {
            *a += gamma * d;
        }
        omega = omega_of(&x);
    }
    if gap > tol * omega {
        warn!("delay optimization stopped after {iterations} iterations with relative gap {:e}", gap / omega);
    }
    Ok(DelayOptimum {
        omega,
        loads: LinkLoads::new(topo, x),
        gap,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Topology {
        Topology::parse("nodes 3\nedge 0 1 1 1\nedge 1 2 1 1\nedge 0 2 1 1\n").unwrap()
    }

    #[test]
    fn delay_examples() {
        let t = Topology::parse("nodes 2\nedge 0 1 1 1\n").unwrap();
        assert_eq!(evaluate_delay(&t, &LinkLoads::new(&t, vec![0.5, 0.0])), 1.0);
        assert_eq!(evaluate_delay(&t, &LinkLoads::zeros(&t)), 0.0);
        assert_eq!(evaluate_delay(&t, &LinkLoads::new(&t, vec![1.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn zero_traffic() {
        let t = triangle();
        let opt = solve_delay_optimal(&t, &TrafficMatrix::zeros(3, "z"), 10, 1e-5).unwrap();
        assert_eq!(opt.omega, 0.0);
    }

    #[test]
    fn overloaded_instance() {
        let t = triangle();
        let tm = TrafficMatrix::from_entries(3, &[(0, 2, 2.5)], "big").unwrap();
        assert!(matches!(solve_delay_optimal(&t, &tm, 10, 1e-5), Err(DelayError::Overloaded(_))));
    }

    #[test]
    fn beats_ecmp_and_uses_lp_start_when_needed() {
        let t = triangle();
        // ECMP puts 1.2 on the direct link; the LP start splits it.
        let tm = TrafficMatrix::from_entries(3, &[(0, 2, 1.2)], "t").unwrap();
        let opt = solve_delay_optimal(&t, &tm, 2000, 1e-7).unwrap();
        assert!(opt.omega.is_finite());
        assert!(opt.loads.max_utilization < 1.0);

        let tm = TrafficMatrix::from_entries(3, &[(0, 2, 0.5), (1, 2, 0.2)], "t").unwrap();
        let fr = EcmpFractions::compute(&t).unwrap();
        let ecmp = evaluate_delay(&t, &fr.link_loads(&t, &tm, &[]));
        let opt = solve_delay_optimal(&t, &tm, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert!(opt.omega <= ecmp + 1e-12);
        assert!(opt.omega - opt.gap <= opt.omega);
    }
}

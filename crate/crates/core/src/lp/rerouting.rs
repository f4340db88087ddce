//! Explicit rerouting of a critical flow set on top of ECMP background load.
//!
//! Variable layout: column 0 is the maximum utilization `U`; the split ratio
//! of critical flow `k` on link `l` is column `1 + k * M + l`. Capacity rows
//! are divided by the link capacity so every row is in utilization units.

use crate::ecmp::{EcmpFractions, LinkLoads};
use crate::lp::simplex::{LpError, LpProblem, Relation};
use crate::topology::{flow_of_index, Topology};
use crate::traffic::TrafficMatrix;

/// Explicit split ratios for a set of critical flows and the resulting loads.
#[derive(Clone, Debug)]
pub struct ReroutingSolution {
    /// Critical flows as action ids, in the order used by `sigma`.
    pub critical: Vec<usize>,
    /// `sigma[k][l]`: share of critical flow `k` carried on link `l`.
    pub sigma: Vec<Vec<f64>>,
    /// Maximum link utilization of `link_loads`.
    pub u: f64,
    pub objective: f64,
    pub link_loads: LinkLoads,
}

/// Default tie-breaking weight: the total penalty stays below 1e-4.
pub fn default_epsilon(link_count: usize, k: usize) -> f64 {
    1e-4 / (link_count as f64 * k.max(1) as f64)
}

pub fn build_rerouting_lp(
    topo: &Topology,
    tm: &TrafficMatrix,
    critical: &[usize],
    background: &LinkLoads,
    epsilon: f64,
) -> LpProblem {
    let n = topo.node_count();
    let m = topo.link_count();
    let nvars = 1 + critical.len() * m;
    let var = |k: usize, l: usize| 1 + k * m + l;

    let mut objective = vec![epsilon; nvars];
    objective[0] = 1.0;
    let mut lp = LpProblem::new(objective);
    lp.set_name(0, "U");
    for (k, &flow) in critical.iter().enumerate() {
        let (s, d) = flow_of_index(flow, n).expect("critical flow id in range");
        for (l, link) in topo.links().iter().enumerate() {
            lp.set_bounds(var(k, l), 0.0, 1.0);
            lp.set_name(var(k, l), format!("sigma_{s}_{d}_{}_{}", link.src, link.dst));
        }
    }

    // l_ij / c_ij <= U
    for (l, link) in topo.links().iter().enumerate() {
        let mut row = vec![(0, -1.0)];
        for (k, &flow) in critical.iter().enumerate() {
            let (s, d) = flow_of_index(flow, n).unwrap();
            let dem = tm.get(s, d);
            if dem != 0.0 {
                row.push((var(k, l), dem / link.capacity));
            }
        }
        lp.add_constraint(row, Relation::Le, -background.load[l] / link.capacity);
    }

    // Flow conservation; the destination row is implied by the others.
    for (k, &flow) in critical.iter().enumerate() {
        let (s, d) = flow_of_index(flow, n).unwrap();
        for i in (0..n).filter(|&i| i != d) {
            let mut row: Vec<(usize, f64)> = topo.out_links(i).iter().map(|&l| (var(k, l), 1.0)).collect();
            row.extend(topo.in_links(i).iter().map(|&l| (var(k, l), -1.0)));
            lp.add_constraint(row, Relation::Eq, if i == s { 1.0 } else { 0.0 });
        }
    }
    lp
}

/// Minimizes `U + epsilon * sum(sigma)` over split ratios of the critical
/// flows, with all other traffic fixed at `background`.
pub fn solve_rerouting(
    topo: &Topology,
    tm: &TrafficMatrix,
    critical: &[usize],
    background: &LinkLoads,
    epsilon: f64,
) -> Result<ReroutingSolution, LpError> {
    let m = topo.link_count();
    if critical.is_empty() {
        return Ok(ReroutingSolution {
            critical: Vec::new(),
            sigma: Vec::new(),
            u: background.max_utilization,
            objective: background.max_utilization,
            link_loads: background.clone(),
        });
    }
    let lp = build_rerouting_lp(topo, tm, critical, background, epsilon);
    let sol = lp.solve()?;
    let n = topo.node_count();
    let sigma: Vec<Vec<f64>> = (0..critical.len())
        .map(|k| sol.values[1 + k * m..1 + (k + 1) * m].to_vec())
        .collect();
    let mut load = background.load.clone();
    for (k, &flow) in critical.iter().enumerate() {
        let (s, d) = flow_of_index(flow, n).unwrap();
        let dem = tm.get(s, d);
        for (l, v) in sigma[k].iter().enumerate() {
            load[l] += v * dem;
        }
    }
    let link_loads = LinkLoads::new(topo, load);
    Ok(ReroutingSolution {
        critical: critical.to_vec(),
        sigma,
        u: link_loads.max_utilization,
        objective: sol.objective,
        link_loads,
    })
}

/// Computes the ECMP background of the non-critical flows and reroutes the
/// critical ones with the default epsilon.
pub fn reroute(
    topo: &Topology,
    tm: &TrafficMatrix,
    fractions: &EcmpFractions,
    critical: &[usize],
) -> Result<ReroutingSolution, LpError> {
    let background = fractions.link_loads(topo, tm, critical);
    solve_rerouting(
        topo,
        tm,
        critical,
        &background,
        default_epsilon(topo.link_count(), critical.len()),
    )
}

/// Minimum-utilization routing of the whole matrix.
///
/// Commodities are aggregated by destination: `flow[d][l]` is the traffic
/// headed to `d` on link `l`. For the max-utilization objective this is
/// exact, since any destination aggregate decomposes into per-source paths,
/// and it keeps the LP at `N·M` columns instead of `N(N−1)·M`.
#[derive(Clone, Debug)]
pub struct OptimalRouting {
    pub u: f64,
    /// `flow[d][l]`, empty for destinations that receive no traffic.
    pub flow: Vec<Vec<f64>>,
    pub link_loads: LinkLoads,
}

/// Optimal explicit routing of every flow with zero background load.
pub fn solve_optimal_all_flows(topo: &Topology, tm: &TrafficMatrix) -> Result<(f64, OptimalRouting), LpError> {
    let n = topo.node_count();
    let m = topo.link_count();
    let dests: Vec<usize> = (0..n).filter(|&d| (0..n).any(|s| tm.get(s, d) > 0.0)).collect();
    if dests.is_empty() {
        return Ok((
            0.0,
            OptimalRouting {
                u: 0.0,
                flow: vec![Vec::new(); n],
                link_loads: LinkLoads::zeros(topo),
            },
        ));
    }
    let var = |j: usize, l: usize| 1 + j * m + l;
    // A small per-unit cost removes circulations without moving the optimum.
    let eps = 1e-7 / (tm.total() * m as f64);
    let mut objective = vec![eps; 1 + dests.len() * m];
    objective[0] = 1.0;
    let mut lp = LpProblem::new(objective);
    lp.set_name(0, "U");
    for (j, &d) in dests.iter().enumerate() {
        for (l, link) in topo.links().iter().enumerate() {
            lp.set_name(var(j, l), format!("x_{d}_{}_{}", link.src, link.dst));
        }
    }
    for (l, link) in topo.links().iter().enumerate() {
        let mut row = vec![(0, -1.0)];
        row.extend((0..dests.len()).map(|j| (var(j, l), 1.0 / link.capacity)));
        lp.add_constraint(row, Relation::Le, 0.0);
    }
    for (j, &d) in dests.iter().enumerate() {
        for i in (0..n).filter(|&i| i != d) {
            let mut row: Vec<(usize, f64)> = topo.out_links(i).iter().map(|&l| (var(j, l), 1.0)).collect();
            row.extend(topo.in_links(i).iter().map(|&l| (var(j, l), -1.0)));
            lp.add_constraint(row, Relation::Eq, tm.get(i, d));
        }
    }
    let sol = lp.solve()?;
    let mut flow = vec![Vec::new(); n];
    let mut load = vec![0.0; m];
    for (j, &d) in dests.iter().enumerate() {
        let x: Vec<f64> = sol.values[var(j, 0)..var(j, 0) + m].iter().map(|v| v.max(0.0)).collect();
        for (l, v) in x.iter().enumerate() {
            load[l] += v;
        }
        flow[d] = x;
    }
    let link_loads = LinkLoads::new(topo, load);
    let u = link_loads.max_utilization;
    Ok((u, OptimalRouting { u, flow, link_loads }))
}

/// Largest violation of `routing` as a routing of `tm`: negative flow,
/// conservation at every node, the load sums and the utilization bound.
pub fn optimal_routing_violation(topo: &Topology, tm: &TrafficMatrix, routing: &OptimalRouting) -> f64 {
    let n = topo.node_count();
    let mut worst: f64 = 0.0;
    let mut load = vec![0.0; topo.link_count()];
    for d in 0..n {
        let x = &routing.flow[d];
        if x.is_empty() {
            let inbound: f64 = (0..n).map(|s| tm.get(s, d)).sum();
            worst = worst.max(inbound);
            continue;
        }
        for i in 0..n {
            let out: f64 = topo.out_links(i).iter().map(|&l| x[l]).sum();
            let inn: f64 = topo.in_links(i).iter().map(|&l| x[l]).sum();
            let expect = if i == d {
                -(0..n).map(|s| tm.get(s, d)).sum::<f64>()
            } else {
                tm.get(i, d)
            };
            worst = worst.max((out - inn - expect).abs());
        }
        for (l, v) in x.iter().enumerate() {
            worst = worst.max(-v);
            load[l] += v;
        }
    }
    for (l, link) in topo.links().iter().enumerate() {
        worst = worst.max((load[l] - routing.link_loads.load[l]).abs());
        worst = worst.max(load[l] - link.capacity * routing.u);
    }
    worst
}

/// Largest violation of the rerouting constraints by `sol`: split-ratio
/// bounds, flow conservation at every node, the load definition and the
/// utilization bound. Recomputed from scratch, independent of the solver.
pub fn max_constraint_violation(
    topo: &Topology,
    tm: &TrafficMatrix,
    background: &LinkLoads,
    sol: &ReroutingSolution,
) -> f64 {
    let n = topo.node_count();
    let mut worst: f64 = 0.0;
    let mut load = background.load.clone();
    for (k, &flow) in sol.critical.iter().enumerate() {
        let (s, d) = flow_of_index(flow, n).unwrap();
        let sig = &sol.sigma[k];
        for &v in sig {
            worst = worst.max(-v).max(v - 1.0);
        }
        for i in 0..n {
            let inflow: f64 = topo.in_links(i).iter().map(|&l| sig[l]).sum();
            let outflow: f64 = topo.out_links(i).iter().map(|&l| sig[l]).sum();
            let expect = if i == s {
                -1.0
            } else if i == d {
                1.0
            } else {
                0.0
            };
            worst = worst.max((inflow - outflow - expect).abs());
        }
        for (l, v) in sig.iter().enumerate() {
            load[l] += v * tm.get(s, d);
        }
    }
    for (l, link) in topo.links().iter().enumerate() {
        worst = worst.max((load[l] - sol.link_loads.load[l]).abs());
        worst = worst.max(load[l] - link.capacity * sol.u);
    }
    worst
}

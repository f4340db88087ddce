//! Independent oracles shared by the integration tests. None of these call
//! into the solver or routing code paths they are used to check.

#![allow(dead_code)]

use critflow_core::{Topology, TrafficMatrix};

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting; `None` if singular.
pub fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(p, c);
        b.swap(p, c);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for k in c..n {
                a[i][k] -= f * a[c][k];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Minimum of `c·x` over `{x : rows·x <= rhs, 0 <= x <= upper}` by
/// enumerating every basic solution (n active halfspaces out of all).
pub fn vertex_enumeration_min(c: &[f64], rows: &[Vec<f64>], rhs: &[f64], upper: &[f64]) -> Option<f64> {
    let n = c.len();
    let mut halfspaces: Vec<(Vec<f64>, f64)> = rows.iter().cloned().zip(rhs.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = -1.0;
        halfspaces.push((e.clone(), 0.0));
        e[j] = 1.0;
        halfspaces.push((e, upper[j]));
    }
    let mut best: Option<f64> = None;
    combinations(halfspaces.len(), n, &mut |idx| {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| halfspaces[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| halfspaces[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            let feasible = halfspaces
                .iter()
                .all(|(h, r)| h.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= r + 1e-9);
            if feasible {
                let obj: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                if best.is_none_or(|b| obj < b) {
                    best = Some(obj);
                }
            }
        }
    });
    best
}

/// Every simple directed path from `s` to `d`, as link index sequences.
pub fn simple_paths(topo: &Topology, s: usize, d: usize) -> Vec<Vec<usize>> {
    fn dfs(topo: &Topology, u: usize, d: usize, seen: &mut Vec<bool>, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if u == d {
            out.push(path.clone());
            return;
        }
        for l in 0..topo.link_count() {
            let link = topo.link(l);
            if link.src == u && !seen[link.dst] {
                seen[link.dst] = true;
                path.push(l);
                dfs(topo, link.dst, d, seen, path, out);
                path.pop();
                seen[link.dst] = false;
            }
        }
    }
    let mut seen = vec![false; topo.node_count()];
    seen[s] = true;
    let mut out = Vec::new();
    dfs(topo, s, d, &mut seen, &mut Vec::new(), &mut out);
    out
}

/// Per-link ECMP fractions of flow (s, d) from explicit enumeration of all
/// minimum-cost simple paths with per-hop equal splitting.
pub fn ecmp_fractions_by_paths(topo: &Topology, s: usize, d: usize) -> Vec<f64> {
    let paths = simple_paths(topo, s, d);
    let cost = |p: &Vec<usize>| p.iter().map(|&l| topo.link(l).cost).sum::<f64>();
    let best = paths.iter().map(cost).fold(f64::INFINITY, f64::min);
    let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| (cost(p) - best).abs() < 1e-9).collect();
    let mut next_hops: Vec<Vec<usize>> = vec![Vec::new(); topo.node_count()];
    for p in &shortest {
        for &l in p.iter() {
            let src = topo.link(l).src;
            if !next_hops[src].contains(&l) {
                next_hops[src].push(l);
            }
        }
    }
    let mut frac = vec![0.0; topo.link_count()];
    for p in &shortest {
        let share: f64 = p.iter().map(|&l| 1.0 / next_hops[topo.link(l).src].len() as f64).product();
        for &l in p.iter() {
            frac[l] += share;
        }
    }
    frac
}

/// Minimum achievable max utilization when only flow (s, d) of size
/// `demand` may be rerouted over background `bg`: by max-flow/min-cut
/// duality, the max of the per-link background bound and, over every node
/// cut separating s from d, (demand + background across cut) / (capacity
/// across cut).
pub fn single_flow_min_max_by_cuts(topo: &Topology, s: usize, d: usize, demand: f64, bg: &[f64]) -> f64 {
    let n = topo.node_count();
    let mut best = topo
        .links()
        .iter()
        .zip(bg)
        .map(|(l, b)| b / l.capacity)
        .fold(0.0, f64::max);
    let others: Vec<usize> = (0..n).filter(|&v| v != s && v != d).collect();
    for mask in 0u32..(1 << others.len()) {
        let mut in_s = vec![false; n];
        in_s[s] = true;
        for (b, &v) in others.iter().enumerate() {
            if mask & (1 << b) != 0 {
                in_s[v] = true;
            }
        }
        let (mut cap, mut load) = (0.0, demand);
        for (l, link) in topo.links().iter().enumerate() {
            if in_s[link.src] && !in_s[link.dst] {
                cap += link.capacity;
                load += bg[l];
            }
        }
        best = f64::max(best, load / cap);
    }
    best
}

/// Minimum delay of a single flow 0 -> 2 on the unit-capacity triangle,
/// with `x` on the direct link and the rest on the two-hop path: a grid
/// search over `x` followed by ternary refinement around the best cell.
pub fn triangle_delay_grid(demand: f64, step: f64) -> f64 {
    let omega = |x: f64| x / (1.0 - x) + 2.0 * (demand - x) / (1.0 - (demand - x));
    let steps = (demand / step).round() as usize;
    let mut best = f64::INFINITY;
    let mut arg = 0.0;
    for i in 0..=steps {
        let x = demand * i as f64 / steps as f64;
        let v = omega(x);
        if v < best {
            best = v;
            arg = x;
        }
    }
    // refine around the grid minimum
    let (mut lo, mut hi) = ((arg - step).max(0.0), (arg + step).min(demand));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if omega(m1) < omega(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.min(omega(0.5 * (lo + hi)))
}

pub fn triangle() -> Topology {
    Topology::parse("name triangle3\nnodes 3\nedge 0 1 1 1\nedge 1 2 1 1\nedge 0 2 1 1\n").unwrap()
}

pub fn diamond() -> Topology {
    Topology::parse("name diamond4\nnodes 4\nedge 0 1 1 1\nedge 0 2 1 1\nedge 1 3 1 1\nedge 2 3 1 1\n").unwrap()
}

/// 5-node instance used for the learning and brute-force checks.
pub fn tiny5() -> Topology {
    Topology::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/tiny5.topo")).unwrap()
}

pub fn tiny5_tms() -> Vec<TrafficMatrix> {
    critflow_core::traffic::load_tms(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/tiny5.tm"), 5).unwrap()
}

/// Relative error with a floor on the denominator below which central
/// differences are dominated by round-off.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Central-difference derivative of `f` along coordinate `idx` of group
/// `group`, with step `h`.
pub fn central_difference(
    params: &critflow_core::policy::PolicyParams,
    group: usize,
    idx: usize,
    h: f64,
    f: &dyn Fn(&critflow_core::policy::PolicyParams) -> f64,
) -> f64 {
    let mut plus = params.clone();
    plus.groups_mut()[group][idx] += h;
    let mut minus = params.clone();
    minus.groups_mut()[group][idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Splits a single-flow routing `sigma` (fraction per link) into weighted
/// simple s-d paths by repeatedly peeling off a bottleneck path. Leftover
/// circulations are dropped.
pub fn decompose_into_paths(topo: &Topology, s: usize, d: usize, sigma: &[f64]) -> Vec<(Vec<usize>, f64)> {
    fn find(topo: &Topology, u: usize, d: usize, rest: &[f64], seen: &mut Vec<bool>, path: &mut Vec<usize>) -> bool {
        if u == d {
            return true;
        }
        for &l in topo.out_links(u) {
            let v = topo.link(l).dst;
            if rest[l] > 1e-12 && !seen[v] {
                seen[v] = true;
                path.push(l);
                if find(topo, v, d, rest, seen, path) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    let mut rest = sigma.to_vec();
    let mut out = Vec::new();
    loop {
        let mut seen = vec![false; topo.node_count()];
        seen[s] = true;
        let mut path = Vec::new();
        if !find(topo, s, d, &rest, &mut seen, &mut path) {
            return out;
        }
        let w = path.iter().map(|&l| rest[l]).fold(f64::INFINITY, f64::min);
        for &l in &path {
            rest[l] -= w;
        }
        out.push((path, w));
    }
}

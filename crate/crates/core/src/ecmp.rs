//! ECMP routing with per-hop equal splitting over minimum-cost next hops.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::topology::{flow_index, Topology};
use crate::traffic::TrafficMatrix;

#[derive(Debug, Error)]
pub enum EcmpError {
    #[error("node {dst} is unreachable from node {src}")]
    Unreachable { src: usize, dst: usize },
}

/// Per-link traffic loads and the resulting maximum utilization.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkLoads {
    pub load: Vec<f64>,
    pub max_utilization: f64,
}

impl LinkLoads {
    pub fn new(topo: &Topology, load: Vec<f64>) -> LinkLoads {
        let max_utilization = load
            .iter()
            .zip(topo.links())
            .map(|(l, link)| l / link.capacity)
            .fold(0.0, f64::max);
        LinkLoads { load, max_utilization }
    }

    pub fn zeros(topo: &Topology) -> LinkLoads {
        LinkLoads {
            load: vec![0.0; topo.link_count()],
            max_utilization: 0.0,
        }
    }

    pub fn utilization(&self, topo: &Topology) -> Vec<f64> {
        self.load.iter().zip(topo.links()).map(|(l, link)| l / link.capacity).collect()
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest distance from every node to `dst` under per-link weights.
pub(crate) fn distances_to(topo: &Topology, dst: usize, weight: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; topo.node_count()];
    dist[dst] = 0.0;
    let mut heap = BinaryHeap::from([HeapEntry(0.0, dst)]);
    while let Some(HeapEntry(du, u)) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for &l in topo.in_links(u) {
            let v = topo.link(l).src;
            let nd = du + weight(l);
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry(nd, v));
            }
        }
    }
    dist
}

pub(crate) fn on_shortest_path(dist_here: f64, link_cost: f64, dist_next: f64) -> bool {
    (dist_here - (link_cost + dist_next)).abs() <= 1e-12 * dist_here.max(1.0)
}

/// Split fractions of every flow over every link, indexed by action id.
#[derive(Clone, Debug)]
pub struct EcmpFractions {
    n: usize,
    link_count: usize,
    per_flow: Vec<Vec<(usize, f64)>>,
}

impl EcmpFractions {
    pub fn compute(topo: &Topology) -> Result<EcmpFractions, EcmpError> {
        let n = topo.node_count();
        let mut per_flow = vec![Vec::new(); topo.flow_count()];
        let mut mass = vec![0.0; n];
        let mut on_link = vec![0.0; topo.link_count()];

        for d in 0..n {
            let dist = distances_to(topo, d, |l| topo.link(l).cost);
            let next_hops: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    if i == d {
                        return Vec::new();
                    }
                    topo.out_links(i)
                        .iter()
                        .copied()
                        .filter(|&l| {
                            let link = topo.link(l);
                            dist[link.dst].is_finite() && on_shortest_path(dist[i], link.cost, dist[link.dst])
                        })
                        .collect()
                })
                .collect();
            // Nodes far from d first; every next hop is strictly closer.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));

            for s in (0..n).filter(|&s| s != d) {
                if !dist[s].is_finite() {
                    return Err(EcmpError::Unreachable { src: s, dst: d });
                }
                mass.iter_mut().for_each(|m| *m = 0.0);
                on_link.iter_mut().for_each(|f| *f = 0.0);
                mass[s] = 1.0;
                for &i in &order {
                    if i == d || mass[i] == 0.0 {
                        continue;
                    }
                    let hops = &next_hops[i];
                    let share = mass[i] / hops.len() as f64;
                    for &l in hops {
                        on_link[l] += share;
                        mass[topo.link(l).dst] += share;
                    }
                }
                let flow = flow_index(s, d, n).expect("valid pair");
                per_flow[flow] = on_link
                    .iter()
                    .enumerate()
                    .filter(|(_, &f)| f > 0.0)
                    .map(|(l, &f)| (l, f))
                    .collect();
            }
        }
        Ok(EcmpFractions {
            n,
            link_count: topo.link_count(),
            per_flow,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Nonzero `(link, fraction)` pairs of a flow.
    pub fn flow(&self, flow: usize) -> &[(usize, f64)] {
        &self.per_flow[flow]
    }

    pub fn fraction(&self, flow: usize, link: usize) -> f64 {
        self.per_flow[flow]
            .iter()
            .find(|(l, _)| *l == link)
            .map_or(0.0, |(_, f)| *f)
    }

    /// Dense fraction vector of one flow over all links.
    pub fn dense(&self, flow: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.link_count];
        for &(l, f) in &self.per_flow[flow] {
            v[l] = f;
        }
        v
    }

    /// ECMP loads of all flows except those in `exclude` (action ids).
    pub fn link_loads(&self, topo: &Topology, tm: &TrafficMatrix, exclude: &[usize]) -> LinkLoads {
        let mut skip = vec![false; self.per_flow.len()];
        for &f in exclude {
            skip[f] = true;
        }
        self.loads_where(topo, tm, |f| !skip[f])
    }

    /// ECMP loads contributed only by the flows in `only`.
    pub fn link_loads_of(&self, topo: &Topology, tm: &TrafficMatrix, only: &[usize]) -> LinkLoads {
        let mut keep = vec![false; self.per_flow.len()];
        for &f in only {
            keep[f] = true;
        }
        self.loads_where(topo, tm, |f| keep[f])
    }

    fn loads_where(&self, topo: &Topology, tm: &TrafficMatrix, include: impl Fn(usize) -> bool) -> LinkLoads {
        assert_eq!(tm.n(), self.n, "traffic matrix size does not match topology");
        let demands = tm.flow_demands();
        let mut load = vec![0.0; self.link_count];
        for (flow, parts) in self.per_flow.iter().enumerate() {
            let dem = demands[flow];
            if dem == 0.0 || !include(flow) {
                continue;
            }
            for &(l, f) in parts {
                load[l] += f * dem;
            }
        }
        LinkLoads::new(topo, load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Link;

    fn diamond(cost01: f64) -> Topology {
        let mut links = Vec::new();
        for (a, b, c) in [(0, 1, cost01), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)] {
            links.push(Link { src: a, dst: b, capacity: 1.0, cost: c });
            links.push(Link { src: b, dst: a, capacity: 1.0, cost: c });
        }
        Topology::new("diamond", 4, links).unwrap()
    }

    fn triangle() -> Topology {
        Topology::parse("nodes 3\nedge 0 1 1 1\nedge 1 2 1 1\nedge 0 2 1 1\n").unwrap()
    }

    #[test]
    fn diamond_symmetric_split() {
        let t = diamond(1.0);
        let fr = EcmpFractions::compute(&t).unwrap();
        let flow = flow_index(0, 3, 4).unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            assert_eq!(fr.fraction(flow, t.find_link(a, b).unwrap()), 0.5);
        }
        assert_eq!(fr.flow(flow).len(), 4);
    }

    #[test]
    fn triangle_unique_path() {
        let t = triangle();
        let fr = EcmpFractions::compute(&t).unwrap();
        let flow = flow_index(0, 2, 3).unwrap();
        assert_eq!(fr.flow(flow), &[(t.find_link(0, 2).unwrap(), 1.0)]);
    }

    #[test]
    fn costlier_branch_unused() {
        let t = diamond(2.0);
        let fr = EcmpFractions::compute(&t).unwrap();
        let flow = flow_index(0, 3, 4).unwrap();
        assert_eq!(fr.fraction(flow, t.find_link(0, 2).unwrap()), 1.0);
        assert_eq!(fr.fraction(flow, t.find_link(2, 3).unwrap()), 1.0);
        assert_eq!(fr.fraction(flow, t.find_link(0, 1).unwrap()), 0.0);
    }

    #[test]
    fn load_examples() {
        let t = diamond(1.0);
        let fr = EcmpFractions::compute(&t).unwrap();
        let tm = TrafficMatrix::from_entries(4, &[(0, 3, 0.8)], "d").unwrap();
        let loads = fr.link_loads(&t, &tm, &[]);
        assert_eq!(loads.load.iter().filter(|&&l| l == 0.4).count(), 4);
        assert_eq!(loads.max_utilization, 0.4);
        let none = fr.link_loads(&t, &tm, &[flow_index(0, 3, 4).unwrap()]);
        assert!(none.load.iter().all(|&l| l == 0.0));

        let tri = triangle();
        let fr = EcmpFractions::compute(&tri).unwrap();
        let tm = TrafficMatrix::from_entries(3, &[(0, 2, 0.9)], "t").unwrap();
        let loads = fr.link_loads(&tri, &tm, &[]);
        assert_eq!(loads.load[tri.find_link(0, 2).unwrap()], 0.9);
        assert_eq!(loads.max_utilization, 0.9);
    }

    #[test]
    fn conservation_and_endpoint_sums() {
        for seed in 0..10 {
            let t = Topology::random("r", 7, 5, 3, &[1.0], seed).unwrap();
            let fr = EcmpFractions::compute(&t).unwrap();
            for (flow, (s, d)) in crate::topology::all_flows(7).enumerate() {
                let dense = fr.dense(flow);
                for v in 0..7 {
                    let out: f64 = t.out_links(v).iter().map(|&l| dense[l]).sum();
                    let inn: f64 = t.in_links(v).iter().map(|&l| dense[l]).sum();
                    let expect = if v == s { 1.0 } else if v == d { -1.0 } else { 0.0 };
                    assert!((out - inn - expect).abs() < 1e-9);
                }
                let into_d: f64 = t.in_links(d).iter().map(|&l| dense[l]).sum();
                assert!((into_d - 1.0).abs() < 1e-9);
            }
        }
    }
}

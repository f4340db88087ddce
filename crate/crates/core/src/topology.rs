//! Directed network topologies: links with capacity and IGP cost.
//!
//! The on-disk format is line oriented:
//!
//! ```text
//! # comment
//! name abilene
//! nodes 4
//! link 0 1 1000 1      # directed link: src dst capacity cost
//! edge 1 2 - 2         # undirected edge, expands to two directed links
//! ```
//!
//! A capacity of `-` means "infer from the cost" using
//! [`DEFAULT_CAPACITY_SCALE`] / cost.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Capacity normalization used when a topology only carries link costs.
pub const DEFAULT_CAPACITY_SCALE: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Link {
    pub src: usize,
    pub dst: usize,
    pub capacity: f64,
    pub cost: f64,
}

/// A validated, immutable directed topology.
#[derive(Clone, Debug)]
pub struct Topology {
    name: String,
    node_count: usize,
    links: Vec<Link>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.node_count == other.node_count && self.links == other.links
    }
}

impl Topology {
    /// Builds a topology and checks every structural invariant.
    pub fn new(name: impl Into<String>, node_count: usize, links: Vec<Link>) -> Result<Self, TopologyError> {
        if node_count < 2 {
            return Err(TopologyError::Invalid(format!("need at least 2 nodes, got {node_count}")));
        }
        let mut seen = HashSet::new();
        for (idx, l) in links.iter().enumerate() {
            if l.src >= node_count || l.dst >= node_count {
                return Err(TopologyError::Invalid(format!(
                    "link {idx} ({} -> {}) has node id out of range [0, {node_count})",
                    l.src, l.dst
                )));
            }
            if l.src == l.dst {
                return Err(TopologyError::Invalid(format!("link {idx} is a self-loop on node {}", l.src)));
            }
            if !seen.insert((l.src, l.dst)) {
                return Err(TopologyError::Invalid(format!("duplicate link {} -> {}", l.src, l.dst)));
            }
            if !(l.capacity.is_finite() && l.capacity > 0.0) {
                return Err(TopologyError::Invalid(format!(
                    "link {} -> {} capacity must be positive, got {}",
                    l.src, l.dst, l.capacity
                )));
            }
            if !(l.cost.is_finite() && l.cost > 0.0) {
                return Err(TopologyError::Invalid(format!(
                    "link {} -> {} cost must be positive, got {}",
                    l.src, l.dst, l.cost
                )));
            }
        }
        let mut out_links = vec![Vec::new(); node_count];
        let mut in_links = vec![Vec::new(); node_count];
        for (idx, l) in links.iter().enumerate() {
            out_links[l.src].push(idx);
            in_links[l.dst].push(idx);
        }
        let topo = Topology {
            name: name.into(),
            node_count,
            links,
            out_links,
            in_links,
        };
        if !topo.is_strongly_connected() {
            return Err(TopologyError::Invalid("not strongly connected".into()));
        }
        Ok(topo)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Number of ordered source/destination pairs, N(N-1).
    pub fn flow_count(&self) -> usize {
        self.node_count * (self.node_count - 1)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    pub fn find_link(&self, src: usize, dst: usize) -> Option<usize> {
        self.out_links
            .get(src)?
            .iter()
            .copied()
            .find(|&l| self.links[l].dst == dst)
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    fn reaches_all(&self, forward: bool) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            let adj = if forward { &self.out_links[u] } else { &self.in_links[u] };
            for &l in adj {
                let v = if forward { self.links[l].dst } else { self.links[l].src };
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.reaches_all(true) && self.reaches_all(false)
    }

    /// Returns a copy where every capacity is `scale / cost`.
    pub fn infer_capacities_from_costs(&self, scale: f64) -> Result<Topology, TopologyError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(TopologyError::Domain(format!("capacity scale must be positive, got {scale}")));
        }
        let mut links = self.links.clone();
        for l in &mut links {
            if l.cost <= 0.0 {
                return Err(TopologyError::Domain(format!(
                    "link {} -> {} has non-positive cost {}",
                    l.src, l.dst, l.cost
                )));
            }
            l.capacity = scale / l.cost;
        }
        Topology::new(self.name.clone(), self.node_count, links)
    }

    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let mut name = String::from("unnamed");
        let mut nodes: Option<usize> = None;
        let mut raw: Vec<(usize, usize, Option<f64>, f64)> = Vec::new();

        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let perr = |msg: String| TopologyError::Parse { line: lineno, msg };
            match toks[0] {
                "name" => {
                    if toks.len() != 2 {
                        return Err(perr("expected `name <string>`".into()));
                    }
                    name = toks[1].to_string();
                }
                "nodes" => {
                    if toks.len() != 2 {
                        return Err(perr("expected `nodes <N>`".into()));
                    }
                    if nodes.is_some() {
                        return Err(perr("duplicate `nodes` header".into()));
                    }
                    nodes = Some(toks[1].parse().map_err(|_| perr(format!("bad node count `{}`", toks[1])))?);
                }
                kind @ ("link" | "edge") => {
                    if nodes.is_none() {
                        return Err(perr("`nodes <N>` header must precede links".into()));
                    }
                    if toks.len() != 5 {
                        return Err(perr(format!("expected `{kind} <src> <dst> <capacity|-> <cost>`")));
                    }
                    let src: usize = toks[1].parse().map_err(|_| perr(format!("bad source `{}`", toks[1])))?;
                    let dst: usize = toks[2].parse().map_err(|_| perr(format!("bad destination `{}`", toks[2])))?;
                    let cap = match toks[3] {
                        "-" => None,
                        t => Some(t.parse::<f64>().map_err(|_| perr(format!("bad capacity `{t}`")))?),
                    };
                    let cost: f64 = toks[4].parse().map_err(|_| perr(format!("bad cost `{}`", toks[4])))?;
                    raw.push((src, dst, cap, cost));
                    if kind == "edge" {
                        raw.push((dst, src, cap, cost));
                    }
                }
                other => return Err(perr(format!("unknown directive `{other}`"))),
            }
        }

        let node_count = nodes.ok_or_else(|| TopologyError::Parse {
            line: 0,
            msg: "missing `nodes <N>` header".into(),
        })?;
        let mut links = Vec::with_capacity(raw.len());
        for (src, dst, cap, cost) in raw {
            let capacity = match cap {
                Some(c) => c,
                None if cost > 0.0 => DEFAULT_CAPACITY_SCALE / cost,
                None => {
                    return Err(TopologyError::Domain(format!(
                        "cannot infer capacity of {src} -> {dst} from cost {cost}"
                    )))
                }
            };
            links.push(Link { src, dst, capacity, cost });
        }
        Topology::new(name, node_count, links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Topology::parse(&text)
    }

    /// Serializes in the text format; values use round-trip float formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "name {}", self.name).unwrap();
        writeln!(out, "nodes {}", self.node_count).unwrap();
        for l in &self.links {
            writeln!(out, "link {} {} {:?} {:?}", l.src, l.dst, l.capacity, l.cost).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_text())
    }

    /// Random strongly connected topology built from undirected edges: a
    /// random spanning tree plus `extra_edges` further edges. Costs are
    /// integers in `1..=max_cost`; capacities are drawn from `capacities`.
    pub fn random(
        name: impl Into<String>,
        node_count: usize,
        extra_edges: usize,
        max_cost: u32,
        capacities: &[f64],
        seed: u64,
    ) -> Result<Topology, TopologyError> {
        if node_count < 2 || capacities.is_empty() || max_cost == 0 {
            return Err(TopologyError::Domain("need ≥ 2 nodes, a capacity menu and max_cost ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..node_count).collect();
        order.shuffle(&mut rng);
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for i in 1..node_count {
            let parent = order[rng.random_range(0..i)];
            edges.push((parent.min(order[i]), parent.max(order[i])));
        }
        let mut candidates: Vec<(usize, usize)> = (0..node_count)
            .flat_map(|a| (a + 1..node_count).map(move |b| (a, b)))
            .filter(|e| !edges.contains(e))
            .collect();
        candidates.shuffle(&mut rng);
        edges.extend(candidates.into_iter().take(extra_edges));
        edges.sort_unstable();

        let mut links = Vec::with_capacity(2 * edges.len());
        for (a, b) in edges {
            let cost = rng.random_range(1..=max_cost) as f64;
            let capacity = capacities[rng.random_range(0..capacities.len())];
            links.push(Link { src: a, dst: b, capacity, cost });
            links.push(Link { src: b, dst: a, capacity, cost });
        }
        Topology::new(name, node_count, links)
    }
}

/// Action id of the ordered pair (s, d): row-major with the diagonal skipped.
pub fn flow_index(s: usize, d: usize, n: usize) -> Result<usize, TopologyError> {
    if s >= n || d >= n {
        return Err(TopologyError::Domain(format!("pair ({s}, {d}) out of range for N = {n}")));
    }
    if s == d {
        return Err(TopologyError::Domain(format!("pair ({s}, {d}) is not a flow: source equals destination")));
    }
    Ok(s * (n - 1) + if d < s { d } else { d - 1 })
}

/// Inverse of [`flow_index`].
pub fn flow_of_index(a: usize, n: usize) -> Result<(usize, usize), TopologyError> {
    if n < 2 || a >= n * (n - 1) {
        return Err(TopologyError::Domain(format!("action {a} out of range for N = {n}")));
    }
    let s = a / (n - 1);
    let r = a % (n - 1);
    Ok((s, if r < s { r } else { r + 1 }))
}

/// All flows in action-id order.
pub fn all_flows(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |s| (0..n).filter(move |&d| d != s).map(move |d| (s, d)))
}

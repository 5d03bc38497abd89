//! Collaboration topologies: Erdős–Rényi, Barabási–Albert and stochastic
//! block model generators, degree-based node selection, and a plain-text
//! edge list format.
//!
//! Edge list format (UTF-8, LF line endings):
//!
//! ```text
//! # n=<n> blocks=<comma list or none>
//! u v w
//! ```
//!
//! with one undirected edge per line, `u < v`, sorted lexicographically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::{seed_stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Undirected weighted graph with per-node self-trust and optional
/// community labels. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    self_weight: Vec<f64>,
    blocks: Option<Vec<usize>>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds a graph, validating indices, weights and uniqueness.
    ///
    /// Edges may be given in any orientation and order; they are stored
    /// normalized (`u < v`) and sorted.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = Edge>,
        blocks: Option<Vec<usize>>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in edges {
            if e.u >= n || e.v >= n {
                return Err(config_err!("edge ({}, {}) out of range for n={n}", e.u, e.v));
            }
            if e.u == e.v {
                return Err(config_err!("self-loop edge at node {}", e.u));
            }
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(config_err!(
                    "edge ({}, {}) has invalid weight {}",
                    e.u,
                    e.v,
                    e.weight
                ));
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if map.insert(key, e.weight).is_some() {
                return Err(config_err!("duplicate edge ({}, {})", key.0, key.1));
            }
        }
        if let Some(b) = &blocks {
            if b.len() != n {
                return Err(config_err!(
                    "block labels cover {} nodes, expected {n}",
                    b.len()
                ));
            }
        }
        let edges: Vec<Edge> = map
            .into_iter()
            .map(|((u, v), weight)| Edge { u, v, weight })
            .collect();
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.u].push((e.v, e.weight));
            adjacency[e.v].push((e.u, e.weight));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(j, _)| j);
        }
        Ok(Graph {
            n,
            edges,
            self_weight: vec![1.0; n],
            blocks,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `i` (excluding `i`) with edge weights, sorted by index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn self_weight(&self, i: usize) -> f64 {
        self.self_weight[i]
    }

    pub fn set_self_weight(&mut self, i: usize, w: f64) -> Result<()> {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(config_err!("self weight for node {i} must be finite and >= 0"));
        }
        self.self_weight[i] = w;
        Ok(())
    }

    pub fn blocks(&self) -> Option<&[usize]> {
        self.blocks.as_deref()
    }

    pub fn block_count(&self) -> usize {
        self.blocks
            .as_ref()
            .and_then(|b| b.iter().max().map(|m| m + 1))
            .unwrap_or(0)
    }

    /// Serializes to the text edge list format.
    pub fn to_edge_list(&self) -> String {
        let blocks = match &self.blocks {
            Some(b) => b
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
            None => "none".to_string(),
        };
        let mut out = format!("# n={} blocks={}\n", self.n, blocks);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.u, e.v, e.weight);
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| config_err!("edge list is empty"))?;
        let rest = header
            .strip_prefix("# ")
            .ok_or_else(|| config_err!("edge list header must start with '# '"))?;
        let mut n = None;
        let mut blocks = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("n=") {
                n = Some(
                    v.parse::<usize>()
                        .map_err(|_| config_err!("bad node count '{v}'"))?,
                );
            } else if let Some(v) = field.strip_prefix("blocks=") {
                if v != "none" {
                    let labels = v
                        .split(',')
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| config_err!("bad block list '{v}'"))?;
                    blocks = Some(labels);
                }
            } else {
                return Err(config_err!("unknown header field '{field}'"));
            }
        }
        let n = n.ok_or_else(|| config_err!("edge list header lacks n="))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || config_err!("malformed edge on line {}: '{line}'", lineno + 2);
            if parts.len() != 3 {
                return Err(bad());
            }
            let u = parts[0].parse().map_err(|_| bad())?;
            let v = parts[1].parse().map_err(|_| bad())?;
            let weight = parts[2].parse().map_err(|_| bad())?;
            edges.push(Edge { u, v, weight });
        }
        Graph::from_edges(n, edges, blocks)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Graph::from_edge_list(&text)
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(config_err!("{name} must be in [0,1], got {p}"));
    }
    Ok(())
}

fn unit(u: usize, v: usize) -> Edge {
    Edge { u, v, weight: 1.0 }
}

/// Each unordered pair is included independently with probability `p`.
pub fn gen_erdos_renyi<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    if n == 0 {
        return Err(config_err!("n must be >= 1"));
    }
    check_probability("p", p)?;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(p) {
                edges.push(unit(u, v));
            }
        }
    }
    Graph::from_edges(n, edges, None)
}

/// Preferential attachment starting from a complete graph on `m` nodes.
///
/// Each arriving node draws `m` distinct targets from the endpoint urn
/// (every edge contributes both endpoints), so a node is drawn with
/// probability proportional to its degree; repeats are redrawn.
pub fn gen_barabasi_albert<R: Rng>(n: usize, m: usize, rng: &mut R) -> Result<Graph> {
    if m == 0 || m >= n {
        return Err(config_err!("m must satisfy 1 <= m < n (m={m}, n={n})"));
    }
    let mut edges = Vec::with_capacity(m * (n - m) + m * (m - 1) / 2);
    let mut urn: Vec<usize> = Vec::with_capacity(2 * edges.capacity());
    for u in 0..m {
        for v in (u + 1)..m {
            edges.push(unit(u, v));
            urn.push(u);
            urn.push(v);
        }
    }
    let mut targets = BTreeSet::new();
    for v in m..n {
        targets.clear();
        if v == m {
            // Only m nodes exist, all of them are chosen.
            targets.extend(0..m);
        } else {
            while targets.len() < m {
                let t = urn[rng.random_range(0..urn.len())];
                targets.insert(t);
            }
        }
        for &t in &targets {
            edges.push(unit(t, v));
            urn.push(t);
            urn.push(v);
        }
    }
    Graph::from_edges(n, edges, None)
}

fn check_sbm(block_sizes: &[usize], p_matrix: &[Vec<f64>]) -> Result<()> {
    let b = block_sizes.len();
    if b == 0 || block_sizes.iter().sum::<usize>() == 0 {
        return Err(config_err!("block_sizes must describe at least one node"));
    }
    if p_matrix.len() != b || p_matrix.iter().any(|row| row.len() != b) {
        return Err(config_err!("p_matrix must be {b}x{b}"));
    }
    for (i, row) in p_matrix.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            check_probability(&format!("p_matrix[{i}][{j}]"), p)?;
            if p != p_matrix[j][i] {
                return Err(config_err!(
                    "p_matrix must be symmetric: [{i}][{j}]={p} vs [{j}][{i}]={}",
                    p_matrix[j][i]
                ));
            }
        }
    }
    Ok(())
}

/// Stochastic block model with contiguous blocks: the first
/// `block_sizes[0]` nodes form block 0, and so on.
pub fn gen_sbm<R: Rng>(block_sizes: &[usize], p_matrix: &[Vec<f64>], rng: &mut R) -> Result<Graph> {
    check_sbm(block_sizes, p_matrix)?;
    let n: usize = block_sizes.iter().sum();
    let blocks: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(label, &size)| std::iter::repeat_n(label, size))
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(p_matrix[blocks[u]][blocks[v]]) {
                edges.push(unit(u, v));
            }
        }
    }
    Graph::from_edges(n, edges, Some(blocks))
}

/// ER connectivity threshold `ln(n)/n`.
pub fn critical_threshold(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(config_err!("critical threshold needs n >= 2, got {n}"));
    }
    Ok((n as f64).ln() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeMode {
    Highest,
    Lowest,
}

/// Picks `ceil(fraction * n)` nodes by degree, walking degree classes from
/// the top (or bottom). The class that overflows the quota is sampled
/// uniformly. Returns sorted node indices.
pub fn select_by_degree<R: Rng>(
    g: &Graph,
    fraction: f64,
    mode: DegreeMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if g.n() == 0 {
        return Err(config_err!("cannot select nodes from an empty graph"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(config_err!("fraction must be in (0,1], got {fraction}"));
    }
    // Guard against products like 0.07 * 100 = 7.000000000000001.
    let quota = ((fraction * g.n() as f64) - 1e-9).ceil().max(1.0) as usize;
    let quota = quota.min(g.n());

    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..g.n() {
        classes.entry(g.degree(i)).or_default().push(i);
    }
    let ordered: Vec<Vec<usize>> = match mode {
        DegreeMode::Highest => classes.into_values().rev().collect(),
        DegreeMode::Lowest => classes.into_values().collect(),
    };

    let mut chosen = Vec::with_capacity(quota);
    for members in ordered {
        let remaining = quota - chosen.len();
        if remaining == 0 {
            break;
        }
        if members.len() <= remaining {
            chosen.extend(members);
        } else {
            let picked = index::sample(rng, members.len(), remaining);
            chosen.extend(picked.into_iter().map(|k| members[k]));
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// B×B matrix of edge counts between blocks; the diagonal holds
/// intra-block counts.
pub fn intercommunity_edge_counts(g: &Graph) -> Result<Vec<Vec<usize>>> {
    let blocks = g
        .blocks()
        .ok_or_else(|| Error::Usage("graph has no block labels".into()))?;
    let b = g.block_count();
    let mut counts = vec![vec![0usize; b]; b];
    for e in g.edges() {
        let (x, y) = (blocks[e.u], blocks[e.v]);
        counts[x][y] += 1;
        if x != y {
            counts[y][x] += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConnectivityReport {
    pub components: usize,
    pub largest: usize,
    pub connected: bool,
}

pub fn connectivity_report(g: &Graph) -> ConnectivityReport {
    let mut parent: Vec<usize> = (0..g.n()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in g.edges() {
        let (a, b) = (find(&mut parent, e.u), find(&mut parent, e.v));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut sizes = vec![0usize; g.n()];
    for i in 0..g.n() {
        let r = find(&mut parent, i);
        sizes[r] += 1;
    }
    let components = sizes.iter().filter(|&&s| s > 0).count();
    ConnectivityReport {
        components,
        largest: sizes.iter().copied().max().unwrap_or(0),
        connected: components == 1,
    }
}

/// Topology family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Topology {
    Er { n: usize, p: f64 },
    Ba { n: usize, m: usize },
    Sbm {
        block_sizes: Vec<usize>,
        p_matrix: Vec<Vec<f64>>,
    },
}

impl Topology {
    pub fn n(&self) -> usize {
        match self {
            Topology::Er { n, .. } | Topology::Ba { n, .. } => *n,
            Topology::Sbm { block_sizes, .. } => block_sizes.iter().sum(),
        }
    }

    /// Two-level SBM matrix with `p_in` on the diagonal and `p_out` elsewhere.
    pub fn planted_partition(block_sizes: Vec<usize>, p_in: f64, p_out: f64) -> Self {
        let b = block_sizes.len();
        let p_matrix = (0..b)
            .map(|i| (0..b).map(|j| if i == j { p_in } else { p_out }).collect())
            .collect();
        Topology::Sbm {
            block_sizes,
            p_matrix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Topology::Er { n, p } => {
                if *n == 0 {
                    return Err(config_err!("n must be >= 1"));
                }
                check_probability("p", *p)
            }
            Topology::Ba { n, m } => {
                if *m == 0 || *m >= *n {
                    return Err(config_err!("m must satisfy 1 <= m < n (m={m}, n={n})"));
                }
                Ok(())
            }
            Topology::Sbm {
                block_sizes,
                p_matrix,
            } => {
                check_sbm(block_sizes, p_matrix)
            }
        }
    }

    pub fn generate<R: Rng>(&self, rng: &mut R) -> Result<Graph> {
        match self {
            Topology::Er { n, p } => gen_erdos_renyi(*n, *p, rng),
            Topology::Ba { n, m } => gen_barabasi_albert(*n, *m, rng),
            Topology::Sbm {
                block_sizes,
                p_matrix,
            } => gen_sbm(block_sizes, p_matrix, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    #[serde(flatten)]
    pub topology: Topology,
    pub seed: u64,
}

impl TopologyConfig {
    pub fn build(&self) -> Result<Graph> {
        self.topology.generate(&mut seed_stream(self.seed, 0, Purpose::Graph))
    }
}

//! Directed communication graphs.
//!
//! Nodes are 0-indexed in the library API and 1-indexed in the text format.
//! Self-loops are implicit: they are never stored, and neighbor queries
//! exclude the node itself unless the closure variant is requested.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("rejected graph: {0}")]
    Rejected(String),
    #[error("graph file: {0}")]
    Format(String),
}

/// A directed edge `to <- from`, stored in the `(to, from)` order used by the
/// text format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub to: usize,
    pub from: usize,
}

impl Edge {
    pub fn new(to: usize, from: usize) -> Self {
        Self { to, from }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    node_count: usize,
    edges: BTreeSet<Edge>,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
    diameter: Option<usize>,
}

impl DirectedGraph {
    /// Builds a graph from 0-indexed edges.
    ///
    /// With `require_strong_connectivity` set, construction fails unless
    /// every ordered pair of nodes is joined by a directed path, and the
    /// diameter is computed eagerly. Otherwise the diameter is computed only
    /// if the graph happens to be strongly connected.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = Edge>,
        require_strong_connectivity: bool,
    ) -> Result<Self, GraphError> {
        if node_count < 2 {
            return Err(GraphError::Rejected(format!(
                "need at least 2 nodes, got {node_count}"
            )));
        }
        let mut set = BTreeSet::new();
        for e in edges {
            if e.to >= node_count || e.from >= node_count {
                return Err(GraphError::Rejected(format!(
                    "edge ({}, {}) has an endpoint outside 0..{node_count}",
                    e.to, e.from
                )));
            }
            if e.to == e.from {
                return Err(GraphError::Rejected(format!(
                    "explicit self-edge at node {}",
                    e.to
                )));
            }
            set.insert(e);
        }
        let mut in_neighbors = vec![Vec::new(); node_count];
        let mut out_neighbors = vec![Vec::new(); node_count];
        for e in &set {
            in_neighbors[e.to].push(e.from);
            out_neighbors[e.from].push(e.to);
        }
        for list in in_neighbors.iter_mut().chain(out_neighbors.iter_mut()) {
            list.sort_unstable();
        }
        let mut graph = Self {
            node_count,
            edges: set,
            in_neighbors,
            out_neighbors,
            diameter: None,
        };
        match graph.compute_diameter() {
            Ok(d) => graph.diameter = Some(d),
            Err(e) if require_strong_connectivity => return Err(e),
            Err(_) => {}
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, to: usize, from: usize) -> bool {
        self.edges.contains(&Edge::new(to, from))
    }

    /// Nodes that can transmit to `node` (excluding `node` itself).
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_neighbors[node]
    }

    /// Nodes that can receive from `node` (excluding `node` itself).
    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_neighbors[node]
    }

    /// Out-neighbors of `node` followed by `node` itself.
    pub fn out_closure(&self, node: usize) -> Vec<usize> {
        let mut v = self.out_neighbors[node].clone();
        v.push(node);
        v
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_neighbors[node].len()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_neighbors[node].len()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.diameter.is_some()
    }

    /// Longest shortest directed path over all ordered pairs.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        self.diameter.ok_or_else(|| {
            GraphError::Rejected("graph is not strongly connected".to_string())
        })
    }

    fn bfs_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.out_neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn compute_diameter(&self) -> Result<usize, GraphError> {
        let mut diameter = 0;
        for source in 0..self.node_count {
            for (target, d) in self.bfs_from(source).into_iter().enumerate() {
                match d {
                    Some(d) => diameter = diameter.max(d),
                    None => {
                        return Err(GraphError::Rejected(format!(
                            "no directed path from node {} to node {}",
                            source + 1,
                            target + 1
                        )))
                    }
                }
            }
        }
        Ok(diameter)
    }

    /// Short stable fingerprint of the node count and edge set.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.node_count as u64).to_le_bytes());
        for e in &self.edges {
            hasher.update((e.to as u64).to_le_bytes());
            hasher.update((e.from as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Line-oriented text: `N`, then one `to from` pair per line, 1-indexed.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.node_count);
        for e in &self.edges {
            let _ = writeln!(out, "{} {}", e.to + 1, e.from + 1);
        }
        out
    }

    /// Parses the text format. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str, require_strong_connectivity: bool) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| GraphError::Format("empty graph file".to_string()))?;
        let node_count: usize = header
            .parse()
            .map_err(|_| GraphError::Format(format!("bad node count {header:?}")))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let mut field = || -> Result<usize, GraphError> {
                let tok = parts
                    .next()
                    .ok_or_else(|| GraphError::Format(format!("line {lineno}: expected `to from`")))?;
                let v: usize = tok
                    .parse()
                    .map_err(|_| GraphError::Format(format!("line {lineno}: bad node id {tok:?}")))?;
                if v == 0 {
                    return Err(GraphError::Rejected(format!(
                        "line {lineno}: node ids are 1-indexed"
                    )));
                }
                Ok(v - 1)
            };
            let to = field()?;
            let from = field()?;
            if parts.next().is_some() {
                return Err(GraphError::Format(format!("line {lineno}: trailing tokens")));
            }
            edges.push(Edge::new(to, from));
        }
        Self::new(node_count, edges, require_strong_connectivity)
    }

    pub fn read_file(path: &Path, require_strong_connectivity: bool) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Format(format!("{}: {e}", path.display())))?;
        Self::from_text(&text, require_strong_connectivity)
    }
}

/// Random strongly connected digraph: a random Hamiltonian directed cycle
/// plus every other ordered pair independently with `extra_edge_probability`.
pub fn random_strongly_connected_digraph(
    n_nodes: usize,
    extra_edge_probability: f64,
    seed: u64,
) -> Result<DirectedGraph, GraphError> {
    if n_nodes < 2 {
        return Err(GraphError::Rejected(format!(
            "need at least 2 nodes, got {n_nodes}"
        )));
    }
    if !(0.0..=1.0).contains(&extra_edge_probability) {
        return Err(GraphError::Rejected(format!(
            "extra edge probability {extra_edge_probability} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut rng);
    let mut edges = BTreeSet::new();
    for (k, &from) in order.iter().enumerate() {
        edges.insert(Edge::new(order[(k + 1) % n_nodes], from));
    }
    for from in 0..n_nodes {
        for to in 0..n_nodes {
            if to == from {
                continue;
            }
            let e = Edge::new(to, from);
            // always draw, so the stream does not depend on the cycle
            let coin = rng.random::<f64>();
            if !edges.contains(&e) && coin < extra_edge_probability {
                edges.insert(e);
            }
        }
    }
    DirectedGraph::new(n_nodes, edges, true)
}

//! Static communication topologies.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("a topology needs at least one node")]
    NoNodes,
    #[error("edge probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("attachment count m = {m} must satisfy 1 <= m < n = {n}")]
    BadAttachment { n: usize, m: usize },
    #[error("node {node} is out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge weight {weight} on ({i}, {j}) must be finite and positive")]
    BadWeight { i: usize, j: usize, weight: f64 },
    #[error("edge ({0}, {1}) is not in the topology")]
    MissingEdge(usize, usize),
}

/// Undirected weighted graph.
///
/// Edges are keyed by `(min, max)` so `weight(i, j) == weight(j, i)` holds by
/// construction. Adjacency lists are kept sorted by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    edges: BTreeMap<(usize, usize), f64>,
    adjacency: Vec<Vec<usize>>,
    seed: u64,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl Topology {
    /// Build a topology from an explicit edge list. Duplicate edges keep the
    /// last weight given.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        seed: u64,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut map = BTreeMap::new();
        for (i, j, w) in edges {
            for node in [i, j] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::BadWeight { i, j, weight: w });
            }
            map.insert(key(i, j), w);
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in map.keys() {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: map,
            adjacency,
            seed,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Edges as `(i, j, weight)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains_key(&key(i, j))
    }

    /// ω_ij for an existing edge.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.edges.get(&key(i, j)).copied()
    }

    /// Replace the weight of an existing edge.
    pub fn set_weight(&mut self, i: usize, j: usize, weight: f64) -> Result<(), GraphError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GraphError::BadWeight { i, j, weight });
        }
        match self.edges.get_mut(&key(i, j)) {
            Some(w) => {
                *w = weight;
                Ok(())
            }
            None => Err(GraphError::MissingEdge(i, j)),
        }
    }

    /// Set every edge weight to the same constant.
    pub fn set_all_weights(&mut self, weight: f64) -> Result<(), GraphError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GraphError::BadWeight { i: 0, j: 0, weight });
        }
        self.edges.values_mut().for_each(|w| *w = weight);
        Ok(())
    }

    /// Neighbors of `i` in ascending id order.
    pub fn neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GraphError::NodeOutOfRange { node: i, n: self.n })
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.get(i).map_or(0, Vec::len)
    }

    /// Number of ordered (sender, receiver) pairs, i.e. twice the edge count.
    pub fn directed_edge_count(&self) -> usize {
        2 * self.edges.len()
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }

    pub fn degree_range(&self) -> (usize, usize) {
        let degrees = self.adjacency.iter().map(Vec::len);
        let min = degrees.clone().min().unwrap_or(0);
        let max = degrees.max().unwrap_or(0);
        (min, max)
    }

    pub fn to_json(&self) -> String {
        crate::json::to_sorted_string(&TopologyDoc::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self, crate::Error> {
        let doc: TopologyDoc = serde_json::from_str(text)?;
        Ok(Self::from_edges(
            doc.n,
            doc.edges,
            doc.seed,
        )?)
    }
}

/// On-disk layout: `{"edges": [[i, j, w], ...], "n": int, "seed": int}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    seed: u64,
}

impl From<&Topology> for TopologyDoc {
    fn from(t: &Topology) -> Self {
        Self {
            n: t.n,
            edges: t.edges().collect(),
            seed: t.seed,
        }
    }
}

/// G(n, p): every unordered pair `(i, j)`, `i < j`, visited in lexicographic
/// order and kept when one uniform draw in `[0, 1)` falls below `p`.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Topology, GraphError> {
    if n == 0 {
        return Err(GraphError::NoNodes);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GraphError::BadProbability(p));
    }
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let draw: f64 = rng.random();
            if draw < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    Topology::from_edges(n, edges, seed)
}

/// Preferential attachment starting from a clique on `m + 1` nodes.
///
/// Each later node picks `m` distinct targets, each with probability
/// proportional to current degree (sampled from the endpoint multiset,
/// rejecting repeats).
pub fn gen_barabasi_albert(n: usize, m: usize, seed: u64) -> Result<Topology, GraphError> {
    if m == 0 || m >= n {
        return Err(GraphError::BadAttachment { n, m });
    }
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    // every edge contributes both endpoints, so a uniform pick is degree-weighted
    let mut endpoints: Vec<usize> = Vec::new();
    for i in 0..=m {
        for j in (i + 1)..=m {
            edges.push((i, j, 1.0));
            endpoints.extend([i, j]);
        }
    }
    for new in (m + 1)..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let pick = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
        for &t in &targets {
            edges.push((t, new, 1.0));
            endpoints.extend([t, new]);
        }
    }
    Topology::from_edges(n, edges, seed)
}

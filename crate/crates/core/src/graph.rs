//! Population graphs.
//!
//! Nodes are dense ids `0..n`. The group of node `i` is `i` together with
//! its neighbors, so the group size is `degree(i) + 1`.
//!
//! Graphs have a plain edge-list text form:
//!
//! ```text
//! nodes=3
//! 0 1
//! 0 2
//! 1 2
//! ```
//!
//! and a JSON form `{"nodes": 3, "edges": [[0,1],[0,2],[1,2]]}`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph over agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct PopulationGraph {
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for PopulationGraph {
    type Error = Error;

    fn try_from(repr: GraphRepr) -> Result<Self> {
        PopulationGraph::from_edges(repr.nodes, repr.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<PopulationGraph> for GraphRepr {
    fn from(g: PopulationGraph) -> Self {
        GraphRepr {
            nodes: g.node_count(),
            edges: g.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl PopulationGraph {
    /// Builds a graph from an edge list. Self-loops are rejected; duplicate
    /// edges (in either orientation) collapse to one.
    pub fn from_edges(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidSize("a graph needs at least one node".into()));
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes];
        for (a, b) in edges {
            for id in [a, b] {
                if id >= nodes {
                    return Err(Error::NodeOutOfRange { id, nodes });
                }
            }
            if a == b {
                return Err(Error::InvalidParameter(format!("self-loop on node {a}")));
            }
            adj[a].insert(b);
            adj[b].insert(a);
        }
        Ok(Self {
            adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Size of the group centred on `i` (the node plus its neighbors).
    pub fn group_size(&self, i: usize) -> usize {
        self.adjacency[i].len() + 1
    }

    /// Members of the group centred on `i`, the focal node first.
    pub fn group(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(i).chain(self.adjacency[i].iter().copied())
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        (0..self.node_count()).map(|i| self.group_size(i)).collect()
    }

    /// Edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edge_count() as f64 / self.node_count() as f64
    }

    pub fn is_clique(&self) -> bool {
        let n = self.node_count();
        self.adjacency.iter().all(|ns| ns.len() == n - 1)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Nodes `h` that are strict local hubs with low-degree second
    /// neighbors: every neighbor `i` of `h` has a smaller group than `h`,
    /// and every such `i` has some neighbor `j` whose group is also smaller
    /// than `h`'s. Nodes without neighbors never qualify.
    ///
    /// Together with a threshold of `(M_h - 1) / M_h` this makes full group
    /// success unattainable.
    pub fn unattainability_hubs(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&h| self.is_unattainability_hub(h))
            .collect()
    }

    pub fn is_unattainability_hub(&self, h: usize) -> bool {
        let mh = self.group_size(h);
        let ns = self.neighbors(h);
        !ns.is_empty()
            && ns.iter().all(|&i| self.group_size(i) < mh)
            && ns
                .iter()
                .all(|&i| self.neighbors(i).iter().any(|&j| self.group_size(j) < mh))
    }

    /// Applies a node relabeling: node `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: perm.len() });
        }
        Self::from_edges(n, self.edges().into_iter().map(|(a, b)| (perm[a], perm[b])))
    }
}

/// Complete graph on `n` nodes.
pub fn make_clique(n: usize) -> Result<PopulationGraph> {
    if n == 0 {
        return Err(Error::InvalidSize("clique needs n >= 1".into()));
    }
    let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)));
    PopulationGraph::from_edges(n, edges)
}

/// Path `0 - 1 - ... - (n-1)`.
pub fn make_path(n: usize) -> Result<PopulationGraph> {
    if n == 0 {
        return Err(Error::InvalidSize("path needs n >= 1".into()));
    }
    PopulationGraph::from_edges(n, (1..n).map(|i| (i - 1, i)))
}

/// Star graph: node 0 joined to `leaves` leaf nodes.
pub fn make_star(leaves: usize) -> Result<PopulationGraph> {
    PopulationGraph::from_edges(leaves + 1, (1..=leaves).map(|i| (0, i)))
}

/// Stored constructions where full success is unattainable at the hub's
/// critical threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HubVariant {
    /// Hub with three spokes, each spoke carrying one pendant leaf (7 nodes).
    Star3Pendants,
    /// Hub with four spokes, each spoke carrying one pendant leaf (9 nodes).
    Star4Pendants,
    /// Hub with three spokes where two spokes share a leaf and the third
    /// carries its own (6 nodes).
    Star3SharedLeaf,
}

impl HubVariant {
    pub const ALL: [HubVariant; 3] = [
        HubVariant::Star3Pendants,
        HubVariant::Star4Pendants,
        HubVariant::Star3SharedLeaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HubVariant::Star3Pendants => "star3-pendants",
            HubVariant::Star4Pendants => "star4-pendants",
            HubVariant::Star3SharedLeaf => "star3-shared-leaf",
        }
    }
}

impl FromStr for HubVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HubVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Hub counterexample graph. The hub is always node 0.
pub fn make_hub_counterexample(variant: HubVariant) -> PopulationGraph {
    let g = match variant {
        HubVariant::Star3Pendants => pendant_star(3),
        HubVariant::Star4Pendants => pendant_star(4),
        HubVariant::Star3SharedLeaf => {
            PopulationGraph::from_edges(6, [(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 5)])
        }
    };
    g.expect("stored counterexample is a valid graph")
}

fn pendant_star(spokes: usize) -> Result<PopulationGraph> {
    let hub_edges = (1..=spokes).map(|s| (0, s));
    let leaf_edges = (1..=spokes).map(|s| (s, s + spokes));
    PopulationGraph::from_edges(2 * spokes + 1, hub_edges.chain(leaf_edges))
}

/// Preferential-attachment graph.
///
/// Starts from a clique on `attach_m + 1` nodes; every later node attaches
/// to `attach_m` distinct existing nodes sampled proportionally to their
/// current degree. For `attach_m = 1` the result is a tree with mean degree
/// `2 (n - 1) / n`.
pub fn make_scale_free(n: usize, attach_m: usize, seed: u64) -> Result<PopulationGraph> {
    if attach_m == 0 || attach_m >= n {
        return Err(Error::InvalidParameter(format!(
            "attach_m must satisfy 1 <= attach_m < n (got attach_m={attach_m}, n={n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let core = attach_m + 1;
    let mut edges: Vec<(usize, usize)> = (0..core).flat_map(|a| (a + 1..core).map(move |b| (a, b))).collect();
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    for v in core..n {
        let mut targets: Vec<usize> = Vec::with_capacity(attach_m);
        while targets.len() < attach_m {
            // Degree-weighted draw over nodes 0..v, excluding chosen targets.
            let total: usize = (0..v).filter(|u| !targets.contains(u)).map(|u| degree[u]).sum();
            let mut pick = rng.random_range(0..total);
            let chosen = (0..v)
                .filter(|u| !targets.contains(u))
                .find(|&u| {
                    if pick < degree[u] {
                        true
                    } else {
                        pick -= degree[u];
                        false
                    }
                })
                .expect("draw falls inside the total weight");
            targets.push(chosen);
        }
        for t in targets {
            edges.push((t, v));
            degree[t] += 1;
            degree[v] += 1;
        }
    }
    PopulationGraph::from_edges(n, edges)
}

impl fmt::Display for PopulationGraph {
    /// Edge-list text form: `nodes=<n>` then one `a b` pair per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nodes={}", self.node_count())?;
        for (a, b) in self.edges() {
            write!(f, "\n{a} {b}")?;
        }
        Ok(())
    }
}

impl PopulationGraph {
    pub fn to_edge_list(&self) -> String {
        self.to_string()
    }

    /// Parses the edge-list text form. Blank lines are skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing `nodes=<n>` header".into(),
        })?;
        let nodes: usize = header
            .trim()
            .strip_prefix("nodes=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: hline + 1,
                message: format!("expected `nodes=<n>`, found `{}`", header.trim()),
            })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse {
                line: lineno,
                message: format!("expected `<a> <b>`, found `{}`", line.trim()),
            };
            if parts.len() != 2 {
                return Err(bad());
            }
            let a: usize = parts[0].parse().map_err(|_| bad())?;
            let b: usize = parts[1].parse().map_err(|_| bad())?;
            for id in [a, b] {
                if id >= nodes {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("node id {id} out of range"),
                    });
                }
            }
            edges.push((a, b));
        }
        PopulationGraph::from_edges(nodes, edges).map_err(|e| Error::Parse {
            line: hline + 1,
            message: e.to_string(),
        })
    }
}

impl FromStr for PopulationGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_edge_list(s)
    }
}

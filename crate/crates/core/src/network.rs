//! Undirected communication graphs between learning nodes.
//!
//! Node ids are 0-based. Every graph handed out by [`build_topology`] or
//! [`NetworkGraph::new`] is connected; the consensus reformulation of the
//! learning problem is only equivalent to the centralized one on connected
//! graphs.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::noise::{StreamKey, StreamPurpose};

/// Upper bound on re-sampling attempts for random graphs.
pub const MAX_CONNECT_ATTEMPTS: usize = 1000;

/// Connected undirected graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    node_count: usize,
    adjacency: Vec<BTreeSet<usize>>,
}

impl NetworkGraph {
    /// Builds a graph from an edge list, rejecting self-loops, out-of-range
    /// endpoints and disconnected results.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let graph = Self::unchecked(node_count, edges)?;
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(graph)
    }

    fn unchecked(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut adjacency = vec![BTreeSet::new(); node_count];
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::IndexOutOfRange { index: a.max(b), len: node_count });
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        Ok(Self { node_count, adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Neighbor set `N_p` in ascending order.
    pub fn neighbors(&self, p: usize) -> Result<&BTreeSet<usize>> {
        self.adjacency.get(p).ok_or(Error::IndexOutOfRange { index: p, len: self.node_count })
    }

    /// Degree `|N_p|`. Panics on an out-of-range id.
    pub fn degree(&self, p: usize) -> usize {
        self.adjacency[p].len()
    }

    /// Each undirected edge once, as `(low, high)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency.iter().enumerate().flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b))).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        is_connected(self)
    }
}

/// True when a breadth-first traversal from node 0 reaches every node.
pub fn is_connected(graph: &NetworkGraph) -> bool {
    let mut seen = vec![false; graph.node_count];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(p) = queue.pop_front() {
        for &j in &graph.adjacency[p] {
            if !seen[j] {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    reached == graph.node_count
}

/// Topology families accepted by [`build_topology`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Complete,
    Ring,
    Line,
    /// Each edge present independently with probability `prob`.
    ErdosRenyi {
        prob: f64,
    },
}

/// Builds a connected graph. Random graphs are re-drawn with an incremented
/// sub-seed until connected, up to [`MAX_CONNECT_ATTEMPTS`].
pub fn build_topology(kind: &Topology, node_count: usize, seed: u64) -> Result<NetworkGraph> {
    if node_count == 0 {
        return Err(Error::InvalidArgument("node_count must be at least 1".into()));
    }
    let n = node_count;
    match *kind {
        Topology::Complete => NetworkGraph::new(n, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)))),
        Topology::Line => NetworkGraph::new(n, (1..n).map(|i| (i - 1, i))),
        Topology::Ring => {
            let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            if n > 2 {
                edges.push((n - 1, 0));
            }
            NetworkGraph::new(n, edges)
        }
        Topology::ErdosRenyi { prob } => {
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(Error::InvalidArgument(format!("edge probability must lie in (0, 1], got {prob}")));
            }
            for attempt in 0..MAX_CONNECT_ATTEMPTS {
                let mut rng = StreamKey::new(seed, StreamPurpose::Topology, 0, attempt as u64).rng();
                let mut edges = Vec::new();
                for a in 0..n {
                    for b in a + 1..n {
                        if rng.random::<f64>() < prob {
                            edges.push((a, b));
                        }
                    }
                }
                let graph = NetworkGraph::unchecked(n, edges)?;
                if graph.is_connected() {
                    return Ok(graph);
                }
            }
            Err(Error::ConnectivityBudget { attempts: MAX_CONNECT_ATTEMPTS })
        }
    }
}

/// Parsed topology string such as `ring:8`, `complete:4`, `line:3` or
/// `er:10:0.3:seed=7`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub kind: Topology,
    pub node_count: usize,
    pub seed: u64,
}

impl TopologySpec {
    pub fn build(&self) -> Result<NetworkGraph> {
        build_topology(&self.kind, self.node_count, self.seed)
    }
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad topology spec '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let count = |p: Option<&&str>| p.ok_or_else(bad)?.parse::<usize>().map_err(|_| bad());
        match parts[0].to_ascii_lowercase().as_str() {
            name @ ("ring" | "complete" | "line") if parts.len() == 2 => {
                let kind = match name {
                    "ring" => Topology::Ring,
                    "complete" => Topology::Complete,
                    _ => Topology::Line,
                };
                Ok(Self { kind, node_count: count(parts.get(1))?, seed: 0 })
            }
            "er" | "erdos_renyi" if parts.len() == 3 || parts.len() == 4 => {
                let node_count = count(parts.get(1))?;
                let prob = parts[2].parse::<f64>().map_err(|_| bad())?;
                let seed = match parts.get(3) {
                    Some(tok) => tok.strip_prefix("seed=").unwrap_or(tok).parse().map_err(|_| bad())?,
                    None => 0,
                };
                Ok(Self { kind: Topology::ErdosRenyi { prob }, node_count, seed })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Topology::Complete => write!(f, "complete:{}", self.node_count),
            Topology::Ring => write!(f, "ring:{}", self.node_count),
            Topology::Line => write!(f, "line:{}", self.node_count),
            Topology::ErdosRenyi { prob } => write!(f, "er:{}:{}:seed={}", self.node_count, prob, self.seed),
        }
    }
}

//! Retweet cascade graphs.
//!
//! A [`CascadeGraph`] is an immutable directed graph whose edge `src -> dst`
//! means that `dst` retweeted `src`. Node ids are dense (`0..n`) and the
//! original string ids are kept alongside for reporting.

mod io;
mod synth;

use std::collections::{HashMap, VecDeque};

pub use io::{load_cascade, save_cascade};
pub use synth::{synth_cascade, SynthConfig};

use crate::error::{MmenError, Result};

pub type NodeId = usize;

/// Profile metadata for one user. Every field may be missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserRecord {
    pub name: Option<String>,
    pub description: Option<String>,
    pub followers_count: Option<u64>,
    pub friends_count: Option<u64>,
    pub statuses_count: Option<u64>,
    pub verified: Option<bool>,
    pub geo_enabled: Option<bool>,
    /// Seconds between the source post and this user's retweet.
    pub retweet_delay_s: Option<f64>,
}

impl UserRecord {
    /// True when every profile field (the ones stored in `users.tsv`) is absent.
    pub fn profile_is_empty(&self) -> bool {
        self.name.is_none()
            && self.description.is_none()
            && self.followers_count.is_none()
            && self.friends_count.is_none()
            && self.statuses_count.is_none()
            && self.verified.is_none()
            && self.geo_enabled.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub delay_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGraph {
    edges: Vec<Edge>,
    out_adj: Vec<Vec<NodeId>>,
    in_adj: Vec<Vec<NodeId>>,
    users: Vec<UserRecord>,
    labels: Vec<String>,
    source: NodeId,
}

impl CascadeGraph {
    /// Builds a graph over `n` nodes labelled `"0".."n-1"`. Self-loops and
    /// duplicate edges are dropped; out-of-range endpoints are an error.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let edges = edges
            .iter()
            .map(|&(src, dst)| Edge {
                src,
                dst,
                delay_s: None,
            })
            .collect();
        Self::build(n, edges, None, None)
    }

    /// Full constructor. `users` and `labels`, when given, must have length `n`.
    pub fn build(
        n: usize,
        raw_edges: Vec<Edge>,
        users: Option<Vec<UserRecord>>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(MmenError::Data("graph has no nodes".into()));
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        let mut edges = Vec::with_capacity(raw_edges.len());
        let mut seen = std::collections::HashSet::with_capacity(raw_edges.len());
        for e in raw_edges {
            for node in [e.src, e.dst] {
                if node >= n {
                    return Err(MmenError::NodeOutOfRange { node, n });
                }
            }
            if let Some(d) = e.delay_s {
                if !d.is_finite() || d < 0.0 {
                    return Err(MmenError::Data(format!(
                        "edge {}->{} has invalid delay {d}",
                        e.src, e.dst
                    )));
                }
            }
            if e.src == e.dst || !seen.insert((e.src, e.dst)) {
                continue;
            }
            out_adj[e.src].push(e.dst);
            in_adj[e.dst].push(e.src);
            edges.push(e);
        }

        let mut users = match users {
            Some(u) if u.len() != n => {
                return Err(MmenError::Data(format!(
                    "{} user records for {n} nodes",
                    u.len()
                )))
            }
            Some(u) => u,
            None => vec![UserRecord::default(); n],
        };
        // Retweet delay of a user is the earliest delay among its incoming edges.
        for e in &edges {
            if let Some(d) = e.delay_s {
                let slot = &mut users[e.dst].retweet_delay_s;
                *slot = Some(slot.map_or(d, |cur: f64| cur.min(d)));
            }
        }
        let labels = match labels {
            Some(l) if l.len() != n => {
                return Err(MmenError::Data(format!("{} labels for {n} nodes", l.len())))
            }
            Some(l) => l,
            None => (0..n).map(|i| i.to_string()).collect(),
        };

        let mut g = CascadeGraph {
            edges,
            out_adj,
            in_adj,
            users,
            labels,
            source: 0,
        };
        g.source = g.find_source();
        Ok(g)
    }

    /// The in-degree-0 node that reaches every other node, or node 0.
    fn find_source(&self) -> NodeId {
        let n = self.num_nodes();
        (0..n)
            .filter(|&v| self.in_adj[v].is_empty())
            .find(|&v| self.bfs_from(v, &self.out_adj, usize::MAX).iter().all(|d| d.is_some()))
            .unwrap_or(0)
    }

    pub fn num_nodes(&self) -> usize {
        self.out_adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn user(&self, v: NodeId) -> &UserRecord {
        &self.users[v]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v]
    }

    pub fn out_neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.out_adj[v]
    }

    pub fn in_neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.in_adj[v]
    }

    pub fn out_degree(&self, v: NodeId) -> usize {
        self.out_adj[v].len()
    }

    pub fn in_degree(&self, v: NodeId) -> usize {
        self.in_adj[v].len()
    }

    /// Degree in the undirected view (edges are never reciprocal duplicates
    /// here, but `a->b` and `b->a` together count as one neighbour).
    pub fn undirected_degree(&self, v: NodeId) -> usize {
        self.undirected_neighbors(v).len()
    }

    pub fn undirected_neighbors(&self, v: NodeId) -> Vec<NodeId> {
        let mut nb: Vec<NodeId> = self.out_adj[v]
            .iter()
            .chain(self.in_adj[v].iter())
            .copied()
            .collect();
        nb.sort_unstable();
        nb.dedup();
        nb
    }

    /// Sorted, deduplicated undirected adjacency lists.
    pub fn undirected_adjacency(&self) -> Vec<Vec<NodeId>> {
        (0..self.num_nodes())
            .map(|v| self.undirected_neighbors(v))
            .collect()
    }

    fn check_node(&self, v: NodeId) -> Result<()> {
        if v >= self.num_nodes() {
            Err(MmenError::NodeOutOfRange {
                node: v,
                n: self.num_nodes(),
            })
        } else {
            Ok(())
        }
    }

    fn bfs_from(&self, start: NodeId, adj: &[Vec<NodeId>], max_depth: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            if du >= max_depth {
                continue;
            }
            for &w in &adj[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Directed BFS distances from `a` to every node; `None` when unreachable.
    pub fn distances_from(&self, a: NodeId) -> Result<Vec<Option<usize>>> {
        self.check_node(a)?;
        Ok(self.bfs_from(a, &self.out_adj, usize::MAX))
    }

    /// Hop count of the shortest directed path `a -> b`.
    pub fn shortest_path_len(&self, a: NodeId, b: NodeId) -> Result<Option<usize>> {
        self.check_node(b)?;
        Ok(self.distances_from(a)?[b])
    }

    /// Nodes whose selection covers `v`: every `u` with a directed path
    /// `u -> v` of at most `d` hops, plus `v` itself. Sorted ascending.
    pub fn out_neighborhood(&self, v: NodeId, d: usize) -> Result<Vec<NodeId>> {
        self.check_node(v)?;
        if d == 0 {
            return Err(MmenError::InvalidParam("hop radius must be >= 1".into()));
        }
        Ok(collect_reached(&self.bfs_from(v, &self.in_adj, d)))
    }

    /// Nodes covered by selecting `u`: everything within `d` directed hops
    /// downstream of `u`, including `u`. Sorted ascending.
    pub fn downstream(&self, u: NodeId, d: usize) -> Result<Vec<NodeId>> {
        self.check_node(u)?;
        if d == 0 {
            return Err(MmenError::InvalidParam("hop radius must be >= 1".into()));
        }
        Ok(collect_reached(&self.bfs_from(u, &self.out_adj, d)))
    }

    /// Covering set of every node, indexed by the covered node.
    pub fn covering_sets(&self, d: usize) -> Result<Vec<Vec<NodeId>>> {
        (0..self.num_nodes())
            .map(|v| self.out_neighborhood(v, d))
            .collect()
    }

    /// Size of the largest weakly connected component after deleting
    /// `removed`. Ids outside the graph are ignored.
    pub fn largest_component_size(&self, removed: &[NodeId]) -> usize {
        let n = self.num_nodes();
        let mut gone = vec![false; n];
        for &v in removed {
            if v < n {
                gone[v] = true;
            }
        }
        let mut seen = gone.clone();
        let mut best = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut size = 0;
            while let Some(u) = stack.pop() {
                size += 1;
                for &w in self.out_adj[u].iter().chain(self.in_adj[u].iter()) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            best = best.max(size);
        }
        best
    }

    /// Copy of this graph with every edge mirrored.
    pub fn symmetrized(&self) -> CascadeGraph {
        let mut edges = self.edges.clone();
        edges.extend(self.edges.iter().map(|e| Edge {
            src: e.dst,
            dst: e.src,
            delay_s: None,
        }));
        let mut g = CascadeGraph::build(
            self.num_nodes(),
            edges,
            Some(self.users.clone()),
            Some(self.labels.clone()),
        )
        .expect("mirroring a valid graph stays valid");
        g.source = self.source;
        g
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[NodeId]) -> Result<CascadeGraph> {
        let n = self.num_nodes();
        let mut check = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut check[p], true)) {
            return Err(MmenError::InvalidParam("not a permutation".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                src: perm[e.src],
                dst: perm[e.dst],
                delay_s: e.delay_s,
            })
            .collect();
        let mut users = vec![UserRecord::default(); n];
        let mut labels = vec![String::new(); n];
        for v in 0..n {
            users[perm[v]] = self.users[v].clone();
            labels[perm[v]] = self.labels[v].clone();
        }
        let mut g = CascadeGraph::build(n, edges, Some(users), Some(labels))?;
        g.source = perm[self.source];
        Ok(g)
    }

    /// Map from original string id to dense node id.
    pub fn label_index(&self) -> HashMap<&str, NodeId> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }
}

fn collect_reached(dist: &[Option<usize>]) -> Vec<NodeId> {
    dist.iter()
        .enumerate()
        .filter_map(|(u, d)| d.map(|_| u))
        .collect()
}

/// A selected group of seed nodes, in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub members: Vec<NodeId>,
    pub fraction: f64,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Number of seeds for a fraction of `n` nodes: `ceil(fraction * n)`,
/// never less than one.
pub fn seed_budget(n: usize, fraction: f64) -> usize {
    // Guard against products such as 0.07 * 100 = 7.000000000000001.
    let k = (fraction * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> CascadeGraph {
        CascadeGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn covering_set_on_path() {
        let g = path3();
        assert_eq!(g.out_neighborhood(2, 1).unwrap(), vec![1, 2]);
        assert_eq!(g.out_neighborhood(2, 2).unwrap(), vec![0, 1, 2]);
        assert!(g.out_neighborhood(3, 1).is_err());
        assert!(g.out_neighborhood(0, 0).is_err());
    }

    #[test]
    fn shortest_paths_respect_direction() {
        let g = path3();
        assert_eq!(g.shortest_path_len(1, 1).unwrap(), Some(0));
        assert_eq!(g.shortest_path_len(0, 2).unwrap(), Some(2));
        assert_eq!(g.shortest_path_len(2, 0).unwrap(), None);
    }

    #[test]
    fn component_sizes() {
        let g = path3();
        assert_eq!(g.largest_component_size(&[]), 3);
        assert_eq!(g.largest_component_size(&[0, 1, 2]), 0);
        assert_eq!(g.largest_component_size(&[1]), 1);
    }

    #[test]
    fn dedup_and_self_loops() {
        let g = CascadeGraph::from_edges(3, &[(0, 1), (0, 1), (1, 1), (0, 2)]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.source(), 0);
        assert!(CascadeGraph::from_edges(2, &[(0, 5)]).is_err());
    }

    #[test]
    fn source_falls_back_to_zero() {
        // Two roots: neither reaches everything.
        let g = CascadeGraph::from_edges(4, &[(1, 0), (2, 3)]).unwrap();
        assert_eq!(g.source(), 0);
        let g = CascadeGraph::from_edges(3, &[(2, 0), (2, 1)]).unwrap();
        assert_eq!(g.source(), 2);
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(seed_budget(100, 0.05), 5);
        assert_eq!(seed_budget(100, 0.07), 7);
        assert_eq!(seed_budget(101, 0.05), 6);
        assert_eq!(seed_budget(3, 0.05), 1);
        assert_eq!(seed_budget(10, 1.0), 10);
    }

    #[test]
    fn permutation_relabels_edges() {
        let g = path3();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.out_neighbors(2), &[0]);
        assert_eq!(p.out_neighbors(0), &[1]);
        assert_eq!(p.source(), 2);
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }
}

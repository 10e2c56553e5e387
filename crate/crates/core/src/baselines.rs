//! Classical seed-selection methods used as comparison points.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MmenError, Result};
use crate::graph::{CascadeGraph, NodeId, SeedSet};
use crate::train::{select_seeds, top_k};

pub const LEADERRANK_TOL: f64 = 1e-10;
pub const LEADERRANK_MAX_ITERS: usize = 100_000;

/// One score per node from a named method. Higher is more influential.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedScores {
    pub method: String,
    pub scores: Vec<f64>,
}

impl RankedScores {
    /// Nodes by descending score, ties to the smaller id.
    pub fn order(&self) -> Vec<NodeId> {
        top_k(&self.scores, self.scores.len())
    }

    pub fn top(&self, fraction: f64) -> Result<SeedSet> {
        select_seeds(&self.scores, fraction)
    }
}

/// In-degree plus out-degree.
pub fn degree_centrality(g: &CascadeGraph) -> RankedScores {
    RankedScores {
        method: "degree".into(),
        scores: (0..g.num_nodes())
            .map(|v| (g.in_degree(v) + g.out_degree(v)) as f64)
            .collect(),
    }
}

/// Shell index from k-core peeling of the undirected view.
pub fn kshell(g: &CascadeGraph) -> RankedScores {
    let adj = g.undirected_adjacency();
    let n = adj.len();
    let mut deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut shell = vec![0usize; n];
    let mut removed = vec![false; n];
    let mut left = n;
    let mut k = 0;
    let mut stack = Vec::new();
    while left > 0 {
        stack.extend((0..n).filter(|&v| !removed[v] && deg[v] <= k));
        if stack.is_empty() {
            k += 1;
            continue;
        }
        while let Some(v) = stack.pop() {
            if removed[v] {
                continue;
            }
            removed[v] = true;
            shell[v] = k;
            left -= 1;
            for &u in &adj[v] {
                if !removed[u] {
                    deg[u] -= 1;
                    if deg[u] <= k {
                        stack.push(u);
                    }
                }
            }
        }
    }
    RankedScores {
        method: "kshell".into(),
        scores: shell.into_iter().map(|s| s as f64).collect(),
    }
}

/// Largest `h` with at least `h` undirected neighbours of degree `>= h`.
pub fn h_index(g: &CascadeGraph) -> RankedScores {
    let adj = g.undirected_adjacency();
    let scores = adj
        .iter()
        .map(|nb| {
            let mut d: Vec<usize> = nb.iter().map(|&u| adj[u].len()).collect();
            d.sort_unstable_by(|a, b| b.cmp(a));
            d.iter().enumerate().take_while(|&(i, &x)| x > i).count() as f64
        })
        .collect();
    RankedScores {
        method: "hindex".into(),
        scores,
    }
}

/// LeaderRank with a ground node linked both ways to every node. The walk
/// follows retweet edges backwards, so score accumulates at the users
/// being retweeted. The ground's final score is shared equally and the
/// scores sum to `N`.
pub fn leaderrank(g: &CascadeGraph, tol: f64) -> Result<RankedScores> {
    let n = g.num_nodes();
    let method = "leaderrank".to_string();
    if g.num_edges() == 0 {
        return Ok(RankedScores {
            method,
            scores: vec![1.0; n],
        });
    }
    // Walk out-degree of node v is in_degree(v) + 1; the ground's is n.
    let mut s = vec![1.0; n];
    let mut ground = 0.0;
    let mut next = vec![0.0; n];
    for _ in 0..LEADERRANK_MAX_ITERS {
        let from_ground = ground / n as f64;
        next.iter_mut().for_each(|x| *x = from_ground);
        let mut next_ground = 0.0;
        for v in 0..n {
            let share = s[v] / (g.in_degree(v) + 1) as f64;
            for &u in g.in_neighbors(v) {
                next[u] += share;
            }
            next_ground += share;
        }
        let change: f64 = s.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>()
            + (ground - next_ground).abs();
        std::mem::swap(&mut s, &mut next);
        ground = next_ground;
        if change < tol {
            let bonus = ground / n as f64;
            return Ok(RankedScores {
                method,
                scores: s.into_iter().map(|x| x + bonus).collect(),
            });
        }
    }
    Err(MmenError::Numeric(format!(
        "leaderrank did not converge to {tol} within {LEADERRANK_MAX_ITERS} iterations"
    )))
}

/// Greedy maximum d-coverage. Each step takes the node whose downstream
/// `d`-hop set contains the most still-uncovered nodes (ties to the
/// smaller id); once everything is covered the rest go by degree.
pub fn greedy_dcover(g: &CascadeGraph, budget: usize, d: usize) -> Result<SeedSet> {
    let n = g.num_nodes();
    if budget == 0 || budget > n {
        return Err(MmenError::InvalidParam(format!(
            "greedy budget must be in [1, {n}], got {budget}"
        )));
    }
    let mut covered = vec![false; n];
    let mut chosen = vec![false; n];
    let mut members = Vec::with_capacity(budget);
    while members.len() < budget {
        let mut best: Option<(usize, NodeId)> = None;
        for u in (0..n).filter(|&u| !chosen[u]) {
            let gain = g.downstream(u, d)?.iter().filter(|&&v| !covered[v]).count();
            if best.is_none_or(|(b, _)| gain > b) {
                best = Some((gain, u));
            }
        }
        let (gain, u) = best.expect("budget <= n leaves a candidate");
        if gain == 0 {
            break;
        }
        for v in g.downstream(u, d)? {
            covered[v] = true;
        }
        chosen[u] = true;
        members.push(u);
    }
    if members.len() < budget {
        let deg = degree_centrality(g);
        for u in deg.order() {
            if members.len() == budget {
                break;
            }
            if !chosen[u] {
                chosen[u] = true;
                members.push(u);
            }
        }
    }
    Ok(SeedSet {
        members,
        fraction: budget as f64 / n as f64,
    })
}

/// Uniformly random seeds, drawn without replacement.
pub fn random_seeds(n: usize, budget: usize, rng_seed: u64) -> Result<SeedSet> {
    if budget == 0 || budget > n {
        return Err(MmenError::InvalidParam(format!(
            "random budget must be in [1, {n}], got {budget}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(SeedSet {
        members: sample(&mut rng, n, budget).into_vec(),
        fraction: budget as f64 / n as f64,
    })
}

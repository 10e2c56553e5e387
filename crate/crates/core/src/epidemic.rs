//! SIR spreading estimates, the robustness index and the method
//! comparison report.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::ParamStore;
use crate::baselines::{
    degree_centrality, greedy_dcover, h_index, kshell, leaderrank, random_seeds, LEADERRANK_TOL,
};
use crate::error::{MmenError, Result};
use crate::features::WalkConfig;
use crate::graph::{seed_budget, CascadeGraph, NodeId, SeedSet};
use crate::model::{score_graph, ModelConfig, ModelInput};
use crate::train::select_seeds;

pub const METHOD_NAMES: [&str; 7] = [
    "mmen",
    "degree",
    "kshell",
    "hindex",
    "leaderrank",
    "greedy",
    "random",
];

/// Mixes a base seed with an index into an independent-looking seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirConfig {
    /// Per-contact infection probability; `None` picks [`default_mu`] per graph.
    pub mu: Option<f64>,
    pub runs: usize,
    pub rng_seed: u64,
}

impl Default for SirConfig {
    fn default() -> Self {
        SirConfig {
            mu: None,
            runs: 100,
            rng_seed: 0,
        }
    }
}

impl SirConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if !(0.0..=1.0).contains(&mu) {
                return Err(MmenError::InvalidParam(format!("mu must be in [0, 1], got {mu}")));
            }
        }
        if self.runs == 0 {
            return Err(MmenError::InvalidParam("runs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn mu_for(&self, g: &CascadeGraph) -> f64 {
        self.mu.unwrap_or_else(|| default_mu(g))
    }
}

/// `min(1, 1.5 <k> / (<k^2> - <k>))` over undirected degrees; 1 when the
/// denominator vanishes.
pub fn default_mu(g: &CascadeGraph) -> f64 {
    let n = g.num_nodes() as f64;
    let (mut k1, mut k2) = (0.0, 0.0);
    for v in 0..g.num_nodes() {
        let k = g.undirected_neighbors(v).len() as f64;
        k1 += k;
        k2 += k * k;
    }
    let (k1, k2) = (k1 / n, k2 / n);
    let denom = k2 - k1;
    if denom <= 0.0 {
        1.0
    } else {
        (1.5 * k1 / denom).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SirOutcome {
    /// Nodes ever infected, seeds included.
    pub recovered: usize,
    pub steps: usize,
}

/// One synchronous SIR run with certain recovery on an undirected
/// adjacency list.
pub fn sir_run<R: Rng>(adj: &[Vec<NodeId>], seeds: &[NodeId], mu: f64, rng: &mut R) -> SirOutcome {
    let n = adj.len();
    let mut touched = vec![false; n];
    let mut infected: Vec<NodeId> = Vec::with_capacity(seeds.len());
    for &s in seeds {
        if s < n && !touched[s] {
            touched[s] = true;
            infected.push(s);
        }
    }
    let mut recovered = 0;
    let mut steps = 0;
    let mut next = Vec::new();
    while !infected.is_empty() {
        steps += 1;
        for &u in &infected {
            for &v in &adj[u] {
                if !touched[v] && rng.random_bool(mu) {
                    touched[v] = true;
                    next.push(v);
                }
            }
        }
        recovered += infected.len();
        infected.clear();
        std::mem::swap(&mut infected, &mut next);
    }
    SirOutcome { recovered, steps }
}

/// Mean infected fraction over `runs` runs and its standard error. Run
/// `i` draws from stream `i` of a generator seeded with `rng_seed`.
pub fn infection_rate(
    adj: &[Vec<NodeId>],
    seeds: &[NodeId],
    mu: f64,
    runs: usize,
    rng_seed: u64,
) -> (f64, f64) {
    let n = adj.len() as f64;
    let counts: Vec<usize> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            sir_run(adj, seeds, mu, &mut rng).recovered
        })
        .collect();
    let total: usize = counts.iter().sum();
    let mean = total as f64 / (runs as f64 * n);
    if runs < 2 {
        return (mean, 0.0);
    }
    let var = counts
        .iter()
        .map(|&c| (c as f64 / n - mean).powi(2))
        .sum::<f64>()
        / (runs - 1) as f64;
    (mean, (var / runs as f64).sqrt())
}

/// Share of nodes in the largest weakly connected component left after
/// removing `seeds`.
pub fn robustness(g: &CascadeGraph, seeds: &[NodeId]) -> f64 {
    g.largest_component_size(seeds) as f64 / g.num_nodes() as f64
}

/// A trained model packaged as a seed selector.
#[derive(Debug, Clone)]
pub struct MmenSelector {
    pub name: String,
    pub params: Arc<ParamStore>,
    pub model: ModelConfig,
    pub walk: WalkConfig,
}

impl MmenSelector {
    /// The architecture comes from the tensors; attention follows the
    /// walk's direction setting.
    pub fn new(params: ParamStore, walk: WalkConfig) -> Result<Self> {
        let mut model = ModelConfig::infer(&params)?;
        model.undirected = walk.undirected;
        Ok(MmenSelector {
            name: model.ablation.method_name(),
            params: Arc::new(params),
            model,
            walk,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Method {
    Mmen(MmenSelector),
    Degree,
    KShell,
    HIndex,
    LeaderRank,
    Greedy { d: usize },
    Random,
}

impl Method {
    /// A non-learned method by name. `mmen` needs a checkpoint, so it is
    /// built with [`MmenSelector`] instead.
    pub fn baseline(name: &str) -> Result<Method> {
        Ok(match name {
            "degree" => Method::Degree,
            "kshell" => Method::KShell,
            "hindex" => Method::HIndex,
            "leaderrank" => Method::LeaderRank,
            "greedy" => Method::Greedy { d: 1 },
            "random" => Method::Random,
            "mmen" => {
                return Err(MmenError::InvalidParam(
                    "method `mmen` requires a checkpoint".into(),
                ))
            }
            _ => return Err(unknown_method(name)),
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Method::Mmen(m) => &m.name,
            Method::Degree => "degree",
            Method::KShell => "kshell",
            Method::HIndex => "hindex",
            Method::LeaderRank => "leaderrank",
            Method::Greedy { .. } => "greedy",
            Method::Random => "random",
        }
    }

    /// Seeds for `g`; `rng_seed` only matters for `random`.
    pub fn select(&self, g: &CascadeGraph, fraction: f64, rng_seed: u64) -> Result<SeedSet> {
        match self {
            Method::Mmen(m) => {
                let input = ModelInput::prepare(g, &m.walk, m.model.undirected)?;
                let scores = score_graph(&input, &m.params, &m.model)?;
                select_seeds(&scores.scores, fraction)
            }
            Method::Degree => degree_centrality(g).top(fraction),
            Method::KShell => kshell(g).top(fraction),
            Method::HIndex => h_index(g).top(fraction),
            Method::LeaderRank => leaderrank(g, LEADERRANK_TOL)?.top(fraction),
            Method::Greedy { d } => {
                check_fraction(fraction)?;
                let mut s = greedy_dcover(g, seed_budget(g.num_nodes(), fraction), *d)?;
                s.fraction = fraction;
                Ok(s)
            }
            Method::Random => {
                check_fraction(fraction)?;
                let n = g.num_nodes();
                let mut s = random_seeds(n, seed_budget(n, fraction), rng_seed)?;
                s.fraction = fraction;
                Ok(s)
            }
        }
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(MmenError::InvalidParam(format!(
            "seed fraction must be in (0, 1], got {fraction}"
        )))
    }
}

pub fn unknown_method(name: &str) -> MmenError {
    MmenError::UnknownMethod {
        name: name.to_string(),
        valid: METHOD_NAMES.join(", "),
    }
}

/// Checks a comma-separated method list against [`METHOD_NAMES`].
pub fn parse_method_list(list: &str) -> Result<Vec<String>> {
    let names: Vec<String> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(MmenError::InvalidParam("empty method list".into()));
    }
    for n in &names {
        if !METHOD_NAMES.contains(&n.as_str()) {
            return Err(unknown_method(n));
        }
    }
    Ok(names)
}

#[derive(Debug, Clone)]
pub struct NamedGraph {
    pub name: String,
    pub graph: CascadeGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub graph: String,
    pub method: String,
    pub st_mean: f64,
    pub st_stderr: f64,
    pub r: f64,
    pub mu: f64,
    pub runs: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Graph-major, methods in the order requested.
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub st_mean: f64,
    pub r_mean: f64,
    pub graphs: usize,
}

impl EvalReport {
    pub fn method_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a EvalRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Per-method means across graphs, in first-appearance order.
    pub fn summary(&self) -> Vec<MethodSummary> {
        self.method_names()
            .into_iter()
            .map(|m| {
                let rows: Vec<&EvalRow> = self.rows_for(&m).collect();
                let k = rows.len() as f64;
                MethodSummary {
                    st_mean: rows.iter().map(|r| r.st_mean).sum::<f64>() / k,
                    r_mean: rows.iter().map(|r| r.r).sum::<f64>() / k,
                    graphs: rows.len(),
                    method: m,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| MmenError::Data(format!("csv encoding failed: {e}"));
        w.write_record(["graph", "method", "st_mean", "st_stderr", "r", "mu", "runs", "fraction"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.graph.clone(),
                r.method.clone(),
                r.st_mean.to_string(),
                r.st_stderr.to_string(),
                r.r.to_string(),
                r.mu.to_string(),
                r.runs.to_string(),
                r.fraction.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| MmenError::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| MmenError::io(path, e))
    }

    /// Aligned per-method table of mean infection rate and robustness.
    pub fn text_table(&self) -> String {
        let summary = self.summary();
        let width = summary.iter().map(|s| s.method.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>6}", "method", "S_t", "R", "graphs");
        for s in &summary {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>6}",
                s.method, s.st_mean, s.r_mean, s.graphs
            );
        }
        out
    }
}

/// Selects seeds with every method on every graph and scores them. The
/// SIR streams for graph `i` derive from `sir.rng_seed` and `i`, so every
/// method on a graph faces the same random draws.
pub fn compare_methods(
    graphs: &[NamedGraph],
    methods: &[Method],
    sir: &SirConfig,
    seed_fraction: f64,
) -> Result<EvalReport> {
    sir.validate()?;
    check_fraction(seed_fraction)?;
    if graphs.is_empty() || methods.is_empty() {
        return Err(MmenError::InvalidParam(
            "comparison needs at least one graph and one method".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..graphs.len())
        .flat_map(|g| (0..methods.len()).map(move |m| (g, m)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(gi, mi)| {
            let ng = &graphs[gi];
            let g = &ng.graph;
            let method = &methods[mi];
            let graph_seed = derive_seed(sir.rng_seed, gi as u64);
            let seeds = method.select(g, seed_fraction, derive_seed(graph_seed, u64::MAX))?;
            let mu = sir.mu_for(g);
            let adj = g.undirected_adjacency();
            let (st_mean, st_stderr) = infection_rate(&adj, &seeds.members, mu, sir.runs, graph_seed);
            Ok(EvalRow {
                graph: ng.name.clone(),
                method: method.name().to_string(),
                st_mean,
                st_stderr,
                r: robustness(g, &seeds.members),
                mu,
                runs: sir.runs,
                fraction: seed_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

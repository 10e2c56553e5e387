//! Per-node input features for the two views of a cascade.
//!
//! The user view is a 9-vector of profile metadata; the structure view is
//! an 8-vector of random-walk statistics. Both are normalized per graph.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MmenError, Result};
use crate::graph::{CascadeGraph, NodeId};

pub const USER_DIM: usize = 9;
pub const STRUCT_DIM: usize = 8;

/// User-view columns that hold counts or durations and get a `log1p`.
const USER_LOG_COLUMNS: [usize; 6] = [0, 1, 2, 3, 4, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    User,
    Structure,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::User => "user",
            View::Structure => "structure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub view: View,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_len: usize,
    pub rng_seed: u64,
    /// Walk along both edge directions instead of following retweets only.
    pub undirected: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_len: 4,
            rng_seed: 0,
            undirected: false,
        }
    }
}

impl WalkConfig {
    fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0 || self.walk_len == 0 {
            return Err(MmenError::InvalidParam(
                "walks_per_node and walk_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Raw profile features of `v`, in order: name length, description length,
/// followers, friends, statuses, verified, geo enabled, retweet delay and
/// hop distance from the source. Missing values become 0.
pub fn user_attribute_vector(g: &CascadeGraph, v: NodeId) -> [f64; USER_DIM] {
    let distances = g
        .distances_from(g.source())
        .expect("source is a valid node");
    user_vector_with_distance(g, v, distances[v])
}

fn user_vector_with_distance(
    g: &CascadeGraph,
    v: NodeId,
    hops_from_source: Option<usize>,
) -> [f64; USER_DIM] {
    let u = g.user(v);
    let chars = |s: &Option<String>| s.as_ref().map_or(0.0, |s| s.chars().count() as f64);
    let count = |c: Option<u64>| c.map_or(0.0, |c| c as f64);
    let flag = |b: Option<bool>| if b == Some(true) { 1.0 } else { 0.0 };
    [
        chars(&u.name),
        chars(&u.description),
        count(u.followers_count),
        count(u.friends_count),
        count(u.statuses_count),
        flag(u.verified),
        flag(u.geo_enabled),
        u.retweet_delay_s.unwrap_or(0.0),
        hops_from_source.map_or(0.0, |d| d as f64),
    ]
}

/// Unnormalized user-view matrix.
pub fn user_features(g: &CascadeGraph) -> FeatureMatrix {
    let distances = g
        .distances_from(g.source())
        .expect("source is a valid node");
    let n = g.num_nodes();
    let mut values = Array2::zeros((n, USER_DIM));
    for v in 0..n {
        let row = user_vector_with_distance(g, v, distances[v]);
        values.row_mut(v).assign(&ndarray::ArrayView1::from(&row));
    }
    FeatureMatrix {
        view: View::User,
        values,
    }
}

/// Log-compresses count-like user columns, then z-scores every column.
/// Columns with zero variance become all zeros.
pub fn normalize_features(m: &FeatureMatrix) -> FeatureMatrix {
    let mut values = m.values.clone();
    if m.view == View::User {
        for &c in &USER_LOG_COLUMNS {
            values.column_mut(c).mapv_inplace(|x| x.max(0.0).ln_1p());
        }
    }
    zscore_columns(&mut values);
    FeatureMatrix {
        view: m.view,
        values,
    }
}

fn zscore_columns(values: &mut Array2<f64>) {
    let n = values.nrows() as f64;
    for mut col in values.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|x| (x - mean) / std);
        }
    }
}

/// Random-walk statistics before normalization. Column order:
/// normalized out-degree, normalized in-degree, mean visited out-degree,
/// max visited out-degree, return frequency, distinct-visit ratio,
/// fraction of walks reaching full depth, mean visit depth.
pub fn raw_walk_statistics(g: &CascadeGraph, cfg: &WalkConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let n = g.num_nodes();
    let adj: Vec<Vec<NodeId>> = if cfg.undirected {
        g.undirected_adjacency()
    } else {
        (0..n).map(|v| g.out_neighbors(v).to_vec()).collect()
    };
    let degree_scale = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let steps = (cfg.walks_per_node * cfg.walk_len) as f64;

    let mut values = Array2::zeros((n, STRUCT_DIM));
    let mut visited = vec![false; n];
    let mut touched = Vec::new();
    for v in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(v as u64);

        let mut deg_sum = 0.0;
        let mut deg_max = 0usize;
        let mut returns = 0usize;
        let mut full_depth = 0usize;
        let mut depth_sum = 0usize;
        for _ in 0..cfg.walks_per_node {
            let mut cur = v;
            let mut depth = 0;
            for _ in 0..cfg.walk_len {
                let nb = &adj[cur];
                if nb.is_empty() {
                    cur = v;
                    depth = 0;
                } else {
                    cur = nb[rng.random_range(0..nb.len())];
                    depth += 1;
                }
                if !visited[cur] {
                    visited[cur] = true;
                    touched.push(cur);
                }
                let d = adj[cur].len();
                deg_sum += d as f64;
                deg_max = deg_max.max(d);
                returns += usize::from(cur == v);
                depth_sum += depth;
            }
            full_depth += usize::from(depth == cfg.walk_len);
        }
        let distinct = touched.len();
        for w in touched.drain(..) {
            visited[w] = false;
        }

        let row = [
            g.out_degree(v) as f64 * degree_scale,
            g.in_degree(v) as f64 * degree_scale,
            deg_sum / steps,
            deg_max as f64,
            returns as f64 / steps,
            distinct as f64 / steps,
            full_depth as f64 / cfg.walks_per_node as f64,
            depth_sum as f64 / steps,
        ];
        values
            .row_mut(v)
            .assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(FeatureMatrix {
        view: View::Structure,
        values,
    })
}

/// Z-scored structural view.
pub fn random_walk_features(g: &CascadeGraph, cfg: &WalkConfig) -> Result<FeatureMatrix> {
    Ok(normalize_features(&raw_walk_statistics(g, cfg)?))
}

/// Both normalized views of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    pub user: FeatureMatrix,
    pub structure: FeatureMatrix,
}

pub fn featurize(g: &CascadeGraph, walk: &WalkConfig) -> Result<GraphFeatures> {
    Ok(GraphFeatures {
        user: normalize_features(&user_features(g)),
        structure: random_walk_features(g, walk)?,
    })
}

/// Writes `node,view,f0..fK` rows for every given view; shorter views leave
/// trailing cells empty.
pub fn write_features_csv(
    path: impl AsRef<Path>,
    g: &CascadeGraph,
    views: &[&FeatureMatrix],
) -> Result<()> {
    let path = path.as_ref();
    let width = views.iter().map(|m| m.dim()).max().unwrap_or(0);
    let mut out = String::from("node,view");
    for k in 0..width {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for m in views {
        for v in 0..m.rows() {
            let _ = write!(out, "{},{}", g.label(v), m.view.as_str());
            for k in 0..width {
                out.push(',');
                if k < m.dim() {
                    let _ = write!(out, "{}", m.values[[v, k]]);
                }
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| MmenError::io(path, e))
}

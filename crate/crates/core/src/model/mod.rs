//! The two-view memory-enhanced attention network.
//!
//! Each view runs `input projection -> (GAT -> memory read -> residual
//! layer norm) x layers -> score head`; a small fusion head then mixes the
//! two per-node score vectors with learned weights.

pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Mat, ParamStore, Tape, Var};
use crate::error::{MmenError, Result};
use crate::features::{self, GraphFeatures, WalkConfig, STRUCT_DIM, USER_DIM};
use crate::graph::CascadeGraph;
pub use layers::{
    fuse_scores, fusion_weights, gat_layer, memory_enhance, memory_read, score_head,
    AttentionGraph,
};

pub const USER_PREFIX: &str = "user";
pub const STRUCT_PREFIX: &str = "struct";
pub const FUSION_PREFIX: &str = "fusion";

/// Component switches for the ablation variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Structure view only.
    pub no_user: bool,
    /// Skip memory read and enhancement.
    pub no_memory: bool,
    /// Fixed `(0.5, 0.5)` fusion instead of the learned head.
    pub no_fusion: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_user: false,
        no_memory: false,
        no_fusion: false,
    };

    pub fn parse(name: &str) -> Result<Ablation> {
        match name {
            "none" | "full" => Ok(Ablation::FULL),
            "no-user" => Ok(Ablation {
                no_user: true,
                ..Ablation::FULL
            }),
            "no-memory" => Ok(Ablation {
                no_memory: true,
                ..Ablation::FULL
            }),
            "no-fusion" => Ok(Ablation {
                no_fusion: true,
                ..Ablation::FULL
            }),
            other => Err(MmenError::InvalidParam(format!(
                "unknown ablation `{other}` (expected no-user, no-memory or no-fusion)"
            ))),
        }
    }

    /// The full model followed by the three single-component ablations.
    pub fn study_variants() -> [Ablation; 4] {
        [
            Ablation::FULL,
            Ablation::parse("no-user").unwrap(),
            Ablation::parse("no-memory").unwrap(),
            Ablation::parse("no-fusion").unwrap(),
        ]
    }

    /// Method label used in reports, e.g. `mmen` or `mmen-no-memory`.
    pub fn method_name(&self) -> String {
        let mut name = String::from("mmen");
        if self.no_user {
            name.push_str("-no-user");
        }
        if self.no_memory {
            name.push_str("-no-memory");
        }
        if self.no_fusion {
            name.push_str("-no-fusion");
        }
        name
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub memory_groups: usize,
    pub memory_slots: usize,
    /// Stacked (GAT, memory) blocks per view.
    pub layers: usize,
    pub leaky_slope: f64,
    pub undirected: bool,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            heads: 4,
            head_dim: 16,
            memory_groups: 4,
            memory_slots: 32,
            layers: 2,
            leaky_slope: 0.2,
            undirected: false,
            ablation: Ablation::FULL,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.heads * self.head_dim
    }

    fn views(&self) -> Vec<(&'static str, usize)> {
        let mut v = Vec::with_capacity(2);
        if !self.ablation.no_user {
            v.push((USER_PREFIX, USER_DIM));
        }
        v.push((STRUCT_PREFIX, STRUCT_DIM));
        v
    }

    fn uses_fusion_head(&self) -> bool {
        !self.ablation.no_user && !self.ablation.no_fusion
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.layers == 0 {
            return Err(MmenError::InvalidParam(
                "heads, head_dim and layers must be >= 1".into(),
            ));
        }
        if !self.ablation.no_memory && (self.memory_groups == 0 || self.memory_slots == 0) {
            return Err(MmenError::InvalidParam(
                "memory_groups and memory_slots must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Recovers the architecture from the tensor names and shapes of a
    /// checkpoint. `leaky_slope` and `undirected` are not stored and keep
    /// their defaults.
    pub fn infer(params: &ParamStore) -> Result<ModelConfig> {
        let missing = |name: &str| MmenError::Data(format!("checkpoint lacks tensor `{name}`"));
        let head0 = format!("{STRUCT_PREFIX}.gat0.head0.w");
        let head_dim = params.get(&head0).ok_or_else(|| missing(&head0))?.ncols();
        let heads = (0..)
            .take_while(|k| params.contains(&format!("{STRUCT_PREFIX}.gat0.head{k}.w")))
            .count();
        let layers = (0..)
            .take_while(|l| params.contains(&format!("{STRUCT_PREFIX}.gat{l}.head0.w")))
            .count();
        let no_memory = !params.contains(&format!("{STRUCT_PREFIX}.mem0.conv.w"));
        let (memory_groups, memory_slots) = if no_memory {
            (0, 0)
        } else {
            let groups = (0..)
                .take_while(|i| params.contains(&format!("{STRUCT_PREFIX}.mem0.slots{i}")))
                .count();
            let slots = params
                .get(&format!("{STRUCT_PREFIX}.mem0.slots0"))
                .ok_or_else(|| missing("struct.mem0.slots0"))?
                .nrows();
            (groups, slots)
        };
        let no_user = !params.contains(&format!("{USER_PREFIX}.in.w"));
        let no_fusion = !no_user && !params.contains(&format!("{FUSION_PREFIX}.w"));
        let cfg = ModelConfig {
            heads,
            head_dim,
            memory_groups,
            memory_slots,
            layers,
            ablation: Ablation {
                no_user,
                no_memory,
                no_fusion,
            },
            ..ModelConfig::default()
        };
        // Every expected tensor must be present with the expected shape.
        let reference = init_params(&cfg, 0)?;
        for (name, t) in reference.names().iter().zip(reference.tensors()) {
            let got = params.get(name).ok_or_else(|| missing(name))?;
            if got.dim() != t.dim() {
                return Err(MmenError::Shape {
                    op: "checkpoint",
                    detail: format!(
                        "tensor `{name}` is {:?}, architecture expects {:?}",
                        got.dim(),
                        t.dim()
                    ),
                });
            }
        }
        Ok(cfg)
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = (1.0 / fan_in as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Fresh parameters: weights and biases uniform in `+-sqrt(1/fan_in)`,
/// memory slots `N(0, 0.1)`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot_dist = Normal::new(0.0, 0.1).expect("valid std");
    let hidden = cfg.hidden();
    let mut p = ParamStore::new();
    for (view, in_dim) in cfg.views() {
        p.insert(format!("{view}.in.w"), uniform(&mut rng, in_dim, hidden, in_dim))?;
        p.insert(format!("{view}.in.b"), uniform(&mut rng, 1, hidden, in_dim))?;
        for l in 0..cfg.layers {
            for k in 0..cfg.heads {
                p.insert(
                    format!("{view}.gat{l}.head{k}.w"),
                    uniform(&mut rng, hidden, cfg.head_dim, hidden),
                )?;
                p.insert(
                    format!("{view}.gat{l}.head{k}.a"),
                    uniform(&mut rng, 2 * cfg.head_dim, 1, 2 * cfg.head_dim),
                )?;
            }
            if !cfg.ablation.no_memory {
                for i in 0..cfg.memory_groups {
                    let slots = Mat::from_shape_fn((cfg.memory_slots, hidden), |_| {
                        slot_dist.sample(&mut rng)
                    });
                    p.insert(format!("{view}.mem{l}.slots{i}"), slots)?;
                }
                let g = cfg.memory_groups;
                p.insert(format!("{view}.mem{l}.conv.w"), uniform(&mut rng, 1, g, g))?;
                p.insert(format!("{view}.mem{l}.conv.b"), uniform(&mut rng, 1, 1, g))?;
            }
        }
        p.insert(format!("{view}.score.w"), uniform(&mut rng, hidden, 1, hidden))?;
        p.insert(format!("{view}.score.b"), uniform(&mut rng, 1, 1, hidden))?;
    }
    if cfg.uses_fusion_head() {
        p.insert(
            format!("{FUSION_PREFIX}.w"),
            uniform(&mut rng, 2 * hidden, 2, 2 * hidden),
        )?;
        p.insert(format!("{FUSION_PREFIX}.b"), uniform(&mut rng, 1, 2, 2 * hidden))?;
    }
    Ok(p)
}

/// Everything the forward pass needs from one cascade, computed once.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub attention: AttentionGraph,
    pub user: Mat,
    pub structure: Mat,
}

impl ModelInput {
    pub fn new(g: &CascadeGraph, feats: &GraphFeatures, undirected: bool) -> Result<Self> {
        for m in [&feats.user, &feats.structure] {
            if m.rows() != g.num_nodes() {
                return Err(MmenError::Shape {
                    op: "model_input",
                    detail: format!("{} feature rows for {} nodes", m.rows(), g.num_nodes()),
                });
            }
        }
        Ok(ModelInput {
            attention: AttentionGraph::new(g, undirected),
            user: feats.user.values.clone(),
            structure: feats.structure.values.clone(),
        })
    }

    /// Featurizes `g` and prepares its attention neighbourhoods.
    pub fn prepare(g: &CascadeGraph, walk: &WalkConfig, undirected: bool) -> Result<Self> {
        let feats = features::featurize(g, walk)?;
        Self::new(g, &feats, undirected)
    }

    pub fn num_nodes(&self) -> usize {
        self.attention.num_nodes
    }
}

/// Tape handles produced by [`mmen_forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Fused scores, `N x 1`.
    pub scores: Var,
    pub s_user: Option<Var>,
    pub s_struct: Var,
    /// `(w_user, w_struct)` as `1 x 2`; absent when the user view is dropped.
    pub weights: Option<Var>,
    pub h_user: Option<Var>,
    pub h_struct: Var,
}

/// One view's stack up to (and excluding) the score head.
pub fn view_embedding(
    tape: &mut Tape,
    features: &Mat,
    params: &ParamStore,
    cfg: &ModelConfig,
    attention: &AttentionGraph,
    view: &str,
) -> Result<Var> {
    let w_name = format!("{view}.in.w");
    let w_in = params
        .get(&w_name)
        .ok_or_else(|| MmenError::Data(format!("missing parameter tensor `{w_name}`")))?;
    if w_in.nrows() != features.ncols() {
        return Err(MmenError::Shape {
            op: "input_projection",
            detail: format!(
                "tensor `{w_name}` expects {} input features, {view} view has {}",
                w_in.nrows(),
                features.ncols()
            ),
        });
    }
    let x = tape.constant(features.clone());
    let w = tape.param(params, &w_name)?;
    let b = tape.param(params, &format!("{view}.in.b"))?;
    let proj = tape.matmul(x, w)?;
    let mut h = tape.add(proj, b)?;
    for l in 0..cfg.layers {
        let g = gat_layer(
            tape,
            h,
            attention,
            params,
            &format!("{view}.gat{l}"),
            cfg.heads,
            cfg.leaky_slope,
        )?;
        h = if cfg.ablation.no_memory {
            g
        } else {
            let m = memory_read(tape, g, params, &format!("{view}.mem{l}"), cfg.memory_groups)?;
            memory_enhance(tape, g, m)?
        };
    }
    Ok(h)
}

pub fn mmen_forward(
    tape: &mut Tape,
    input: &ModelInput,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<ForwardVars> {
    let h_struct = view_embedding(
        tape,
        &input.structure,
        params,
        cfg,
        &input.attention,
        STRUCT_PREFIX,
    )?;
    let s_struct = score_head(tape, h_struct, params, &format!("{STRUCT_PREFIX}.score"))?;
    if cfg.ablation.no_user {
        return Ok(ForwardVars {
            scores: s_struct,
            s_user: None,
            s_struct,
            weights: None,
            h_user: None,
            h_struct,
        });
    }
    let h_user = view_embedding(tape, &input.user, params, cfg, &input.attention, USER_PREFIX)?;
    let s_user = score_head(tape, h_user, params, &format!("{USER_PREFIX}.score"))?;
    let weights = if cfg.ablation.no_fusion {
        layers::equal_weights(tape)
    } else {
        fusion_weights(tape, h_user, h_struct, params, FUSION_PREFIX)?
    };
    let scores = fuse_scores(tape, s_user, s_struct, weights)?;
    Ok(ForwardVars {
        scores,
        s_user: Some(s_user),
        s_struct,
        weights: Some(weights),
        h_user: Some(h_user),
        h_struct,
    })
}

/// Plain values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub scores: Vec<f64>,
    pub s_user: Option<Vec<f64>>,
    pub s_struct: Vec<f64>,
    /// `(w_user, w_struct)`; `(0, 1)` when only the structure view is used.
    pub weights: (f64, f64),
}

pub fn score_graph(input: &ModelInput, params: &ParamStore, cfg: &ModelConfig) -> Result<NodeScores> {
    let mut tape = Tape::new();
    let out = mmen_forward(&mut tape, input, params, cfg)?;
    let col = |v: Var| tape.value(v).column(0).to_vec();
    let weights = match out.weights {
        Some(w) => {
            let w = tape.value(w);
            (w[[0, 0]], w[[0, 1]])
        }
        None => (0.0, 1.0),
    };
    Ok(NodeScores {
        scores: col(out.scores),
        s_user: out.s_user.map(col),
        s_struct: col(out.s_struct),
        weights,
    })
}

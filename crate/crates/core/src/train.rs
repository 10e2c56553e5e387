//! Unsupervised coverage objective, Adam, the training loop and final
//! seed selection.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Gradients, Mat, ParamStore, Segments, Tape, Var};
use crate::error::{MmenError, Result};
use crate::features::WalkConfig;
use crate::graph::{seed_budget, CascadeGraph, SeedSet};
use crate::model::{init_params, mmen_forward, ModelConfig, ModelInput};

/// Upper clamp on a selection probability inside the log-space product.
const MAX_PROB: f64 = 1.0 - 1e-12;

/// Flattened covering sets: pair `r` says node `node[r]` lies in the
/// covering set of node `covered[r]`.
#[derive(Debug, Clone)]
pub struct CoverIndex {
    node: Arc<Vec<usize>>,
    covered: Arc<Segments>,
}

impl CoverIndex {
    pub fn new(g: &CascadeGraph, d: usize) -> Result<Self> {
        let sets = g.covering_sets(d)?;
        let mut node = Vec::new();
        let mut covered = Vec::new();
        for (v, set) in sets.iter().enumerate() {
            for &u in set {
                node.push(u);
                covered.push(v);
            }
        }
        Ok(CoverIndex {
            node: Arc::new(node),
            covered: Arc::new(Segments::new(covered, g.num_nodes())?),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.covered.count()
    }
}

/// `sum_v prod_{u in cover(v)} (1 - s_u) + lambda * sum_v s_v` for an
/// `N x 1` probability column. The products are taken in log space.
pub fn coverage_loss(tape: &mut Tape, s: Var, cover: &CoverIndex, lambda: f64) -> Result<Var> {
    let (rows, cols) = tape.shape(s);
    if rows == 0 {
        return Err(MmenError::Data("coverage loss on an empty graph".into()));
    }
    if cols != 1 || rows != cover.num_nodes() {
        return Err(MmenError::Shape {
            op: "coverage_loss",
            detail: format!("scores {rows}x{cols} for {} nodes", cover.num_nodes()),
        });
    }
    let one = tape.scalar(1.0);
    let neg = tape.scalar_mul(s, -1.0);
    let miss = tape.add(neg, one)?;
    let miss = tape.clamp_min(miss, 1.0 - MAX_PROB);
    let log_miss = tape.log(miss);
    let per_pair = tape.gather_rows(log_miss, cover.node.clone())?;
    let per_node = tape.segment_sum(per_pair, cover.covered.clone())?;
    let uncovered = tape.exp(per_node);
    let uncovered = tape.sum(uncovered);
    let seeds = tape.sum(s);
    let penalty = tape.scalar_mul(seeds, lambda);
    tape.add(uncovered, penalty)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Mat> = params
            .tensors()
            .iter()
            .map(|t| Mat::zeros(t.raw_dim()))
            .collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.tensors.len() != params.len() || state.m.len() != params.len() {
        return Err(MmenError::Shape {
            op: "adam_step",
            detail: format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.tensors.len(),
                state.m.len()
            ),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if p.dim() != g.dim() {
            return Err(MmenError::Shape {
                op: "adam_step",
                detail: format!("param {:?} vs grad {:?}", p.dim(), g.dim()),
            });
        }
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub d_cover: usize,
    pub patience: usize,
    pub seed_fraction: f64,
    pub rng_seed: u64,
    pub model: ModelConfig,
    pub walk: WalkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2,
            epochs: 50,
            lr: 5e-4,
            lambda: 1.0,
            d_cover: 1,
            patience: 10,
            seed_fraction: 0.05,
            rng_seed: 0,
            model: ModelConfig::default(),
            walk: WalkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MmenError::InvalidParam(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return bad(format!("seed fraction must be in (0, 1], got {}", self.seed_fraction));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.d_cover == 0 {
            return bad("batch_size, epochs and d_cover must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        self.model.validate()
    }
}

/// A cascade prepared for training: model inputs plus covering sets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: ModelInput,
    pub cover: CoverIndex,
}

impl TrainSample {
    pub fn prepare(g: &CascadeGraph, cfg: &TrainConfig) -> Result<Self> {
        Ok(TrainSample {
            input: ModelInput::prepare(g, &cfg.walk, cfg.model.undirected)?,
            cover: CoverIndex::new(g, cfg.d_cover)?,
        })
    }
}

fn numeric_failure(tape: &Tape, what: &str) -> MmenError {
    match tape.first_non_finite() {
        Some((idx, op)) => MmenError::Numeric(format!(
            "non-finite {what}; first non-finite value produced by op `{op}` (tape node {idx})"
        )),
        None => MmenError::Numeric(format!("non-finite {what}")),
    }
}

/// Loss of one sample under `params`, optionally with gradients.
pub fn sample_loss(
    sample: &TrainSample,
    params: &ParamStore,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    let mut tape = Tape::new();
    let out = mmen_forward(&mut tape, &sample.input, params, &cfg.model)?;
    let loss = coverage_loss(&mut tape, out.scores, &sample.cover, cfg.lambda)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(numeric_failure(&tape, "loss"));
    }
    let grads = if with_grad {
        let g = tape.backward(loss, params)?;
        if g.tensors.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(MmenError::Numeric("non-finite gradient".into()));
        }
        Some(g)
    } else {
        None
    };
    Ok((value, grads))
}

fn mean_loss(samples: &[TrainSample], params: &ParamStore, cfg: &TrainConfig) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| sample_loss(s, params, cfg, false).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-graph loss over the epoch's batches, before each update.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:.9},{:.9}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| MmenError::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: TrainHistory,
}

pub fn train(
    train_graphs: &[CascadeGraph],
    val_graphs: &[CascadeGraph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let prep = |gs: &[CascadeGraph]| -> Result<Vec<TrainSample>> {
        gs.par_iter().map(|g| TrainSample::prepare(g, cfg)).collect()
    };
    train_prepared(&prep(train_graphs)?, &prep(val_graphs)?, cfg)
}

/// Training on already prepared samples. Batches are visited in a seeded
/// shuffled order; per-batch gradients are summed in batch order.
pub fn train_prepared(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(MmenError::InvalidParam(
            "training needs at least one training and one validation graph".into(),
        ));
    }
    let mut params = init_params(&cfg.model, cfg.rng_seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(1);

    let initial_train_loss = mean_loss(train_set, &params, cfg)?;
    let initial_val_loss = mean_loss(val_set, &params, cfg)?;
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Option<Gradients>)> = batch
                .par_iter()
                .map(|&i| sample_loss(&train_set[i], &params, cfg, true))
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(&params);
            for (loss, g) in &results {
                epoch_loss += loss;
                grads.accumulate(g.as_ref().expect("requested"));
            }
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
        }
        let val_loss = mean_loss(val_set, &params, cfg)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        history: TrainHistory {
            initial_train_loss,
            initial_val_loss,
            epochs,
            best_epoch,
            best_val_loss: best_val,
        },
    })
}

/// Top `ceil(fraction * N)` nodes by score, ties to the smaller id.
pub fn select_seeds(scores: &[f64], fraction: f64) -> Result<SeedSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MmenError::InvalidParam(format!(
            "seed fraction must be in (0, 1], got {fraction}"
        )));
    }
    if scores.is_empty() {
        return Err(MmenError::Data("no scores to select from".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MmenError::Numeric("NaN node score".into()));
    }
    let k = seed_budget(scores.len(), fraction);
    Ok(SeedSet {
        members: top_k(scores, k),
        fraction,
    })
}

/// Indices of the `k` largest scores, ties to the smaller index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

//! The individual building blocks of the forward pass. Each one records
//! onto the caller's tape and reads its weights from a [`ParamStore`] under
//! a name prefix.

use std::sync::Arc;

use crate::autodiff::{Mat, ParamStore, Segments, Tape, Var};
use crate::error::Result;
use crate::graph::CascadeGraph;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Attention neighbourhoods of a graph: every node attends to itself and
/// to its in-neighbours (both directions when undirected). Pairs are
/// stored per attention edge `(center, neighbour)` and segmented by center.
#[derive(Debug, Clone)]
pub struct AttentionGraph {
    pub num_nodes: usize,
    pub center: Arc<Vec<usize>>,
    pub neighbor: Arc<Vec<usize>>,
    pub segments: Arc<Segments>,
}

impl AttentionGraph {
    pub fn new(g: &CascadeGraph, undirected: bool) -> Self {
        let n = g.num_nodes();
        let mut center = Vec::with_capacity(n + 2 * g.num_edges());
        let mut neighbor = Vec::with_capacity(center.capacity());
        for i in 0..n {
            center.push(i);
            neighbor.push(i);
            let nb: Vec<usize> = if undirected {
                g.undirected_neighbors(i)
            } else {
                g.in_neighbors(i).to_vec()
            };
            for j in nb {
                center.push(i);
                neighbor.push(j);
            }
        }
        let segments = Segments::new(center.clone(), n).expect("centers are node ids");
        AttentionGraph {
            num_nodes: n,
            center: Arc::new(center),
            neighbor: Arc::new(neighbor),
            segments: Arc::new(segments),
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.center.len()
    }
}

/// One multi-head graph attention layer. Head `k` reads `{prefix}.head{k}.w`
/// (`F_in x F_head`) and `{prefix}.head{k}.a` (`2 F_head x 1`):
///
/// `e_ij = leaky_relu(a . [W h_i || W h_j])`, `alpha_ij = softmax_j(e_ij)`,
/// `h'_i = elu(sum_j alpha_ij W h_j)`, heads concatenated.
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    graph: &AttentionGraph,
    params: &ParamStore,
    prefix: &str,
    heads: usize,
    slope: f64,
) -> Result<Var> {
    let mut outs = Vec::with_capacity(heads);
    for k in 0..heads {
        let w = tape.param(params, &format!("{prefix}.head{k}.w"))?;
        let a = tape.param(params, &format!("{prefix}.head{k}.a"))?;
        let wh = tape.matmul(h, w)?;
        let wh_center = tape.gather_rows(wh, graph.center.clone())?;
        let wh_nb = tape.gather_rows(wh, graph.neighbor.clone())?;
        let pair = tape.concat(&[wh_center, wh_nb])?;
        let logits = tape.matmul(pair, a)?;
        let logits = tape.leaky_relu(logits, slope);
        let alpha = tape.segment_softmax(logits, graph.segments.clone())?;
        let msg = tape.mul(wh_nb, alpha)?;
        let agg = tape.segment_sum(msg, graph.segments.clone())?;
        outs.push(tape.elu(agg));
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat(&outs)
    }
}

/// Soft lookup into `groups` memory matrices `{prefix}.slots{i}` (`b x L`),
/// mixed by a kernel-1 convolution over groups with weights
/// `{prefix}.conv.w` (`1 x groups`) and bias `{prefix}.conv.b` (`1 x 1`).
pub fn memory_read(
    tape: &mut Tape,
    h: Var,
    params: &ParamStore,
    prefix: &str,
    groups: usize,
) -> Result<Var> {
    let conv_w = tape.param(params, &format!("{prefix}.conv.w"))?;
    let conv_b = tape.param(params, &format!("{prefix}.conv.b"))?;
    let mut mixed: Option<Var> = None;
    for i in 0..groups {
        let slots = tape.param(params, &format!("{prefix}.slots{i}"))?;
        let slots_t = tape.transpose(slots);
        let sim = tape.matmul(h, slots_t)?;
        let p = tape.row_softmax(sim);
        let read = tape.matmul(p, slots)?;
        let c = tape.slice_cols(conv_w, i, 1)?;
        let term = tape.mul(read, c)?;
        mixed = Some(match mixed {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let mixed = mixed.expect("at least one memory group");
    tape.add(mixed, conv_b)
}

/// `relu(layer_norm(h + memory))`.
pub fn memory_enhance(tape: &mut Tape, h: Var, memory: Var) -> Result<Var> {
    let sum = tape.add(h, memory)?;
    let ln = tape.layer_norm(sum, LAYER_NORM_EPS);
    Ok(tape.relu(ln))
}

/// Per-node influence probability `sigmoid(F w + b)`, returned as `N x 1`.
pub fn score_head(tape: &mut Tape, features: Var, params: &ParamStore, prefix: &str) -> Result<Var> {
    let w = tape.param(params, &format!("{prefix}.w"))?;
    let b = tape.param(params, &format!("{prefix}.b"))?;
    let z = tape.matmul(features, w)?;
    let z = tape.add(z, b)?;
    Ok(tape.sigmoid(z))
}

/// View weights `softmax(W [mean(h_user) || mean(h_struct)] + b)` as a
/// `1 x 2` row `(w_user, w_struct)`.
pub fn fusion_weights(
    tape: &mut Tape,
    h_user: Var,
    h_struct: Var,
    params: &ParamStore,
    prefix: &str,
) -> Result<Var> {
    let w = tape.param(params, &format!("{prefix}.w"))?;
    let b = tape.param(params, &format!("{prefix}.b"))?;
    let mu = tape.mean_rows(h_user);
    let ms = tape.mean_rows(h_struct);
    let pooled = tape.concat(&[mu, ms])?;
    let logits = tape.matmul(pooled, w)?;
    let logits = tape.add(logits, b)?;
    Ok(tape.row_softmax(logits))
}

/// `w_user * s_user + w_struct * s_struct` for a `1 x 2` weight row.
pub fn fuse_scores(tape: &mut Tape, s_user: Var, s_struct: Var, weights: Var) -> Result<Var> {
    let wu = tape.slice_cols(weights, 0, 1)?;
    let ws = tape.slice_cols(weights, 1, 1)?;
    let a = tape.mul(s_user, wu)?;
    let b = tape.mul(s_struct, ws)?;
    tape.add(a, b)
}

/// Constant `(0.5, 0.5)` weights for the fixed-fusion ablation.
pub fn equal_weights(tape: &mut Tape) -> Var {
    tape.constant(Mat::from_elem((1, 2), 0.5))
}

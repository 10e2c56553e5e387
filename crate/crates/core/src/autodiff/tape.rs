//! Eager forward, taped reverse sweep over dense 2-D `f64` tensors.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParamStore;
use crate::error::{MmenError, Result};

pub type Mat = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-to-segment assignment for the sparse ops: row `r` of the input
/// belongs to segment `ids[r]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    ids: Vec<usize>,
    count: usize,
}

impl Segments {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= count) {
            return Err(MmenError::Shape {
                op: "segments",
                detail: format!("segment id {bad} >= segment count {count}"),
            });
        }
        Ok(Segments { ids, count })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    LeakyRelu(Var, f64),
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Arc<Segments>),
    SegmentSum(Var, Arc<Segments>),
    LayerNorm(Var, f64),
    MeanRows(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::ScalarMul(..) => "scalar_mul",
            Op::Concat(_) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Elu(_) => "elu",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::ClampMin(..) => "clamp_min",
            Op::RowSoftmax(_) => "row_softmax",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SegmentSum(..) => "segment_sum",
            Op::LayerNorm(..) => "layer_norm",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Mat,
}

/// Per-parameter gradients, aligned with the [`ParamStore`] used to build
/// the tape. Parameters that did not reach the loss get zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Mat>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            tensors: store
                .tensors()
                .iter()
                .map(|t| Mat::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, store: &ParamStore, name: &str) -> Option<&Mat> {
        store.id(name).map(|i| &self.tensors[i])
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Row-broadcast rule shared by `add` and `mul`: `b` matches `a`, is a
/// single row of matching width, a single column of matching height, or
/// is 1x1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &Mat, b: &Mat) -> Result<Broadcast> {
    let (ar, ac) = a.dim();
    match b.dim() {
        (r, c) if r == ar && c == ac => Ok(Broadcast::Same),
        (1, 1) => Ok(Broadcast::Scalar),
        (1, c) if c == ac => Ok(Broadcast::Row),
        (r, 1) if r == ar => Ok(Broadcast::Col),
        (r, c) => Err(MmenError::Shape {
            op,
            detail: format!("{ar}x{ac} vs {r}x{c}"),
        }),
    }
}

/// Sum `g` down to the shape of the broadcast operand.
fn reduce_to(kind: Broadcast, g: &Mat) -> Mat {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Row => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
        Broadcast::Col => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
        Broadcast::Scalar => Mat::from_elem((1, 1), g.sum()),
    }
}

fn broadcast_view<'a>(kind: Broadcast, b: &'a Mat, shape: (usize, usize)) -> ndarray::ArrayView2<'a, f64> {
    match kind {
        Broadcast::Same => b.view(),
        _ => b.broadcast(shape).expect("checked by broadcast_kind"),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), x))
    }

    /// Records the named parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| MmenError::Data(format!("missing parameter tensor `{name}`")))?;
        Ok(self.push(Op::Param(id), store.tensors()[id].clone()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(MmenError::Shape {
                op: "matmul",
                detail: format!(
                    "({}x{}) . ({}x{})",
                    x.nrows(),
                    x.ncols(),
                    y.nrows(),
                    y.ncols()
                ),
            });
        }
        let out = x.dot(y);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let kind = broadcast_kind("add", x, y)?;
        let out = x + &broadcast_view(kind, y, x.dim());
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let kind = broadcast_kind("mul", x, y)?;
        let out = x * &broadcast_view(kind, y, x.dim());
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(Op::ScalarMul(a, c), out)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(MmenError::Shape {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let rows = self.value(parts[0]).nrows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).nrows() != rows) {
            return Err(MmenError::Shape {
                op: "concat",
                detail: format!("{} rows vs {} rows", rows, self.value(*bad).nrows()),
            });
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.ncols() || len == 0 {
            return Err(MmenError::Shape {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {}", start + len, x.ncols()),
            });
        }
        let out = x.slice(s![.., start..start + len]).to_owned();
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&r| r >= x.nrows()) {
            return Err(MmenError::Shape {
                op: "gather_rows",
                detail: format!("row {bad} of {}", x.nrows()),
            });
        }
        let out = x.select(Axis(0), &index);
        Ok(self.push(Op::GatherRows(a, index), out))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), out)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(Op::Elu(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        self.push(Op::Log(a), out)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).mapv(|x| x.max(floor));
        self.push(Op::ClampMin(a, floor), out)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        self.push(Op::RowSoftmax(a), out)
    }

    /// Softmax over the rows sharing a segment, independently per column.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        let x = self.value(a);
        if x.nrows() != seg.len() {
            return Err(MmenError::Shape {
                op: "segment_softmax",
                detail: format!("{} rows vs {} segment ids", x.nrows(), seg.len()),
            });
        }
        let cols = x.ncols();
        let mut max = Mat::from_elem((seg.count(), cols), f64::NEG_INFINITY);
        for (r, &s) in seg.ids().iter().enumerate() {
            for c in 0..cols {
                max[[s, c]] = max[[s, c]].max(x[[r, c]]);
            }
        }
        let mut out = Mat::zeros(x.raw_dim());
        let mut total = Mat::zeros((seg.count(), cols));
        for (r, &s) in seg.ids().iter().enumerate() {
            for c in 0..cols {
                let e = (x[[r, c]] - max[[s, c]]).exp();
                out[[r, c]] = e;
                total[[s, c]] += e;
            }
        }
        for (r, &s) in seg.ids().iter().enumerate() {
            for c in 0..cols {
                out[[r, c]] /= total[[s, c]];
            }
        }
        Ok(self.push(Op::SegmentSoftmax(a, seg), out))
    }

    /// Sums the rows of each segment: `(rows x C) -> (segments x C)`.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<Segments>) -> Result<Var> {
        let x = self.value(a);
        if x.nrows() != seg.len() {
            return Err(MmenError::Shape {
                op: "segment_sum",
                detail: format!("{} rows vs {} segment ids", x.nrows(), seg.len()),
            });
        }
        let mut out = Mat::zeros((seg.count(), x.ncols()));
        for (r, &s) in seg.ids().iter().enumerate() {
            let mut dst = out.row_mut(s);
            dst += &x.row(r);
        }
        Ok(self.push(Op::SegmentSum(a, seg), out))
    }

    /// Per-row normalization to zero mean and unit variance, without an
    /// affine transform.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.ncols() as f64;
        for mut row in out.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(Op::LayerNorm(a, eps), out)
    }

    /// Column means as a `1 x C` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = (x.sum_axis(Axis(0)) / x.nrows() as f64).insert_axis(Axis(0));
        self.push(Op::MeanRows(a), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Name and position of the first recorded op whose output is not finite.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|x| !x.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Which side of its kink every piecewise op input sits on (-1, 0, +1).
    /// Finite differences are only trusted where this pattern is unchanged.
    pub fn kink_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            let (input, at) = match node.op {
                Op::LeakyRelu(a, _) | Op::Relu(a) => (a, 0.0),
                Op::ClampMin(a, floor) => (a, floor),
                _ => continue,
            };
            sig.extend(self.value(input).iter().map(|&x| {
                if x > at {
                    1
                } else if x < at {
                    -1
                } else {
                    0
                }
            }));
        }
        sig
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(MmenError::Shape {
                op: "backward",
                detail: format!("loss must be 1x1, got {r}x{c}"),
            });
        }
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Gradients::zeros_like(store);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = out.tensors.get_mut(*id).ok_or_else(|| {
                        MmenError::Data(format!("tape parameter {id} not in store"))
                    })?;
                    *slot += &g;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    let kind = broadcast_kind("add", self.value(*a), self.value(*b))?;
                    acc(&mut grads, *b, reduce_to(kind, &g));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, z) = (self.value(*a), self.value(*b));
                    let kind = broadcast_kind("mul", x, z)?;
                    let ga = &g * &broadcast_view(kind, z, x.dim());
                    let gb = reduce_to(kind, &(&g * x));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::ScalarMul(a, c) => acc(&mut grads, *a, g * *c),
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, index) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (r, &src) in index.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    // Subgradient at 0 is the slope.
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g *= slope
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Elu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g *= x.exp()
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g = 0.0
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &s| *g *= s * (1.0 - s));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => acc(&mut grads, *a, g * y),
                Op::Log(a) => acc(&mut grads, *a, g / self.value(*a)),
                Op::ClampMin(a, floor) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x < *floor {
                                *g = 0.0
                            }
                        });
                    acc(&mut grads, *a, ga);
                }
                Op::RowSoftmax(a) => {
                    let mut ga = g;
                    for (mut gr, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = gr.dot(&yr);
                        Zip::from(&mut gr).and(&yr).for_each(|g, &p| *g = p * (*g - dot));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSoftmax(a, seg) => {
                    let cols = y.ncols();
                    let mut dot = Mat::zeros((seg.count(), cols));
                    for (r, &s) in seg.ids().iter().enumerate() {
                        for c in 0..cols {
                            dot[[s, c]] += g[[r, c]] * y[[r, c]];
                        }
                    }
                    let mut ga = g;
                    for (r, &s) in seg.ids().iter().enumerate() {
                        for c in 0..cols {
                            ga[[r, c]] = y[[r, c]] * (ga[[r, c]] - dot[[s, c]]);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSum(a, seg) => {
                    let ga = g.select(Axis(0), seg.ids());
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, eps) => {
                    let x = self.value(*a);
                    let cols = x.ncols() as f64;
                    let mut ga = g;
                    for ((mut gr, yr), xr) in ga.rows_mut().into_iter().zip(y.rows()).zip(x.rows()) {
                        let mean = xr.sum() / cols;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = gr.sum() / cols;
                        let gy_mean = gr.dot(&yr) / cols;
                        Zip::from(&mut gr)
                            .and(&yr)
                            .for_each(|g, &yv| *g = inv * (*g - g_mean - yv * gy_mean));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    let ga = g
                        .broadcast((rows, g.ncols()))
                        .expect("1 x C row")
                        .mapv(|v| v / rows as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

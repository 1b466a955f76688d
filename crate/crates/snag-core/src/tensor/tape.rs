//! Arena tape for reverse-mode differentiation.
//!
//! Every op appends one node holding its output value and a backward rule
//! referencing its input handles. The arena is topologically ordered by
//! construction, so `backward` is a single reverse sweep. Gradient buffers are
//! allocated lazily: only nodes flagged `needs_grad` (parameters and anything
//! computed from them) ever receive one.
//!
//! All op outputs are checked finite; a NaN/Inf result turns into
//! [`TensorError::NonFinite`] at the op that produced it, so divergence is
//! caught where it happens rather than at the loss.

use std::sync::Arc;

use rand::Rng;

use super::{numel_of, Tensor, TensorError};

/// Handle to a tape node. Valid only for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Rule {
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Maximum { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    MulRowVec { x: Var, row: Var },
    ScaleRows { x: Var, col: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Relu { x: Var },
    Elu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    RowSoftmax { x: Var },
    RowLogSoftmax { x: Var },
    SegmentSum { x: Var, seg: Arc<Vec<usize>> },
    SegmentMean { x: Var, seg: Arc<Vec<usize>> },
    /// `argmax[s*d+j]` is the input row that won segment `s`, column `j`
    /// (`usize::MAX` for empty segments).
    SegmentMax { x: Var, argmax: Vec<usize> },
    SegmentSoftmax { x: Var, seg: Arc<Vec<usize>>, num_segments: usize },
    GatherRows { x: Var, idx: Arc<Vec<usize>> },
    /// Mask entries are the applied multipliers: 0 or 1/(1-rate).
    Dropout { x: Var, mask: Vec<f64> },
    SumAll { x: Var },
    MeanAll { x: Var },
    /// Saved `probs` are softmax rows for the masked nodes, in `rows` order.
    MaskedSoftmaxCe { logits: Var, labels: Vec<usize>, rows: Vec<usize>, probs: Vec<f64> },
    MaskedSigmoidBce { logits: Var, targets: Arc<Vec<f64>>, rows: Vec<usize> },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    needs_grad: bool,
    rule: Option<Rule>,
}

/// Append-only computation tape. One tape per forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    training: bool,
}

impl Tape {
    /// `training` gates dropout; everything else is identical in both modes.
    pub fn new(training: bool) -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), training }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies a tensor onto the tape as a leaf. Parameters keep their
    /// `requires_grad` flag; backward leaves a gradient here to harvest.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        self.push_unchecked(t.shape().to_vec(), t.data().to_vec(), needs, None)
    }

    /// Non-differentiable constant from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, TensorError> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.push_unchecked(t.shape().to_vec(), t.data().to_vec(), false, None))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last `backward`, if this node got one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).filter(|g| !g.is_empty()).map(|g| g.as_slice())
    }

    /// Gradient for a parameter leaf; zeros when backward never reached it.
    pub fn harvest_grad(&self, v: Var) -> Vec<f64> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::from_vec(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("tape nodes hold valid tensors")
    }

    fn push_unchecked(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool, rule: Option<Rule>) -> Var {
        debug_assert_eq!(numel_of(&shape), value.len());
        self.nodes.push(Node { shape, value, needs_grad, rule });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op node, failing if the computed value is not finite.
    fn push_op(
        &mut self,
        op: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        inputs: &[Var],
        rule: Rule,
    ) -> Result<Var, TensorError> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_unchecked(shape, value, needs, Some(rule)))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match self.nodes[v.0].shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::BadShape {
                op,
                expected: "a 2-D tensor",
                actual: self.nodes[v.0].shape.clone(),
            }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    // ---- linear algebra ----

    /// `a [m,k] @ b [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, ka) = self.dims2("matmul", a)?;
        let (kb, n) = self.dims2("matmul", b)?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn_acc(&mut out, &self.nodes[a.0].value, &self.nodes[b.0].value, m, ka, n);
        self.push_op("matmul", vec![m, n], out, &[a, b], Rule::Matmul { a, b })
    }

    // ---- elementwise binary ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push_op("add", self.nodes[a.0].shape.clone(), value, &[a, b], Rule::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push_op("sub", self.nodes[a.0].shape.clone(), value, &[a, b], Rule::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push_op("mul", self.nodes[a.0].shape.clone(), value, &[a, b], Rule::Mul { a, b })
    }

    /// Elementwise max; on ties the gradient flows to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("maximum", a, b)?;
        let value = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| if x >= y { x } else { y });
        self.push_op("maximum", self.nodes[a.0].shape.clone(), value, &[a, b], Rule::Maximum { a, b })
    }

    // ---- broadcast binary ----

    /// `x [r,c] + bias [1,c]`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("add_bias", x)?;
        let (br, bc) = self.dims2("add_bias", bias)?;
        if br != 1 || bc != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: vec![r, c],
                rhs: vec![br, bc],
            });
        }
        let bv = &self.nodes[bias.0].value;
        let mut value = self.nodes[x.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] += bv[j];
            }
        }
        self.push_op("add_bias", vec![r, c], value, &[x, bias], Rule::AddBias { x, bias })
    }

    /// `x [r,c] * row [1,c]`, broadcast over rows.
    pub fn mul_row_vec(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("mul_row_vec", x)?;
        let (br, bc) = self.dims2("mul_row_vec", row)?;
        if br != 1 || bc != c {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row_vec",
                lhs: vec![r, c],
                rhs: vec![br, bc],
            });
        }
        let rv = &self.nodes[row.0].value;
        let mut value = self.nodes[x.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] *= rv[j];
            }
        }
        self.push_op("mul_row_vec", vec![r, c], value, &[x, row], Rule::MulRowVec { x, row })
    }

    /// `x [r,c] * col [r,1]`, broadcast over columns: row i scaled by col[i].
    pub fn scale_rows(&mut self, x: Var, col: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("scale_rows", x)?;
        let (cr, cc) = self.dims2("scale_rows", col)?;
        if cr != r || cc != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: vec![r, c],
                rhs: vec![cr, cc],
            });
        }
        let cv = &self.nodes[col.0].value;
        let mut value = self.nodes[x.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] *= cv[i];
            }
        }
        self.push_op("scale_rows", vec![r, c], value, &[x, col], Rule::ScaleRows { x, col })
    }

    // ---- scalar-argument unary ----

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push_op("scale", self.nodes[x.0].shape.clone(), value, &[x], Rule::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|v| v + c).collect();
        self.push_op("add_scalar", self.nodes[x.0].shape.clone(), value, &[x], Rule::AddScalar { x })
    }

    // ---- activations ----

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.push_op("relu", self.nodes[x.0].shape.clone(), value, &[x], Rule::Relu { x })
    }

    /// ELU with alpha = 1: `x` for positive inputs, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }).collect();
        self.push_op("elu", self.nodes[x.0].shape.clone(), value, &[x], Rule::Elu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        if !(slope.is_finite() && slope >= 0.0) {
            return Err(TensorError::InvalidArg {
                op: "leaky_relu",
                msg: format!("slope must be finite and non-negative, got {slope}"),
            });
        }
        let value = self.nodes[x.0].value.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        self.push_op("leaky_relu", self.nodes[x.0].shape.clone(), value, &[x], Rule::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push_op("tanh", self.nodes[x.0].shape.clone(), value, &[x], Rule::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|&v| sigmoid(v)).collect();
        self.push_op("sigmoid", self.nodes[x.0].shape.clone(), value, &[x], Rule::Sigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.iter().map(|v| v.exp()).collect();
        self.push_op("exp", self.nodes[x.0].shape.clone(), value, &[x], Rule::Exp { x })
    }

    /// Natural log; any input <= 0 is a `NonFinite` error.
    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        let value: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.ln()).collect();
        self.push_op("log", self.nodes[x.0].shape.clone(), value, &[x], Rule::Log { x })
    }

    // ---- structure ----

    /// Concatenates 2-D tensors along `axis` (0 stacks rows, 1 widens rows).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::InvalidArg { op: "concat", msg: "no inputs".into() });
        }
        if axis > 1 {
            return Err(TensorError::InvalidArg { op: "concat", msg: format!("axis must be 0 or 1, got {axis}") });
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| self.dims2("concat", v))
            .collect::<Result<_, _>>()?;
        let (r0, c0) = dims[0];
        let (rows, cols);
        if axis == 0 {
            if dims.iter().any(|&(_, c)| c != c0) {
                return Err(TensorError::InvalidArg { op: "concat", msg: "column counts differ".into() });
            }
            rows = dims.iter().map(|&(r, _)| r).sum();
            cols = c0;
        } else {
            if dims.iter().any(|&(r, _)| r != r0) {
                return Err(TensorError::InvalidArg { op: "concat", msg: "row counts differ".into() });
            }
            rows = r0;
            cols = dims.iter().map(|&(_, c)| c).sum();
        }
        let mut value = vec![0.0; rows * cols];
        if axis == 0 {
            let mut at = 0;
            for &v in inputs {
                let src = &self.nodes[v.0].value;
                value[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        } else {
            for i in 0..rows {
                let mut at = 0;
                for (&v, &(_, c)) in inputs.iter().zip(&dims) {
                    let src = &self.nodes[v.0].value[i * c..(i + 1) * c];
                    value[i * cols + at..i * cols + at + c].copy_from_slice(src);
                    at += c;
                }
            }
        }
        self.push_op("concat", vec![rows, cols], value, inputs, Rule::Concat { inputs: inputs.to_vec(), axis })
    }

    /// Row index lookup: out[m] = x[idx[m]]. Indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>) -> Result<Var, TensorError> {
        let (n, d) = self.dims2("gather_rows", x)?;
        if idx.is_empty() {
            return Err(TensorError::InvalidArg { op: "gather_rows", msg: "empty index list".into() });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::InvalidArg {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {n} rows"),
            });
        }
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; idx.len() * d];
        for (m, &i) in idx.iter().enumerate() {
            value[m * d..(m + 1) * d].copy_from_slice(&xv[i * d..(i + 1) * d]);
        }
        self.push_op("gather_rows", vec![idx.len(), d], value, &[x], Rule::GatherRows { x, idx: Arc::clone(idx) })
    }

    // ---- row reductions ----

    pub fn row_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("row_softmax", x)?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                value[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                value[i * c + j] /= sum;
            }
        }
        self.push_op("row_softmax", vec![r, c], value, &[x], Rule::RowSoftmax { x })
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims2("row_log_softmax", x)?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                value[i * c + j] = row[j] - lse;
            }
        }
        self.push_op("row_log_softmax", vec![r, c], value, &[x], Rule::RowLogSoftmax { x })
    }

    // ---- segment reductions ----
    //
    // `seg[e]` maps input row e to its output segment. Segment ids must be
    // < num_segments; rows of empty segments are zero.

    fn check_segments(
        &self,
        op: &'static str,
        x: Var,
        seg: &[usize],
        num_segments: usize,
    ) -> Result<(usize, usize), TensorError> {
        let (e, d) = self.dims2(op, x)?;
        if seg.len() != e {
            return Err(TensorError::InvalidArg {
                op,
                msg: format!("segment list has {} entries for {} rows", seg.len(), e),
            });
        }
        if num_segments == 0 {
            return Err(TensorError::InvalidArg { op, msg: "num_segments is zero".into() });
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= num_segments) {
            return Err(TensorError::InvalidArg {
                op,
                msg: format!("segment id {bad} out of range for {num_segments} segments"),
            });
        }
        Ok((e, d))
    }

    pub fn segment_sum(&mut self, x: Var, seg: &Arc<Vec<usize>>, num_segments: usize) -> Result<Var, TensorError> {
        let (e, d) = self.check_segments("segment_sum", x, seg, num_segments)?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; num_segments * d];
        for r in 0..e {
            let s = seg[r];
            for j in 0..d {
                value[s * d + j] += xv[r * d + j];
            }
        }
        self.push_op("segment_sum", vec![num_segments, d], value, &[x], Rule::SegmentSum { x, seg: Arc::clone(seg) })
    }

    pub fn segment_mean(&mut self, x: Var, seg: &Arc<Vec<usize>>, num_segments: usize) -> Result<Var, TensorError> {
        let (e, d) = self.check_segments("segment_mean", x, seg, num_segments)?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; num_segments * d];
        let mut counts = vec![0usize; num_segments];
        for r in 0..e {
            let s = seg[r];
            counts[s] += 1;
            for j in 0..d {
                value[s * d + j] += xv[r * d + j];
            }
        }
        for s in 0..num_segments {
            if counts[s] > 0 {
                let inv = 1.0 / counts[s] as f64;
                for j in 0..d {
                    value[s * d + j] *= inv;
                }
            }
        }
        self.push_op("segment_mean", vec![num_segments, d], value, &[x], Rule::SegmentMean { x, seg: Arc::clone(seg) })
    }

    pub fn segment_max(&mut self, x: Var, seg: &Arc<Vec<usize>>, num_segments: usize) -> Result<Var, TensorError> {
        let (e, d) = self.check_segments("segment_max", x, seg, num_segments)?;
        let xv = &self.nodes[x.0].value;
        let mut value = vec![0.0; num_segments * d];
        let mut argmax = vec![usize::MAX; num_segments * d];
        for r in 0..e {
            let s = seg[r];
            for j in 0..d {
                let v = xv[r * d + j];
                // First row of a segment always wins; later rows only on strict
                // improvement, so ties resolve to the earliest input row.
                if argmax[s * d + j] == usize::MAX || v > value[s * d + j] {
                    value[s * d + j] = v;
                    argmax[s * d + j] = r;
                }
            }
        }
        for s in 0..num_segments * d {
            if argmax[s] == usize::MAX {
                value[s] = 0.0;
            }
        }
        self.push_op("segment_max", vec![num_segments, d], value, &[x], Rule::SegmentMax { x, argmax })
    }

    /// Softmax within each segment, per column. Rows of empty segments stay
    /// empty (they do not exist in the output-by-construction sense: output
    /// has the same shape as the input).
    pub fn segment_softmax(&mut self, x: Var, seg: &Arc<Vec<usize>>, num_segments: usize) -> Result<Var, TensorError> {
        let (e, d) = self.check_segments("segment_softmax", x, seg, num_segments)?;
        let xv = &self.nodes[x.0].value;
        let mut maxes = vec![f64::NEG_INFINITY; num_segments * d];
        for r in 0..e {
            let s = seg[r];
            for j in 0..d {
                maxes[s * d + j] = maxes[s * d + j].max(xv[r * d + j]);
            }
        }
        let mut value = vec![0.0; e * d];
        let mut sums = vec![0.0; num_segments * d];
        for r in 0..e {
            let s = seg[r];
            for j in 0..d {
                let v = (xv[r * d + j] - maxes[s * d + j]).exp();
                value[r * d + j] = v;
                sums[s * d + j] += v;
            }
        }
        for r in 0..e {
            let s = seg[r];
            for j in 0..d {
                value[r * d + j] /= sums[s * d + j];
            }
        }
        self.push_op(
            "segment_softmax",
            vec![e, d],
            value,
            &[x],
            Rule::SegmentSoftmax { x, seg: Arc::clone(seg), num_segments },
        )
    }

    // ---- regularization ----

    /// Inverted dropout: keeps scale 1/(1-rate) in training, identity in eval
    /// mode or when rate is 0 (returns `x` itself, bit-exact).
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArg {
                op: "dropout",
                msg: format!("rate must be in [0, 1), got {rate}"),
            });
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let value = zip_map(&self.nodes[x.0].value, &mask, |v, m| v * m);
        self.push_op("dropout", self.nodes[x.0].shape.clone(), value, &[x], Rule::Dropout { x, mask })
    }

    // ---- full reductions ----

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = vec![self.nodes[x.0].value.iter().sum()];
        self.push_op("sum_all", vec![1], value, &[x], Rule::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.nodes[x.0].value.len() as f64;
        let value = vec![self.nodes[x.0].value.iter().sum::<f64>() / n];
        self.push_op("mean_all", vec![1], value, &[x], Rule::MeanAll { x })
    }

    // ---- fused losses ----

    /// Mean cross-entropy over masked rows of `logits [n, c]` against integer
    /// labels, computed via a stable log-sum-exp. Needs at least one masked row.
    pub fn masked_softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        let (n, c) = self.dims2("masked_softmax_cross_entropy", logits)?;
        if labels.len() != n || mask.len() != n {
            return Err(TensorError::InvalidArg {
                op: "masked_softmax_cross_entropy",
                msg: format!("logits have {} rows, labels {} and mask {}", n, labels.len(), mask.len()),
            });
        }
        let rows: Vec<usize> = (0..n).filter(|&v| mask[v]).collect();
        if rows.is_empty() {
            return Err(TensorError::InvalidArg {
                op: "masked_softmax_cross_entropy",
                msg: "mask selects no rows".into(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&v| labels[v] >= c) {
            return Err(TensorError::InvalidArg {
                op: "masked_softmax_cross_entropy",
                msg: format!("label {} out of range for {} classes", labels[bad], c),
            });
        }
        let lv = &self.nodes[logits.0].value;
        let mut probs = vec![0.0; rows.len() * c];
        let mut total = 0.0;
        for (m, &v) in rows.iter().enumerate() {
            let row = &lv[v * c..(v + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[m * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                probs[m * c + j] /= sum;
            }
            total += mx + sum.ln() - row[labels[v]];
        }
        let value = vec![total / rows.len() as f64];
        let labels = labels.to_vec();
        self.push_op(
            "masked_softmax_cross_entropy",
            vec![1],
            value,
            &[logits],
            Rule::MaskedSoftmaxCe { logits, labels, rows, probs },
        )
    }

    /// Mean binary cross-entropy with logits over masked rows and all classes,
    /// computed via the stable softplus form. `targets` is a flat `[n, c]`
    /// 0/1 array matching the logits.
    pub fn masked_sigmoid_bce(
        &mut self,
        logits: Var,
        targets: &Arc<Vec<f64>>,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        let (n, c) = self.dims2("masked_sigmoid_bce", logits)?;
        if targets.len() != n * c || mask.len() != n {
            return Err(TensorError::InvalidArg {
                op: "masked_sigmoid_bce",
                msg: format!(
                    "logits are [{n}, {c}], targets have {} values and mask {} rows",
                    targets.len(),
                    mask.len()
                ),
            });
        }
        let rows: Vec<usize> = (0..n).filter(|&v| mask[v]).collect();
        if rows.is_empty() {
            return Err(TensorError::InvalidArg {
                op: "masked_sigmoid_bce",
                msg: "mask selects no rows".into(),
            });
        }
        if let Some(bad) = rows
            .iter()
            .flat_map(|&v| targets[v * c..(v + 1) * c].iter())
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return Err(TensorError::InvalidArg {
                op: "masked_sigmoid_bce",
                msg: format!("target {bad} outside [0, 1]"),
            });
        }
        let lv = &self.nodes[logits.0].value;
        let mut total = 0.0;
        for &v in &rows {
            for j in 0..c {
                let l = lv[v * c + j];
                let t = targets[v * c + j];
                // softplus(l) - l*t, with softplus(l) = max(l, 0) + ln(1 + e^{-|l|})
                total += l.max(0.0) + (-l.abs()).exp().ln_1p() - l * t;
            }
        }
        let value = vec![total / (rows.len() * c) as f64];
        self.push_op(
            "masked_sigmoid_bce",
            vec![1],
            value,
            &[logits],
            Rule::MaskedSigmoidBce { logits, targets: Arc::clone(targets), rows },
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Seeds d(loss)/d(loss) = 1 and
    /// accumulates into every `needs_grad` node reachable from it; calling it
    /// again replaces all gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.grads = vec![Vec::new(); self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            self.apply_rule(i, &g);
            self.grads[i] = g;
        }
        Ok(())
    }

    /// Ensures node `v` has a zeroed gradient buffer if it needs one; returns
    /// false for nodes that do not participate in differentiation.
    fn want(&mut self, v: Var) -> bool {
        if !self.nodes[v.0].needs_grad {
            return false;
        }
        if self.grads[v.0].is_empty() {
            self.grads[v.0] = vec![0.0; self.nodes[v.0].value.len()];
        }
        true
    }

    fn apply_rule(&mut self, i: usize, g: &[f64]) {
        // Take the rule out so `self` stays free for `want`; restored at the end.
        let Some(rule) = self.nodes[i].rule.take() else { return };
        match &rule {
            Rule::Matmul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.want(*a) {
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    let mut ga = std::mem::take(&mut self.grads[a.0]);
                    matmul_nt_acc(&mut ga, g, &bv, m, n, k);
                    self.grads[a.0] = ga;
                    self.nodes[b.0].value = bv;
                }
                if self.want(*b) {
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    let mut gb = std::mem::take(&mut self.grads[b.0]);
                    matmul_tn_acc(&mut gb, &av, g, m, k, n);
                    self.grads[b.0] = gb;
                    self.nodes[a.0].value = av;
                }
            }
            Rule::Add { a, b } => {
                if self.want(*a) {
                    acc(&mut self.grads[a.0], g);
                }
                if self.want(*b) {
                    acc(&mut self.grads[b.0], g);
                }
            }
            Rule::Sub { a, b } => {
                if self.want(*a) {
                    acc(&mut self.grads[a.0], g);
                }
                if self.want(*b) {
                    for (gd, &gv) in self.grads[b.0].iter_mut().zip(g) {
                        *gd -= gv;
                    }
                }
            }
            Rule::Mul { a, b } => {
                if self.want(*a) {
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    acc_mul(&mut self.grads[a.0], g, &bv);
                    self.nodes[b.0].value = bv;
                }
                if self.want(*b) {
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    acc_mul(&mut self.grads[b.0], g, &av);
                    self.nodes[a.0].value = av;
                }
            }
            Rule::Maximum { a, b } => {
                let winners: Vec<bool> = {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    av.iter().zip(bv).map(|(x, y)| x >= y).collect()
                };
                if self.want(*a) {
                    for (k, &gv) in g.iter().enumerate() {
                        if winners[k] {
                            self.grads[a.0][k] += gv;
                        }
                    }
                }
                if self.want(*b) {
                    for (k, &gv) in g.iter().enumerate() {
                        if !winners[k] {
                            self.grads[b.0][k] += gv;
                        }
                    }
                }
            }
            Rule::AddBias { x, bias } => {
                if self.want(*x) {
                    acc(&mut self.grads[x.0], g);
                }
                if self.want(*bias) {
                    let c = self.nodes[bias.0].value.len();
                    let gb = &mut self.grads[bias.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gb[k % c] += gv;
                    }
                }
            }
            Rule::MulRowVec { x, row } => {
                let c = self.nodes[row.0].value.len();
                if self.want(*x) {
                    let rv = std::mem::take(&mut self.nodes[row.0].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv * rv[k % c];
                    }
                    self.nodes[row.0].value = rv;
                }
                if self.want(*row) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    let gr = &mut self.grads[row.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gr[k % c] += gv * xv[k];
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Rule::ScaleRows { x, col } => {
                let c = self.nodes[x.0].shape[1];
                if self.want(*x) {
                    let cv = std::mem::take(&mut self.nodes[col.0].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv * cv[k / c];
                    }
                    self.nodes[col.0].value = cv;
                }
                if self.want(*col) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    let gc = &mut self.grads[col.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gc[k / c] += gv * xv[k];
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Rule::Scale { x, c } => {
                if self.want(*x) {
                    for (gd, &gv) in self.grads[x.0].iter_mut().zip(g) {
                        *gd += gv * c;
                    }
                }
            }
            Rule::AddScalar { x } => {
                if self.want(*x) {
                    acc(&mut self.grads[x.0], g);
                }
            }
            Rule::Relu { x } => {
                if self.want(*x) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        if xv[k] > 0.0 {
                            gx[k] += gv;
                        }
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Rule::Elu { x } => {
                if self.want(*x) {
                    let (xv, yv) = (std::mem::take(&mut self.nodes[x.0].value), std::mem::take(&mut self.nodes[i].value));
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        // d/dx elu = 1 for x > 0, exp(x) = y + 1 otherwise.
                        gx[k] += gv * if xv[k] > 0.0 { 1.0 } else { yv[k] + 1.0 };
                    }
                    self.nodes[x.0].value = xv;
                    self.nodes[i].value = yv;
                }
            }
            Rule::LeakyRelu { x, slope } => {
                if self.want(*x) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv * if xv[k] > 0.0 { 1.0 } else { *slope };
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Rule::Tanh { x } => {
                if self.want(*x) {
                    let yv = std::mem::take(&mut self.nodes[i].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv * (1.0 - yv[k] * yv[k]);
                    }
                    self.nodes[i].value = yv;
                }
            }
            Rule::Sigmoid { x } => {
                if self.want(*x) {
                    let yv = std::mem::take(&mut self.nodes[i].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv * yv[k] * (1.0 - yv[k]);
                    }
                    self.nodes[i].value = yv;
                }
            }
            Rule::Exp { x } => {
                if self.want(*x) {
                    let yv = std::mem::take(&mut self.nodes[i].value);
                    acc_mul(&mut self.grads[x.0], g, &yv);
                    self.nodes[i].value = yv;
                }
            }
            Rule::Log { x } => {
                if self.want(*x) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    let gx = &mut self.grads[x.0];
                    for (k, &gv) in g.iter().enumerate() {
                        gx[k] += gv / xv[k];
                    }
                    self.nodes[x.0].value = xv;
                }
            }
            Rule::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut at = 0;
                    for &v in inputs {
                        let len = self.nodes[v.0].value.len();
                        if self.want(v) {
                            acc(&mut self.grads[v.0], &g[at..at + len]);
                        }
                        at += len;
                    }
                } else {
                    let rows = self.nodes[i].shape[0];
                    let cols = self.nodes[i].shape[1];
                    let mut at = 0;
                    for &v in inputs {
                        let c = self.nodes[v.0].shape[1];
                        if self.want(v) {
                            let gv = &mut self.grads[v.0];
                            for r in 0..rows {
                                for j in 0..c {
                                    gv[r * c + j] += g[r * cols + at + j];
                                }
                            }
                        }
                        at += c;
                    }
                }
            }
            Rule::RowSoftmax { x } => {
                if self.want(*x) {
                    let yv = std::mem::take(&mut self.nodes[i].value);
                    let c = self.nodes[i].shape[1];
                    let gx = &mut self.grads[x.0];
                    for r in 0..self.nodes[i].shape[0] {
                        let dot: f64 = (0..c).map(|j| g[r * c + j] * yv[r * c + j]).sum();
                        for j in 0..c {
                            gx[r * c + j] += yv[r * c + j] * (g[r * c + j] - dot);
                        }
                    }
                    self.nodes[i].value = yv;
                }
            }
            Rule::RowLogSoftmax { x } => {
                if self.want(*x) {
                    let yv = std::mem::take(&mut self.nodes[i].value);
                    let c = self.nodes[i].shape[1];
                    let gx = &mut self.grads[x.0];
                    for r in 0..self.nodes[i].shape[0] {
                        let gsum: f64 = (0..c).map(|j| g[r * c + j]).sum();
                        for j in 0..c {
                            gx[r * c + j] += g[r * c + j] - yv[r * c + j].exp() * gsum;
                        }
                    }
                    self.nodes[i].value = yv;
                }
            }
            Rule::SegmentSum { x, seg } => {
                if self.want(*x) {
                    let d = self.nodes[x.0].shape[1];
                    let gx = &mut self.grads[x.0];
                    for (r, &s) in seg.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += g[s * d + j];
                        }
                    }
                }
            }
            Rule::SegmentMean { x, seg } => {
                if self.want(*x) {
                    let num_segments = self.nodes[i].shape[0];
                    let mut counts = vec![0usize; num_segments];
                    for &s in seg.iter() {
                        counts[s] += 1;
                    }
                    let d = self.nodes[x.0].shape[1];
                    let gx = &mut self.grads[x.0];
                    for (r, &s) in seg.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for j in 0..d {
                            gx[r * d + j] += g[s * d + j] * inv;
                        }
                    }
                }
            }
            Rule::SegmentMax { x, argmax } => {
                if self.want(*x) {
                    let d = self.nodes[x.0].shape[1];
                    let gx = &mut self.grads[x.0];
                    for (sj, &r) in argmax.iter().enumerate() {
                        if r != usize::MAX {
                            gx[r * d + (sj % d)] += g[sj];
                        }
                    }
                }
            }
            Rule::SegmentSoftmax { x, seg, num_segments } => {
                if self.want(*x) {
                    let d = self.nodes[x.0].shape[1];
                    let yv = std::mem::take(&mut self.nodes[i].value);
                    let mut dots = vec![0.0; num_segments * d];
                    for (r, &s) in seg.iter().enumerate() {
                        for j in 0..d {
                            dots[s * d + j] += g[r * d + j] * yv[r * d + j];
                        }
                    }
                    let gx = &mut self.grads[x.0];
                    for (r, &s) in seg.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += yv[r * d + j] * (g[r * d + j] - dots[s * d + j]);
                        }
                    }
                    self.nodes[i].value = yv;
                }
            }
            Rule::GatherRows { x, idx } => {
                if self.want(*x) {
                    let d = self.nodes[x.0].shape[1];
                    let gx = &mut self.grads[x.0];
                    for (m, &r) in idx.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += g[m * d + j];
                        }
                    }
                }
            }
            Rule::Dropout { x, mask } => {
                if self.want(*x) {
                    acc_mul(&mut self.grads[x.0], g, mask);
                }
            }
            Rule::SumAll { x } => {
                if self.want(*x) {
                    let g0 = g[0];
                    for gd in self.grads[x.0].iter_mut() {
                        *gd += g0;
                    }
                }
            }
            Rule::MeanAll { x } => {
                if self.want(*x) {
                    let g0 = g[0] / self.nodes[x.0].value.len() as f64;
                    for gd in self.grads[x.0].iter_mut() {
                        *gd += g0;
                    }
                }
            }
            Rule::MaskedSoftmaxCe { logits, labels, rows, probs } => {
                if self.want(*logits) {
                    let c = self.nodes[logits.0].shape[1];
                    let scale = g[0] / rows.len() as f64;
                    let gl = &mut self.grads[logits.0];
                    for (m, &v) in rows.iter().enumerate() {
                        for j in 0..c {
                            let indicator = if j == labels[v] { 1.0 } else { 0.0 };
                            gl[v * c + j] += (probs[m * c + j] - indicator) * scale;
                        }
                    }
                }
            }
            Rule::MaskedSigmoidBce { logits, targets, rows } => {
                if self.want(*logits) {
                    let c = self.nodes[logits.0].shape[1];
                    let scale = g[0] / (rows.len() * c) as f64;
                    let lv = std::mem::take(&mut self.nodes[logits.0].value);
                    let gl = &mut self.grads[logits.0];
                    for &v in rows {
                        for j in 0..c {
                            gl[v * c + j] += (sigmoid(lv[v * c + j]) - targets[v * c + j]) * scale;
                        }
                    }
                    self.nodes[logits.0].value = lv;
                }
            }
        }
        self.nodes[i].rule = Some(rule);
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

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn acc(out: &mut [f64], g: &[f64]) {
    for (o, &v) in out.iter_mut().zip(g) {
        *o += v;
    }
}

fn acc_mul(out: &mut [f64], g: &[f64], w: &[f64]) {
    for ((o, &gv), &wv) in out.iter_mut().zip(g).zip(w) {
        *o += gv * wv;
    }
}

/// out[m,n] += a[m,k] @ b[k,n]; zero entries of `a` are skipped, which makes
/// sparse feature matrices cheap without a sparse type.
fn matmul_nn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
}

/// out[m,k] += dy[m,n] @ b[k,n]^T
fn matmul_nt_acc(out: &mut [f64], dy: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut dot = 0.0;
            for j in 0..n {
                dot += dyrow[j] * brow[j];
            }
            orow[p] += dot;
        }
    }
}

/// out[k,n] += a[m,k]^T @ dy[m,n]; zero entries of `a` are skipped.
fn matmul_tn_acc(out: &mut [f64], a: &[f64], dy: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let orow = &mut out[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += av * dyrow[j];
                }
            }
        }
    }
}

//! The tape: operation recording and reverse-mode differentiation.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NodeId, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone)]
enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Mul,
    MulScalar(f64),
    MulMask(Arc<Vec<f64>>),
    Relu,
    Sigmoid,
    Transpose,
    Reshape,
    Concat { axis: usize, offsets: Vec<usize> },
    SliceCols { start: usize, len: usize },
    Softmax,
    MaskedSoftmaxRows,
    LayerNorm { eps: f64 },
    CrossEntropy { targets: Arc<Vec<usize>>, pad_id: usize },
    SumAll,
    Gather { map: Arc<Vec<Option<usize>>>, input_len: usize },
    AvgPool2x2 { channels: usize, height: usize, width: usize },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::Mul => "mul",
            OpKind::MulScalar(_) => "mul_scalar",
            OpKind::MulMask(_) => "mul_mask",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Concat { .. } => "concat",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::Softmax => "softmax",
            OpKind::MaskedSoftmaxRows => "masked_softmax",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::CrossEntropy { .. } => "cross_entropy",
            OpKind::SumAll => "sum_all",
            OpKind::Gather { .. } => "gather",
            OpKind::AvgPool2x2 { .. } => "avg_pool_2x2",
        }
    }
}

/// Saved input: the value is always retained so the tape can be replayed;
/// the id is present only when the input is itself tracked.
#[derive(Debug, Clone)]
struct NodeInput {
    id: Option<NodeId>,
    data: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

impl NodeInput {
    fn of(t: &Tensor) -> Self {
        Self {
            id: t.node(),
            data: t.data_arc(),
            shape: t.shape().to_vec(),
        }
    }
}

#[derive(Debug)]
struct Node {
    kind: OpKind,
    inputs: Vec<NodeInput>,
    out: Arc<Vec<f64>>,
    out_shape: Vec<usize>,
}

/// Gradients produced by one backward pass, keyed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer for `t`, if the tensor is tracked and was reached.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        t.node()
            .and_then(|id| self.grads.get(id.0).and_then(|g| g.as_deref()))
    }

    /// Gradient of `t`, densified: unreached tracked tensors get zeros.
    pub fn dense(&self, t: &Tensor) -> Vec<f64> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}

/// A Wengert tape. Insertion order is topological order by construction.
///
/// Graphs come in two flavours: [`Graph::training`] records every op whose
/// inputs are tracked and enables dropout; [`Graph::inference`] records
/// nothing and dropout is the identity.
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    train: bool,
    check_finite: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// Recording graph with dropout enabled, seeded for reproducible masks.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            train: true,
            check_finite: cfg!(debug_assertions),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Non-recording graph: ops compute values only, dropout is identity.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
            train: false,
            check_finite: cfg!(debug_assertions),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Recording graph with dropout disabled (used by gradient checks).
    pub fn recording_eval(seed: u64) -> Self {
        let mut g = Self::training(seed);
        g.train = false;
        g
    }

    /// Toggle the after-op finiteness check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf. The returned tensor is always tracked,
    /// even on a non-recording graph (where it simply never receives grads).
    pub fn leaf(&mut self, value: &Tensor) -> Tensor {
        if !self.recording {
            return value.detach();
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            kind: OpKind::Leaf,
            inputs: vec![],
            out: value.data_arc(),
            out_shape: value.shape().to_vec(),
        });
        Tensor::from_parts(value.shape().to_vec(), value.data_arc(), Some(id))
    }

    fn push(
        &mut self,
        kind: OpKind,
        inputs: &[&Tensor],
        out_shape: Vec<usize>,
        out: Vec<f64>,
    ) -> Result<Tensor> {
        if self.check_finite && !out.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: kind.name() });
        }
        let out = Arc::new(out);
        let tracked = self.recording && inputs.iter().any(|t| t.is_tracked());
        let node = if tracked {
            let id = NodeId(self.nodes.len());
            self.nodes.push(Node {
                kind,
                inputs: inputs.iter().map(|t| NodeInput::of(t)).collect(),
                out: Arc::clone(&out),
                out_shape: out_shape.clone(),
            });
            Some(id)
        } else {
            None
        };
        Ok(Tensor::from_parts(out_shape, out, node))
    }

    // ---- elementwise and linear ops ------------------------------------

    /// Standard matrix product of 2-d tensors.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (r, k) = as_2d("matmul", a)?;
        let (k2, c) = as_2d("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = matmul_nn(a.data(), b.data(), r, k, c);
        self.push(OpKind::MatMul, &[a, b], vec![r, c], out)
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.push(OpKind::Add, &[a, b], a.shape().to_vec(), out)
    }

    /// Adds a vector to every row of a matrix.
    pub fn add_row(&mut self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (r, c) = as_2d("add_row", x)?;
        if v.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: x.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (j, vv) in v.data().iter().enumerate() {
                out.push(x.data()[i * c + j] + vv);
            }
        }
        self.push(OpKind::AddRow, &[x, v], vec![r, c], out)
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.push(OpKind::Mul, &[a, b], a.shape().to_vec(), out)
    }

    pub fn mul_scalar(&mut self, x: &Tensor, s: f64) -> Result<Tensor> {
        let out = x.data().iter().map(|v| v * s).collect();
        self.push(OpKind::MulScalar(s), &[x], x.shape().to_vec(), out)
    }

    /// Elementwise product with a constant mask (dropout, zeroing).
    pub fn mul_mask(&mut self, x: &Tensor, mask: Vec<f64>) -> Result<Tensor> {
        if mask.len() != x.numel() {
            return Err(TensorError::LengthMismatch {
                shape: x.shape().to_vec(),
                len: mask.len(),
            });
        }
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(
            OpKind::MulMask(Arc::new(mask)),
            &[x],
            x.shape().to_vec(),
            out,
        )
    }

    /// Inverted dropout. Identity on inference graphs or when `rate == 0`.
    pub fn dropout(&mut self, x: &Tensor, rate: f64) -> Result<Tensor> {
        if !self.train || rate <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.mul_mask(x, mask)
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = x.data().iter().map(|v| v.max(0.0)).collect();
        self.push(OpKind::Relu, &[x], x.shape().to_vec(), out)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = x
            .data()
            .iter()
            .map(|v| {
                // Branch keeps exp() bounded on both tails.
                if *v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        self.push(OpKind::Sigmoid, &[x], x.shape().to_vec(), out)
    }

    // ---- shape ops ------------------------------------------------------

    /// Materialized transpose of a 2-d tensor.
    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = as_2d("transpose", x)?;
        let out = transpose_raw(x.data(), r, c);
        self.push(OpKind::Transpose, &[x], vec![c, r], out)
    }

    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() || shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape,
                reason: format!("incompatible with {} elements", x.numel()),
            });
        }
        let out = x.data().to_vec();
        self.push(OpKind::Reshape, &[x], shape, out)
    }

    /// Concatenates 2-d tensors along `axis` (0 = stack rows, 1 = widen).
    pub fn concat(&mut self, axis: usize, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no inputs".into(),
            });
        }
        let (r0, c0) = as_2d("concat", parts[0])?;
        let mut offsets = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for p in parts {
            let (r, c) = as_2d("concat", p)?;
            let (fixed_ok, var) = if axis == 0 { (c == c0, r) } else { (r == r0, c) };
            if !fixed_ok || axis > 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            offsets.push(total);
            total += var;
        }
        let out_shape = if axis == 0 {
            vec![total, c0]
        } else {
            vec![r0, total]
        };
        let mut out = vec![0.0; out_shape[0] * out_shape[1]];
        if axis == 0 {
            let mut at = 0;
            for p in parts {
                out[at..at + p.numel()].copy_from_slice(p.data());
                at += p.numel();
            }
        } else {
            for (p, &off) in parts.iter().zip(&offsets) {
                let (r, c) = (p.rows(), p.cols());
                for i in 0..r {
                    out[i * total + off..i * total + off + c]
                        .copy_from_slice(&p.data()[i * c..(i + 1) * c]);
                }
            }
        }
        let refs: Vec<&Tensor> = parts.to_vec();
        self.push(OpKind::Concat { axis, offsets }, &refs, out_shape, out)
    }

    /// Column slice `[start, start+len)` of a 2-d tensor.
    pub fn slice_cols(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = as_2d("slice_cols", x)?;
        if start + len > c || len == 0 {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                shape: x.shape().to_vec(),
                reason: format!("slice {start}..{} out of range", start + len),
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x.data()[i * c + start..i * c + start + len]);
        }
        self.push(OpKind::SliceCols { start, len }, &[x], vec![r, len], out)
    }

    // ---- normalization and loss ops -------------------------------------

    /// Numerically stable softmax along `axis` of a 1-d or 2-d tensor.
    pub fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        let ndim = x.shape().len().max(1);
        if axis >= ndim {
            return Err(TensorError::InvalidShape {
                op: "softmax",
                shape: x.shape().to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        // Column softmax runs through a transpose so the kernel only ever
        // normalizes contiguous rows.
        if x.shape().len() == 2 && axis == 0 {
            let xt = self.transpose(x)?;
            let st = self.softmax(&xt, 1)?;
            return self.transpose(&st);
        }
        let c = x.cols();
        let r = x.numel() / c;
        let mut out = vec![0.0; x.numel()];
        for i in 0..r {
            softmax_row(&x.data()[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        self.push(OpKind::Softmax, &[x], x.shape().to_vec(), out)
    }

    /// Row softmax restricted to `allowed` entries; disallowed entries get
    /// exactly zero weight and contribute nothing to the normalization.
    pub fn masked_softmax_rows(&mut self, x: &Tensor, allowed: &[bool]) -> Result<Tensor> {
        let (r, c) = as_2d("masked_softmax", x)?;
        if allowed.len() != r * c {
            return Err(TensorError::LengthMismatch {
                shape: x.shape().to_vec(),
                len: allowed.len(),
            });
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let mrow = &allowed[i * c..(i + 1) * c];
            let mut mx = f64::NEG_INFINITY;
            for (v, &ok) in row.iter().zip(mrow) {
                if ok && *v > mx {
                    mx = *v;
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(TensorError::FullyMaskedRow {
                    op: "masked_softmax",
                    row: i,
                });
            }
            let mut sum = 0.0;
            for j in 0..c {
                if mrow[j] {
                    let e = (row[j] - mx).exp();
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                if mrow[j] {
                    out[i * c + j] /= sum;
                }
            }
        }
        self.push(OpKind::MaskedSoftmaxRows, &[x], vec![r, c], out)
    }

    /// Per-row layer normalization with affine output transform.
    pub fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (r, c) = as_2d("layer_norm", x)?;
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = gain.data()[j] * (row[j] - mean) * inv + bias.data()[j];
            }
        }
        self.push(OpKind::LayerNorm { eps }, &[x, gain, bias], vec![r, c], out)
    }

    /// Mean token negative log-likelihood over non-pad positions.
    pub fn cross_entropy(&mut self, logits: &Tensor, targets: &[usize], pad_id: usize) -> Result<Tensor> {
        let (t, v) = as_2d("cross_entropy", logits)?;
        if targets.len() != t {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: logits.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        let mut n = 0usize;
        for (pos, &tgt) in targets.iter().enumerate() {
            if tgt == pad_id {
                continue;
            }
            if tgt >= v {
                return Err(TensorError::TargetOutOfRange {
                    target: tgt,
                    vocab: v,
                    position: pos,
                });
            }
            let row = &logits.data()[pos * v..(pos + 1) * v];
            total += log_sum_exp(row) - row[tgt];
            n += 1;
        }
        if n == 0 {
            return Err(TensorError::AllPadding);
        }
        self.push(
            OpKind::CrossEntropy {
                targets: Arc::new(targets.to_vec()),
                pad_id,
            },
            &[logits],
            vec![],
            vec![total / n as f64],
        )
    }

    /// Sum of all elements (scalar output).
    pub fn sum_all(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = vec![x.data().iter().sum()];
        self.push(OpKind::SumAll, &[x], vec![], out)
    }

    /// Rearrangement: `out[i] = x[map[i]]`, with `None` entries producing
    /// zero. Covers embedding lookup, im2col and patch flattening.
    pub fn gather(&mut self, x: &Tensor, map: Vec<Option<usize>>, out_shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = out_shape.iter().product();
        if numel != map.len() {
            return Err(TensorError::LengthMismatch {
                shape: out_shape,
                len: map.len(),
            });
        }
        let n = x.numel();
        let mut out = Vec::with_capacity(map.len());
        for (i, m) in map.iter().enumerate() {
            match m {
                Some(j) if *j < n => out.push(x.data()[*j]),
                Some(j) => {
                    return Err(TensorError::InvalidShape {
                        op: "gather",
                        shape: x.shape().to_vec(),
                        reason: format!("index {j} out of range at output {i}"),
                    })
                }
                None => out.push(0.0),
            }
        }
        self.push(
            OpKind::Gather {
                map: Arc::new(map),
                input_len: n,
            },
            &[x],
            out_shape,
            out,
        )
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn embed(&mut self, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = as_2d("embed", table)?;
        let mut map = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(TensorError::TargetOutOfRange {
                    target: id,
                    vocab: v,
                    position: pos,
                });
            }
            for j in 0..d {
                map.push(Some(id * d + j));
            }
        }
        self.gather(table, map, vec![ids.len(), d])
    }

    /// 2x2 average pooling over the spatial axes of a `[c, h, w]` tensor.
    pub fn avg_pool_2x2(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
            return Err(TensorError::InvalidShape {
                op: "avg_pool_2x2",
                shape: s.to_vec(),
                reason: "expects [c, h, w] with even spatial extents".into(),
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let base = ch * h * w + 2 * i * w + 2 * j;
                    out[ch * oh * ow + i * ow + j] =
                        0.25 * (x.data()[base] + x.data()[base + 1] + x.data()[base + w] + x.data()[base + w + 1]);
                }
            }
        }
        self.push(
            OpKind::AvgPool2x2 {
                channels: c,
                height: h,
                width: w,
            },
            &[x],
            vec![c, oh, ow],
            out,
        )
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar loss. The tape is retained: calling this
    /// twice on the same graph yields identical gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let root = loss.node().ok_or(TensorError::DetachedLoss)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let gins = backward_op(node, &gout);
            // Reinstate: later reads (leaf extraction) need it.
            grads[idx] = Some(gout);
            for (input, gin) in node.inputs.iter().zip(gins) {
                let (Some(id), Some(gin)) = (input.id, gin) else {
                    continue;
                };
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&gin) {
                            *a += g;
                        }
                    }
                    slot => *slot = Some(gin),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

// ---- raw kernels ---------------------------------------------------------

/// `a[r,k] * b[k,c]`, plain accumulation in fixed order.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[r,k] * b[c,k]^T` -> [r,c]; rows of both operands are contiguous.
fn matmul_nt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..c {
            let brow = &b[j * k..(j + 1) * k];
            out[i * c + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k,r]^T * b[k,c]` -> [r,c].
fn matmul_tn(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for p in 0..k {
        let arow = &a[p * r..(p + 1) * r];
        let brow = &b[p * c..(p + 1) * c];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * c..(i + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - mx).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

// ---- per-op vector-Jacobian products --------------------------------------

fn backward_op(node: &Node, gout: &[f64]) -> Vec<Option<Vec<f64>>> {
    let ins = &node.inputs;
    match &node.kind {
        OpKind::Leaf => vec![],
        OpKind::MatMul => {
            let (r, k) = (ins[0].shape[0], ins[0].shape[1]);
            let c = ins[1].shape[1];
            let da = matmul_nt(gout, &ins[1].data, r, c, k);
            let db = matmul_tn(&ins[0].data, gout, k, r, c);
            vec![Some(da), Some(db)]
        }
        OpKind::Add => vec![Some(gout.to_vec()), Some(gout.to_vec())],
        OpKind::AddRow => {
            let c = ins[1].shape[0];
            let r = ins[0].data.len() / c;
            let mut dv = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    dv[j] += gout[i * c + j];
                }
            }
            vec![Some(gout.to_vec()), Some(dv)]
        }
        OpKind::Mul => {
            let da = gout.iter().zip(ins[1].data.iter()).map(|(g, b)| g * b).collect();
            let db = gout.iter().zip(ins[0].data.iter()).map(|(g, a)| g * a).collect();
            vec![Some(da), Some(db)]
        }
        OpKind::MulScalar(s) => vec![Some(gout.iter().map(|g| g * s).collect())],
        OpKind::MulMask(mask) => vec![Some(gout.iter().zip(mask.iter()).map(|(g, m)| g * m).collect())],
        OpKind::Relu => {
            let dx = gout
                .iter()
                .zip(ins[0].data.iter())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(dx)]
        }
        OpKind::Sigmoid => {
            let dx = gout
                .iter()
                .zip(node.out.iter())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect();
            vec![Some(dx)]
        }
        OpKind::Transpose => {
            let (r, c) = (ins[0].shape[0], ins[0].shape[1]);
            vec![Some(transpose_raw(gout, c, r))]
        }
        OpKind::Reshape => vec![Some(gout.to_vec())],
        OpKind::Concat { axis, offsets } => {
            let mut outs = Vec::with_capacity(ins.len());
            if *axis == 0 {
                for (input, &off) in ins.iter().zip(offsets) {
                    let c = input.shape[1];
                    let start = off * c;
                    outs.push(Some(gout[start..start + input.data.len()].to_vec()));
                }
            } else {
                let total: usize = ins.iter().map(|i| i.shape[1]).sum();
                let r = ins[0].shape[0];
                for (input, &off) in ins.iter().zip(offsets) {
                    let c = input.shape[1];
                    let mut g = Vec::with_capacity(r * c);
                    for i in 0..r {
                        g.extend_from_slice(&gout[i * total + off..i * total + off + c]);
                    }
                    outs.push(Some(g));
                }
            }
            outs
        }
        OpKind::SliceCols { start, len } => {
            let (r, c) = (ins[0].shape[0], ins[0].shape[1]);
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                dx[i * c + start..i * c + start + len]
                    .copy_from_slice(&gout[i * len..(i + 1) * len]);
            }
            vec![Some(dx)]
        }
        OpKind::Softmax => {
            let c = *node.out_shape.last().unwrap_or(&node.out.len());
            let r = node.out.len() / c;
            let mut dx = vec![0.0; node.out.len()];
            for i in 0..r {
                let y = &node.out[i * c..(i + 1) * c];
                let g = &gout[i * c..(i + 1) * c];
                let dot: f64 = y.iter().zip(g).map(|(yv, gv)| yv * gv).sum();
                for j in 0..c {
                    dx[i * c + j] = y[j] * (g[j] - dot);
                }
            }
            vec![Some(dx)]
        }
        OpKind::MaskedSoftmaxRows => {
            // Disallowed outputs are exactly zero, so the unmasked formula
            // already routes zero gradient through them.
            let c = node.out_shape[1];
            let r = node.out_shape[0];
            let mut dx = vec![0.0; node.out.len()];
            for i in 0..r {
                let y = &node.out[i * c..(i + 1) * c];
                let g = &gout[i * c..(i + 1) * c];
                let dot: f64 = y.iter().zip(g).map(|(yv, gv)| yv * gv).sum();
                for j in 0..c {
                    dx[i * c + j] = y[j] * (g[j] - dot);
                }
            }
            vec![Some(dx)]
        }
        OpKind::LayerNorm { eps } => {
            let (r, c) = (node.out_shape[0], node.out_shape[1]);
            let x = &ins[0].data;
            let gain = &ins[1].data;
            let mut dx = vec![0.0; r * c];
            let mut dgain = vec![0.0; c];
            let mut dbias = vec![0.0; c];
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let g = &gout[i * c..(i + 1) * c];
                let (mean, var) = mean_var(row);
                let inv = 1.0 / (var + eps).sqrt();
                let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                let dxhat: Vec<f64> = g.iter().zip(gain.iter()).map(|(gv, gn)| gv * gn).collect();
                let m1 = dxhat.iter().sum::<f64>() / c as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                for j in 0..c {
                    dx[i * c + j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                    dgain[j] += g[j] * xhat[j];
                    dbias[j] += g[j];
                }
            }
            vec![Some(dx), Some(dgain), Some(dbias)]
        }
        OpKind::CrossEntropy { targets, pad_id } => {
            let v = ins[0].shape[1];
            let t = ins[0].shape[0];
            let n = targets.iter().filter(|&&tg| tg != *pad_id).count() as f64;
            let scale = gout[0] / n;
            let mut dx = vec![0.0; t * v];
            for (pos, &tgt) in targets.iter().enumerate() {
                if tgt == *pad_id {
                    continue;
                }
                let row = &ins[0].data[pos * v..(pos + 1) * v];
                let mut soft = vec![0.0; v];
                softmax_row(row, &mut soft);
                for j in 0..v {
                    let delta = if j == tgt { 1.0 } else { 0.0 };
                    dx[pos * v + j] = scale * (soft[j] - delta);
                }
            }
            vec![Some(dx)]
        }
        OpKind::SumAll => vec![Some(vec![gout[0]; ins[0].data.len()])],
        OpKind::Gather { map, input_len } => {
            let mut dx = vec![0.0; *input_len];
            for (i, m) in map.iter().enumerate() {
                if let Some(j) = m {
                    dx[*j] += gout[i];
                }
            }
            vec![Some(dx)]
        }
        OpKind::AvgPool2x2 {
            channels,
            height,
            width,
        } => {
            let (c, h, w) = (*channels, *height, *width);
            let (oh, ow) = (h / 2, w / 2);
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let g = 0.25 * gout[ch * oh * ow + i * ow + j];
                        let base = ch * h * w + 2 * i * w + 2 * j;
                        dx[base] += g;
                        dx[base + 1] += g;
                        dx[base + w] += g;
                        dx[base + w + 1] += g;
                    }
                }
            }
            vec![Some(dx)]
        }
    }
}

fn as_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape().len() {
        1 => Ok((1, t.shape()[0])),
        2 => Ok((t.shape()[0], t.shape()[1])),
        _ => Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: "expected a 1-d or 2-d tensor".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut g = Graph::inference();
        let eye = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = g.matmul(&eye, &m).unwrap();
        assert!(out.bitwise_eq(&m.detach()));
    }

    #[test]
    fn matmul_projector_zeroes_second_row() {
        let mut g = Graph::inference();
        let p = t2(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let m = t2(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let out = g.matmul(&p, &m).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Independent naive oracle: i-j-p order, scalar accumulator.
        let mut expect = vec![0.0; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a[i * 4 + p] * b[p * 2 + j];
                }
                expect[i * 2 + j] = s;
            }
        }
        let mut g = Graph::inference();
        let ta = Tensor::new(vec![3, 4], a).unwrap();
        let tb = Tensor::new(vec![4, 2], b).unwrap();
        let out = g.matmul(&ta, &tb).unwrap();
        assert_eq!(out.data(), expect.as_slice());
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::inference();
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        let err = g.matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut g = Graph::inference();
        let x = Tensor::new(vec![4], vec![0.0; 4]).unwrap();
        let s = g.softmax(&x, 0).unwrap();
        for v in s.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut g = Graph::inference();
        let x = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let s = g.softmax(&x, 0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut g = Graph::inference();
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = g.softmax(&x, 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, v) in s.data().iter().enumerate() {
            let direct = ((j as f64) + 1.0).exp() / z;
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..35).map(|_| rng.random_range(-8.0..8.0)).collect();
        let x = Tensor::new(vec![5, 7], data).unwrap();
        let mut g = Graph::inference();
        let s = g.softmax(&x, 1).unwrap();
        for i in 0..5 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn softmax_axis0_normalizes_columns() {
        let x = t2(&[&[0.0, 10.0], &[0.0, 10.0]]);
        let mut g = Graph::inference();
        let s = g.softmax(&x, 0).unwrap();
        for j in 0..2 {
            let sum = s.get2(0, j) + s.get2(1, j);
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let x = t2(&[&[5.0, 1.0, 2.0]]);
        let mut g = Graph::inference();
        let s = g.masked_softmax_rows(&x, &[false, true, true]).unwrap();
        assert_eq!(s.data()[0], 0.0);
        assert!((s.data()[1] + s.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_rejects_fully_masked_row() {
        let x = t2(&[&[1.0, 2.0]]);
        let mut g = Graph::inference();
        assert!(matches!(
            g.masked_softmax_rows(&x, &[false, false]),
            Err(TensorError::FullyMaskedRow { row: 0, .. })
        ));
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let x = t2(&[&[3.0, 3.0, 3.0]]);
        let gain = Tensor::new(vec![3], vec![1.0; 3]).unwrap();
        let bias = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        let mut g = Graph::inference();
        let y = g.layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        for v in y.data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = t2(&[&[1.0, 3.0]]);
        let gain = Tensor::new(vec![2], vec![1.0; 2]).unwrap();
        let bias = Tensor::new(vec![2], vec![0.0; 2]).unwrap();
        let mut g = Graph::inference();
        let y = g.layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        // mean 2, var 1; eps shifts the scale slightly below 1.
        assert!((y.data()[0] + 1.0).abs() < 1e-4);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_zero_gain_returns_bias() {
        let x = t2(&[&[1.0, 9.0], &[2.0, -4.0]]);
        let gain = Tensor::new(vec![2], vec![0.0; 2]).unwrap();
        let bias = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let mut g = Graph::inference();
        let y = g.layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_vocab() {
        let logits = Tensor::zeros(vec![3, 4]);
        let mut g = Graph::inference();
        let loss = g.cross_entropy(&logits, &[1, 2, 3], 0).unwrap();
        assert!((loss.item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_logit_is_zero_loss() {
        let mut data = vec![0.0; 5];
        data[2] = 1e6;
        let logits = Tensor::new(vec![1, 5], data).unwrap();
        let mut g = Graph::inference();
        let loss = g.cross_entropy(&logits, &[2], 0).unwrap();
        assert!(loss.item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..35).map(|_| rng.random_range(-4.0..4.0)).collect();
        let logits = Tensor::new(vec![5, 7], data.clone()).unwrap();
        let targets = [3usize, 1, 6, 2, 5];
        // Oracle: per-position log-sum-exp, no shared helpers.
        let mut expect = 0.0;
        for (pos, &tgt) in targets.iter().enumerate() {
            let row = &data[pos * 7..(pos + 1) * 7];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            expect += lse - row[tgt];
        }
        expect /= 5.0;
        let mut g = Graph::inference();
        let loss = g.cross_entropy(&logits, &targets, 0).unwrap();
        assert!((loss.item() - expect).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_skips_padding_positions() {
        let mut data = vec![0.0; 8];
        data[1] = 50.0; // position 0 prefers token 1
        let logits = Tensor::new(vec![2, 4], data).unwrap();
        let mut g = Graph::inference();
        // Second position is PAD and must not contribute.
        let loss = g.cross_entropy(&logits, &[1, 0], 0).unwrap();
        assert!(loss.item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_out_of_range_target() {
        let logits = Tensor::zeros(vec![1, 4]);
        let mut g = Graph::inference();
        assert!(matches!(
            g.cross_entropy(&logits, &[9], 0),
            Err(TensorError::TargetOutOfRange { target: 9, vocab: 4, position: 0 })
        ));
    }

    #[test]
    fn backward_square_sum() {
        let mut g = Graph::training(0);
        let x = g.leaf(&Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = g.mul(&x, &x).unwrap();
        let loss = g.sum_all(&sq).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_detached_branch_contributes_nothing() {
        let mut g = Graph::training(0);
        let x = g.leaf(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let detached = x.detach();
        let dead = g.mul(&detached, &detached).unwrap();
        let _ = dead; // not part of the loss
        let live = g.mul_scalar(&x, 3.0).unwrap();
        let loss = g.sum_all(&live).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[3.0, 3.0]);
        // A graph output built purely from detached values is untracked.
        assert!(!dead.is_tracked());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::training(0);
        let x = g.leaf(&Tensor::zeros(vec![2, 2]));
        let y = g.relu(&x).unwrap();
        assert!(matches!(
            g.backward(&y),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_matmul_matches_central_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |av: &[f64], bv: &[f64]| -> f64 {
            let mut g = Graph::inference();
            let ta = Tensor::new(vec![2, 3], av.to_vec()).unwrap();
            let tb = Tensor::new(vec![3, 2], bv.to_vec()).unwrap();
            let m = g.matmul(&ta, &tb).unwrap();
            g.sum_all(&m).unwrap().item()
        };
        let mut g = Graph::training(0);
        let ta = g.leaf(&Tensor::new(vec![2, 3], a.clone()).unwrap());
        let tb = g.leaf(&Tensor::new(vec![3, 2], b.clone()).unwrap());
        let m = g.matmul(&ta, &tb).unwrap();
        let loss = g.sum_all(&m).unwrap();
        let grads = g.backward(&loss).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += h;
            am[i] -= h;
            let num = (f(&ap, &b) - f(&am, &b)) / (2.0 * h);
            let ana = grads.get(&ta).unwrap()[i];
            assert!((num - ana).abs() / num.abs().max(1.0) < 1e-4);
        }
        for i in 0..6 {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let num = (f(&a, &bp) - f(&a, &bm)) / (2.0 * h);
            let ana = grads.get(&tb).unwrap()[i];
            assert!((num - ana).abs() / num.abs().max(1.0) < 1e-4);
        }
    }

    #[test]
    fn tape_replay_is_identical() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::training(0);
        let x = g.leaf(&Tensor::new(vec![3, 4], data).unwrap());
        let s = g.softmax(&x, 1).unwrap();
        let y = g.relu(&s).unwrap();
        let loss = g.sum_all(&y).unwrap();
        let g1 = g.backward(&loss).unwrap();
        let g2 = g.backward(&loss).unwrap();
        let a = g1.get(&x).unwrap();
        let b = g2.get(&x).unwrap();
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn fanout_accumulates_gradients() {
        let mut g = Graph::training(0);
        let x = g.leaf(&Tensor::new(vec![1], vec![2.0]).unwrap());
        let a = g.mul_scalar(&x, 3.0).unwrap();
        let b = g.mul_scalar(&x, 4.0).unwrap();
        let s = g.add(&a, &b).unwrap();
        let loss = g.sum_all(&s).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[7.0]);
    }

    #[test]
    fn concat_axis1_roundtrips_through_slice() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t2(&[&[5.0], &[6.0]]);
        let mut g = Graph::inference();
        let c = g.concat(1, &[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = g.slice_cols(&c, 0, 2).unwrap();
        assert!(back.bitwise_eq(&a.detach()));
    }

    #[test]
    fn gather_none_entries_are_zero() {
        let x = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        let mut g = Graph::inference();
        let y = g
            .gather(&x, vec![Some(2), None, Some(0)], vec![3])
            .unwrap();
        assert_eq!(y.data(), &[30.0, 0.0, 10.0]);
    }

    #[test]
    fn embed_selects_rows() {
        let table = t2(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let mut g = Graph::inference();
        let e = g.embed(&table, &[2, 0]).unwrap();
        assert_eq!(e.shape(), &[2, 2]);
        assert_eq!(e.data(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn dropout_identity_when_disabled() {
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut g = Graph::inference();
        let y = g.dropout(&x, 0.5).unwrap();
        assert!(y.bitwise_eq(&x));
        let mut g = Graph::training(9);
        let x = g.leaf(&x);
        let y = g.dropout(&x, 0.0).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn dropout_mask_is_seed_deterministic() {
        let x = Tensor::new(vec![64], vec![1.0; 64]).unwrap();
        let run = |seed| {
            let mut g = Graph::training(seed);
            let x = g.leaf(&x);
            g.dropout(&x, 0.3).unwrap().data().to_vec()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn non_finite_output_detected() {
        let mut g = Graph::inference();
        g.set_check_finite(true);
        let x = Tensor::new(vec![1], vec![1e308]).unwrap();
        let err = g.mul(&x, &x).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "mul" }));
    }

    #[test]
    fn avg_pool_halves_spatial_dims() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut g = Graph::inference();
        let y = g.avg_pool_2x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[2.5]);
    }
}

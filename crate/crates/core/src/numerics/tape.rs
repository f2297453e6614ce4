//! Reverse-mode gradient tape.
//!
//! Operations are appended in execution order, so the node index order is
//! already a topological order; `backward` walks it once in reverse.

use super::kernels::{self, dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, softmax_in_place};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifies a trainable parameter outside the tape: `group` is the owning
/// parameter store, `index` the slot inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub group: u32,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Full,
    Row,
    Scalar,
}

impl Bcast {
    #[inline]
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Bcast::Full => i * cols + j,
            Bcast::Row => j,
            Bcast::Scalar => 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        ba: Bcast,
        bb: Bcast,
    },
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    LayerNorm { x: usize, rstd: Vec<f64> },
    Softmax(usize),
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    MeanRows(usize),
    SumAll(usize),
    Dot(usize, usize),
    Cosine { u: usize, v: usize, eps: f64 },
    ScaleRows(usize, usize),
    SegmentSoftmax { x: usize, seg: Vec<usize> },
    ScatterAddRows { x: usize, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamKey>,
}

/// Element-wise activation selector used by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    track_params: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            track_params: true,
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose parameter leaves are recorded as constants; used for
    /// inference where no gradients are needed.
    pub fn no_grad() -> Self {
        Tape {
            track_params: false,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Backward(format!("variable {} is not on this tape", v.0)))
    }

    fn push(&mut self, op_name: &'static str, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(rows * cols, value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = op_inputs(&op).iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, t: &Tensor, requires_grad: bool, param: Option<ParamKey>) -> Result<Var> {
        let (rows, cols) = t.dims2()?;
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            rows,
            cols,
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad,
            param,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf; gradients are tracked when the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.push_leaf(t, t.requires_grad(), None)
    }

    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        self.push_leaf(t, false, None)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::shape("constant", format!("{rows}x{cols} vs {}", data.len())));
        }
        self.push("constant", rows, cols, data, Op::Leaf)
    }

    /// Records a trainable parameter leaf tagged with `key`.
    pub fn param(&mut self, t: &Tensor, key: ParamKey) -> Result<Var> {
        if !self.track_params {
            return self.push_leaf(t, false, None);
        }
        self.push_leaf(t, true, Some(key))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("tape values are finite")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul", m, n, out, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", c, r, out, Op::Transpose(a.0))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize, Bcast, Bcast)> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) == (rb, cb) {
            return Ok((ra, ca, Bcast::Full, Bcast::Full));
        }
        if (rb, cb) == (1, 1) {
            return Ok((ra, ca, Bcast::Full, Bcast::Scalar));
        }
        if (ra, ca) == (1, 1) {
            return Ok((rb, cb, Bcast::Scalar, Bcast::Full));
        }
        if rb == 1 && cb == ca {
            return Ok((ra, ca, Bcast::Full, Bcast::Row));
        }
        if ra == 1 && ca == cb {
            return Ok((rb, cb, Bcast::Row, Bcast::Full));
        }
        Err(Error::shape(op, format!("cannot broadcast {ra}x{ca} with {rb}x{cb}")))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let (rows, cols, ba, bb) = self.broadcast(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let x = va[ba.index(i, j, cols)];
                let y = vb[bb.index(i, j, cols)];
                out.push(match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                });
            }
        }
        self.push(
            name,
            rows,
            cols,
            out,
            Op::Binary {
                kind,
                a: a.0,
                b: b.0,
                ba,
                bb,
            },
        )
    }

    /// Element-wise sum. Broadcasting: equal shapes, a `1x1` scalar with
    /// anything, or a `1xc` row with an `rxc` matrix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (r, cols) = self.dims(a);
        let out = self.value(a).iter().map(|v| v * c).collect();
        self.push("scale", r, cols, out, Op::Scale(a.0, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let (r, cols) = self.dims(a);
        let out = self.value(a).iter().map(|v| v + c).collect();
        self.push("add_scalar", r, cols, out, Op::AddScalar(a.0))
    }

    pub fn elementwise(&mut self, act: Activation, a: Var) -> Result<Var> {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&v| v.max(0.0)).collect();
        self.push("relu", r, c, out, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&v| sigmoid(v)).collect();
        self.push("sigmoid", r, c, out, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&v| v.tanh()).collect();
        self.push("tanh", r, c, out, Op::Tanh(a.0))
    }

    /// Natural log; non-positive inputs surface as a non-finite error.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&v| v.ln()).collect();
        self.push("ln", r, c, out, Op::Ln(a.0))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&v| v.clamp(lo, hi)).collect();
        self.push("clamp", r, c, out, Op::Clamp(a.0, lo, hi))
    }

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layernorm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(Error::shape("layernorm", "zero columns"));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * c);
        let mut rstds = Vec::with_capacity(r);
        for row in src.chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * rstd));
            rstds.push(rstd);
        }
        self.push("layernorm", r, c, out, Op::LayerNorm { x: a.0, rstd: rstds })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        self.push("softmax", r, c, out, Op::Softmax(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.dims(*first).0;
        if parts.iter().any(|p| self.dims(*p).0 != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                let c = self.dims(*p).1;
                out.extend_from_slice(&self.value(*p)[i * c..(i + 1) * c]);
            }
        }
        self.push("concat_cols", rows, cols, out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push("slice_cols", r, len, out, Op::SliceCols { x: a.0, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {r}")));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", len, c, out, Op::SliceRows { x: a.0, start })
    }

    /// `out[k] = a[idx[k]]`; also serves as embedding lookup.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push("gather_rows", idx.len(), c, out, Op::GatherRows { x: a.0, idx: idx.to_vec() })
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 {
            return Err(Error::shape("mean_rows", "zero rows"));
        }
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        self.push("mean_rows", 1, c, out, Op::MeanRows(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push("sum_all", 1, 1, vec![s], Op::SumAll(a.0))
    }

    /// Inner product of two equally sized tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::shape("dot", format!("{la} vs {lb}")));
        }
        let s = dot(self.value(a), self.value(b));
        self.push("dot", 1, 1, vec![s], Op::Dot(a.0, b.0))
    }

    /// `u.v / max(|u| |v|, eps)`.
    pub fn cosine(&mut self, u: Var, v: Var, eps: f64) -> Result<Var> {
        let (lu, lv) = (self.value(u).len(), self.value(v).len());
        if lu != lv {
            return Err(Error::shape("cosine", format!("{lu} vs {lv}")));
        }
        if eps <= 0.0 {
            return Err(Error::shape("cosine", "epsilon must be positive"));
        }
        let (a, b) = (self.value(u), self.value(v));
        let c = dot(a, b) / (kernels::norm(a) * kernels::norm(b)).max(eps);
        self.push("cosine", 1, 1, vec![c], Op::Cosine { u: u.0, v: v.0, eps })
    }

    /// Multiplies row `i` of `a` (r x c) by `w[i]` where `w` is r x 1.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(w) != (r, 1) {
            return Err(Error::shape("scale_rows", format!("{r}x{c} by {:?}", self.dims(w))));
        }
        let (va, vw) = (self.value(a), self.value(w));
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(va[i * c..(i + 1) * c].iter().map(|x| x * vw[i]));
        }
        self.push("scale_rows", r, c, out, Op::ScaleRows(a.0, w.0))
    }

    /// Softmax of an `r x 1` column within groups: entry `e` belongs to group `seg[e]`.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if c != 1 || seg.len() != r {
            return Err(Error::shape("segment_softmax", format!("{r}x{c} with {} segment ids", seg.len())));
        }
        if seg.iter().any(|&s| s >= n_segments) {
            return Err(Error::shape("segment_softmax", "segment id out of range"));
        }
        let src = self.value(a);
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (&s, &v) in seg.iter().zip(src) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = seg.iter().zip(src).map(|(&s, &v)| (v - max[s]).exp()).collect();
        let mut sum = vec![0.0; n_segments];
        for (&s, &v) in seg.iter().zip(&out) {
            sum[s] += v;
        }
        for (&s, v) in seg.iter().zip(out.iter_mut()) {
            *v /= sum[s];
        }
        self.push("segment_softmax", r, 1, out, Op::SegmentSoftmax { x: a.0, seg: seg.to_vec() })
    }

    /// `out[targets[e]] += a[e]`, producing `n x c`.
    pub fn scatter_add_rows(&mut self, a: Var, targets: &[usize], n: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if targets.len() != r || targets.iter().any(|&t| t >= n) {
            return Err(Error::shape("scatter_add_rows", "bad target indices"));
        }
        let src = self.value(a);
        let mut out = vec![0.0; n * c];
        for (e, &t) in targets.iter().enumerate() {
            for (o, v) in out[t * c..(t + 1) * c].iter_mut().zip(&src[e * c..(e + 1) * c]) {
                *o += v;
            }
        }
        self.push("scatter_add_rows", n, c, out, Op::ScatterAddRows { x: a.0, targets: targets.to_vec() })
    }

    /// Populates gradients of `loss` with respect to every node that requires them.
    ///
    /// Gradients from a previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.node(loss)?;
        if (node.rows, node.cols) != (1, 1) {
            return Err(Error::Backward(format!("loss must be scalar, got {}x{}", node.rows, node.cols)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if node.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` call. Leaves that require gradients
    /// but were not reached get zeros.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        let node = self.nodes.get(v.0)?;
        if !node.requires_grad {
            return None;
        }
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Some(g.clone()),
            None => Some(vec![0.0; node.value.len()]),
        }
    }

    /// Parameter leaves and their gradients after `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamKey, &[f64])> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            let key = n.param?;
            let g = self.grads.get(i)?.as_deref()?;
            Some((key, g))
        })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let (rows, cols) = (node.rows, node.cols);
        let nodes = &self.nodes;
        // Returns the gradient buffer of input `i`, or None if it needs none.
        macro_rules! slot {
            ($i:expr) => {{
                let i = $i;
                if nodes[i].requires_grad {
                    Some(grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[*a].rows, nodes[*a].cols);
                let n = nodes[*b].cols;
                if let Some(ga) = slot!(*a) {
                    gemm_nt_acc(g, &nodes[*b].value, ga, m, n, k);
                }
                if let Some(gb) = slot!(*b) {
                    gemm_tn_acc(&nodes[*a].value, g, gb, m, k, n);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = slot!(*a) {
                    // node is cols_a x rows_a
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Binary { kind, a, b, ba, bb } => {
                let (kind, a, b, ba, bb) = (*kind, *a, *b, *ba, *bb);
                if nodes[a].requires_grad {
                    let other = &nodes[b].value;
                    let ga = grads[a].get_or_insert_with(|| vec![0.0; nodes[a].value.len()]);
                    for i in 0..rows {
                        for j in 0..cols {
                            let gij = g[i * cols + j];
                            ga[ba.index(i, j, cols)] += match kind {
                                BinaryKind::Add | BinaryKind::Sub => gij,
                                BinaryKind::Mul => gij * other[bb.index(i, j, cols)],
                            };
                        }
                    }
                }
                if nodes[b].requires_grad {
                    let other = &nodes[a].value;
                    let gb = grads[b].get_or_insert_with(|| vec![0.0; nodes[b].value.len()]);
                    for i in 0..rows {
                        for j in 0..cols {
                            let gij = g[i * cols + j];
                            gb[bb.index(i, j, cols)] += match kind {
                                BinaryKind::Add => gij,
                                BinaryKind::Sub => -gij,
                                BinaryKind::Mul => gij * other[ba.index(i, j, cols)],
                            };
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot!(*a) {
                    for (o, v) in ga.iter_mut().zip(g) {
                        *o += v * c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = slot!(*a) {
                    for (o, v) in ga.iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, v), x) in ga.iter_mut().zip(g).zip(&nodes[*a].value) {
                        if *x > 0.0 {
                            *o += v;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, v), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += v * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, v), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += v * (1.0 - y * y);
                    }
                }
            }
            Op::Ln(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, v), x) in ga.iter_mut().zip(g).zip(&nodes[*a].value) {
                        *o += v / x;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, v), x) in ga.iter_mut().zip(g).zip(&nodes[*a].value) {
                        if x >= lo && x <= hi {
                            *o += v;
                        }
                    }
                }
            }
            Op::LayerNorm { x, rstd } => {
                if let Some(gx) = slot!(*x) {
                    let y = &node.value;
                    for i in 0..rows {
                        let gy = &g[i * cols..(i + 1) * cols];
                        let yr = &y[i * cols..(i + 1) * cols];
                        let mean_g = gy.iter().sum::<f64>() / cols as f64;
                        let mean_gy = dot(gy, yr) / cols as f64;
                        for j in 0..cols {
                            gx[i * cols + j] += rstd[i] * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = slot!(*a) {
                    let y = &node.value;
                    for i in 0..rows {
                        let gy = &g[i * cols..(i + 1) * cols];
                        let yr = &y[i * cols..(i + 1) * cols];
                        let s = dot(gy, yr);
                        for j in 0..cols {
                            ga[i * cols + j] += yr[j] * (gy[j] - s);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p].cols;
                    if let Some(gp) = slot!(p) {
                        for i in 0..rows {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * cols + offset + j];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols { x, start } => {
                let xc = nodes[*x].cols;
                if let Some(gx) = slot!(*x) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[i * xc + start + j] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(gx) = slot!(*x) {
                    for (o, v) in gx[start * cols..(start + rows) * cols].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if let Some(gx) = slot!(*x) {
                    for (k, &src) in idx.iter().enumerate() {
                        for j in 0..cols {
                            gx[src * cols + j] += g[k * cols + j];
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                let r = nodes[*a].rows;
                if let Some(ga) = slot!(*a) {
                    for i in 0..r {
                        for j in 0..cols {
                            ga[i * cols + j] += g[j] / r as f64;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Dot(a, b) => {
                if let Some(ga) = slot!(*a) {
                    for (o, v) in ga.iter_mut().zip(&nodes[*b].value) {
                        *o += g[0] * v;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for (o, v) in gb.iter_mut().zip(&nodes[*a].value) {
                        *o += g[0] * v;
                    }
                }
            }
            Op::Cosine { u, v, eps } => {
                let (uu, vv) = (&nodes[*u].value, &nodes[*v].value);
                let (nu, nv) = (kernels::norm(uu), kernels::norm(vv));
                let c = node.value[0];
                let denom = nu * nv;
                // d/du [u.v / max(|u||v|, eps)]
                let grad_of = |x: &[f64], y: &[f64], nx: f64, out: &mut [f64]| {
                    for j in 0..out.len() {
                        let d = if denom > *eps {
                            y[j] / denom - c * x[j] / (nx * nx)
                        } else {
                            y[j] / eps
                        };
                        out[j] += g[0] * d;
                    }
                };
                if let Some(gu) = slot!(*u) {
                    grad_of(uu, vv, nu, gu);
                }
                if let Some(gv) = slot!(*v) {
                    grad_of(vv, uu, nv, gv);
                }
            }
            Op::ScaleRows(a, w) => {
                let (va, vw) = (&nodes[*a].value, &nodes[*w].value);
                if let Some(ga) = slot!(*a) {
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * cols + j] += g[i * cols + j] * vw[i];
                        }
                    }
                }
                if let Some(gw) = slot!(*w) {
                    for i in 0..rows {
                        gw[i] += dot(&g[i * cols..(i + 1) * cols], &va[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::SegmentSoftmax { x, seg } => {
                if let Some(gx) = slot!(*x) {
                    let y = &node.value;
                    let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                    let mut s = vec![0.0; n_seg];
                    for (e, &sid) in seg.iter().enumerate() {
                        s[sid] += g[e] * y[e];
                    }
                    for (e, &sid) in seg.iter().enumerate() {
                        gx[e] += y[e] * (g[e] - s[sid]);
                    }
                }
            }
            Op::ScatterAddRows { x, targets } => {
                if let Some(gx) = slot!(*x) {
                    for (e, &t) in targets.iter().enumerate() {
                        for j in 0..cols {
                            gx[e * cols + j] += g[t * cols + j];
                        }
                    }
                }
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Dot(a, b) | Op::ScaleRows(a, b) => vec![*a, *b],
        Op::Binary { a, b, .. } => vec![*a, *b],
        Op::Cosine { u, v, .. } => vec![*u, *v],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Ln(a)
        | Op::Clamp(a, _, _)
        | Op::Softmax(a)
        | Op::MeanRows(a)
        | Op::SumAll(a) => vec![*a],
        Op::LayerNorm { x, .. }
        | Op::SliceCols { x, .. }
        | Op::SliceRows { x, .. }
        | Op::GatherRows { x, .. }
        | Op::SegmentSoftmax { x, .. }
        | Op::ScatterAddRows { x, .. } => vec![*x],
        Op::ConcatCols(parts) => parts.clone(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

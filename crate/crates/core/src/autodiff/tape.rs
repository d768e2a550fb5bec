use std::sync::Arc;

use super::matrix::{gemm, Matrix};
use super::{AutodiffError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub(crate) id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    MulCol(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    Sigmoid(Tensor),
    Reciprocal(Tensor),
    ConcatCols(Vec<Tensor>),
    LayerNorm {
        x: Tensor,
        gain: Tensor,
        bias: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Tensor, Arc<[usize]>),
    ScatterAddRows(Tensor, Arc<[usize]>),
    SegmentSoftmax(Tensor, Arc<[usize]>),
    SumRows(Tensor),
    Sum(Tensor),
    Mse(Tensor, Tensor),
    StraightThrough(Tensor),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records dense-matrix operations for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by [`Tape::backward`], one per recorded node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `t`, zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, t: Tensor) -> Matrix {
        match self.get(t) {
            Some(g) => Matrix::from_vec(t.rows, t.cols, g.to_vec()),
            None => Matrix::zeros(t.rows, t.cols),
        }
    }
}

fn same_shape(op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
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

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    /// Scalar value of a 1×1 tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value.data[0]
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Tensor> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Matrix) -> Result<Tensor> {
        self.leaf(value, false)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Matrix,
        op: Op,
        requires_grad: bool,
    ) -> Result<Tensor> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        let t = Tensor {
            id: self.nodes.len(),
            rows: value.rows,
            cols: value.cols,
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(t)
    }

    fn rg(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.id].requires_grad)
    }

    fn data(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.id].value.data
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = Matrix::zeros(a.rows, b.cols);
        gemm(
            a.rows,
            a.cols,
            b.cols,
            self.data(a),
            false,
            self.data(b),
            false,
            0.0,
            &mut out.data,
        );
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Tensor,
        b: Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Tensor> {
        same_shape(name, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        self.push(name, Matrix::from_vec(a.rows, a.cols, data), op, rg)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a 1×cols row to every row of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: a.shape(),
                rhs: row.shape(),
            });
        }
        let mut out = self.nodes[a.id].value.clone();
        let r = self.data(row).to_vec();
        for chunk in out.data.chunks_exact_mut(a.cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push("add_row", out, Op::AddRow(a, row), rg)
    }

    /// Scales row `r` of `a` by `col[r]`.
    pub fn mul_col(&mut self, a: Tensor, col: Tensor) -> Result<Tensor> {
        if col.cols != 1 || col.rows != a.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul_col",
                lhs: a.shape(),
                rhs: col.shape(),
            });
        }
        let mut out = self.nodes[a.id].value.clone();
        let c = self.data(col).to_vec();
        if a.cols > 0 {
            for (chunk, s) in out.data.chunks_exact_mut(a.cols).zip(&c) {
                chunk.iter_mut().for_each(|o| *o *= s);
            }
        }
        let rg = self.rg(&[a, col]);
        self.push("mul_col", out, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Result<Tensor> {
        let data = self.data(a).iter().map(|x| x * s).collect();
        let rg = self.rg(&[a]);
        self.push(
            "scale",
            Matrix::from_vec(a.rows, a.cols, data),
            Op::Scale(a, s),
            rg,
        )
    }

    pub fn relu(&mut self, a: Tensor) -> Result<Tensor> {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.rg(&[a]);
        self.push(
            "relu",
            Matrix::from_vec(a.rows, a.cols, data),
            Op::Relu(a),
            rg,
        )
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Result<Tensor> {
        let data = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let rg = self.rg(&[a]);
        self.push(
            "sigmoid",
            Matrix::from_vec(a.rows, a.cols, data),
            Op::Sigmoid(a),
            rg,
        )
    }

    pub fn reciprocal(&mut self, a: Tensor) -> Result<Tensor> {
        let data = self.data(a).iter().map(|&x| 1.0 / x).collect();
        let rg = self.rg(&[a]);
        self.push(
            "reciprocal",
            Matrix::from_vec(a.rows, a.cols, data),
            Op::Reciprocal(a),
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                lhs: parts[0].shape(),
                rhs: bad.shape(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.id].value.row(r));
            }
        }
        let rg = self.rg(parts);
        self.push(
            "concat_cols",
            Matrix::from_vec(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    /// Per-row normalisation with learned 1×cols gain and bias.
    pub fn layer_norm(&mut self, x: Tensor, gain: Tensor, bias: Tensor) -> Result<Tensor> {
        if gain.shape() != (1, x.cols) || bias.shape() != (1, x.cols) {
            return Err(AutodiffError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape(),
                rhs: gain.shape(),
            });
        }
        let n = x.cols;
        let mut xhat = Vec::with_capacity(x.rows * n);
        let mut inv_std = Vec::with_capacity(x.rows);
        let mut out = Vec::with_capacity(x.rows * n);
        let (g, b) = (self.data(gain), self.data(bias));
        for row in self.data(x).chunks_exact(n.max(1)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (k, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[k] + b[k]);
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            "layer_norm",
            Matrix::from_vec(x.rows, n, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Row `k` of the result is row `index[k]` of `x`.
    pub fn gather_rows(&mut self, x: Tensor, index: Arc<[usize]>) -> Result<Tensor> {
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: x.rows,
            });
        }
        let value = self.nodes[x.id].value.select_rows(&index);
        let rg = self.rg(&[x]);
        self.push("gather_rows", value, Op::GatherRows(x, index), rg)
    }

    /// Sums row `k` of `x` into row `index[k]` of an `out_rows`-row result.
    pub fn scatter_add_rows(
        &mut self,
        x: Tensor,
        index: Arc<[usize]>,
        out_rows: usize,
    ) -> Result<Tensor> {
        if index.len() != x.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: x.shape(),
                rhs: (index.len(), 1),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "scatter_add_rows",
                index: bad,
                len: out_rows,
            });
        }
        let mut out = Matrix::zeros(out_rows, x.cols);
        let src = &self.nodes[x.id].value;
        for (k, &dst) in index.iter().enumerate() {
            for (o, v) in out.row_mut(dst).iter_mut().zip(src.row(k)) {
                *o += v;
            }
        }
        let rg = self.rg(&[x]);
        self.push("scatter_add_rows", out, Op::ScatterAddRows(x, index), rg)
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    /// `segment_ids` must be sorted non-decreasing.
    pub fn segment_softmax(&mut self, x: Tensor, segment_ids: &[usize]) -> Result<Tensor> {
        if segment_ids.len() != x.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_softmax",
                lhs: x.shape(),
                rhs: (segment_ids.len(), 1),
            });
        }
        if segment_ids.windows(2).any(|w| w[0] > w[1]) {
            return Err(AutodiffError::UnsortedSegments);
        }
        let bounds = segment_bounds(segment_ids);
        let c = x.cols;
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for w in bounds.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            for col in 0..c {
                let max = (lo..hi)
                    .map(|r| src[r * c + col])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for r in lo..hi {
                    let e = (src[r * c + col] - max).exp();
                    out[r * c + col] = e;
                    total += e;
                }
                for r in lo..hi {
                    out[r * c + col] /= total;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            "segment_softmax",
            Matrix::from_vec(x.rows, c, out),
            Op::SegmentSoftmax(x, bounds.into()),
            rg,
        )
    }

    /// Column sums, a 1×cols row.
    pub fn sum_rows(&mut self, x: Tensor) -> Result<Tensor> {
        let mut out = vec![0.0; x.cols];
        for row in self.data(x).chunks_exact(x.cols.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            "sum_rows",
            Matrix::from_vec(1, x.cols, out),
            Op::SumRows(x),
            rg,
        )
    }

    /// Sum of every entry, 1×1.
    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push("sum", Matrix::from_vec(1, 1, vec![s]), Op::Sum(x), rg)
    }

    /// Mean squared error over all entries, 1×1.
    pub fn mse(&mut self, pred: Tensor, target: Tensor) -> Result<Tensor> {
        same_shape("mse", pred, target)?;
        let n = (pred.rows * pred.cols).max(1) as f64;
        let s = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[pred, target]);
        self.push(
            "mse",
            Matrix::from_vec(1, 1, vec![s]),
            Op::Mse(pred, target),
            rg,
        )
    }

    /// Forward value `hard`, backward gradient routed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Matrix, soft: Tensor) -> Result<Tensor> {
        if hard.shape() != soft.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "straight_through",
                lhs: hard.shape(),
                rhs: soft.shape(),
            });
        }
        let rg = self.rg(&[soft]);
        self.push("straight_through", hard, Op::StraightThrough(soft), rg)
    }

    /// Reverse sweep from a 1×1 `loss`. Each node is visited once, in reverse
    /// recording order; buffers start at zero. Only leaf gradients are kept.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar(loss.shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        let mut pool = BufferPool::default();
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut pool);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            } else {
                pool.give(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        pool: &mut BufferPool,
    ) {
        let mut acc = |t: Tensor, grads: &mut [Option<Vec<f64>>]| -> Option<usize> {
            if self.nodes[t.id].requires_grad {
                if grads[t.id].is_none() {
                    grads[t.id] = Some(pool.take(t.rows * t.cols));
                }
                Some(t.id)
            } else {
                None
            }
        };
        macro_rules! buf {
            ($t:expr) => {
                match acc($t, grads) {
                    Some(id) => grads[id].as_mut().unwrap(),
                    None => return,
                }
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if acc(a, grads).is_some() {
                    let buf = grads[a.id].as_mut().unwrap();
                    gemm(
                        a.rows,
                        b.cols,
                        a.cols,
                        g,
                        false,
                        self.data(b),
                        true,
                        1.0,
                        buf,
                    );
                }
                if acc(b, grads).is_some() {
                    let buf = grads[b.id].as_mut().unwrap();
                    gemm(
                        b.rows,
                        a.rows,
                        b.cols,
                        self.data(a),
                        true,
                        g,
                        false,
                        1.0,
                        buf,
                    );
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                for (t, s) in [(*a, 1.0), (*b, sign)] {
                    if acc(t, grads).is_some() {
                        let buf = grads[t.id].as_mut().unwrap();
                        buf.iter_mut().zip(g).for_each(|(o, v)| *o += s * v);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (t, other) in [(*a, *b), (*b, *a)] {
                    if acc(t, grads).is_some() {
                        let od = self.data(other);
                        let buf = grads[t.id].as_mut().unwrap();
                        for ((o, v), w) in buf.iter_mut().zip(g).zip(od) {
                            *o += v * w;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if acc(*a, grads).is_some() {
                    let buf = grads[a.id].as_mut().unwrap();
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                let cols = row.cols.max(1);
                let buf = buf!(*row);
                for chunk in g.chunks_exact(cols) {
                    buf.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
                }
            }
            Op::MulCol(a, col) => {
                let cols = a.cols.max(1);
                if acc(*a, grads).is_some() {
                    let c = self.data(*col);
                    let buf = grads[a.id].as_mut().unwrap();
                    for ((bchunk, gchunk), s) in
                        buf.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(c)
                    {
                        bchunk.iter_mut().zip(gchunk).for_each(|(o, v)| *o += v * s);
                    }
                }
                let ad = self.data(*a);
                let buf = buf!(*col);
                for (r, o) in buf.iter_mut().enumerate() {
                    let base = r * a.cols;
                    *o += (0..a.cols).map(|k| g[base + k] * ad[base + k]).sum::<f64>();
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                let buf = buf!(*a);
                buf.iter_mut().zip(g).for_each(|(o, v)| *o += s * v);
            }
            Op::Relu(a) => {
                let ad = self.data(*a);
                let buf = buf!(*a);
                for ((o, v), x) in buf.iter_mut().zip(g).zip(ad) {
                    if *x > 0.0 {
                        *o += v;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                let buf = buf!(*a);
                for ((o, v), s) in buf.iter_mut().zip(g).zip(y) {
                    *o += v * s * (1.0 - s);
                }
            }
            Op::Reciprocal(a) => {
                let y = &node.value.data;
                let buf = buf!(*a);
                for ((o, v), r) in buf.iter_mut().zip(g).zip(y) {
                    *o -= v * r * r;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols;
                let mut offset = 0;
                for p in parts {
                    if acc(*p, grads).is_some() {
                        let buf = grads[p.id].as_mut().unwrap();
                        for r in 0..p.rows {
                            let src = &g[r * total + offset..r * total + offset + p.cols];
                            buf[r * p.cols..(r + 1) * p.cols]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, v)| *o += v);
                        }
                    }
                    offset += p.cols;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = x.cols.max(1);
                if acc(*bias, grads).is_some() {
                    let buf = grads[bias.id].as_mut().unwrap();
                    for chunk in g.chunks_exact(n) {
                        buf.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
                    }
                }
                if acc(*gain, grads).is_some() {
                    let buf = grads[gain.id].as_mut().unwrap();
                    for (gc, hc) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for k in 0..n {
                            buf[k] += gc[k] * hc[k];
                        }
                    }
                }
                let gd = self.data(*gain);
                let buf = buf!(*x);
                let nf = n as f64;
                for (r, (gc, hc)) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate() {
                    // dxhat = g * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for k in 0..n {
                        let d = gc[k] * gd[k];
                        m1 += d;
                        m2 += d * hc[k];
                    }
                    m1 /= nf;
                    m2 /= nf;
                    let is = inv_std[r];
                    for k in 0..n {
                        buf[r * n + k] += is * (gc[k] * gd[k] - m1 - hc[k] * m2);
                    }
                }
            }
            Op::GatherRows(x, index) => {
                let c = x.cols;
                let buf = buf!(*x);
                for (k, &src) in index.iter().enumerate() {
                    for j in 0..c {
                        buf[src * c + j] += g[k * c + j];
                    }
                }
            }
            Op::ScatterAddRows(x, index) => {
                let c = x.cols;
                let buf = buf!(*x);
                for (k, &dst) in index.iter().enumerate() {
                    for j in 0..c {
                        buf[k * c + j] += g[dst * c + j];
                    }
                }
            }
            Op::SegmentSoftmax(x, bounds) => {
                let c = x.cols;
                let y = &node.value.data;
                let buf = buf!(*x);
                for w in bounds.windows(2) {
                    for col in 0..c {
                        let dot: f64 = (w[0]..w[1]).map(|r| g[r * c + col] * y[r * c + col]).sum();
                        for r in w[0]..w[1] {
                            let i = r * c + col;
                            buf[i] += y[i] * (g[i] - dot);
                        }
                    }
                }
            }
            Op::SumRows(x) => {
                let c = x.cols.max(1);
                let buf = buf!(*x);
                for chunk in buf.chunks_exact_mut(c) {
                    chunk.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                let buf = buf!(*x);
                buf.iter_mut().for_each(|o| *o += s);
            }
            Op::Mse(p, t) => {
                let n = (p.rows * p.cols).max(1) as f64;
                let scale = 2.0 * g[0] / n;
                let (pd, td) = (self.data(*p), self.data(*t));
                for (who, sign) in [(*p, 1.0), (*t, -1.0)] {
                    if acc(who, grads).is_some() {
                        let buf = grads[who.id].as_mut().unwrap();
                        for ((o, a), b) in buf.iter_mut().zip(pd).zip(td) {
                            *o += sign * scale * (a - b);
                        }
                    }
                }
            }
            Op::StraightThrough(soft) => {
                let buf = buf!(*soft);
                buf.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
        }
    }
}

/// Recycles gradient buffers of interior nodes within one backward sweep.
#[derive(Default)]
struct BufferPool {
    free: std::collections::HashMap<usize, Vec<Vec<f64>>>,
}

impl BufferPool {
    fn take(&mut self, len: usize) -> Vec<f64> {
        match self.free.get_mut(&len).and_then(Vec::pop) {
            Some(mut b) => {
                b.fill(0.0);
                b
            }
            None => vec![0.0; len],
        }
    }

    fn give(&mut self, b: Vec<f64>) {
        self.free.entry(b.len()).or_default().push(b);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row boundaries of each run of equal ids in a sorted id list.
fn segment_bounds(ids: &[usize]) -> Vec<usize> {
    let mut bounds = vec![0];
    for k in 1..ids.len() {
        if ids[k] != ids[k - 1] {
            bounds.push(k);
        }
    }
    if !ids.is_empty() {
        bounds.push(ids.len());
    }
    bounds
}

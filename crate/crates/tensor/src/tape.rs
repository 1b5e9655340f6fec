use std::rc::Rc;

use crate::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `x[n×d] + b[1×d]` with the row broadcast over all rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    MaskedSoftmax(Var, Rc<[bool]>),
    NormalizeRows(Var, Rc<[bool]>, f64),
    ScatterDense(Var, Rc<[(usize, usize)]>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Nodes are appended in evaluation order, which is already a
/// topological order of the DAG.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to any recorded value; `None` when unreached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a registered parameter. Parameters the loss never reached
    /// get an all-zero tensor of the parameter's shape.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let (_, var) = self.params.iter().find(|(p, _)| *p == id)?;
        Some(
            self.wrt(*var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0])),
        )
    }

    /// Gradients for every parameter of `store`, in store order.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                self.param(id)
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: vec![a.rows(), a.cols()],
        right: vec![b.rows(), b.cols()],
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFiniteValue { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a value that receives no parameter gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push("constant", value, Op::Leaf)
    }

    /// Records a trainable leaf tied to `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var, TensorError> {
        let v = self.push("param", value, Op::Leaf)?;
        self.params.push((id, v));
        Ok(v)
    }

    /// Registers every parameter of `store` and returns their vars in store order.
    pub fn params_from(&mut self, store: &ParamStore) -> Result<Vec<Var>, TensorError> {
        store
            .ids()
            .map(|id| self.param(id, store.get(id).clone()))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(mismatch("add", x, y));
        }
        let out = x.zip(y, |p, q| p + q);
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(mismatch("sub", x, y));
        }
        let out = x.zip(y, |p, q| p - q);
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(mismatch("add_row", xv, bv));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        self.push("add_row", out, Op::AddRow(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(mismatch("mul", x, y));
        }
        let out = x.zip(y, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v + c);
        self.push("add_scalar", out, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(f64::ln);
        self.push("log", out, Op::Log(x))
    }

    /// Elementwise clamp; the gradient is zero where the input was clipped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push("clamp", out, Op::Clamp(x, lo, hi))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).transposed();
        self.push("transpose", out, Op::Transpose(x))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= xv.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: xv.rows(),
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(idx.len(), cols, data)?;
        self.push("gather_rows", out, Op::GatherRows(x, idx.into()))
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                len: xv.rows(),
            });
        }
        let cols = xv.cols();
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::matrix(len, cols, data)?;
        self.push("slice_rows", out, Op::SliceRows(x, start))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    /// Sum over columns: `n×d → n×1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let sums: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        self.push("row_sum", Tensor::column(&sums), Op::RowSum(x))
    }

    /// Row-wise softmax restricted to `mask` (row-major, same shape as `x`).
    /// Rows with an empty mask produce all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<[bool]>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(TensorError::MaskLength {
                expected: xv.len(),
                got: mask.len(),
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for c in 0..cols {
                if m[c] {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    total += e;
                }
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= total;
            }
        }
        let out = Tensor::matrix(rows, cols, out)?;
        self.push("masked_softmax", out, Op::MaskedSoftmax(x, mask))
    }

    /// Normalizes non-negative weights to sum to one over each row's mask.
    ///
    /// A row whose masked sum is at most `eps` falls back to uniform weights
    /// over the mask (no gradient flows through that row). Rows with an empty
    /// mask stay zero.
    pub fn normalize_rows(&mut self, x: Var, mask: Rc<[bool]>, eps: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(TensorError::MaskLength {
                expected: xv.len(),
                got: mask.len(),
            });
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let m = &mask[r * cols..(r + 1) * cols];
            let count = m.iter().filter(|&&k| k).count();
            if count == 0 {
                continue;
            }
            let total: f64 = (0..cols).filter(|&c| m[c]).map(|c| xv.get(r, c)).sum();
            for c in 0..cols {
                if m[c] {
                    out[r * cols + c] = if total > eps {
                        xv.get(r, c) / total
                    } else {
                        1.0 / count as f64
                    };
                }
            }
        }
        let out = Tensor::matrix(rows, cols, out)?;
        self.push("normalize_rows", out, Op::NormalizeRows(x, mask, eps))
    }

    /// Scatters an `E×1` column into an `n×n` matrix at the given (row, col)
    /// positions, summing duplicates.
    pub fn scatter_dense(&mut self, values: Var, at: Rc<[(usize, usize)]>, n: usize) -> Result<Var, TensorError> {
        let vv = self.value(values);
        if vv.len() != at.len() {
            return Err(TensorError::MaskLength {
                expected: at.len(),
                got: vv.len(),
            });
        }
        let mut out = vec![0.0; n * n];
        for (k, &(r, c)) in at.iter().enumerate() {
            if r >= n || c >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_dense",
                    index: r.max(c),
                    len: n,
                });
            }
            out[r * n + c] += vv.data()[k];
        }
        let out = Tensor::matrix(n, n, out)?;
        self.push("scatter_dense", out, Op::ScatterDense(values, at))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), TensorError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.matmul(&bv.transposed())?);
                accumulate(grads, *b, av.transposed().matmul(g)?);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::AddRow(x, bias) => {
                accumulate(grads, *x, g.clone());
                let cols = g.cols();
                let mut gb = Tensor::zeros(self.value(*bias).shape());
                for (i, v) in g.data().iter().enumerate() {
                    gb.data_mut()[i % cols] += v;
                }
                accumulate(grads, *bias, gb);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.zip(bv, |p, q| p * q));
                accumulate(grads, *b, g.zip(av, |p, q| p * q));
            }
            Op::Scale(x, f) => accumulate(grads, *x, g.map(|v| v * f)),
            Op::AddScalar(x) => accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, g.zip(xv, |gv, v| if v > 0.0 { gv } else { 0.0 }));
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                accumulate(grads, *x, g.zip(xv, |gv, v| if v > 0.0 { gv } else { slope * gv }));
            }
            Op::Sigmoid(x) => accumulate(grads, *x, g.zip(out, |gv, s| gv * s * (1.0 - s))),
            Op::Log(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, g.zip(xv, |gv, v| gv / v));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                accumulate(
                    grads,
                    *x,
                    g.zip(xv, |gv, v| if v < *lo || v > *hi { 0.0 } else { gv }),
                );
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transposed()),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut gp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    accumulate(grads, p, Tensor::matrix(rows, pc, gp)?);
                    offset += pc;
                }
            }
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::matrix(xv.rows(), cols, vec![0.0; xv.len()])?;
                for (k, &i) in idx.iter().enumerate() {
                    let src = g.row(k);
                    let dst = &mut gx.data_mut()[i * cols..(i + 1) * cols];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::matrix(xv.rows(), cols, vec![0.0; xv.len()])?;
                gx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), gv));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gv = g.data()[0] / xv.len() as f64;
                accumulate(grads, *x, Tensor::filled(xv.shape(), gv));
            }
            Op::RowSum(x) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let data = (0..xv.len()).map(|i| g.data()[i / cols]).collect();
                accumulate(grads, *x, Tensor::matrix(xv.rows(), cols, data)?);
            }
            Op::MaskedSoftmax(x, mask) => {
                let (rows, cols) = (out.rows(), out.cols());
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let s = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = (0..cols).filter(|&c| mask[r * cols + c]).map(|c| s[c] * gr[c]).sum();
                    for c in 0..cols {
                        if mask[r * cols + c] {
                            gx[r * cols + c] = s[c] * (gr[c] - dot);
                        }
                    }
                }
                accumulate(grads, *x, Tensor::matrix(rows, cols, gx)?);
            }
            Op::NormalizeRows(x, mask, eps) => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let m = &mask[r * cols..(r + 1) * cols];
                    let total: f64 = (0..cols).filter(|&c| m[c]).map(|c| xv.get(r, c)).sum();
                    if total <= *eps {
                        continue;
                    }
                    let gr = g.row(r);
                    let dot: f64 = (0..cols).filter(|&c| m[c]).map(|c| gr[c] * out.get(r, c)).sum();
                    for c in 0..cols {
                        if m[c] {
                            gx[r * cols + c] = (gr[c] - dot) / total;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::matrix(rows, cols, gx)?);
            }
            Op::ScatterDense(values, at) => {
                let n = out.cols();
                let data: Vec<f64> = at.iter().map(|&(r, c)| g.data()[r * n + c]).collect();
                accumulate(grads, *values, Tensor::column(&data));
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

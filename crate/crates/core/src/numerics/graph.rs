//! The differentiation tape.
//!
//! Forward calls append [`Node`]s to the graph and return [`ValueId`]
//! handles; inputs always precede outputs, so reverse insertion order is a
//! valid reverse-topological order for the backward sweep. Gradients
//! accumulate across repeated [`Graph::backward`] calls until
//! [`Graph::zero_grad`] clears them.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Values below this floor are clamped inside `ln` so that saturated
/// probabilities yield a large finite loss with zero gradient instead of
/// `-inf`/NaN.
pub const LN_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

/// Provenance record: which primitive produced a node, and from what.
#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Matmul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    /// Matrix plus a broadcast row vector.
    AddRow(ValueId, ValueId),
    /// Matrix times a broadcast column vector.
    MulCol(ValueId, ValueId),
    /// `mul * x + add`, elementwise with constant coefficients. The shift
    /// is kept only as provenance; it has no gradient.
    Affine {
        input: ValueId,
        mul: F,
        #[allow(dead_code)]
        add: F,
    },
    Sigmoid(ValueId),
    Tanh(ValueId),
    /// Row softmax; `mask[i]` false freezes an entry at probability zero.
    Softmax { input: ValueId, mask: Option<Vec<bool>> },
    ConcatCols(Vec<ValueId>),
    SliceCols { input: ValueId, start: usize, len: usize },
    /// Row gather, e.g. embedding lookup of a token-id column.
    GatherRows { input: ValueId, rows: Vec<usize> },
    /// `out[i] = input[i, cols[i]]`.
    TakePerRow { input: ValueId, cols: Vec<usize> },
    L2NormRows(ValueId),
    Ln(ValueId),
    Sum(ValueId),
    MaskedSum { input: ValueId, mask: Vec<F> },
    MaskedMean { input: ValueId, mask: Vec<F>, mask_total: F },
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    op: Op<F>,
}

/// Append-only computation tape over dense tensors.
#[derive(Debug, Default)]
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    // Gradient slots live apart from the nodes so the backward sweep can
    // read node data while writing gradients. Lazily allocated.
    grads: Vec<Option<Vec<F>>>,
}

/// `(rows, cols)` view of a rank-1 or rank-2 shape.
fn dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("rank {} tensor in graph", shape.len()),
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: Op<F>) -> ValueId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, op });
        self.grads.push(None);
        ValueId(self.nodes.len() - 1)
    }

    /// Insert a leaf (parameter or constant).
    pub fn leaf(&mut self, t: Tensor<F>) -> ValueId {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    pub fn scalar(&mut self, x: F) -> ValueId {
        self.push(vec![1], vec![x], Op::Leaf)
    }

    pub fn data(&self, id: ValueId) -> &[F] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn item(&self, id: ValueId) -> F {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: ValueId) -> Option<&[F]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient of a leaf as a tensor; zeros when no path reached it.
    pub fn grad_tensor(&self, id: ValueId) -> Tensor<F> {
        let shape = self.nodes[id.0].shape.clone();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn shape_err(op: &'static str, detail: String) -> Error {
        Error::Shape { op, detail }
    }

    // ── Primitives ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        matmul_acc(&mut out, &self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip("add", a, b, |x, y| x + y, |a2, b2| Op::Add(a2, b2))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip("sub", a, b, |x, y| x - y, |a2, b2| Op::Sub(a2, b2))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.zip("mul", a, b, |x, y| x * y, |a2, b2| Op::Mul(a2, b2))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(F, F) -> F,
        op: impl Fn(ValueId, ValueId) -> Op<F>,
    ) -> Result<ValueId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Self::shape_err(name, format!("{sa:?} vs {sb:?}")));
        }
        let shape = sa.clone();
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(shape, data, op(a, b)))
    }

    /// `a[m,n] + row[n]`, broadcasting the row over every row of `a`.
    pub fn add_row(&mut self, a: ValueId, row: ValueId) -> Result<ValueId> {
        let shape = self.nodes[a.0].shape.clone();
        let (m, n) = dims(&shape);
        if self.nodes[row.0].data.len() != n {
            return Err(Self::shape_err(
                "add_row",
                format!("{shape:?} + row {:?}", self.nodes[row.0].shape),
            ));
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let rd = &self.nodes[row.0].data;
            let arow = &self.nodes[a.0].data[i * n..(i + 1) * n];
            data.extend(arow.iter().zip(rd).map(|(&x, &y)| x + y));
        }
        Ok(self.push(shape, data, Op::AddRow(a, row)))
    }

    /// `out[i, j] = a[i, j] * col[i]`; `col` must have one entry per row.
    pub fn mul_col(&mut self, a: ValueId, col: ValueId) -> Result<ValueId> {
        let shape = self.nodes[a.0].shape.clone();
        let (m, n) = dims(&shape);
        if self.nodes[col.0].data.len() != m {
            return Err(Self::shape_err(
                "mul_col",
                format!("{shape:?} * col of {}", self.nodes[col.0].data.len()),
            ));
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let c = self.nodes[col.0].data[i];
            let arow = &self.nodes[a.0].data[i * n..(i + 1) * n];
            data.extend(arow.iter().map(|&x| x * c));
        }
        Ok(self.push(shape, data, Op::MulCol(a, col)))
    }

    /// Elementwise `mul * x + add` with constant coefficients.
    pub fn affine(&mut self, input: ValueId, mul: F, add: F) -> ValueId {
        let shape = self.nodes[input.0].shape.clone();
        let data = self.nodes[input.0].data.iter().map(|&x| mul * x + add).collect();
        self.push(shape, data, Op::Affine { input, mul, add })
    }

    pub fn sigmoid(&mut self, input: ValueId) -> ValueId {
        self.unary(input, |x| F::one() / (F::one() + (-x).exp()), Op::Sigmoid(input))
    }

    pub fn tanh(&mut self, input: ValueId) -> ValueId {
        self.unary(input, |x| x.tanh(), Op::Tanh(input))
    }

    /// Natural log, floored at [`LN_FLOOR`].
    pub fn ln(&mut self, input: ValueId) -> ValueId {
        let floor = F::from_f64(LN_FLOOR);
        self.unary(input, |x| x.max(floor).ln(), Op::Ln(input))
    }

    fn unary(&mut self, input: ValueId, f: impl Fn(F) -> F, op: Op<F>) -> ValueId {
        let shape = self.nodes[input.0].shape.clone();
        let data = self.nodes[input.0].data.iter().map(|&x| f(x)).collect();
        self.push(shape, data, op)
    }

    /// Row-wise softmax over the last axis; a rank-1 input is one row.
    pub fn softmax(&mut self, input: ValueId) -> Result<ValueId> {
        self.softmax_impl(input, None)
    }

    /// Softmax with entries masked out; every row needs at least one live
    /// entry.
    pub fn masked_softmax(&mut self, input: ValueId, mask: &[bool]) -> Result<ValueId> {
        if mask.len() != self.nodes[input.0].data.len() {
            return Err(Self::shape_err(
                "masked_softmax",
                format!("mask of {} over {:?}", mask.len(), self.nodes[input.0].shape),
            ));
        }
        self.softmax_impl(input, Some(mask.to_vec()))
    }

    fn softmax_impl(&mut self, input: ValueId, mask: Option<Vec<bool>>) -> Result<ValueId> {
        let shape = self.nodes[input.0].shape.clone();
        let (rows, cols) = dims(&shape);
        if cols == 0 {
            return Err(Self::shape_err("softmax", format!("{shape:?}")));
        }
        let mut data = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let x = &self.nodes[input.0].data[r * cols..(r + 1) * cols];
            let live = |j: usize| mask.as_ref().is_none_or(|m| m[r * cols + j]);
            let mut max = F::neg_infinity();
            for (j, &xj) in x.iter().enumerate() {
                if live(j) && xj > max {
                    max = xj;
                }
            }
            if max == F::neg_infinity() {
                return Err(Error::AllMasked { row: r });
            }
            let mut total = F::zero();
            for j in 0..cols {
                if live(j) {
                    let e = (x[j] - max).exp();
                    data[r * cols + j] = e;
                    total += e;
                }
            }
            for j in 0..cols {
                data[r * cols + j] /= total;
            }
        }
        Ok(self.push(shape, data, Op::Softmax { input, mask }))
    }

    /// Concatenate along the last axis. All inputs must share rank and row
    /// count.
    pub fn concat_cols(&mut self, inputs: &[ValueId]) -> Result<ValueId> {
        if inputs.is_empty() {
            return Err(Error::EmptySequence { op: "concat_cols" });
        }
        let rank = self.nodes[inputs[0].0].shape.len();
        let rows = dims(&self.nodes[inputs[0].0].shape).0;
        let mut total_cols = 0;
        for &id in inputs {
            let s = &self.nodes[id.0].shape;
            let (r, c) = dims(s);
            if s.len() != rank || r != rows {
                return Err(Self::shape_err("concat_cols", format!("{s:?} with {rows} rows expected")));
            }
            total_cols += c;
        }
        let shape = if rank == 1 { vec![total_cols] } else { vec![rows, total_cols] };
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &id in inputs {
                let c = dims(&self.nodes[id.0].shape).1;
                data.extend_from_slice(&self.nodes[id.0].data[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(shape, data, Op::ConcatCols(inputs.to_vec())))
    }

    pub fn slice_cols(&mut self, input: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let shape = self.nodes[input.0].shape.clone();
        let (rows, cols) = dims(&shape);
        if start + len > cols {
            return Err(Self::shape_err(
                "slice_cols",
                format!("[{start}, {}) of {shape:?}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.nodes[input.0].data[r * cols + start..r * cols + start + len]);
        }
        let out_shape = if shape.len() == 1 { vec![len] } else { vec![rows, len] };
        Ok(self.push(out_shape, data, Op::SliceCols { input, start, len }))
    }

    /// Embedding-style row gather: `out[i, :] = input[rows[i], :]`.
    pub fn gather_rows(&mut self, input: ValueId, rows: &[usize]) -> Result<ValueId> {
        let shape = &self.nodes[input.0].shape;
        if shape.len() != 2 {
            return Err(Self::shape_err("gather_rows", format!("{shape:?} is not a matrix")));
        }
        let (m, n) = (shape[0], shape[1]);
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::TokenOutOfRange { id: r as u32, vocab: m });
            }
            data.extend_from_slice(&self.nodes[input.0].data[r * n..(r + 1) * n]);
        }
        Ok(self.push(vec![rows.len(), n], data, Op::GatherRows { input, rows: rows.to_vec() }))
    }

    /// `out[i] = input[i, cols[i]]` — one entry per row.
    pub fn take_per_row(&mut self, input: ValueId, cols: &[usize]) -> Result<ValueId> {
        let shape = &self.nodes[input.0].shape;
        let (m, n) = dims(shape);
        if cols.len() != m {
            return Err(Self::shape_err(
                "take_per_row",
                format!("{} indices for {m} rows", cols.len()),
            ));
        }
        let mut data = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(Error::TokenOutOfRange { id: c as u32, vocab: n });
            }
            data.push(self.nodes[input.0].data[i * n + c]);
        }
        Ok(self.push(vec![m], data, Op::TakePerRow { input, cols: cols.to_vec() }))
    }

    /// Euclidean norm of each row; a rank-1 input yields a scalar.
    pub fn l2_norm_rows(&mut self, input: ValueId) -> ValueId {
        let shape = self.nodes[input.0].shape.clone();
        let (rows, cols) = dims(&shape);
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &self.nodes[input.0].data[r * cols..(r + 1) * cols];
            data.push(x.iter().map(|&v| v * v).sum::<F>().sqrt());
        }
        self.push(vec![rows], data, Op::L2NormRows(input))
    }

    pub fn sum(&mut self, input: ValueId) -> ValueId {
        let total = self.nodes[input.0].data.iter().copied().sum();
        self.push(vec![1], vec![total], Op::Sum(input))
    }

    /// `sum(input * mask)` with a constant mask of the same element count.
    pub fn masked_sum(&mut self, input: ValueId, mask: &[F]) -> Result<ValueId> {
        if mask.len() != self.nodes[input.0].data.len() {
            return Err(Self::shape_err(
                "masked_sum",
                format!("mask of {} over {:?}", mask.len(), self.nodes[input.0].shape),
            ));
        }
        let total = self.nodes[input.0].data.iter().zip(mask).map(|(&x, &m)| x * m).sum();
        Ok(self.push(vec![1], vec![total], Op::MaskedSum { input, mask: mask.to_vec() }))
    }

    /// Mean over the unmasked entries; rejects an all-zero mask.
    pub fn masked_mean(&mut self, input: ValueId, mask: &[F]) -> Result<ValueId> {
        if mask.len() != self.nodes[input.0].data.len() {
            return Err(Self::shape_err(
                "masked_mean",
                format!("mask of {} over {:?}", mask.len(), self.nodes[input.0].shape),
            ));
        }
        let mask_total: F = mask.iter().copied().sum();
        if mask_total == F::zero() {
            return Err(Error::EmptyInput { what: "masked_mean mask" });
        }
        let total: F = self.nodes[input.0].data.iter().zip(mask).map(|(&x, &m)| x * m).sum();
        Ok(self.push(
            vec![1],
            vec![total / mask_total],
            Op::MaskedMean { input, mask: mask.to_vec(), mask_total },
        ))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Accumulate `∂root/∂v` into the gradient slot of every value reachable
    /// from `root`. Each call propagates a fresh seed of 1 through the
    /// graph, so repeated calls without [`Graph::zero_grad`] add up.
    pub fn backward(&mut self, root: ValueId) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::NonScalarRoot { shape: self.nodes[root.0].shape.clone() });
        }
        // Gradients for this pass live in a scratch table and are folded
        // into the persistent slots at the end; propagating through the
        // persistent slots directly would re-count earlier passes.
        let mut pass: Vec<Option<Vec<F>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![F::one()]);

        for i in (0..=root.0).rev() {
            if pass[i].is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g_out = pass[i].take().unwrap();
            self.backprop_node(i, &g_out, &mut pass);
            pass[i] = Some(g_out);
        }

        for (i, contribution) in pass.into_iter().enumerate() {
            if let Some(c) = contribution {
                let slot = self.grads[i]
                    .get_or_insert_with(|| vec![F::zero(); c.len()]);
                for (s, v) in slot.iter_mut().zip(&c) {
                    *s += *v;
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[F], pass: &mut [Option<Vec<F>>]) {
        let numel = |id: ValueId| self.nodes[id.0].data.len();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let (adata, bdata) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                acc_into(pass, numel(*a), *a, |ga| matmul_nt_acc(ga, g, bdata, m, k, n));
                acc_into(pass, numel(*b), *b, |gb| matmul_tn_acc(gb, adata, g, m, k, n));
            }
            Op::Add(a, b) => {
                acc_into(pass, numel(*a), *a, |ga| axpy(ga, F::one(), g));
                acc_into(pass, numel(*b), *b, |gb| axpy(gb, F::one(), g));
            }
            Op::Sub(a, b) => {
                acc_into(pass, numel(*a), *a, |ga| axpy(ga, F::one(), g));
                acc_into(pass, numel(*b), *b, |gb| axpy(gb, -F::one(), g));
            }
            Op::Mul(a, b) => {
                let (adata, bdata) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                acc_into(pass, numel(*a), *a, |ga| {
                    for ((ga_i, &g_i), &b_i) in ga.iter_mut().zip(g).zip(bdata) {
                        *ga_i += g_i * b_i;
                    }
                });
                acc_into(pass, numel(*b), *b, |gb| {
                    for ((gb_i, &g_i), &a_i) in gb.iter_mut().zip(g).zip(adata) {
                        *gb_i += g_i * a_i;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let n = self.nodes[row.0].data.len();
                acc_into(pass, numel(*a), *a, |ga| axpy(ga, F::one(), g));
                acc_into(pass, n, *row, |gr| {
                    for chunk in g.chunks_exact(n) {
                        for (gr_j, &g_j) in gr.iter_mut().zip(chunk) {
                            *gr_j += g_j;
                        }
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (m, n) = dims(&self.nodes[a.0].shape);
                let (adata, cdata) = (&self.nodes[a.0].data, &self.nodes[col.0].data);
                acc_into(pass, numel(*a), *a, |ga| {
                    for i in 0..m {
                        let c = cdata[i];
                        for j in 0..n {
                            ga[i * n + j] += g[i * n + j] * c;
                        }
                    }
                });
                acc_into(pass, m, *col, |gc| {
                    for i in 0..m {
                        let mut dot = F::zero();
                        for j in 0..n {
                            dot += g[i * n + j] * adata[i * n + j];
                        }
                        gc[i] += dot;
                    }
                });
            }
            Op::Affine { input, mul, .. } => {
                acc_into(pass, numel(*input), *input, |gi| axpy(gi, *mul, g));
            }
            Op::Sigmoid(input) => {
                let y = &self.nodes[idx].data;
                acc_into(pass, numel(*input), *input, |gi| {
                    for ((gi_i, &g_i), &y_i) in gi.iter_mut().zip(g).zip(y) {
                        *gi_i += g_i * y_i * (F::one() - y_i);
                    }
                });
            }
            Op::Tanh(input) => {
                let y = &self.nodes[idx].data;
                acc_into(pass, numel(*input), *input, |gi| {
                    for ((gi_i, &g_i), &y_i) in gi.iter_mut().zip(g).zip(y) {
                        *gi_i += g_i * (F::one() - y_i * y_i);
                    }
                });
            }
            Op::Softmax { input, mask } => {
                let y = &self.nodes[idx].data;
                let (rows, cols) = dims(&self.nodes[input.0].shape);
                acc_into(pass, numel(*input), *input, |gi| {
                    for r in 0..rows {
                        let off = r * cols;
                        let mut dot = F::zero();
                        for j in 0..cols {
                            dot += g[off + j] * y[off + j];
                        }
                        for j in 0..cols {
                            if mask.as_ref().is_none_or(|m| m[off + j]) {
                                gi[off + j] += y[off + j] * (g[off + j] - dot);
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(inputs) => {
                let rows = dims(&self.nodes[inputs[0].0].shape).0;
                let total_cols: usize =
                    inputs.iter().map(|id| dims(&self.nodes[id.0].shape).1).sum();
                let mut start = 0;
                for id in inputs {
                    let c = dims(&self.nodes[id.0].shape).1;
                    acc_into(pass, numel(*id), *id, |gi| {
                        for r in 0..rows {
                            for j in 0..c {
                                gi[r * c + j] += g[r * total_cols + start + j];
                            }
                        }
                    });
                    start += c;
                }
            }
            Op::SliceCols { input, start, len } => {
                let (rows, cols) = dims(&self.nodes[input.0].shape);
                acc_into(pass, numel(*input), *input, |gi| {
                    for r in 0..rows {
                        for j in 0..*len {
                            gi[r * cols + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::GatherRows { input, rows } => {
                let n = self.nodes[input.0].shape[1];
                acc_into(pass, numel(*input), *input, |gi| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            gi[r * n + j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::TakePerRow { input, cols } => {
                let n = dims(&self.nodes[input.0].shape).1;
                acc_into(pass, numel(*input), *input, |gi| {
                    for (i, &c) in cols.iter().enumerate() {
                        gi[i * n + c] += g[i];
                    }
                });
            }
            Op::L2NormRows(input) => {
                let (rows, cols) = dims(&self.nodes[input.0].shape);
                let norms = &self.nodes[idx].data;
                let x = &self.nodes[input.0].data;
                acc_into(pass, numel(*input), *input, |gi| {
                    for r in 0..rows {
                        // Zero subgradient at the origin.
                        if norms[r] == F::zero() {
                            continue;
                        }
                        let scale = g[r] / norms[r];
                        for j in 0..cols {
                            gi[r * cols + j] += scale * x[r * cols + j];
                        }
                    }
                });
            }
            Op::Ln(input) => {
                let floor = F::from_f64(LN_FLOOR);
                let x = &self.nodes[input.0].data;
                acc_into(pass, numel(*input), *input, |gi| {
                    for ((gi_i, &g_i), &x_i) in gi.iter_mut().zip(g).zip(x) {
                        if x_i > floor {
                            *gi_i += g_i / x_i;
                        }
                    }
                });
            }
            Op::Sum(input) => {
                acc_into(pass, numel(*input), *input, |gi| {
                    for gi_i in gi.iter_mut() {
                        *gi_i += g[0];
                    }
                });
            }
            Op::MaskedSum { input, mask } => {
                acc_into(pass, numel(*input), *input, |gi| {
                    for (gi_i, &m_i) in gi.iter_mut().zip(mask) {
                        *gi_i += g[0] * m_i;
                    }
                });
            }
            Op::MaskedMean { input, mask, mask_total } => {
                acc_into(pass, numel(*input), *input, |gi| {
                    for (gi_i, &m_i) in gi.iter_mut().zip(mask) {
                        *gi_i += g[0] * m_i / *mask_total;
                    }
                });
            }
        }
    }
}

/// Accumulate into the scratch slot for `id`, allocating zeros on first use.
fn acc_into<F: Scalar>(
    pass: &mut [Option<Vec<F>>],
    numel: usize,
    id: ValueId,
    f: impl FnOnce(&mut [F]),
) {
    let slot = pass[id.0].get_or_insert_with(|| vec![F::zero(); numel]);
    f(slot);
}

fn axpy<F: Scalar>(dst: &mut [F], a: F, x: &[F]) {
    for (d, &x_i) in dst.iter_mut().zip(x) {
        *d += a * x_i;
    }
}

/// `dst += a[m,k] · b[k,n]`, ikj order so the inner loop streams rows.
fn matmul_acc<F: Scalar>(dst: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &mut dst[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (d, &bv) in drow.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
}

/// `dst[m,k] += g[m,n] · b[k,n]ᵀ`.
fn matmul_nt_acc<F: Scalar>(dst: &mut [F], g: &[F], b: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut dot = F::zero();
            for (&g_j, &b_j) in grow.iter().zip(brow) {
                dot += g_j * b_j;
            }
            dst[i * k + p] += dot;
        }
    }
}

/// `dst[k,n] += a[m,k]ᵀ · g[m,n]`.
fn matmul_tn_acc<F: Scalar>(dst: &mut [F], a: &[F], g: &[F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let drow = &mut dst[p * n..(p + 1) * n];
            for (d, &g_j) in drow.iter_mut().zip(grow) {
                *d += av * g_j;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn softmax_symmetry() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_close(g.data(y), &[0.5, 0.5], 1e-12);
    }

    #[test]
    fn softmax_hand_value() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_close(g.data(y), &[0.7311, 0.2689], 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64) * 0.37 - 2.0).collect()));
        let y = g.softmax(x).unwrap();
        for r in 0..3 {
            let s: f64 = g.data(y)[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(g.data(y)[r * 4..(r + 1) * 4].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn masked_softmax_rejects_dead_row() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let err = g.masked_softmax(x, &[true, true, false, false]).unwrap_err();
        assert!(matches!(err, Error::AllMasked { row: 1 }));
    }

    #[test]
    fn l2_norm_hand_value() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let n = g.l2_norm_rows(x);
        assert_close(g.data(n), &[5.0], 1e-12);
        g.backward(n).unwrap();
        assert_close(g.grad(x).unwrap(), &[0.6, 0.8], 1e-12);
    }

    #[test]
    fn product_rule() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.scalar(2.0);
        let y = g.scalar(3.0);
        let p = g.mul(x, y).unwrap();
        g.backward(p).unwrap();
        assert_close(g.grad(x).unwrap(), &[3.0], 1e-12);
        assert_close(g.grad(y).unwrap(), &[2.0], 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 7.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_close(g.grad(x).unwrap(), &[1.0, 1.0, 1.0], 1e-12);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_close(g.grad(x).unwrap(), &[2.0, 2.0], 1e-12);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_forward() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]));
        let c = g.matmul(a, b).unwrap();
        assert_close(g.data(c), &[19.0, 22.0, 43.0, 50.0], 1e-12);
    }

    #[test]
    fn gather_and_take_round_trip() {
        let mut g: Graph<f64> = Graph::new();
        let emb = g.leaf(Tensor::matrix(3, 2, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]));
        let got = g.gather_rows(emb, &[2, 0, 2]).unwrap();
        assert_close(g.data(got), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0], 1e-12);
        let picked = g.take_per_row(got, &[1, 0, 0]).unwrap();
        assert_close(g.data(picked), &[21.0, 0.0, 20.0], 1e-12);
        let s = g.sum(picked);
        g.backward(s).unwrap();
        // Row 2 of the table was gathered twice; only its column hits count.
        assert_close(g.grad(emb).unwrap(), &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0], 1e-12);
    }

    #[test]
    fn ln_floors_at_zero() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0]));
        let y = g.ln(x);
        assert!(g.data(y)[0].is_finite());
        g.backward(y).unwrap();
        assert_close(g.grad(x).unwrap(), &[0.0], 1e-12);
    }

    #[test]
    fn masked_sum_and_mean() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let mask = [1.0, 0.0, 1.0, 0.0];
        let s = g.masked_sum(x, &mask).unwrap();
        assert_close(g.data(s), &[4.0], 1e-12);
        let m = g.masked_mean(x, &mask).unwrap();
        assert_close(g.data(m), &[2.0], 1e-12);
        assert!(g.masked_mean(x, &[0.0; 4]).is_err());
    }

    #[test]
    fn forward_is_reproducible() {
        let run = || {
            let mut g: Graph<f32> = Graph::new();
            let a = g.leaf(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.7, 0.011, -0.5]));
            let b = g.leaf(Tensor::matrix(3, 2, vec![1.5, 0.25, -0.75, 0.33, 0.9, -1.1]));
            let c = g.matmul(a, b).unwrap();
            let t = g.tanh(c);
            let s = g.sum(t);
            g.item(s).to_bits()
        };
        assert_eq!(run(), run());
    }
}

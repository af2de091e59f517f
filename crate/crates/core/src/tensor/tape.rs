use std::collections::HashMap;

use super::{logsumexp_nonempty, matmul_raw, Tensor};
use crate::error::{contract, Error, Result};

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
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations; replaying it in reverse yields gradients.
///
/// Nodes are appended in execution order, so every input precedes the node
/// that consumes it. A tape is single-use per step: call [`Tape::reset`]
/// before recording the next step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<u64, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.bound.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Binds a tensor as a leaf. Binding the same tensor twice returns the
    /// same handle, so shared parameters accumulate one gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        if let Some(&v) = self.bound.get(&t.id()) {
            return v;
        }
        let (rows, cols) = t.dims2();
        let v = self.push(rows, cols, t.values().to_vec(), Op::Leaf, t.requires_grad());
        self.bound.insert(t.id(), v);
        v
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Var> {
        if rows * cols != values.len() || rows == 0 || cols == 0 {
            return Err(Error::Shape {
                op: "constant",
                left: vec![rows, cols],
                right: vec![values.len()],
            });
        }
        Ok(self.push(rows, cols, values, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn row(&self, v: Var, r: usize) -> &[f64] {
        let n = &self.nodes[v.0];
        &n.value[r * n.cols..(r + 1) * n.cols]
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!((n.rows, n.cols), (1, 1), "scalar() on a non-scalar node");
        n.value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("tape node shape")
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        Error::Shape {
            op,
            left: vec![ar, ac],
            right: vec![br, bc],
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(usize, usize, Vec<f64>)> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err(op, a, b));
        }
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((r, c, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c, out) = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(row) != (1, n) {
            return Err(self.shape_err("add_row", x, row));
        }
        let r = self.value(row).to_vec();
        let out: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|xr| xr.iter().zip(&r).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        let rg = self.needs(x) || self.needs(row);
        Ok(self.push(m, n, out, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).iter().map(|v| v * s).collect();
        let rg = self.needs(x);
        self.push(r, c, out, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.needs(x);
        self.push(r, c, out, Op::Relu(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = transpose_raw(self.value(x), r, c);
        let rg = self.needs(x);
        self.push(c, r, out, Op::Transpose(x), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            super::softmax_in_place(row);
        }
        let rg = self.needs(x);
        self.push(r, c, out, Op::SoftmaxRows(x), rg)
    }

    /// Row-wise log-sum-exp, producing an `m x 1` column.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).chunks(c).map(logsumexp_nonempty).collect();
        let rg = self.needs(x);
        self.push(r, 1, out, Op::LogSumExpRows(x), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both `1 x d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (m, d) = self.dims(x);
        if self.dims(gain) != (1, d) {
            return Err(self.shape_err("layer_norm gain", x, gain));
        }
        if self.dims(bias) != (1, d) {
            return Err(self.shape_err("layer_norm bias", x, bias));
        }
        let g = self.value(gain).to_vec();
        let b = self.value(bias).to_vec();
        let mut xhat = Vec::with_capacity(m * d);
        let mut rstd = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * d);
        for row in self.value(x).chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(m, d, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.needs(x);
        self.push(1, 1, vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs(x);
        self.push(1, 1, vec![s], Op::Mean(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat_cols of nothing"))?;
        let rows = self.dims(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != rows) {
            return Err(self.shape_err("concat_cols", first, bad));
        }
        let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.row(p, r));
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat_rows of nothing"))?;
        let cols = self.dims(first).1;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).1 != cols) {
            return Err(self.shape_err("concat_rows", first, bad));
        }
        let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start >= end || end > c {
            return Err(contract(format!("slice_cols {start}..{end} out of range for {c} columns")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.row(x, i)[start..end]);
        }
        let rg = self.needs(x);
        Ok(self.push(r, w, out, Op::SliceCols(x, start), rg))
    }

    /// Stacks the selected rows (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if rows.is_empty() {
            return Err(contract("gather_rows with no indices"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(contract(format!("gather_rows index {bad} out of range for {r} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(self.row(x, i));
        }
        let rg = self.needs(x);
        Ok(self.push(rows.len(), c, out, Op::GatherRows(x, rows.to_vec()), rg))
    }

    /// Picks elements by flat row-major index into a `1 x m` row.
    pub fn gather(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if flat.is_empty() {
            return Err(contract("gather with no indices"));
        }
        if let Some(&bad) = flat.iter().find(|&&i| i >= len) {
            return Err(contract(format!("gather index {bad} out of range for {len} elements")));
        }
        let out = flat.iter().map(|&i| self.value(x)[i]).collect();
        let rg = self.needs(x);
        Ok(self.push(1, flat.len(), out, Op::Gather(x, flat.to_vec()), rg))
    }

    /// Mean cross-entropy of row-wise softmax(`logits`) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: vec![r, c],
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(contract(format!("cross_entropy target {bad} out of range for {c} classes")));
        }
        let mut probs = self.value(logits).to_vec();
        let mut total = 0.0;
        for (row, (orig, &t)) in probs
            .chunks_mut(c)
            .zip(self.value(logits).chunks(c).zip(targets))
        {
            total += logsumexp_nonempty(orig) - orig[t];
            super::softmax_in_place(row);
        }
        let rg = self.needs(logits);
        Ok(self.push(
            1,
            1,
            vec![total / r as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate by
    /// summation into every node that requires them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let (r, c) = self.dims(root);
        if (r, c) != (1, 1) {
            return Err(contract(format!("backward root must be scalar, got {r}x{c}")));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let n = nodes[b.0].cols;
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |d| {
                    for ((d, g), b) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * b;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), a) in d.iter_mut().zip(g).zip(av) {
                        *d += g * a;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let n = node.cols;
                acc(*x, &mut |d| add_into(d, g));
                acc(*row, &mut |d| {
                    for gr in g.chunks(n) {
                        add_into(d, gr);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s);
            }),
            Op::Relu(x) => {
                let out = &node.value;
                acc(*x, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                // node is c x r; input is r x c
                let (rows_in, cols_in) = (nodes[x.0].rows, nodes[x.0].cols);
                acc(*x, &mut |d| {
                    for i in 0..rows_in {
                        for j in 0..cols_in {
                            d[i * cols_in + j] += g[j * rows_in + i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let c = node.cols;
                let y = &node.value;
                acc(*x, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::LogSumExpRows(x) => {
                let c = nodes[x.0].cols;
                let xv = &nodes[x.0].value;
                let out = &node.value;
                acc(*x, &mut |d| {
                    for (r, (dr, xr)) in d.chunks_mut(c).zip(xv.chunks(c)).enumerate() {
                        for (d, xv) in dr.iter_mut().zip(xr) {
                            *d += g[r] * (xv - out[r]).exp();
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let dcols = node.cols;
                let gv = &nodes[gain.0].value;
                acc(*x, &mut |d| {
                    for (r, (dr, (gr, hr))) in d
                        .chunks_mut(dcols)
                        .zip(g.chunks(dcols).zip(xhat.chunks(dcols)))
                        .enumerate()
                    {
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / dcols as f64;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / dcols as f64;
                        for ((d, dh), h) in dr.iter_mut().zip(&dh).zip(hr) {
                            *d += rstd[r] * (dh - mean_dh - h * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |d| {
                    for (gr, hr) in g.chunks(dcols).zip(xhat.chunks(dcols)) {
                        for ((d, g), h) in d.iter_mut().zip(gr).zip(hr) {
                            *d += g * h;
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for gr in g.chunks(dcols) {
                        add_into(d, gr);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let len = nodes[x.0].value.len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / len));
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].cols;
                    acc(*p, &mut |d| {
                        for (r, dr) in d.chunks_mut(w).enumerate() {
                            add_into(dr, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(*p, &mut |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let w = node.cols;
                let c = nodes[x.0].cols;
                acc(*x, &mut |d| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        add_into(&mut d[r * c + start..r * c + start + w], gr);
                    }
                });
            }
            Op::GatherRows(x, rows) => {
                let c = node.cols;
                acc(*x, &mut |d| {
                    for (gr, &src) in g.chunks(c).zip(rows) {
                        add_into(&mut d[src * c..(src + 1) * c], gr);
                    }
                });
            }
            Op::Gather(x, flat) => acc(*x, &mut |d| {
                for (g, &i) in g.iter().zip(flat) {
                    d[i] += g;
                }
            }),
            Op::CrossEntropy { logits, targets, probs } => {
                let c = nodes[logits.0].cols;
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |d| {
                    for (r, (dr, pr)) in d.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        for (j, (d, p)) in dr.iter_mut().zip(pr).enumerate() {
                            let y = if j == targets[r] { 1.0 } else { 0.0 };
                            *d += scale * (p - y);
                        }
                    }
                });
            }
        }
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a tensor previously bound with [`Tape::param`].
    pub fn grad_of(&self, t: &Tensor) -> Option<&[f64]> {
        self.bound.get(&t.id()).and_then(|&v| self.grad(v))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.param(&Tensor::from_rows(rows).unwrap().with_grad())
    }

    #[test]
    fn product_rule_on_scalars() {
        let mut tape = Tape::new();
        let x = Tensor::scalar(3.0).with_grad();
        let y = Tensor::scalar(5.0).with_grad();
        let (xv, yv) = (tape.param(&x), tape.param(&y));
        let z = tape.mul(xv, yv).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad_of(&x).unwrap(), &[5.0]);
        assert_eq!(tape.grad_of(&y).unwrap(), &[3.0]);
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn reused_input_accumulates() {
        let mut tape = Tape::new();
        let x = Tensor::scalar(4.0).with_grad();
        let xv = tape.param(&x);
        let again = tape.param(&x);
        assert_eq!(xv, again);
        let sq = tape.mul(xv, again).unwrap();
        let y = tape.add(sq, xv).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad_of(&x).unwrap(), &[9.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![1.0, 2.0]]);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_examples() {
        let mut tape = Tape::new();
        let x = tape
            .constant(3, 3, vec![0.0, 0.0, f64::MIN / 4.0, 1000.0, 1000.0, 1000.0, 7.0, -3.0, 2.0])
            .unwrap();
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
        for p in &v[3..6] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for r in 0..3 {
            let s: f64 = tape.row(y, r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let single = tape.constant(1, 1, vec![-42.0]).unwrap();
        let s1 = tape.softmax_rows(single);
        assert_eq!(tape.value(s1), &[1.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(1, 2, vec![1.0, 1.0]).unwrap();
        let zeros = tape.constant(1, 2, vec![0.0, 0.0]).unwrap();

        let constant_row = tape.constant(1, 2, vec![3.0, 3.0]).unwrap();
        let y = tape.layer_norm(constant_row, ones, zeros, 1e-5).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0]);

        let normalized = tape.constant(1, 2, vec![1.0, -1.0]).unwrap();
        let y = tape.layer_norm(normalized, ones, zeros, 1e-12).unwrap();
        assert!((tape.value(y)[0] - 1.0).abs() < 1e-9);
        assert!((tape.value(y)[1] + 1.0).abs() < 1e-9);

        let bias = tape.constant(1, 2, vec![0.25, -4.0]).unwrap();
        let x = tape.constant(2, 2, vec![5.0, 1.0, -2.0, 8.0]).unwrap();
        let y = tape.layer_norm(x, zeros, bias, 1e-5).unwrap();
        assert_eq!(tape.value(y), &[0.25, -4.0, 0.25, -4.0]);

        assert!(tape.layer_norm(x, ones, zeros, 0.0).is_err());
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[vec![0.3, -1.2, 2.0, 0.0]]);
        let l = tape.logsumexp_rows(x);
        tape.backward(l).unwrap();
        let mut expected = tape.value(x).to_vec();
        crate::tensor::softmax_in_place(&mut expected);
        for (g, e) in tape.grad(x).unwrap().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_log_classes() {
        let mut tape = Tape::new();
        let x = tape.constant(2, 5, vec![0.7; 10]).unwrap();
        let l = tape.cross_entropy(x, &[0, 4]).unwrap();
        assert!((tape.scalar(l) - 5f64.ln()).abs() < 1e-14);
        assert!(tape.cross_entropy(x, &[0, 5]).is_err());
    }

    #[test]
    fn matmul_shape_error() {
        let mut tape = Tape::new();
        let a = tape.constant(2, 3, vec![0.0; 6]).unwrap();
        let b = tape.constant(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }
}

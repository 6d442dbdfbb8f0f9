//! Wengert tape for reverse-mode differentiation.
//!
//! Every value is a 2-d matrix `[rows, cols]`. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! `backward` is a single reverse sweep.

use super::tensor::{gemm, Tensor};
use super::NumericError;

/// Handle to a node on a [`Tape`].
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
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    RepeatRows(Var, usize),
    TileRows(Var, usize),
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Attend(Var, Var),
    Select(Vec<bool>, Var, Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`; `None` when no gradient flowed into it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zero-filled when nothing flowed into `var`.
    pub fn tensor(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match self.get(var) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn rc(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = rc(self.value(a));
        let (k2, n) = rc(self.value(b));
        if k != k2 {
            return Err(NumericError::Shape(format!(
                "matmul [{m},{k}] x [{k2},{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), NumericError> {
        if rc(self.value(a)) != rc(self.value(b)) {
            return Err(NumericError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// `a[m,n] + bias[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericError> {
        let (m, n) = rc(self.value(a));
        if self.value(bias).len() != n {
            return Err(NumericError::Shape(format!(
                "add_row: [{m},{n}] + {:?}",
                self.value(bias).shape()
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let m = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != m) {
            return Err(NumericError::Shape("concat_cols: row counts differ".into()));
        }
        let n: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let (m, n) = rc(self.value(a));
        if start > end || end > n {
            return Err(NumericError::Shape(format!("slice_cols {start}..{end} of {n}")));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![m, w], data)?, Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let n = self.value(parts[0]).cols();
        if parts.iter().any(|p| self.value(*p).cols() != n) {
            return Err(NumericError::Shape("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        let mut m = 0;
        for p in parts {
            m += self.value(*p).rows();
            data.extend_from_slice(self.value(*p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row gather; doubles as embedding lookup when `a` is a table.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let (m, n) = rc(self.value(a));
        if let Some(bad) = idx.iter().find(|&&i| i >= m) {
            return Err(NumericError::Index(format!("row {bad} of {m}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], data)?,
            Op::GatherRows(a, idx.to_vec()),
            rg,
        ))
    }

    /// Each row repeated `times` consecutively: `[m,n] -> [m*times,n]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let (m, n) = rc(self.value(a));
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * times * n);
        for r in 0..m {
            for _ in 0..times {
                data.extend_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![m * times, n], data).unwrap(), Op::RepeatRows(a, times), rg)
    }

    /// Whole matrix stacked `times` times: `[m,n] -> [times*m,n]`.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let (m, n) = rc(self.value(a));
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * times * n);
        for _ in 0..times {
            data.extend_from_slice(src);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![m * times, n], data).unwrap(), Op::TileRows(a, times), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumericError> {
        let value = self.value(a).clone().reshaped(vec![rows, cols])?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = rc(self.value(a));
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![m, n], data).unwrap(), Op::SoftmaxRows(a), rg)
    }

    /// Per-row convex combination: `weights[B,J]`, `values[B*J,d]` -> `[B,d]`
    /// with `out[b] = Σ_j weights[b,j] · values[b*J+j]`.
    pub fn attend(&mut self, weights: Var, values: Var) -> Result<Var, NumericError> {
        let (b, j) = rc(self.value(weights));
        let (bj, d) = rc(self.value(values));
        if b * j != bj {
            return Err(NumericError::Shape(format!("attend: [{b},{j}] over [{bj},{d}]")));
        }
        let w = self.value(weights).data();
        let v = self.value(values).data();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for ji in 0..j {
                let a = w[bi * j + ji];
                let row = &v[(bi * j + ji) * d..(bi * j + ji + 1) * d];
                o.iter_mut().zip(row).for_each(|(x, y)| *x += a * y);
            }
        }
        let rg = self.rg(&[weights, values]);
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::Attend(weights, values), rg))
    }

    /// Row-wise select: row `r` comes from `new` where `mask[r]`, else `old`.
    pub fn select_rows(&mut self, mask: &[bool], new: Var, old: Var) -> Result<Var, NumericError> {
        self.same_shape(new, old, "select_rows")?;
        let (m, n) = rc(self.value(new));
        if mask.len() != m {
            return Err(NumericError::Shape(format!("select_rows: mask {} rows {m}", mask.len())));
        }
        let a = self.value(new).data();
        let b = self.value(old).data();
        let mut data = Vec::with_capacity(m * n);
        for (r, &keep_new) in mask.iter().enumerate() {
            let src = if keep_new { a } else { b };
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let rg = self.rg(&[new, old]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::Select(mask.to_vec(), new, old), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Fused row-wise softmax + weighted negative log-likelihood:
    /// `Σ_r weights[r] · −log softmax(logits[r])[targets[r]]`.
    /// Rows with zero weight contribute exactly zero.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var, NumericError> {
        let (m, n) = rc(self.value(logits));
        if targets.len() != m || weights.len() != m {
            return Err(NumericError::Shape(format!(
                "softmax_cross_entropy: {m} rows, {} targets, {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= n) {
            return Err(NumericError::Index(format!("target {t} of {n} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(n).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let t = targets[r];
            let shifted_target = row[t] - max;
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            let log_p = shifted_target - z.ln();
            for x in row.iter_mut() {
                *x /= z;
            }
            if weights[r] != 0.0 {
                loss += weights[r] * -log_p;
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rc(self.value(*a));
                let n = self.value(*b).cols();
                if needs(a) {
                    let bv = self.value(*b).data();
                    accumulate(&mut grads[a.0], m * k, |ga| {
                        gemm(m, n, k, g, false, bv, true, ga, true);
                    });
                }
                if needs(b) {
                    let av = self.value(*a).data();
                    accumulate(&mut grads[b.0], k * n, |gb| {
                        gemm(k, m, n, av, true, g, false, gb, true);
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        accumulate(&mut grads[v.0], g.len(), |gv| {
                            gv.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                        });
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                }
                if needs(bias) {
                    let n = self.value(*bias).len();
                    accumulate(&mut grads[bias.0], n, |gb| {
                        for row in g.chunks(n) {
                            gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let bv = self.value(*b).data();
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        for ((x, y), z) in ga.iter_mut().zip(g).zip(bv) {
                            *x += y * z;
                        }
                    });
                }
                if needs(b) {
                    let av = self.value(*a).data();
                    accumulate(&mut grads[b.0], g.len(), |gb| {
                        for ((x, y), z) in gb.iter_mut().zip(g).zip(av) {
                            *x += y * z;
                        }
                    });
                }
            }
            Op::Scale(a, s) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if needs(p) {
                        accumulate(&mut grads[p.0], m * w, |gp| {
                            for r in 0..m {
                                let src = &g[r * n + offset..r * n + offset + w];
                                gp[r * w..(r + 1) * w]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, y)| *x += y);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if needs(a) {
                    let (m, n) = rc(self.value(*a));
                    let w = node.value.cols();
                    accumulate(&mut grads[a.0], m * n, |ga| {
                        for r in 0..m {
                            ga[r * n + start..r * n + start + w]
                                .iter_mut()
                                .zip(&g[r * w..(r + 1) * w])
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if needs(p) {
                        accumulate(&mut grads[p.0], len, |gp| {
                            gp.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(x, y)| *x += y)
                        });
                    }
                    offset += len;
                }
            }
            Op::GatherRows(a, idx) => {
                if needs(a) {
                    let (m, n) = rc(self.value(*a));
                    accumulate(&mut grads[a.0], m * n, |ga| {
                        for (r, &src) in idx.iter().enumerate() {
                            ga[src * n..(src + 1) * n]
                                .iter_mut()
                                .zip(&g[r * n..(r + 1) * n])
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::RepeatRows(a, times) => {
                if needs(a) {
                    let (m, n) = rc(self.value(*a));
                    accumulate(&mut grads[a.0], m * n, |ga| {
                        for r in 0..m {
                            for t in 0..*times {
                                let src = &g[(r * times + t) * n..(r * times + t + 1) * n];
                                ga[r * n..(r + 1) * n]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, y)| *x += y);
                            }
                        }
                    });
                }
            }
            Op::TileRows(a, times) => {
                if needs(a) {
                    let len = self.value(*a).len();
                    accumulate(&mut grads[a.0], len, |ga| {
                        for t in 0..*times {
                            ga.iter_mut()
                                .zip(&g[t * len..(t + 1) * len])
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Reshape(a) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                }
            }
            Op::Tanh(a) => {
                if needs(a) {
                    let y = node.value.data();
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        for ((x, gy), yv) in ga.iter_mut().zip(g).zip(y) {
                            *x += gy * (1.0 - yv * yv);
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                if needs(a) {
                    let y = node.value.data();
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        for ((x, gy), yv) in ga.iter_mut().zip(g).zip(y) {
                            *x += gy * yv * (1.0 - yv);
                        }
                    });
                }
            }
            Op::SoftmaxRows(a) => {
                if needs(a) {
                    let n = node.value.cols();
                    let y = node.value.data();
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        for ((gr, yr), gar) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                            for ((x, gy), yv) in gar.iter_mut().zip(gr).zip(yr) {
                                *x += yv * (gy - dot);
                            }
                        }
                    });
                }
            }
            Op::Attend(w, v) => {
                let (b, j) = rc(self.value(*w));
                let d = self.value(*v).cols();
                if needs(w) {
                    let vv = self.value(*v).data();
                    accumulate(&mut grads[w.0], b * j, |gw| {
                        for bi in 0..b {
                            let go = &g[bi * d..(bi + 1) * d];
                            for ji in 0..j {
                                let row = &vv[(bi * j + ji) * d..(bi * j + ji + 1) * d];
                                gw[bi * j + ji] += go.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if needs(v) {
                    let wv = self.value(*w).data();
                    accumulate(&mut grads[v.0], b * j * d, |gv| {
                        for bi in 0..b {
                            let go = &g[bi * d..(bi + 1) * d];
                            for ji in 0..j {
                                let a = wv[bi * j + ji];
                                gv[(bi * j + ji) * d..(bi * j + ji + 1) * d]
                                    .iter_mut()
                                    .zip(go)
                                    .for_each(|(x, y)| *x += a * y);
                            }
                        }
                    });
                }
            }
            Op::Select(mask, new, old) => {
                let n = node.value.cols();
                for (v, want) in [(new, true), (old, false)] {
                    if needs(v) {
                        accumulate(&mut grads[v.0], g.len(), |gv| {
                            for (r, &m) in mask.iter().enumerate() {
                                if m == want {
                                    gv[r * n..(r + 1) * n]
                                        .iter_mut()
                                        .zip(&g[r * n..(r + 1) * n])
                                        .for_each(|(x, y)| *x += y);
                                }
                            }
                        });
                    }
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let len = self.value(*a).len();
                    accumulate(&mut grads[a.0], len, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
                }
            }
            Op::SoftmaxXent { logits, targets, weights, probs } => {
                if needs(logits) {
                    let n = self.value(*logits).cols();
                    accumulate(&mut grads[logits.0], probs.len(), |gl| {
                        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let scale = g[0] * w;
                            let p = &probs[r * n..(r + 1) * n];
                            let dst = &mut gl[r * n..(r + 1) * n];
                            for (x, pv) in dst.iter_mut().zip(p) {
                                *x += scale * pv;
                            }
                            dst[t] -= scale;
                        }
                    });
                }
            }
        }
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

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}

//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Operations
//! append a record with enough context to replay the chain rule in reverse;
//! [`Tape::backward`] then fills the `grad` buffer of every node that a
//! `requires_grad` leaf can reach. One tape corresponds to one training step.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{sharpening, sharpening_deriv};

/// Handle to a tensor node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// out = a · b, a: m×k, b: k×n
    Matmul { a: Var, b: Var, out: Var },
    /// out = a · bᵀ, a: m×k, b: n×k
    MatmulTB { a: Var, b: Var, out: Var },
    /// out = x + 1·biasᵀ (bias broadcast over rows)
    AddRowBias { x: Var, bias: Var, out: Var },
    Relu { x: Var, out: Var },
    Tanh { x: Var, out: Var },
    /// Each row rescaled to unit Euclidean norm.
    RowL2Norm { x: Var, out: Var },
    Scale { x: Var, c: f64, out: Var },
    Sub { a: Var, b: Var, out: Var },
    MulElem { a: Var, b: Var, out: Var },
    SumAll { x: Var, out: Var },
    MeanAll { x: Var, out: Var },
    Dot { a: Var, b: Var, out: Var },
    /// Mean cross-entropy of row logits against per-row targets,
    /// with max-subtracted softmax.
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
        out: Var,
    },
    /// Mean of −log(softabs attention on the target class) over rows.
    SoftabsNll {
        scores: Var,
        targets: Vec<usize>,
        beta: f64,
        out: Var,
    },
    /// Per-class mean of rows: out[c] = mean over {i : class_of[i] == c}.
    ClassMeanPool {
        x: Var,
        class_of: Vec<usize>,
        counts: Vec<usize>,
        out: Var,
    },
}

struct Node {
    tensor: Tensor,
    /// True when a gradient must be accumulated here (leaf with
    /// requires_grad, or an intermediate on a path to one).
    needs_grad: bool,
}

/// Ordered record of forward operations with their backward rules.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a copy of `t` as a leaf; differentiability follows the
    /// tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t.clone(), needs)
    }

    /// Registers a non-differentiable copy of `t`.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), false)
    }

    /// Registers a differentiable copy of `t` regardless of its flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad()
    }

    fn push(&mut self, tensor: Tensor, needs_grad: bool) -> Var {
        debug_assert!(tensor.is_finite(), "non-finite tensor entered the tape");
        self.nodes.push(Node { tensor, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn emit(&mut self, tensor: Tensor, inputs: &[Var], op: impl FnOnce(Var) -> Op) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let out = self.push(tensor, needs);
        if needs {
            self.ops.push(op(out));
        }
        out
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.data()
    }

    // ── Forward operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.emit(out, &[a, b], |out| Op::Matmul { a, b, out }))
    }

    /// a · bᵀ for a: m×k, b: n×k.
    pub fn matmul_tb(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_tb",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &da[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &db[j * k..(j + 1) * k];
                out[i * n + j] = crate::tensor::dot(row, brow);
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.emit(out, &[a, b], |out| Op::MatmulTB { a, b, out }))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let (dx, dbias) = (self.data(x), self.data(bias));
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(dx[i * cols + j] + dbias[j]);
            }
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        Ok(self.emit(out, &[x, bias], |out| Op::AddRowBias { x, bias, out }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("shape preserved");
        self.emit(out, &[x], |out| Op::Relu { x, out })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).tanh_map();
        self.emit(out, &[x], |out| Op::Tanh { x, out })
    }

    /// Rescales every row of a matrix (or the whole vector, for rank 1) to
    /// unit norm. Zero-norm rows are rejected.
    pub fn row_l2_normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => {
                return Err(Error::Contract(format!(
                    "row_l2_normalize expects rank 1 or 2, got {shape:?}"
                )))
            }
        };
        let dx = self.data(x);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let row = &dx[i * cols..(i + 1) * cols];
            let norm = crate::tensor::l2_norm(row);
            if norm == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "row {i} has zero norm in row_l2_normalize"
                )));
            }
            out.extend(row.iter().map(|v| v / norm));
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.emit(out, &[x], |out| Op::RowL2Norm { x, out }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("shape preserved");
        self.emit(out, &[x], |out| Op::Scale { x, c, out })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "sub", |x, y| x - y, |a, b, out| Op::Sub { a, b, out })
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "mul_elem", |x, y| x * y, |a, b, out| Op::MulElem {
            a,
            b,
            out,
        })
    }

    fn elementwise_pair(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Var, Var, Var) -> Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.emit(out, &[a, b], |o| op(a, b, o)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        self.emit(Tensor::scalar(s), &[x], |out| Op::SumAll { x, out })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.data(x).len() as f64;
        let s: f64 = self.data(x).iter().sum::<f64>() / n;
        self.emit(Tensor::scalar(s), &[x], |out| Op::MeanAll { x, out })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) || self.shape(a).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let s = crate::tensor::dot(self.data(a), self.data(b));
        Ok(self.emit(Tensor::scalar(s), &[a, b], |out| Op::Dot { a, b, out }))
    }

    /// Mean cross-entropy over batch rows with max-subtracted softmax.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "cross_entropy_mean expects batch×classes logits, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if targets.len() != rows {
            return Err(Error::Contract(format!(
                "{} targets for {} logit rows",
                targets.len(),
                rows
            )));
        }
        let data = self.data(logits);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            total += crate::tensor::log_softmax_ce_slice(&data[i * cols..(i + 1) * cols], t)?;
        }
        let loss = Tensor::scalar(total / rows as f64);
        Ok(self.emit(loss, &[logits], |out| Op::CrossEntropyMean {
            logits,
            targets: targets.to_vec(),
            out,
        }))
    }

    /// Episodic attention loss: mean over rows of −log h_target, where
    /// h is the sharpened attention over that row's similarity scores.
    pub fn softabs_nll(&mut self, scores: Var, targets: &[usize], beta: f64) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "softabs_nll expects batch×classes scores, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if targets.len() != rows {
            return Err(Error::Contract(format!(
                "{} targets for {} score rows",
                targets.len(),
                rows
            )));
        }
        if beta <= 0.0 {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let data = self.data(scores);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::IndexOutOfRange { index: t, len: cols });
            }
            let row = &data[i * cols..(i + 1) * cols];
            let denom: f64 = row.iter().map(|&c| sharpening(c, beta)).sum();
            total += denom.ln() - sharpening(row[t], beta).ln();
        }
        let loss = Tensor::scalar(total / rows as f64);
        Ok(self.emit(loss, &[scores], |out| Op::SoftabsNll {
            scores,
            targets: targets.to_vec(),
            beta,
            out,
        }))
    }

    /// Per-class mean of rows; every class in 0..num_classes must occur.
    pub fn class_mean_pool(
        &mut self,
        x: Var,
        class_of: &[usize],
        num_classes: usize,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || class_of.len() != shape[0] {
            return Err(Error::Contract(format!(
                "class_mean_pool: {} class labels for shape {shape:?}",
                class_of.len()
            )));
        }
        let cols = shape[1];
        let mut counts = vec![0usize; num_classes];
        for &c in class_of {
            if c >= num_classes {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    len: num_classes,
                });
            }
            counts[c] += 1;
        }
        if let Some(empty) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!(
                "class {empty} has no rows in class_mean_pool"
            )));
        }
        let data = self.data(x);
        let mut out = vec![0.0; num_classes * cols];
        for (i, &c) in class_of.iter().enumerate() {
            for j in 0..cols {
                out[c * cols + j] += data[i * cols + j];
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            for j in 0..cols {
                out[c * cols + j] /= n as f64;
            }
        }
        let out = Tensor::new(vec![num_classes, cols], out)?;
        let class_of = class_of.to_vec();
        Ok(self.emit(out, &[x], |o| Op::ClassMeanPool {
            x,
            class_of,
            counts,
            out: o,
        }))
    }

    // ── Backward pass ───────────────────────────────────────────────

    /// Replays the tape in reverse, filling gradients for every node on a
    /// path from `loss` to a `requires_grad` leaf. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].tensor.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.ops.len()).rev() {
            let op = self.ops[idx].clone();
            self.backward_op(&op, &mut grads);
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = grad {
                node.tensor.set_grad(g);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => grads[v.0] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, op: &Op, grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Matmul { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (da, db) = (self.data(*a), self.data(*b));
                // dA = dOut · Bᵀ
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += d_out[i * n + j] * db[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                self.accumulate(grads, *a, &ga);
                // dB = Aᵀ · dOut
                let mut gb = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += da[i * k + p] * d_out[i * n + j];
                        }
                        gb[p * n + j] = acc;
                    }
                }
                self.accumulate(grads, *b, &gb);
            }
            Op::MatmulTB { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                let (da, db) = (self.data(*a), self.data(*b));
                // dA = dOut · B
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let d = d_out[i * n + j];
                        if d == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += d * db[j * k + p];
                        }
                    }
                }
                self.accumulate(grads, *a, &ga);
                // dB = dOutᵀ · A
                let mut gb = vec![0.0; n * k];
                for j in 0..n {
                    for i in 0..m {
                        let d = d_out[i * n + j];
                        if d == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            gb[j * k + p] += d * da[i * k + p];
                        }
                    }
                }
                self.accumulate(grads, *b, &gb);
            }
            Op::AddRowBias { x, bias, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *x, &d_out);
                let cols = self.shape(*bias)[0];
                let rows = d_out.len() / cols;
                let mut gb = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        gb[j] += d_out[i * cols + j];
                    }
                }
                self.accumulate(grads, *bias, &gb);
            }
            Op::Relu { x, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dx: Vec<f64> = self
                    .data(*x)
                    .iter()
                    .zip(&d_out)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Tanh { x, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dx: Vec<f64> = self
                    .data(*out)
                    .iter()
                    .zip(&d_out)
                    .map(|(&y, &d)| d * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::RowL2Norm { x, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let shape = self.shape(*x);
                let (rows, cols) = if shape.len() == 1 {
                    (1, shape[0])
                } else {
                    (shape[0], shape[1])
                };
                let (dx_in, dy) = (self.data(*x), self.data(*out));
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    let xi = &dx_in[i * cols..(i + 1) * cols];
                    let yi = &dy[i * cols..(i + 1) * cols];
                    let gi = &d_out[i * cols..(i + 1) * cols];
                    let norm = crate::tensor::l2_norm(xi);
                    let proj = crate::tensor::dot(gi, yi);
                    for j in 0..cols {
                        dx[i * cols + j] = (gi[j] - yi[j] * proj) / norm;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Scale { x, c, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dx: Vec<f64> = d_out.iter().map(|d| d * c).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Sub { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                self.accumulate(grads, *a, &d_out);
                let neg: Vec<f64> = d_out.iter().map(|d| -d).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::MulElem { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let ga: Vec<f64> = d_out.iter().zip(self.data(*b)).map(|(d, y)| d * y).collect();
                self.accumulate(grads, *a, &ga);
                let gb: Vec<f64> = d_out.iter().zip(self.data(*a)).map(|(d, x)| d * x).collect();
                self.accumulate(grads, *b, &gb);
            }
            Op::SumAll { x, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let dx = vec![d_out[0]; self.data(*x).len()];
                self.accumulate(grads, *x, &dx);
            }
            Op::MeanAll { x, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let n = self.data(*x).len();
                let dx = vec![d_out[0] / n as f64; n];
                self.accumulate(grads, *x, &dx);
            }
            Op::Dot { a, b, out } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let s = d_out[0];
                let ga: Vec<f64> = self.data(*b).iter().map(|y| s * y).collect();
                self.accumulate(grads, *a, &ga);
                let gb: Vec<f64> = self.data(*a).iter().map(|x| s * x).collect();
                self.accumulate(grads, *b, &gb);
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                out,
            } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let scale = d_out[0] / targets.len() as f64;
                let cols = self.shape(*logits)[1];
                let data = self.data(*logits);
                let mut dl = vec![0.0; data.len()];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &data[i * cols..(i + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..cols {
                        let softmax = exps[j] / sum;
                        dl[i * cols + j] = scale * (softmax - if j == t { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(grads, *logits, &dl);
            }
            Op::SoftabsNll {
                scores,
                targets,
                beta,
                out,
            } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let scale = d_out[0] / targets.len() as f64;
                let cols = self.shape(*scores)[1];
                let data = self.data(*scores);
                let mut ds = vec![0.0; data.len()];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &data[i * cols..(i + 1) * cols];
                    let denom: f64 = row.iter().map(|&c| sharpening(c, *beta)).sum();
                    for j in 0..cols {
                        let dj = sharpening_deriv(row[j], *beta);
                        let mut g = dj / denom;
                        if j == t {
                            g -= dj / sharpening(row[t], *beta);
                        }
                        ds[i * cols + j] = scale * g;
                    }
                }
                self.accumulate(grads, *scores, &ds);
            }
            Op::ClassMeanPool {
                x,
                class_of,
                counts,
                out,
            } => {
                let Some(d_out) = grads[out.0].clone() else { return };
                let cols = self.shape(*x)[1];
                let mut dx = vec![0.0; self.data(*x).len()];
                for (i, &c) in class_of.iter().enumerate() {
                    let inv = 1.0 / counts[c] as f64;
                    for j in 0..cols {
                        dx[i * cols + j] = d_out[c * cols + j] * inv;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
        }
    }
}

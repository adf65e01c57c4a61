//! Dense row-major `f64` tensors and the scalar formulas used for scoring.
//!
//! Tensors are limited to rank ≤ 4 and carry an optional gradient buffer.
//! Gradients are only ever populated by [`crate::tape::Tape::backward`];
//! outside a tape, tensors are plain immutable values.

use crate::error::{Error, Result};

/// Maximum supported tensor rank (batch × channel × h × w covers every need).
pub const MAX_RANK: usize = 4;

/// Dense real-valued n-dimensional array with optional gradient tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and flat row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("rank exceeds {MAX_RANK}"),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "zero-sized dimension".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("shape wants {numel} elements, data has {}", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-1 vector; the input must be nonempty.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "from_vec needs at least one element");
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Rank-2 matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot build a matrix from zero rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Data("rows have differing lengths".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Marks this tensor as a differentiation leaf for subsequent tapes.
    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    /// Gradient buffer, populated by a backward pass.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    /// Extracts the single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2, "row() requires a matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard matrix product; both operands must be rank-2 with agreeing
    /// inner dimensions.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.data[p * n + j];
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh_map(&self) -> Tensor {
        let data = self.data.iter().map(|v| v.tanh()).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Rescales a vector to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(Error::Contract(format!(
                "l2_normalize expects a vector, got shape {:?}",
                self.shape
            )));
        }
        let norm = l2_norm(&self.data);
        if norm == 0.0 {
            return Err(Error::DegenerateInput(
                "l2_normalize of a zero-norm vector".into(),
            ));
        }
        let data = self.data.iter().map(|v| v / norm).collect();
        Tensor::new(self.shape.clone(), data)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity between two equal-length vectors.
///
/// Zero-norm operands are rejected rather than silently mapped to 0.
pub fn cosine(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel() {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    cosine_slices(a.data(), b.data())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Cross-entropy of a single logit vector against a target class index,
/// computed as −log softmax(logits)[target] with max-subtraction.
pub fn log_softmax_ce(logits: &Tensor, target: usize) -> Result<f64> {
    if logits.rank() != 1 {
        return Err(Error::Contract(format!(
            "log_softmax_ce expects a logit vector, got shape {:?}",
            logits.shape()
        )));
    }
    log_softmax_ce_slice(logits.data(), target)
}

pub(crate) fn log_softmax_ce_slice(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(log_sum - (logits[target] - max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> Tensor {
        Tensor::from_vec(vec![a, b])
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_projector() {
        let p = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![5.0, 7.0]).unwrap();
        let out = p.matmul(&v).unwrap();
        assert_eq!(out.data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Fixed pseudo-random 3×4 by 4×2 instance.
        let a_data: Vec<f64> = (0..12).map(|i| ((i * 37 + 11) % 19) as f64 - 9.0).collect();
        let b_data: Vec<f64> = (0..8).map(|i| ((i * 53 + 7) % 23) as f64 / 3.0).collect();
        let a = Tensor::new(vec![3, 4], a_data.clone()).unwrap();
        let b = Tensor::new(vec![4, 2], b_data.clone()).unwrap();
        let got = a.matmul(&b).unwrap();

        // Independent triple-loop product.
        let mut want = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a_data[i * 4 + p] * b_data[p * 2 + j];
                }
                want[i * 2 + j] = acc;
            }
        }
        assert_eq!(got.data(), want.as_slice());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]).unwrap();
        let b = Tensor::zeros(vec![2, 3]).unwrap();
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "message was: {msg}");
    }

    #[test]
    fn tanh_examples() {
        let t = Tensor::from_vec(vec![0.0, 1000.0, 0.5]);
        let out = t.tanh_map();
        assert_eq!(out.data()[0], 0.0);
        assert!(out.data()[1] > 1.0 - 1e-12 && out.data()[1] <= 1.0);
        assert!((out.data()[2] - 0.46211715726000974).abs() < 1e-15);
    }

    #[test]
    fn cosine_self_similarity() {
        let v = Tensor::from_vec(vec![0.3, -1.2, 4.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_axes() {
        let a = vec2(1.0, 0.0);
        let b = vec2(0.0, 1.0);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_reference_value() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let b = Tensor::from_vec(vec![4.0, 5.0, 6.0]);
        // 32 / (sqrt(14) * sqrt(77))
        assert!((cosine(&a, &b).unwrap() - 0.9746318461970762).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_an_error() {
        let a = vec2(0.0, 0.0);
        let b = vec2(1.0, 0.0);
        assert!(matches!(
            cosine(&a, &b),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn l2_normalize_345_triangle() {
        let v = vec2(3.0, 4.0);
        let n = v.l2_normalize().unwrap();
        assert_eq!(n.data(), &[0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_idempotent_and_symmetric() {
        let v = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let n = v.l2_normalize().unwrap();
        assert_eq!(n.data(), &[0.5, 0.5, 0.5, 0.5]);
        let again = n.l2_normalize().unwrap();
        for (x, y) in again.data().iter().zip(n.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let norm = l2_norm(n.data());
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_is_an_error() {
        let v = vec2(0.0, 0.0);
        assert!(matches!(
            v.l2_normalize(),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn ce_uniform_logits() {
        let logits = Tensor::from_vec(vec![0.7; 4]);
        let loss = log_softmax_ce(&logits, 2).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_confident_correct_logit() {
        let logits = vec2(10.0, -10.0);
        let loss = log_softmax_ce(&logits, 0).unwrap();
        assert!((loss - 2.061153622438558e-9).abs() < 1e-12);
    }

    #[test]
    fn ce_monotone_in_target_logit() {
        let mut prev = f64::INFINITY;
        for t in [-2.0, -1.0, 0.0, 1.0, 2.0, 5.0] {
            let logits = Tensor::from_vec(vec![t, 0.3, -0.4]);
            let loss = log_softmax_ce(&logits, 0).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn ce_target_out_of_range() {
        let logits = vec2(0.0, 0.0);
        assert!(matches!(
            log_softmax_ce(&logits, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }
}

//! Softmax cross-entropy and its derivatives.
//!
//! Besides the loss, gradient and Hessian, this module provides the
//! factorization `A = diag(√p)(I − 1pᵀ)` with `AᵀA = diag(p) − ppᵀ`. That
//! identity is what turns the curvature term into an outer product of scaled,
//! centered logit derivatives, so it is tested to near machine precision.
//!
//! Sign convention: `ce_gradient` returns `p − y`, the descent direction of
//! the loss. Downstream quantities (outer products, collinearity checks) are
//! invariant to this sign.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Probabilities on the simplex: entries in [0,1] summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Contract("probabilities must lie in [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "probabilities sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, c: usize) -> f64 {
        self.probs[c]
    }
}

/// A class label as an index into the logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    class_index: usize,
}

impl OneHotLabel {
    pub fn new(class_index: usize, class_count: usize) -> Result<Self> {
        if class_index >= class_count {
            return Err(Error::Contract(format!(
                "class index {class_index} out of range for {class_count} classes"
            )));
        }
        Ok(Self { class_index })
    }

    pub fn class(&self) -> usize {
        self.class_index
    }
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite logits".into()));
    }
    Ok(())
}

/// Softmax with max-subtraction; shift invariant and overflow free.
pub fn softmax(z: &[f64]) -> Result<ProbVector> {
    check_finite(z)?;
    if z.is_empty() {
        return Err(Error::Data("empty logit vector".into()));
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbVector::new(exps.iter().map(|e| e / sum).collect())
}

/// Cross-entropy loss `−log p_c` via log-sum-exp.
pub fn ce_loss(z: &[f64], y: OneHotLabel) -> Result<f64> {
    check_finite(z)?;
    if y.class() >= z.len() {
        return Err(Error::Contract(format!(
            "label {} out of range for {} logits",
            y.class(),
            z.len()
        )));
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - z[y.class()])
}

/// Gradient of the loss in logit space: `p − y`. Entries sum to zero.
///
/// The true-class entry is evaluated as `−Σ_{k≠c} p_k` rather than
/// `p_c − 1`: the two agree to machine precision, but the subtraction form
/// rounds to zero once `p_c` saturates while the off-class entries do not,
/// which would corrupt the gradient direction for confident examples.
pub fn ce_gradient(z: &[f64], y: OneHotLabel) -> Result<Vec<f64>> {
    let p = softmax(z)?;
    if y.class() >= z.len() {
        return Err(Error::Contract(format!(
            "label {} out of range for {} logits",
            y.class(),
            z.len()
        )));
    }
    let mut g = p.as_slice().to_vec();
    let off_class: f64 =
        g.iter().enumerate().filter(|(k, _)| *k != y.class()).map(|(_, v)| v).sum();
    g[y.class()] = -off_class;
    Ok(g)
}

/// Hessian of the loss in logit space: `diag(p) − ppᵀ`. Symmetric PSD with
/// zero row sums.
pub fn ce_hessian(p: &ProbVector) -> DenseMatrix {
    let c = p.len();
    DenseMatrix::from_fn(c, c, |i, j| {
        let v = -p.get(i) * p.get(j);
        if i == j {
            v + p.get(i)
        } else {
            v
        }
    })
}

/// Square-root factor `A = diag(√p)(I − 1pᵀ)` with `AᵀA = diag(p) − ppᵀ`.
///
/// Row `r` of `A` is `√p_r (e_rᵀ − pᵀ)`; every row sums to zero, so `A`
/// annihilates constant vectors.
pub fn factor_ce_hessian(p: &ProbVector) -> DenseMatrix {
    let c = p.len();
    DenseMatrix::from_fn(c, c, |r, j| {
        let sq = p.get(r).sqrt();
        let delta = if r == j { 1.0 } else { 0.0 };
        sq * (delta - p.get(j))
    })
}

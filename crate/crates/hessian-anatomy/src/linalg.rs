//! Minimal dense linear algebra: row-major matrices, a symmetric eigensolver
//! built from Householder tridiagonalization and the implicit-shift QL sweep,
//! Gram-Schmidt orthonormalization, and eigenvalues/first-component weights of
//! symmetric tridiagonal matrices (the quadrature kernel of the spectrum
//! module).
//!
//! Everything here is 64-bit and allocation-simple; the matrices are desk
//! scale by contract (dimension at most 10,000).

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a row-major slice. Errors if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                let lhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, r) in out_row.iter_mut().zip(lhs_row) {
                    *o += aik * r;
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute asymmetry `max |a_ij - a_ji|`. Zero for non-square.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Symmetric tridiagonal matrix held as its diagonal and off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl SymTridiagonal {
    /// `offdiag[i]` couples entries `i` and `i+1`; all couplings must be
    /// nonnegative (Lanczos produces them as norms).
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Contract("empty tridiagonal matrix".into()));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(Error::Contract(format!(
                "offdiag length {} must be diag length {} minus one",
                offdiag.len(),
                diag.len()
            )));
        }
        if offdiag.iter().any(|&b| b < 0.0 || !b.is_finite())
            || diag.iter().any(|a| !a.is_finite())
        {
            return Err(Error::Data("tridiagonal entries must be finite, couplings nonnegative".into()));
        }
        Ok(Self { diag, offdiag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    /// Dense embedding, mainly for oracle checks.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, self.diag[i]);
        }
        for i in 0..n - 1 {
            m.set(i, i + 1, self.offdiag[i]);
            m.set(i + 1, i, self.offdiag[i]);
        }
        m
    }
}

/// A symmetric operator on `R^dim` presented through matrix-vector products.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `out = A v`. Both slices have length `dim()`.
    fn apply(&self, v: &[f64], out: &mut [f64]);

    fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(v, &mut out);
        out
    }
}

/// Dense matrix viewed as an operator.
impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

const MAX_EIG_DIM: usize = 10_000;
/// Relative asymmetry allowed before a matrix is rejected as non-symmetric.
const SYMMETRY_RTOL: f64 = 1e-9;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues sorted descending (stable under ties) and the matching
/// eigenvectors as the columns of the returned matrix. The input must be
/// square, symmetric to relative tolerance `1e-9`, and finite.
pub fn sym_eig_small(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if m.rows() != m.cols() {
        return Err(Error::Contract(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    if n == 0 {
        return Err(Error::Contract("empty matrix".into()));
    }
    if n > MAX_EIG_DIM {
        return Err(Error::Contract(format!(
            "dimension {n} exceeds the dense eigensolver limit {MAX_EIG_DIM}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::Data("matrix contains non-finite entries".into()));
    }
    let scale_ref = m.max_abs();
    if m.max_asymmetry() > SYMMETRY_RTOL * scale_ref.max(f64::MIN_POSITIVE) {
        return Err(Error::Contract(format!(
            "matrix is not symmetric: max asymmetry {} exceeds {} * {}",
            m.max_asymmetry(),
            SYMMETRY_RTOL,
            scale_ref
        )));
    }

    // Work on the symmetrized copy so tiny input asymmetries cannot leak into
    // the Householder sweep.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut a, n, &mut d, &mut e);
    // tred2 leaves e[i] coupling (i-1, i); shift to the (i, i+1) convention.
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    tql2(&mut d, &mut e, &mut a, n, n)?;

    // Sort descending; the sort is stable so exact ties keep QL output order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let eigenvectors = DenseMatrix::from_fn(n, n, |i, j| a[i * n + order[j]]);
    Ok((eigenvalues, eigenvectors))
}

/// Eigenvalues (ascending) of a symmetric tridiagonal matrix together with
/// the squared first components of its unit eigenvectors. The weights sum to
/// one; they are the Gauss quadrature weights used by the spectrum module.
pub fn tridiag_eig(t: &SymTridiagonal) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = t.dim();
    let mut d = t.diag.clone();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&t.offdiag);
    // Row vector e1ᵀ accumulates into the first components of eigenvectors.
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    tql2(&mut d, &mut e, &mut z, n, 1)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap());
    let nodes: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let weights: Vec<f64> = order.iter().map(|&i| z[i] * z[i]).collect();
    Ok((nodes, weights))
}

/// Gram-Schmidt orthonormalization of the columns of `v`.
///
/// Two projection passes per column keep the output Gram within `1e-12` of
/// the identity. A column whose residual after projection falls below
/// `1e-12` of its original norm is reported as rank deficient.
pub fn orthonormalize(v: &DenseMatrix) -> Result<DenseMatrix> {
    let (rows, cols) = (v.rows(), v.cols());
    if cols == 0 {
        return Ok(v.clone());
    }
    if !v.is_finite() {
        return Err(Error::Data("matrix contains non-finite entries".into()));
    }
    let mut q: Vec<Vec<f64>> = (0..cols).map(|j| v.column(j)).collect();
    for j in 0..cols {
        let original = norm(&q[j]);
        for _ in 0..2 {
            for i in 0..j {
                let (head, tail) = q.split_at_mut(j);
                let proj = dot(&head[i], &tail[0]);
                axpy(-proj, &head[i], &mut tail[0]);
            }
        }
        let residual = norm(&q[j]);
        if residual <= 1e-12 * original {
            return Err(Error::RankDeficient { index: j });
        }
        scale(1.0 / residual, &mut q[j]);
    }
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| q[j][i]))
}

/// Householder reduction of the symmetric matrix in `a` (row-major, n x n) to
/// tridiagonal form. On exit `d` holds the diagonal, `e[1..]` the subdiagonal
/// (coupling entries i-1 and i), and `a` the accumulated orthogonal transform
/// Q with A = Q T Qᵀ. Classic tred2 (EISPACK / Numerical Recipes lineage).
fn tred2(a: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut sc = 0.0;
            for k in 0..=l {
                sc += a[i * n + k].abs();
            }
            if sc == 0.0 {
                e[i] = a[i * n + l];
            } else {
                for k in 0..=l {
                    a[i * n + k] /= sc;
                    h += a[i * n + k] * a[i * n + k];
                }
                let f = a[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = sc * g;
                h -= f * g;
                a[i * n + l] = f - g;
                let mut fsum = 0.0;
                for j in 0..=l {
                    a[j * n + i] = a[i * n + j] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a[j * n + k] * a[i * n + k];
                    }
                    for k in (j + 1)..=l {
                        g_acc += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g_acc / h;
                    fsum += e[j] * a[i * n + j];
                }
                let hh = fsum / (h + h);
                for j in 0..=l {
                    let f = a[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j * n + k] -= f * e[k] + g * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a[i * n + k] * a[k * n + j];
                }
                for k in 0..i {
                    a[k * n + j] -= g * a[k * n + i];
                }
            }
        }
        d[i] = a[i * n + i];
        a[i * n + i] = 1.0;
        for j in 0..i {
            a[j * n + i] = 0.0;
            a[i * n + j] = 0.0;
        }
    }
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix.
///
/// `d` holds the diagonal, `e[i]` couples entries i and i+1 (`e[n-1]`
/// ignored). Rotations are accumulated into `z`, a `zrows x n` row-major
/// block; pass the tred2 transform for full eigenvectors or a single e1ᵀ row
/// for quadrature weights. On exit `d` holds unsorted eigenvalues.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize, zrows: usize) -> Result<()> {
    if n == 1 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    // Deflation threshold against the global matrix scale; a local
    // |d[m]|+|d[m+1]| test (or a running row maximum) stalls on graded or
    // rank-deficient input, where rotations mix large entries into rows
    // whose own scale is negligible.
    let tst1 = d
        .iter()
        .zip(e.iter())
        .map(|(a, b)| a.abs() + b.abs())
        .fold(0.0_f64, f64::max);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                if e[m].abs() <= f64::EPSILON * tst1 {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::NoConvergence(format!(
                    "QL sweep exceeded 50 iterations at index {l}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Recover from underflow: split the problem and retry.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..zrows {
                    let f = z[k * n + i + 1];
                    z[k * n + i + 1] = s * z[k * n + i] + c * f;
                    z[k * n + i] = c * z[k * n + i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

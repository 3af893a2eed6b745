//! Spectral density estimation and top-eigenvalue extraction for the
//! matrix-free curvature operators.
//!
//! The density estimator is stochastic Lanczos quadrature: Rademacher probes,
//! Lanczos with full reorthogonalization, Gauss quadrature nodes and weights
//! from the tridiagonal eigenproblem, Gaussian kernel smoothing, and probe
//! averaging. Top eigenvalues come from restarted Lanczos with explicit
//! rank-one deflation of each converged pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::decomp::{
    build_delta, cluster_geometry, compute_hierarchy, gram_outliers, GKind, GPart, GramLevel,
};
use crate::error::{Error, Result};
use crate::linalg::{
    axpy, dot, norm, scale, sym_eig_small, tridiag_eig, LinearOperator, SymTridiagonal,
};
use crate::model::MlpModel;
use crate::seed::derive_seed;

/// Smoothed spectral density on a grid, normalized to unit mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub smoothing_sigma: f64,
    pub probes: usize,
    pub lanczos_steps: usize,
}

impl SpectralDensity {
    /// Trapezoid integral of the stored density over the grid.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// Uniform grid of `points` values covering `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && hi > lo);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

/// L1 distance between two densities sampled on the same grid.
pub fn density_l1_distance(a: &SpectralDensity, b: &SpectralDensity) -> f64 {
    assert_eq!(a.grid.len(), b.grid.len());
    let diff: Vec<f64> =
        a.density.iter().zip(&b.density).map(|(x, y)| (x - y).abs()).collect();
    trapezoid(&a.grid, &diff)
}

/// Gaussian kernel density of explicit eigenvalues on a grid, normalized to
/// unit mass. The oracle counterpart of [`slq_density`].
pub fn kernel_density(eigenvalues: &[f64], grid: &[f64], sigma: f64) -> SpectralDensity {
    let mut density = vec![0.0; grid.len()];
    let w = 1.0 / eigenvalues.len() as f64;
    accumulate_kernels(&mut density, grid, eigenvalues, &vec![w; eigenvalues.len()], sigma);
    normalize(grid, &mut density);
    SpectralDensity {
        grid: grid.to_vec(),
        density,
        smoothing_sigma: sigma,
        probes: 0,
        lanczos_steps: 0,
    }
}

fn accumulate_kernels(
    density: &mut [f64],
    grid: &[f64],
    nodes: &[f64],
    weights: &[f64],
    sigma: f64,
) {
    let norm_const = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    for (node, weight) in nodes.iter().zip(weights) {
        if *weight == 0.0 {
            continue;
        }
        for (d, x) in density.iter_mut().zip(grid) {
            let t = (x - node) / sigma;
            *d += weight * norm_const * (-0.5 * t * t).exp();
        }
    }
}

fn normalize(grid: &[f64], density: &mut [f64]) {
    let mass = trapezoid(grid, density);
    if mass > 0.0 {
        for d in density.iter_mut() {
            *d /= mass;
        }
    }
}

/// Result of a Lanczos sweep: the tridiagonal projection and the Krylov
/// basis that produced it.
struct LanczosSweep {
    tridiag: SymTridiagonal,
    basis: Vec<Vec<f64>>,
}

/// Lanczos with full reorthogonalization, starting from the unit vector
/// `start`. Stops early on breakdown (invariant subspace found); the
/// tridiagonal then covers the completed steps only.
fn lanczos<O: LinearOperator + ?Sized>(op: &O, start: &[f64], steps: usize) -> LanczosSweep {
    let n = op.dim();
    let steps = steps.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alphas: Vec<f64> = Vec::with_capacity(steps);
    let mut betas: Vec<f64> = Vec::with_capacity(steps.saturating_sub(1));
    let mut v = start.to_vec();
    let mut v_prev = vec![0.0; n];
    let mut beta_prev = 0.0;
    let mut w = vec![0.0; n];
    let mut scale_est = 0.0_f64;
    basis.push(v.clone());

    for j in 0..steps {
        op.apply(&v, &mut w);
        if j > 0 {
            axpy(-beta_prev, &v_prev, &mut w);
        }
        let alpha = dot(&w, &v);
        alphas.push(alpha);
        axpy(-alpha, &v, &mut w);
        // full reorthogonalization, two passes
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(b, &w);
                axpy(-proj, b, &mut w);
            }
        }
        let beta = norm(&w);
        scale_est = scale_est.max(alpha.abs()).max(beta);
        if j + 1 == steps {
            break;
        }
        if beta <= f64::EPSILON * scale_est.max(f64::MIN_POSITIVE) {
            break;
        }
        betas.push(beta);
        v_prev = std::mem::take(&mut v);
        beta_prev = beta;
        v = w.clone();
        scale(1.0 / beta, &mut v);
        basis.push(v.clone());
    }
    let tridiag = SymTridiagonal::new(alphas, betas).expect("lanczos produced a valid tridiagonal");
    LanczosSweep { tridiag, basis }
}

/// Spectral density of `op` by stochastic Lanczos quadrature.
///
/// `probes` Rademacher vectors, `steps` Lanczos steps each; the per-probe
/// quadrature measures are smoothed with a Gaussian kernel of width `sigma`
/// on `grid` and averaged in probe order. Probe seeds derive from `seed` and
/// the probe index, so results do not depend on evaluation order. The stored
/// density is normalized to unit trapezoid mass over the grid.
pub fn slq_density<O: LinearOperator + ?Sized>(
    op: &O,
    probes: usize,
    steps: usize,
    sigma: f64,
    grid: &[f64],
    seed: u64,
) -> Result<SpectralDensity> {
    if probes == 0 {
        return Err(Error::Contract("need at least one probe".into()));
    }
    if steps == 0 || steps > op.dim() {
        return Err(Error::Contract(format!(
            "lanczos steps {steps} must lie in 1..={}",
            op.dim()
        )));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("grid must be ascending with at least 2 points".into()));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Contract("smoothing sigma must be positive".into()));
    }
    let n = op.dim();
    let mut density = vec![0.0; grid.len()];
    for probe in 0..probes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("slq.probe.{probe}")));
        let inv = 1.0 / (n as f64).sqrt();
        let start: Vec<f64> =
            (0..n).map(|_| if rng.random::<bool>() { inv } else { -inv }).collect();
        let sweep = lanczos(op, &start, steps);
        let (nodes, weights) = tridiag_eig(&sweep.tridiag)?;
        accumulate_kernels(&mut density, grid, &nodes, &weights, sigma);
    }
    for d in &mut density {
        *d /= probes as f64;
    }
    normalize(grid, &mut density);
    Ok(SpectralDensity {
        grid: grid.to_vec(),
        density,
        smoothing_sigma: sigma,
        probes,
        lanczos_steps: steps,
    })
}

/// Extracted top eigenpairs, descending.
#[derive(Debug, Clone)]
pub struct TopkResult {
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors matching `eigenvalues`, mutually orthogonal.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Residuals `‖op·v − λv‖` against the undeflated operator.
    pub residuals: Vec<f64>,
    /// Per-pair convergence; false entries mark a partial result.
    pub converged: Vec<bool>,
}

impl TopkResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

struct DeflatedOp<'a, O: LinearOperator + ?Sized> {
    base: &'a O,
    eigenvalues: &'a [f64],
    eigenvectors: &'a [Vec<f64>],
}

impl<O: LinearOperator + ?Sized> LinearOperator for DeflatedOp<'_, O> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.base.apply(v, out);
        for (lambda, u) in self.eigenvalues.iter().zip(self.eigenvectors) {
            axpy(-lambda * dot(u, v), u, out);
        }
    }
}

fn orthogonalize_against(v: &mut [f64], others: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in others {
            let proj = dot(u, v);
            axpy(-proj, u, v);
        }
    }
}

const LANCZOS_RESTART_STEPS: usize = 40;

/// Top-`k` eigenpairs of a symmetric PSD operator by restarted Lanczos with
/// explicit deflation of converged pairs.
///
/// Each pair is accepted once `‖op·v − λv‖ ≤ tol·λ_1`; pairs that fail to
/// converge within `max_iter` restarts are kept at their best estimate and
/// flagged. Eigenvalues are returned descending.
pub fn topk_eigs<O: LinearOperator + ?Sized>(
    op: &O,
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<TopkResult> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k = {k} must lie in 1..={n}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Contract("tolerance must be positive".into()));
    }
    if max_iter == 0 {
        return Err(Error::Contract("need at least one iteration".into()));
    }

    let mut eigenvalues: Vec<f64> = Vec::with_capacity(k);
    let mut eigenvectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut residuals: Vec<f64> = Vec::with_capacity(k);
    let mut converged_flags: Vec<bool> = Vec::with_capacity(k);
    let mut applied = vec![0.0; n];

    for pair in 0..k {
        let deflated =
            DeflatedOp { base: op, eigenvalues: &eigenvalues, eigenvectors: &eigenvectors };
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("topk.start.{pair}")));
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize_against(&mut v, &eigenvectors);
        let nv = norm(&v);
        if nv == 0.0 {
            return Err(Error::NoConvergence("start vector vanished after deflation".into()));
        }
        scale(1.0 / nv, &mut v);

        let mut lambda = 0.0;
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _restart in 0..max_iter {
            let sweep = lanczos(&deflated, &v, LANCZOS_RESTART_STEPS.min(n));
            let dense_t = sweep.tridiag.to_dense();
            let (t_eigs, t_vecs) = sym_eig_small(&dense_t)?;
            // leading Ritz pair
            let y = t_vecs.column(0);
            let mut ritz = vec![0.0; n];
            for (coef, basis_vec) in y.iter().zip(&sweep.basis) {
                axpy(*coef, basis_vec, &mut ritz);
            }
            orthogonalize_against(&mut ritz, &eigenvectors);
            let rn = norm(&ritz);
            if rn == 0.0 {
                // the leading Ritz direction collapsed onto found pairs;
                // restart from fresh randomness
                v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                orthogonalize_against(&mut v, &eigenvectors);
                let nv = norm(&v);
                if nv == 0.0 {
                    break;
                }
                scale(1.0 / nv, &mut v);
                continue;
            }
            scale(1.0 / rn, &mut ritz);
            deflated.apply(&ritz, &mut applied);
            lambda = dot(&ritz, &applied);
            axpy(-lambda, &ritz, &mut applied);
            residual = norm(&applied);
            v = ritz;
            let reference = if pair == 0 { lambda.abs() } else { eigenvalues[0].abs() };
            if residual <= tol * reference.max(f64::MIN_POSITIVE) || t_eigs[0].abs() == 0.0 {
                converged = true;
                break;
            }
        }
        eigenvalues.push(lambda);
        eigenvectors.push(v);
        residuals.push(residual.min(f64::MAX));
        converged_flags.push(converged);
    }

    // nearly degenerate pairs can come out microscopically out of order
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    Ok(TopkResult {
        eigenvalues: order.iter().map(|&i| eigenvalues[i]).collect(),
        eigenvectors: order.iter().map(|&i| eigenvectors[i].clone()).collect(),
        residuals: order.iter().map(|&i| residuals[i]).collect(),
        converged: order.iter().map(|&i| converged_flags[i]).collect(),
    })
}

/// Comparison of the top spectrum of `G` with its Gram approximations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutlierReport {
    /// Top eigenvalues of `G`, descending.
    #[serde(rename = "topG")]
    pub top_g: Vec<f64>,
    /// Eigenvalues of the cluster-center Gram (`G1` spectrum), descending.
    #[serde(rename = "gramG1")]
    pub gram_g1: Vec<f64>,
    /// Eigenvalues of the group-mean Gram (`G12` spectrum), descending.
    #[serde(rename = "gramG12")]
    pub gram_g12: Vec<f64>,
    /// `|λ_c(G) − λ_c(G1 gram)| / λ_c(G)` for `c = 1..C`.
    pub deviations: Vec<f64>,
    /// Whether `λ_c(G) ≥ λ_c(G12) ≥ λ_c(G1)` held for all `c = 1..C` with
    /// `1e-8·λ_1` slack.
    pub weyl_ok: bool,
    /// Largest grid point where the density exceeds `1e-3` of its maximum.
    pub bulk_edge: f64,
    /// How many of the supplied top eigenvalues of `G` exceed the bulk edge.
    pub outlier_count: usize,
}

const WEYL_SLACK_REL: f64 = 1e-8;
const BULK_EDGE_REL: f64 = 1e-3;

/// Check the interlacing chain, measure per-index deviations, and estimate
/// the bulk edge from the density.
pub fn compare_outliers(
    g_top: &[f64],
    gram1: &[f64],
    gram12: &[f64],
    density: &SpectralDensity,
) -> Result<OutlierReport> {
    let c = gram1.len();
    if c == 0 {
        return Err(Error::Contract("empty Gram eigenvalue list".into()));
    }
    if g_top.len() < c || gram12.len() < c {
        return Err(Error::Contract(format!(
            "need the top {c} eigenvalues of G and G12; got {} and {}",
            g_top.len(),
            gram12.len()
        )));
    }
    let lambda1 = g_top[0];
    let slack = WEYL_SLACK_REL * lambda1.abs();
    let mut weyl_ok = true;
    for i in 0..c {
        if g_top[i] + slack < gram12[i] || gram12[i] + slack < gram1[i] {
            weyl_ok = false;
        }
    }
    let deviations: Vec<f64> = (0..c)
        .map(|i| {
            if g_top[i] != 0.0 {
                (g_top[i] - gram1[i]).abs() / g_top[i]
            } else if gram1[i] == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();

    let max_density = density.density.iter().cloned().fold(0.0_f64, f64::max);
    let threshold = BULK_EDGE_REL * max_density;
    let bulk_edge = density
        .grid
        .iter()
        .zip(&density.density)
        .filter(|(_, &d)| d > threshold)
        .map(|(&x, _)| x)
        .fold(0.0_f64, f64::max);
    let outlier_count = g_top.iter().filter(|&&ev| ev > bulk_edge).count();

    Ok(OutlierReport {
        top_g: g_top.to_vec(),
        gram_g1: gram1.to_vec(),
        gram_g12: gram12.to_vec(),
        deviations,
        weyl_ok,
        bulk_edge,
        outlier_count,
    })
}

/// Per-snapshot cluster geometry and outlier agreement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub epoch: usize,
    pub score_by_class: f64,
    pub score_by_logit: f64,
    pub trace_ratio: f64,
    /// `|λ_c(G) − λ_c(G1 gram)| / λ_c(G)` for the top `C` pairs.
    pub top_deviations: Vec<f64>,
}

/// Epoch-resolved view of the cluster structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsTable {
    pub rows: Vec<DynamicsRow>,
    /// First epoch whose by-class score exceeds its by-logit score.
    pub transition_epoch: Option<usize>,
}

/// Settings for [`epoch_dynamics`] eigenvalue extraction.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsParams {
    pub topk_max_iter: usize,
    pub topk_tol: f64,
    pub seed: u64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self { topk_max_iter: 80, topk_tol: 1e-9, seed: 0 }
    }
}

/// Analyze model snapshots across epochs: clustering scores, trace ratios,
/// and top-`C` deviations per snapshot, plus the epoch where the by-class
/// score first overtakes the by-logit score.
pub fn epoch_dynamics(
    snapshots: &[(usize, MlpModel)],
    dataset: &LabeledDataset,
    params: &DynamicsParams,
) -> Result<DynamicsTable> {
    if snapshots.len() < 2 {
        return Err(Error::Contract(format!(
            "epoch dynamics needs at least 2 snapshots, got {}",
            snapshots.len()
        )));
    }
    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    order.sort_by_key(|&i| snapshots[i].0);

    let mut rows = Vec::with_capacity(snapshots.len());
    for &i in &order {
        let (epoch, model) = &snapshots[i];
        let delta = build_delta(model, dataset)?;
        let stats = compute_hierarchy(&delta)?;
        let geometry = cluster_geometry(&stats, &delta)?;
        let c = stats.class_count();
        let g = GPart::new(GKind::G, &delta, &stats)?;
        let top = topk_eigs(&g, c, params.topk_max_iter, params.topk_tol,
            derive_seed(params.seed, &format!("dynamics.epoch.{epoch}")))?;
        let gram1 = gram_outliers(&stats, GramLevel::G1)?;
        let top_deviations: Vec<f64> = (0..c)
            .map(|j| {
                if top.eigenvalues[j] != 0.0 {
                    (top.eigenvalues[j] - gram1[j]).abs() / top.eigenvalues[j]
                } else {
                    0.0
                }
            })
            .collect();
        rows.push(DynamicsRow {
            epoch: *epoch,
            score_by_class: geometry.score_by_class,
            score_by_logit: geometry.score_by_logit,
            trace_ratio: geometry.trace_ratio,
            top_deviations,
        });
    }
    let transition_epoch = rows
        .iter()
        .find(|r| r.score_by_class > r.score_by_logit)
        .map(|r| r.epoch);
    Ok(DynamicsTable { rows, transition_epoch })
}

//! The scaled-and-centered logit-derivative matrix `Δ` and the hierarchical
//! decomposition of `G = (1/n) Δ Δᵀ`.
//!
//! Each example contributes `C` columns to `Δ`, one per logit coordinate:
//! `δ_{i,c,c'} = √(p_{c'}) (J_{c'} − Σ_k p_k J_k)` where `J` is the example's
//! logit Jacobian and `p` its softmax probabilities. Grouping columns by
//! `(c, c')` and then clustering the group means by `c` yields
//!
//! ```text
//! G = G0 + G1 + G2 + G3
//! G0 = Σ_c w_c δ_{c,c} δ_{c,c}ᵀ                       diagonal means
//! G1 = (C−1) Σ_c w_c δ_c δ_cᵀ                         cluster centers
//! G2 = Σ_c w_c Σ_{c'≠c} (δ_{c,c'} − δ_c)(…)ᵀ          within-cluster scatter
//! G3 = (1/n) Σ_{c,i,c'} (δ_{i,c,c'} − δ_{c,c'})(…)ᵀ   within-group scatter
//! ```
//!
//! with class weights `w_c = n_c/n` (`1/C` for balanced data, where the
//! expressions reduce to plain class averages). All operators are applied
//! matrix-free; the covariance terms never materialize at `P×P`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, sym_eig_small, DenseMatrix, LinearOperator};
use crate::logistic::{OneHotLabel, ProbVector};
use crate::model::MlpModel;

/// Default cap on the Δ column store.
pub const DEFAULT_DELTA_MEMORY_LIMIT: u64 = 4 << 30;

/// Identity of one Δ column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnKey {
    /// True class of the example.
    pub class: usize,
    /// Position of the example within its class (ascending dataset order).
    pub example: usize,
    /// Logit coordinate the derivative was taken at.
    pub logit: usize,
}

/// The `P×(nC)` matrix of scaled, centered logit derivatives, stored
/// column-major with a three-index column map. Columns are ordered class
/// outer, example middle, logit coordinate inner.
#[derive(Debug, Clone)]
pub struct DeltaMatrix {
    param_count: usize,
    class_count: usize,
    class_counts: Vec<usize>,
    class_offsets: Vec<usize>,
    columns: Vec<f64>,
    keys: Vec<ColumnKey>,
    probs: Vec<ProbVector>,
    balanced: bool,
}

impl DeltaMatrix {
    /// Assemble from raw columns; used for synthetic configurations and by
    /// the builder. Columns must follow the (class, example, logit) order and
    /// `probs` holds one entry per example in the same example order.
    pub fn from_raw_parts(
        param_count: usize,
        class_counts: Vec<usize>,
        columns: Vec<f64>,
        probs: Vec<ProbVector>,
    ) -> Result<Self> {
        let class_count = class_counts.len();
        if class_count == 0 {
            return Err(Error::Contract("no classes".into()));
        }
        let n: usize = class_counts.iter().sum();
        if columns.len() != n * class_count * param_count {
            return Err(Error::Contract(format!(
                "column store has {} values, expected n*C*P = {}",
                columns.len(),
                n * class_count * param_count
            )));
        }
        if probs.len() != n {
            return Err(Error::Contract(format!(
                "{} probability records for {n} examples",
                probs.len()
            )));
        }
        if probs.iter().any(|p| p.len() != class_count) {
            return Err(Error::Contract("probability record has wrong class count".into()));
        }
        let mut class_offsets = Vec::with_capacity(class_count);
        let mut acc = 0;
        for &nc in &class_counts {
            class_offsets.push(acc);
            acc += nc;
        }
        let mut keys = Vec::with_capacity(n * class_count);
        for (c, &nc) in class_counts.iter().enumerate() {
            for i in 0..nc {
                for cp in 0..class_count {
                    keys.push(ColumnKey { class: c, example: i, logit: cp });
                }
            }
        }
        let first = class_counts[0];
        let balanced = class_counts.iter().all(|&nc| nc == first);
        Ok(Self {
            param_count,
            class_count,
            class_counts,
            class_offsets,
            columns,
            keys,
            probs,
            balanced,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn example_count(&self) -> usize {
        self.probs.len()
    }

    pub fn column_count(&self) -> usize {
        self.keys.len()
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    /// Flat index of column (class, within-class example, logit coordinate).
    pub fn col_index(&self, class: usize, example: usize, logit: usize) -> usize {
        (self.class_offsets[class] + example) * self.class_count + logit
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.columns[index * self.param_count..(index + 1) * self.param_count]
    }

    pub fn key(&self, index: usize) -> ColumnKey {
        self.keys[index]
    }

    pub fn keys(&self) -> &[ColumnKey] {
        &self.keys
    }

    /// Probabilities recorded for (class, within-class example).
    pub fn prob(&self, class: usize, example: usize) -> &ProbVector {
        &self.probs[self.class_offsets[class] + example]
    }
}

/// Build `Δ` with the default memory cap.
pub fn build_delta(model: &MlpModel, dataset: &LabeledDataset) -> Result<DeltaMatrix> {
    build_delta_with_limit(model, dataset, DEFAULT_DELTA_MEMORY_LIMIT)
}

/// Build `Δ` for `model` on `dataset`, refusing if the column store would
/// exceed `memory_limit` bytes.
pub fn build_delta_with_limit(
    model: &MlpModel,
    dataset: &LabeledDataset,
    memory_limit: u64,
) -> Result<DeltaMatrix> {
    let p = model.param_count();
    let c = model.class_count();
    if dataset.class_count() != c {
        return Err(Error::Data(format!(
            "dataset has {} classes, model outputs {c}",
            dataset.class_count()
        )));
    }
    if dataset.dim() != model.input_dim() {
        return Err(Error::Data(format!(
            "dataset dimension {} does not match model input {}",
            dataset.dim(),
            model.input_dim()
        )));
    }
    let n = dataset.len();
    let required = (n as u64) * (c as u64) * (p as u64) * 8;
    if required > memory_limit {
        return Err(Error::MemoryLimit { required, limit: memory_limit });
    }

    // class-major example order
    let mut rows: Vec<usize> = Vec::with_capacity(n);
    for class_rows in dataset.class_index() {
        rows.extend_from_slice(class_rows);
    }

    let mut columns = vec![0.0; n * c * p];
    let probs: Vec<ProbVector> = columns
        .par_chunks_mut(c * p)
        .zip(rows.par_iter())
        .map(|(chunk, &row)| -> Result<ProbVector> {
            let jac = model.logit_jacobian(dataset.example(row))?.matrix;
            let pr = model.predict_probs(dataset.example(row))?;
            for cp in 0..c {
                let w = pr.get(cp).sqrt();
                let col = &mut chunk[cp * p..(cp + 1) * p];
                // J_{c'} − Σ_k p_k J_k evaluated as Σ_{k≠c'} p_k (J_{c'} − J_k):
                // the direct subtraction cancels catastrophically once one
                // probability saturates, this form stays accurate to ~C·ε
                // relative at any confidence level
                for k in 0..c {
                    if k == cp {
                        continue;
                    }
                    let pk = pr.get(k);
                    if pk == 0.0 {
                        continue;
                    }
                    for ((o, jc), jk) in col.iter_mut().zip(jac.row(cp)).zip(jac.row(k)) {
                        *o += pk * (jc - jk);
                    }
                }
                for o in col.iter_mut() {
                    *o *= w;
                }
            }
            Ok(pr)
        })
        .collect::<Result<Vec<_>>>()?;

    DeltaMatrix::from_raw_parts(p, dataset.class_counts(), columns, probs)
}

/// Per-example agreement between the diagonal column `δ_{i,c,c}` and the
/// loss gradient. The two are collinear with scale `√(p_c)`; vanishing pairs
/// (confident examples) are skipped and counted.
#[derive(Debug, Clone, Serialize)]
pub struct CollinearityReport {
    /// `|cos(δ_{i,c,c}, ∇loss)|` per non-degenerate example, in class-major
    /// example order.
    pub cosines: Vec<f64>,
    /// `‖δ_{i,c,c}‖ / ‖∇loss‖` per non-degenerate example.
    pub ratios: Vec<f64>,
    /// `√(p_c)` per non-degenerate example.
    pub expected_ratios: Vec<f64>,
    /// Number of examples skipped because either vector vanished.
    pub skipped: usize,
}

/// Norms below this are treated as vanished; squaring smaller values would
/// underflow and corrupt the cosine.
const DEGENERATE_NORM: f64 = 1e-120;

pub fn delta_gradient_collinearity(
    delta: &DeltaMatrix,
    model: &MlpModel,
    dataset: &LabeledDataset,
) -> Result<CollinearityReport> {
    if delta.param_count() != model.param_count() {
        return Err(Error::Contract("Δ and model disagree on parameter count".into()));
    }
    let mut report = CollinearityReport {
        cosines: Vec::new(),
        ratios: Vec::new(),
        expected_ratios: Vec::new(),
        skipped: 0,
    };
    for (c, class_rows) in dataset.class_index().iter().enumerate() {
        for (i, &row) in class_rows.iter().enumerate() {
            let y = OneHotLabel::new(c, delta.class_count())?;
            let grad = model.loss_grad(dataset.example(row), y)?;
            let diag = delta.column(delta.col_index(c, i, c));
            let dn = norm(diag);
            let gn = norm(&grad);
            if dn < DEGENERATE_NORM || gn < DEGENERATE_NORM {
                report.skipped += 1;
                continue;
            }
            report.cosines.push((dot(diag, &grad) / (dn * gn)).abs());
            report.ratios.push(dn / gn);
            report.expected_ratios.push(delta.prob(c, i).get(c).sqrt());
        }
    }
    Ok(report)
}

/// Group means, cluster centers and class weights of the Δ hierarchy.
#[derive(Debug, Clone)]
pub struct HierarchyStats {
    param_count: usize,
    class_count: usize,
    /// `δ_{c,c'}` stacked at (c*C + c')*P.
    group_means: Vec<f64>,
    /// `δ_c = Ave_{c'≠c} δ_{c,c'}` stacked at c*P.
    cluster_centers: Vec<f64>,
    /// `w_c = n_c / n`.
    class_weights: Vec<f64>,
    balanced: bool,
}

impl HierarchyStats {
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn group_mean(&self, c: usize, cp: usize) -> &[f64] {
        let p = self.param_count;
        let idx = c * self.class_count + cp;
        &self.group_means[idx * p..(idx + 1) * p]
    }

    /// `δ_{c,c}`, the group mean at the example's own logit coordinate.
    pub fn diag_mean(&self, c: usize) -> &[f64] {
        self.group_mean(c, c)
    }

    pub fn cluster_center(&self, c: usize) -> &[f64] {
        &self.cluster_centers[c * self.param_count..(c + 1) * self.param_count]
    }

    pub fn class_weight(&self, c: usize) -> f64 {
        self.class_weights[c]
    }

    pub fn is_balanced(&self) -> bool {
        self.balanced
    }
}

/// Compute group means and cluster centers in fixed index order.
pub fn compute_hierarchy(delta: &DeltaMatrix) -> Result<HierarchyStats> {
    let c = delta.class_count();
    let p = delta.param_count();
    if c < 2 {
        return Err(Error::Contract("hierarchy needs at least 2 classes".into()));
    }
    for (class, &nc) in delta.class_counts().iter().enumerate() {
        if nc == 0 {
            return Err(Error::Data(format!("class {class} has no examples")));
        }
    }
    let n: usize = delta.class_counts().iter().sum();

    let mut group_means = vec![0.0; c * c * p];
    for class in 0..c {
        let nc = delta.class_counts()[class];
        for i in 0..nc {
            for cp in 0..c {
                let col = delta.column(delta.col_index(class, i, cp));
                let idx = class * c + cp;
                axpy(1.0, col, &mut group_means[idx * p..(idx + 1) * p]);
            }
        }
        for cp in 0..c {
            let idx = class * c + cp;
            for v in &mut group_means[idx * p..(idx + 1) * p] {
                *v /= nc as f64;
            }
        }
    }

    let mut cluster_centers = vec![0.0; c * p];
    for class in 0..c {
        for cp in 0..c {
            if cp == class {
                continue;
            }
            let idx = class * c + cp;
            let mean = group_means[idx * p..(idx + 1) * p].to_vec();
            axpy(1.0, &mean, &mut cluster_centers[class * p..(class + 1) * p]);
        }
        for v in &mut cluster_centers[class * p..(class + 1) * p] {
            *v /= (c - 1) as f64;
        }
    }

    let class_weights: Vec<f64> =
        delta.class_counts().iter().map(|&nc| nc as f64 / n as f64).collect();

    Ok(HierarchyStats {
        param_count: p,
        class_count: c,
        group_means,
        cluster_centers,
        class_weights,
        balanced: delta.is_balanced(),
    })
}

/// Which piece of the decomposition an operator applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GKind {
    /// `(1/n) Δ Δᵀ`
    G,
    /// Second moment of the diagonal means `δ_{c,c}`.
    G0,
    /// Scaled second moment of the cluster centers `δ_c`.
    G1,
    /// Within-cluster scatter of the group means around their centers.
    G2,
    /// Within-group scatter of the columns around their group means.
    G3,
    /// `G0 + G1 + G2`: the second moment of all group means.
    G12,
}

impl GKind {
    pub fn name(self) -> &'static str {
        match self {
            GKind::G => "G",
            GKind::G0 => "G0",
            GKind::G1 => "G1",
            GKind::G2 => "G2",
            GKind::G3 => "G3",
            GKind::G12 => "G12",
        }
    }
}

/// A matrix-free symmetric PSD operator for one part of the decomposition.
pub struct GPart<'a> {
    kind: GKind,
    delta: &'a DeltaMatrix,
    stats: &'a HierarchyStats,
}

impl<'a> GPart<'a> {
    pub fn new(kind: GKind, delta: &'a DeltaMatrix, stats: &'a HierarchyStats) -> Result<Self> {
        if delta.param_count() != stats.param_count()
            || delta.class_count() != stats.class_count()
        {
            return Err(Error::Contract("Δ and hierarchy stats disagree on dimensions".into()));
        }
        Ok(Self { kind, delta, stats })
    }

    pub fn kind(&self) -> GKind {
        self.kind
    }

    fn apply_kind(&self, kind: GKind, v: &[f64], out: &mut [f64]) {
        let delta = self.delta;
        let stats = self.stats;
        let c = delta.class_count();
        let p = delta.param_count();
        match kind {
            GKind::G => {
                let n: usize = delta.class_counts().iter().sum();
                for idx in 0..delta.column_count() {
                    let col = delta.column(idx);
                    let t = dot(col, v) / n as f64;
                    axpy(t, col, out);
                }
            }
            GKind::G0 => {
                for class in 0..c {
                    let u = stats.diag_mean(class);
                    let t = stats.class_weight(class) * dot(u, v);
                    axpy(t, u, out);
                }
            }
            GKind::G1 => {
                for class in 0..c {
                    let u = stats.cluster_center(class);
                    let t = (c - 1) as f64 * stats.class_weight(class) * dot(u, v);
                    axpy(t, u, out);
                }
            }
            GKind::G2 => {
                let mut u = vec![0.0; p];
                for class in 0..c {
                    let center = stats.cluster_center(class);
                    for cp in 0..c {
                        if cp == class {
                            continue;
                        }
                        let mean = stats.group_mean(class, cp);
                        for ((ui, m), ce) in u.iter_mut().zip(mean).zip(center) {
                            *ui = m - ce;
                        }
                        let t = stats.class_weight(class) * dot(&u, v);
                        axpy(t, &u, out);
                    }
                }
            }
            GKind::G3 => {
                let n: usize = delta.class_counts().iter().sum();
                let mut u = vec![0.0; p];
                for class in 0..c {
                    for i in 0..delta.class_counts()[class] {
                        for cp in 0..c {
                            let col = delta.column(delta.col_index(class, i, cp));
                            let mean = stats.group_mean(class, cp);
                            for ((ui, x), m) in u.iter_mut().zip(col).zip(mean) {
                                *ui = x - m;
                            }
                            let t = dot(&u, v) / n as f64;
                            axpy(t, &u, out);
                        }
                    }
                }
            }
            GKind::G12 => {
                self.apply_kind(GKind::G0, v, out);
                self.apply_kind(GKind::G1, v, out);
                self.apply_kind(GKind::G2, v, out);
            }
        }
    }
}

impl LinearOperator for GPart<'_> {
    fn dim(&self) -> usize {
        self.delta.param_count()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.apply_kind(self.kind, v, out);
    }
}

/// Matrix-free product `part · v`.
pub fn g_apply(part: &GPart, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != part.dim() {
        return Err(Error::Contract(format!(
            "vector length {} does not match operator dimension {}",
            v.len(),
            part.dim()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite probe vector".into()));
    }
    Ok(part.apply_vec(v))
}

const MAX_MATERIALIZE_DIM: usize = 2000;

/// Materialize an operator as a dense `P×P` matrix by probing with basis
/// vectors. A test oracle; refuses `P > 2000`.
pub fn materialize(part: &GPart) -> Result<DenseMatrix> {
    let p = part.dim();
    if p > MAX_MATERIALIZE_DIM {
        return Err(Error::Contract(format!(
            "materialization refused for P = {p} > {MAX_MATERIALIZE_DIM}"
        )));
    }
    let mut out = DenseMatrix::zeros(p, p);
    let mut basis = vec![0.0; p];
    let mut col = vec![0.0; p];
    for j in 0..p {
        basis[j] = 1.0;
        part.apply(&basis, &mut col);
        basis[j] = 0.0;
        for i in 0..p {
            out.set(i, j, col[i]);
        }
    }
    Ok(out)
}

/// Which low-rank level a Gram shortcut targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramLevel {
    /// `C×C` Gram of cluster centers; its spectrum equals the nonzero
    /// spectrum of `G1`.
    G1,
    /// `C²×C²` Gram of group means; its spectrum equals the nonzero spectrum
    /// of `G12`.
    G12,
}

/// Eigenvalues (descending) of the scaled Gram matrix at the requested
/// level, equal to the nonzero spectrum of the corresponding operator. For
/// `G1` the Gram is `K_ab = (C−1)√(w_a w_b)⟨δ_a, δ_b⟩` — `((C−1)/C)⟨δ_a,δ_b⟩`
/// for balanced classes; for `G12` it is `√(w_a w_b)⟨δ_{a,a'}, δ_{b,b'}⟩`.
pub fn gram_outliers(stats: &HierarchyStats, level: GramLevel) -> Result<Vec<f64>> {
    let c = stats.class_count();
    let gram = match level {
        GramLevel::G1 => DenseMatrix::from_fn(c, c, |a, b| {
            (c - 1) as f64
                * (stats.class_weight(a) * stats.class_weight(b)).sqrt()
                * dot(stats.cluster_center(a), stats.cluster_center(b))
        }),
        GramLevel::G12 => DenseMatrix::from_fn(c * c, c * c, |row, col| {
            let (a, ap) = (row / c, row % c);
            let (b, bp) = (col / c, col % c);
            (stats.class_weight(a) * stats.class_weight(b)).sqrt()
                * dot(stats.group_mean(a, ap), stats.group_mean(b, bp))
        }),
    };
    let (eigs, _) = sym_eig_small(&gram)?;
    Ok(eigs)
}

/// Scatter summary of the cluster structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    /// `tr(G1)`: between-cluster scatter.
    pub between_trace: f64,
    /// `tr(G2)`: within-cluster scatter.
    pub within_trace: f64,
    /// `tr(G1)/tr(G2)`; infinite when the within trace vanishes.
    pub trace_ratio: f64,
    /// `‖δ_{c,c}‖` per class.
    pub diag_norms: Vec<f64>,
    /// `‖δ_c‖` per class.
    pub center_norms: Vec<f64>,
    pub median_diag_norm: f64,
    pub median_center_norm: f64,
    /// Between/total scatter of the off-diagonal group means labeled by the
    /// true class `c`.
    pub score_by_class: f64,
    /// Same points labeled by the logit coordinate `c'`.
    pub score_by_logit: f64,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Between-group scatter trace over total scatter trace for labeled points;
/// 1 when groups are internally identical but mutually distinct, 0 when the
/// labeling explains none of the variance (or everything coincides).
fn scatter_score(points: &[&[f64]], labels: &[usize], label_count: usize) -> f64 {
    let p = points[0].len();
    let m = points.len() as f64;
    let mut global = vec![0.0; p];
    for pt in points {
        axpy(1.0, pt, &mut global);
    }
    for v in &mut global {
        *v /= m;
    }
    let mut total = 0.0;
    for pt in points {
        total += pt.iter().zip(&global).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    if total == 0.0 {
        return 0.0;
    }
    let mut between = 0.0;
    for g in 0..label_count {
        let members: Vec<&&[f64]> =
            points.iter().zip(labels).filter(|(_, &l)| l == g).map(|(pt, _)| pt).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; p];
        for pt in &members {
            axpy(1.0, pt, &mut mean);
        }
        for v in &mut mean {
            *v /= members.len() as f64;
        }
        let dist2: f64 = mean.iter().zip(&global).map(|(a, b)| (a - b) * (a - b)).sum();
        between += members.len() as f64 * dist2;
    }
    between / total
}

/// Quantify the cluster geometry: scatter traces, diagonal-mean norms, and
/// how well the off-diagonal group means separate when labeled by class
/// versus by logit coordinate.
pub fn cluster_geometry(stats: &HierarchyStats, delta: &DeltaMatrix) -> Result<GeometryReport> {
    if stats.param_count() != delta.param_count()
        || stats.class_count() != delta.class_count()
    {
        return Err(Error::Contract("Δ and hierarchy stats disagree on dimensions".into()));
    }
    let c = stats.class_count();

    let mut between_trace = 0.0;
    for class in 0..c {
        let u = stats.cluster_center(class);
        between_trace += (c - 1) as f64 * stats.class_weight(class) * dot(u, u);
    }
    let mut within_trace = 0.0;
    for class in 0..c {
        let center = stats.cluster_center(class);
        for cp in 0..c {
            if cp == class {
                continue;
            }
            let mean = stats.group_mean(class, cp);
            let d2: f64 = mean.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            within_trace += stats.class_weight(class) * d2;
        }
    }
    let trace_ratio = if within_trace > 0.0 { between_trace / within_trace } else { f64::INFINITY };

    let diag_norms: Vec<f64> = (0..c).map(|class| norm(stats.diag_mean(class))).collect();
    let center_norms: Vec<f64> = (0..c).map(|class| norm(stats.cluster_center(class))).collect();

    let mut points: Vec<&[f64]> = Vec::with_capacity(c * (c - 1));
    let mut by_class: Vec<usize> = Vec::with_capacity(c * (c - 1));
    let mut by_logit: Vec<usize> = Vec::with_capacity(c * (c - 1));
    for class in 0..c {
        for cp in 0..c {
            if cp == class {
                continue;
            }
            points.push(stats.group_mean(class, cp));
            by_class.push(class);
            by_logit.push(cp);
        }
    }
    let score_by_class = scatter_score(&points, &by_class, c);
    let score_by_logit = scatter_score(&points, &by_logit, c);

    Ok(GeometryReport {
        between_trace,
        within_trace,
        trace_ratio,
        median_diag_norm: median(&diag_norms),
        median_center_norm: median(&center_norms),
        diag_norms,
        center_norms,
        score_by_class,
        score_by_logit,
    })
}

/// JSON header of the Δ export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaExportHeader {
    /// Parameter count (rows of Δ).
    pub p: usize,
    /// Number of examples.
    pub n: usize,
    /// Number of classes / logit coordinates.
    pub c: usize,
    /// Human-readable statement of the column order.
    pub order: String,
    /// Per-column `(class, example, logit)` triples, in storage order.
    pub columns: Vec<(usize, usize, usize)>,
}

/// Write the Δ columns as raw little-endian 64-bit floats plus a JSON
/// header describing the column index map. Consumed by external embedding
/// tools.
pub fn write_delta_export(delta: &DeltaMatrix, bin_path: &Path, json_path: &Path) -> Result<()> {
    let header = DeltaExportHeader {
        p: delta.param_count(),
        n: delta.example_count(),
        c: delta.class_count(),
        order: "columns sorted by (class c, within-class example i, logit c'), logit fastest; \
                each column is p little-endian f64 values"
            .into(),
        columns: delta.keys().iter().map(|k| (k.class, k.example, k.logit)).collect(),
    };
    fs::write(json_path, serde_json::to_vec_pretty(&header)?)?;
    let mut bytes = Vec::with_capacity(delta.columns.len() * 8);
    for v in &delta.columns {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin_path, bytes)?;
    Ok(())
}

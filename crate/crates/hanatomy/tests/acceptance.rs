//! Acceptance suite for the curvature-decomposition pipeline.
//!
//! One test per criterion; each prints a `criterion NN ...: PASS/FAIL` line
//! with the measured quantities (run with `--nocapture` to see them all).
//!
//! Reference configuration: a balanced Gaussian mixture (C = 5 classes,
//! d_in = 20, 300 examples per class, separation 3.0, noise 0.3) and a
//! relu MLP with hidden layers (64, 64) (P = 5829), trained by SGD with
//! momentum 0.9, weight decay 5e-3, batch 128, initial rate 0.1 annealed
//! by 10 at thirds, for 900 epochs. Materialization oracles run on a
//! (32, 16) variant (P = 1285) and the finite-difference Hessian check on
//! a tanh (24, 12) variant (P = 869) trained without weight decay.

use std::path::Path;
use std::process::Command;

use once_cell::sync::Lazy;

use hessian_anatomy::data::{gen_gaussian_mixture, LabeledDataset};
use hessian_anatomy::decomp::{
    build_delta, cluster_geometry, compute_hierarchy, delta_gradient_collinearity, gram_outliers,
    materialize, DeltaMatrix, GKind, GPart, GramLevel, HierarchyStats,
};
use hessian_anatomy::linalg::{axpy, norm, sym_eig_small, DenseMatrix, LinearOperator};
use hessian_anatomy::logistic::{ce_hessian, factor_ce_hessian, softmax};
use hessian_anatomy::model::{
    full_hessian_fd, init_mlp, Activation, MlpModel,
};
use hessian_anatomy::spectrum::{
    compare_outliers, density_l1_distance, epoch_dynamics, kernel_density, linear_grid,
    slq_density, topk_eigs, DynamicsParams, SpectralDensity, TopkResult,
};
use hessian_anatomy::train::{sgd_train, TrainConfig, TrainTrace};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 5;
const D_IN: usize = 20;
const PER_CLASS: usize = 300;
const SEPARATION: f64 = 3.0;
const NOISE: f64 = 0.3;
const DATA_SEED: u64 = 1001;
const EPOCHS: usize = 900;
const SNAPSHOT_EPOCHS: &[usize] = &[1, 4, 16, 64, 256, EPOCHS];

fn check(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id:02} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id:02} ({name}) failed: {detail}");
}

fn train_config() -> TrainConfig {
    TrainConfig {
        initial_lr: 0.1,
        momentum: 0.9,
        weight_decay: 5e-3,
        batch_size: 128,
        epochs: EPOCHS,
        snapshot_epochs: SNAPSHOT_EPOCHS.to_vec(),
        seed: 2002,
    }
}

static DATASET: Lazy<LabeledDataset> = Lazy::new(|| {
    gen_gaussian_mixture(CLASSES, D_IN, PER_CLASS, SEPARATION, NOISE, DATA_SEED).unwrap()
});

static BIG_UNTRAINED: Lazy<MlpModel> =
    Lazy::new(|| init_mlp(&[D_IN, 64, 64, CLASSES], Activation::Relu, 3003).unwrap());

static BIG_TRAINED: Lazy<(MlpModel, TrainTrace)> =
    Lazy::new(|| sgd_train(&BIG_UNTRAINED, &DATASET, &train_config()).unwrap());

static BIG_ANALYSIS: Lazy<(DeltaMatrix, HierarchyStats)> = Lazy::new(|| {
    let delta = build_delta(&BIG_TRAINED.0, &DATASET).unwrap();
    let stats = compute_hierarchy(&delta).unwrap();
    (delta, stats)
});

static BIG_TOP: Lazy<TopkResult> = Lazy::new(|| {
    let (delta, stats) = &*BIG_ANALYSIS;
    let g = GPart::new(GKind::G, delta, stats).unwrap();
    topk_eigs(&g, CLASSES, 80, 1e-9, 4004).unwrap()
});

static BIG_GRAMS: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| {
    let (_, stats) = &*BIG_ANALYSIS;
    (
        gram_outliers(stats, GramLevel::G1).unwrap(),
        gram_outliers(stats, GramLevel::G12).unwrap(),
    )
});

static BIG_DENSITY: Lazy<SpectralDensity> = Lazy::new(|| {
    let (delta, stats) = &*BIG_ANALYSIS;
    let g = GPart::new(GKind::G, delta, stats).unwrap();
    let lambda1 = BIG_TOP.eigenvalues[0];
    let hi = 1.05 * lambda1;
    let grid = linear_grid(0.0, hi, 1024);
    slq_density(&g, 10, 100, hi / 200.0, &grid, 5005).unwrap()
});

static SMALL_TRAINED: Lazy<MlpModel> = Lazy::new(|| {
    let model = init_mlp(&[D_IN, 32, 16, CLASSES], Activation::Relu, 3113).unwrap();
    sgd_train(&model, &DATASET, &train_config()).unwrap().0
});

static TANH_TRAINED: Lazy<MlpModel> = Lazy::new(|| {
    let model = init_mlp(&[D_IN, 24, 12, CLASSES], Activation::Tanh, 3223).unwrap();
    let cfg = TrainConfig { weight_decay: 0.0, ..train_config() };
    sgd_train(&model, &DATASET, &cfg).unwrap().0
});

/// First `per_class` examples of each class, as their own dataset.
fn class_subset(source: &LabeledDataset, per_class: usize) -> LabeledDataset {
    let rows: Vec<usize> = source
        .class_index()
        .iter()
        .flat_map(|ix| ix.iter().take(per_class).copied())
        .collect();
    let features = DenseMatrix::from_fn(rows.len(), source.dim(), |i, j| {
        source.features().get(rows[i], j)
    });
    let labels: Vec<usize> = rows.iter().map(|&r| source.label(r)).collect();
    LabeledDataset::new(features, labels, source.class_count()).unwrap()
}

#[test]
fn c01_lemma_factor_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..9);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
        let p = softmax(&logits).unwrap();
        let a = factor_ce_hessian(&p);
        let ata = a.transpose().matmul(&a);
        let h = ce_hessian(&p);
        for i in 0..c {
            for j in 0..c {
                worst = worst.max((ata.get(i, j) - h.get(i, j)).abs());
            }
        }
    }
    check(
        1,
        "square-root factor reproduces the logit Hessian",
        worst <= 1e-12,
        &format!("max entrywise |AᵀA − (diag p − ppᵀ)| = {worst:.3e} over 1000 simplex points"),
    );
}

#[test]
fn c02_assembly_identity() {
    // untrained (32,16) model on a 30-per-class subset: P = 1285 ≤ 2000
    let model = init_mlp(&[D_IN, 32, 16, CLASSES], Activation::Relu, 3113).unwrap();
    let subset = class_subset(&DATASET, 30);
    let delta = build_delta(&model, &subset).unwrap();
    let stats = compute_hierarchy(&delta).unwrap();
    let g = GPart::new(GKind::G, &delta, &stats).unwrap();
    let dense_g = materialize(&g).unwrap();

    let p = model.param_count();
    let mut oracle = DenseMatrix::zeros(p, p);
    for i in 0..subset.len() {
        let jac = model.logit_jacobian(subset.example(i)).unwrap().matrix;
        let probs = model.predict_probs(subset.example(i)).unwrap();
        let jthj = jac.transpose().matmul(&ce_hessian(&probs).matmul(&jac));
        for r in 0..p {
            for c in 0..p {
                oracle.set(r, c, oracle.get(r, c) + jthj.get(r, c) / subset.len() as f64);
            }
        }
    }
    let mut diff2 = 0.0;
    for r in 0..p {
        for c in 0..p {
            let d = dense_g.get(r, c) - oracle.get(r, c);
            diff2 += d * d;
        }
    }
    let rel = diff2.sqrt() / oracle.frobenius_norm();
    check(
        2,
        "(1/n)ΔΔᵀ assembles the Jacobian-sandwiched logit Hessian",
        rel <= 1e-10,
        &format!("relative Frobenius error {rel:.3e} at P = {p}"),
    );
}

fn probe_identity(delta: &DeltaMatrix, stats: &HierarchyStats, probe_seed: u64) -> (f64, f64) {
    let g = GPart::new(GKind::G, delta, stats).unwrap();
    let parts: Vec<GPart> = [GKind::G0, GKind::G1, GKind::G2, GKind::G3]
        .iter()
        .map(|&k| GPart::new(k, delta, stats).unwrap())
        .collect();
    let g12 = GPart::new(GKind::G12, delta, stats).unwrap();
    let g3 = GPart::new(GKind::G3, delta, stats).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let p = delta.param_count();
    let mut worst_sum = 0.0_f64;
    let mut worst_split = 0.0_f64;
    for _ in 0..20 {
        let v: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gv = g.apply_vec(&v);
        let gv_norm = norm(&gv);
        let mut sum = vec![0.0; p];
        for part in &parts {
            axpy(1.0, &part.apply_vec(&v), &mut sum);
        }
        let err_sum =
            gv.iter().zip(&sum).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut split = g12.apply_vec(&v);
        axpy(1.0, &g3.apply_vec(&v), &mut split);
        let err_split =
            gv.iter().zip(&split).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst_sum = worst_sum.max(err_sum / gv_norm);
        worst_split = worst_split.max(err_split / gv_norm);
    }
    (worst_sum, worst_split)
}

#[test]
fn c03_hierarchy_identity_balanced_and_weighted() {
    let (delta, stats) = &*BIG_ANALYSIS;
    let (worst_sum, worst_split) = probe_identity(delta, stats, 303);

    // deliberately unbalanced: uneven per-class subsets of a fresh mixture
    let base = gen_gaussian_mixture(3, 8, 60, 3.0, 0.8, 404).unwrap();
    let keep: Vec<usize> = (0..base.len())
        .filter(|&i| match base.label(i) {
            0 => i % 3 != 0,
            1 => true,
            _ => i % 2 == 0,
        })
        .collect();
    let features =
        DenseMatrix::from_fn(keep.len(), base.dim(), |i, j| base.features().get(keep[i], j));
    let labels: Vec<usize> = keep.iter().map(|&i| base.label(i)).collect();
    let unbalanced = LabeledDataset::new(features, labels, 3).unwrap();
    assert!(!unbalanced.is_balanced());
    let model = init_mlp(&[8, 16, 8, 3], Activation::Tanh, 405).unwrap();
    let delta_u = build_delta(&model, &unbalanced).unwrap();
    let stats_u = compute_hierarchy(&delta_u).unwrap();
    let (worst_sum_u, worst_split_u) = probe_identity(&delta_u, &stats_u, 406);

    let worst = worst_sum.max(worst_split).max(worst_sum_u).max(worst_split_u);
    check(
        3,
        "G = G0+G1+G2+G3 and G = G12+G3 on probes, balanced and weighted",
        worst <= 1e-10,
        &format!(
            "max relative probe error: balanced {:.3e}/{:.3e}, unbalanced {:.3e}/{:.3e}",
            worst_sum, worst_split, worst_sum_u, worst_split_u
        ),
    );
}

fn weyl_chain_holds(top: &[f64], gram12: &[f64], gram1: &[f64]) -> (bool, f64) {
    let slack = 1e-8 * top[0].abs();
    let mut ok = true;
    let mut worst_violation = 0.0_f64;
    for c in 0..CLASSES {
        let v1 = gram12[c] - top[c];
        let v2 = gram1[c] - gram12[c];
        worst_violation = worst_violation.max(v1).max(v2);
        if v1 > slack || v2 > slack {
            ok = false;
        }
    }
    (ok, worst_violation)
}

#[test]
fn c04_weyl_chain_untrained_and_trained() {
    // untrained
    let delta = build_delta(&BIG_UNTRAINED, &DATASET).unwrap();
    let stats = compute_hierarchy(&delta).unwrap();
    let g = GPart::new(GKind::G, &delta, &stats).unwrap();
    let top_u = topk_eigs(&g, CLASSES, 80, 1e-9, 505).unwrap();
    let gram1_u = gram_outliers(&stats, GramLevel::G1).unwrap();
    let gram12_u = gram_outliers(&stats, GramLevel::G12).unwrap();
    let (ok_u, viol_u) = weyl_chain_holds(&top_u.eigenvalues, &gram12_u, &gram1_u);

    // trained
    let (gram1, gram12) = &*BIG_GRAMS;
    let (ok_t, viol_t) = weyl_chain_holds(&BIG_TOP.eigenvalues, gram12, gram1);

    check(
        4,
        "λc(G) ≥ λc(G12) ≥ λc(G1) with 1e-8·λ1 slack",
        ok_u && ok_t,
        &format!("worst chain violation: untrained {viol_u:.3e}, trained {viol_t:.3e}"),
    );
}

#[test]
fn c05_outlier_attribution() {
    let (gram1, gram12) = &*BIG_GRAMS;
    let report = compare_outliers(&BIG_TOP.eigenvalues, gram1, gram12, &BIG_DENSITY).unwrap();

    let count_ok = report.outlier_count == CLASSES;
    let max_dev = report.deviations.iter().cloned().fold(0.0_f64, f64::max);
    let dev_ok = max_dev <= 0.5;
    let max_gram_gap = (0..CLASSES)
        .map(|c| (gram12[c] - gram1[c]).abs() / gram1[c])
        .fold(0.0_f64, f64::max);
    let gram_ok = max_gram_gap <= 0.15;

    check(
        5,
        "exactly C outliers beyond the bulk edge, attributed to the center Gram",
        count_ok && dev_ok && gram_ok,
        &format!(
            "outliers {} (expected {CLASSES}), bulk edge {:.3e}, deviations {:?} (max {:.3} ≤ 0.5), \
             gram12 vs gram1 max {:.3} ≤ 0.15",
            report.outlier_count,
            report.bulk_edge,
            report
                .deviations
                .iter()
                .map(|v| (v * 1e3).round() / 1e3)
                .collect::<Vec<_>>(),
            max_dev,
            max_gram_gap
        ),
    );
}

#[test]
fn c06_slq_density_fidelity() {
    let delta = build_delta(&SMALL_TRAINED, &DATASET).unwrap();
    let stats = compute_hierarchy(&delta).unwrap();
    let g = GPart::new(GKind::G, &delta, &stats).unwrap();
    let dense = materialize(&g).unwrap();
    let (eigs, _) = sym_eig_small(&dense).unwrap();

    let hi = 1.05 * eigs[0];
    let grid = linear_grid(0.0, hi, 1024);
    let sigma = hi / 200.0;
    let slq = slq_density(&g, 10, 100, sigma, &grid, 606).unwrap();
    let exact = kernel_density(&eigs, &grid, sigma);
    let l1 = density_l1_distance(&slq, &exact);
    // probe-seed stability on the same operator
    let slq_b = slq_density(&g, 10, 100, sigma, &grid, 607).unwrap();
    let seed_l1 = density_l1_distance(&slq, &slq_b);
    check(
        6,
        "SLQ density matches the exact-eigenvalue kernel density",
        l1 <= 0.05 && seed_l1 <= 0.08,
        &format!(
            "L1 distance {l1:.4} with m = 10, k = 100 at P = {}; seed-to-seed L1 {seed_l1:.4}",
            SMALL_TRAINED.param_count()
        ),
    );
}

#[test]
fn c07_gradient_collinearity() {
    let (delta, _) = &*BIG_ANALYSIS;
    let report = delta_gradient_collinearity(delta, &BIG_TRAINED.0, &DATASET).unwrap();
    let min_cos = report.cosines.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ratio_err = report
        .ratios
        .iter()
        .zip(&report.expected_ratios)
        .map(|(r, e)| (r - e).abs())
        .fold(0.0_f64, f64::max);
    let pass = min_cos >= 1.0 - 1e-8 && max_ratio_err <= 1e-8;
    check(
        7,
        "diagonal Δ columns are collinear with loss gradients at scale √p_c",
        pass,
        &format!(
            "min |cosine| = 1 − {:.3e}, max |ratio − √p_c| = {:.3e}, {} skipped of {}",
            1.0 - min_cos,
            max_ratio_err,
            report.skipped,
            DATASET.len()
        ),
    );
}

#[test]
fn c08_cluster_geometry_at_convergence() {
    let (delta, stats) = &*BIG_ANALYSIS;
    let geometry = cluster_geometry(stats, delta).unwrap();
    let ratio_ok = geometry.trace_ratio > 1.0;
    let diag_ok = geometry.median_diag_norm <= 0.2 * geometry.median_center_norm;
    check(
        8,
        "between-cluster scatter dominates and diagonal means are near zero",
        ratio_ok && diag_ok,
        &format!(
            "tr(G1)/tr(G2) = {:.3} > 1, median‖δ_cc‖/median‖δ_c‖ = {:.4} ≤ 0.2",
            geometry.trace_ratio,
            geometry.median_diag_norm / geometry.median_center_norm
        ),
    );
}

#[test]
fn c09_epoch_dynamics_transition() {
    let snapshots = &BIG_TRAINED.1.snapshots;
    let table = epoch_dynamics(
        snapshots,
        &DATASET,
        &DynamicsParams { topk_max_iter: 80, topk_tol: 1e-9, seed: 707 },
    )
    .unwrap();
    let last = table.rows.last().unwrap();
    let final_ok = last.score_by_class > last.score_by_logit;
    check(
        9,
        "final epoch clusters by class; transition epoch emitted",
        final_ok,
        &format!(
            "final epoch {}: by-class {:.3} > by-logit {:.3}; transition epoch {:?}; \
             per-epoch by-class scores {:?}",
            last.epoch,
            last.score_by_class,
            last.score_by_logit,
            table.transition_epoch,
            table
                .rows
                .iter()
                .map(|r| format!("{}:{:.3}", r.epoch, r.score_by_class))
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c10_full_hessian_cross_check() {
    let model = &*TANH_TRAINED;
    let p = model.param_count();
    assert!(p <= 1000);
    let hess = full_hessian_fd(model, &DATASET, 1e-4).unwrap();

    let delta = build_delta(model, &DATASET).unwrap();
    let stats = compute_hierarchy(&delta).unwrap();
    let g = GPart::new(GKind::G, &delta, &stats).unwrap();
    let dense_g = materialize(&g).unwrap();
    let (g_eigs, _) = sym_eig_small(&dense_g).unwrap();

    // Hess − G must be symmetric; G is symmetric by construction, so the
    // finite-difference asymmetry carries the whole residual asymmetry
    let mut resid_asym = 0.0_f64;
    for i in 0..p {
        for j in (i + 1)..p {
            let rij = hess.get(i, j) - dense_g.get(i, j);
            let rji = hess.get(j, i) - dense_g.get(j, i);
            resid_asym = resid_asym.max((rij - rji).abs());
        }
    }

    let sym = DenseMatrix::from_fn(p, p, |i, j| 0.5 * (hess.get(i, j) + hess.get(j, i)));
    let (h_eigs, _) = sym_eig_small(&sym).unwrap();
    let max_rel = (0..CLASSES)
        .map(|c| (h_eigs[c] - g_eigs[c]).abs() / g_eigs[c])
        .fold(0.0_f64, f64::max);

    check(
        10,
        "finite-difference Hessian outliers match G",
        max_rel <= 0.30 && resid_asym <= 1e-6,
        &format!(
            "top-{CLASSES} relative gaps {:?} (max {max_rel:.3} ≤ 0.30), \
             residual asymmetry {resid_asym:.3e} ≤ 1e-6 at P = {p}",
            (0..CLASSES)
                .map(|c| (((h_eigs[c] - g_eigs[c]).abs() / g_eigs[c]) * 1e3).round() / 1e3)
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c11_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "dataset": {"generate": {"classes": 3, "dim": 6, "per_class": 10,
                                      "separation": 4.0, "noise_scale": 0.5}},
            "model": {"hidden": [8], "activation": "relu"},
            "train": {"initial_lr": 0.05, "momentum": 0.9, "weight_decay": 5e-4,
                       "batch_size": 16, "epochs": 6, "snapshot_epochs": [1, 6]},
            "out": dir.path().join("unused").to_str().unwrap(),
            "seed": 90210
        })
        .to_string(),
    )
    .unwrap();

    let run_all = |out: &Path| {
        for sub in [&["gen"][..], &["train"][..], &["analyze"][..], &["epochs"][..]] {
            let status = Command::new(env!("CARGO_BIN_EXE_hanatomy"))
                .args(sub)
                .arg("--config")
                .arg(&config_path)
                .arg("--out")
                .arg(out)
                .status()
                .unwrap();
            assert!(status.success(), "subcommand {sub:?} failed");
        }
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_all(&out_a);
    run_all(&out_b);

    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let names_b: Vec<String> = {
        let mut v: Vec<String> = std::fs::read_dir(&out_b)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(names, names_b, "the two runs produced different file sets");
    assert!(names.contains(&"density.csv".to_string()));
    assert!(names.contains(&"deltas.bin".to_string()));
    assert!(names.contains(&"epochs.csv".to_string()));

    let mut diffs = Vec::new();
    for name in &names {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        if a != b {
            diffs.push(name.clone());
        }
    }
    check(
        11,
        "identical config and seed reproduce every output byte-for-byte",
        diffs.is_empty(),
        &format!("{} files compared, mismatches: {diffs:?}", names.len()),
    );
}

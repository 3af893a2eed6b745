//! The four pipeline commands. Each is a pure function of its configuration
//! and input files; re-running writes byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hessian_anatomy::data::{save_csv, LabeledDataset};
use hessian_anatomy::decomp::{
    build_delta, cluster_geometry, compute_hierarchy, delta_gradient_collinearity, gram_outliers,
    write_delta_export, GKind, GPart, GramLevel,
};
use hessian_anatomy::error::{Error, Result};
use hessian_anatomy::model::{init_mlp, load_checkpoint, save_checkpoint, MlpModel};
use hessian_anatomy::seed::derive_seed;
use hessian_anatomy::spectrum::{
    compare_outliers, epoch_dynamics, linear_grid, slq_density, topk_eigs, DynamicsParams,
};
use hessian_anatomy::train::{sgd_train, EpochRecord};

use crate::config::{DatasetSpec, RunConfig};

pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("ckpt_final.bin")
}

pub fn snapshot_checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("ckpt_epoch_{epoch:05}.bin"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Outputs of `gen`.
#[derive(Debug)]
pub struct GenOutputs {
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub dataset: LabeledDataset,
}

#[derive(Serialize)]
struct GenMeta<'a> {
    seed: u64,
    derived_seed: u64,
    spec: &'a DatasetSpec,
    n: usize,
    classes: usize,
    dim: usize,
    balanced: bool,
}

/// Generate the configured dataset and write it as CSV plus a metadata
/// record of the generator parameters.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenOutputs> {
    if !matches!(cfg.dataset, DatasetSpec::Generate { .. }) {
        return Err(Error::Config("gen requires a generator dataset spec".into()));
    }
    let dataset = cfg.load_dataset()?;
    fs::create_dir_all(&cfg.out)?;
    let csv = cfg.out.join("dataset.csv");
    save_csv(&dataset, &csv)?;
    let meta = cfg.out.join("gen_meta.json");
    write_json(
        &meta,
        &GenMeta {
            seed: cfg.seed,
            derived_seed: derive_seed(cfg.seed, "data.gen"),
            spec: &cfg.dataset,
            n: dataset.len(),
            classes: dataset.class_count(),
            dim: dataset.dim(),
            balanced: dataset.is_balanced(),
        },
    )?;
    Ok(GenOutputs { csv, meta, dataset })
}

/// Outputs of `train`.
#[derive(Debug)]
pub struct TrainOutputs {
    pub final_checkpoint: PathBuf,
    pub snapshot_checkpoints: Vec<(usize, PathBuf)>,
    pub trace: PathBuf,
    pub model: MlpModel,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    epochs: &'a [EpochRecord],
    snapshot_epochs: Vec<usize>,
}

/// Train the configured model and write the final checkpoint, snapshot
/// checkpoints, and the per-epoch trace.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs> {
    let dataset = cfg.load_dataset()?;
    let sizes = cfg.layer_sizes(dataset.dim(), dataset.class_count());
    let model = init_mlp(&sizes, cfg.activation(), derive_seed(cfg.seed, "model.init"))?;
    let (trained, trace) = sgd_train(&model, &dataset, &cfg.train_config())?;

    fs::create_dir_all(&cfg.out)?;
    let final_checkpoint = final_checkpoint_path(&cfg.out);
    save_checkpoint(&trained, &final_checkpoint)?;
    let mut snapshot_checkpoints = Vec::new();
    for (epoch, snapshot) in &trace.snapshots {
        let path = snapshot_checkpoint_path(&cfg.out, *epoch);
        save_checkpoint(snapshot, &path)?;
        snapshot_checkpoints.push((*epoch, path));
    }
    let trace_path = cfg.out.join("trace.json");
    write_json(
        &trace_path,
        &TraceFile {
            epochs: &trace.records,
            snapshot_epochs: trace.snapshots.iter().map(|(e, _)| *e).collect(),
        },
    )?;
    Ok(TrainOutputs {
        final_checkpoint,
        snapshot_checkpoints,
        trace: trace_path,
        model: trained,
    })
}

/// Outputs of `analyze`.
#[derive(Debug)]
pub struct AnalyzeOutputs {
    pub density_csv: PathBuf,
    pub scree_csv: PathBuf,
    pub outliers_json: PathBuf,
    pub geometry_json: PathBuf,
    pub deltas: Option<(PathBuf, PathBuf)>,
}

/// Analyze a checkpoint: build Δ, extract the top spectrum of `G`, compare
/// it with the Gram approximations, estimate the density, and export the
/// report bundle.
pub fn cmd_analyze(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<AnalyzeOutputs> {
    let dataset = cfg.load_dataset()?;
    let default_ckpt = final_checkpoint_path(&cfg.out);
    let ckpt_path = checkpoint.unwrap_or(&default_ckpt);
    let model = load_checkpoint(ckpt_path)?;
    if model.input_dim() != dataset.dim() || model.class_count() != dataset.class_count() {
        return Err(Error::Data(format!(
            "checkpoint {} is {}-in/{}-out, dataset is {}-in/{}-class",
            ckpt_path.display(),
            model.input_dim(),
            model.class_count(),
            dataset.dim(),
            dataset.class_count()
        )));
    }

    let delta = build_delta(&model, &dataset)?;
    let stats = compute_hierarchy(&delta)?;
    let geometry = cluster_geometry(&stats, &delta)?;
    let collinearity = delta_gradient_collinearity(&delta, &model, &dataset)?;

    let c = dataset.class_count();
    let p = model.param_count();
    let g = GPart::new(GKind::G, &delta, &stats)?;
    // default to the top C: the scree, Gram comparisons and Weyl chain are
    // all statements about c = 1..C; --topk extracts more when wanted
    let k = cfg.analysis.topk.unwrap_or(c).min(4 * c).min(p);
    let top = topk_eigs(
        &g,
        k,
        cfg.analysis.topk_max_iter,
        cfg.analysis.topk_tol,
        derive_seed(cfg.seed, "topk.start"),
    )?;
    let gram1 = gram_outliers(&stats, GramLevel::G1)?;
    let gram12 = gram_outliers(&stats, GramLevel::G12)?;

    let lambda1 = top.eigenvalues.first().copied().unwrap_or(0.0);
    let hi = if lambda1 > 0.0 { 1.05 * lambda1 } else { 1.0 };
    let grid = linear_grid(0.0, hi, cfg.analysis.grid_points);
    let sigma = cfg.analysis.smoothing_sigma.unwrap_or(hi / 200.0);
    let density = slq_density(
        &g,
        cfg.analysis.slq_probes,
        cfg.analysis.slq_steps.min(p),
        sigma,
        &grid,
        derive_seed(cfg.seed, "slq.probes"),
    )?;
    let report = compare_outliers(&top.eigenvalues, &gram1, &gram12, &density)?;

    fs::create_dir_all(&cfg.out)?;
    let density_csv = cfg.out.join("density.csv");
    let mut text = String::from("lambda,density\n");
    for (x, d) in density.grid.iter().zip(&density.density) {
        text.push_str(&format!("{x},{d}\n"));
    }
    fs::write(&density_csv, text)?;

    let scree_csv = cfg.out.join("scree.csv");
    let mut text = String::from("c,lambda_g,lambda_g12_gram,lambda_g1_gram\n");
    for i in 0..c {
        text.push_str(&format!("{},{},{},{}\n", i + 1, top.eigenvalues[i], gram12[i], gram1[i]));
    }
    fs::write(&scree_csv, text)?;

    let outliers_json = cfg.out.join("outliers.json");
    write_json(&outliers_json, &report)?;

    let geometry_json = cfg.out.join("geometry.json");
    #[derive(Serialize)]
    struct GeometryFile<'a> {
        #[serde(flatten)]
        geometry: &'a hessian_anatomy::decomp::GeometryReport,
        collinearity_skipped: usize,
        min_abs_cosine: Option<f64>,
    }
    write_json(
        &geometry_json,
        &GeometryFile {
            geometry: &geometry,
            collinearity_skipped: collinearity.skipped,
            min_abs_cosine: collinearity
                .cosines
                .iter()
                .cloned()
                .min_by(|a, b| a.partial_cmp(b).unwrap()),
        },
    )?;

    let deltas = if cfg.analysis.export_deltas {
        let bin = cfg.out.join("deltas.bin");
        let json = cfg.out.join("deltas.json");
        write_delta_export(&delta, &bin, &json)?;
        Some((bin, json))
    } else {
        None
    };

    Ok(AnalyzeOutputs { density_csv, scree_csv, outliers_json, geometry_json, deltas })
}

/// Outputs of `epochs`.
#[derive(Debug)]
pub struct EpochsOutputs {
    pub table_json: PathBuf,
    pub table_csv: PathBuf,
    pub transition_epoch: Option<usize>,
}

/// Analyze the snapshot checkpoints of a training run across epochs.
pub fn cmd_epochs(cfg: &RunConfig, snapshots_dir: Option<&Path>) -> Result<EpochsOutputs> {
    let dataset = cfg.load_dataset()?;
    let dir = snapshots_dir.unwrap_or(&cfg.out);
    let expected = cfg.snapshot_epochs();
    let mut missing = Vec::new();
    let mut snapshots = Vec::new();
    for &epoch in &expected {
        let path = snapshot_checkpoint_path(dir, epoch);
        if path.exists() {
            snapshots.push((epoch, load_checkpoint(&path)?));
        } else {
            missing.push(epoch);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing snapshot checkpoints for epochs {missing:?} in {}",
            dir.display()
        )));
    }
    let table = epoch_dynamics(
        &snapshots,
        &dataset,
        &DynamicsParams {
            topk_max_iter: cfg.analysis.topk_max_iter,
            topk_tol: cfg.analysis.topk_tol,
            seed: derive_seed(cfg.seed, "dynamics"),
        },
    )?;

    fs::create_dir_all(&cfg.out)?;
    let table_json = cfg.out.join("epochs.json");
    write_json(&table_json, &table)?;

    let c = dataset.class_count();
    let table_csv = cfg.out.join("epochs.csv");
    let mut text = String::from("epoch,score_by_class,score_by_logit,trace_ratio");
    for i in 1..=c {
        text.push_str(&format!(",deviation_c{i}"));
    }
    text.push('\n');
    for row in &table.rows {
        text.push_str(&format!(
            "{},{},{},{}",
            row.epoch, row.score_by_class, row.score_by_logit, row.trace_ratio
        ));
        for d in &row.top_deviations {
            text.push_str(&format!(",{d}"));
        }
        text.push('\n');
    }
    fs::write(&table_csv, text)?;

    Ok(EpochsOutputs { table_json, table_csv, transition_epoch: table.transition_epoch })
}

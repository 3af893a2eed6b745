use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hanatomy::commands::{cmd_analyze, cmd_epochs, cmd_gen, cmd_train};
use hanatomy::config::RunConfig;

/// Train small softmax classifiers and take apart the spectrum of their
/// Gauss-Newton curvature term.
#[derive(Parser)]
#[command(name = "hanatomy", version, about)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override how many top eigenvalues of G to extract.
    #[arg(long, global = true, value_name = "N")]
    topk: Option<usize>,

    /// Override the number of SLQ probe vectors.
    #[arg(long = "slq-probes", global = true, value_name = "N")]
    slq_probes: Option<usize>,

    /// Override the number of Lanczos steps per SLQ probe.
    #[arg(long = "slq-steps", global = true, value_name = "N")]
    slq_steps: Option<usize>,

    /// Skip the Δ column export.
    #[arg(long = "no-export", global = true)]
    no_export: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset as CSV plus metadata.
    Gen,
    /// Train the configured model; write checkpoints and the trace.
    Train,
    /// Analyze a checkpoint: density, scree, outlier and geometry reports.
    Analyze {
        /// Checkpoint to analyze; defaults to <out>/ckpt_final.bin.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Analyze snapshot checkpoints across epochs.
    Epochs {
        /// Directory holding ckpt_epoch_*.bin; defaults to <out>.
        #[arg(long, value_name = "DIR")]
        snapshots: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> hessian_anatomy::Result<()> {
    let config_path = cli.config.ok_or_else(|| {
        hessian_anatomy::Error::Config("--config PATH is required".into())
    })?;
    let mut cfg = RunConfig::from_path(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(k) = cli.topk {
        cfg.analysis.topk = Some(k);
    }
    if let Some(m) = cli.slq_probes {
        cfg.analysis.slq_probes = m;
    }
    if let Some(k) = cli.slq_steps {
        cfg.analysis.slq_steps = k;
    }
    if cli.no_export {
        cfg.analysis.export_deltas = false;
    }
    cfg.validate()?;

    match cli.command {
        Command::Gen => {
            let out = cmd_gen(&cfg)?;
            println!("wrote {} ({} examples)", out.csv.display(), out.dataset.len());
            println!("wrote {}", out.meta.display());
        }
        Command::Train => {
            let out = cmd_train(&cfg)?;
            println!("wrote {}", out.final_checkpoint.display());
            for (epoch, path) in &out.snapshot_checkpoints {
                println!("wrote {} (epoch {epoch})", path.display());
            }
            println!("wrote {}", out.trace.display());
        }
        Command::Analyze { checkpoint } => {
            let out = cmd_analyze(&cfg, checkpoint.as_deref())?;
            println!("wrote {}", out.density_csv.display());
            println!("wrote {}", out.scree_csv.display());
            println!("wrote {}", out.outliers_json.display());
            println!("wrote {}", out.geometry_json.display());
            if let Some((bin, json)) = &out.deltas {
                println!("wrote {}", bin.display());
                println!("wrote {}", json.display());
            }
        }
        Command::Epochs { snapshots } => {
            let out = cmd_epochs(&cfg, snapshots.as_deref())?;
            println!("wrote {}", out.table_json.display());
            println!("wrote {}", out.table_csv.display());
            match out.transition_epoch {
                Some(e) => println!("transition epoch: {e}"),
                None => println!("transition epoch: none observed"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

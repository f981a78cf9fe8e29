//! `selcl`: generate noisy datasets, train, evaluate and sweep from the shell.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2 for
//! failures while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use selcl::datagen::{write_features_csv, NoiseKind};
use selcl::evaluation::dump_projection_2d;
use selcl::harness::{
    dataset_for, default_run_dir, emit_summary, load_config, run_on, run_plan, set_field, summarize, write_run_dir,
    ExperimentPlan, SweepAxis, DEFAULT_REPLICATES,
};
use selcl::model::{load_checkpoint, Checkpoint};
use selcl::neighbors::{write_pseudo_labels_csv, SimilarityMatrix};
use selcl::selection::run_selection;
use selcl::trainer::{evaluate, write_metrics_csv, Precision, RunConfig, SplitData};
use selcl::{Error, Scalar};

#[derive(Parser, Debug)]
#[command(name = "selcl", version, about = "Selective-supervised contrastive learning with noisy labels")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set alpha=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic noisy dataset to CSV.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// Per-coordinate standard deviation around each class centre.
        #[arg(long)]
        spread: Option<f64>,
        /// Dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_noise_kind)]
        noise_kind: Option<NoiseKind>,
        #[arg(long)]
        noise_rate: Option<f64>,
        #[arg(long)]
        noise_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train an encoder, optionally followed by classifier fine-tuning.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Feature CSV; synthetic blobs from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory for config, metrics, report and checkpoints.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Extra copy of the per-epoch metrics CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Fine-tune a fresh classifier head on the final confident examples.
        #[arg(long)]
        finetune: bool,
        /// Run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute metrics of a saved checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write each training example's pseudo-label and class posterior as CSV.
        #[arg(long)]
        pseudo_out: Option<PathBuf>,
    },
    /// Sweep one hyperparameter over several values and replicate seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of lambda_s, alpha, beta, noise_rate, warmup_kind.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated replicate seeds.
        #[arg(long, value_delimiter = ',', conflicts_with = "replicates")]
        seeds: Option<Vec<u64>>,
        /// Number of replicate seeds 0..N.
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report the pre-trained classifier instead of the fine-tuned one.
        #[arg(long)]
        no_finetune: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a 2-D principal-axis projection of the training embeddings.
    DumpProj {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_noise_kind(s: &str) -> Result<NoiseKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn with_field<V: ToString>(cfg: RunConfig, key: &str, value: Option<V>) -> selcl::Result<RunConfig> {
    match value {
        Some(v) => set_field(&cfg, key, &v.to_string()),
        None => Ok(cfg),
    }
}

fn resolve(args: &ConfigArgs) -> selcl::Result<RunConfig> {
    load_config(args.config.as_deref(), &args.overrides)
}

/// Config for a checkpoint: explicit file, else the config stored inside the
/// checkpoint, else defaults; overrides apply last.
fn resolve_for_checkpoint(args: &ConfigArgs, ckpt: &Checkpoint) -> selcl::Result<RunConfig> {
    if args.config.is_some() {
        return resolve(args);
    }
    let mut cfg = serde_json::from_value::<RunConfig>(ckpt.meta.clone()).unwrap_or_default();
    for o in &args.overrides {
        cfg = selcl::harness::apply_override(&cfg, o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> selcl::Result<()> {
    match cli.command {
        Command::Gen {
            cfg,
            n,
            classes,
            dim,
            spread,
            seed,
            noise_kind,
            noise_rate,
            noise_seed,
            out,
        } => {
            let mut c = resolve(&cfg)?;
            c = with_field(c, "n", n)?;
            c = with_field(c, "classes", classes)?;
            c = with_field(c, "dim", dim)?;
            c = with_field(c, "cluster_spread", spread)?;
            c = with_field(c, "data_seed", seed)?;
            let kind = noise_kind.map(|k| match k {
                NoiseKind::Symmetric => "symmetric",
                NoiseKind::Asymmetric => "asymmetric",
            });
            c = with_field(c, "noise_kind", kind)?;
            c = with_field(c, "noise_rate", noise_rate)?;
            c = with_field(c, "noise_seed", noise_seed)?;
            let ds = selcl::harness::synthesize::<f64>(&c)?;
            write_features_csv(&ds, &out)?;
            info!("wrote {} rows to {}", ds.len(), out.display());
            Ok(())
        }
        Command::Train {
            cfg,
            data,
            out_dir,
            metrics,
            finetune,
            seed,
        } => {
            let c = with_field(resolve(&cfg)?, "seed", seed)?;
            match c.precision {
                Precision::F64 => train::<f64>(&c, data.as_deref(), out_dir, metrics.as_deref(), finetune),
                Precision::F32 => train::<f32>(&c, data.as_deref(), out_dir, metrics.as_deref(), finetune),
            }
        }
        Command::Eval {
            cfg,
            checkpoint,
            data,
            out,
            pseudo_out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let c = resolve_for_checkpoint(&cfg, &ckpt)?;
            let (data, pseudo_out) = (data.as_deref(), pseudo_out.as_deref());
            let text = match c.precision {
                Precision::F64 => eval::<f64>(&c, &ckpt, data, pseudo_out)?,
                Precision::F32 => eval::<f32>(&c, &ckpt, data, pseudo_out)?,
            };
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Sweep {
            cfg,
            axis,
            values,
            seeds,
            replicates,
            data,
            no_finetune,
            out,
        } => {
            let base = resolve(&cfg)?;
            let axis: SweepAxis = axis.parse()?;
            let seeds =
                seeds.unwrap_or_else(|| (0..replicates.unwrap_or(DEFAULT_REPLICATES) as u64).collect::<Vec<u64>>());
            if data.is_some() && axis == SweepAxis::NoiseRate {
                return Err(Error::Config(
                    "a noise_rate sweep needs synthetic data; drop --data".into(),
                ));
            }
            let plan = ExperimentPlan::new(base, axis, values, seeds)?;
            let runs = match plan.base.precision {
                Precision::F64 => {
                    let ds = data.as_deref().map(|p| dataset_for::<f64>(&plan.base, Some(p))).transpose()?;
                    run_plan(&plan, ds.as_ref(), !no_finetune)
                }
                Precision::F32 => {
                    let ds = data.as_deref().map(|p| dataset_for::<f32>(&plan.base, Some(p))).transpose()?;
                    run_plan(&plan, ds.as_ref(), !no_finetune)
                }
            };
            let complete = emit_summary(&plan.values, &runs, &out)?;
            for row in summarize(&plan.values, &runs) {
                info!("{}={}: {:?}", plan.axis, row.value, row.mean_test_acc);
            }
            if complete {
                Ok(())
            } else {
                let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
                Err(Error::InvalidArgument(format!(
                    "{failed} of {} sweep runs failed; missing cells are marked NA in {}",
                    runs.len(),
                    out.display()
                )))
            }
        }
        Command::DumpProj {
            cfg,
            checkpoint,
            data,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let c = resolve_for_checkpoint(&cfg, &ckpt)?;
            match c.precision {
                Precision::F64 => dump::<f64>(&c, &ckpt, data.as_deref(), &out),
                Precision::F32 => dump::<f32>(&c, &ckpt, data.as_deref(), &out),
            }
        }
    }
}

fn train<T: Scalar>(
    cfg: &RunConfig,
    data: Option<&Path>,
    out_dir: Option<PathBuf>,
    metrics: Option<&Path>,
    finetune: bool,
) -> selcl::Result<()> {
    let ds = dataset_for::<T>(cfg, data)?;
    let art = run_on(&ds, cfg, finetune)?;
    let dir = out_dir.unwrap_or_else(|| default_run_dir(cfg));
    write_run_dir(&dir, &art)?;
    if let Some(p) = metrics {
        write_metrics_csv(&art.history, p)?;
    }
    let r = &art.report;
    println!(
        "epochs {}  |T| {}  prec_T {:.2}  prec_G {:.2}  knn {:.2}  test {:.2}{}",
        r.epochs,
        r.final_selection.n_t,
        r.final_selection.prec_t,
        r.final_selection.prec_g,
        r.final_metrics.knn_accuracy,
        r.final_metrics.test_accuracy,
        r.finetune
            .as_ref()
            .map(|f| format!("  finetuned test {:.2}", f.test_accuracy))
            .unwrap_or_default()
    );
    info!("run directory {}", dir.display());
    Ok(())
}

fn eval<T: Scalar>(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    data: Option<&Path>,
    pseudo_out: Option<&Path>,
) -> selcl::Result<String> {
    let net = ckpt.to_network::<T>()?;
    let ds = dataset_for::<T>(cfg, data)?;
    let split = SplitData::new(&ds)?;
    let sims = SimilarityMatrix::from_rows(&net.embed(&split.train_x)?)?;
    let selection = run_selection(&sims, &split.train_noisy, split.classes, &cfg.selection(split.n_train()), 0)?;
    if let Some(path) = pseudo_out {
        write_pseudo_labels_csv(&selection.pseudo, &split.train_indices, &split.train_noisy, path)?;
    }
    let report = evaluate(&net, &ds, cfg, Some(&selection))?;
    Ok(serde_json::to_string_pretty(&report)?)
}

fn dump<T: Scalar>(cfg: &RunConfig, ckpt: &Checkpoint, data: Option<&Path>, out: &Path) -> selcl::Result<()> {
    let net = ckpt.to_network::<T>()?;
    let ds = dataset_for::<T>(cfg, data)?;
    let split = SplitData::new(&ds)?;
    let z = net.embed(&split.train_x)?;
    let sims = SimilarityMatrix::from_rows(&z)?;
    let selection = run_selection(&sims, &split.train_noisy, split.classes, &cfg.selection(split.n_train()), 0)?;
    let mut in_t = vec![false; split.n_train()];
    for i in selection.confident.all() {
        in_t[i] = true;
    }
    dump_projection_2d(&z, &split.train_true, &split.train_noisy, &in_t, out)?;
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

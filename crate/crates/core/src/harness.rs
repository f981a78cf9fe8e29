//! Run orchestration behind the command-line tool: configuration loading with
//! `key=value` overrides, run directories, sensitivity sweeps and their
//! summary tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{inject_noise, load_features_csv, make_blobs, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{selection_precision, MetricsReport};
use crate::model::{save_checkpoint, Network};
use crate::scalar::Scalar;
use crate::trainer::{evaluate, finetune, pretrain, write_metrics_csv, EpochRecord, RunConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Sets one config field from `key=value` text. The value is parsed as JSON
/// first and taken as a bare string otherwise, so `alpha=0.25`,
/// `warmup_kind=supervised` and `lr_schedule=[[10,0.1]]` all work.
pub fn apply_override(cfg: &RunConfig, assignment: &str) -> Result<RunConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    set_field(cfg, key.trim(), raw.trim())
}

pub fn set_field(cfg: &RunConfig, key: &str, raw: &str) -> Result<RunConfig> {
    let mut obj = serde_json::to_value(cfg)?;
    let map = obj.as_object_mut().expect("config serializes to an object");
    if !map.contains_key(key) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    map.insert(key.to_string(), value);
    let cfg: RunConfig = serde_json::from_value(obj).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads an optional JSON config file and applies overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg = apply_override(&cfg, o)?;
    }
    Ok(cfg)
}

/// The desk-scale benchmark: 500 examples in 4 classes and 16 dimensions with
/// 40% symmetric noise, 30 pre-training and 30 fine-tuning epochs.
///
/// `K` is 50 rather than 250 because each class has only ~100 training points.
pub fn blob_benchmark(seed: u64) -> RunConfig {
    RunConfig {
        n: 500,
        classes: 4,
        dim: 16,
        noise_rate: 0.4,
        k: 50,
        t_max: 30,
        t_finetune: 30,
        data_seed: seed,
        noise_seed: seed.wrapping_add(1_000),
        seed,
        ..RunConfig::default()
    }
}

/// Synthetic blobs with the configured label noise.
pub fn synthesize<T: Scalar>(cfg: &RunConfig) -> Result<Dataset<T>> {
    let clean = make_blobs(cfg.n, cfg.classes, cfg.dim, cfg.cluster_spread, cfg.data_seed)?;
    inject_noise(&clean, &cfg.noise_spec())
}

/// Loads `path` when given, otherwise synthesizes from the config.
pub fn dataset_for<T: Scalar>(cfg: &RunConfig, path: Option<&Path>) -> Result<Dataset<T>> {
    match path {
        Some(p) => load_features_csv(p, None),
        None => synthesize(cfg),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub n_t: usize,
    pub n_gp: usize,
    pub n_gpp: usize,
    pub n_g: usize,
    pub gamma: f64,
    pub prec_t: f64,
    pub prec_gp: f64,
    pub prec_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Final report of one run; `final_metrics` describe the pre-trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scalar: String,
    pub config: RunConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
    pub final_metrics: MetricsReport,
    pub final_selection: SelectionSummary,
    pub finetune: Option<FinetuneSummary>,
}

impl RunReport {
    /// Test accuracy of the most complete model the run produced.
    pub fn headline_accuracy(&self) -> f64 {
        self.finetune
            .as_ref()
            .map(|f| f.test_accuracy)
            .unwrap_or(self.final_metrics.test_accuracy)
    }
}

#[derive(Clone, Debug)]
pub struct RunArtifacts<T> {
    pub report: RunReport,
    pub history: Vec<EpochRecord>,
    pub pretrained: Network<T>,
    pub finetuned: Option<Network<T>>,
}

/// Pre-trains (and optionally fine-tunes) on `ds`.
pub fn run_on<T: Scalar>(ds: &Dataset<T>, cfg: &RunConfig, with_finetune: bool) -> Result<RunArtifacts<T>> {
    let out = pretrain(ds, cfg)?;
    let final_metrics = evaluate(&out.network, ds, cfg, Some(&out.selection))?;
    let train_true: Vec<usize> = out.train_indices.iter().map(|&i| ds.true_labels()[i]).collect();
    let train_noisy: Vec<usize> = out.train_indices.iter().map(|&i| ds.noisy_labels()[i]).collect();
    let s = &out.selection;
    let (pt, pg) = selection_precision(&s.confident, &s.g, &train_true, &train_noisy);
    let (_, pgp) = selection_precision(&s.confident, &s.g_prime, &train_true, &train_noisy);
    let final_selection = SelectionSummary {
        n_t: s.confident.len(),
        n_gp: s.g_prime.len(),
        n_gpp: s.g_doubleprime.len(),
        n_g: s.g.len(),
        gamma: s.gamma.as_f64(),
        prec_t: pt.percent,
        prec_gp: pgp.percent,
        prec_g: pg.percent,
    };
    let (finetune_summary, finetuned) = if with_finetune {
        let ft = finetune(&out.network, ds, &out.selection, cfg)?;
        (
            Some(FinetuneSummary {
                train_accuracy: ft.train_accuracy,
                test_accuracy: ft.test_accuracy,
            }),
            Some(ft.network),
        )
    } else {
        (None, None)
    };
    let n_train = out.train_indices.len();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scalar: T::type_name().to_string(),
        config: cfg.clone(),
        n_train,
        n_test: ds.len() - n_train,
        epochs: out.history.len(),
        final_metrics,
        final_selection,
        finetune: finetune_summary,
    };
    Ok(RunArtifacts {
        report,
        history: out.history,
        pretrained: out.network,
        finetuned,
    })
}

/// Writes `config.json`, `metrics.csv`, `report.json` and checkpoints into `dir`.
pub fn write_run_dir<T: Scalar>(dir: &Path, art: &RunArtifacts<T>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), art.report.config.to_json_pretty())?;
    write_metrics_csv(&art.history, dir.join("metrics.csv"))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&art.report)?)?;
    let meta = serde_json::to_value(&art.report.config)?;
    save_checkpoint(&art.pretrained, meta.clone(), dir.join("checkpoint.json"))?;
    if let Some(net) = &art.finetuned {
        save_checkpoint(net, meta, dir.join("finetuned.json"))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaS,
    Alpha,
    Beta,
    NoiseRate,
    WarmupKind,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::LambdaS => "lambda_s",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::NoiseRate => "noise_rate",
            SweepAxis::WarmupKind => "warmup_kind",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_s" => Ok(SweepAxis::LambdaS),
            "alpha" => Ok(SweepAxis::Alpha),
            "beta" => Ok(SweepAxis::Beta),
            "noise_rate" => Ok(SweepAxis::NoiseRate),
            "warmup_kind" => Ok(SweepAxis::WarmupKind),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected lambda_s, alpha, beta, noise_rate or warmup_kind)"
            ))),
        }
    }
}

pub const DEFAULT_REPLICATES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub base: RunConfig,
    pub axis: SweepAxis,
    /// Values as written on the command line; they label the summary rows.
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    /// Checks every value against the parameter's domain up front.
    pub fn new(base: RunConfig, axis: SweepAxis, values: Vec<String>, seeds: Vec<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("a sweep needs at least one value".into()));
        }
        if seeds.is_empty() {
            return Err(Error::Config("a sweep needs at least one seed".into()));
        }
        let plan = Self {
            base,
            axis,
            values,
            seeds,
        };
        for v in &plan.values {
            plan.config_for(v, plan.seeds[0])?;
        }
        Ok(plan)
    }

    /// Run config of one cell. The replicate seed drives the run seed and
    /// offsets the data and noise seeds, so replicates see fresh datasets.
    pub fn config_for(&self, value: &str, seed: u64) -> Result<RunConfig> {
        let mut cfg = set_field(&self.base, self.axis.key(), value)?;
        cfg.seed = seed;
        cfg.data_seed = self.base.data_seed.wrapping_add(seed);
        cfg.noise_seed = self.base.noise_seed.wrapping_add(seed);
        Ok(cfg)
    }
}

/// Outcome of one sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub outcome: std::result::Result<RunReport, String>,
}

fn run_cell<T: Scalar>(cfg: &RunConfig, data: Option<&Dataset<T>>, with_finetune: bool) -> Result<RunReport> {
    let owned;
    let ds = match data {
        Some(d) => d,
        None => {
            owned = synthesize::<T>(cfg)?;
            &owned
        }
    };
    Ok(run_on(ds, cfg, with_finetune)?.report)
}

/// Runs every (value, seed) cell in parallel. A failing cell is recorded,
/// not propagated. With `data`, every cell trains on that fixed dataset.
pub fn run_plan<T: Scalar>(plan: &ExperimentPlan, data: Option<&Dataset<T>>, with_finetune: bool) -> Vec<SweepRun> {
    let cells: Vec<(String, u64)> = plan
        .values
        .iter()
        .flat_map(|v| plan.seeds.iter().map(move |&s| (v.clone(), s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(value, seed)| {
            let outcome = plan
                .config_for(&value, seed)
                .and_then(|cfg| run_cell(&cfg, data, with_finetune))
                .map_err(|e| e.to_string());
            match &outcome {
                Ok(r) => info!("{}={} seed {}: test {:.2}", plan.axis, value, seed, r.headline_accuracy()),
                Err(e) => warn!("{}={} seed {} failed: {}", plan.axis, value, seed, e),
            }
            SweepRun { value, seed, outcome }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub value: String,
    /// `None` when no replicate of this value finished.
    pub mean_test_acc: Option<f64>,
    pub std_test_acc: Option<f64>,
    pub mean_prec_t: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One row per value in plan order. Aggregation sorts replicates by seed
/// first, so the result does not depend on completion order.
pub fn summarize(values: &[String], runs: &[SweepRun]) -> Vec<SummaryRow> {
    values
        .iter()
        .map(|v| {
            let mut ok: Vec<(u64, &RunReport)> = runs
                .iter()
                .filter(|r| &r.value == v)
                .filter_map(|r| r.outcome.as_ref().ok().map(|rep| (r.seed, rep)))
                .collect();
            ok.sort_by_key(|&(s, _)| s);
            let failed = runs.iter().filter(|r| &r.value == v && r.outcome.is_err()).count();
            let acc: Vec<f64> = ok.iter().map(|(_, r)| r.headline_accuracy()).collect();
            let prec: Vec<f64> = ok.iter().map(|(_, r)| r.final_selection.prec_t).collect();
            let some = !acc.is_empty();
            SummaryRow {
                value: v.clone(),
                mean_test_acc: some.then(|| mean(&acc)),
                std_test_acc: some.then(|| sample_std(&acc)),
                mean_prec_t: some.then(|| mean(&prec)),
                completed: acc.len(),
                failed,
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "value,mean_test_acc,std_test_acc,mean_prec_T,completed,failed";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value,
            cell(r.mean_test_acc),
            cell(r.std_test_acc),
            cell(r.mean_prec_t),
            r.completed,
            r.failed
        ));
    }
    out
}

/// Writes the summary table and reports whether every cell completed.
pub fn emit_summary(values: &[String], runs: &[SweepRun], path: &Path) -> Result<bool> {
    let rows = summarize(values, runs);
    std::fs::write(path, summary_csv(&rows))?;
    Ok(rows.iter().all(|r| r.failed == 0))
}

/// Default location of a run directory: `runs/seed-<seed>`.
pub fn default_run_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("seed-{}", cfg.seed))
}

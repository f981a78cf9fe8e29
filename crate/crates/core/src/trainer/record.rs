use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 14] = [
    "epoch", "L_mix", "L_cls", "L_sim", "L_all", "n_T", "n_Gp", "n_Gpp", "gamma", "prec_T", "prec_G",
    "knn_acc", "test_acc", "seconds",
];

/// One row of the training history. Losses are means over the epoch's
/// mini-batches; selection fields describe the selection the epoch trained on
/// and are empty during warm-up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_mix: f64,
    pub l_cls: f64,
    pub l_sim: f64,
    pub l_all: f64,
    pub n_t: usize,
    pub n_gp: usize,
    pub n_gpp: usize,
    pub gamma: Option<f64>,
    pub prec_t: Option<f64>,
    pub prec_g: Option<f64>,
    pub knn_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        [
            self.epoch.to_string(),
            self.l_mix.to_string(),
            self.l_cls.to_string(),
            self.l_sim.to_string(),
            self.l_all.to_string(),
            self.n_t.to_string(),
            self.n_gp.to_string(),
            self.n_gpp.to_string(),
            opt(self.gamma),
            opt(self.prec_t),
            opt(self.prec_g),
            self.knn_acc.to_string(),
            self.test_acc.to_string(),
            self.seconds.to_string(),
        ]
        .join(",")
    }
}

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(metrics_csv(history).as_bytes())?;
    Ok(())
}

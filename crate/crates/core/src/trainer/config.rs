use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{AugmentationSpec, NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::model::{Architecture, LrSchedule, ProjectionKind};
use crate::neighbors::PosteriorSource;
use crate::selection::SelectionConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupKind {
    /// NT-Xent with the augmented twin as the only positive.
    #[default]
    Unsupervised,
    /// Supervised contrastive learning on the raw noisy labels.
    Supervised,
}

/// Labels the weighted-KNN evaluation attaches to the training embeddings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnLabels {
    #[default]
    Noisy,
    /// KNN-corrected pseudo-labels of the current selection.
    Pseudo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum over the 2N anchors.
    Sum,
    /// Mean over the 2N anchors, which keeps the step size independent of the batch size.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Every knob of a run. Serialized as a flat JSON object; missing keys take
/// the defaults below and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // synthetic data (ignored when a dataset file is supplied)
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub cluster_spread: f64,
    pub data_seed: u64,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    pub noise_seed: u64,
    /// Optional explicit flip table for asymmetric noise.
    pub asym_map: Option<Vec<usize>>,

    // network
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub projection: ProjectionKind,

    // selection
    pub alpha: f64,
    pub beta: f64,
    /// Neighbour count for pseudo-labels; clipped to `n_train - 1`.
    pub k: usize,
    pub posterior_source: PosteriorSource,

    // objective
    pub alpha_m: f64,
    pub tau: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    /// Reduction of the contrastive terms inside the training objective.
    pub contrastive_reduction: Reduction,
    pub mixup: bool,

    // pre-training schedule
    pub t_warm: usize,
    pub t_max: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub warmup_kind: WarmupKind,

    // augmentation
    pub jitter_sigma: f64,
    pub drop_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub finetune_jitter: f64,

    // fine-tuning
    pub t_finetune: usize,
    pub finetune_lr: f64,
    pub encoder_lr_scale: f64,
    pub freeze_encoder: bool,
    pub retrain_classifier: bool,

    // evaluation
    pub k_eval: usize,
    pub tau_knn: f64,
    pub knn_labels: KnnLabels,

    pub precision: Precision,
    /// Write wall-clock seconds into the metrics; off keeps metrics byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 500,
            classes: 4,
            dim: 16,
            cluster_spread: 0.8,
            data_seed: 1,
            noise_kind: NoiseKind::Symmetric,
            noise_rate: 0.4,
            noise_seed: 2,
            asym_map: None,

            hidden_dim: 64,
            proj_dim: 32,
            projection: ProjectionKind::Linear,

            alpha: 0.5,
            beta: 0.25,
            k: 250,
            posterior_source: PosteriorSource::PseudoLabels,

            alpha_m: 1.0,
            tau: 0.1,
            lambda_c: 1.0,
            lambda_s: 0.01,
            contrastive_reduction: Reduction::Mean,
            mixup: true,

            t_warm: 1,
            t_max: 30,
            batch_size: 64,
            lr: 0.1,
            lr_schedule: Vec::new(),
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            warmup_kind: WarmupKind::Unsupervised,

            jitter_sigma: 0.2,
            drop_prob: 0.1,
            scale_min: 0.8,
            scale_max: 1.2,
            finetune_jitter: 0.05,

            t_finetune: 30,
            finetune_lr: 0.001,
            encoder_lr_scale: 0.1,
            freeze_encoder: false,
            retrain_classifier: true,

            k_eval: 200,
            tau_knn: 0.1,
            knn_labels: KnnLabels::Noisy,

            precision: Precision::F64,
            record_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("noise_rate", self.noise_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("alpha_m", self.alpha_m),
            ("tau", self.tau),
            ("tau_knn", self.tau_knn),
            ("cluster_spread", self.cluster_spread),
            ("scale_min", self.scale_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("lr", self.lr),
            ("finetune_lr", self.finetune_lr),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("encoder_lr_scale", self.encoder_lr_scale),
            ("jitter_sigma", self.jitter_sigma),
            ("finetune_jitter", self.finetune_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.t_warm < 1 {
            return fail("t_warm must be at least 1".into());
        }
        if self.t_warm > self.t_max {
            return fail(format!("t_warm ({}) exceeds t_max ({})", self.t_warm, self.t_max));
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if self.k == 0 || self.k_eval == 0 {
            return fail("k and k_eval must be positive".into());
        }
        if self.scale_max < self.scale_min {
            return fail("scale_max must not be below scale_min".into());
        }
        self.augmentation().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn augmentation(&self) -> AugmentationSpec {
        AugmentationSpec {
            jitter_sigma: self.jitter_sigma,
            drop_prob: self.drop_prob,
            scale_range: (self.scale_min, self.scale_max),
        }
    }

    pub fn weak_augmentation(&self) -> AugmentationSpec {
        AugmentationSpec::jitter_only(self.finetune_jitter)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.noise_kind,
            rate: self.noise_rate,
            asym_map: self.asym_map.clone(),
            seed: self.noise_seed,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            milestones: self.lr_schedule.clone(),
        }
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_dim: self.hidden_dim,
            proj_dim: self.proj_dim,
            num_classes,
            projection: self.projection,
        }
    }

    /// Selection settings with `k` clipped to `n_train - 1`.
    pub fn selection(&self, n_train: usize) -> SelectionConfig {
        SelectionConfig {
            alpha: self.alpha,
            beta: self.beta,
            k: self.k.min(n_train.saturating_sub(1)).max(1),
            posterior_source: self.posterior_source,
        }
    }
}

//! Training loop: warm-up, per-epoch selection with composite-loss
//! pre-training, classifier fine-tuning, and a plain cross-entropy baseline.
//!
//! Every source of randomness is a ChaCha8 stream derived from the run seed,
//! so a `(dataset, config)` pair always yields the same history.

mod config;
mod record;

use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{KnnLabels, Precision, Reduction, RunConfig, WarmupKind};
pub use record::{metrics_csv, write_metrics_csv, EpochRecord, METRICS_COLUMNS};

use crate::datagen::{augment_into, sample_mixup_lambda, AugmentationSpec, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, selection_precision, weighted_knn_eval, MetricsReport};
use crate::losses::{
    classification_loss, mixup_contrastive, similarity_loss, sup_contrastive, unsup_contrastive, BatchView,
    LossBundle, LossGrad, MixedBatch,
};
use crate::matrix::Matrix;
use crate::model::{Network, OutputGrads, ParamGroup, ParamSet, SgdMomentum};
use crate::neighbors::SimilarityMatrix;
use crate::scalar::Scalar;
use crate::selection::{run_selection, SameLabel, SelectionState};

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_FINETUNE: u64 = 2;
const STREAM_BASELINE: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The train/test split of a dataset, materialized once.
#[derive(Clone, Debug)]
pub struct SplitData<T> {
    /// Dataset row of each training example; selection indices refer to
    /// positions in this list.
    pub train_indices: Vec<usize>,
    pub train_x: Matrix<T>,
    pub train_noisy: Vec<usize>,
    pub train_true: Vec<usize>,
    pub test_x: Matrix<T>,
    pub test_true: Vec<usize>,
    pub classes: usize,
}

impl<T: Scalar> SplitData<T> {
    pub fn new(ds: &Dataset<T>) -> Result<Self> {
        let train_indices = ds.train_indices();
        let test_indices = ds.test_indices();
        if train_indices.len() < 2 {
            return Err(Error::invalid("training split needs at least two examples"));
        }
        Ok(Self {
            train_x: ds.instances().select_rows(&train_indices),
            train_noisy: train_indices.iter().map(|&i| ds.noisy_labels()[i]).collect(),
            train_true: train_indices.iter().map(|&i| ds.true_labels()[i]).collect(),
            test_x: ds.instances().select_rows(&test_indices),
            test_true: test_indices.iter().map(|&i| ds.true_labels()[i]).collect(),
            classes: ds.num_classes(),
            train_indices,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_x.rows()
    }
}

/// Stacks two augmented views of each listed example: rows `0..n` hold the
/// first view, rows `n..2n` the second.
fn two_views<T: Scalar>(
    x: &Matrix<T>,
    batch: &[usize],
    spec: &AugmentationSpec,
    rng: &mut ChaCha8Rng,
) -> (Matrix<T>, Vec<usize>) {
    let mut data = Vec::with_capacity(2 * batch.len() * x.cols());
    for _ in 0..2 {
        for &i in batch {
            augment_into(x.row(i), spec, rng, &mut data);
        }
    }
    let origin = batch.iter().chain(batch).copied().collect();
    (
        Matrix::from_vec(2 * batch.len(), x.cols(), data).expect("view buffer has the right size"),
        origin,
    )
}

fn one_view<T: Scalar>(x: &Matrix<T>, batch: &[usize], spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let mut data = Vec::with_capacity(batch.len() * x.cols());
    for &i in batch {
        augment_into(x.row(i), spec, rng, &mut data);
    }
    Matrix::from_vec(batch.len(), x.cols(), data).expect("view buffer has the right size")
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

fn scale_loss<T: Scalar>(mut l: LossGrad<T>, s: T) -> LossGrad<T> {
    l.value *= s;
    l.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
    l
}

/// Sel-CL pre-training state: the network, its optimizer and the history.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    cfg: RunConfig,
    data: SplitData<T>,
    net: Network<T>,
    opt: SgdMomentum<T>,
    rng: ChaCha8Rng,
    history: Vec<EpochRecord>,
    selection: Option<SelectionState<T>>,
    epoch: usize,
    step_losses: Vec<f64>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh network initialized from the run seed.
    pub fn new(ds: &Dataset<T>, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.architecture(ds.dim(), ds.num_classes());
        let net = Network::new(arch, &mut rng_for(cfg.seed, STREAM_INIT))?;
        Self::with_network(ds, cfg, net)
    }

    pub fn with_network(ds: &Dataset<T>, cfg: RunConfig, net: Network<T>) -> Result<Self> {
        cfg.validate()?;
        let arch = net.arch();
        if arch.input_dim != ds.dim() || arch.num_classes != ds.num_classes() {
            return Err(Error::Config(format!(
                "network expects {} features and {} classes, dataset has {} and {}",
                arch.input_dim,
                arch.num_classes,
                ds.dim(),
                ds.num_classes()
            )));
        }
        let data = SplitData::new(ds)?;
        let opt = SgdMomentum::new(net.params(), cfg.lr, cfg.momentum, cfg.weight_decay);
        Ok(Self {
            rng: rng_for(cfg.seed, STREAM_TRAIN),
            cfg,
            data,
            net,
            opt,
            history: Vec::new(),
            selection: None,
            epoch: 0,
            step_losses: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn data(&self) -> &SplitData<T> {
        &self.data
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Selection the most recent epoch trained on.
    pub fn selection(&self) -> Option<&SelectionState<T>> {
        self.selection.as_ref()
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Total loss of every optimizer step of the most recent epoch.
    pub fn step_losses(&self) -> &[f64] {
        &self.step_losses
    }

    /// Normalized projections of the unaugmented training set.
    pub fn train_embeddings(&self) -> Result<Matrix<T>> {
        self.net.embed(&self.data.train_x)
    }

    /// Selects confident examples and pairs from the current encoder.
    pub fn select(&self) -> Result<SelectionState<T>> {
        let sims = SimilarityMatrix::from_rows(&self.train_embeddings()?)?;
        let cfg = self.cfg.selection(self.data.n_train());
        run_selection(&sims, &self.data.train_noisy, self.data.classes, &cfg, self.epoch + 1)
    }

    fn shuffled_order(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.n_train()).collect();
        order.shuffle(&mut self.rng);
        order
    }

    fn contrastive_scale(&self, views: usize) -> T {
        match self.cfg.contrastive_reduction {
            config::Reduction::Sum => T::one(),
            config::Reduction::Mean => T::one() / T::of(views as f64),
        }
    }

    fn begin_epoch(&mut self) {
        self.opt.set_lr(self.cfg.schedule().lr_at(self.epoch + 1));
        self.step_losses.clear();
    }

    /// Runs every warm-up epoch.
    pub fn warmup(&mut self) -> Result<()> {
        while self.epoch < self.cfg.t_warm {
            self.warmup_epoch()?;
        }
        Ok(())
    }

    /// One epoch of the configured warm-up loss over two augmented views.
    pub fn warmup_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        self.begin_epoch();
        let spec = self.cfg.augmentation();
        let tau = T::of(self.cfg.tau);
        let order = self.shuffled_order();
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in batches(&order, self.cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let (x, origin) = two_views(&self.data.train_x, batch, &spec, &mut self.rng);
            let fwd = self.net.forward(&x)?;
            let view = BatchView::new(fwd.z.clone(), origin)?;
            let loss = match self.cfg.warmup_kind {
                WarmupKind::Unsupervised => unsup_contrastive(&view, tau)?,
                WarmupKind::Supervised => sup_contrastive(&view, &SameLabel(&self.data.train_noisy), tau)?,
            };
            let loss = scale_loss(loss, self.contrastive_scale(x.rows()));
            let grads = self.net.backward(
                &fwd,
                OutputGrads {
                    z: Some(&loss.grad),
                    ..Default::default()
                },
            )?;
            self.opt.step(self.net.params_mut(), &grads)?;
            let v = loss.value.as_f64();
            check_loss(v)?;
            self.step_losses.push(v);
            sum += v;
            count += 1;
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        let losses = LossBundle::new(mean, 0.0, 0.0, self.cfg.lambda_c, self.cfg.lambda_s);
        self.selection = None;
        self.finish_epoch(losses, start)
    }

    /// One Sel-CL epoch: refresh the embedding bank, select, then train on
    /// the composite objective.
    pub fn pretrain_epoch(&mut self) -> Result<EpochRecord> {
        if self.epoch < self.cfg.t_warm {
            return Err(Error::Config(format!(
                "pre-training epoch {} requested before warm-up finished ({} warm-up epochs)",
                self.epoch + 1,
                self.cfg.t_warm
            )));
        }
        let start = Instant::now();
        let selection = self.select()?;
        self.begin_epoch();
        if selection.confident.is_empty() {
            warn!(
                "epoch {}: no confident examples selected, training this epoch without supervision",
                self.epoch + 1
            );
            self.selection = Some(selection);
            return self.unsupervised_fallback_epoch(start);
        }

        let n_train = self.data.n_train();
        let mut in_t = vec![false; n_train];
        for i in selection.confident.all() {
            in_t[i] = true;
        }
        let spec = self.cfg.augmentation();
        let tau = T::of(self.cfg.tau);
        let (lc, ls) = (T::of(self.cfg.lambda_c), T::of(self.cfg.lambda_s));
        let order = self.shuffled_order();
        let mut totals = LossBundle::<f64>::default();
        let mut count = 0usize;
        for batch in batches(&order, self.cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let (x, origin) = two_views(&self.data.train_x, batch, &spec, &mut self.rng);
            let scale = self.contrastive_scale(x.rows());

            // Contrastive stream, optionally on mixed inputs.
            let (mix, mut grads) = if self.cfg.mixup {
                let lambda = T::of(sample_mixup_lambda(self.cfg.alpha_m, &mut self.rng)?);
                let mut perm: Vec<usize> = (0..batch.len()).collect();
                perm.shuffle(&mut self.rng);
                let n = batch.len();
                let mut mixed = Vec::with_capacity(x.rows() * x.cols());
                let mut partner = Vec::with_capacity(x.rows());
                for r in 0..x.rows() {
                    let (half, k) = (r / n, r % n);
                    let other = half * n + perm[k];
                    let row = crate::datagen::mixup_with_lambda(x.row(r), x.row(other), lambda)?;
                    mixed.extend(row.x);
                    partner.push(origin[other]);
                }
                let mixed = Matrix::from_vec(x.rows(), x.cols(), mixed)?;
                let fwd = self.net.forward(&mixed)?;
                let mb = MixedBatch::new(BatchView::new(fwd.z.clone(), origin.clone())?, partner, lambda)?;
                let loss = scale_loss(mixup_contrastive(&mb, &selection.g, tau)?, scale);
                let grads = self.net.backward(
                    &fwd,
                    OutputGrads {
                        z: Some(&loss.grad),
                        ..Default::default()
                    },
                )?;
                (loss.value, grads)
            } else {
                (T::zero(), ParamSet::zeros_like(self.net.params()))
            };

            // Classification and similarity losses on the unmixed views; the
            // contrastive loss joins them here when mixup is off.
            let fwd = self.net.forward(&x)?;
            let targets: Vec<(usize, usize)> = origin
                .iter()
                .enumerate()
                .filter(|&(_, &o)| in_t[o])
                .map(|(r, &o)| (r, self.data.train_noisy[o]))
                .collect();
            let cls = classification_loss(&fwd.p, &targets);
            let sim = similarity_loss(&fwd.p, &origin, &selection.g)?;
            let mut gp = cls.grad;
            gp.as_mut_slice().iter_mut().for_each(|g| *g *= lc);
            gp.add_scaled(&sim.grad, ls);
            let (mix, gz) = if self.cfg.mixup {
                (mix, None)
            } else {
                let view = BatchView::new(fwd.z.clone(), origin.clone())?;
                let loss = scale_loss(sup_contrastive(&view, &selection.g, tau)?, scale);
                (loss.value, Some(loss.grad))
            };
            let g2 = self.net.backward(
                &fwd,
                OutputGrads {
                    z: gz.as_ref(),
                    p: Some(&gp),
                    v: None,
                },
            )?;
            grads.add_assign(&g2);
            self.opt.step(self.net.params_mut(), &grads)?;

            let step = LossBundle::new(mix, cls.value, sim.value, lc, ls);
            check_loss(step.all.as_f64())?;
            self.step_losses.push(step.all.as_f64());
            totals.mix += step.mix.as_f64();
            totals.cls += step.cls.as_f64();
            totals.sim += step.sim.as_f64();
            count += 1;
        }
        let c = count.max(1) as f64;
        let losses = LossBundle::new(
            totals.mix / c,
            totals.cls / c,
            totals.sim / c,
            self.cfg.lambda_c,
            self.cfg.lambda_s,
        );
        self.selection = Some(selection);
        self.finish_epoch(losses, start)
    }

    fn unsupervised_fallback_epoch(&mut self, start: Instant) -> Result<EpochRecord> {
        let spec = self.cfg.augmentation();
        let tau = T::of(self.cfg.tau);
        let order = self.shuffled_order();
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in batches(&order, self.cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let (x, origin) = two_views(&self.data.train_x, batch, &spec, &mut self.rng);
            let fwd = self.net.forward(&x)?;
            let loss = scale_loss(
                unsup_contrastive(&BatchView::new(fwd.z.clone(), origin)?, tau)?,
                self.contrastive_scale(x.rows()),
            );
            let grads = self.net.backward(
                &fwd,
                OutputGrads {
                    z: Some(&loss.grad),
                    ..Default::default()
                },
            )?;
            self.opt.step(self.net.params_mut(), &grads)?;
            let v = loss.value.as_f64();
            check_loss(v)?;
            self.step_losses.push(v);
            sum += v;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        let losses = LossBundle::new(mean, 0.0, 0.0, self.cfg.lambda_c, self.cfg.lambda_s);
        self.finish_epoch(losses, start)
    }

    fn finish_epoch(&mut self, losses: LossBundle<f64>, start: Instant) -> Result<EpochRecord> {
        self.epoch += 1;
        let knn_labels = match (self.cfg.knn_labels, &self.selection) {
            (KnnLabels::Pseudo, Some(s)) => s.pseudo.pseudo_labels.clone(),
            _ => self.data.train_noisy.clone(),
        };
        let (knn_acc, test_acc) = if self.data.test_x.rows() > 0 {
            let train_z = self.train_embeddings()?;
            let test_fwd = self.net.forward(&self.data.test_x)?;
            let k = self.cfg.k_eval.min(self.data.n_train());
            let knn = weighted_knn_eval(
                &train_z,
                &knn_labels,
                &test_fwd.z,
                &self.data.test_true,
                self.data.classes,
                k,
                self.cfg.tau_knn,
            )?;
            let pred: Vec<usize> = test_fwd.p.iter_rows().map(crate::model::argmax).collect();
            (knn, accuracy(&pred, &self.data.test_true))
        } else {
            (0.0, 0.0)
        };
        let (n_t, n_gp, n_gpp, gamma, prec_t, prec_g) = match &self.selection {
            Some(s) => {
                let (pt, pg) = selection_precision(&s.confident, &s.g, &self.data.train_true, &self.data.train_noisy);
                (
                    s.confident.len(),
                    s.g_prime.len(),
                    s.g_doubleprime.len(),
                    Some(s.gamma.as_f64()),
                    Some(pt.percent),
                    Some(pg.percent),
                )
            }
            None => (0, 0, 0, None, None, None),
        };
        let record = EpochRecord {
            epoch: self.epoch,
            l_mix: losses.mix,
            l_cls: losses.cls,
            l_sim: losses.sim,
            l_all: losses.all,
            n_t,
            n_gp,
            n_gpp,
            gamma,
            prec_t,
            prec_g,
            knn_acc,
            test_acc,
            seconds: if self.cfg.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log::info!(
            "epoch {:>3}  L_all {:.4}  |T| {:>4}  prec_T {}  knn {:.2}  test {:.2}",
            record.epoch,
            record.l_all,
            record.n_t,
            record.prec_t.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into()),
            record.knn_acc,
            record.test_acc
        );
        self.history.push(record.clone());
        Ok(record)
    }

    /// Warm-up followed by Sel-CL epochs up to `t_max`.
    pub fn run(&mut self) -> Result<()> {
        self.warmup()?;
        while self.epoch < self.cfg.t_max {
            self.pretrain_epoch()?;
        }
        Ok(())
    }

    /// Consumes the trainer, selecting once more on the final encoder.
    pub fn finish(self) -> Result<PretrainOutput<T>> {
        let selection = self.select()?;
        Ok(PretrainOutput {
            network: self.net,
            history: self.history,
            selection,
            train_indices: self.data.train_indices,
        })
    }
}

fn check_loss(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("training loss ({v})")))
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutput<T> {
    pub network: Network<T>,
    pub history: Vec<EpochRecord>,
    /// Selection computed on the final encoder; indices refer to `train_indices`.
    pub selection: SelectionState<T>,
    pub train_indices: Vec<usize>,
}

/// Runs `cfg.t_warm` warm-up epochs starting from `net`.
pub fn warmup<T: Scalar>(net: Network<T>, ds: &Dataset<T>, cfg: &RunConfig) -> Result<Network<T>> {
    let mut t = Trainer::with_network(ds, cfg.clone(), net)?;
    t.warmup()?;
    Ok(t.into_network())
}

/// Full Sel-CL pre-training from a freshly initialized network.
pub fn pretrain<T: Scalar>(ds: &Dataset<T>, cfg: &RunConfig) -> Result<PretrainOutput<T>> {
    let mut t = Trainer::new(ds, cfg.clone())?;
    t.run()?;
    t.finish()
}

#[derive(Clone, Debug)]
pub struct FinetuneOutput<T> {
    pub network: Network<T>,
    /// Percent of confident examples the fine-tuned classifier labels with their noisy label.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Sel-CL+ stage: cross-entropy on the confident examples with weak
/// augmentation. The encoder trains at `encoder_lr_scale` times the head
/// rate (or not at all with `freeze_encoder`); the projection head is frozen.
pub fn finetune<T: Scalar>(
    net: &Network<T>,
    ds: &Dataset<T>,
    selection: &SelectionState<T>,
    cfg: &RunConfig,
) -> Result<FinetuneOutput<T>> {
    cfg.validate()?;
    let data = SplitData::new(ds)?;
    let chosen = selection.confident.all();
    if chosen.is_empty() {
        return Err(Error::EmptySelection);
    }
    if let Some(&bad) = chosen.iter().find(|&&i| i >= data.n_train()) {
        return Err(Error::invalid(format!("selected example {bad} is outside the training split")));
    }
    let mut rng = rng_for(cfg.seed, STREAM_FINETUNE);
    let mut net = net.clone();
    if cfg.retrain_classifier {
        net.reset_classifier(&mut rng);
    }
    let mut opt = SgdMomentum::new(net.params(), cfg.finetune_lr, cfg.momentum, cfg.weight_decay);
    let encoder_scale = if cfg.freeze_encoder { 0.0 } else { cfg.encoder_lr_scale };
    opt.set_group_scale(ParamGroup::Encoder, encoder_scale);
    opt.set_group_scale(ParamGroup::Projection, 0.0);
    let spec = cfg.weak_augmentation();
    let mut order = chosen.clone();
    for _ in 0..cfg.t_finetune {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = one_view(&data.train_x, batch, &spec, &mut rng);
            let targets: Vec<(usize, usize)> = batch.iter().enumerate().map(|(r, &i)| (r, data.train_noisy[i])).collect();
            let fwd = net.forward(&x)?;
            let loss = classification_loss(&fwd.p, &targets);
            check_loss(loss.value.as_f64())?;
            let grads = net.backward(
                &fwd,
                OutputGrads {
                    p: Some(&loss.grad),
                    ..Default::default()
                },
            )?;
            opt.step(net.params_mut(), &grads)?;
        }
    }
    let chosen_x = data.train_x.select_rows(&chosen);
    let chosen_y: Vec<usize> = chosen.iter().map(|&i| data.train_noisy[i]).collect();
    let train_accuracy = accuracy(&net.predict(&chosen_x)?, &chosen_y);
    let test_accuracy = if data.test_x.rows() > 0 {
        accuracy(&net.predict(&data.test_x)?, &data.test_true)
    } else {
        0.0
    };
    Ok(FinetuneOutput {
        network: net,
        train_accuracy,
        test_accuracy,
    })
}

#[derive(Clone, Debug)]
pub struct BaselineOutput<T> {
    pub network: Network<T>,
    pub test_accuracy: f64,
}

/// Plain cross-entropy on every noisy training label, for
/// `t_max + t_finetune` epochs with the pre-training rate and schedule and
/// the weak (jitter-only) augmentation.
pub fn train_cross_entropy<T: Scalar>(ds: &Dataset<T>, cfg: &RunConfig) -> Result<BaselineOutput<T>> {
    cfg.validate()?;
    let data = SplitData::new(ds)?;
    let arch = cfg.architecture(ds.dim(), ds.num_classes());
    let mut net = Network::new(arch, &mut rng_for(cfg.seed, STREAM_INIT))?;
    let mut rng = rng_for(cfg.seed, STREAM_BASELINE);
    let mut opt = SgdMomentum::new(net.params(), cfg.lr, cfg.momentum, cfg.weight_decay);
    opt.set_group_scale(ParamGroup::Projection, 0.0);
    let schedule = cfg.schedule();
    let spec = cfg.weak_augmentation();
    let mut order: Vec<usize> = (0..data.n_train()).collect();
    for epoch in 1..=cfg.t_max + cfg.t_finetune {
        opt.set_lr(schedule.lr_at(epoch));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = one_view(&data.train_x, batch, &spec, &mut rng);
            let targets: Vec<(usize, usize)> = batch.iter().enumerate().map(|(r, &i)| (r, data.train_noisy[i])).collect();
            let fwd = net.forward(&x)?;
            let loss = classification_loss(&fwd.p, &targets);
            check_loss(loss.value.as_f64())?;
            let grads = net.backward(
                &fwd,
                OutputGrads {
                    p: Some(&loss.grad),
                    ..Default::default()
                },
            )?;
            opt.step(net.params_mut(), &grads)?;
        }
    }
    let test_accuracy = if data.test_x.rows() > 0 {
        accuracy(&net.predict(&data.test_x)?, &data.test_true)
    } else {
        0.0
    };
    Ok(BaselineOutput {
        network: net,
        test_accuracy,
    })
}

/// Representation and selection metrics of a network on a dataset.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    ds: &Dataset<T>,
    cfg: &RunConfig,
    selection: Option<&SelectionState<T>>,
) -> Result<MetricsReport> {
    let data = SplitData::new(ds)?;
    if data.test_x.rows() == 0 {
        return Err(Error::invalid("evaluation needs a non-empty test split"));
    }
    let train_z = net.embed(&data.train_x)?;
    let test_fwd = net.forward(&data.test_x)?;
    let labels = match (cfg.knn_labels, selection) {
        (KnnLabels::Pseudo, Some(s)) => s.pseudo.pseudo_labels.clone(),
        _ => data.train_noisy.clone(),
    };
    let knn_accuracy = weighted_knn_eval(
        &train_z,
        &labels,
        &test_fwd.z,
        &data.test_true,
        data.classes,
        cfg.k_eval.min(data.n_train()),
        cfg.tau_knn,
    )?;
    let pred: Vec<usize> = test_fwd.p.iter_rows().map(crate::model::argmax).collect();
    let test_accuracy = accuracy(&pred, &data.test_true);
    let (pe, pp, n_confident, n_pairs) = match selection {
        Some(s) => {
            let (pe, pp) = selection_precision(&s.confident, &s.g, &data.train_true, &data.train_noisy);
            (pe.percent, pp.percent, s.confident.len(), s.g.len())
        }
        None => (100.0, 100.0, 0, 0),
    };
    Ok(MetricsReport {
        knn_accuracy,
        test_accuracy,
        precision_examples: pe,
        precision_pairs: pp,
        n_confident,
        n_pairs,
    })
}

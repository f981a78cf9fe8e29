//! Synthetic labelled data, label-noise injection, feature-space augmentation
//! and the CSV dataset format.
//!
//! CSV layout (one header row, then one row per example):
//!
//! ```text
//! feature_0,...,feature_{D-1},true_label,noisy_label,split
//! ```
//!
//! `split` is `train` or `test`. Noise is only ever injected on train rows.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{norm, Scalar};

/// Radius of the sphere the blob centres are placed on.
pub const BLOB_CENTER_RADIUS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    instances: Matrix<T>,
    true_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Validates and assembles a dataset.
    pub fn new(
        instances: Matrix<T>,
        true_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        splits: Vec<Split>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = instances.rows();
        for (what, len) in [
            ("true_labels", true_labels.len()),
            ("noisy_labels", noisy_labels.len()),
            ("splits", splits.len()),
        ] {
            if len != n {
                return Err(Error::dims(n, len, what));
            }
        }
        for i in 0..n {
            for label in [true_labels[i], noisy_labels[i]] {
                if label >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        row: i as u64,
                        label,
                        classes: num_classes,
                    });
                }
            }
            if splits[i] == Split::Test && true_labels[i] != noisy_labels[i] {
                return Err(Error::invalid(format!(
                    "test example {i} carries a noisy label"
                )));
            }
        }
        Ok(Self {
            instances,
            true_labels,
            noisy_labels,
            splits,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.instances.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn instances(&self) -> &Matrix<T> {
        &self.instances
    }

    pub fn instance(&self, i: usize) -> &[T] {
        self.instances.row(i)
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Test)
    }

    /// Fraction of train examples whose observed label differs from the true one.
    pub fn train_noise_fraction(&self) -> f64 {
        let train = self.train_indices();
        if train.is_empty() {
            return 0.0;
        }
        let wrong = train
            .iter()
            .filter(|&&i| self.true_labels[i] != self.noisy_labels[i])
            .count();
        wrong as f64 / train.len() as f64
    }

    pub fn convert<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            instances: self.instances.convert(),
            true_labels: self.true_labels.clone(),
            noisy_labels: self.noisy_labels.clone(),
            splits: self.splits.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// `n` examples from `classes` isotropic Gaussian blobs in `dim` dimensions.
///
/// Example `i` belongs to class `i % classes`; the last `n / 5` examples form
/// the test split. Centres sit on a sphere of radius [`BLOB_CENTER_RADIUS`],
/// mutually orthogonal whenever `classes <= dim`.
pub fn make_blobs<T: Scalar>(
    n: usize,
    classes: usize,
    dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if classes < 2 || n < classes {
        return Err(Error::invalid(format!(
            "need n >= classes >= 2, got n={n}, classes={classes}"
        )));
    }
    if dim < 2 {
        return Err(Error::invalid(format!("need dim >= 2, got {dim}")));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::invalid(format!(
            "cluster spread must be positive, got {cluster_spread}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(classes, dim, &mut rng);

    let n_test = n / 5;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mu in &centers[c] {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(T::of(mu + cluster_spread * e));
        }
        labels.push(c);
        splits.push(if i + n_test >= n {
            Split::Test
        } else {
            Split::Train
        });
    }
    let instances = Matrix::from_vec(n, dim, data)?;
    Dataset::new(instances, labels.clone(), labels, splits, classes)
}

fn blob_centers(classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centers.len() < classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if centers.len() < dim {
            // Gram-Schmidt against the centres placed so far
            for c in &centers {
                let cn = norm(c);
                let proj = crate::scalar::dot(&v, c) / (cn * cn);
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= proj * y;
                }
            }
        }
        let len = norm(&v);
        if len < 1e-6 {
            continue;
        }
        centers.push(v.iter().map(|x| x / len * BLOB_CENTER_RADIUS).collect());
    }
    centers
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            other => Err(Error::invalid(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Explicit class-to-class flip table; `map[c] == c` leaves class `c` untouched.
    pub asym_map: Option<Vec<usize>>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
            asym_map: None,
            seed,
        }
    }

    pub fn asymmetric(rate: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Asymmetric,
            rate,
            asym_map: None,
            seed,
        }
    }
}

/// The CIFAR-10 flip table: truck->automobile, bird->airplane, deer->horse, cat<->dog.
pub fn cifar10_asym_map() -> Vec<usize> {
    // airplane, automobile, bird, cat, deer, dog, frog, horse, ship, truck
    vec![0, 1, 0, 5, 7, 3, 6, 7, 8, 1]
}

/// Corrupts the observed labels of train examples.
///
/// Symmetric: exactly `round(rate * n_train)` train examples, chosen uniformly,
/// get a label drawn uniformly over all classes (possibly the true one).
/// Asymmetric: each train example flips independently with probability `rate`
/// to `asym_map[class]`, by default `(class + 1) % C`.
pub fn inject_noise<T: Scalar>(ds: &Dataset<T>, spec: &NoiseSpec) -> Result<Dataset<T>> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::invalid(format!(
            "noise rate must lie in [0, 1], got {}",
            spec.rate
        )));
    }
    let classes = ds.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = ds.train_indices();
    let mut noisy = ds.true_labels().to_vec();

    match spec.kind {
        NoiseKind::Symmetric => {
            let count = (spec.rate * train.len() as f64).round() as usize;
            let mut chosen = sample(&mut rng, train.len(), count).into_vec();
            chosen.sort_unstable();
            for pos in chosen {
                noisy[train[pos]] = rng.random_range(0..classes);
            }
        }
        NoiseKind::Asymmetric => {
            let map = match &spec.asym_map {
                Some(map) => {
                    validate_asym_map(map, classes)?;
                    map.clone()
                }
                None => (0..classes).map(|c| (c + 1) % classes).collect(),
            };
            for &i in &train {
                if rng.random::<f64>() < spec.rate {
                    noisy[i] = map[ds.true_labels()[i]];
                }
            }
        }
    }

    Dataset::new(
        ds.instances().clone(),
        ds.true_labels().to_vec(),
        noisy,
        ds.splits().to_vec(),
        classes,
    )
}

fn validate_asym_map(map: &[usize], classes: usize) -> Result<()> {
    if map.len() != classes {
        return Err(Error::dims(classes, map.len(), "asymmetric flip table"));
    }
    if let Some((c, &to)) = map.iter().enumerate().find(|(_, &to)| to >= classes) {
        return Err(Error::invalid(format!(
            "flip table maps class {c} to {to}, outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Parameters of the feature-space augmentation: `s * (x + eps)` with dropout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub jitter_sigma: f64,
    pub drop_prob: f64,
    pub scale_range: (f64, f64),
}

impl AugmentationSpec {
    pub const IDENTITY: Self = Self {
        jitter_sigma: 0.0,
        drop_prob: 0.0,
        scale_range: (1.0, 1.0),
    };

    pub fn jitter_only(sigma: f64) -> Self {
        Self {
            jitter_sigma: sigma,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.jitter_sigma.is_nan()
            || self.jitter_sigma < 0.0
            || !(0.0..=1.0).contains(&self.drop_prob)
            || !(lo > 0.0 && lo <= hi)
        {
            return Err(Error::invalid(format!("invalid augmentation spec {self:?}")));
        }
        Ok(())
    }
}

pub fn augment<T: Scalar, R: Rng + ?Sized>(x: &[T], spec: &AugmentationSpec, rng: &mut R) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    augment_into(x, spec, rng, &mut out);
    out
}

pub(crate) fn augment_into<T: Scalar, R: Rng + ?Sized>(
    x: &[T],
    spec: &AugmentationSpec,
    rng: &mut R,
    out: &mut Vec<T>,
) {
    let (lo, hi) = spec.scale_range;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let scale = T::of(scale);
    for &xi in x {
        let mut v = xi;
        if spec.jitter_sigma > 0.0 {
            let e: f64 = StandardNormal.sample(rng);
            v += T::of(spec.jitter_sigma * e);
        }
        if spec.drop_prob > 0.0 && rng.random::<f64>() < spec.drop_prob {
            v = T::zero();
        }
        out.push(scale * v);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dominant {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixed<T> {
    pub x: Vec<T>,
    pub lambda: T,
    pub dominant: Dominant,
}

/// Draws `lambda ~ Beta(alpha_m, alpha_m)`.
pub fn sample_mixup_lambda<R: Rng + ?Sized>(alpha_m: f64, rng: &mut R) -> Result<f64> {
    if !(alpha_m > 0.0 && alpha_m.is_finite()) {
        return Err(Error::invalid(format!(
            "mixup parameter must be positive, got {alpha_m}"
        )));
    }
    let beta = Beta::new(alpha_m, alpha_m).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Convex combination `lambda * a + (1 - lambda) * b`; ties at 0.5 go to `a`.
pub fn mixup_with_lambda<T: Scalar>(a: &[T], b: &[T], lambda: T) -> Result<Mixed<T>> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len(), "mixup operands"));
    }
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::invalid(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let rest = T::one() - lambda;
    let x = a.iter().zip(b).map(|(&p, &q)| lambda * p + rest * q).collect();
    Ok(Mixed {
        x,
        lambda,
        dominant: dominant_of(lambda),
    })
}

pub fn dominant_of<T: Scalar>(lambda: T) -> Dominant {
    if lambda >= T::of(0.5) {
        Dominant::A
    } else {
        Dominant::B
    }
}

pub fn mixup_combine<T: Scalar, R: Rng + ?Sized>(
    a: &[T],
    b: &[T],
    alpha_m: f64,
    rng: &mut R,
) -> Result<Mixed<T>> {
    let lambda = sample_mixup_lambda(alpha_m, rng)?;
    mixup_with_lambda(a, b, T::of(lambda))
}

/// Reads the CSV format described at module level.
///
/// With `num_classes = None` the class count is inferred as `max label + 1`.
pub fn load_features_csv<T: Scalar>(
    path: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;

    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    let mut true_labels = Vec::new();
    let mut noisy_labels = Vec::new();
    let mut splits = Vec::new();
    let mut rows = Vec::new();

    for record in reader.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        if record.len() < 4 {
            return Err(Error::Parse {
                row,
                message: format!("expected at least 4 fields, found {}", record.len()),
            });
        }
        let d = record.len() - 3;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::dims(expected, d, format!("feature count at row {row}")))
            }
            _ => {}
        }
        for field in record.iter().take(d) {
            let value: T = field.parse().map_err(|e| Error::Parse {
                row,
                message: format!("bad feature `{field}`: {e}"),
            })?;
            data.push(value);
        }
        let parse_label = |field: &str| -> Result<usize> {
            field.parse().map_err(|e| Error::Parse {
                row,
                message: format!("bad label `{field}`: {e}"),
            })
        };
        let t = parse_label(&record[d])?;
        let y = parse_label(&record[d + 1])?;
        let split: Split = record[d + 2].parse().map_err(|e: Error| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if let Some(classes) = num_classes {
            for label in [t, y] {
                if label >= classes {
                    return Err(Error::LabelOutOfRange { row, label, classes });
                }
            }
        }
        true_labels.push(t);
        noisy_labels.push(y);
        splits.push(split);
        rows.push(row);
    }

    let dim = dim.ok_or_else(|| Error::invalid("dataset file has no rows"))?;
    let classes = match num_classes {
        Some(c) => c,
        None => {
            let max = true_labels.iter().chain(&noisy_labels).copied().max().unwrap_or(0);
            (max + 1).max(2)
        }
    };
    for (k, &row) in rows.iter().enumerate() {
        if splits[k] == Split::Test && true_labels[k] != noisy_labels[k] {
            return Err(Error::Parse {
                row,
                message: "test rows must have noisy_label == true_label".into(),
            });
        }
    }
    let n = true_labels.len();
    Dataset::new(Matrix::from_vec(n, dim, data)?, true_labels, noisy_labels, splits, classes)
}

/// Writes `ds` in the CSV format read by [`load_features_csv`].
pub fn write_features_csv<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("feature_{j}")).collect();
    header.extend(["true_label", "noisy_label", "split"].map(String::from));
    writer.write_record(&header)?;
    for i in 0..ds.len() {
        let mut record: Vec<String> = ds.instance(i).iter().map(|v| v.to_string()).collect();
        record.push(ds.true_labels()[i].to_string());
        record.push(ds.noisy_labels()[i].to_string());
        record.push(ds.splits()[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

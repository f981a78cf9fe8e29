//! Confident-example and confident-pair selection.
//!
//! Fractiles use the nearest-rank convention on ascending values: the
//! `f`-fractile of `m` values is the `ceil(f * m)`-th smallest, and the
//! 0-fractile is the minimum.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{aggregate_with_similarities, PosteriorSource, PseudoLabelState, SimilarityMatrix};
use crate::scalar::Scalar;

/// Added inside the log of the selection loss so zero posteriors stay finite.
pub const SELECTION_LOG_EPS: f64 = 1e-12;

/// 0-based position of the nearest-rank `fraction`-fractile among `len` sorted values.
pub fn fractile_index(fraction: f64, len: usize) -> usize {
    assert!(len > 0, "fractile of an empty set");
    // the slack keeps e.g. 0.35 * 20 from rounding up past 7
    let rank = (fraction * len as f64 - 1e-9).ceil();
    (rank.max(1.0) as usize).min(len) - 1
}

/// Nearest-rank fractile of unsorted values.
pub fn fractile<T: PartialOrd + Copy>(values: &[T], fraction: f64) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    sorted[fractile_index(fraction, sorted.len())]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfidentExamples {
    /// `per_class[c]` lists the selected examples with noisy label `c`, in selection order.
    pub per_class: Vec<Vec<usize>>,
    /// Per-class agreement counts between pseudo-labels and noisy labels.
    pub agreement: Vec<usize>,
    /// Number of examples taken from each class (before capping by population).
    pub n_sel: usize,
}

impl ConfidentExamples {
    /// Sorted union of all classes.
    pub fn all(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.per_class.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn selection_loss<T: Scalar>(q: T) -> f64 {
    -(q.as_f64() + SELECTION_LOG_EPS).ln()
}

/// Class-balanced confident examples.
///
/// The per-class budget is the `alpha`-fractile of the per-class agreement
/// counts. Within class `c`, examples labelled `c` are ranked by
/// `-ln(q_c + eps)` (ties by index) and the first `min(budget, available)` kept.
pub fn select_confident_examples<T: Scalar>(
    pseudo: &PseudoLabelState<T>,
    noisy_labels: &[usize],
    num_classes: usize,
    alpha: f64,
) -> Result<ConfidentExamples> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = noisy_labels.len();
    if pseudo.pseudo_labels.len() != n || pseudo.posterior.rows() != n {
        return Err(Error::dims(n, pseudo.pseudo_labels.len(), "pseudo-label state"));
    }
    if pseudo.posterior.cols() != num_classes {
        return Err(Error::dims(num_classes, pseudo.posterior.cols(), "posterior classes"));
    }

    let mut agreement = vec![0usize; num_classes];
    for (i, &y) in noisy_labels.iter().enumerate() {
        if pseudo.pseudo_labels[i] == y {
            agreement[y] += 1;
        }
    }
    let n_sel = fractile(&agreement, alpha);

    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let mut ranked: Vec<(f64, usize)> = (0..n)
            .filter(|&i| noisy_labels[i] == c)
            .map(|i| (selection_loss(pseudo.posterior.get(i, c)), i))
            .collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        ranked.truncate(n_sel);
        per_class.push(ranked.into_iter().map(|(_, i)| i).collect());
    }
    Ok(ConfidentExamples {
        per_class,
        agreement,
        n_sel,
    })
}

/// Set of unordered index pairs, stored canonically as sorted `(i, j)` with `i < j`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Canonicalizes, deduplicates and drops self-pairs.
    pub fn from_pairs(iter: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = iter
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i != j && self.pairs.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_subset_of(&self, other: &PairSet) -> bool {
        self.pairs.iter().all(|&(i, j)| other.contains(i, j))
    }
}

/// Membership test for "are these two dataset examples a positive pair".
pub trait PairMembership {
    fn is_positive(&self, a: usize, b: usize) -> bool;
}

impl PairMembership for PairSet {
    fn is_positive(&self, a: usize, b: usize) -> bool {
        self.contains(a, b)
    }
}

/// Every pair sharing a noisy label (supervised warm-up).
#[derive(Clone, Copy, Debug)]
pub struct SameLabel<'a>(pub &'a [usize]);

impl PairMembership for SameLabel<'_> {
    fn is_positive(&self, a: usize, b: usize) -> bool {
        a != b && self.0[a] == self.0[b]
    }
}

/// No cross-example positives (unsupervised contrastive learning).
#[derive(Clone, Copy, Debug)]
pub struct NoPairs;

impl PairMembership for NoPairs {
    fn is_positive(&self, _: usize, _: usize) -> bool {
        false
    }
}

/// All pairs of confident examples with equal noisy labels.
pub fn build_pairs_from_confident(confident: &ConfidentExamples, noisy_labels: &[usize]) -> PairSet {
    let all = confident.all();
    let mut pairs = Vec::new();
    for (a, &i) in all.iter().enumerate() {
        for &j in &all[a + 1..] {
            if noisy_labels[i] == noisy_labels[j] {
                pairs.push((i, j));
            }
        }
    }
    PairSet::from_pairs(pairs)
}

/// Pairs over the whole set sharing a noisy label whose similarity strictly
/// exceeds `gamma`, the `beta`-fractile of the similarities inside `g_prime`.
///
/// With an empty `g_prime` the threshold is `+inf` and no pair is selected.
pub fn select_confident_pairs<T: Scalar>(
    sims: &SimilarityMatrix<T>,
    noisy_labels: &[usize],
    g_prime: &PairSet,
    beta: f64,
) -> Result<(PairSet, T)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    let n = sims.len();
    if noisy_labels.len() != n {
        return Err(Error::dims(n, noisy_labels.len(), "noisy labels"));
    }
    if g_prime.is_empty() {
        log::warn!("no confident pairs to calibrate the similarity threshold; similarity-based pairs disabled");
        return Ok((PairSet::new(), T::infinity()));
    }
    let values: Vec<T> = g_prime.iter().map(|(i, j)| sims.get(i, j)).collect();
    let gamma = fractile(&values, beta);

    let mut pairs = Vec::new();
    for i in 0..n {
        let row = sims.row(i);
        for j in (i + 1)..n {
            if noisy_labels[i] == noisy_labels[j] && row[j] > gamma {
                pairs.push((i, j));
            }
        }
    }
    Ok((PairSet { pairs }, gamma))
}

pub fn union_pairs(a: &PairSet, b: &PairSet) -> PairSet {
    PairSet::from_pairs(a.iter().chain(b.iter()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub posterior_source: PosteriorSource,
}

/// Everything selected at one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState<T> {
    pub pseudo: PseudoLabelState<T>,
    pub confident: ConfidentExamples,
    pub g_prime: PairSet,
    pub g_doubleprime: PairSet,
    pub g: PairSet,
    pub gamma: T,
    pub epoch: usize,
}

impl<T: Scalar> SelectionState<T> {
    /// Per-epoch snapshot suitable for JSON dumps.
    pub fn snapshot(&self) -> SelectionSnapshot {
        SelectionSnapshot {
            epoch: self.epoch,
            n_sel: self.confident.n_sel,
            agreement: self.confident.agreement.clone(),
            confident: self.confident.per_class.clone(),
            gamma: self.gamma.as_f64(),
            g_prime: self.g_prime.clone(),
            g_doubleprime: self.g_doubleprime.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSnapshot {
    pub epoch: usize,
    pub n_sel: usize,
    pub agreement: Vec<usize>,
    pub confident: Vec<Vec<usize>>,
    pub gamma: f64,
    pub g_prime: PairSet,
    pub g_doubleprime: PairSet,
}

/// Runs pseudo-labelling, example selection and pair selection on one bank.
pub fn run_selection<T: Scalar>(
    sims: &SimilarityMatrix<T>,
    noisy_labels: &[usize],
    num_classes: usize,
    cfg: &SelectionConfig,
    epoch: usize,
) -> Result<SelectionState<T>> {
    let pseudo = aggregate_with_similarities(sims, noisy_labels, num_classes, cfg.k, cfg.posterior_source)?;
    let confident = select_confident_examples(&pseudo, noisy_labels, num_classes, cfg.alpha)?;
    let g_prime = build_pairs_from_confident(&confident, noisy_labels);
    let (g_doubleprime, gamma) = select_confident_pairs(sims, noisy_labels, &g_prime, cfg.beta)?;
    let g = union_pairs(&g_prime, &g_doubleprime);
    Ok(SelectionState {
        pseudo,
        confident,
        g_prime,
        g_doubleprime,
        g,
        gamma,
        epoch,
    })
}

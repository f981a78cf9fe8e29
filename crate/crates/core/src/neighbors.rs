//! Cosine similarity, exact top-K search over an embedding bank, and KNN
//! pseudo-labels with the clean-posterior estimate derived from them.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Scalar};

/// Unit-norm low-dimensional representations of the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank<T> {
    z: Matrix<T>,
    epoch: usize,
}

impl<T: Scalar> EmbeddingBank<T> {
    pub const NORM_TOLERANCE: f64 = 1e-6;

    pub fn new(z: Matrix<T>, epoch: usize) -> Result<Self> {
        for (i, row) in z.iter_rows().enumerate() {
            let len = dot(row, row).sqrt().as_f64();
            if (len - 1.0).abs() > Self::NORM_TOLERANCE {
                return Err(Error::invalid(format!("bank row {i} has norm {len}")));
            }
        }
        Ok(Self { z, epoch })
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.z
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.z.row(i)
    }
}

/// `a . b / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_sim<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len(), "cosine similarity"));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).max(-T::one()).min(T::one()))
}

/// Dense symmetric matrix of pairwise cosine similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T> {
    sims: Matrix<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn from_bank(bank: &EmbeddingBank<T>) -> Result<Self> {
        Self::from_rows(bank.embeddings())
    }

    pub fn from_rows(z: &Matrix<T>) -> Result<Self> {
        let n = z.rows();
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| cosine_sim(z.row(i), z.row(j))).collect::<Result<Vec<T>>>())
            .collect::<Result<_>>()?;
        Ok(Self {
            sims: Matrix::from_rows(&rows)?,
        })
    }

    pub fn len(&self) -> usize {
        self.sims.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.sims.rows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.sims.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.sims.row(i)
    }
}

/// Descending similarity, then ascending index.
fn neighbor_order<T: Scalar>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// The `k` indices `j != i` most similar to `i`, most similar first; ties go
/// to the smaller index.
pub fn topk_from_similarities<T: Scalar>(sims: &[T], i: usize, k: usize) -> Result<Vec<usize>> {
    let n = sims.len();
    if k == 0 || k + 1 > n || i >= n {
        return Err(Error::invalid(format!(
            "K = {k} out of range for query {i} among {n} points"
        )));
    }
    let mut cands: Vec<(T, usize)> = sims
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &s)| (s, j))
        .collect();
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, neighbor_order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(neighbor_order);
    Ok(cands.into_iter().map(|(_, j)| j).collect())
}

pub fn topk_neighbors<T: Scalar>(bank: &EmbeddingBank<T>, i: usize, k: usize) -> Result<Vec<usize>> {
    if i >= bank.len() {
        return Err(Error::invalid(format!("query {i} outside bank of {}", bank.len())));
    }
    let q = bank.row(i);
    let sims = (0..bank.len())
        .map(|j| cosine_sim(q, bank.row(j)))
        .collect::<Result<Vec<T>>>()?;
    topk_from_similarities(&sims, i, k)
}

/// Which labels the posterior estimate counts among a point's neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorSource {
    /// Neighbours' KNN-corrected pseudo-labels.
    #[default]
    PseudoLabels,
    /// Neighbours' raw noisy labels (the no-pseudo-label ablation).
    NoisyLabels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelState<T> {
    pub pseudo_labels: Vec<usize>,
    /// Row-stochastic estimate of the clean class posterior (n x C).
    pub posterior: Matrix<T>,
    pub k: usize,
}

pub fn aggregate_pseudo_labels<T: Scalar>(
    bank: &EmbeddingBank<T>,
    noisy_labels: &[usize],
    num_classes: usize,
    k: usize,
    source: PosteriorSource,
) -> Result<PseudoLabelState<T>> {
    let sims = SimilarityMatrix::from_bank(bank)?;
    aggregate_with_similarities(&sims, noisy_labels, num_classes, k, source)
}

/// Two passes: every pseudo-label is fixed first (majority noisy label among
/// the K neighbours, ties to the point's own label if tied, else the smallest
/// class), then the posterior counts the neighbours' labels of `source`.
pub fn aggregate_with_similarities<T: Scalar>(
    sims: &SimilarityMatrix<T>,
    noisy_labels: &[usize],
    num_classes: usize,
    k: usize,
    source: PosteriorSource,
) -> Result<PseudoLabelState<T>> {
    let n = sims.len();
    if noisy_labels.len() != n {
        return Err(Error::dims(n, noisy_labels.len(), "noisy labels"));
    }
    if let Some(&bad) = noisy_labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::LabelOutOfRange {
            row: 0,
            label: bad,
            classes: num_classes,
        });
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| topk_from_similarities(sims.row(i), i, k))
        .collect::<Result<_>>()?;

    let mut pseudo_labels = Vec::with_capacity(n);
    let mut counts = vec![0usize; num_classes];
    for (i, nbrs) in neighbors.iter().enumerate() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &j in nbrs {
            counts[noisy_labels[j]] += 1;
        }
        let best = *counts.iter().max().expect("at least two classes");
        let own = noisy_labels[i];
        let label = if counts[own] == best {
            own
        } else {
            counts.iter().position(|&c| c == best).expect("max is attained")
        };
        pseudo_labels.push(label);
    }

    let votes = match source {
        PosteriorSource::PseudoLabels => &pseudo_labels,
        PosteriorSource::NoisyLabels => noisy_labels,
    };
    let inv_k = T::one() / T::of(k as f64);
    let mut posterior = Matrix::zeros(n, num_classes);
    for (i, nbrs) in neighbors.iter().enumerate() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &j in nbrs {
            counts[votes[j]] += 1;
        }
        for (slot, &c) in posterior.row_mut(i).iter_mut().zip(&counts) {
            *slot = T::of(c as f64) * inv_k;
        }
    }

    Ok(PseudoLabelState {
        pseudo_labels: pseudo_labels.to_vec(),
        posterior,
        k,
    })
}

/// Writes `index,noisy_label,pseudo_label,q_0..q_{C-1}` with one row per
/// example; `index` is the caller's row id for that example.
pub fn write_pseudo_labels_csv<T: Scalar>(
    state: &PseudoLabelState<T>,
    indices: &[usize],
    noisy_labels: &[usize],
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let n = state.pseudo_labels.len();
    if indices.len() != n || noisy_labels.len() != n {
        return Err(Error::dims(n, indices.len().min(noisy_labels.len()), "pseudo-label dump"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string(), "noisy_label".into(), "pseudo_label".into()];
    header.extend((0..state.posterior.cols()).map(|c| format!("q_{c}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![indices[i].to_string(), noisy_labels[i].to_string(), state.pseudo_labels[i].to_string()];
        rec.extend(state.posterior.row(i).iter().map(|q| q.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

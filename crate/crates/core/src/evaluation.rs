//! Representation and selection quality metrics, and 2-D projection dumps.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::cosine_sim;
use crate::scalar::Scalar;
use crate::selection::{ConfidentExamples, PairSet};

/// Default neighbour count of the weighted KNN evaluation.
pub const DEFAULT_K_EVAL: usize = 200;
/// Default temperature of the KNN vote weights `exp(sim / tau)`.
pub const DEFAULT_TAU_KNN: f64 = 0.1;

/// Weighted KNN predictions: each query votes over its `k` most similar
/// reference points with weight `exp(cos / tau_knn)`; ties go to the smaller class.
pub fn weighted_knn_predict<T: Scalar>(
    reference: &Matrix<T>,
    reference_labels: &[usize],
    queries: &Matrix<T>,
    num_classes: usize,
    k: usize,
    tau_knn: f64,
) -> Result<Vec<usize>> {
    let n = reference.rows();
    if reference_labels.len() != n {
        return Err(Error::dims(n, reference_labels.len(), "reference labels"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("K_eval = {k} out of range for {n} reference points")));
    }
    if tau_knn.is_nan() || tau_knn <= 0.0 {
        return Err(Error::invalid(format!("KNN temperature must be positive, got {tau_knn}")));
    }
    let mut predictions = Vec::with_capacity(queries.rows());
    let mut votes = vec![0.0f64; num_classes];
    for q in queries.iter_rows() {
        let mut sims: Vec<(f64, usize)> = (0..n)
            .map(|j| cosine_sim(q, reference.row(j)).map(|s| (s.as_f64(), j)))
            .collect::<Result<_>>()?;
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
        };
        if k < n {
            sims.select_nth_unstable_by(k - 1, order);
            sims.truncate(k);
        }
        sims.sort_unstable_by(order);
        votes.iter_mut().for_each(|v| *v = 0.0);
        for (s, j) in sims {
            votes[reference_labels[j]] += (s / tau_knn).exp();
        }
        let mut best = 0;
        for c in 1..num_classes {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        predictions.push(best);
    }
    Ok(predictions)
}

/// Weighted KNN accuracy (percent) of `test` against `train`.
pub fn weighted_knn_eval<T: Scalar>(
    train: &Matrix<T>,
    train_labels: &[usize],
    test: &Matrix<T>,
    test_labels: &[usize],
    num_classes: usize,
    k: usize,
    tau_knn: f64,
) -> Result<f64> {
    if test.rows() == 0 {
        return Err(Error::invalid("weighted KNN evaluation needs a non-empty test set"));
    }
    let pred = weighted_knn_predict(train, train_labels, test, num_classes, k, tau_knn)?;
    Ok(accuracy(&pred, test_labels))
}

/// Percentage of matching entries; 0 for empty input.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / pred.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    /// Percent correct; 100 when `count == 0`.
    pub percent: f64,
    pub count: usize,
}

impl Precision {
    pub fn is_defined(&self) -> bool {
        self.count > 0
    }
}

fn ratio(hits: usize, count: usize) -> Precision {
    Precision {
        percent: if count == 0 { 100.0 } else { 100.0 * hits as f64 / count as f64 },
        count,
    }
}

/// Fraction of selected examples whose noisy label is the true label.
pub fn example_precision(confident: &ConfidentExamples, true_labels: &[usize], noisy_labels: &[usize]) -> Precision {
    let all = confident.all();
    let hits = all.iter().filter(|&&i| true_labels[i] == noisy_labels[i]).count();
    ratio(hits, all.len())
}

/// Fraction of selected pairs whose endpoints share a true class, whatever
/// their noisy labels.
pub fn pair_precision(pairs: &PairSet, true_labels: &[usize]) -> Precision {
    let hits = pairs.iter().filter(|&(i, j)| true_labels[i] == true_labels[j]).count();
    ratio(hits, pairs.len())
}

pub fn selection_precision(
    confident: &ConfidentExamples,
    pairs: &PairSet,
    true_labels: &[usize],
    noisy_labels: &[usize],
) -> (Precision, Precision) {
    (
        example_precision(confident, true_labels, noisy_labels),
        pair_precision(pairs, true_labels),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub knn_accuracy: f64,
    pub test_accuracy: f64,
    pub precision_examples: f64,
    pub precision_pairs: f64,
    pub n_confident: usize,
    pub n_pairs: usize,
}

/// Principal-axis projection onto two components.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection2d {
    pub coords: Vec<[f64; 2]>,
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// PCA onto the two leading axes. Each axis is signed so its largest-magnitude
/// entry is positive.
pub fn pca_2d<T: Scalar>(data: &Matrix<T>) -> Result<Projection2d> {
    let (n, d) = (data.rows(), data.cols());
    if n < 3 {
        return Err(Error::invalid(format!("projection needs at least 3 points, got {n}")));
    }
    if d < 2 {
        return Err(Error::invalid("projection needs at least 2 dimensions"));
    }
    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data.get(i, j).as_f64() - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let axis = |k: usize| -> Vec<f64> {
        let col: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            col.iter().map(|v| -v).collect()
        } else {
            col
        }
    };
    let components = [axis(0), axis(1)];
    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut c = [0.0; 2];
            for (slot, w) in c.iter_mut().zip(&components) {
                *slot = row.iter().zip(w).map(|(a, b)| a * b).sum();
            }
            c
        })
        .collect();
    Ok(Projection2d {
        coords,
        mean,
        components,
        eigenvalues: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
    })
}

/// Writes `x,y,true_label,noisy_label,in_t` rows for every embedding.
pub fn dump_projection_2d<T: Scalar>(
    embeddings: &Matrix<T>,
    true_labels: &[usize],
    noisy_labels: &[usize],
    in_confident: &[bool],
    path: impl AsRef<Path>,
) -> Result<Projection2d> {
    let n = embeddings.rows();
    for (what, len) in [
        ("true labels", true_labels.len()),
        ("noisy labels", noisy_labels.len()),
        ("confident flags", in_confident.len()),
    ] {
        if len != n {
            return Err(Error::dims(n, len, what));
        }
    }
    let proj = pca_2d(embeddings)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "x,y,true_label,noisy_label,in_t")?;
    for i in 0..n {
        let [x, y] = proj.coords[i];
        writeln!(
            out,
            "{x},{y},{},{},{}",
            true_labels[i],
            noisy_labels[i],
            u8::from(in_confident[i])
        )?;
    }
    out.flush()?;
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicated_points_are_recovered() {
        let train = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.1, 1.0], vec![-1.0, 0.2]]).unwrap();
        let labels = [0, 1, 2];
        let acc = weighted_knn_eval(&train, &labels, &train, &labels, 3, 1, 0.1).unwrap();
        assert_eq!(acc, 100.0);
    }

    #[test]
    fn hand_summed_vote() {
        // five train points on the circle, two queries, K = 3
        let angle = |a: f64| vec![a.cos(), a.sin()];
        let angles = [0.0, 0.2, 0.5, 1.5, 3.0];
        let labels = [0, 1, 1, 0, 1];
        let train = Matrix::from_rows(&angles.iter().map(|&a| angle(a)).collect::<Vec<_>>()).unwrap();
        let test = Matrix::from_rows(&[angle(0.05), angle(1.2)]).unwrap();

        // query 0: neighbours 0 (cos .05), 1 (cos .15), 2 (cos .45)
        let w = |d: f64| (d.cos() / 0.1).exp();
        let class0 = w(0.05);
        let class1 = w(0.15) + w(0.45);
        assert!(class1 > class0);
        // query 1: neighbours 3 (cos .3), 2 (cos .7), 1 (cos 1.0)
        let class0 = w(0.3);
        let class1 = w(0.7) + w(1.0);
        assert!(class0 > class1);

        let pred = weighted_knn_predict(&train, &labels, &test, 2, 3, 0.1).unwrap();
        assert_eq!(pred, vec![1, 0]);
        let acc = weighted_knn_eval(&train, &labels, &test, &[1, 1], 2, 3, 0.1).unwrap();
        assert_eq!(acc, 50.0);
    }

    #[test]
    fn knn_rejects_empty_test() {
        let train = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let test = Matrix::<f64>::zeros(0, 2);
        assert!(weighted_knn_eval(&train, &[0], &test, &[], 2, 1, 0.1).is_err());
    }

    #[test]
    fn precision_examples() {
        let confident = ConfidentExamples {
            per_class: vec![vec![0, 1], vec![2]],
            agreement: vec![2, 1],
            n_sel: 2,
        };
        let truth = [0, 0, 0, 1, 1, 1];
        let noisy = [0, 0, 1, 1, 0, 1];
        let p = example_precision(&confident, &truth, &noisy);
        assert!((p.percent - 200.0 / 3.0).abs() < 1e-12);

        // (3, 5) and (3, 4) share a true class, (0, 3) does not
        let pairs = PairSet::from_pairs([(3, 5), (4, 3), (0, 3)]);
        let pp = pair_precision(&pairs, &truth);
        assert!((pp.percent - 200.0 / 3.0).abs() < 1e-12);

        let empty = pair_precision(&PairSet::new(), &truth);
        assert_eq!((empty.percent, empty.count), (100.0, 0));
    }

    #[test]
    fn wrong_labels_with_shared_truth_count_as_correct() {
        // examples 1 and 4 are both mislabelled as class 2 but truly class 0
        let truth = [0, 0, 1, 1, 0, 2];
        let noisy = [0, 2, 1, 1, 2, 2];
        let pairs = PairSet::from_pairs([(1, 4)]);
        assert_ne!(noisy[1], truth[1]);
        assert_ne!(noisy[4], truth[4]);
        assert_eq!(pair_precision(&pairs, &truth).percent, 100.0);
        let pairs = PairSet::from_pairs([(1, 5)]);
        assert_eq!(pair_precision(&pairs, &truth).percent, 0.0);
    }

    #[test]
    fn projection_rows_and_axis_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proj.csv");
        let z = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        dump_projection_2d(&z, &[0, 1, 2], &[0, 1, 1], &[true, false, true], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);

        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.3;
                vec![3.0 * t.sin(), 0.5 * t.cos(), 0.1 * (2.0 * t).sin()]
            })
            .collect();
        let proj = pca_2d(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let var = |k: usize| proj.coords.iter().map(|c| c[k] * c[k]).sum::<f64>();
        assert!(var(0) >= var(1));
        assert!(pca_2d(&Matrix::from_rows(&rows[..2]).unwrap()).is_err());
    }
}

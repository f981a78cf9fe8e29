mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use selcl::evaluation::{dump_projection_2d, pca_2d};
use selcl::neighbors::SimilarityMatrix;
use selcl::selection::{select_confident_pairs, PairSet};
use selcl::Matrix;

use common::{jacobi_eigen, nearest_rank};

fn anisotropic_cloud(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..d)
                .map(|j| rng.sample::<f64, _>(StandardNormal) * (d - j) as f64 + j as f64)
                .collect()
        })
        .collect()
}

/// Squared reconstruction error of the centred data from its projection onto two axes.
fn reconstruction_error(rows: &[Vec<f64>], mean: &[f64], axes: [&[f64]; 2]) -> f64 {
    rows.iter()
        .map(|r| {
            let c: Vec<f64> = r.iter().zip(mean).map(|(x, m)| x - m).collect();
            let coef: Vec<f64> = axes.iter().map(|a| a.iter().zip(&c).map(|(u, v)| u * v).sum()).collect();
            c.iter()
                .enumerate()
                .map(|(j, v)| {
                    let back = coef[0] * axes[0][j] + coef[1] * axes[1][j];
                    (v - back) * (v - back)
                })
                .sum::<f64>()
        })
        .sum()
}

#[test]
fn projection_matches_jacobi_reconstruction() {
    for seed in 0..5 {
        let d = 3 + seed as usize;
        let rows = anisotropic_cloud(seed, 50, d);
        let proj = pca_2d(&Matrix::from_rows(&rows).unwrap()).unwrap();

        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0))
                    .collect()
            })
            .collect();
        let (values, vectors) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let column = |k: usize| -> Vec<f64> { vectors.iter().map(|row| row[order[k]]).collect() };
        let (e0, e1) = (column(0), column(1));

        let ours = reconstruction_error(&rows, &proj.mean, [&proj.components[0], &proj.components[1]]);
        let oracle = reconstruction_error(&rows, &mean, [&e0, &e1]);
        assert!((ours - oracle).abs() <= 1e-8 * oracle.max(1.0), "seed {seed}: {ours} vs {oracle}");
        for (k, lam) in proj.eigenvalues.iter().enumerate() {
            assert!((lam - values[order[k]]).abs() <= 1e-8 * values[order[0]]);
        }
        let var = |k: usize| proj.coords.iter().map(|c| c[k] * c[k]).sum::<f64>();
        assert!(var(0) >= var(1));
    }
}

#[test]
fn three_point_dump_has_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
    dump_projection_2d(&z, &[0, 1, 1], &[0, 1, 0], &[true, true, false], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,true_label,noisy_label,in_t");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].ends_with(",1,0,0"));
}

/// Six points on the unit circle, two classes, G' given by hand: the
/// similarity pairs must equal a literal scan of every unordered pair.
#[test]
fn similarity_pairs_match_exhaustive_scan() {
    let angles = [0.0f64, 0.3, 0.5, 2.0, 2.2, 3.0];
    let rows: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
    let noisy = [0, 0, 0, 1, 1, 0];
    let sims = SimilarityMatrix::from_rows(&Matrix::from_rows(&rows).unwrap()).unwrap();
    let g_prime = PairSet::from_pairs([(0, 1), (3, 4), (1, 2)]);
    for beta in [0.0, 0.25, 0.5, 1.0] {
        let (g2, gamma) = select_confident_pairs(&sims, &noisy, &g_prime, beta).unwrap();

        let cos = |i: usize, j: usize| rows[i][0] * rows[j][0] + rows[i][1] * rows[j][1];
        let in_gp: Vec<f64> = g_prime.iter().map(|(i, j)| cos(i, j)).collect();
        let expected_gamma = nearest_rank(&in_gp, beta);
        assert!((gamma - expected_gamma).abs() < 1e-12);
        let mut expected = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                if i < j && noisy[i] == noisy[j] && cos(i, j) > expected_gamma {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(g2.as_slice(), &expected[..], "beta {beta}");
    }
}

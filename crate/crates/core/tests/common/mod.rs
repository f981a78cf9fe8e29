//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use selcl::model::{ForwardCache, Network, OutputGrads};
use selcl::Matrix;

/// Nearest-rank fractile written out directly: sort ascending, take the
/// `ceil(f * m)`-th smallest, with `f = 0` giving the smallest.
pub fn nearest_rank<T: Copy + PartialOrd>(values: &[T], f: f64) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    let mut rank = 1;
    // smallest rank r with r >= f * m, found by counting instead of ceil()
    while (rank as f64) < f * m as f64 - 1e-9 {
        rank += 1;
    }
    v[rank.min(m) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    pub pseudo: Vec<usize>,
    pub per_class: Vec<BTreeSet<usize>>,
    pub g_prime: BTreeSet<(usize, usize)>,
    pub gamma: f64,
    pub g_doubleprime: BTreeSet<(usize, usize)>,
    pub g: BTreeSet<(usize, usize)>,
}

/// Exhaustive selection from a similarity matrix: neighbour lists by full
/// sort, pseudo-label majority, neighbour pseudo-label counts, per-class
/// budget from the agreement fractile, and pair enumeration.
pub fn oracle_selection(
    sims: &[Vec<f64>],
    noisy: &[usize],
    classes: usize,
    alpha: f64,
    beta: f64,
    k: usize,
) -> OracleSelection {
    let n = noisy.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| sims[i][b].partial_cmp(&sims[i][a]).unwrap().then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect();
    let mut pseudo = vec![0; n];
    for i in 0..n {
        let mut votes = vec![0usize; classes];
        for &j in &neighbours[i] {
            votes[noisy[j]] += 1;
        }
        let top = *votes.iter().max().unwrap();
        let tied: Vec<usize> = (0..classes).filter(|&c| votes[c] == top).collect();
        pseudo[i] = if tied.contains(&noisy[i]) { noisy[i] } else { tied[0] };
    }
    // count of neighbours whose pseudo-label equals the example's noisy label
    let support: Vec<usize> = (0..n)
        .map(|i| neighbours[i].iter().filter(|&&j| pseudo[j] == noisy[i]).count())
        .collect();
    let agreement: Vec<usize> = (0..classes)
        .map(|c| (0..n).filter(|&i| noisy[i] == c && pseudo[i] == c).count())
        .collect();
    let n_sel = nearest_rank(&agreement, alpha);
    let per_class: Vec<BTreeSet<usize>> = (0..classes)
        .map(|c| {
            let mut members: Vec<usize> = (0..n).filter(|&i| noisy[i] == c).collect();
            // smaller loss <=> larger support; equal support keeps index order
            members.sort_by(|&a, &b| support[b].cmp(&support[a]).then(a.cmp(&b)));
            members.into_iter().take(n_sel).collect()
        })
        .collect();
    let chosen: BTreeSet<usize> = per_class.iter().flatten().copied().collect();
    let mut g_prime = BTreeSet::new();
    for &i in &chosen {
        for &j in &chosen {
            if i < j && noisy[i] == noisy[j] {
                g_prime.insert((i, j));
            }
        }
    }
    let gamma = if g_prime.is_empty() {
        f64::INFINITY
    } else {
        let v: Vec<f64> = g_prime.iter().map(|&(i, j)| sims[i][j]).collect();
        nearest_rank(&v, beta)
    };
    let mut g_doubleprime = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if i < j && noisy[i] == noisy[j] && sims[i][j] > gamma {
                g_doubleprime.insert((i, j));
            }
        }
    }
    let g = g_prime.union(&g_doubleprime).copied().collect();
    OracleSelection {
        pseudo,
        per_class,
        g_prime,
        gamma,
        g_doubleprime,
        g,
    }
}

/// NT-Xent from its textbook form: for anchor `i` with twin `t`,
/// `-ln(exp(z_i.z_t / tau) / sum_{k != i} exp(z_i.z_k / tau))`, summed.
pub fn nt_xent_oracle(z: &[Vec<f64>], origin: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..n {
        let t = (0..n).find(|&j| j != i && origin[j] == origin[i]).unwrap();
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (dot(&z[i], &z[k]) / tau).exp()).sum();
        total -= ((dot(&z[i], &z[t]) / tau).exp() / denom).ln();
    }
    total
}

/// Cyclic Jacobi eigen-solver for small symmetric matrices. Returns
/// eigenvalues and eigenvectors (as columns of `v`), unsorted.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Loss evaluated on a forward pass: its value and the upstream gradients.
pub struct Upstream {
    pub value: f64,
    pub dz: Option<Matrix<f64>>,
    pub dp: Option<Matrix<f64>>,
}

/// Largest elementwise relative error between the analytic parameter
/// gradient and central differences with step `h`, where the error of each
/// coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check(
    net: &Network<f64>,
    x: &Matrix<f64>,
    loss: impl Fn(&ForwardCache<f64>) -> Upstream,
    h: f64,
    floor: f64,
) -> f64 {
    let cache = net.forward(x).unwrap();
    let up = loss(&cache);
    let analytic = net
        .backward(
            &cache,
            OutputGrads {
                z: up.dz.as_ref(),
                p: up.dp.as_ref(),
                v: None,
            },
        )
        .unwrap()
        .flat();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.params_mut().scalar_mut(k);
        *probe.params_mut().scalar_mut(k) = orig + h;
        let plus = loss(&probe.forward(x).unwrap()).value;
        *probe.params_mut().scalar_mut(k) = orig - h;
        let minus = loss(&probe.forward(x).unwrap()).value;
        *probe.params_mut().scalar_mut(k) = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Adds N(0, sigma^2) noise to every parameter. Freshly initialized networks
/// have all-zero biases, which puts rows whose first layer is entirely
/// inactive exactly on a ReLU kink; the noise moves the check to a generic
/// point.
pub fn jitter_params(net: &mut Network<f64>, rng: &mut impl rand::Rng, sigma: f64) {
    for t in net.params_mut().tensors_mut() {
        for w in &mut t.data {
            *w += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
}

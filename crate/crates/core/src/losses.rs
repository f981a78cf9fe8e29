//! Training objectives with their gradients with respect to the network outputs.
//!
//! A batch holds `2N` views, two per dataset example. Views are identified by
//! the dataset index they came from (`origin`); two views are a positive pair
//! when they share an origin or when their origins form a selected pair.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Scalar};
use crate::selection::{NoPairs, PairMembership};

/// Probability floor inside the classification log.
pub const CLS_LOG_EPS: f64 = 1e-12;
/// Clamp applied to pair similarities before the binary cross-entropy.
pub const SIM_CLAMP_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Matrix<T>,
}

/// Embeddings of a multi-view batch and the dataset index of each view.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchView<T> {
    pub z: Matrix<T>,
    pub origin: Vec<usize>,
}

impl<T: Scalar> BatchView<T> {
    /// Every origin must contribute exactly two views.
    pub fn new(z: Matrix<T>, origin: Vec<usize>) -> Result<Self> {
        if z.rows() != origin.len() {
            return Err(Error::dims(z.rows(), origin.len(), "batch origins"));
        }
        let mut sorted = origin.clone();
        sorted.sort_unstable();
        let paired = sorted.chunks(2).all(|c| c.len() == 2 && c[0] == c[1])
            && sorted.windows(3).all(|w| !(w[0] == w[1] && w[1] == w[2]));
        if !paired {
            return Err(Error::invalid("every example must contribute exactly two views"));
        }
        Ok(Self { z, origin })
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }
}

/// A batch of mixed views `lambda * x_a + (1 - lambda) * x_b`; `origin` holds
/// each view's `a` and `partner` its `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch<T> {
    pub view: BatchView<T>,
    pub partner: Vec<usize>,
    pub lambda: T,
}

impl<T: Scalar> MixedBatch<T> {
    pub fn new(view: BatchView<T>, partner: Vec<usize>, lambda: T) -> Result<Self> {
        if partner.len() != view.len() {
            return Err(Error::dims(view.len(), partner.len(), "mixup partners"));
        }
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::invalid(format!("mixup lambda {lambda} outside [0, 1]")));
        }
        Ok(Self { view, partner, lambda })
    }

    /// Identity used for positive/negative sampling: `a` when `lambda >= 0.5`.
    pub fn dominant(&self, g: usize) -> usize {
        if self.lambda >= T::of(0.5) {
            self.view.origin[g]
        } else {
            self.partner[g]
        }
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// Pairwise dot products of the batch embeddings.
fn gram<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let n = z.rows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(z.row(i), z.row(j));
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// One anchor of the contrastive loss
///
/// `-1/|P| sum_{g in P} log( exp(s_ig) / sum_{a != i} exp(s_ia) )`, `s = z.z / tau`.
///
/// Adds `weight * dL/dz` into `grad` and returns the unweighted value.
fn anchor_term<T: Scalar>(
    z: &Matrix<T>,
    gram: &Matrix<T>,
    i: usize,
    positives: &[usize],
    tau: T,
    weight: T,
    grad: &mut Matrix<T>,
) -> T {
    let n = z.rows();
    let inv_tau = T::one() / tau;
    let mut max = T::neg_infinity();
    for a in (0..n).filter(|&a| a != i) {
        max = max.max(gram.get(i, a) * inv_tau);
    }
    let mut denom = T::zero();
    for a in (0..n).filter(|&a| a != i) {
        denom += (gram.get(i, a) * inv_tau - max).exp();
    }
    let lse = max + denom.ln();

    let inv_pos = T::one() / T::of(positives.len() as f64);
    let mut pos_sum = T::zero();
    for &g in positives {
        pos_sum += gram.get(i, g) * inv_tau;
    }
    let value = lse - pos_sum * inv_pos;

    // dL/dz_a = (p_ia - [a in P]/|P|) z_i / tau,  dL/dz_i = sum_a (p_ia - [a in P]/|P|) z_a / tau
    let mut coeff = vec![T::zero(); n];
    for a in (0..n).filter(|&a| a != i) {
        coeff[a] = (gram.get(i, a) * inv_tau - lse).exp();
    }
    for &g in positives {
        coeff[g] -= inv_pos;
    }
    let scale = weight * inv_tau;
    let zi = z.row(i).to_vec();
    for (a, &c) in coeff.iter().enumerate() {
        if a == i || c == T::zero() {
            continue;
        }
        let f = scale * c;
        let za = z.row(a).to_vec();
        for (g, &v) in grad.row_mut(a).iter_mut().zip(&zi) {
            *g += f * v;
        }
        for (g, &v) in grad.row_mut(i).iter_mut().zip(&za) {
            *g += f * v;
        }
    }
    value
}

/// Views `g != i` whose identity matches `anchor_id` or forms a selected pair with it.
fn positives_for(
    n: usize,
    i: usize,
    anchor_id: usize,
    identity: impl Fn(usize) -> usize,
    pairs: &impl PairMembership,
) -> Vec<usize> {
    (0..n)
        .filter(|&g| g != i)
        .filter(|&g| {
            let id = identity(g);
            id == anchor_id || pairs.is_positive(anchor_id, id)
        })
        .collect()
}

/// Supervised contrastive loss over selected pairs, summed over anchors.
///
/// The augmented twin is always a positive, so an anchor without selected
/// partners contributes the unsupervised (NT-Xent) term.
pub fn sup_contrastive<T: Scalar>(
    batch: &BatchView<T>,
    pairs: &impl PairMembership,
    tau: T,
) -> Result<LossGrad<T>> {
    check_tau(tau)?;
    let n = batch.len();
    let g = gram(&batch.z);
    let mut grad = Matrix::zeros(n, batch.z.cols());
    let mut value = T::zero();
    for i in 0..n {
        let pos = positives_for(n, i, batch.origin[i], |v| batch.origin[v], pairs);
        if pos.is_empty() {
            return Err(Error::invalid(format!("anchor {i} has no positive view")));
        }
        value += anchor_term(&batch.z, &g, i, &pos, tau, T::one(), &mut grad);
    }
    Ok(LossGrad { value, grad })
}

/// NT-Xent: the twin view is the only positive.
pub fn unsup_contrastive<T: Scalar>(batch: &BatchView<T>, tau: T) -> Result<LossGrad<T>> {
    sup_contrastive(batch, &NoPairs, tau)
}

/// Mixup contrastive loss `sum_i lambda L_a(z_i) + (1 - lambda) L_b(z_i)`.
///
/// The anchor's `a` and `b` identities each define a positive set; every
/// other view is identified by its dominant identity.
pub fn mixup_contrastive<T: Scalar>(
    batch: &MixedBatch<T>,
    pairs: &impl PairMembership,
    tau: T,
) -> Result<LossGrad<T>> {
    check_tau(tau)?;
    let view = &batch.view;
    let n = view.len();
    let g = gram(&view.z);
    let mut grad = Matrix::zeros(n, view.z.cols());
    let mut value = T::zero();
    let lambda = batch.lambda;
    for i in 0..n {
        let mut term = T::zero();
        for (id, weight) in [(view.origin[i], lambda), (batch.partner[i], T::one() - lambda)] {
            if weight == T::zero() {
                continue;
            }
            let pos = positives_for(n, i, id, |v| batch.dominant(v), pairs);
            if pos.is_empty() {
                continue;
            }
            term += weight * anchor_term(&view.z, &g, i, &pos, tau, weight, &mut grad);
        }
        value += term;
    }
    Ok(LossGrad { value, grad })
}

/// Mean cross-entropy `-ln(p[row][label] + eps)` over `(row, label)` targets.
pub fn classification_loss<T: Scalar>(p: &Matrix<T>, targets: &[(usize, usize)]) -> LossGrad<T> {
    let mut grad = Matrix::zeros(p.rows(), p.cols());
    if targets.is_empty() {
        return LossGrad { value: T::zero(), grad };
    }
    let eps = T::of(CLS_LOG_EPS);
    let inv = T::one() / T::of(targets.len() as f64);
    let mut value = T::zero();
    for &(row, label) in targets {
        let q = p.get(row, label) + eps;
        value -= q.ln();
        let g = grad.get(row, label);
        grad.set(row, label, g - inv / q);
    }
    LossGrad {
        value: value * inv,
        grad,
    }
}

/// Mean binary cross-entropy between `p_i . p_j` and the pair label, over all
/// ordered pairs `i != j` of the batch. Same-origin views are positives.
pub fn similarity_loss<T: Scalar>(
    p: &Matrix<T>,
    origin: &[usize],
    pairs: &impl PairMembership,
) -> Result<LossGrad<T>> {
    let n = p.rows();
    if origin.len() != n {
        return Err(Error::dims(n, origin.len(), "similarity loss origins"));
    }
    let mut grad = Matrix::zeros(n, p.cols());
    if n < 2 {
        return Ok(LossGrad { value: T::zero(), grad });
    }
    let eps = T::of(SIM_CLAMP_EPS);
    let inv = T::one() / T::of((n * (n - 1)) as f64);
    let mut value = T::zero();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let target = origin[i] == origin[j] || pairs.is_positive(origin[i], origin[j]);
            let s = dot(p.row(i), p.row(j));
            let c = s.max(eps).min(T::one() - eps);
            let (loss, dloss) = if target {
                (-c.ln(), -T::one() / c)
            } else {
                (-(T::one() - c).ln(), T::one() / (T::one() - c))
            };
            value += loss;
            if s <= eps || s >= T::one() - eps {
                continue;
            }
            let f = dloss * inv;
            let pj = p.row(j).to_vec();
            let pi = p.row(i).to_vec();
            for (g, &v) in grad.row_mut(i).iter_mut().zip(&pj) {
                *g += f * v;
            }
            for (g, &v) in grad.row_mut(j).iter_mut().zip(&pi) {
                *g += f * v;
            }
        }
    }
    Ok(LossGrad {
        value: value * inv,
        grad,
    })
}

/// `mix + lambda_c * cls + lambda_s * sim`.
pub fn total_loss<T: Scalar>(mix: T, cls: T, sim: T, lambda_c: T, lambda_s: T) -> T {
    mix + lambda_c * cls + lambda_s * sim
}

/// Loss components of one step (or their epoch means).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle<T> {
    pub mix: T,
    pub cls: T,
    pub sim: T,
    pub all: T,
}

impl<T: Scalar> LossBundle<T> {
    pub fn new(mix: T, cls: T, sim: T, lambda_c: T, lambda_s: T) -> Self {
        Self {
            mix,
            cls,
            sim,
            all: total_loss(mix, cls, sim, lambda_c, lambda_s),
        }
    }
}

//! Feed-forward network with an encoder, a projection head and a classifier head.
//!
//! ```text
//! x --enc1--relu--enc2--relu--> v --proj--> u --l2 norm--> z
//!                               v --cls---> logits --softmax--> p
//! ```
//!
//! Gradients are derived by hand; [`Network::backward`] accepts upstream
//! gradients on `z`, `p` and `v` and returns gradients for every tensor.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::{LrSchedule, SgdMomentum};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
    pub projection: ProjectionKind,
}

impl Architecture {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 64,
            proj_dim: 32,
            num_classes,
            projection: ProjectionKind::Linear,
        }
    }

    /// (name, shape) of every tensor in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, h, p, c) = (self.input_dim, self.hidden_dim, self.proj_dim, self.num_classes);
        let mut layout = vec![
            ("enc1.weight", vec![h, d]),
            ("enc1.bias", vec![h]),
            ("enc2.weight", vec![h, h]),
            ("enc2.bias", vec![h]),
        ];
        match self.projection {
            ProjectionKind::Linear => {
                layout.push(("proj.weight", vec![p, h]));
                layout.push(("proj.bias", vec![p]));
            }
            ProjectionKind::Mlp => {
                layout.push(("proj1.weight", vec![h, h]));
                layout.push(("proj1.bias", vec![h]));
                layout.push(("proj2.weight", vec![p, h]));
                layout.push(("proj2.bias", vec![p]));
            }
        }
        layout.push(("cls.weight", vec![c, h]));
        layout.push(("cls.bias", vec![c]));
        layout
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.proj_dim == 0 || self.num_classes < 2 {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    fn classifier_index(&self) -> usize {
        match self.projection {
            ProjectionKind::Linear => 6,
            ProjectionKind::Mlp => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Projection,
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: &str, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.to_string(),
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn group(&self) -> ParamGroup {
        if self.name.starts_with("enc") {
            ParamGroup::Encoder
        } else if self.name.starts_with("proj") {
            ParamGroup::Projection
        } else {
            ParamGroup::Classifier
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Ordered collection of named tensors; gradients and momentum buffers share
/// the layout of the parameters they mirror.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            tensors: arch
                .layout()
                .into_iter()
                .map(|(name, shape)| Tensor::zeros(name, shape))
                .collect(),
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, t.shape.clone()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Flat view over every scalar in storage order (used by gradient checks).
    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Mutable access to the `k`-th scalar in storage order.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut T {
        for t in &mut self.tensors {
            if k < t.data.len() {
                return &mut t.data[k];
            }
            k -= t.data.len();
        }
        panic!("scalar index out of range");
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
            Some(t) => Err(Error::NonFinite(t.name.clone())),
            None => Ok(()),
        }
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// Intermediate values of a batch forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub input: Matrix<T>,
    pub enc1_pre: Matrix<T>,
    pub enc1: Matrix<T>,
    pub enc2_pre: Matrix<T>,
    /// High-dimensional representation (output of the encoder).
    pub v: Matrix<T>,
    /// Hidden pre-activation and activation of an MLP projection head.
    pub proj_hidden: Option<(Matrix<T>, Matrix<T>)>,
    /// Projection output before normalization.
    pub u: Matrix<T>,
    pub u_norm: Vec<T>,
    /// Unit-norm low-dimensional representation (the first axis when `u = 0`).
    pub z: Matrix<T>,
    pub logits: Matrix<T>,
    /// Softmax class probabilities.
    pub p: Matrix<T>,
}

/// Upstream gradients of a scalar loss with respect to the network outputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct OutputGrads<'a, T> {
    pub z: Option<&'a Matrix<T>>,
    pub p: Option<&'a Matrix<T>>,
    pub v: Option<&'a Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    params: ParamSet<T>,
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled Gaussian weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for t in net.params.tensors_mut() {
            init_tensor(t, rng);
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: ParamSet::zeros(&arch),
        })
    }

    pub fn from_params(arch: Architecture, params: ParamSet<T>) -> Result<Self> {
        arch.validate()?;
        if !params.same_layout(&ParamSet::zeros(&arch)) {
            return Err(Error::invalid("parameter layout does not match architecture"));
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Replaces the classifier head with freshly initialized weights.
    pub fn reset_classifier<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.arch.classifier_index();
        for t in &mut self.params.tensors_mut()[k..k + 2] {
            init_tensor(t, rng);
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<ForwardCache<T>> {
        if x.cols() != self.arch.input_dim {
            return Err(Error::dims(self.arch.input_dim, x.cols(), "network input"));
        }
        let t = self.params.tensors();
        let enc1_pre = affine(x, &t[0], &t[1]);
        let enc1 = relu(&enc1_pre);
        let enc2_pre = affine(&enc1, &t[2], &t[3]);
        let v = relu(&enc2_pre);

        let (proj_hidden, u) = match self.arch.projection {
            ProjectionKind::Linear => (None, affine(&v, &t[4], &t[5])),
            ProjectionKind::Mlp => {
                let pre = affine(&v, &t[4], &t[5]);
                let act = relu(&pre);
                let u = affine(&act, &t[6], &t[7]);
                (Some((pre, act)), u)
            }
        };

        let mut z = u.clone();
        let mut u_norm = Vec::with_capacity(u.rows());
        for i in 0..u.rows() {
            let row = z.row_mut(i);
            let len = dot(row, row).sqrt();
            u_norm.push(len);
            if len > T::zero() {
                for value in row.iter_mut() {
                    *value /= len;
                }
            } else {
                // a vanishing projection has no direction; pin it to the first axis
                row[0] = T::one();
            }
        }

        let k = self.arch.classifier_index();
        let logits = affine(&v, &t[k], &t[k + 1]);
        let p = softmax_rows(&logits);

        Ok(ForwardCache {
            input: x.clone(),
            enc1_pre,
            enc1,
            enc2_pre,
            v,
            proj_hidden,
            u,
            u_norm,
            z,
            logits,
            p,
        })
    }

    /// Gradients of the loss whose partials w.r.t. `z`, `p` and `v` are given.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: OutputGrads<'_, T>) -> Result<ParamSet<T>> {
        let batch = cache.input.rows();
        let arch = &self.arch;
        for (what, m, cols) in [
            ("z gradient", upstream.z, arch.proj_dim),
            ("p gradient", upstream.p, arch.num_classes),
            ("v gradient", upstream.v, arch.hidden_dim),
        ] {
            if let Some(m) = m {
                if m.rows() != batch || m.cols() != cols {
                    return Err(Error::dims(batch * cols, m.rows() * m.cols(), what));
                }
            }
        }

        let t = self.params.tensors();
        let mut grads = ParamSet::zeros_like(&self.params);
        let mut dv = match upstream.v {
            Some(g) => g.clone(),
            None => Matrix::zeros(batch, arch.hidden_dim),
        };

        if let Some(dp) = upstream.p {
            // softmax Jacobian: dl_j = p_j (g_j - <g, p>)
            let mut dlogits = Matrix::zeros(batch, arch.num_classes);
            for i in 0..batch {
                let p = cache.p.row(i);
                let g = dp.row(i);
                let inner = dot(g, p);
                for (out, (&pj, &gj)) in dlogits.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
                    *out = pj * (gj - inner);
                }
            }
            let k = arch.classifier_index();
            affine_backward(&cache.v, &t[k], &dlogits, &mut grads.tensors[k..k + 2], Some(&mut dv));
        }

        if let Some(dz) = upstream.z {
            // normalization Jacobian: du = (g - z <z, g>) / |u|
            let mut du = Matrix::zeros(batch, arch.proj_dim);
            for i in 0..batch {
                let z = cache.z.row(i);
                let g = dz.row(i);
                let len = cache.u_norm[i];
                if len <= T::zero() {
                    continue;
                }
                let inner = dot(z, g);
                for (out, (&zj, &gj)) in du.row_mut(i).iter_mut().zip(z.iter().zip(g)) {
                    *out = (gj - zj * inner) / len;
                }
            }
            match (&cache.proj_hidden, arch.projection) {
                (None, ProjectionKind::Linear) => {
                    affine_backward(&cache.v, &t[4], &du, &mut grads.tensors[4..6], Some(&mut dv));
                }
                (Some((pre, act)), ProjectionKind::Mlp) => {
                    let mut dact = Matrix::zeros(batch, arch.hidden_dim);
                    affine_backward(act, &t[6], &du, &mut grads.tensors[6..8], Some(&mut dact));
                    relu_backward(pre, &mut dact);
                    affine_backward(&cache.v, &t[4], &dact, &mut grads.tensors[4..6], Some(&mut dv));
                }
                _ => return Err(Error::invalid("forward cache does not match projection head")),
            }
        }

        relu_backward(&cache.enc2_pre, &mut dv);
        let mut dh1 = Matrix::zeros(batch, arch.hidden_dim);
        affine_backward(&cache.enc1, &t[2], &dv, &mut grads.tensors[2..4], Some(&mut dh1));
        relu_backward(&cache.enc1_pre, &mut dh1);
        affine_backward(&cache.input, &t[0], &dh1, &mut grads.tensors[0..2], None);
        Ok(grads)
    }

    /// Class predictions (argmax of `p`, ties to the smaller class).
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        let cache = self.forward(x)?;
        Ok(cache.p.iter_rows().map(argmax).collect())
    }

    /// Unit-norm embeddings `z` for every row of `x`.
    pub fn embed(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(x)?.z)
    }
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn init_tensor<T: Scalar, R: Rng + ?Sized>(t: &mut Tensor<T>, rng: &mut R) {
    if t.shape.len() == 2 {
        let std = (2.0 / t.shape[1] as f64).sqrt();
        for w in &mut t.data {
            let e: f64 = StandardNormal.sample(rng);
            *w = T::of(std * e);
        }
    } else {
        t.data.iter_mut().for_each(|b| *b = T::zero());
    }
}

/// `x W^T + b` for `W` of shape (out, in).
fn affine<T: Scalar>(x: &Matrix<T>, w: &Tensor<T>, b: &Tensor<T>) -> Matrix<T> {
    let out = w.shape[0];
    let mut y = Matrix::zeros(x.rows(), out);
    for r in 0..x.rows() {
        let xr = x.row(r);
        for (o, slot) in y.row_mut(r).iter_mut().enumerate() {
            *slot = dot(xr, w.row(o)) + b.data[o];
        }
    }
    y
}

/// Accumulates weight/bias gradients into `grads[0..2]` and optionally the
/// input gradient `dx += dy W`.
fn affine_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Tensor<T>,
    dy: &Matrix<T>,
    grads: &mut [Tensor<T>],
    dx: Option<&mut Matrix<T>>,
) {
    let (out, inp) = (w.shape[0], w.shape[1]);
    let (gw, gb) = grads.split_at_mut(1);
    let (gw, gb) = (&mut gw[0], &mut gb[0]);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let dyr = dy.row(r);
        for (o, &d) in dyr.iter().enumerate().take(out) {
            if d == T::zero() {
                continue;
            }
            gb.data[o] += d;
            for (g, &xv) in gw.data[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                *g += d * xv;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..x.rows() {
            let dyr = dy.row(r).to_vec();
            let dxr = dx.row_mut(r);
            for (o, &d) in dyr.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (g, &wv) in dxr.iter_mut().zip(w.row(o)) {
                    *g += d * wv;
                }
            }
        }
    }
}

fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

fn relu_backward<T: Scalar>(pre: &Matrix<T>, grad: &mut Matrix<T>) {
    for (g, &p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

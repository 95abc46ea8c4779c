//! Mutation models: a root marginal density and a stationary
//! parent-to-child conditional density sharing one parameter vector across
//! every edge.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::treemath::{RootWeights, WeightMatrix};

mod gaussian;
mod kernel;
mod tabular;

pub use gaussian::{CovarianceRidge, GaussianModel, GaussianParams};
pub use kernel::{Kernel, KernelConditionalParams, KernelModel};
pub use tabular::{TabularModel, TabularParams};
pub(crate) use tabular::category;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Root marginal plus parent-to-child conditional, with an unconstrained
/// flat parameter vector and analytic log-density gradients.
pub trait MutationModel: Clone + Send + Sync {
    fn family(&self) -> &'static str;

    /// Attribute dimension D.
    fn dim(&self) -> usize;

    fn num_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn with_params(&self, params: &[f64]) -> Result<Self>;

    /// Rejects rows the densities cannot score.
    fn check_row(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite attribute value".into()));
        }
        Ok(())
    }

    fn log_marginal(&self, x: ArrayView1<f64>) -> f64;

    fn log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> f64;

    /// `out[[u, v]] = log_conditional(X_u, X_v)`, diagonal `-inf`.
    fn log_conditional_matrix(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let t = data.nrows();
        Array2::from_shape_fn((t, t), |(u, v)| {
            if u == v {
                f64::NEG_INFINITY
            } else {
                self.log_conditional(data.row(u), data.row(v))
            }
        })
    }

    /// `out += weight * d log_marginal(x) / d params`.
    fn grad_log_marginal(&self, x: ArrayView1<f64>, weight: f64, out: &mut [f64]);

    /// `out += weight * d log_conditional(child, parent) / d params`.
    fn grad_log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>, weight: f64, out: &mut [f64]);

    /// `out += sum_r root[r] grad ln p(X_r) + sum_uv edge[u,v] grad ln beta_uv`.
    fn accumulate_weight_gradient(&self, data: ArrayView2<f64>, root: &[f64], edge: &Array2<f64>, out: &mut [f64]) {
        for (r, &w) in root.iter().enumerate() {
            if w != 0.0 {
                self.grad_log_marginal(data.row(r), w, out);
            }
        }
        for ((u, v), &w) in edge.indexed_iter() {
            if u != v && w != 0.0 {
                self.grad_log_conditional(data.row(u), data.row(v), w, out);
            }
        }
    }

    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64>;

    fn sample_conditional<R: Rng + ?Sized>(&self, parent: ArrayView1<f64>, rng: &mut R) -> Array1<f64>;

    /// Additive log-prior term on the parameters; zero unless the family
    /// regularizes.
    fn penalty(&self) -> f64 {
        0.0
    }

    fn grad_penalty(&self, _out: &mut [f64]) {}

    fn to_document(&self) -> Document;
}

/// The log-weight matrix and root weights for `data` under `model`.
pub fn build_beta<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<(WeightMatrix, RootWeights)> {
    let t = data.nrows();
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    for row in data.rows() {
        model.check_row(row)?;
    }
    let log_beta = model.log_conditional_matrix(data);
    for ((u, v), &x) in log_beta.indexed_iter() {
        if u != v && !x.is_finite() {
            return Err(Error::NonFiniteWeight { child: u, parent: Some(v) });
        }
    }
    let log_roots: Vec<f64> = data.rows().into_iter().map(|x| model.log_marginal(x)).collect();
    if let Some(r) = log_roots.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteWeight { child: r, parent: None });
    }
    Ok((WeightMatrix::from_log_weights(log_beta)?, RootWeights::from_log(log_roots)?))
}

/// Per-parameter derivatives of every log-weight.
#[derive(Debug, Clone)]
pub struct LogWeightGradients {
    /// `edges[i][[u, v]] = d ln beta_uv / d theta_i`.
    pub edges: Vec<Array2<f64>>,
    /// `roots[i][r] = d ln p(X_r) / d theta_i`.
    pub roots: Vec<Vec<f64>>,
}

pub fn grad_log_weights<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<LogWeightGradients> {
    let t = data.nrows();
    for row in data.rows() {
        model.check_row(row)?;
    }
    let p = model.num_params();
    let mut edges = vec![Array2::<f64>::zeros((t, t)); p];
    let mut roots = vec![vec![0.0; t]; p];
    let mut buf = vec![0.0; p];
    for r in 0..t {
        buf.iter_mut().for_each(|x| *x = 0.0);
        model.grad_log_marginal(data.row(r), 1.0, &mut buf);
        for i in 0..p {
            roots[i][r] = buf[i];
        }
    }
    for u in 0..t {
        for v in 0..t {
            if u == v {
                continue;
            }
            buf.iter_mut().for_each(|x| *x = 0.0);
            model.grad_log_conditional(data.row(u), data.row(v), 1.0, &mut buf);
            for i in 0..p {
                edges[i][[u, v]] = buf[i];
            }
        }
    }
    Ok(LogWeightGradients { edges, roots })
}

/// Any of the three families behind one type, for file-driven use.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Gaussian(GaussianModel),
    Tabular(TabularModel),
    Kernel(KernelModel),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Gaussian($m) => $e,
            AnyModel::Tabular($m) => $e,
            AnyModel::Kernel($m) => $e,
        }
    };
}

impl AnyModel {
    pub fn from_document(doc: &Document) -> Result<Self> {
        match doc.family()? {
            "gaussian" => Ok(AnyModel::Gaussian(GaussianModel::from_document(doc)?)),
            "tabular" => Ok(AnyModel::Tabular(TabularModel::from_document(doc)?)),
            "kernel" => Ok(AnyModel::Kernel(KernelModel::from_document(doc)?)),
            other => Err(Error::Document(format!("unknown model family {other:?}"))),
        }
    }
}

impl MutationModel for AnyModel {
    fn family(&self) -> &'static str {
        dispatch!(self, m => m.family())
    }
    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }
    fn num_params(&self) -> usize {
        dispatch!(self, m => m.num_params())
    }
    fn params(&self) -> Vec<f64> {
        dispatch!(self, m => m.params())
    }
    fn with_params(&self, params: &[f64]) -> Result<Self> {
        Ok(match self {
            AnyModel::Gaussian(m) => AnyModel::Gaussian(m.with_params(params)?),
            AnyModel::Tabular(m) => AnyModel::Tabular(m.with_params(params)?),
            AnyModel::Kernel(m) => AnyModel::Kernel(m.with_params(params)?),
        })
    }
    fn check_row(&self, x: ArrayView1<f64>) -> Result<()> {
        dispatch!(self, m => m.check_row(x))
    }
    fn log_marginal(&self, x: ArrayView1<f64>) -> f64 {
        dispatch!(self, m => m.log_marginal(x))
    }
    fn log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> f64 {
        dispatch!(self, m => m.log_conditional(child, parent))
    }
    fn log_conditional_matrix(&self, data: ArrayView2<f64>) -> Array2<f64> {
        dispatch!(self, m => m.log_conditional_matrix(data))
    }
    fn grad_log_marginal(&self, x: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_marginal(x, weight, out))
    }
    fn grad_log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        dispatch!(self, m => m.grad_log_conditional(child, parent, weight, out))
    }
    fn accumulate_weight_gradient(&self, data: ArrayView2<f64>, root: &[f64], edge: &Array2<f64>, out: &mut [f64]) {
        dispatch!(self, m => m.accumulate_weight_gradient(data, root, edge, out))
    }
    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        dispatch!(self, m => m.sample_marginal(rng))
    }
    fn sample_conditional<R: Rng + ?Sized>(&self, parent: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        dispatch!(self, m => m.sample_conditional(parent, rng))
    }
    fn penalty(&self) -> f64 {
        dispatch!(self, m => m.penalty())
    }
    fn grad_penalty(&self, out: &mut [f64]) {
        dispatch!(self, m => m.grad_penalty(out))
    }
    fn to_document(&self) -> Document {
        dispatch!(self, m => m.to_document())
    }
}

/// Packs a lower-triangular factor row by row, storing `ln L_ii` on the
/// diagonal.
pub(crate) fn pack_cholesky(l: &Array2<f64>, out: &mut Vec<f64>) {
    let d = l.nrows();
    for i in 0..d {
        for j in 0..=i {
            out.push(if i == j { l[[i, i]].ln() } else { l[[i, j]] });
        }
    }
}

pub(crate) fn unpack_cholesky(d: usize, src: &[f64]) -> Array2<f64> {
    let mut l = Array2::zeros((d, d));
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[[i, j]] = if i == j { src[k].exp() } else { src[k] };
            k += 1;
        }
    }
    l
}

pub(crate) fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Multivariate normal log-density of residual `r` under covariance `L L^T`.
/// Also returns `z = L^{-1} r` and `w = L^{-T} z` in the scratch slices.
pub(crate) fn gauss_log_density(l: &Array2<f64>, log_det_l: f64, r: &[f64], z: &mut [f64], w: &mut [f64]) -> f64 {
    crate::linalg::forward_subst(l, r, z);
    crate::linalg::backward_subst_transpose(l, z, w);
    let q: f64 = z.iter().map(|x| x * x).sum();
    -0.5 * (r.len() as f64) * LN_2PI - log_det_l - 0.5 * q
}

/// Adds `weight * d/dtheta` of the normal log-density with respect to a
/// packed Cholesky factor (log-diagonal) starting at `out[0]`.
pub(crate) fn accumulate_cholesky_grad(l: &Array2<f64>, z: &[f64], w: &[f64], weight: f64, out: &mut [f64]) {
    let d = z.len();
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            out[k] += weight
                * if i == j {
                    l[[i, i]] * w[i] * z[i] - 1.0
                } else {
                    w[i] * z[j]
                };
            k += 1;
        }
    }
}

pub(crate) fn log_det_of_cholesky(l: &Array2<f64>) -> f64 {
    l.diag().iter().map(|x| x.ln()).sum()
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub(crate) fn check_params(expected: usize, params: &[f64]) -> Result<()> {
    if params.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: params.len() });
    }
    if params.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("parameter vector has non-finite entries".into()));
    }
    Ok(())
}

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{
    accumulate_cholesky_grad, check_params, gauss_log_density, log_det_of_cholesky, pack_cholesky,
    standard_normal_vec, tri_len, unpack_cholesky, MutationModel, LN_2PI,
};
use crate::doc::Document;
use crate::error::{Error, Result};
use crate::linalg::cholesky;

/// Step on `ln gamma` for its central-difference derivative.
const LOG_GAMMA_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `k(x, y) = exp(-|x - y|^2 / (2 gamma^2))`; `gamma` is a length scale.
    Rbf { gamma: f64 },
    /// `k(x, y) = x . y`
    Linear,
}

impl Kernel {
    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * gamma * gamma)).exp()
            }
            Kernel::Linear => x.dot(&y),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Kernel::Rbf { .. } => "rbf",
            Kernel::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConditionalParams {
    pub kernel: Kernel,
    /// Anchor weights, one row per anchor.
    pub alpha: Array2<f64>,
    pub mu: Array1<f64>,
    /// Per-dimension standard deviations.
    pub sigma: Array1<f64>,
    pub anchors: Array2<f64>,
}

/// Per-dimension normal conditional whose mean is a kernel regression on
/// the parent over fixed anchors, with a full-covariance normal root.
///
/// Flat parameters: `alpha` row by row, `mu`, `ln sigma`, `ln gamma` (RBF
/// only), root mean, root Cholesky factor packed with log-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    kernel: Kernel,
    anchors: Array2<f64>,
    alpha: Array2<f64>,
    mu: Array1<f64>,
    sigma: Array1<f64>,
    root_mean: Array1<f64>,
    root_chol: Array2<f64>,
    root_log_det: f64,
    lambda: f64,
}

impl KernelModel {
    pub fn new(cond: &KernelConditionalParams, root_mean: Array1<f64>, root_cov: &Array2<f64>) -> Result<Self> {
        let d = cond.mu.len();
        let (ta, da) = cond.anchors.dim();
        if ta == 0 {
            return Err(Error::InvalidInput("kernel model needs at least one anchor".into()));
        }
        if da != d || cond.alpha.dim() != (ta, d) || cond.sigma.len() != d || root_mean.len() != d {
            return Err(Error::InvalidInput("inconsistent kernel parameter shapes".into()));
        }
        if cond.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("kernel sigma must be positive".into()));
        }
        if let Kernel::Rbf { gamma } = cond.kernel {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidInput("RBF bandwidth must be positive".into()));
            }
        }
        if root_cov.dim() != (d, d) {
            return Err(Error::InvalidInput("root covariance has the wrong shape".into()));
        }
        let root_chol = cholesky(root_cov.view())
            .ok_or_else(|| Error::InvalidInput("root covariance is not positive definite".into()))?;
        Ok(KernelModel {
            kernel: cond.kernel,
            anchors: cond.anchors.clone(),
            alpha: cond.alpha.clone(),
            mu: cond.mu.clone(),
            sigma: cond.sigma.clone(),
            root_log_det: log_det_of_cholesky(&root_chol),
            root_mean,
            root_chol,
            lambda: 1e-3,
        })
    }

    /// Anchors at the data, zero weights, and a diagonal root equal to the
    /// conditional, so the conditional ignores the parent and matches the
    /// marginal. The RBF bandwidth starts at the median pairwise distance.
    pub fn init_iid(data: ArrayView2<f64>, rbf: bool) -> Result<Self> {
        let t = data.nrows();
        if t < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: t });
        }
        let d = data.ncols();
        let mean = data.mean_axis(Axis(0)).expect("nonempty");
        let var = data.var_axis(Axis(0), 0.0);
        let trace = var.sum();
        let floor = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
        let sigma = var.mapv(|v| if v > 0.0 { v.sqrt() } else { floor.sqrt() });
        let kernel = if rbf {
            let mut dists = Vec::with_capacity(t * (t - 1) / 2);
            for i in 0..t {
                for j in 0..i {
                    let diff = &data.row(i) - &data.row(j);
                    dists.push(diff.dot(&diff).sqrt());
                }
            }
            dists.retain(|&x| x > 0.0);
            dists.sort_by(f64::total_cmp);
            let gamma = dists.get(dists.len() / 2).copied().unwrap_or(1.0);
            Kernel::Rbf { gamma }
        } else {
            Kernel::Linear
        };
        let cond = KernelConditionalParams {
            kernel,
            alpha: Array2::zeros((t, d)),
            mu: mean.clone(),
            sigma: sigma.clone(),
            anchors: data.to_owned(),
        };
        let cov = Array2::from_diag(&sigma.mapv(|s| s * s));
        Self::new(&cond, mean, &cov)
    }

    /// L2 weight on `alpha` in [`MutationModel::penalty`].
    pub fn with_penalty(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn penalty_weight(&self) -> f64 {
        self.lambda
    }

    pub fn conditional_params(&self) -> KernelConditionalParams {
        KernelConditionalParams {
            kernel: self.kernel,
            alpha: self.alpha.clone(),
            mu: self.mu.clone(),
            sigma: self.sigma.clone(),
            anchors: self.anchors.clone(),
        }
    }

    pub fn root_covariance(&self) -> Array2<f64> {
        self.root_chol.dot(&self.root_chol.t())
    }

    /// Kernel-regression mean of the child given `parent`.
    pub fn conditional_mean(&self, parent: ArrayView1<f64>) -> Array1<f64> {
        let k = self.kernel_row(parent);
        self.alpha.t().dot(&k) + &self.mu
    }

    fn kernel_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.anchors.rows().into_iter().map(|a| self.kernel.eval(x, a)).collect()
    }

    fn kernel_matrix(&self, data: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((data.nrows(), self.anchors.nrows()), |(v, t)| {
            self.kernel.eval(data.row(v), self.anchors.row(t))
        })
    }

    fn cond_len(&self) -> usize {
        let (ta, d) = self.alpha.dim();
        ta * d + 2 * d + usize::from(matches!(self.kernel, Kernel::Rbf { .. }))
    }

    fn root_offset(&self) -> usize {
        self.cond_len()
    }

    fn with_log_gamma_shift(&self, h: f64) -> Self {
        let mut m = self.clone();
        if let Kernel::Rbf { gamma } = self.kernel {
            m.kernel = Kernel::Rbf { gamma: gamma * h.exp() };
        }
        m
    }

    fn log_normal_sum(&self, child: ArrayView1<f64>, mean: ArrayView1<f64>) -> f64 {
        let mut s = 0.0;
        for ((x, m), sd) in child.iter().zip(mean.iter()).zip(self.sigma.iter()) {
            let z = (x - m) / sd;
            s += -0.5 * LN_2PI - sd.ln() - 0.5 * z * z;
        }
        s
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let (shape, anchors) = doc.floats("anchors")?;
        if shape.len() != 2 {
            return Err(Error::Document("anchors must be a matrix".into()));
        }
        let anchors = Array2::from_shape_vec((shape[0], shape[1]), anchors.to_vec())
            .map_err(|e| Error::Document(e.to_string()))?;
        let (ta, d) = anchors.dim();
        let kernel = match doc.text("kernel")? {
            "rbf" => Kernel::Rbf { gamma: 1.0 },
            "linear" => Kernel::Linear,
            other => return Err(Error::Document(format!("unknown kernel {other:?}"))),
        };
        let (_, lambda) = doc.floats("lambda")?;
        let lambda = *lambda.first().ok_or_else(|| Error::Document("empty lambda".into()))?;
        let template = KernelModel::new(
            &KernelConditionalParams {
                kernel,
                alpha: Array2::zeros((ta, d)),
                mu: Array1::zeros(d),
                sigma: Array1::ones(d),
                anchors,
            },
            Array1::zeros(d),
            &Array2::eye(d),
        )
        .map_err(|e| Error::Document(e.to_string()))?
        .with_penalty(lambda);
        let (_, params) = doc.floats("params")?;
        template.with_params(params)
    }
}

impl MutationModel for KernelModel {
    fn family(&self) -> &'static str {
        "kernel"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn num_params(&self) -> usize {
        let d = self.dim();
        self.cond_len() + d + tri_len(d)
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(self.alpha.iter());
        p.extend(self.mu.iter());
        p.extend(self.sigma.iter().map(|s| s.ln()));
        if let Kernel::Rbf { gamma } = self.kernel {
            p.push(gamma.ln());
        }
        p.extend(self.root_mean.iter());
        pack_cholesky(&self.root_chol, &mut p);
        p
    }

    fn with_params(&self, params: &[f64]) -> Result<Self> {
        check_params(self.num_params(), params)?;
        let (ta, d) = self.alpha.dim();
        let mut k = 0;
        let mut take = |n: usize| {
            let s = &params[k..k + n];
            k += n;
            s
        };
        let mut m = self.clone();
        m.alpha = Array2::from_shape_vec((ta, d), take(ta * d).to_vec()).expect("shape");
        m.mu = Array1::from(take(d).to_vec());
        m.sigma = take(d).iter().map(|x| x.exp()).collect();
        if let Kernel::Rbf { .. } = self.kernel {
            m.kernel = Kernel::Rbf { gamma: take(1)[0].exp() };
        }
        m.root_mean = Array1::from(take(d).to_vec());
        m.root_chol = unpack_cholesky(d, take(tri_len(d)));
        m.root_log_det = log_det_of_cholesky(&m.root_chol);
        Ok(m)
    }

    fn log_marginal(&self, x: ArrayView1<f64>) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(self.root_mean.iter()).map(|(a, b)| a - b).collect();
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        gauss_log_density(&self.root_chol, self.root_log_det, &r, &mut z, &mut w)
    }

    fn log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> f64 {
        let mean = self.conditional_mean(parent);
        self.log_normal_sum(child, mean.view())
    }

    fn log_conditional_matrix(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let t = data.nrows();
        let means = self.kernel_matrix(data).dot(&self.alpha) + &self.mu;
        let log_norm: f64 = self.sigma.iter().map(|s| -0.5 * LN_2PI - s.ln()).sum();
        let inv_sd = self.sigma.mapv(|s| 1.0 / s);
        Array2::from_shape_fn((t, t), |(u, v)| {
            if u == v {
                return f64::NEG_INFINITY;
            }
            let mut q = 0.0;
            for i in 0..data.ncols() {
                let z = (data[[u, i]] - means[[v, i]]) * inv_sd[i];
                q += z * z;
            }
            log_norm - 0.5 * q
        })
    }

    fn grad_log_marginal(&self, x: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(self.root_mean.iter()).map(|(a, b)| a - b).collect();
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        gauss_log_density(&self.root_chol, self.root_log_det, &r, &mut z, &mut w);
        let off = self.root_offset();
        for i in 0..d {
            out[off + i] += weight * w[i];
        }
        accumulate_cholesky_grad(&self.root_chol, &z, &w, weight, &mut out[off + d..]);
    }

    fn grad_log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        let (ta, d) = self.alpha.dim();
        let k = self.kernel_row(parent);
        let mean = self.alpha.t().dot(&k) + &self.mu;
        for i in 0..d {
            let s2 = self.sigma[i] * self.sigma[i];
            let r = child[i] - mean[i];
            let g = r / s2;
            for t in 0..ta {
                out[t * d + i] += weight * g * k[t];
            }
            out[ta * d + i] += weight * g;
            out[ta * d + d + i] += weight * (r * r / s2 - 1.0);
        }
        if let Kernel::Rbf { .. } = self.kernel {
            let hi = self.with_log_gamma_shift(LOG_GAMMA_STEP).log_conditional(child, parent);
            let lo = self.with_log_gamma_shift(-LOG_GAMMA_STEP).log_conditional(child, parent);
            out[ta * d + 2 * d] += weight * (hi - lo) / (2.0 * LOG_GAMMA_STEP);
        }
    }

    fn accumulate_weight_gradient(&self, data: ArrayView2<f64>, root: &[f64], edge: &Array2<f64>, out: &mut [f64]) {
        for (r, &w) in root.iter().enumerate() {
            if w != 0.0 {
                self.grad_log_marginal(data.row(r), w, out);
            }
        }
        let (ta, d) = self.alpha.dim();
        let t = data.nrows();
        let kmat = self.kernel_matrix(data);
        let means = kmat.dot(&self.alpha) + &self.mu;
        // g[v, i] = sum_u E_uv r_uvi / sigma_i^2
        let mut g = Array2::<f64>::zeros((t, d));
        let mut grad_mu = vec![0.0; d];
        let mut grad_ls = vec![0.0; d];
        for u in 0..t {
            for v in 0..t {
                let w = edge[[u, v]];
                if u == v || w == 0.0 {
                    continue;
                }
                for i in 0..d {
                    let s2 = self.sigma[i] * self.sigma[i];
                    let r = data[[u, i]] - means[[v, i]];
                    g[[v, i]] += w * r / s2;
                    grad_ls[i] += w * (r * r / s2 - 1.0);
                }
            }
        }
        for v in 0..t {
            for i in 0..d {
                grad_mu[i] += g[[v, i]];
            }
        }
        let grad_alpha = kmat.t().dot(&g);
        for t_ in 0..ta {
            for i in 0..d {
                out[t_ * d + i] += grad_alpha[[t_, i]];
            }
        }
        for i in 0..d {
            out[ta * d + i] += grad_mu[i];
            out[ta * d + d + i] += grad_ls[i];
        }
        if let Kernel::Rbf { .. } = self.kernel {
            let total = |m: &KernelModel| -> f64 {
                let lc = m.log_conditional_matrix(data);
                edge.indexed_iter()
                    .filter(|((u, v), &w)| u != v && w != 0.0)
                    .map(|((u, v), &w)| w * lc[[u, v]])
                    .sum()
            };
            let hi = total(&self.with_log_gamma_shift(LOG_GAMMA_STEP));
            let lo = total(&self.with_log_gamma_shift(-LOG_GAMMA_STEP));
            out[ta * d + 2 * d] += (hi - lo) / (2.0 * LOG_GAMMA_STEP);
        }
    }

    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let eps = Array1::from(standard_normal_vec(self.dim(), rng));
        &self.root_mean + &self.root_chol.dot(&eps)
    }

    fn sample_conditional<R: Rng + ?Sized>(&self, parent: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        let eps = Array1::from(standard_normal_vec(self.dim(), rng));
        self.conditional_mean(parent) + &self.sigma * &eps
    }

    fn penalty(&self) -> f64 {
        -self.lambda * self.alpha.iter().map(|a| a * a).sum::<f64>()
    }

    fn grad_penalty(&self, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(self.alpha.iter()) {
            *o -= 2.0 * self.lambda * a;
        }
    }

    fn to_document(&self) -> Document {
        let mut doc = Document::new(self.family());
        doc.put_ints("dim", &[1], vec![self.dim() as u64]);
        doc.put_text("kernel", self.kernel.name());
        doc.put_floats("lambda", &[1], vec![self.lambda]);
        let (ta, d) = self.anchors.dim();
        doc.put_floats("anchors", &[ta, d], self.anchors.iter().copied().collect());
        let p = self.params();
        doc.put_floats("params", &[p.len()], p);
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianModel, GaussianParams};
    use ndarray::array;

    fn rbf_model(gamma: f64) -> KernelModel {
        let cond = KernelConditionalParams {
            kernel: Kernel::Rbf { gamma },
            alpha: array![[1.0, -2.0], [0.5, 0.25], [3.0, 1.0]],
            mu: array![0.1, -0.2],
            sigma: array![0.7, 1.3],
            anchors: array![[0.0, 0.0], [1.0, 0.5], [-1.0, 2.0]],
        };
        KernelModel::new(&cond, array![0.0, 0.0], &Array2::eye(2)).unwrap()
    }

    #[test]
    fn zero_alpha_is_parent_independent() {
        let mut c = rbf_model(1.0).conditional_params();
        c.alpha.fill(0.0);
        let m = KernelModel::new(&c, array![0.0, 0.0], &Array2::eye(2)).unwrap();
        let x = array![0.3, 0.9];
        let a = m.log_conditional(x.view(), array![5.0, -1.0].view());
        let b = m.log_conditional(x.view(), array![0.0, 0.0].view());
        assert_eq!(a, b);
    }

    #[test]
    fn narrow_rbf_localizes_on_anchor() {
        let m = rbf_model(1e-3);
        let mean = m.conditional_mean(array![1.0, 0.5].view());
        assert!((mean[0] - 0.6).abs() < 1e-12);
        assert!((mean[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn linear_kernel_recovers_gaussian_with_diagonal_noise() {
        let reg = array![[0.4, -0.3], [1.1, 0.2]];
        let cond = KernelConditionalParams {
            kernel: Kernel::Linear,
            alpha: reg.t().to_owned(),
            mu: array![0.5, -1.0],
            sigma: array![0.8, 1.5],
            anchors: Array2::eye(2),
        };
        let k = KernelModel::new(&cond, array![0.0, 0.0], &Array2::eye(2)).unwrap();
        let g = GaussianModel::new(&GaussianParams {
            mu_c: array![0.5, -1.0],
            mu_pi: array![0.0, 0.0],
            sigma_c_given_pi: reg,
            sigma_cc: array![[0.64, 0.0], [0.0, 2.25]],
            sigma_pipi: Array2::eye(2),
        })
        .unwrap();
        let (c, p) = (array![0.3, 2.0], array![-1.2, 0.7]);
        assert!((k.log_conditional(c.view(), p.view()) - g.log_conditional(c.view(), p.view())).abs() < 1e-10);
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        let mut c = rbf_model(1.0).conditional_params();
        c.sigma[1] = 0.0;
        assert!(KernelModel::new(&c, array![0.0, 0.0], &Array2::eye(2)).is_err());
    }

    #[test]
    fn matrix_route_matches_pairwise() {
        let m = rbf_model(0.8);
        let data = array![[0.1, 0.2], [1.0, -0.4], [0.3, 1.7]];
        let lc = m.log_conditional_matrix(data.view());
        for u in 0..3 {
            for v in 0..3 {
                if u != v {
                    assert!((lc[[u, v]] - m.log_conditional(data.row(u), data.row(v))).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fast_weight_gradient_matches_pairwise_sum() {
        let m = rbf_model(0.9);
        let data = array![[0.1, 0.2], [1.0, -0.4], [0.3, 1.7], [-0.5, 0.5]];
        let root = [0.4, 0.3, 0.2, 0.1];
        let edge = Array2::from_shape_fn((4, 4), |(u, v)| if u == v { 0.0 } else { 0.1 + (u + 2 * v) as f64 / 20.0 });
        let mut fast = vec![0.0; m.num_params()];
        m.accumulate_weight_gradient(data.view(), &root, &edge, &mut fast);
        let mut slow = vec![0.0; m.num_params()];
        for r in 0..4 {
            m.grad_log_marginal(data.row(r), root[r], &mut slow);
        }
        for u in 0..4 {
            for v in 0..4 {
                if u != v {
                    m.grad_log_conditional(data.row(u), data.row(v), edge[[u, v]], &mut slow);
                }
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn iid_init_conditional_equals_marginal() {
        let data = array![[0.1, 0.2], [1.0, -0.4], [0.3, 1.7], [-0.5, 0.5]];
        let m = KernelModel::init_iid(data.view(), true).unwrap();
        for u in 0..4 {
            let lm = m.log_marginal(data.row(u));
            let lc = m.log_conditional(data.row(u), data.row((u + 1) % 4));
            assert!((lm - lc).abs() < 1e-12);
        }
    }

    #[test]
    fn document_roundtrip_is_exact() {
        let m = rbf_model(0.37).with_penalty(0.25);
        let back = KernelModel::from_document(&Document::parse(&m.to_document().render()).unwrap()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.penalty_weight(), 0.25);
        assert_eq!(back.conditional_params().anchors, m.conditional_params().anchors);
    }
}

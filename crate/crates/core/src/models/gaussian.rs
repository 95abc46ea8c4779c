use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{
    accumulate_cholesky_grad, check_params, gauss_log_density, log_det_of_cholesky, pack_cholesky,
    standard_normal_vec, tri_len, unpack_cholesky, MutationModel,
};
use crate::doc::Document;
use crate::error::{Error, Result};
use crate::linalg::cholesky;

/// Linear-Gaussian mutation parameters in their natural form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    /// Child offset.
    pub mu_c: Array1<f64>,
    /// Root mean.
    pub mu_pi: Array1<f64>,
    /// Regression of child on parent.
    pub sigma_c_given_pi: Array2<f64>,
    /// Conditional covariance.
    pub sigma_cc: Array2<f64>,
    /// Root covariance.
    pub sigma_pipi: Array2<f64>,
}

/// Ridge applied to sample covariances by [`GaussianModel::init_iid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceRidge {
    /// Add `1e-6 * trace / D` only when the sample covariance is not
    /// numerically positive definite.
    #[default]
    Auto,
    Always,
    /// Reject degenerate covariances.
    Never,
}

/// Root `N(mu_pi, Sigma_pipi)` and conditional
/// `N(Sigma_c|pi x_parent + mu_c, Sigma_cc)`.
///
/// Flat parameter layout: `mu_c`, `mu_pi`, the regression matrix row by
/// row, then the two Cholesky factors packed row by row with log-diagonals
/// (`2D + D^2 + D(D+1)` values, 27 for `D = 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mu_c: Array1<f64>,
    mu_pi: Array1<f64>,
    regression: Array2<f64>,
    chol_cc: Array2<f64>,
    chol_pipi: Array2<f64>,
    log_det_cc: f64,
    log_det_pipi: f64,
}

impl GaussianModel {
    pub fn new(p: &GaussianParams) -> Result<Self> {
        let d = p.mu_c.len();
        let shapes_ok = p.mu_pi.len() == d
            && p.sigma_c_given_pi.dim() == (d, d)
            && p.sigma_cc.dim() == (d, d)
            && p.sigma_pipi.dim() == (d, d);
        if !shapes_ok || d == 0 {
            return Err(Error::InvalidInput("inconsistent Gaussian parameter shapes".into()));
        }
        let chol_cc = checked_cholesky(&p.sigma_cc, "Sigma_cc")?;
        let chol_pipi = checked_cholesky(&p.sigma_pipi, "Sigma_pipi")?;
        Ok(Self::from_parts(
            p.mu_c.clone(),
            p.mu_pi.clone(),
            p.sigma_c_given_pi.clone(),
            chol_cc,
            chol_pipi,
        ))
    }

    fn from_parts(
        mu_c: Array1<f64>,
        mu_pi: Array1<f64>,
        regression: Array2<f64>,
        chol_cc: Array2<f64>,
        chol_pipi: Array2<f64>,
    ) -> Self {
        GaussianModel {
            log_det_cc: log_det_of_cholesky(&chol_cc),
            log_det_pipi: log_det_of_cholesky(&chol_pipi),
            mu_c,
            mu_pi,
            regression,
            chol_cc,
            chol_pipi,
        }
    }

    /// iid seed: both means at the sample mean, both covariances at the
    /// (maximum-likelihood) sample covariance, zero regression. The
    /// conditional then equals the marginal.
    pub fn init_iid(data: ArrayView2<f64>, ridge: CovarianceRidge) -> Result<Self> {
        let t = data.nrows();
        if t < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: t });
        }
        let d = data.ncols();
        let (mean, mut cov) = sample_moments(data);
        let trace: f64 = cov.diag().sum();
        let eps = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
        let needs_ridge = match ridge {
            CovarianceRidge::Always => true,
            CovarianceRidge::Never => false,
            CovarianceRidge::Auto => match cholesky(cov.view()) {
                None => true,
                Some(l) => l.diag().iter().any(|&x| x * x < 1e-12 * eps.max(f64::MIN_POSITIVE)),
            },
        };
        if needs_ridge {
            for i in 0..d {
                cov[[i, i]] += eps;
            }
        }
        let l = cholesky(cov.view())
            .ok_or_else(|| Error::InvalidInput("sample covariance is not positive definite".into()))?;
        Ok(Self::from_parts(mean.clone(), mean, Array2::zeros((d, d)), l.clone(), l))
    }

    pub fn to_params(&self) -> GaussianParams {
        GaussianParams {
            mu_c: self.mu_c.clone(),
            mu_pi: self.mu_pi.clone(),
            sigma_c_given_pi: self.regression.clone(),
            sigma_cc: self.chol_cc.dot(&self.chol_cc.t()),
            sigma_pipi: self.chol_pipi.dot(&self.chol_pipi.t()),
        }
    }

    /// Same model with `Sigma_cc` multiplied by `factor`.
    pub fn with_conditional_scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidInput("conditional scale must be positive".into()));
        }
        let mut m = self.clone();
        m.chol_cc.mapv_inplace(|x| x * factor.sqrt());
        m.log_det_cc = log_det_of_cholesky(&m.chol_cc);
        Ok(m)
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let (_, dim) = doc.ints("dim")?;
        let d = *dim.first().ok_or_else(|| Error::Document("empty dim".into()))? as usize;
        let (_, params) = doc.floats("params")?;
        let template = Self::from_parts(
            Array1::zeros(d),
            Array1::zeros(d),
            Array2::zeros((d, d)),
            Array2::eye(d),
            Array2::eye(d),
        );
        template.with_params(params)
    }

    fn conditional_residual(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> Vec<f64> {
        let mean = self.regression.dot(&parent);
        child
            .iter()
            .zip(mean.iter().zip(self.mu_c.iter()))
            .map(|(x, (m, mu))| x - m - mu)
            .collect()
    }
}

fn checked_cholesky(a: &Array2<f64>, name: &str) -> Result<Array2<f64>> {
    let sym = a.iter().zip(a.t().iter()).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    if !sym {
        return Err(Error::InvalidInput(format!("{name} is not symmetric")));
    }
    cholesky(a.view()).ok_or_else(|| Error::InvalidInput(format!("{name} is not positive definite")))
}

/// Mean and maximum-likelihood covariance (divisor `T`).
pub(crate) fn sample_moments(data: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let t = data.nrows() as f64;
    let mean = data.mean_axis(Axis(0)).expect("nonempty data");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / t;
    (mean, cov)
}

impl MutationModel for GaussianModel {
    fn family(&self) -> &'static str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        self.mu_c.len()
    }

    fn num_params(&self) -> usize {
        let d = self.dim();
        2 * d + d * d + 2 * tri_len(d)
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(self.mu_c.iter());
        p.extend(self.mu_pi.iter());
        p.extend(self.regression.iter());
        pack_cholesky(&self.chol_cc, &mut p);
        pack_cholesky(&self.chol_pipi, &mut p);
        p
    }

    fn with_params(&self, params: &[f64]) -> Result<Self> {
        check_params(self.num_params(), params)?;
        let d = self.dim();
        let mut k = 0;
        let mut take = |n: usize| {
            let s = &params[k..k + n];
            k += n;
            s
        };
        let mu_c = Array1::from(take(d).to_vec());
        let mu_pi = Array1::from(take(d).to_vec());
        let regression = Array2::from_shape_vec((d, d), take(d * d).to_vec()).expect("shape");
        let chol_cc = unpack_cholesky(d, take(tri_len(d)));
        let chol_pipi = unpack_cholesky(d, take(tri_len(d)));
        Ok(Self::from_parts(mu_c, mu_pi, regression, chol_cc, chol_pipi))
    }

    fn log_marginal(&self, x: ArrayView1<f64>) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(self.mu_pi.iter()).map(|(a, b)| a - b).collect();
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        gauss_log_density(&self.chol_pipi, self.log_det_pipi, &r, &mut z, &mut w)
    }

    fn log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> f64 {
        let d = self.dim();
        let r = self.conditional_residual(child, parent);
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        gauss_log_density(&self.chol_cc, self.log_det_cc, &r, &mut z, &mut w)
    }

    fn log_conditional_matrix(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let t = data.nrows();
        let d = self.dim();
        // conditional means depend on the parent only
        let means = data.dot(&self.regression.t()) + &self.mu_c;
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        let mut r = vec![0.0; d];
        let mut out = Array2::from_elem((t, t), f64::NEG_INFINITY);
        for u in 0..t {
            for v in 0..t {
                if u == v {
                    continue;
                }
                for i in 0..d {
                    r[i] = data[[u, i]] - means[[v, i]];
                }
                out[[u, v]] = gauss_log_density(&self.chol_cc, self.log_det_cc, &r, &mut z, &mut w);
            }
        }
        out
    }

    fn grad_log_marginal(&self, x: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(self.mu_pi.iter()).map(|(a, b)| a - b).collect();
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        gauss_log_density(&self.chol_pipi, self.log_det_pipi, &r, &mut z, &mut w);
        for i in 0..d {
            out[d + i] += weight * w[i];
        }
        let off = 2 * d + d * d + tri_len(d);
        accumulate_cholesky_grad(&self.chol_pipi, &z, &w, weight, &mut out[off..]);
    }

    fn grad_log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        let d = self.dim();
        let r = self.conditional_residual(child, parent);
        let (mut z, mut w) = (vec![0.0; d], vec![0.0; d]);
        gauss_log_density(&self.chol_cc, self.log_det_cc, &r, &mut z, &mut w);
        for i in 0..d {
            out[i] += weight * w[i];
            for j in 0..d {
                out[2 * d + i * d + j] += weight * w[i] * parent[j];
            }
        }
        accumulate_cholesky_grad(&self.chol_cc, &z, &w, weight, &mut out[2 * d + d * d..]);
    }

    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let eps = Array1::from(standard_normal_vec(self.dim(), rng));
        &self.mu_pi + &self.chol_pipi.dot(&eps)
    }

    fn sample_conditional<R: Rng + ?Sized>(&self, parent: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        let eps = Array1::from(standard_normal_vec(self.dim(), rng));
        self.regression.dot(&parent) + &self.mu_c + self.chol_cc.dot(&eps)
    }

    fn to_document(&self) -> Document {
        let mut doc = Document::new(self.family());
        doc.put_ints("dim", &[1], vec![self.dim() as u64]);
        let p = self.params();
        doc.put_floats("params", &[p.len()], p);
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LN_2PI;
    use ndarray::array;

    fn standard(d: usize) -> GaussianModel {
        GaussianModel::new(&GaussianParams {
            mu_c: Array1::zeros(d),
            mu_pi: Array1::zeros(d),
            sigma_c_given_pi: Array2::zeros((d, d)),
            sigma_cc: Array2::eye(d),
            sigma_pipi: Array2::eye(d),
        })
        .unwrap()
    }

    #[test]
    fn standard_normal_mode() {
        let m = standard(1);
        assert!((m.log_marginal(array![0.0].view()) + 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn zero_quadratic_form_at_mean() {
        let p = GaussianParams {
            mu_c: array![0.0, 0.0],
            mu_pi: array![1.0, -2.0],
            sigma_c_given_pi: Array2::zeros((2, 2)),
            sigma_cc: Array2::eye(2),
            sigma_pipi: array![[2.0, 0.5], [0.5, 1.0]],
        };
        let m = GaussianModel::new(&p).unwrap();
        let det: f64 = 2.0 * 1.0 - 0.25;
        let expected = -0.5 * (2.0 * LN_2PI + det.ln());
        assert!((m.log_marginal(p.mu_pi.view()) - expected).abs() < 1e-13);
    }

    #[test]
    fn zero_regression_ignores_parent() {
        let m = standard(2);
        let c = array![0.3, -0.7];
        let a = m.log_conditional(c.view(), array![5.0, 1.0].view());
        let b = m.log_conditional(c.view(), array![-3.0, 0.0].view());
        assert_eq!(a, b);
    }

    #[test]
    fn identity_regression_at_parent_is_normalizer() {
        let mut p = standard(2).to_params();
        p.sigma_c_given_pi = Array2::eye(2);
        p.sigma_cc = array![[0.5, 0.1], [0.1, 0.3]];
        let m = GaussianModel::new(&p).unwrap();
        let x = array![1.5, -0.25];
        let det: f64 = 0.5 * 0.3 - 0.01;
        let expected = -0.5 * (2.0 * LN_2PI + det.ln());
        assert!((m.log_conditional(x.view(), x.view()) - expected).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_covariances() {
        let mut p = standard(2).to_params();
        p.sigma_cc = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(GaussianModel::new(&p).is_err());
        p.sigma_cc = array![[1.0, 0.2], [0.1, 1.0]];
        assert!(GaussianModel::new(&p).is_err());
    }

    #[test]
    fn degenerate_data_ridge_policy() {
        let data = array![[1.0, 2.0], [1.0, 2.0]];
        assert!(GaussianModel::init_iid(data.view(), CovarianceRidge::Never).is_err());
        let m = GaussianModel::init_iid(data.view(), CovarianceRidge::Auto).unwrap();
        let cov = m.to_params().sigma_pipi;
        assert!((cov[[0, 0]] - 1e-6).abs() < 1e-18);
        assert!(m.log_marginal(data.row(0)).is_finite());
    }

    #[test]
    fn standardized_data_init() {
        let raw = array![[1.0, 4.0], [2.0, 0.0], [6.0, 1.0], [3.0, 3.0]];
        let (mean, cov) = sample_moments(raw.view());
        let sd = cov.diag().mapv(f64::sqrt);
        let z = (&raw - &mean) / &sd;
        let m = GaussianModel::init_iid(z.view(), CovarianceRidge::Auto).unwrap();
        let p = m.to_params();
        assert!(p.mu_pi.iter().chain(p.mu_c.iter()).all(|x| x.abs() < 1e-12));
        assert!(p.sigma_pipi.diag().iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(p.sigma_cc.diag().iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(p.sigma_c_given_pi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn score_of_mu_c_is_precision_times_residual() {
        let mut p = standard(2).to_params();
        p.sigma_cc = array![[2.0, 0.3], [0.3, 0.5]];
        p.sigma_c_given_pi = array![[0.2, -0.1], [0.4, 0.9]];
        p.mu_c = array![0.1, 0.2];
        let m = GaussianModel::new(&p).unwrap();
        let (xu, xv) = (array![1.0, -1.0], array![0.5, 2.0]);
        let mut g = vec![0.0; m.num_params()];
        m.grad_log_conditional(xu.view(), xv.view(), 1.0, &mut g);
        let r = &xu - &p.sigma_c_given_pi.dot(&xv) - &p.mu_c;
        // inverse of [[2, .3], [.3, .5]]
        let det = 2.0 * 0.5 - 0.09;
        let prec = array![[0.5, -0.3], [-0.3, 2.0]] / det;
        let expected = prec.dot(&r);
        assert!((g[0] - expected[0]).abs() < 1e-12 && (g[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn document_roundtrip_is_exact() {
        let mut p = standard(3).to_params();
        p.sigma_c_given_pi[[0, 2]] = 0.1 / 3.0;
        p.sigma_cc[[1, 1]] = 2.0f64.sqrt();
        let m = GaussianModel::new(&p).unwrap();
        let text = m.to_document().render();
        let back = GaussianModel::from_document(&Document::parse(&text).unwrap()).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(m.num_params(), 27);
    }
}

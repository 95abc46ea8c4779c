//! Reference density estimators: Parzen windows and Gaussian mixtures.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use outtree::linalg::{cholesky, forward_subst, logsumexp};
use outtree::sampler::substream;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CliError, CliResult};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ln (1/T) Σ_t N(x | X_t, σ² I)`.
pub fn parzen_log_density(train: ArrayView2<f64>, x: ArrayView1<f64>, sigma: f64) -> f64 {
    let d = train.ncols() as f64;
    let norm = -0.5 * d * (LN_2PI + 2.0 * sigma.ln());
    let terms: Vec<f64> = train
        .rows()
        .into_iter()
        .map(|r| {
            let sq: f64 = r.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            norm - 0.5 * sq / (sigma * sigma)
        })
        .collect();
    logsumexp(&terms) - (train.nrows() as f64).ln()
}

/// Summed log density of `points`.
pub fn parzen_score(train: ArrayView2<f64>, points: ArrayView2<f64>, sigma: f64) -> f64 {
    points.rows().into_iter().map(|x| parzen_log_density(train, x, sigma)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParzenResult {
    pub sigma: f64,
    pub validation_scores: Vec<f64>,
    pub test_score: f64,
}

/// σ chosen by validation score (first best on ties); test points score
/// against every training point.
pub fn baseline_parzen(
    train: ArrayView2<f64>,
    validation: ArrayView2<f64>,
    test: ArrayView2<f64>,
    grid: &[f64],
) -> CliResult<ParzenResult> {
    if grid.is_empty() {
        return Err(CliError::Config("bandwidth grid is empty".into()));
    }
    if let Some(s) = grid.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(CliError::Config(format!("bandwidth {s} is not positive")));
    }
    if train.nrows() == 0 || validation.nrows() == 0 || test.nrows() == 0 {
        return Err(CliError::Data("Parzen baseline needs nonempty splits".into()));
    }
    let validation_scores: Vec<f64> = grid.iter().map(|&s| parzen_score(train, validation, s)).collect();
    let best = argmax(&validation_scores);
    Ok(ParzenResult { sigma: grid[best], test_score: parzen_score(train, test, grid[best]), validation_scores })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Array1<f64>>,
    pub covariances: Vec<Array2<f64>>,
    chols: Vec<Array2<f64>>,
    log_dets: Vec<f64>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Array1<f64>>, covariances: Vec<Array2<f64>>) -> CliResult<Self> {
        let mut chols = Vec::with_capacity(covariances.len());
        let mut log_dets = Vec::with_capacity(covariances.len());
        for c in &covariances {
            let l = cholesky(c.view()).ok_or(outtree::Error::Singular)?;
            log_dets.push(2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>());
            chols.push(l);
        }
        Ok(Gmm { weights, means, covariances, chols, log_dets })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// `ln w_k + ln N(x | μ_k, Σ_k)` for every component.
    pub fn component_log_densities(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let d = x.len();
        let mut z = vec![0.0; d];
        (0..self.k())
            .map(|k| {
                let r: Vec<f64> = x.iter().zip(self.means[k].iter()).map(|(a, b)| a - b).collect();
                forward_subst(&self.chols[k], &r, &mut z);
                let q: f64 = z.iter().map(|v| v * v).sum();
                self.weights[k].ln() - 0.5 * (d as f64 * LN_2PI + self.log_dets[k] + q)
            })
            .collect()
    }

    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        logsumexp(&self.component_log_densities(x))
    }

    pub fn score(&self, points: ArrayView2<f64>) -> f64 {
        points.rows().into_iter().map(|x| self.log_density(x)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iters: 500, tol: 1e-8, restarts: 10, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub gmm: Gmm,
    /// Penalized log-likelihood before each M-step and after the last.
    pub trace: Vec<f64>,
    pub reseeds: usize,
}

/// `1e-6 · trace(S) / D` for the sample covariance `S` of `data`.
pub fn ridge_for(data: ArrayView2<f64>) -> f64 {
    let n = data.nrows() as f64;
    let mean = data.mean_axis(Axis(0)).expect("nonempty data");
    let tr: f64 = data.rows().into_iter().map(|r| r.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>() / n;
    let tr = if tr > 0.0 { tr } else { 1.0 };
    1e-6 * tr / data.ncols() as f64
}

/// k-means++ centres: the first uniform, each next with probability
/// proportional to the squared distance to the nearest chosen centre.
fn kmeanspp<R: Rng + ?Sized>(data: ArrayView2<f64>, k: usize, rng: &mut R) -> Vec<Array1<f64>> {
    let n = data.nrows();
    let mut centres = vec![data.row(rng.random_range(0..n)).to_owned()];
    let mut d2 = vec![f64::INFINITY; n];
    while centres.len() < k {
        let c = centres.last().expect("one centre");
        for (i, r) in data.rows().into_iter().enumerate() {
            let s: f64 = r.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(s);
        }
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(data.row(pick).to_owned());
    }
    centres
}

/// Responsibilities and penalized objective under `gmm`.
fn e_step(gmm: &Gmm, data: ArrayView2<f64>, ridge: f64) -> (Array2<f64>, f64) {
    let mut resp = Array2::zeros((data.nrows(), gmm.k()));
    let mut ll = 0.0;
    for (i, x) in data.rows().into_iter().enumerate() {
        let c = gmm.component_log_densities(x);
        let lse = logsumexp(&c);
        ll += lse;
        for k in 0..gmm.k() {
            resp[[i, k]] = (c[k] - lse).exp();
        }
    }
    (resp, ll + penalty(gmm, ridge))
}

/// Log-prior `-ridge/2 · tr(Σ_k⁻¹)` summed over components, which makes
/// `(S_k + ridge I) / N_k` the exact M-step and keeps EM monotone.
fn penalty(gmm: &Gmm, ridge: f64) -> f64 {
    let mut total = 0.0;
    for l in &gmm.chols {
        let d = l.nrows();
        let mut z = vec![0.0; d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            forward_subst(l, &e, &mut z);
            total += z.iter().map(|v| v * v).sum::<f64>();
        }
    }
    -0.5 * ridge * total
}

/// M-step. Components with no responsibility mass are re-seeded, each on
/// its own point taken in order from `worst` (the points the current
/// mixture explains worst first).
fn m_step(data: ArrayView2<f64>, resp: &Array2<f64>, ridge: f64, worst: &[usize]) -> CliResult<(Gmm, usize)> {
    let (n, d) = data.dim();
    let k = resp.ncols();
    let mut resp = resp.clone();
    let mut reseeds = 0;
    let floor = 1e-10 * n as f64;
    for j in 0..k {
        if resp.column(j).sum() >= floor {
            continue;
        }
        reseeds += 1;
        // A point can move only if no other component depends on it.
        let movable = |resp: &Array2<f64>, i: usize| {
            (0..k).all(|c| c == j || resp[[i, c]] == 0.0 || resp.column(c).sum() - resp[[i, c]] >= floor)
        };
        match worst.iter().copied().find(|&i| movable(&resp, i)) {
            Some(i) => {
                resp.row_mut(i).fill(0.0);
                resp[[i, j]] = 1.0;
            }
            None => {
                // Split the heaviest component in two.
                let sums: Vec<f64> = (0..k).map(|c| resp.column(c).sum()).collect();
                let big = argmax(&sums);
                let half = resp.column(big).mapv(|r| 0.5 * r);
                resp.column_mut(big).assign(&half);
                resp.column_mut(j).assign(&half);
            }
        }
    }
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let r = resp.column(j);
        let nk: f64 = r.sum();
        let mean = data.t().dot(&r) / nk;
        let mut cov = Array2::<f64>::eye(d) * ridge;
        for (i, x) in data.rows().into_iter().enumerate() {
            if r[i] == 0.0 {
                continue;
            }
            let diff = &x - &mean;
            for a in 0..d {
                for b in 0..d {
                    cov[[a, b]] += r[i] * diff[a] * diff[b];
                }
            }
        }
        cov /= nk;
        weights.push(nk / n as f64);
        means.push(mean);
        covs.push(cov);
    }
    Ok((Gmm::new(weights, means, covs)?, reseeds))
}

fn em_once(data: ArrayView2<f64>, k: usize, ridge: f64, opts: &EmOptions, restart: u64) -> CliResult<EmFit> {
    let mut rng = substream(opts.seed, restart);
    let centres = kmeanspp(data, k, &mut rng);
    let n = data.nrows();
    // Hard assignment to the nearest centre starts the first M-step.
    let mut resp = Array2::zeros((n, k));
    for (i, x) in data.rows().into_iter().enumerate() {
        let nearest = (0..k)
            .map(|j| x.iter().zip(centres[j].iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        resp[[i, nearest]] = 1.0;
    }
    let mut shuffled: Vec<usize> = (0..n).collect();
    shuffled.shuffle(&mut rng);
    let (mut gmm, mut reseeds) = m_step(data, &resp, ridge, &shuffled)?;
    let mut trace = Vec::new();
    for _ in 0..opts.max_iters {
        let (resp, obj) = e_step(&gmm, data, ridge);
        let converged = trace.last().is_some_and(|&prev: &f64| (obj - prev).abs() <= opts.tol * (1.0 + prev.abs()));
        trace.push(obj);
        if converged {
            break;
        }
        let dens: Vec<f64> = data.rows().into_iter().map(|x| gmm.log_density(x)).collect();
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| dens[a].total_cmp(&dens[b]));
        let (next, r) = m_step(data, &resp, ridge, &worst)?;
        gmm = next;
        reseeds += r;
    }
    Ok(EmFit { gmm, trace, reseeds })
}

/// Best of `opts.restarts` EM runs by final penalized objective.
pub fn fit_gmm(data: ArrayView2<f64>, k: usize, opts: &EmOptions) -> CliResult<EmFit> {
    if k == 0 {
        return Err(CliError::Config("mixture needs at least one component".into()));
    }
    if data.nrows() < k {
        return Err(CliError::Data(format!("{} points cannot seed {k} components", data.nrows())));
    }
    let ridge = ridge_for(data);
    let mut best: Option<EmFit> = None;
    for r in 0..opts.restarts.max(1) {
        let fit = em_once(data, k, ridge, opts, r as u64)?;
        let obj = *fit.trace.last().expect("at least one E-step");
        if best.as_ref().is_none_or(|b| obj > *b.trace.last().expect("nonempty")) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone)]
pub struct GmmResult {
    pub ks: Vec<usize>,
    pub validation_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
    /// Component count with the best validation score.
    pub selected_k: usize,
}

impl GmmResult {
    pub fn test_score_for(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&j| j == k).map(|i| self.test_scores[i])
    }

    pub fn selected_test_score(&self) -> f64 {
        self.test_score_for(self.selected_k).expect("selected k was fitted")
    }
}

/// Mixtures with `k = 1..=k_max` on `train`, scored on validation and test.
pub fn baseline_gmm(
    train: ArrayView2<f64>,
    validation: ArrayView2<f64>,
    test: ArrayView2<f64>,
    k_max: usize,
    opts: &EmOptions,
) -> CliResult<GmmResult> {
    if k_max == 0 {
        return Err(CliError::Config("k range must include at least k = 1".into()));
    }
    let mut res = GmmResult { ks: Vec::new(), validation_scores: Vec::new(), test_scores: Vec::new(), selected_k: 1 };
    for k in 1..=k_max {
        let fit = fit_gmm(train, k, opts)?;
        res.ks.push(k);
        res.validation_scores.push(fit.gmm.score(validation));
        res.test_scores.push(fit.gmm.score(test));
    }
    res.selected_k = res.ks[argmax(&res.validation_scores)];
    Ok(res)
}

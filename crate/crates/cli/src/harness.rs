//! Experiment drivers: split protocol, spiral density benchmark and the
//! synthetic semi-supervised benchmark.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use outtree::likelihood::{
    fit_ml, tdid_log_likelihood, test_log_likelihood, Convergence, EarlyStopping, FitOptions, FitReport,
};
use outtree::models::{CovarianceRidge, GaussianModel, GaussianParams};
use outtree::sampler::{sample_dataset, substream};
use outtree::semisup::{
    accuracy, greedy_label_inference, majority_baseline, sample_tree_labels, GreedyOptions, LabelModel,
    LabeledDataset,
};
use rand::seq::SliceRandom;

use crate::baselines::{baseline_gmm, baseline_parzen, EmOptions};
use crate::error::{CliError, CliResult};
use crate::spiral::{gen_spiral, SpiralSpec};

/// Disjoint, exhaustive train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// A shuffled partition with sizes rounded from `fractions`; every part
/// gets at least one index.
pub fn split_indices<R: rand::Rng + ?Sized>(t: usize, fractions: [f64; 3], rng: &mut R) -> CliResult<Splits> {
    if t < 3 {
        return Err(CliError::Data(format!("{t} rows cannot fill three splits")));
    }
    let mut idx: Vec<usize> = (0..t).collect();
    idx.shuffle(rng);
    let n_val = ((fractions[1] * t as f64).round() as usize).max(1);
    let n_test = ((fractions[2] * t as f64).round() as usize).max(1);
    if n_val + n_test >= t {
        return Err(CliError::Data(format!("splits leave no training rows out of {t}")));
    }
    let n_train = t - n_val - n_test;
    Ok(Splits {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    })
}

pub fn rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Median distance from each row to its nearest other row.
pub fn median_nn_distance(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let mut nn: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    nn[n / 2]
}

/// Multipliers of the median nearest-neighbour distance used as the
/// conditional standard deviation of the random-walk starts.
pub const RANDOM_WALK_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Starting points for Gaussian fits: the iid seed, then random walks
/// (unit regression, zero offset, isotropic conditional covariance) that
/// keep the iid root. The iid seed sits where the regression gradient
/// points away from the random-walk regime, so local ascent from it alone
/// rarely finds tree structure.
pub fn gaussian_starts(train: ArrayView2<f64>) -> CliResult<Vec<(String, GaussianModel)>> {
    let iid = GaussianModel::init_iid(train, CovarianceRidge::Auto)?;
    let p = iid.to_params();
    let d = train.ncols();
    let nn = median_nn_distance(train);
    let mut out = vec![("iid".to_string(), iid)];
    if !(nn > 0.0) {
        return Ok(out);
    }
    for m in RANDOM_WALK_SCALES {
        let c = nn * m;
        let params = GaussianParams {
            mu_c: Array1::zeros(d),
            mu_pi: p.mu_pi.clone(),
            sigma_c_given_pi: Array2::eye(d),
            sigma_cc: Array2::eye(d) * (c * c),
            sigma_pipi: p.sigma_pipi.clone(),
        };
        if let Ok(model) = GaussianModel::new(&params) {
            out.push((format!("random-walk-{m}"), model));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MultistartFit {
    pub start: String,
    /// Selection score per start; `None` where evaluation failed.
    pub start_scores: Vec<(String, Option<f64>)>,
    pub report: FitReport<GaussianModel>,
}

/// Picks the start with the best validation score (training tdid
/// log-likelihood without a validation set), then runs `fit_ml` from it.
/// Starts whose evaluation fails numerically are skipped.
pub fn fit_gaussian_multistart(
    train: ArrayView2<f64>,
    validation: Option<ArrayView2<f64>>,
    opts: &FitOptions,
) -> CliResult<MultistartFit> {
    let mut best: Option<(f64, String, GaussianModel)> = None;
    let mut start_scores = Vec::new();
    let mut last_err = None;
    for (name, model) in gaussian_starts(train)? {
        let score = match validation {
            Some(v) => test_log_likelihood(train, v, &model).map(|s| s.score),
            None => tdid_log_likelihood(train, &model),
        };
        let score = match score {
            Ok(s) if s.is_finite() => Some(s),
            Ok(_) => None,
            Err(e) => {
                last_err = Some(e);
                None
            }
        };
        start_scores.push((name.clone(), score));
        if let Some(s) = score {
            if best.as_ref().is_none_or(|b| s > b.0) {
                best = Some((s, name, model));
            }
        }
    }
    let Some((_, start, model)) = best else {
        return Err(CliError::Model(last_err.unwrap_or(outtree::Error::ZeroPartition)));
    };
    let report = fit_ml(train, &model, opts)?;
    Ok(MultistartFit { start, start_scores, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOptions {
    pub splits: [f64; 3],
    pub max_iters: usize,
    pub grad_tol: f64,
    pub patience: usize,
    pub bandwidth_grid: Vec<f64>,
    pub k_max: usize,
    pub restarts: usize,
}

/// Test log-likelihoods of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFold {
    pub fold: usize,
    pub seed: u64,
    pub tdid: f64,
    /// The tdid seed, which is the single-Gaussian iid fit.
    pub tdid_iid_seed: f64,
    pub tdid_start: String,
    pub tdid_iters: usize,
    pub tdid_convergence: Convergence,
    pub gmm1: f64,
    pub gmm_selected: f64,
    pub gmm_k: usize,
    pub parzen: f64,
    pub parzen_sigma: f64,
}

/// Fits the Gaussian tdid model (early-stopped on validation) and both
/// baselines on one split of `x`, scoring each on the test rows.
pub fn density_fold(x: ArrayView2<f64>, fold: usize, seed: u64, opts: &DensityOptions) -> CliResult<DensityFold> {
    let s = split_indices(x.nrows(), opts.splits, &mut substream(seed, fold as u64 + 1))?;
    let (train, val, test) = (rows(x, &s.train), rows(x, &s.validation), rows(x, &s.test));
    let init = GaussianModel::init_iid(train.view(), CovarianceRidge::Auto)?;
    let fit_opts = FitOptions {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        early_stopping: Some(EarlyStopping { validation: val.clone(), patience: opts.patience }),
        ..FitOptions::default()
    };
    let fit = fit_gaussian_multistart(train.view(), Some(val.view()), &fit_opts)?;
    let report = fit.report;
    let tdid = test_log_likelihood(train.view(), test.view(), &report.model)?.score;
    let tdid_iid_seed = test_log_likelihood(train.view(), test.view(), &init)?.score;
    let em = EmOptions { restarts: opts.restarts, seed: seed ^ (fold as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), ..EmOptions::default() };
    let gmm = baseline_gmm(train.view(), val.view(), test.view(), opts.k_max, &em)?;
    let parzen = baseline_parzen(train.view(), val.view(), test.view(), &opts.bandwidth_grid)?;
    Ok(DensityFold {
        fold,
        seed,
        tdid,
        tdid_iid_seed,
        tdid_start: fit.start,
        tdid_iters: report.trace.len(),
        tdid_convergence: report.convergence,
        gmm1: gmm.test_score_for(1).expect("k = 1 is always fitted"),
        gmm_selected: gmm.selected_test_score(),
        gmm_k: gmm.selected_k,
        parzen: parzen.test_score,
        parzen_sigma: parzen.sigma,
    })
}

/// One spiral drawn from substream 0 of `seed`, then `folds` random splits.
pub fn spiral_benchmark(spec: &SpiralSpec, folds: usize, seed: u64, opts: &DensityOptions) -> CliResult<Vec<DensityFold>> {
    let (x, _) = gen_spiral(spec, &mut substream(seed, 0));
    (0..folds).map(|f| density_fold(x.view(), f, seed, opts)).collect()
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Projection onto the top three principal axes of the sample covariance.
/// Each axis is signed so that its largest-magnitude loading is positive.
pub fn pca3(x: ArrayView2<f64>) -> CliResult<Array2<f64>> {
    let (n, d) = x.dim();
    if d < 3 {
        return Err(CliError::Data(format!("PCA to 3D needs at least 3 attributes, got {d}")));
    }
    if n < 2 {
        return Err(CliError::Data("PCA needs at least two rows".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centred = &x - &mean;
    let cov = centred.t().dot(&centred) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Array2::zeros((d, 3));
    for (j, &k) in order.iter().take(3).enumerate() {
        let v = eig.eigenvectors.column(k);
        let lead = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            axes[[i, j]] = sign * v[i];
        }
    }
    Ok(centred.dot(&axes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemisupOptions {
    pub t: usize,
    pub k: usize,
    pub alpha_true: f64,
    pub labeled: f64,
    pub raw_dims: usize,
    pub alpha_grid: Vec<f64>,
    /// Gradient iterations for the unsupervised attribute model.
    pub max_iters: usize,
    pub label_restarts: usize,
    pub max_sweeps: usize,
}

/// Accuracies of one synthetic seed on the evaluation half of the
/// unlabeled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SemisupRow {
    pub seed: u64,
    pub labeled: usize,
    pub alpha: f64,
    pub tree_accuracy: f64,
    pub majority_accuracy: f64,
    pub cv_accuracies: Vec<f64>,
}

/// Random-walk attributes: unit regression, conditional covariance
/// `0.25 I`, root covariance `4 I`.
pub fn random_walk_model(d: usize) -> CliResult<GaussianModel> {
    Ok(GaussianModel::new(&GaussianParams {
        mu_c: Array1::zeros(d),
        mu_pi: Array1::zeros(d),
        sigma_c_given_pi: Array2::eye(d),
        sigma_cc: Array2::eye(d) * 0.25,
        sigma_pipi: Array2::eye(d) * 4.0,
    })?)
}

/// One seed: attributes and labels mutated along a shared random tree,
/// PCA to 3D, an unsupervised Gaussian fit, then label inference with the
/// stickiness chosen on one half of the unlabeled nodes and accuracy
/// reported on the other half.
pub fn semisup_seed(seed: u64, opts: &SemisupOptions) -> CliResult<SemisupRow> {
    let draw = sample_dataset(&random_walk_model(opts.raw_dims)?, opts.t, seed)?;
    let truth = sample_tree_labels(&draw.tree, &LabelModel::new(opts.alpha_true, opts.k)?, &mut substream(seed, u64::MAX - 1));
    let x = pca3(draw.data.view())?;

    let mut order: Vec<usize> = (0..opts.t).collect();
    order.shuffle(&mut substream(seed, u64::MAX - 2));
    let n_obs = ((opts.labeled * opts.t as f64).round() as usize).clamp(1, opts.t - 2);
    let mut y = vec![None; opts.t];
    for &i in &order[..n_obs] {
        y[i] = Some(truth[i]);
    }
    let unlabeled = &order[n_obs..];
    let (cv_half, eval_half) = unlabeled.split_at(unlabeled.len() / 2);
    let data = LabeledDataset::new(x.clone(), y, opts.k)?;

    let fit_opts = FitOptions { max_iters: opts.max_iters, ..FitOptions::default() };
    let model = fit_gaussian_multistart(x.view(), None, &fit_opts)?.report.model;

    let greedy = GreedyOptions {
        restarts: opts.label_restarts,
        max_sweeps: opts.max_sweeps,
        seed,
        joint_theta_iters: 0,
    };
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    let mut cv_accuracies = Vec::with_capacity(opts.alpha_grid.len());
    for &alpha in &opts.alpha_grid {
        let res = greedy_label_inference(&data, &model, &LabelModel::new(alpha, opts.k)?, &greedy)?;
        let acc = accuracy(&res.labels, &truth, cv_half);
        cv_accuracies.push(acc);
        let take = match &best {
            None => true,
            Some((a, b, _)) => acc > b + 1e-12 || ((acc - b).abs() <= 1e-12 && (alpha - 0.5).abs() < (a - 0.5).abs()),
        };
        if take {
            best = Some((alpha, acc, res.labels));
        }
    }
    let (alpha, _, labels) = best.ok_or_else(|| CliError::Config("alpha grid is empty".into()))?;
    Ok(SemisupRow {
        seed,
        labeled: n_obs,
        alpha,
        tree_accuracy: accuracy(&labels, &truth, eval_half),
        majority_accuracy: accuracy(&majority_baseline(&data), &truth, eval_half),
        cv_accuracies,
    })
}

/// Error rates by labeled count, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurvePoint {
    pub labeled: usize,
    pub tree_error: (f64, f64),
    pub majority_error: (f64, f64),
    pub seeds: usize,
}

pub fn error_vs_labels(rows: &[SemisupRow]) -> Vec<ErrorCurvePoint> {
    let mut counts: Vec<usize> = rows.iter().map(|r| r.labeled).collect();
    counts.sort_unstable();
    counts.dedup();
    counts
        .into_iter()
        .map(|labeled| {
            let sel: Vec<&SemisupRow> = rows.iter().filter(|r| r.labeled == labeled).collect();
            let tree: Vec<f64> = sel.iter().map(|r| 1.0 - r.tree_accuracy).collect();
            let maj: Vec<f64> = sel.iter().map(|r| 1.0 - r.majority_accuracy).collect();
            ErrorCurvePoint { labeled, tree_error: mean_se(&tree), majority_error: mean_se(&maj), seeds: sel.len() }
        })
        .collect()
}

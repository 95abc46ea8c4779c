//! The tdid likelihood, its gradient, gradient-ascent training and the
//! train-conditioned test score.

use std::fmt;

use ndarray::{concatenate, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::models::{build_beta, MutationModel};
use crate::treemath::{log_partition, AugmentedFactor};

/// `(T-1) ln T`, the log count of out-trees on `T` nodes.
pub fn log_tree_count(t: usize) -> f64 {
    if t <= 1 {
        0.0
    } else {
        (t - 1) as f64 * (t as f64).ln()
    }
}

/// `ln Z` for the dataset; a single sample gives its root weight.
pub fn log_partition_of<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<f64> {
    match data.nrows() {
        0 => Err(Error::TooFewSamples { needed: 1, got: 0 }),
        1 => {
            model.check_row(data.row(0))?;
            let v = model.log_marginal(data.row(0));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteWeight { child: 0, parent: None })
            }
        }
        _ => {
            let (beta, roots) = build_beta(data, model)?;
            Ok(log_partition(&beta, &roots)?.log_z)
        }
    }
}

/// `ln Z - (T-1) ln T`.
pub fn tdid_log_likelihood<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<f64> {
    let t = data.nrows();
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    Ok(log_partition_of(data, model)? - log_tree_count(t))
}

/// Sum of root-marginal log densities.
pub fn iid_log_likelihood<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<f64> {
    let mut s = 0.0;
    for x in data.rows() {
        model.check_row(x)?;
        s += model.log_marginal(x);
    }
    Ok(s)
}

/// Value and gradient of the tdid log-likelihood, sharing one inverse of
/// the bordered Laplacian across every parameter.
pub fn tdid_value_and_grad<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<(f64, Vec<f64>)> {
    let t = data.nrows();
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    let (beta, roots) = build_beta(data, model)?;
    let f = AugmentedFactor::new(&beta, &roots)?;
    let (rho, omega) = f.gradient_coefficients(&beta);
    let mut g = vec![0.0; model.num_params()];
    model.accumulate_weight_gradient(data, &rho, &omega, &mut g);
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFault("non-finite gradient".into()));
    }
    Ok((f.log_partition() - log_tree_count(t), g))
}

pub fn grad_tdid<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<Vec<f64>> {
    Ok(tdid_value_and_grad(data, model)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once the gradient sup-norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo_c: f64,
    /// Smallest step tried before the line search gives up.
    pub min_step: f64,
    /// Early stopping on the held-out tdid score of `validation`, keeping
    /// the best iterate; stops after `patience` non-improving iterations.
    pub early_stopping: Option<EarlyStopping>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub validation: ndarray::Array2<f64>,
    pub patience: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iters: 500, grad_tol: 1e-5, armijo_c: 1e-4, min_step: 1e-12, early_stopping: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
    EarlyStopped,
}

impl fmt::Display for Convergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convergence::GradientTolerance => "gradient-tolerance",
            Convergence::MaxIterations => "max-iterations",
            Convergence::LineSearchFailure => "line-search-failure",
            Convergence::EarlyStopped => "early-stopped",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// tdid log-likelihood plus the model penalty after this iteration.
    pub objective: f64,
    pub step: f64,
    /// Gradient sup-norm at the start of the iteration.
    pub grad_norm: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitReport<M> {
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
    pub trace: Vec<IterationRecord>,
    pub convergence: Convergence,
    pub model: M,
}

impl<M> FitReport<M> {
    /// Tab-separated iteration log with a header and a trailing reason line.
    pub fn log_text(&self) -> String {
        let mut out = String::from("iteration\tobjective\tstep\tgrad_norm\tvalidation\n");
        for r in &self.trace {
            let v = r.validation.map_or_else(|| "-".to_string(), |v| format!("{v:?}"));
            out.push_str(&format!("{}\t{:?}\t{:?}\t{:?}\t{}\n", r.iteration, r.objective, r.step, r.grad_norm, v));
        }
        out.push_str(&format!(
            "# initial={:?} final={:?} reason={}\n",
            self.initial_log_likelihood, self.final_log_likelihood, self.convergence
        ));
        out
    }
}

fn objective_and_grad<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<(f64, f64, Vec<f64>)> {
    let (ll, mut g) = tdid_value_and_grad(data, model)?;
    model.grad_penalty(&mut g);
    Ok((ll + model.penalty(), ll, g))
}

fn objective<M: MutationModel>(data: ArrayView2<f64>, model: &M) -> Result<f64> {
    Ok(tdid_log_likelihood(data, model)? + model.penalty())
}

/// Gradient ascent on the tdid log-likelihood (plus the model penalty)
/// with a backtracking Armijo line search.
///
/// Each search starts from a unit step along the gradient and halves.
/// Trial points whose weights are not finite count as rejected.
pub fn fit_ml<M: MutationModel>(data: ArrayView2<f64>, model0: &M, opts: &FitOptions) -> Result<FitReport<M>> {
    if !(opts.grad_tol >= 0.0) || !(opts.min_step > 0.0) || opts.min_step > 1.0 || !(opts.armijo_c > 0.0) {
        return Err(Error::InvalidInput("fit options must be positive".into()));
    }
    let mut model = model0.clone();
    let (mut obj, initial_ll, mut grad) = objective_and_grad(data, &model)?;
    let mut ll = initial_ll;
    let mut trace = Vec::new();
    let validate = |m: &M| -> Option<Result<f64>> {
        opts.early_stopping
            .as_ref()
            .map(|es| test_log_likelihood(data, es.validation.view(), m).map(|s| s.score))
    };
    let mut best: Option<(f64, M, f64)> = match validate(&model) {
        Some(v) => Some((v?, model.clone(), ll)),
        None => None,
    };
    let mut since_best = 0;
    let mut convergence = Convergence::MaxIterations;
    for iteration in 1..=opts.max_iters {
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_norm < opts.grad_tol {
            convergence = Convergence::GradientTolerance;
            break;
        }
        let params = model.params();
        let slope: f64 = grad.iter().map(|g| g * g).sum();
        let mut step = 1.0;
        let mut accepted = None;
        while step >= opts.min_step {
            let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
            if let Ok(m) = model.with_params(&trial) {
                if let Ok(v) = objective(data, &m) {
                    if v > obj && v >= obj + opts.armijo_c * step * slope {
                        accepted = Some(m);
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            convergence = Convergence::LineSearchFailure;
            break;
        };
        model = next;
        let (o, l, g) = objective_and_grad(data, &model)?;
        obj = o;
        ll = l;
        grad = g;
        let validation = match validate(&model) {
            Some(v) => Some(v?),
            None => None,
        };
        trace.push(IterationRecord { iteration, objective: obj, step, grad_norm, validation });
        if let (Some(v), Some(es), Some(b)) = (validation, opts.early_stopping.as_ref(), best.as_mut()) {
            if v > b.0 {
                *b = (v, model.clone(), ll);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= es.patience {
                    convergence = Convergence::EarlyStopped;
                    break;
                }
            }
        }
    }
    if let Some((_, m, l)) = best {
        model = m;
        ll = l;
    }
    Ok(FitReport { initial_log_likelihood: initial_ll, final_log_likelihood: ll, trace, convergence, model })
}

/// `ln p(test | train)` with its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestScore {
    pub score: f64,
    pub log_z_union: f64,
    pub log_z_train: f64,
    /// `(T-1) ln T - (T+U-1) ln (T+U)`.
    pub correction: f64,
}

impl TestScore {
    pub fn reassembled(&self) -> f64 {
        self.log_z_union - self.log_z_train + self.correction
    }
}

/// Score of `test` given `train`: the partition function of the union (train
/// rows first) against that of the training set alone.
pub fn test_log_likelihood<M: MutationModel>(
    train: ArrayView2<f64>,
    test: ArrayView2<f64>,
    model: &M,
) -> Result<TestScore> {
    let (t, u) = (train.nrows(), test.nrows());
    if t == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if train.ncols() != test.ncols() {
        return Err(Error::DimensionMismatch { expected: train.ncols(), got: test.ncols() });
    }
    let union = concatenate(Axis(0), &[train, test]).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let log_z_union = log_partition_of(union.view(), model)?;
    let log_z_train = log_partition_of(train, model)?;
    let correction = log_tree_count(t) - log_tree_count(t + u);
    Ok(TestScore { score: log_z_union - log_z_train + correction, log_z_union, log_z_train, correction })
}

//! Label inference over a latent out-tree: labels mutate along the same
//! tree as the attributes, and missing labels are chosen greedily to raise
//! the joint partition function.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::likelihood::{fit_ml, FitOptions};
use crate::models::{build_beta, MutationModel};
use crate::sampler::substream;
use crate::treemath::{log_partition, BetaEdit, LogDetSession, RootWeights, WeightMatrix};

/// Flips whose exact gain does not exceed this are not committed.
pub const COMMIT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    /// `None` marks a missing label.
    pub y: Vec<Option<usize>>,
    pub k: usize,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Vec<Option<usize>>, k: usize) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if k < 2 {
            return Err(Error::Label("need at least two classes".into()));
        }
        if let Some(bad) = y.iter().flatten().find(|&&c| c >= k) {
            return Err(Error::Label(format!("label {bad} outside 0..{k}")));
        }
        if y.iter().all(Option::is_none) {
            return Err(Error::Label("at least one label must be observed".into()));
        }
        Ok(LabeledDataset { x, y, k })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn missing(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i].is_none()).collect()
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i].is_some()).collect()
    }
}

/// Sticky label mutation: a child keeps its parent's label with
/// probability `alpha`, otherwise moves uniformly to one of the other
/// `K - 1` classes. The root label is uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelModel {
    alpha: f64,
    k: usize,
    log_same: f64,
    log_diff: f64,
}

impl LabelModel {
    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("stickiness {alpha} outside (0, 1)")));
        }
        if k < 2 {
            return Err(Error::Label("need at least two classes".into()));
        }
        Ok(LabelModel { alpha, k, log_same: alpha.ln(), log_diff: ((1.0 - alpha) / (k - 1) as f64).ln() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// `ln p(y_child | y_parent)`.
    pub fn log_transition(&self, child: usize, parent: usize) -> f64 {
        if child == parent {
            self.log_same
        } else {
            self.log_diff
        }
    }

    pub fn log_root(&self) -> f64 {
        -(self.k as f64).ln()
    }

    fn sample_child<R: Rng + ?Sized>(&self, parent: usize, rng: &mut R) -> usize {
        if rng.random::<f64>() < self.alpha {
            parent
        } else {
            let j = rng.random_range(0..self.k - 1);
            if j >= parent {
                j + 1
            } else {
                j
            }
        }
    }
}

/// Joint model over attributes with the label appended as a last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledModel<M> {
    pub inner: M,
    pub labels: LabelModel,
}

impl<M: MutationModel> LabeledModel<M> {
    fn split<'a>(&self, x: ArrayView1<'a, f64>) -> (ArrayView1<'a, f64>, usize) {
        let d = self.inner.dim();
        (x.slice_move(s![..d]), x[d] as usize)
    }
}

/// Attributes with the labels appended as a last column.
pub fn with_label_column(x: ArrayView2<f64>, labels: &[usize]) -> Array2<f64> {
    let col = Array1::from_iter(labels.iter().map(|&c| c as f64)).insert_axis(Axis(1));
    concatenate(Axis(1), &[x, col.view()]).expect("row counts agree")
}

impl<M: MutationModel> MutationModel for LabeledModel<M> {
    fn family(&self) -> &'static str {
        self.inner.family()
    }

    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params()
    }

    fn with_params(&self, params: &[f64]) -> Result<Self> {
        Ok(LabeledModel { inner: self.inner.with_params(params)?, labels: self.labels })
    }

    fn check_row(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let d = self.inner.dim();
        self.inner.check_row(x.slice(s![..d]))?;
        let y = x[d];
        if y.fract() != 0.0 || y < 0.0 || y >= self.labels.k as f64 {
            return Err(Error::Label(format!("label value {y} outside 0..{}", self.labels.k)));
        }
        Ok(())
    }

    fn log_marginal(&self, x: ArrayView1<f64>) -> f64 {
        let (a, _) = self.split(x);
        self.inner.log_marginal(a) + self.labels.log_root()
    }

    fn log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> f64 {
        let (a, yc) = self.split(child);
        let (b, yp) = self.split(parent);
        self.inner.log_conditional(a, b) + self.labels.log_transition(yc, yp)
    }

    fn log_conditional_matrix(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let d = self.inner.dim();
        let mut m = self.inner.log_conditional_matrix(data.slice(s![.., ..d]));
        let y = data.column(d);
        for ((u, v), x) in m.indexed_iter_mut() {
            if u != v {
                *x += self.labels.log_transition(y[u] as usize, y[v] as usize);
            }
        }
        m
    }

    fn grad_log_marginal(&self, x: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        self.inner.grad_log_marginal(self.split(x).0, weight, out)
    }

    fn grad_log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        self.inner.grad_log_conditional(self.split(child).0, self.split(parent).0, weight, out)
    }

    fn accumulate_weight_gradient(&self, data: ArrayView2<f64>, root: &[f64], edge: &Array2<f64>, out: &mut [f64]) {
        let d = self.inner.dim();
        self.inner.accumulate_weight_gradient(data.slice(s![.., ..d]), root, edge, out)
    }

    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let x = self.inner.sample_marginal(rng);
        let y = rng.random_range(0..self.labels.k);
        x.into_iter().chain(std::iter::once(y as f64)).collect()
    }

    fn sample_conditional<R: Rng + ?Sized>(&self, parent: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        let (b, yp) = self.split(parent);
        let x = self.inner.sample_conditional(b, rng);
        let y = self.labels.sample_child(yp, rng);
        x.into_iter().chain(std::iter::once(y as f64)).collect()
    }

    fn penalty(&self) -> f64 {
        self.inner.penalty()
    }

    fn grad_penalty(&self, out: &mut [f64]) {
        self.inner.grad_penalty(out)
    }

    fn to_document(&self) -> Document {
        let mut doc = self.inner.to_document();
        doc.put_floats("label_alpha", &[1], vec![self.labels.alpha]);
        doc.put_ints("label_classes", &[1], vec![self.labels.k as u64]);
        doc
    }
}

/// Joint weights `ln beta_uv = ln p(X_u | X_v) + ln p(y_u | y_v)` and root
/// weights `ln p(X_r) - ln K`.
pub fn build_joint_beta<M: MutationModel>(
    x: ArrayView2<f64>,
    labels: &[Option<usize>],
    model: &M,
    label_model: &LabelModel,
) -> Result<(WeightMatrix, RootWeights)> {
    let y: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::Label(format!("label {i} is unassigned"))))
        .collect::<Result<_>>()?;
    if let Some(&bad) = y.iter().find(|&&c| c >= label_model.k) {
        return Err(Error::Label(format!("label {bad} outside 0..{}", label_model.k)));
    }
    let (beta, roots) = build_beta(x, model)?;
    joint_from_base(beta.log_weights(), &roots, &y, label_model)
}

fn joint_from_base(
    base: &Array2<f64>,
    roots: &RootWeights,
    y: &[usize],
    lm: &LabelModel,
) -> Result<(WeightMatrix, RootWeights)> {
    let log = Array2::from_shape_fn(base.dim(), |(u, v)| {
        if u == v {
            f64::NEG_INFINITY
        } else {
            base[[u, v]] + lm.log_transition(y[u], y[v])
        }
    });
    let log_roots = roots.log_values().iter().map(|l| l + lm.log_root()).collect();
    Ok((WeightMatrix::from_log_weights(log)?, RootWeights::from_log(log_roots)?))
}

/// Current labels plus a factored joint Laplacian kept in step with them.
#[derive(Debug, Clone)]
pub struct InferenceState {
    base_log_beta: Array2<f64>,
    label_model: LabelModel,
    labels: Vec<usize>,
    observed: Vec<bool>,
    session: LogDetSession,
    sweeps: usize,
}

impl InferenceState {
    /// `labels` must be a full assignment; `observed[i]` freezes label `i`.
    pub fn new<M: MutationModel>(
        x: ArrayView2<f64>,
        labels: Vec<usize>,
        observed: Vec<bool>,
        model: &M,
        label_model: LabelModel,
    ) -> Result<Self> {
        let (beta, roots) = build_beta(x, model)?;
        Self::from_base(beta.log_weights().clone(), &roots, labels, observed, label_model)
    }

    fn from_base(
        base_log_beta: Array2<f64>,
        base_roots: &RootWeights,
        labels: Vec<usize>,
        observed: Vec<bool>,
        label_model: LabelModel,
    ) -> Result<Self> {
        let t = base_log_beta.nrows();
        if labels.len() != t || observed.len() != t {
            return Err(Error::DimensionMismatch { expected: t, got: labels.len().min(observed.len()) });
        }
        if labels.iter().any(|&c| c >= label_model.k) {
            return Err(Error::Label("label outside the class range".into()));
        }
        let (beta, roots) = joint_from_base(&base_log_beta, base_roots, &labels, &label_model)?;
        let session = LogDetSession::new(&beta, &roots)?;
        Ok(InferenceState { base_log_beta, label_model, labels, observed, session, sweeps: 0 })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    /// Incrementally maintained `ln Z` of the joint weights.
    pub fn log_partition(&self) -> f64 {
        self.session.log_partition()
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// `ln Z` recomputed from scratch.
    pub fn recompute_log_partition(&self) -> Result<f64> {
        let beta = self.session.weight_matrix()?;
        Ok(log_partition(&beta, self.session.roots())?.log_z)
    }

    fn flip_edits(&self, i: usize, new_label: usize) -> Vec<BetaEdit> {
        let lm = &self.label_model;
        let old = self.labels[i];
        let mut edits = Vec::with_capacity(2 * self.labels.len());
        for (v, &yv) in self.labels.iter().enumerate() {
            if v == i {
                continue;
            }
            let (before, after) = (lm.log_transition(old, yv), lm.log_transition(new_label, yv));
            if before != after {
                // row i: i as child of v; column i: v as child of i
                edits.push(BetaEdit { child: i, parent: v, log_weight: self.base_log_beta[[i, v]] + after });
                edits.push(BetaEdit {
                    child: v,
                    parent: i,
                    log_weight: self.base_log_beta[[v, i]] + lm.log_transition(yv, new_label),
                });
            }
        }
        edits
    }

    fn check_flip(&self, i: usize, new_label: usize) -> Result<()> {
        if i >= self.labels.len() {
            return Err(Error::InvalidInput(format!("node {i} out of range")));
        }
        if self.observed[i] {
            return Err(Error::Label(format!("label {i} is observed and cannot change")));
        }
        if new_label >= self.label_model.k {
            return Err(Error::Label(format!("label {new_label} outside 0..{}", self.label_model.k)));
        }
        if new_label == self.labels[i] {
            return Err(Error::Label(format!("node {i} already has label {new_label}")));
        }
        Ok(())
    }

    /// Linearized change of `ln Z` for a flip, from the current inverse.
    pub fn screen_delta(&self, i: usize, new_label: usize) -> f64 {
        let lm = &self.label_model;
        let old = self.labels[i];
        let mut d = 0.0;
        for (v, &yv) in self.labels.iter().enumerate() {
            if v == i {
                continue;
            }
            let row = lm.log_transition(new_label, yv) - lm.log_transition(old, yv);
            let col = lm.log_transition(yv, new_label) - lm.log_transition(yv, old);
            if row != 0.0 {
                d += row * self.session.log_edge_sensitivity(i, v);
            }
            if col != 0.0 {
                d += col * self.session.log_edge_sensitivity(v, i);
            }
        }
        d
    }

    fn edited_session(&self, i: usize, new_label: usize) -> Result<LogDetSession> {
        let mut scratch = self.session.clone();
        match scratch.apply(&self.flip_edits(i, new_label)) {
            Ok(_) => {}
            Err(Error::CapacitanceBreakdown { .. }) => scratch.refactor()?,
            Err(e) => return Err(e),
        }
        Ok(scratch)
    }

    /// Exact change of `ln Z` if node `i` took `new_label`; nothing is
    /// committed.
    pub fn flip_delta(&self, i: usize, new_label: usize) -> Result<f64> {
        self.check_flip(i, new_label)?;
        Ok(self.edited_session(i, new_label)?.log_partition() - self.log_partition())
    }

    /// Applies a flip and returns the new `ln Z`.
    pub fn commit(&mut self, i: usize, new_label: usize) -> Result<f64> {
        self.check_flip(i, new_label)?;
        let mut next = self.edited_session(i, new_label)?;
        if next.needs_refactor() {
            next.refactor()?;
        }
        self.session = next;
        self.labels[i] = new_label;
        Ok(self.log_partition())
    }

    /// Exact `ln Z` change for every class at node `i` (zero at its own label).
    pub fn class_deltas(&self, i: usize) -> Result<Vec<f64>> {
        (0..self.label_model.k)
            .map(|c| if c == self.labels[i] { Ok(0.0) } else { self.flip_delta(i, c) })
            .collect()
    }

    /// One pass over the unobserved nodes in random order. Returns the number
    /// of committed flips.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let mut order: Vec<usize> = (0..self.labels.len()).filter(|&i| !self.observed[i]).collect();
        order.shuffle(rng);
        let mut commits = 0;
        for i in order {
            let current = self.labels[i];
            let best = (0..self.label_model.k)
                .filter(|&c| c != current)
                .map(|c| (c, self.screen_delta(i, c)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let Some((c, _)) = best else { continue };
            if self.flip_delta(i, c)? > COMMIT_THRESHOLD {
                self.commit(i, c)?;
                commits += 1;
            }
        }
        self.sweeps += 1;
        Ok(commits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOptions {
    pub restarts: usize,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Gradient steps on the attribute model after each sweep, with the
    /// current labels; 0 keeps the model fixed.
    pub joint_theta_iters: usize,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        GreedyOptions { restarts: 5, max_sweeps: 50, seed: 0, joint_theta_iters: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct InferenceResult<M> {
    pub labels: Vec<usize>,
    pub log_partition: f64,
    /// Final `ln Z` of each restart.
    pub restart_log_partitions: Vec<f64>,
    pub state: InferenceState,
    pub model: M,
}

/// Hill climbing over the missing labels, best of several random restarts.
/// Restart `k` draws from substream `k` of `opts.seed`.
pub fn greedy_label_inference<M: MutationModel>(
    data: &LabeledDataset,
    model: &M,
    label_model: &LabelModel,
    opts: &GreedyOptions,
) -> Result<InferenceResult<M>> {
    if label_model.k != data.k {
        return Err(Error::Label("label model and dataset disagree on K".into()));
    }
    let observed: Vec<bool> = data.y.iter().map(Option::is_some).collect();
    let (beta, roots) = build_beta(data.x.view(), model)?;
    let restarts = opts.restarts.max(1);
    let mut best: Option<InferenceResult<M>> = None;
    let mut restart_log_partitions = Vec::with_capacity(restarts);
    for k in 0..restarts {
        let mut rng = substream(opts.seed, k as u64);
        let labels: Vec<usize> = data.y.iter().map(|c| c.unwrap_or_else(|| rng.random_range(0..data.k))).collect();
        let mut current = model.clone();
        let mut state =
            InferenceState::from_base(beta.log_weights().clone(), &roots, labels, observed.clone(), *label_model)?;
        if data.y.iter().any(Option::is_none) {
            for _ in 0..opts.max_sweeps {
                let commits = state.sweep(&mut rng)?;
                if opts.joint_theta_iters > 0 {
                    let joint = LabeledModel { inner: current.clone(), labels: *label_model };
                    let xy = with_label_column(data.x.view(), state.labels());
                    let fit_opts = FitOptions { max_iters: opts.joint_theta_iters, ..FitOptions::default() };
                    current = fit_ml(xy.view(), &joint, &fit_opts)?.model.inner;
                    let (b, r) = build_beta(data.x.view(), &current)?;
                    let sweeps = state.sweeps;
                    state = InferenceState::from_base(
                        b.log_weights().clone(),
                        &r,
                        state.labels.clone(),
                        observed.clone(),
                        *label_model,
                    )?;
                    state.sweeps = sweeps;
                }
                if commits == 0 {
                    break;
                }
            }
        }
        let lz = state.log_partition();
        restart_log_partitions.push(lz);
        if best.as_ref().is_none_or(|b| lz > b.log_partition) {
            best = Some(InferenceResult {
                labels: state.labels.clone(),
                log_partition: lz,
                restart_log_partitions: Vec::new(),
                state,
                model: current,
            });
        }
    }
    let mut out = best.expect("at least one restart");
    out.restart_log_partitions = restart_log_partitions;
    Ok(out)
}

/// Best completion of the missing labels by exhaustive search, for small
/// problems (`K^missing <= 4096`).
pub fn exhaustive_best_completion<M: MutationModel>(
    data: &LabeledDataset,
    model: &M,
    label_model: &LabelModel,
) -> Result<(Vec<usize>, f64)> {
    let missing = data.missing();
    let count = (data.k as f64).powi(missing.len() as i32);
    if count > 4096.0 {
        return Err(Error::InvalidInput(format!("{count} completions is too many to enumerate")));
    }
    let (beta, roots) = build_beta(data.x.view(), model)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for code in 0..count as usize {
        let mut labels: Vec<usize> = data.y.iter().map(|c| c.unwrap_or(0)).collect();
        let mut rest = code;
        for &i in &missing {
            labels[i] = rest % data.k;
            rest /= data.k;
        }
        let (b, r) = joint_from_base(beta.log_weights(), &roots, &labels, label_model)?;
        let lz = log_partition(&b, &r)?.log_z;
        if best.as_ref().is_none_or(|(_, z)| lz > *z) {
            best = Some((labels, lz));
        }
    }
    Ok(best.expect("at least one completion"))
}

/// Every missing label set to the most frequent observed label (smallest
/// class on ties).
pub fn majority_baseline(data: &LabeledDataset) -> Vec<usize> {
    let mut counts = vec![0usize; data.k];
    for c in data.y.iter().flatten() {
        counts[*c] += 1;
    }
    let top = (0..data.k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    data.y.iter().map(|c| c.unwrap_or(top)).collect()
}

/// Fraction of `idx` where `pred` matches `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter().filter(|&&i| pred[i] == truth[i]).count() as f64 / idx.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSelection {
    pub best: f64,
    /// Mean held-out accuracy per grid value.
    pub accuracies: Vec<f64>,
}

/// Picks the stickiness by held-out accuracy on masked observed labels.
///
/// The observed labels are shuffled once (substream `u64::MAX` of the
/// seed) and split into `folds` groups; each group is hidden in turn.
/// Ties go to the grid value nearest 0.5.
pub fn cross_validate_alpha<M: MutationModel>(
    data: &LabeledDataset,
    model: &M,
    grid: &[f64],
    folds: usize,
    opts: &GreedyOptions,
) -> Result<AlphaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("alpha grid is empty".into()));
    }
    if grid.len() == 1 {
        LabelModel::new(grid[0], data.k)?;
        return Ok(AlphaSelection { best: grid[0], accuracies: vec![f64::NAN] });
    }
    let mut observed = data.observed();
    if folds < 2 || observed.len() < folds + 1 {
        return Err(Error::Label(format!(
            "{} observed labels cannot be split into {folds} folds with labels left over",
            observed.len()
        )));
    }
    observed.shuffle(&mut substream(opts.seed, u64::MAX));
    let truth: Vec<usize> = data.y.iter().map(|c| c.unwrap_or(0)).collect();
    let mut accuracies = vec![0.0; grid.len()];
    for f in 0..folds {
        let held: Vec<usize> = observed.iter().enumerate().filter(|(j, _)| j % folds == f).map(|(_, &i)| i).collect();
        let mut y = data.y.clone();
        for &i in &held {
            y[i] = None;
        }
        let masked = LabeledDataset::new(data.x.clone(), y, data.k)?;
        for (g, &alpha) in grid.iter().enumerate() {
            let lm = LabelModel::new(alpha, data.k)?;
            let fold_opts = GreedyOptions { seed: opts.seed.wrapping_add(f as u64), ..opts.clone() };
            let res = greedy_label_inference(&masked, model, &lm, &fold_opts)?;
            accuracies[g] += accuracy(&res.labels, &truth, &held) / folds as f64;
        }
    }
    let mut best = 0;
    for g in 1..grid.len() {
        let better = accuracies[g] > accuracies[best] + 1e-12;
        let tie = (accuracies[g] - accuracies[best]).abs() <= 1e-12;
        if better || (tie && (grid[g] - 0.5).abs() < (grid[best] - 0.5).abs()) {
            best = g;
        }
    }
    Ok(AlphaSelection { best: grid[best], accuracies })
}

/// Labels mutated along `tree`: uniform at the root, then sticky copies.
pub fn sample_tree_labels<R: Rng + ?Sized>(
    tree: &crate::tree::OutTree,
    label_model: &LabelModel,
    rng: &mut R,
) -> Vec<usize> {
    let mut y = vec![0; tree.len()];
    for v in tree.topological_order() {
        y[v] = match tree.parent(v) {
            None => rng.random_range(0..label_model.k),
            Some(p) => label_model.sample_child(y[p], rng),
        };
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CovarianceRidge, GaussianModel};
    use crate::treemath::edge_marginals;
    use ndarray::array;

    fn points() -> Array2<f64> {
        array![[0.0, 0.0], [0.2, 0.1], [3.0, 3.1], [3.2, 2.9], [0.1, -0.2], [2.9, 3.0]]
    }

    fn model() -> GaussianModel {
        GaussianModel::init_iid(points().view(), CovarianceRidge::Auto)
            .unwrap()
            .with_conditional_scale(0.05)
            .unwrap()
    }

    #[test]
    fn label_model_ratio() {
        let lm = LabelModel::new(0.9, 2).unwrap();
        let r = (lm.log_transition(1, 1) - lm.log_transition(0, 1)).exp();
        assert!((r - 9.0).abs() < 1e-12);
        assert!(LabelModel::new(1.0, 2).is_err());
    }

    #[test]
    fn uninformative_alpha_keeps_marginals() {
        let x = points();
        let m = model();
        let lm = LabelModel::new(1.0 / 3.0, 3).unwrap();
        let y: Vec<Option<usize>> = vec![Some(0), Some(2), Some(1), Some(1), Some(0), Some(2)];
        let (jb, jr) = build_joint_beta(x.view(), &y, &m, &lm).unwrap();
        let (b, r) = build_beta(x.view(), &m).unwrap();
        let a = edge_marginals(&jb, &jr, false).unwrap();
        let c = edge_marginals(&b, &r, false).unwrap();
        for (p, q) in a.w.iter().zip(c.w.iter()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn flip_delta_matches_recomputation_and_reverses() {
        let x = points();
        let lm = LabelModel::new(0.8, 3).unwrap();
        let labels = vec![0, 1, 2, 2, 0, 1];
        let mut st = InferenceState::new(x.view(), labels, vec![false; 6], &model(), lm).unwrap();
        let before = st.log_partition();
        let d = st.flip_delta(1, 0).unwrap();
        st.commit(1, 0).unwrap();
        let after = st.recompute_log_partition().unwrap();
        assert!((after - before - d).abs() < 1e-8);
        let back = st.flip_delta(1, 1).unwrap();
        assert!((back + d).abs() < 1e-9);
        assert!(st.flip_delta(1, 0).is_err());
    }

    #[test]
    fn observed_labels_are_frozen() {
        let x = points();
        let lm = LabelModel::new(0.8, 2).unwrap();
        let st = InferenceState::new(x.view(), vec![0; 6], vec![true; 6], &model(), lm).unwrap();
        assert!(st.flip_delta(0, 1).is_err());
    }

    #[test]
    fn greedy_matches_exhaustive_on_two_clusters() {
        let x = points();
        let data = LabeledDataset::new(x, vec![Some(0), None, Some(1), Some(1), Some(0), None], 2).unwrap();
        let lm = LabelModel::new(0.9, 2).unwrap();
        let res = greedy_label_inference(&data, &model(), &lm, &GreedyOptions::default()).unwrap();
        assert_eq!(res.labels[1], 0);
        let (ex, lz) = exhaustive_best_completion(&data, &model(), &lm).unwrap();
        assert_eq!(ex, res.labels);
        assert!((lz - res.log_partition).abs() < 1e-8);
    }

    #[test]
    fn fully_observed_is_untouched() {
        let data = LabeledDataset::new(points(), vec![Some(1); 6], 2).unwrap();
        let lm = LabelModel::new(0.9, 2).unwrap();
        let res = greedy_label_inference(&data, &model(), &lm, &GreedyOptions::default()).unwrap();
        assert_eq!(res.labels, vec![1; 6]);
        assert_eq!(res.state.sweeps(), 0);
    }

    #[test]
    fn majority_fills_missing() {
        let data = LabeledDataset::new(points(), vec![Some(1), None, Some(0), Some(1), None, None], 2).unwrap();
        assert_eq!(majority_baseline(&data), vec![1, 1, 0, 1, 1, 1]);
    }

    #[test]
    fn joint_theta_option_runs() {
        let data = LabeledDataset::new(points(), vec![Some(0), None, Some(1), None, None, None], 2).unwrap();
        let lm = LabelModel::new(0.9, 2).unwrap();
        let opts = GreedyOptions { joint_theta_iters: 3, restarts: 1, ..GreedyOptions::default() };
        let res = greedy_label_inference(&data, &model(), &lm, &opts).unwrap();
        assert_eq!((res.labels[0], res.labels[2]), (0, 1));
        assert_ne!(res.model, model());
        assert!((res.state.recompute_log_partition().unwrap() - res.log_partition).abs() < 1e-8);
    }
}

//! Out-tree partition functions via the directed matrix-tree theorem.
//!
//! Given a weight matrix `beta` with `beta[u][v]` the weight of the edge
//! `v -> u` (child `u` choosing parent `v`), the out-Laplacian is
//! `Q = diag(beta 1) - beta` and the total weight of all out-trees rooted at
//! `r` is the principal cofactor `Z_r = det(Q with row/col r removed)`. The
//! root-weighted total `Z = sum_r p_r Z_r` comes from a single determinant of
//! the bordered matrix
//!
//! ```text
//!        [  1   p^T ]
//!   Q̂ =  [ -p    Q  ]     with p the normalized root weights,
//! ```
//!
//! since `det Q̂ = det(Q + p p^T) = sum_r p_r Z_r` when the rows of `Q` sum to
//! zero. Everything is evaluated in the log domain: weights are stored as
//! logs, rescaled by their maximum before exponentiation, and the rescaling
//! is added back as `(T - 1) * shift` because every out-tree has `T - 1`
//! edges.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::linalg::{logsumexp, Lu};
use crate::tree::OutTree;

/// Largest `T` accepted by the enumeration routines.
pub const MAX_ENUMERATION_SIZE: usize = 7;

/// `T x T` nonnegative edge weights with a structurally zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    log: Array2<f64>,
    scaled: Array2<f64>,
    shift: f64,
}

impl WeightMatrix {
    /// Builds from log-weights. The diagonal is ignored and forced to `-inf`.
    pub fn from_log_weights(mut log: Array2<f64>) -> Result<Self> {
        let t = log.nrows();
        if log.ncols() != t {
            return Err(Error::DimensionMismatch { expected: t, got: log.ncols() });
        }
        if t < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: t });
        }
        let mut shift = f64::NEG_INFINITY;
        for ((u, v), x) in log.indexed_iter_mut() {
            if u == v {
                *x = f64::NEG_INFINITY;
                continue;
            }
            if x.is_nan() || *x == f64::INFINITY {
                return Err(Error::NonFiniteWeight { child: u, parent: Some(v) });
            }
            shift = shift.max(*x);
        }
        if shift == f64::NEG_INFINITY {
            shift = 0.0;
        }
        let scaled = log.mapv(|x| (x - shift).exp());
        Ok(WeightMatrix { log, scaled, shift })
    }

    /// Builds from plain weights; the diagonal must be exactly zero.
    pub fn from_weights(beta: Array2<f64>) -> Result<Self> {
        for ((u, v), &x) in beta.indexed_iter() {
            if u == v && x != 0.0 {
                return Err(Error::InvalidInput(format!("diagonal entry ({u},{u}) must be zero")));
            }
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "weight ({u},{v}) = {x} is not a finite nonnegative number"
                )));
            }
        }
        Self::from_log_weights(beta.mapv(f64::ln))
    }

    pub fn size(&self) -> usize {
        self.log.nrows()
    }

    pub fn log_weights(&self) -> &Array2<f64> {
        &self.log
    }

    /// Weights divided by `exp(shift)`; the largest entry is 1.
    pub fn scaled(&self) -> &Array2<f64> {
        &self.scaled
    }

    /// The maximum off-diagonal log-weight subtracted before exponentiation.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Correction added to every log-cofactor: `(T - 1) * shift`.
    pub fn log_scale_shift(&self) -> f64 {
        (self.size() - 1) as f64 * self.shift
    }

    pub fn weight(&self, child: usize, parent: usize) -> f64 {
        self.log[[child, parent]].exp()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.log.mapv(f64::exp)
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let t = self.size();
        let log = Array2::from_shape_fn((t, t), |(u, v)| self.log[[perm[u], perm[v]]]);
        Self::from_log_weights(log)
    }
}

/// Root weights `p(X_r)` stored in the log domain together with the
/// normalized vector used in the augmented Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct RootWeights {
    log: Vec<f64>,
    log_total: f64,
    normalized: Vec<f64>,
}

impl RootWeights {
    pub fn from_log(log: Vec<f64>) -> Result<Self> {
        if log.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::InvalidInput("root log-weights must not be NaN or +inf".into()));
        }
        let log_total = logsumexp(&log);
        if log_total == f64::NEG_INFINITY {
            return Err(Error::InvalidInput("root weights need a positive entry".into()));
        }
        let normalized = log.iter().map(|&x| (x - log_total).exp()).collect();
        Ok(RootWeights { log, log_total, normalized })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("root weights must be finite and nonnegative".into()));
        }
        Self::from_log(values.iter().map(|x| x.ln()).collect())
    }

    pub fn uniform(t: usize) -> Self {
        Self::from_log(vec![0.0; t]).expect("uniform weights are valid")
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log
    }

    /// `ln sum_r p(X_r)`.
    pub fn log_total(&self) -> f64 {
        self.log_total
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::from_log(perm.iter().map(|&i| self.log[i]).collect())
    }
}

/// `Q = diag(beta 1) - beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutLaplacian {
    pub matrix: Array2<f64>,
}

/// `(T+1) x (T+1)` bordered Laplacian built from the rescaled weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedLaplacian {
    pub matrix: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogPartition {
    pub log_z: f64,
    pub log_scale_shift: f64,
    pub per_root_log_zr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMarginals {
    /// `w[[u, v]]`: posterior probability that the edge `v -> u` is present.
    pub w: Array2<f64>,
    /// Per-root marginals `P_r`, present when requested.
    pub per_root: Option<Vec<Array2<f64>>>,
    /// Posterior over the root, `p_r Z_r / Z`.
    pub root_posterior: Vec<f64>,
}

fn laplacian_of(beta: &Array2<f64>) -> Array2<f64> {
    let t = beta.nrows();
    let mut q = beta.mapv(|x| -x);
    for u in 0..t {
        q[[u, u]] = beta.row(u).sum();
    }
    q
}

pub fn build_out_laplacian(beta: &WeightMatrix) -> OutLaplacian {
    OutLaplacian { matrix: laplacian_of(&beta.to_dense()) }
}

fn augmented_of(scaled: &Array2<f64>, p: &[f64]) -> Array2<f64> {
    let t = scaled.nrows();
    let mut m = Array2::<f64>::zeros((t + 1, t + 1));
    m[[0, 0]] = 1.0;
    for (r, &pr) in p.iter().enumerate() {
        m[[0, r + 1]] = pr;
        m[[r + 1, 0]] = -pr;
    }
    m.slice_mut(s![1.., 1..]).assign(&laplacian_of(scaled));
    m
}

/// Bordered Laplacian whose `Q` block uses the weights divided by
/// `exp(beta.shift())`.
pub fn build_augmented_laplacian(beta: &WeightMatrix, roots: &RootWeights) -> Result<AugmentedLaplacian> {
    check_sizes(beta, roots)?;
    Ok(AugmentedLaplacian { matrix: augmented_of(beta.scaled(), roots.normalized()) })
}

fn check_sizes(beta: &WeightMatrix, roots: &RootWeights) -> Result<()> {
    if beta.size() != roots.len() {
        return Err(Error::DimensionMismatch { expected: beta.size(), got: roots.len() });
    }
    Ok(())
}

fn cofactor_of(q: &Array2<f64>, r: usize) -> Array2<f64> {
    let t = q.nrows();
    let idx: Vec<usize> = (0..t).filter(|&i| i != r).collect();
    Array2::from_shape_fn((t - 1, t - 1), |(i, j)| q[[idx[i], idx[j]]])
}

/// Log of a cofactor determinant; `-inf` when it vanishes.
fn cofactor_log_det(lu: &Lu, r: usize) -> Result<f64> {
    let d = lu.log_det();
    if d.is_singular() {
        return Ok(f64::NEG_INFINITY);
    }
    if d.sign < 0.0 {
        return Err(Error::NumericalFault(format!("negative cofactor determinant at root {r}")));
    }
    Ok(d.log_abs)
}

/// `ln Z_r` for every root, one `(T-1) x (T-1)` determinant per root.
pub fn log_partition_per_root(beta: &WeightMatrix) -> Result<Vec<f64>> {
    let q = laplacian_of(beta.scaled());
    let shift = beta.log_scale_shift();
    (0..beta.size())
        .map(|r| {
            let lu = Lu::new(cofactor_of(&q, r).view());
            cofactor_log_det(&lu, r).map(|x| x + shift)
        })
        .collect()
}

/// `ln Z` assembled from the per-root cofactors: `logsumexp_r(ln p_r + ln Z_r)`.
pub fn log_partition_by_roots(beta: &WeightMatrix, roots: &RootWeights) -> Result<LogPartition> {
    check_sizes(beta, roots)?;
    let per_root = log_partition_per_root(beta)?;
    let terms: Vec<f64> = per_root.iter().zip(roots.log_values()).map(|(z, p)| z + p).collect();
    let log_z = logsumexp(&terms);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::ZeroPartition);
    }
    Ok(LogPartition {
        log_z,
        log_scale_shift: beta.log_scale_shift(),
        per_root_log_zr: Some(per_root),
    })
}

/// `ln Z = ln(sum_r p(X_r)) + ln det Q̂`, one `(T+1) x (T+1)` factorization.
pub fn log_partition(beta: &WeightMatrix, roots: &RootWeights) -> Result<LogPartition> {
    check_sizes(beta, roots)?;
    let qhat = augmented_of(beta.scaled(), roots.normalized());
    let log_det = augmented_log_det(&Lu::new(qhat.view()))?;
    Ok(LogPartition {
        log_z: roots.log_total() + log_det + beta.log_scale_shift(),
        log_scale_shift: beta.log_scale_shift(),
        per_root_log_zr: None,
    })
}

fn augmented_log_det(lu: &Lu) -> Result<f64> {
    let d = lu.log_det();
    if d.is_singular() {
        return Err(Error::ZeroPartition);
    }
    if d.sign < 0.0 || !d.log_abs.is_finite() {
        return Err(Error::NumericalFault(format!(
            "augmented determinant has sign {} and log-magnitude {}",
            d.sign, d.log_abs
        )));
    }
    Ok(d.log_abs)
}

/// Every out-tree on `t` nodes, grouped by root in increasing root order.
pub fn enumerate_out_trees(t: usize) -> Result<Vec<OutTree>> {
    if t > MAX_ENUMERATION_SIZE {
        return Err(Error::EnumerationTooLarge { max: MAX_ENUMERATION_SIZE, got: t });
    }
    if t == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for root in 0..t {
        let others: Vec<usize> = (0..t).filter(|&i| i != root).collect();
        // Odometer over parent choices; digit k indexes the candidate parents
        // of others[k], which are all nodes except others[k] itself.
        let mut digits = vec![0usize; others.len()];
        loop {
            let mut parent = vec![None; t];
            for (k, &c) in others.iter().enumerate() {
                let d = digits[k];
                parent[c] = Some(if d >= c { d + 1 } else { d });
            }
            if is_acyclic(&parent, root) {
                out.push(OutTree::new(root, parent).expect("acyclic parent map"));
            }
            let mut k = 0;
            loop {
                if k == digits.len() {
                    break;
                }
                digits[k] += 1;
                if digits[k] < t - 1 {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
            if k == digits.len() {
                break;
            }
        }
    }
    Ok(out)
}

fn is_acyclic(parent: &[Option<usize>], root: usize) -> bool {
    let t = parent.len();
    // 0 = unknown, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; t];
    state[root] = 2;
    for start in 0..t {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v].expect("non-root has a parent");
        }
        if state[v] == 1 {
            return false;
        }
        for p in path {
            state[p] = 2;
        }
    }
    true
}

/// Log-weight `ln p(X_r) + sum_edges ln beta` of a single out-tree.
pub fn tree_log_weight(beta: &WeightMatrix, roots: &RootWeights, tree: &OutTree) -> f64 {
    roots.log_values()[tree.root()] + tree.edges().map(|(c, p)| beta.log_weights()[[c, p]]).sum::<f64>()
}

/// Direct summation over all `T^(T-1)` out-trees. `T <= 7`.
pub fn brute_force_log_partition(beta: &WeightMatrix, roots: &RootWeights) -> Result<LogPartition> {
    check_sizes(beta, roots)?;
    let t = beta.size();
    let trees = enumerate_out_trees(t)?;
    let mut per_root_terms = vec![Vec::new(); t];
    for tree in &trees {
        let w: f64 = tree.edges().map(|(c, p)| beta.log_weights()[[c, p]]).sum();
        per_root_terms[tree.root()].push(w);
    }
    let per_root: Vec<f64> = per_root_terms.iter().map(|v| logsumexp(v)).collect();
    let terms: Vec<f64> = per_root.iter().zip(roots.log_values()).map(|(z, p)| z + p).collect();
    let log_z = logsumexp(&terms);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::ZeroPartition);
    }
    Ok(LogPartition {
        log_z,
        log_scale_shift: 0.0,
        per_root_log_zr: Some(per_root),
    })
}

/// Factored augmented Laplacian with its inverse; shared by root
/// posteriors, edge marginals and likelihood gradients.
#[derive(Debug, Clone)]
pub struct AugmentedFactor {
    log_z: f64,
    inv: Array2<f64>,
    normalized: Vec<f64>,
}

impl AugmentedFactor {
    pub fn new(beta: &WeightMatrix, roots: &RootWeights) -> Result<Self> {
        check_sizes(beta, roots)?;
        let qhat = augmented_of(beta.scaled(), roots.normalized());
        let lu = Lu::new(qhat.view());
        let log_det = augmented_log_det(&lu)?;
        let inv = lu.inverse().ok_or(Error::Singular)?;
        Ok(AugmentedFactor {
            log_z: roots.log_total() + log_det + beta.log_scale_shift(),
            inv,
            normalized: roots.normalized().to_vec(),
        })
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// `Q̂^{-1}`, indexed in the padded space (sample `u` is row `u + 1`).
    pub fn inverse(&self) -> &Array2<f64> {
        &self.inv
    }

    /// `d ln Z / d beta_uv` for the rescaled weight.
    #[inline]
    pub fn edge_sensitivity(&self, child: usize, parent: usize) -> f64 {
        self.inv[[child + 1, child + 1]] - self.inv[[parent + 1, child + 1]]
    }

    /// `p_r Z_r / Z`, read off the border of `Q̂^{-1}`.
    pub fn root_posterior(&self) -> Vec<f64> {
        let post: Vec<f64> = self
            .normalized
            .iter()
            .enumerate()
            .map(|(r, &p)| (-p * self.inv[[0, r + 1]]).max(0.0))
            .collect();
        let s: f64 = post.iter().sum();
        post.into_iter().map(|x| x / s).collect()
    }

    /// Mixture edge marginals `W`.
    pub fn edge_marginals(&self, beta: &WeightMatrix) -> Array2<f64> {
        let t = beta.size();
        let scaled = beta.scaled();
        Array2::from_shape_fn((t, t), |(u, v)| {
            if u == v || scaled[[u, v]] == 0.0 {
                0.0
            } else {
                (scaled[[u, v]] * self.edge_sensitivity(u, v)).clamp(0.0, 1.0)
            }
        })
    }

    /// Coefficients `(rho, omega)` such that for any parameter `theta`
    ///
    /// `d ln Z / d theta = sum_r rho_r d ln p(X_r)/d theta + sum_uv omega_uv d ln beta_uv / d theta`.
    ///
    /// They are assembled from the two-term gradient
    /// `(sum_r dp_r) / (sum_r p_r) + tr(Q̂^{-1} dQ̂)`, where `dQ̂` carries the
    /// derivative of the normalized root vector in its border (quotient
    /// rule) and the Laplacian derivative in its lower block.
    pub fn gradient_coefficients(&self, beta: &WeightMatrix) -> (Vec<f64>, Array2<f64>) {
        let t = beta.size();
        let p = &self.normalized;
        // trace contribution of the border per unit change of the normalized root entry r
        let border: Vec<f64> = (0..t).map(|r| self.inv[[r + 1, 0]] - self.inv[[0, r + 1]]).collect();
        let border_mean: f64 = p.iter().zip(&border).map(|(a, b)| a * b).sum();
        let rho = (0..t).map(|r| p[r] + p[r] * (border[r] - border_mean)).collect();
        let scaled = beta.scaled();
        let omega = Array2::from_shape_fn((t, t), |(u, v)| {
            if u == v {
                0.0
            } else {
                scaled[[u, v]] * self.edge_sensitivity(u, v)
            }
        });
        (rho, omega)
    }
}

/// Posterior over roots, `p(X_r) Z_r / Z`.
pub fn root_posterior(beta: &WeightMatrix, roots: &RootWeights) -> Result<Vec<f64>> {
    Ok(AugmentedFactor::new(beta, roots)?.root_posterior())
}

/// Per-root edge marginals `P_r[[u, v]] = beta_uv d ln Z_r / d beta_uv`, or
/// `None` when `Z_r = 0`.
pub fn per_root_marginals(beta: &WeightMatrix, r: usize) -> Result<Option<Array2<f64>>> {
    let t = beta.size();
    let scaled = beta.scaled();
    let q = laplacian_of(scaled);
    let lu = Lu::new(cofactor_of(&q, r).view());
    if cofactor_log_det(&lu, r)? == f64::NEG_INFINITY {
        return Ok(None);
    }
    let inv = lu.inverse().ok_or(Error::Singular)?;
    // reduced index of node i (i != r)
    let red = |i: usize| if i < r { i } else { i - 1 };
    let p = Array2::from_shape_fn((t, t), |(u, v)| {
        if u == r || u == v || scaled[[u, v]] == 0.0 {
            return 0.0;
        }
        let uu = red(u);
        let g = if v == r { inv[[uu, uu]] } else { inv[[uu, uu]] - inv[[red(v), uu]] };
        (scaled[[u, v]] * g).clamp(0.0, 1.0)
    });
    Ok(Some(p))
}

/// Edge marginals; with `want_per_root` every `P_r` is computed through its
/// own cofactor inverse (`O(T^4)`), otherwise a single `Q̂` inverse is used.
pub fn edge_marginals(beta: &WeightMatrix, roots: &RootWeights, want_per_root: bool) -> Result<EdgeMarginals> {
    check_sizes(beta, roots)?;
    let t = beta.size();
    if !want_per_root {
        let f = AugmentedFactor::new(beta, roots)?;
        return Ok(EdgeMarginals {
            w: f.edge_marginals(beta),
            per_root: None,
            root_posterior: f.root_posterior(),
        });
    }
    let lp = log_partition_by_roots(beta, roots)?;
    let log_zr = lp.per_root_log_zr.expect("per-root values");
    let post: Vec<f64> = (0..t)
        .map(|r| (roots.log_values()[r] + log_zr[r] - lp.log_z).exp())
        .collect();
    let mut w = Array2::<f64>::zeros((t, t));
    let mut per_root = Vec::with_capacity(t);
    for (r, &pr) in post.iter().enumerate() {
        let m = per_root_marginals(beta, r)?.unwrap_or_else(|| Array2::zeros((t, t)));
        w.scaled_add(pr, &m);
        per_root.push(m);
    }
    Ok(EdgeMarginals { w, per_root: Some(per_root), root_posterior: post })
}

/// Entropy of the tree posterior `q_r(T) ∝ prod_edges beta` over trees rooted
/// at `r`: `ln Z_r - sum_uv P_r[u,v] ln beta_uv`.
pub fn tree_entropy(beta: &WeightMatrix, r: usize) -> Result<f64> {
    let q = laplacian_of(beta.scaled());
    let lu = Lu::new(cofactor_of(&q, r).view());
    let log_zr = cofactor_log_det(&lu, r)?;
    if log_zr == f64::NEG_INFINITY {
        return Err(Error::ZeroPartition);
    }
    let p = per_root_marginals(beta, r)?.ok_or(Error::ZeroPartition)?;
    Ok(entropy_from_marginals(beta, log_zr, &p))
}

/// `ln Z_r - sum P_r ln beta` with both sides in the rescaled domain.
pub(crate) fn entropy_from_marginals(beta: &WeightMatrix, scaled_log_zr: f64, p: &Array2<f64>) -> f64 {
    let mut e = 0.0;
    for ((u, v), &pr) in p.indexed_iter() {
        if pr > 0.0 {
            e += pr * (beta.log_weights()[[u, v]] - beta.shift());
        }
    }
    scaled_log_zr - e
}

/// A single off-diagonal weight replacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEdit {
    pub child: usize,
    pub parent: usize,
    pub log_weight: f64,
}

/// Factored `Q̂` kept up to date under individual weight edits by rank-one
/// updates: the determinant lemma for `ln det Q̂` and Sherman-Morrison for
/// the inverse.
#[derive(Debug, Clone)]
pub struct LogDetSession {
    log_beta: Array2<f64>,
    shift: f64,
    roots: RootWeights,
    inv: Array2<f64>,
    log_det: f64,
    edits: usize,
    stale: bool,
}

impl LogDetSession {
    pub fn new(beta: &WeightMatrix, roots: &RootWeights) -> Result<Self> {
        check_sizes(beta, roots)?;
        let mut s = LogDetSession {
            log_beta: beta.log_weights().clone(),
            shift: beta.shift(),
            roots: roots.clone(),
            inv: Array2::zeros((0, 0)),
            log_det: 0.0,
            edits: 0,
            stale: true,
        };
        s.refactor()?;
        Ok(s)
    }

    pub fn size(&self) -> usize {
        self.log_beta.nrows()
    }

    /// Recomputes the determinant and inverse from the current weights.
    pub fn refactor(&mut self) -> Result<()> {
        let scaled = self.log_beta.mapv(|x| (x - self.shift).exp());
        let lu = Lu::new(augmented_of(&scaled, self.roots.normalized()).view());
        self.log_det = augmented_log_det(&lu)?;
        self.inv = lu.inverse().ok_or(Error::Singular)?;
        self.edits = 0;
        self.stale = false;
        Ok(())
    }

    /// `ln det Q̂` in the session's rescaled domain.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn log_partition(&self) -> f64 {
        self.roots.log_total() + self.log_det + (self.size() - 1) as f64 * self.shift
    }

    pub fn inverse(&self) -> &Array2<f64> {
        &self.inv
    }

    pub fn log_weight(&self, child: usize, parent: usize) -> f64 {
        self.log_beta[[child, parent]]
    }

    pub fn log_weights(&self) -> &Array2<f64> {
        &self.log_beta
    }

    /// Current weights as a fresh [`WeightMatrix`].
    pub fn weight_matrix(&self) -> Result<WeightMatrix> {
        WeightMatrix::from_log_weights(self.log_beta.clone())
    }

    pub fn roots(&self) -> &RootWeights {
        &self.roots
    }

    /// `d ln Z / d ln beta_uv` under the current inverse.
    pub fn log_edge_sensitivity(&self, child: usize, parent: usize) -> f64 {
        let b = (self.log_beta[[child, parent]] - self.shift).exp();
        b * (self.inv[[child + 1, child + 1]] - self.inv[[parent + 1, child + 1]])
    }

    pub fn edits_since_refactor(&self) -> usize {
        self.edits
    }

    /// True once `2T` rank-one edits have accumulated since the last
    /// factorization, or after a failed update.
    pub fn needs_refactor(&self) -> bool {
        self.stale || self.edits >= 2 * self.size()
    }

    /// Applies the edits in order and returns the new `ln det Q̂`.
    ///
    /// On a nonpositive capacitance the remaining weights are still
    /// recorded, the session is marked stale, and
    /// [`Error::CapacitanceBreakdown`] is returned; call [`Self::refactor`].
    pub fn apply(&mut self, edits: &[BetaEdit]) -> Result<f64> {
        if self.stale {
            self.refactor()?;
        }
        let n = self.size() + 1;
        let mut failure = None;
        for e in edits {
            if e.child == e.parent || e.child >= n - 1 || e.parent >= n - 1 {
                return Err(Error::InvalidInput(format!(
                    "edit ({}, {}) is not an off-diagonal entry",
                    e.child, e.parent
                )));
            }
            if e.log_weight.is_nan() || e.log_weight == f64::INFINITY {
                return Err(Error::NonFiniteWeight { child: e.child, parent: Some(e.parent) });
            }
            let old = (self.log_beta[[e.child, e.parent]] - self.shift).exp();
            let new = (e.log_weight - self.shift).exp();
            self.log_beta[[e.child, e.parent]] = e.log_weight;
            if failure.is_some() {
                continue;
            }
            let delta = new - old;
            if delta == 0.0 {
                continue;
            }
            let u = e.child + 1;
            let v = e.parent + 1;
            // Q̂ += delta * e_u (e_u - e_v)^T
            let cap = 1.0 + delta * (self.inv[[u, u]] - self.inv[[v, u]]);
            if !(cap > 0.0) || !cap.is_finite() {
                failure = Some(cap);
                self.stale = true;
                continue;
            }
            let col: Vec<f64> = self.inv.column(u).to_vec();
            let row: Vec<f64> = self
                .inv
                .row(u)
                .iter()
                .zip(self.inv.row(v))
                .map(|(a, b)| a - b)
                .collect();
            let f = delta / cap;
            for (i, mut inv_row) in self.inv.rows_mut().into_iter().enumerate() {
                let ci = f * col[i];
                if ci == 0.0 {
                    continue;
                }
                for (x, &r) in inv_row.iter_mut().zip(&row) {
                    *x -= ci * r;
                }
            }
            self.log_det += cap.ln();
            self.edits += 1;
        }
        match failure {
            Some(capacitance) => Err(Error::CapacitanceBreakdown { capacitance }),
            None => Ok(self.log_det),
        }
    }
}

/// Applies `edits` to the session; see [`LogDetSession::apply`].
pub fn logdet_edit(session: &mut LogDetSession, edits: &[BetaEdit]) -> Result<f64> {
    session.apply(edits)
}

/// Tab-separated matrix dump with a `# outtree-matrix T=<n>` header.
pub fn dump_matrix_tsv(m: &Array2<f64>) -> String {
    let mut out = format!("# outtree-matrix T={}\n", m.nrows());
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_tsv(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Document("empty matrix dump".into()))?;
    let t: usize = header
        .strip_prefix("# outtree-matrix T=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Document(format!("bad matrix header {header:?}")))?;
    let mut values = Vec::with_capacity(t * t);
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split('\t')
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Document(format!("row {i}: {e}")))?;
        if row.len() != t {
            return Err(Error::Document(format!("row {i} has {} cells, expected {t}", row.len())));
        }
        values.extend(row);
    }
    Array2::from_shape_vec((values.len() / t.max(1), t), values)
        .ok()
        .filter(|m| m.nrows() == t)
        .ok_or_else(|| Error::Document("matrix dump has the wrong number of rows".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit(t: usize) -> WeightMatrix {
        WeightMatrix::from_weights(Array2::from_shape_fn((t, t), |(u, v)| if u == v { 0.0 } else { 1.0 }))
            .unwrap()
    }

    #[test]
    fn laplacian_small_cases() {
        let q = build_out_laplacian(&unit(2)).matrix;
        assert_eq!(q, array![[1.0, -1.0], [-1.0, 1.0]]);
        let q = build_out_laplacian(&unit(3)).matrix;
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(q[[u, v]], if u == v { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn rejects_tiny_and_bad_inputs() {
        assert!(matches!(
            WeightMatrix::from_weights(array![[0.0]]),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(WeightMatrix::from_weights(array![[1.0, 1.0], [1.0, 0.0]]).is_err());
        assert!(WeightMatrix::from_weights(array![[0.0, -1.0], [1.0, 0.0]]).is_err());
        assert!(RootWeights::from_values(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn unit_weights_count_trees() {
        let b = unit(3);
        let zr = log_partition_per_root(&b).unwrap();
        for z in zr {
            assert!((z - 3f64.ln()).abs() < 1e-12);
        }
        let z2 = log_partition_per_root(&unit(2)).unwrap();
        assert!(z2.iter().all(|z| z.abs() < 1e-15));
        let lp = log_partition(&unit(3), &RootWeights::uniform(3)).unwrap();
        assert!((lp.log_z - 9f64.ln()).abs() < 1e-12);
        let lp = log_partition(&unit(2), &RootWeights::uniform(2)).unwrap();
        assert!((lp.log_z - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_out_trees(3).unwrap().len(), 9);
        assert_eq!(enumerate_out_trees(4).unwrap().len(), 64);
        let chain = OutTree::new(2, vec![Some(1), Some(2), None]).unwrap();
        assert!(enumerate_out_trees(3).unwrap().contains(&chain));
        let lp = brute_force_log_partition(&unit(4), &RootWeights::uniform(4)).unwrap();
        assert!((lp.log_z - 64f64.ln()).abs() < 1e-12);
        assert!(matches!(
            enumerate_out_trees(8),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn one_sided_weights_force_the_root() {
        let b = WeightMatrix::from_weights(array![[0.0, 2.5], [0.0, 0.0]]).unwrap();
        let zr = log_partition_per_root(&b).unwrap();
        assert_eq!(zr[0], f64::NEG_INFINITY);
        let post = root_posterior(&b, &RootWeights::uniform(2)).unwrap();
        assert!((post[1] - 1.0).abs() < 1e-15 && post[0].abs() < 1e-15);
    }

    #[test]
    fn two_node_marginals() {
        let m = edge_marginals(&unit(2), &RootWeights::uniform(2), false).unwrap();
        assert!((m.w[[0, 1]] - 0.5).abs() < 1e-15 && (m.w[[1, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(m.w[[0, 0]], 0.0);
    }

    #[test]
    fn entropy_of_uniform_and_point_mass() {
        assert!((tree_entropy(&unit(3), 0).unwrap() - 3f64.ln()).abs() < 1e-12);
        // only the chain 2 -> 1 -> 0 has weight among trees rooted at 2
        let b = WeightMatrix::from_weights(array![[0.0, 0.7, 0.0], [0.0, 0.0, 1.3], [0.0, 0.0, 0.0]]).unwrap();
        assert!(tree_entropy(&b, 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_partition_is_an_error() {
        let b = WeightMatrix::from_weights(Array2::zeros((3, 3))).unwrap();
        assert_eq!(log_partition(&b, &RootWeights::uniform(3)), Err(Error::ZeroPartition));
    }

    #[test]
    fn empty_edit_list_is_identity() {
        let b = unit(4);
        let mut s = LogDetSession::new(&b, &RootWeights::uniform(4)).unwrap();
        let before = s.log_det();
        assert_eq!(logdet_edit(&mut s, &[]).unwrap().to_bits(), before.to_bits());
    }

    #[test]
    fn edit_then_reverse() {
        let b = unit(4);
        let mut s = LogDetSession::new(&b, &RootWeights::uniform(4)).unwrap();
        let before = s.log_det();
        s.apply(&[BetaEdit { child: 1, parent: 3, log_weight: 2.0 }]).unwrap();
        assert!((s.log_det() - before).abs() > 1e-3);
        s.apply(&[BetaEdit { child: 1, parent: 3, log_weight: 0.0 }]).unwrap();
        assert!((s.log_det() - before).abs() < 1e-10);
        assert!(s.apply(&[BetaEdit { child: 2, parent: 2, log_weight: 0.0 }]).is_err());
    }

    #[test]
    fn matrix_dump_roundtrip() {
        let m = array![[0.0, 0.1], [1e-300, 3.5]];
        let text = dump_matrix_tsv(&m);
        assert!(text.starts_with("# outtree-matrix T=2\n"));
        assert_eq!(parse_matrix_tsv(&text).unwrap(), m);
    }
}

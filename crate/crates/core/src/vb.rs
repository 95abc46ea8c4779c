//! Variational Bayes over root, tree and conditional tables for discrete
//! data with Dirichlet priors.
//!
//! The root parameters are integrated out exactly against their prior, so
//! the bound only approximates the tree posterior and the conditional
//! tables. Posterior root counts are still reported as summaries.

use ndarray::{Array1, Array2, ArrayView2};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::doc::Document;
use crate::error::{Error, Result};
use crate::likelihood::log_tree_count;
use crate::linalg::logsumexp;
use crate::models::category;
use crate::treemath::{
    entropy_from_marginals, enumerate_out_trees, log_partition_per_root, per_root_marginals, WeightMatrix,
    MAX_ENUMERATION_SIZE,
};

/// Dirichlet pseudo-counts per dimension: a root vector and one column per
/// parent value (`cond[d][[a, b]]` for child `a` given parent `b`). Used
/// for both the prior and the posterior of `q_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPrior {
    pub root: Vec<Array1<f64>>,
    pub cond: Vec<Array2<f64>>,
}

impl DirichletPrior {
    pub fn new(root: Vec<Array1<f64>>, cond: Vec<Array2<f64>>) -> Result<Self> {
        if root.is_empty() || root.len() != cond.len() {
            return Err(Error::InvalidInput("Dirichlet prior needs matching root and conditional counts".into()));
        }
        for (d, (r, c)) in root.iter().zip(&cond).enumerate() {
            let k = r.len();
            if k < 2 || c.dim() != (k, k) {
                return Err(Error::InvalidInput(format!("dimension {d}: counts need shape K and KxK, K >= 2")));
            }
            if r.iter().chain(c.iter()).any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidInput(format!("dimension {d}: pseudo-counts must be positive")));
            }
        }
        Ok(DirichletPrior { root, cond })
    }

    /// Every root count `root_count`, every conditional count `cond_count`.
    pub fn symmetric(sizes: &[usize], root_count: f64, cond_count: f64) -> Result<Self> {
        Self::new(
            sizes.iter().map(|&k| Array1::from_elem(k, root_count)).collect(),
            sizes.iter().map(|&k| Array2::from_elem((k, k), cond_count)).collect(),
        )
    }

    pub fn alphabet_sizes(&self) -> Vec<usize> {
        self.root.iter().map(|r| r.len()).collect()
    }
}

fn categories(data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<Array2<usize>> {
    let sizes = prior.alphabet_sizes();
    if data.ncols() != sizes.len() {
        return Err(Error::DimensionMismatch { expected: sizes.len(), got: data.ncols() });
    }
    let mut out = Array2::zeros(data.dim());
    for ((t, d), &x) in data.indexed_iter() {
        out[[t, d]] = category(x, sizes[d])?;
    }
    Ok(out)
}

/// `E[ln theta_{a|b}] = psi(A(a, b)) - psi(sum_a A(a, b))` per dimension.
fn expected_log_tables(counts: &DirichletPrior) -> Vec<Array2<f64>> {
    counts
        .cond
        .iter()
        .map(|c| {
            let mut e = c.mapv(digamma);
            for (b, mut col) in e.columns_mut().into_iter().enumerate() {
                let norm = digamma(c.column(b).sum());
                col.mapv_inplace(|x| x - norm);
            }
            e
        })
        .collect()
}

/// Expected log-conditional weights `ln beta~_uv` and expected root
/// log-weights, both under the Dirichlet `counts`.
pub fn expected_log_weights(data: ArrayView2<f64>, counts: &DirichletPrior) -> Result<(WeightMatrix, Vec<f64>)> {
    let x = categories(data, counts)?;
    let t = x.nrows();
    let tables = expected_log_tables(counts);
    let log = Array2::from_shape_fn((t, t), |(u, v)| {
        if u == v {
            f64::NEG_INFINITY
        } else {
            tables.iter().enumerate().map(|(d, e)| e[[x[[u, d]], x[[v, d]]]]).sum()
        }
    });
    let roots = (0..t)
        .map(|r| {
            counts
                .root
                .iter()
                .enumerate()
                .map(|(d, a)| digamma(a[x[[r, d]]]) - digamma(a.sum()))
                .sum()
        })
        .collect();
    Ok((WeightMatrix::from_log_weights(log)?, roots))
}

/// `ln m(X_r)`: the root likelihood integrated against the Dirichlet root
/// counts, `prod_d a_d(x_rd) / sum_a a_d(a)`.
pub fn root_log_evidence(data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<Vec<f64>> {
    let x = categories(data, prior)?;
    Ok(x.rows()
        .into_iter()
        .map(|row| prior.root.iter().zip(row.iter()).map(|(a, &c)| (a[c] / a.sum()).ln()).sum())
        .collect())
}

/// Variational state: `q_c` as Dirichlet counts, `q_r` through `beta~`,
/// and the root distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub beta_tilde: WeightMatrix,
    pub q_root: Vec<f64>,
    /// `W = sum_r q(r) P_r`.
    pub w: Array2<f64>,
    /// Per-root edge marginals `P_r` of `beta~`.
    pub per_root: Vec<Array2<f64>>,
    /// `ln Z~_r` of `beta~`.
    pub log_zr: Vec<f64>,
    pub counts: DirichletPrior,
    pub elbo: f64,
}

impl VariationalState {
    /// Counts at the prior, `beta~` from the prior, uniform root.
    pub fn initial(data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<Self> {
        let t = data.nrows();
        if t < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: t });
        }
        let mut s = Self::with_counts(data, prior.clone(), vec![1.0 / t as f64; t])?;
        s.elbo = elbo(&s, data, prior)?;
        Ok(s)
    }

    /// `beta~` and its per-root quantities rebuilt from `counts`; the ELBO
    /// field is left at NaN.
    fn with_counts(data: ArrayView2<f64>, counts: DirichletPrior, q_root: Vec<f64>) -> Result<Self> {
        let (beta_tilde, _) = expected_log_weights(data, &counts)?;
        let mut s = VariationalState {
            w: Array2::zeros((0, 0)),
            per_root: Vec::new(),
            log_zr: Vec::new(),
            beta_tilde,
            q_root,
            counts,
            elbo: f64::NAN,
        };
        s.refresh_tree_posteriors()?;
        Ok(s)
    }

    fn refresh_tree_posteriors(&mut self) -> Result<()> {
        let t = self.beta_tilde.size();
        self.log_zr = log_partition_per_root(&self.beta_tilde)?;
        self.per_root = (0..t)
            .map(|r| per_root_marginals(&self.beta_tilde, r)?.ok_or(Error::ZeroPartition))
            .collect::<Result<_>>()?;
        self.refresh_w();
        Ok(())
    }

    fn refresh_w(&mut self) {
        let t = self.beta_tilde.size();
        let mut w = Array2::zeros((t, t));
        for (p, q) in self.per_root.iter().zip(&self.q_root) {
            w.scaled_add(*q, p);
        }
        self.w = w;
    }

    /// Entropy `H(q_r)` of the tree posterior for root `r`.
    pub fn tree_entropy(&self, r: usize) -> f64 {
        let scaled = self.log_zr[r] - self.beta_tilde.log_scale_shift();
        entropy_from_marginals(&self.beta_tilde, scaled, &self.per_root[r])
    }
}

/// New counts: prior plus `W`-weighted pair statistics, and prior root
/// counts plus `q(r)`-weighted root statistics.
pub fn update_q_c(
    data: ArrayView2<f64>,
    prior: &DirichletPrior,
    q_root: &[f64],
    per_root: &[Array2<f64>],
) -> Result<DirichletPrior> {
    let x = categories(data, prior)?;
    let t = x.nrows();
    if q_root.len() != t || per_root.len() != t {
        return Err(Error::DimensionMismatch { expected: t, got: q_root.len().min(per_root.len()) });
    }
    let mut w = Array2::<f64>::zeros((t, t));
    for (p, q) in per_root.iter().zip(q_root) {
        w.scaled_add(*q, p);
    }
    let mut counts = prior.clone();
    for d in 0..x.ncols() {
        for ((u, v), &wuv) in w.indexed_iter() {
            if u != v && wuv != 0.0 {
                counts.cond[d][[x[[u, d]], x[[v, d]]]] += wuv;
            }
        }
        for (r, &q) in q_root.iter().enumerate() {
            counts.root[d][x[[r, d]]] += q;
        }
    }
    Ok(counts)
}

fn normalize_log(log: &[f64]) -> Vec<f64> {
    let z = logsumexp(log);
    log.iter().map(|l| (l - z).exp()).collect()
}

/// Unnormalized `ln q(r)` both ways: the literal form
/// `ln m(X_r) + H(q_r) + E_{q_r}[sum_edges E_{q_c} ln p]` and the
/// simplified form `ln m(X_r) + ln Z~_r`. They agree when `beta~` is in
/// step with the counts.
pub fn q_root_routes(
    state: &VariationalState,
    data: ArrayView2<f64>,
    prior: &DirichletPrior,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = root_log_evidence(data, prior)?;
    let x = categories(data, prior)?;
    let tables = expected_log_tables(&state.counts);
    let t = m.len();
    let literal = (0..t)
        .map(|r| {
            let mut e = 0.0;
            for ((u, v), &p) in state.per_root[r].indexed_iter() {
                if p > 0.0 {
                    e += p * tables.iter().enumerate().map(|(d, tab)| tab[[x[[u, d]], x[[v, d]]]]).sum::<f64>();
                }
            }
            m[r] + state.tree_entropy(r) + e
        })
        .collect();
    let simplified = (0..t).map(|r| m[r] + state.log_zr[r]).collect();
    Ok((literal, simplified))
}

/// `q(r) ∝ m(X_r) Z~_r`.
pub fn update_q_root(state: &VariationalState, data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<Vec<f64>> {
    let (_, simplified) = q_root_routes(state, data, prior)?;
    if simplified.iter().all(|x| *x == f64::NEG_INFINITY) {
        return Err(Error::ZeroPartition);
    }
    Ok(normalize_log(&simplified))
}

fn dirichlet_kl(q: &[f64], p: &[f64]) -> f64 {
    let (sq, sp): (f64, f64) = (q.iter().sum(), p.iter().sum());
    let dg = digamma(sq);
    let mut kl = ln_gamma(sq) - ln_gamma(sp);
    for (&a, &b) in q.iter().zip(p) {
        kl += ln_gamma(b) - ln_gamma(a) + (a - b) * (digamma(a) - dg);
    }
    kl
}

/// `KL(q_c || p_c)` summed over every conditional column.
pub fn conditional_kl(counts: &DirichletPrior, prior: &DirichletPrior) -> f64 {
    let mut kl = 0.0;
    for (c, p) in counts.cond.iter().zip(&prior.cond) {
        for b in 0..c.ncols() {
            let q: Vec<f64> = c.column(b).to_vec();
            let p: Vec<f64> = p.column(b).to_vec();
            kl += dirichlet_kl(&q, &p);
        }
    }
    kl
}

/// The evidence lower bound at `state`.
pub fn elbo(state: &VariationalState, data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<f64> {
    let m = root_log_evidence(data, prior)?;
    let x = categories(data, prior)?;
    let t = m.len();
    let tables = expected_log_tables(&state.counts);
    let mut value = -log_tree_count(t) - conditional_kl(&state.counts, prior);
    for ((u, v), &w) in state.w.indexed_iter() {
        if u != v && w > 0.0 {
            value += w * tables.iter().enumerate().map(|(d, tab)| tab[[x[[u, d]], x[[v, d]]]]).sum::<f64>();
        }
    }
    for (r, &q) in state.q_root.iter().enumerate() {
        if q > 0.0 {
            value += q * (m[r] - q.ln() + state.tree_entropy(r));
        }
    }
    if !value.is_finite() {
        return Err(Error::NumericalFault("non-finite evidence bound".into()));
    }
    Ok(value)
}

/// Log-evidence by enumerating every out-tree and integrating both root and
/// conditional tables in closed form. `T <= 7`.
pub fn exact_log_evidence(data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<f64> {
    let t = data.nrows();
    if t > MAX_ENUMERATION_SIZE {
        return Err(Error::EnumerationTooLarge { max: MAX_ENUMERATION_SIZE, got: t });
    }
    let x = categories(data, prior)?;
    let m = root_log_evidence(data, prior)?;
    let trees = enumerate_out_trees(t)?;
    let mut terms = Vec::with_capacity(trees.len());
    for tree in &trees {
        let mut lt = m[tree.root()];
        for (d, a0) in prior.cond.iter().enumerate() {
            let mut n = Array2::<f64>::zeros(a0.dim());
            for (c, p) in tree.edges() {
                n[[x[[c, d]], x[[p, d]]]] += 1.0;
            }
            for b in 0..a0.ncols() {
                let s0 = a0.column(b).sum();
                let nb = n.column(b).sum();
                lt += ln_gamma(s0) - ln_gamma(s0 + nb);
                for a in 0..a0.nrows() {
                    lt += ln_gamma(a0[[a, b]] + n[[a, b]]) - ln_gamma(a0[[a, b]]);
                }
            }
        }
        terms.push(lt);
    }
    Ok(logsumexp(&terms) - log_tree_count(t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbOptions {
    pub max_rounds: usize,
    /// Stop when a round improves the bound by less than this.
    pub tol: f64,
    /// Allowed decrease per update before it is reported as an error.
    pub slack: f64,
}

impl Default for VbOptions {
    fn default() -> Self {
        VbOptions { max_rounds: 200, tol: 1e-8, slack: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbFit {
    pub state: VariationalState,
    /// Bound after initialization and after every round.
    pub trace: Vec<f64>,
    /// Bound after every individual update (three per round).
    pub update_trace: Vec<f64>,
    pub converged: bool,
}

/// One round: `q_c`, then `beta~` with its per-root marginals, then `q(r)`.
pub fn vb_round(state: &VariationalState, data: ArrayView2<f64>, prior: &DirichletPrior) -> Result<[VariationalState; 3]> {
    let counts = update_q_c(data, prior, &state.q_root, &state.per_root)?;
    let mut after_qc = state.clone();
    after_qc.counts = counts.clone();
    after_qc.elbo = elbo(&after_qc, data, prior)?;
    let mut after_beta = VariationalState::with_counts(data, counts, state.q_root.clone())?;
    after_beta.elbo = elbo(&after_beta, data, prior)?;
    let mut after_root = after_beta.clone();
    after_root.q_root = update_q_root(&after_beta, data, prior)?;
    after_root.refresh_w();
    after_root.elbo = elbo(&after_root, data, prior)?;
    Ok([after_qc, after_beta, after_root])
}

/// Coordinate ascent from `start` (or the initial state).
pub fn vb_fit_from(
    data: ArrayView2<f64>,
    prior: &DirichletPrior,
    start: VariationalState,
    opts: &VbOptions,
) -> Result<VbFit> {
    let mut state = start;
    let mut trace = vec![state.elbo];
    let mut update_trace = vec![state.elbo];
    let mut converged = false;
    for round in 1..=opts.max_rounds {
        let prev = state.elbo;
        let steps = vb_round(&state, data, prior)?;
        let mut last = prev;
        for s in &steps {
            if s.elbo < last - opts.slack {
                return Err(Error::ElboDecrease { round, decrease: last - s.elbo });
            }
            last = s.elbo;
            update_trace.push(s.elbo);
        }
        let [_, _, next] = steps;
        state = next;
        trace.push(state.elbo);
        if state.elbo - prev < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(VbFit { state, trace, update_trace, converged })
}

pub fn vb_fit(data: ArrayView2<f64>, prior: &DirichletPrior, opts: &VbOptions) -> Result<VbFit> {
    vb_fit_from(data, prior, VariationalState::initial(data, prior)?, opts)
}

/// Checkpoint document: prior and posterior counts, `q(r)` and the trace.
pub fn checkpoint_document(fit: &VbFit, prior: &DirichletPrior) -> Document {
    let mut doc = Document::new("vb-tabular");
    let sizes = prior.alphabet_sizes();
    doc.put_ints("alphabet_sizes", &[sizes.len()], sizes.iter().map(|&k| k as u64).collect());
    let flat = |c: &DirichletPrior| -> Vec<f64> {
        c.root.iter().flat_map(|r| r.iter().copied()).chain(c.cond.iter().flat_map(|m| m.iter().copied())).collect()
    };
    let p = flat(prior);
    doc.put_floats("prior_counts", &[p.len()], p);
    let c = flat(&fit.state.counts);
    doc.put_floats("counts", &[c.len()], c);
    doc.put_floats("q_root", &[fit.state.q_root.len()], fit.state.q_root.clone());
    doc.put_floats("elbo_trace", &[fit.trace.len()], fit.trace.clone());
    doc
}

/// Restores the prior, the state and the trace from a checkpoint.
pub fn resume_from_document(doc: &Document, data: ArrayView2<f64>) -> Result<(DirichletPrior, VariationalState, Vec<f64>)> {
    if doc.family()? != "vb-tabular" {
        return Err(Error::Document("not a variational checkpoint".into()));
    }
    let (_, sizes) = doc.ints("alphabet_sizes")?;
    let sizes: Vec<usize> = sizes.iter().map(|&k| k as usize).collect();
    let unflat = |v: &[f64]| -> Result<DirichletPrior> {
        let need: usize = sizes.iter().map(|k| k + k * k).sum();
        if v.len() != need {
            return Err(Error::Document(format!("expected {need} counts, found {}", v.len())));
        }
        let mut k_off = 0;
        let mut root = Vec::new();
        for &k in &sizes {
            root.push(Array1::from(v[k_off..k_off + k].to_vec()));
            k_off += k;
        }
        let mut cond = Vec::new();
        for &k in &sizes {
            cond.push(Array2::from_shape_vec((k, k), v[k_off..k_off + k * k].to_vec()).expect("shape"));
            k_off += k * k;
        }
        DirichletPrior::new(root, cond)
    };
    let prior = unflat(doc.floats("prior_counts")?.1)?;
    let counts = unflat(doc.floats("counts")?.1)?;
    let q_root = doc.floats("q_root")?.1.to_vec();
    let trace = doc.floats("elbo_trace")?.1.to_vec();
    if q_root.len() != data.nrows() {
        return Err(Error::DimensionMismatch { expected: data.nrows(), got: q_root.len() });
    }
    let mut state = VariationalState::with_counts(data, counts, q_root)?;
    state.elbo = elbo(&state, data, &prior)?;
    Ok((prior, state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_counts_give_equal_weights() {
        let data = array![[0.0], [1.0], [1.0]];
        let counts = DirichletPrior::symmetric(&[2], 1.0, 3.0).unwrap();
        let (b, _) = expected_log_weights(data.view(), &counts).unwrap();
        let expected = digamma(3.0) - digamma(6.0);
        for ((u, v), &l) in b.log_weights().indexed_iter() {
            if u != v {
                assert!((l - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kl_of_prior_with_itself_is_zero() {
        let prior = DirichletPrior::symmetric(&[3, 2], 1.0, 0.7).unwrap();
        assert_eq!(conditional_kl(&prior, &prior), 0.0);
    }

    #[test]
    fn zero_coupling_keeps_prior() {
        let data = array![[0.0], [1.0]];
        let prior = DirichletPrior::symmetric(&[2], 1.0, 2.0).unwrap();
        let zero = vec![Array2::zeros((2, 2)); 2];
        let c = update_q_c(data.view(), &prior, &[0.0, 0.0], &zero).unwrap();
        assert_eq!(c, prior);
    }

    #[test]
    fn two_node_bound_below_evidence() {
        let data = array![[0.0], [1.0]];
        let prior = DirichletPrior::symmetric(&[2], 1.0, 1.0).unwrap();
        let fit = vb_fit(data.view(), &prior, &VbOptions::default()).unwrap();
        let exact = exact_log_evidence(data.view(), &prior).unwrap();
        assert!(fit.state.elbo <= exact + 1e-9);
    }

    #[test]
    fn bound_is_tight_when_trees_share_statistics() {
        // both trees use the same table entry, so q_c is the exact posterior
        let data = array![[1.0], [1.0]];
        let prior = DirichletPrior::symmetric(&[2], 1.0, 0.5).unwrap();
        let fit = vb_fit(data.view(), &prior, &VbOptions::default()).unwrap();
        let exact = exact_log_evidence(data.view(), &prior).unwrap();
        assert!((exact - fit.state.elbo).abs() < 1e-8, "{exact} {}", fit.state.elbo);
    }

    #[test]
    fn routes_agree_after_a_round() {
        let data = array![[0.0, 2.0], [1.0, 0.0], [1.0, 1.0], [0.0, 2.0]];
        let prior = DirichletPrior::symmetric(&[2, 3], 0.5, 1.5).unwrap();
        let s0 = VariationalState::initial(data.view(), &prior).unwrap();
        let [_, _, s] = vb_round(&s0, data.view(), &prior).unwrap();
        let (a, b) = q_root_routes(&s, data.view(), &prior).unwrap();
        let (za, zb) = (logsumexp(&a), logsumexp(&b));
        for (x, y) in a.iter().zip(&b) {
            assert!(((x - za) - (y - zb)).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let data = array![[0.0], [1.0], [1.0]];
        let prior = DirichletPrior::symmetric(&[2], 1.0, 1.0).unwrap();
        let fit = vb_fit(data.view(), &prior, &VbOptions { max_rounds: 3, ..VbOptions::default() }).unwrap();
        let doc = Document::parse(&checkpoint_document(&fit, &prior).render()).unwrap();
        let (p, s, trace) = resume_from_document(&doc, data.view()).unwrap();
        assert_eq!(p, prior);
        assert_eq!(trace, fit.trace);
        assert_eq!(s.elbo, fit.state.elbo);
        let more = vb_fit_from(data.view(), &p, s, &VbOptions::default()).unwrap();
        assert!(more.state.elbo >= fit.state.elbo - 1e-10);
    }
}

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::{check_params, MutationModel};
use crate::doc::Document;
use crate::error::{Error, Result};

/// Probability tables for each attribute dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularParams {
    /// `root[d][a]` = p(X(d) = a) at the root.
    pub root: Vec<Array1<f64>>,
    /// `cond[d][[a, b]]` = p(child value a | parent value b); columns sum to 1.
    pub cond: Vec<Array2<f64>>,
}

impl TabularParams {
    /// Conditional columns all equal to the root table, so the conditional
    /// ignores the parent.
    pub fn parent_independent(root: Vec<Array1<f64>>) -> Self {
        let cond = root
            .iter()
            .map(|m| Array2::from_shape_fn((m.len(), m.len()), |(a, _)| m[a]))
            .collect();
        TabularParams { root, cond }
    }
}

/// Discrete model with independent dimensions; child dimension `d` depends
/// only on parent dimension `d`. Attribute values are category indices
/// stored as `f64`.
///
/// Parameters are log-odds against the last category. Per dimension: root
/// logits (`K-1`), then `K-1` logits for each parent value column.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    logits: Vec<f64>,
    log_root: Vec<Array1<f64>>,
    log_cond: Vec<Array2<f64>>,
}

impl TabularModel {
    pub fn new(p: &TabularParams) -> Result<Self> {
        if p.root.is_empty() || p.root.len() != p.cond.len() {
            return Err(Error::InvalidInput("tabular model needs matching root and conditional tables".into()));
        }
        let sizes: Vec<usize> = p.root.iter().map(|m| m.len()).collect();
        let mut logits = Vec::new();
        for (d, (m, c)) in p.root.iter().zip(&p.cond).enumerate() {
            let k = sizes[d];
            if k < 2 || c.dim() != (k, k) {
                return Err(Error::InvalidInput(format!("dimension {d}: tables need shape K and KxK with K >= 2")));
            }
            check_distribution(m.view(), &format!("root table {d}"))?;
            logits.extend((0..k - 1).map(|a| (m[a] / m[k - 1]).ln()));
            for b in 0..k {
                let col = c.column(b);
                check_distribution(col, &format!("conditional table {d} column {b}"))?;
                logits.extend((0..k - 1).map(|a| (col[a] / col[k - 1]).ln()));
            }
        }
        Ok(Self::from_logits(sizes, logits))
    }

    fn from_logits(sizes: Vec<usize>, logits: Vec<f64>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut k_off = 0;
        let mut log_root = Vec::with_capacity(sizes.len());
        let mut log_cond = Vec::with_capacity(sizes.len());
        for &k in &sizes {
            offsets.push(k_off);
            log_root.push(Array1::from(log_softmax(&logits[k_off..k_off + k - 1])));
            let mut c = Array2::zeros((k, k));
            for b in 0..k {
                let start = k_off + (k - 1) * (1 + b);
                for (a, v) in log_softmax(&logits[start..start + k - 1]).into_iter().enumerate() {
                    c[[a, b]] = v;
                }
            }
            log_cond.push(c);
            k_off += (k - 1) * (k + 1);
        }
        TabularModel { sizes, offsets, logits, log_root, log_cond }
    }

    /// Laplace-smoothed (add-one) empirical frequencies in both the root
    /// and every conditional column, so the conditional equals the marginal.
    pub fn init_iid(data: ArrayView2<f64>, sizes: &[usize]) -> Result<Self> {
        let t = data.nrows();
        if t < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: t });
        }
        if data.ncols() != sizes.len() {
            return Err(Error::DimensionMismatch { expected: sizes.len(), got: data.ncols() });
        }
        let mut root = Vec::new();
        for (d, &k) in sizes.iter().enumerate() {
            let mut counts = Array1::from_elem(k, 1.0);
            for x in data.column(d) {
                counts[category(*x, k)?] += 1.0;
            }
            let total = counts.sum();
            root.push(counts / total);
        }
        Self::new(&TabularParams::parent_independent(root))
    }

    pub fn alphabet_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn to_params(&self) -> TabularParams {
        TabularParams {
            root: self.log_root.iter().map(|m| m.mapv(f64::exp)).collect(),
            cond: self.log_cond.iter().map(|c| c.mapv(f64::exp)).collect(),
        }
    }

    pub fn log_root_table(&self, d: usize) -> ArrayView1<'_, f64> {
        self.log_root[d].view()
    }

    pub fn log_cond_table(&self, d: usize) -> ArrayView2<'_, f64> {
        self.log_cond[d].view()
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let (_, sizes) = doc.ints("alphabet_sizes")?;
        let sizes: Vec<usize> = sizes.iter().map(|&k| k as usize).collect();
        if sizes.iter().any(|&k| k < 2) {
            return Err(Error::Document("alphabet sizes must be at least 2".into()));
        }
        let n: usize = sizes.iter().map(|k| (k - 1) * (k + 1)).sum();
        let (_, params) = doc.floats("params")?;
        check_params(n, params)?;
        Ok(Self::from_logits(sizes, params.to_vec()))
    }
}

fn cats<'a>(x: ArrayView1<'a, f64>) -> impl Iterator<Item = usize> + 'a {
    x.into_iter().map(|&v| v as usize)
}

fn check_distribution(p: ArrayView1<f64>, what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} must be strictly positive")));
    }
    if (p.sum() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("{what} does not sum to 1")));
    }
    Ok(())
}

pub(crate) fn category(x: f64, k: usize) -> Result<usize> {
    if x.fract() != 0.0 || x < 0.0 || x >= k as f64 {
        return Err(Error::InvalidInput(format!("category value {x} outside 0..{k}")));
    }
    Ok(x as usize)
}

/// Log-probabilities from `K-1` logits with an implicit zero logit last.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(0.0f64, f64::max);
    let s: f64 = logits.iter().map(|l| (l - m).exp()).sum::<f64>() + (-m).exp();
    let lse = m + s.ln();
    logits.iter().map(|l| l - lse).chain(std::iter::once(-lse)).collect()
}

fn sample_log_categorical<R: Rng + ?Sized>(log_p: ArrayView1<f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, lp) in log_p.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return a;
        }
    }
    log_p.len() - 1
}

impl MutationModel for TabularModel {
    fn family(&self) -> &'static str {
        "tabular"
    }

    fn dim(&self) -> usize {
        self.sizes.len()
    }

    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn params(&self) -> Vec<f64> {
        self.logits.clone()
    }

    fn with_params(&self, params: &[f64]) -> Result<Self> {
        check_params(self.num_params(), params)?;
        Ok(Self::from_logits(self.sizes.clone(), params.to_vec()))
    }

    fn check_row(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        for (&v, &k) in x.iter().zip(&self.sizes) {
            category(v, k)?;
        }
        Ok(())
    }

    fn log_marginal(&self, x: ArrayView1<f64>) -> f64 {
        cats(x).enumerate().map(|(d, a)| self.log_root[d][a]).sum()
    }

    fn log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>) -> f64 {
        cats(child)
            .zip(cats(parent))
            .enumerate()
            .map(|(d, (a, b))| self.log_cond[d][[a, b]])
            .sum()
    }

    fn grad_log_marginal(&self, x: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        for (d, a) in cats(x).enumerate() {
            let k = self.sizes[d];
            let off = self.offsets[d];
            for j in 0..k - 1 {
                let ind = if j == a { 1.0 } else { 0.0 };
                out[off + j] += weight * (ind - self.log_root[d][j].exp());
            }
        }
    }

    fn grad_log_conditional(&self, child: ArrayView1<f64>, parent: ArrayView1<f64>, weight: f64, out: &mut [f64]) {
        for (d, (a, b)) in cats(child).zip(cats(parent)).enumerate() {
            let k = self.sizes[d];
            let off = self.offsets[d] + (k - 1) * (1 + b);
            for j in 0..k - 1 {
                let ind = if j == a { 1.0 } else { 0.0 };
                out[off + j] += weight * (ind - self.log_cond[d][[j, b]].exp());
            }
        }
    }

    fn accumulate_weight_gradient(&self, data: ArrayView2<f64>, root: &[f64], edge: &Array2<f64>, out: &mut [f64]) {
        // Sufficient statistics first, then one pass over the tables.
        for (d, &k) in self.sizes.iter().enumerate() {
            let col: Vec<usize> = data.column(d).iter().map(|&v| v as usize).collect();
            let mut root_counts = vec![0.0; k];
            for (r, &w) in root.iter().enumerate() {
                root_counts[col[r]] += w;
            }
            let mut pair_counts = Array2::<f64>::zeros((k, k));
            for ((u, v), &w) in edge.indexed_iter() {
                if u != v {
                    pair_counts[[col[u], col[v]]] += w;
                }
            }
            let off = self.offsets[d];
            let root_total: f64 = root_counts.iter().sum();
            for j in 0..k - 1 {
                out[off + j] += root_counts[j] - root_total * self.log_root[d][j].exp();
            }
            for b in 0..k {
                let total: f64 = pair_counts.column(b).sum();
                let start = off + (k - 1) * (1 + b);
                for j in 0..k - 1 {
                    out[start + j] += pair_counts[[j, b]] - total * self.log_cond[d][[j, b]].exp();
                }
            }
        }
    }

    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        self.log_root.iter().map(|m| sample_log_categorical(m.view(), rng) as f64).collect()
    }

    fn sample_conditional<R: Rng + ?Sized>(&self, parent: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
        cats(parent)
            .enumerate()
            .map(|(d, b)| sample_log_categorical(self.log_cond[d].column(b), rng) as f64)
            .collect()
    }

    fn to_document(&self) -> Document {
        let mut doc = Document::new(self.family());
        doc.put_ints("dim", &[1], vec![self.dim() as u64]);
        doc.put_ints("alphabet_sizes", &[self.dim()], self.sizes.iter().map(|&k| k as u64).collect());
        doc.put_floats("params", &[self.logits.len()], self.logits.clone());
        doc
    }
}

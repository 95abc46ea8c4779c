#![allow(dead_code)]

use ndarray::{Array1, Array2};
use outtree::models::{GaussianModel, GaussianParams, TabularModel, TabularParams};
use outtree::treemath::{RootWeights, WeightMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Off-diagonal weights uniform on (0.05, 1).
pub fn random_beta(t: usize, rng: &mut impl Rng) -> WeightMatrix {
    let b = Array2::from_shape_fn((t, t), |(u, v)| if u == v { 0.0 } else { rng.random_range(0.05..1.0) });
    WeightMatrix::from_weights(b).unwrap()
}

pub fn random_roots(t: usize, rng: &mut impl Rng) -> RootWeights {
    let p: Vec<f64> = (0..t).map(|_| rng.random_range(0.05..1.0)).collect();
    RootWeights::from_values(&p).unwrap()
}

pub fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_distribution(k: usize, rng: &mut impl Rng) -> Array1<f64> {
    let v = Array1::from_shape_fn(k, |_| rng.random_range(0.1..1.0));
    let s = v.sum();
    v / s
}

pub fn random_tabular(sizes: &[usize], rng: &mut impl Rng) -> TabularModel {
    let root = sizes.iter().map(|&k| random_distribution(k, rng)).collect();
    let cond = sizes
        .iter()
        .map(|&k| {
            let mut m = Array2::zeros((k, k));
            for b in 0..k {
                m.column_mut(b).assign(&random_distribution(k, rng));
            }
            m
        })
        .collect();
    TabularModel::new(&TabularParams { root, cond }).unwrap()
}

pub fn random_categories(t: usize, sizes: &[usize], rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((t, sizes.len()), |(_, d)| rng.random_range(0..sizes[d]) as f64)
}

pub fn random_spd(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
    a.dot(&a.t()) + Array2::<f64>::eye(d) * 0.5
}

pub fn random_gaussian(d: usize, rng: &mut impl Rng) -> GaussianModel {
    GaussianModel::new(&GaussianParams {
        mu_c: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
        mu_pi: Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5)),
        sigma_c_given_pi: Array2::from_shape_fn((d, d), |_| rng.random_range(-0.6..0.6)),
        sigma_cc: random_spd(d, rng),
        sigma_pipi: random_spd(d, rng),
    })
    .unwrap()
}

pub fn random_normal_data(t: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_fn((t, d), |_| StandardNormal.sample(rng))
}

/// Every dataset of `t` rows over one dimension with alphabet `k`, in
/// lexicographic order.
pub fn all_datasets(t: usize, k: usize) -> Vec<Array2<f64>> {
    let n = k.pow(t as u32);
    (0..n)
        .map(|mut code| {
            let mut x = Array2::zeros((t, 1));
            for i in 0..t {
                x[[i, 0]] = (code % k) as f64;
                code /= k;
            }
            x
        })
        .collect()
}

/// Central differences of `f` along each coordinate.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor for near-zero components.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

//! Synthetic 3D spiral: `(s cos s, s sin s, s)` with `s` uniform on
//! `[0, 2π·turns]`, plus isotropic Gaussian noise.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpiralSpec {
    pub t: usize,
    pub noise: f64,
    pub turns: f64,
}

impl SpiralSpec {
    pub fn new(t: usize, noise: f64, turns: f64) -> CliResult<Self> {
        if t < 10 {
            return Err(CliError::Config(format!("spiral needs at least 10 samples, got {t}")));
        }
        if !(noise >= 0.0) || !noise.is_finite() {
            return Err(CliError::Config(format!("spiral noise must be non-negative, got {noise}")));
        }
        if !(turns > 0.0) || !turns.is_finite() {
            return Err(CliError::Config(format!("spiral turns must be positive, got {turns}")));
        }
        Ok(SpiralSpec { t, noise, turns })
    }

    pub fn s_max(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.turns
    }
}

pub fn curve(s: f64) -> Array1<f64> {
    ndarray::array![s * s.cos(), s * s.sin(), s]
}

/// Returns the points and their curve parameters.
pub fn gen_spiral<R: Rng + ?Sized>(spec: &SpiralSpec, rng: &mut R) -> (Array2<f64>, Vec<f64>) {
    let mut x = Array2::zeros((spec.t, 3));
    let mut params = Vec::with_capacity(spec.t);
    for mut row in x.rows_mut() {
        let s = rng.random::<f64>() * spec.s_max();
        let mut p = curve(s);
        for v in p.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += spec.noise * z;
        }
        row.assign(&p);
        params.push(s);
    }
    (x, params)
}

/// Distance from `x` to the curve over `s` in `[0, s_max]`, by a dense grid
/// followed by golden-section refinement.
pub fn distance_to_curve(x: ndarray::ArrayView1<f64>, s_max: f64) -> f64 {
    let d2 = |s: f64| {
        let c = curve(s);
        c.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let n = 4000;
    let h = s_max / n as f64;
    let best = (0..=n).min_by(|&a, &b| d2(a as f64 * h).total_cmp(&d2(b as f64 * h))).unwrap_or(0);
    let (mut lo, mut hi) = (((best as f64) - 1.0).max(0.0) * h, ((best as f64) + 1.0).min(n as f64) * h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if d2(a) < d2(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    d2(0.5 * (lo + hi)).sqrt()
}

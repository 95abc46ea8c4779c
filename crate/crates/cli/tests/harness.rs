use std::collections::BTreeSet;

use ndarray::Array2;
use outtree::sampler::substream;
use outtree_cli::harness::{mean_se, pca3, split_indices};
use outtree_cli::spiral::{distance_to_curve, gen_spiral, SpiralSpec};
use proptest::prelude::*;

fn mean_distance(noise: f64, seed: u64) -> f64 {
    let spec = SpiralSpec::new(3000, noise, 2.0).unwrap();
    let (x, _) = gen_spiral(&spec, &mut substream(seed, 0));
    x.rows().into_iter().map(|r| distance_to_curve(r, spec.s_max())).sum::<f64>() / spec.t as f64
}

#[test]
fn doubling_noise_doubles_distance_to_curve() {
    let (a, b) = (mean_distance(0.05, 11), mean_distance(0.1, 12));
    let ratio = b / a;
    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio} ({a} then {b})");
}

#[test]
fn mean_se_of_constants_is_zero_spread() {
    assert_eq!(mean_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
}

#[test]
fn pca_keeps_planar_spread() {
    let mut rng = substream(5, 0);
    let x = Array2::from_shape_fn((50, 6), |(_, j)| if j < 2 { rand::Rng::random_range(&mut rng, -3.0..3.0) } else { 0.0 });
    let z = pca3(x.view()).unwrap();
    assert_eq!(z.dim(), (50, 3));
    assert!(z.column(2).iter().all(|v| v.abs() < 1e-9));
    let centred = &x - &x.mean_axis(ndarray::Axis(0)).unwrap();
    let total: f64 = centred.iter().map(|v| v * v).sum();
    let kept: f64 = z.iter().map(|v| v * v).sum();
    assert!((total - kept).abs() < 1e-8 * total);
}

proptest! {
    #[test]
    fn splits_partition_the_rows(t in 3usize..400, val in 0.0f64..0.3, test in 0.0f64..0.3, seed in any::<u64>()) {
        let s = split_indices(t, [1.0 - val - test, val, test], &mut substream(seed, 1)).unwrap();
        prop_assert!(!s.train.is_empty() && !s.validation.is_empty() && !s.test.is_empty());
        let all: BTreeSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), t);
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), t);
        prop_assert_eq!(all.into_iter().max(), Some(t - 1));
    }
}

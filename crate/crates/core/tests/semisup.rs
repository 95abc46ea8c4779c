mod common;

use common::{random_gaussian, random_normal_data, rng};
use ndarray::{Array1, Array2};
use outtree::models::*;
use outtree::sampler::{sample_dataset, substream};
use outtree::semisup::*;
use outtree::treemath::{edge_marginals, log_partition};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_walk_model() -> GaussianModel {
    GaussianModel::new(&GaussianParams {
        mu_c: Array1::zeros(2),
        mu_pi: Array1::zeros(2),
        sigma_c_given_pi: Array2::eye(2),
        sigma_cc: Array2::eye(2) * 0.25,
        sigma_pipi: Array2::eye(2) * 4.0,
    })
    .unwrap()
}

fn masked(y: &[usize], fraction: f64, r: &mut impl Rng) -> Vec<Option<usize>> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.shuffle(r);
    let keep = ((y.len() as f64) * fraction).round() as usize;
    let mut out = vec![None; y.len()];
    for &i in &idx[..keep] {
        out[i] = Some(y[i]);
    }
    out
}

/// Data from the random-walk model with labels mutated along the same tree.
fn synthetic(t: usize, alpha: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let model = random_walk_model();
    let draw = sample_dataset(&model, t, seed).unwrap();
    let y = sample_tree_labels(&draw.tree, &LabelModel::new(alpha, 2).unwrap(), &mut substream(seed, u64::MAX - 1));
    (draw.data, y)
}

#[test]
fn joint_weights_are_the_product_of_factors() {
    let mut r = rng(40);
    let model = random_gaussian(2, &mut r);
    let x = random_normal_data(4, 2, &mut r);
    let y = [0usize, 2, 1, 2];
    let lm = LabelModel::new(0.7, 3).unwrap();
    let labels: Vec<Option<usize>> = y.iter().map(|&c| Some(c)).collect();
    let (beta, roots) = build_joint_beta(x.view(), &labels, &model, &lm).unwrap();
    for u in 0..4 {
        let want = model.log_marginal(x.row(u)) - 3f64.ln();
        assert!((roots.log_values()[u] - want).abs() < 1e-12);
        for v in (0..4).filter(|&v| v != u) {
            let p = if y[u] == y[v] { 0.7 } else { 0.15 };
            let want = model.log_conditional(x.row(u), x.row(v)) + f64::ln(p);
            assert!((beta.log_weights()[[u, v]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_stickiness_leaves_posteriors_alone() {
    let mut r = rng(41);
    let model = random_gaussian(2, &mut r);
    let x = random_normal_data(6, 2, &mut r);
    let labels: Vec<Option<usize>> = (0..6).map(|i| Some(i % 3)).collect();
    let (jb, jr) = build_joint_beta(x.view(), &labels, &model, &LabelModel::new(1.0 / 3.0, 3).unwrap()).unwrap();
    let (b, rt) = build_beta(x.view(), &model).unwrap();
    let a = edge_marginals(&jb, &jr, false).unwrap();
    let c = edge_marginals(&b, &rt, false).unwrap();
    assert!((a.w - c.w).iter().all(|d| d.abs() < 1e-9));
    for (p, q) in a.root_posterior.iter().zip(&c.root_posterior) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn flip_deltas_match_recomputation() {
    let mut r = rng(42);
    let model = random_gaussian(2, &mut r);
    let x = random_normal_data(15, 2, &mut r);
    let lm = LabelModel::new(0.6, 3).unwrap();
    let labels: Vec<usize> = (0..15).map(|_| r.random_range(0..3)).collect();
    let state = InferenceState::new(x.view(), labels.clone(), vec![false; 15], &model, lm).unwrap();
    for i in 0..15 {
        for c in (0..3).filter(|&c| c != labels[i]) {
            let mut after = labels.clone();
            after[i] = c;
            let full = |l: &[usize]| {
                let y: Vec<Option<usize>> = l.iter().map(|&c| Some(c)).collect();
                let (b, rt) = build_joint_beta(x.view(), &y, &model, &lm).unwrap();
                log_partition(&b, &rt).unwrap().log_z
            };
            let want = full(&after) - full(&labels);
            assert!((state.flip_delta(i, c).unwrap() - want).abs() < 1e-8);
        }
    }
    assert!(state.flip_delta(0, labels[0]).is_err());
}

#[test]
fn flip_and_back_negate() {
    let mut r = rng(43);
    let model = random_gaussian(2, &mut r);
    let x = random_normal_data(10, 2, &mut r);
    let lm = LabelModel::new(0.8, 2).unwrap();
    let mut state = InferenceState::new(x.view(), vec![0; 10], vec![false; 10], &model, lm).unwrap();
    let forward = state.flip_delta(3, 1).unwrap();
    state.commit(3, 1).unwrap();
    let back = state.flip_delta(3, 0).unwrap();
    assert!((forward + back).abs() < 1e-9);
}

#[test]
fn commits_climb_and_stay_exact() {
    let (x, truth) = synthetic(30, 0.9, 44);
    let model = random_walk_model();
    let y = masked(&truth, 0.3, &mut rng(44));
    let lm = LabelModel::new(0.9, 2).unwrap();
    let mut r = rng(45);
    let start: Vec<usize> = y.iter().map(|c| c.unwrap_or_else(|| r.random_range(0..2))).collect();
    let observed: Vec<bool> = y.iter().map(Option::is_some).collect();
    let mut state = InferenceState::new(x.view(), start, observed.clone(), &model, lm).unwrap();
    let mut last = state.log_partition();
    for _ in 0..5 {
        let order: Vec<usize> = (0..30).filter(|&i| !observed[i]).collect();
        for i in order {
            let c = 1 - state.labels()[i];
            if state.flip_delta(i, c).unwrap() > 0.0 {
                let lz = state.commit(i, c).unwrap();
                assert!(lz >= last);
                assert!((lz - state.recompute_log_partition().unwrap()).abs() < 1e-8);
                last = lz;
            }
        }
    }
    for i in (0..30).filter(|&i| observed[i]) {
        assert_eq!(Some(state.labels()[i]), y[i]);
    }
}

#[test]
fn single_missing_label_matches_exhaustive() {
    let mut r = rng(46);
    for _ in 0..5 {
        let model = random_gaussian(2, &mut r);
        let x = random_normal_data(3, 2, &mut r);
        let data = LabeledDataset::new(x, vec![Some(0), None, Some(1)], 2).unwrap();
        let lm = LabelModel::new(0.8, 2).unwrap();
        let greedy = greedy_label_inference(&data, &model, &lm, &GreedyOptions::default()).unwrap();
        let (best, lz) = exhaustive_best_completion(&data, &model, &lm).unwrap();
        assert_eq!(greedy.labels, best);
        assert!((greedy.log_partition - lz).abs() < 1e-8);
    }
}

#[test]
fn greedy_with_restarts_usually_finds_the_optimum() {
    let mut hits = 0;
    let n = 40;
    for s in 0..n {
        let (x, truth) = synthetic(12, 0.85, 1000 + s);
        let mut r = rng(s);
        let mut y: Vec<Option<usize>> = truth.iter().map(|&c| Some(c)).collect();
        let mut idx: Vec<usize> = (0..12).collect();
        idx.shuffle(&mut r);
        for &i in &idx[..6] {
            y[i] = None;
        }
        let data = LabeledDataset::new(x, y, 2).unwrap();
        let model = random_walk_model();
        let lm = LabelModel::new(0.85, 2).unwrap();
        let opts = GreedyOptions { restarts: 10, seed: s, ..GreedyOptions::default() };
        let greedy = greedy_label_inference(&data, &model, &lm, &opts).unwrap();
        let (_, best) = exhaustive_best_completion(&data, &model, &lm).unwrap();
        if greedy.log_partition >= best - 1e-8 {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.95 * n as f64, "{hits}/{n}");
}

#[test]
fn uninformative_alpha_commits_nothing() {
    let (x, truth) = synthetic(20, 0.9, 47);
    let data = LabeledDataset::new(x, masked(&truth, 0.3, &mut rng(47)), 2).unwrap();
    let lm = LabelModel::new(0.5, 2).unwrap();
    let res = greedy_label_inference(&data, &random_walk_model(), &lm, &GreedyOptions { restarts: 1, ..Default::default() })
        .unwrap();
    assert_eq!(res.state.sweeps(), 1);
}

#[test]
fn beats_majority_on_sticky_labels() {
    let mut wins = 0;
    for seed in 0..10 {
        let (x, truth) = synthetic(60, 0.9, 500 + seed);
        let data = LabeledDataset::new(x, masked(&truth, 0.3, &mut rng(seed)), 2).unwrap();
        let lm = LabelModel::new(0.9, 2).unwrap();
        let res = greedy_label_inference(&data, &random_walk_model(), &lm, &GreedyOptions { seed, ..Default::default() })
            .unwrap();
        let missing = data.missing();
        let ours = accuracy(&res.labels, &truth, &missing);
        let base = accuracy(&majority_baseline(&data), &truth, &missing);
        if ours > base {
            wins += 1;
        }
    }
    assert!(wins >= 8, "{wins}/10");
}

#[test]
fn single_value_grid_is_returned() {
    let (x, truth) = synthetic(10, 0.9, 48);
    let data = LabeledDataset::new(x, masked(&truth, 0.5, &mut rng(48)), 2).unwrap();
    let sel = cross_validate_alpha(&data, &random_walk_model(), &[0.8], 2, &GreedyOptions::default()).unwrap();
    assert_eq!(sel.best, 0.8);
    assert!(cross_validate_alpha(&data, &random_walk_model(), &[], 2, &GreedyOptions::default()).is_err());
}

#[test]
fn tie_goes_to_the_value_nearest_one_half() {
    // with every label observed except held-out folds and alpha values that
    // all reproduce the same labels, accuracies tie
    let (x, truth) = synthetic(12, 0.9, 49);
    let y: Vec<Option<usize>> = truth.iter().map(|&c| Some(c)).collect();
    let data = LabeledDataset::new(x, y, 2).unwrap();
    let grid = [0.9, 0.55, 0.6];
    let sel = cross_validate_alpha(&data, &random_walk_model(), &grid, 3, &GreedyOptions::default()).unwrap();
    let top = sel.accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<f64> = grid.iter().zip(&sel.accuracies).filter(|(_, a)| (**a - top).abs() <= 1e-12).map(|(g, _)| *g).collect();
    let nearest = tied.iter().cloned().min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs())).unwrap();
    assert_eq!(sel.best, nearest);
}

#[test]
fn sticky_data_selects_sticky_alpha() {
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
    let mut hits = 0;
    for seed in 0..10 {
        let (x, truth) = synthetic(60, 0.95, 700 + seed);
        let data = LabeledDataset::new(x, masked(&truth, 0.5, &mut rng(seed)), 2).unwrap();
        let opts = GreedyOptions { restarts: 2, seed, ..Default::default() };
        let sel = cross_validate_alpha(&data, &random_walk_model(), &grid, 2, &opts).unwrap();
        if sel.best >= 0.7 {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits}/10");
}

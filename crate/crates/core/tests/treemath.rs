mod common;

use common::{random_beta, random_roots, relative, rng};
use ndarray::Array2;
use outtree::treemath::*;
use outtree::OutTree;
use proptest::prelude::*;

fn trees_by_root(beta: &WeightMatrix, t: usize) -> Vec<(OutTree, f64)> {
    let unit = RootWeights::uniform(t);
    enumerate_out_trees(t)
        .unwrap()
        .into_iter()
        .map(|tr| {
            let w = tree_log_weight(beta, &unit, &tr).exp();
            (tr, w)
        })
        .collect()
}

#[test]
fn determinant_matches_enumeration() {
    let mut r = rng(1);
    for t in 2..=5 {
        for _ in 0..10 {
            let beta = random_beta(t, &mut r);
            let roots = random_roots(t, &mut r);
            let fast = log_partition(&beta, &roots).unwrap();
            let slow = brute_force_log_partition(&beta, &roots).unwrap();
            assert!(relative(fast.log_z.exp(), slow.log_z.exp()) < 1e-9);
            let by_roots = log_partition_by_roots(&beta, &roots).unwrap();
            assert!((by_roots.log_z - fast.log_z).abs() < 1e-9 * fast.log_z.abs().max(1.0));
        }
    }
}

#[test]
fn per_root_partition_matches_enumeration() {
    let mut r = rng(2);
    for t in 2..=5 {
        let beta = random_beta(t, &mut r);
        let per_root = log_partition_per_root(&beta).unwrap();
        let mut zr = vec![0.0; t];
        for (tr, w) in trees_by_root(&beta, t) {
            zr[tr.root()] += w;
        }
        for (a, b) in per_root.iter().zip(&zr) {
            assert!(relative(a.exp(), *b) < 1e-9);
        }
    }
}

#[test]
fn edge_marginals_match_enumeration() {
    let mut r = rng(3);
    let t = 5;
    let beta = random_beta(t, &mut r);
    let roots = random_roots(t, &mut r);
    let mut w = Array2::<f64>::zeros((t, t));
    let mut z = 0.0;
    let mut post = vec![0.0; t];
    for tr in enumerate_out_trees(t).unwrap() {
        let p = tree_log_weight(&beta, &roots, &tr).exp();
        z += p;
        post[tr.root()] += p;
        for (c, par) in tr.edges() {
            w[[c, par]] += p;
        }
    }
    let fast = edge_marginals(&beta, &roots, false).unwrap();
    let slow = edge_marginals(&beta, &roots, true).unwrap();
    for ((u, v), &x) in w.indexed_iter() {
        assert!((fast.w[[u, v]] - x / z).abs() < 1e-9);
        assert!((slow.w[[u, v]] - x / z).abs() < 1e-9);
    }
    for (a, b) in fast.root_posterior.iter().zip(&post) {
        assert!((a - b / z).abs() < 1e-9);
    }
    assert!((fast.w.sum() - (t - 1) as f64).abs() < 1e-8);
    for (r0, p) in slow.per_root.unwrap().iter().enumerate() {
        for u in (0..t).filter(|&u| u != r0) {
            assert!((p.row(u).sum() - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn root_posterior_matches_enumeration() {
    let mut r = rng(4);
    let t = 4;
    let beta = random_beta(t, &mut r);
    let roots = random_roots(t, &mut r);
    let mut post = vec![0.0; t];
    for tr in enumerate_out_trees(t).unwrap() {
        post[tr.root()] += tree_log_weight(&beta, &roots, &tr).exp();
    }
    let z: f64 = post.iter().sum();
    for (a, b) in root_posterior(&beta, &roots).unwrap().iter().zip(&post) {
        assert!((a - b / z).abs() < 1e-10);
    }
}

#[test]
fn entropy_matches_enumeration() {
    let mut r = rng(5);
    let t = 4;
    let beta = random_beta(t, &mut r);
    for root in 0..t {
        let ws: Vec<f64> = trees_by_root(&beta, t).into_iter().filter(|(tr, _)| tr.root() == root).map(|x| x.1).collect();
        let z: f64 = ws.iter().sum();
        let h: f64 = ws.iter().map(|w| -(w / z) * (w / z).ln()).sum();
        assert!((tree_entropy(&beta, root).unwrap() - h).abs() < 1e-8);
    }
}

#[test]
fn chain_rooted_at_last_node_is_enumerated() {
    let chain = OutTree::new(2, vec![Some(1), Some(2), None]).unwrap();
    assert!(enumerate_out_trees(3).unwrap().contains(&chain));
}

#[test]
fn batch_edits_match_fresh_factorization() {
    let mut r = rng(6);
    let t = 20;
    let beta = random_beta(t, &mut r);
    let roots = random_roots(t, &mut r);
    let mut session = LogDetSession::new(&beta, &roots).unwrap();
    let mut log = beta.log_weights().clone();
    let edits: Vec<BetaEdit> = (0..t - 1)
        .map(|_| {
            use rand::Rng;
            let u = r.random_range(0..t);
            let v = (u + r.random_range(1..t)) % t;
            let lw = r.random_range(0.05f64..1.0).ln();
            log[[u, v]] = lw;
            BetaEdit { child: u, parent: v, log_weight: lw }
        })
        .collect();
    logdet_edit(&mut session, &edits).unwrap();
    let fresh = log_partition(&WeightMatrix::from_log_weights(log).unwrap(), &roots).unwrap();
    assert!((session.log_partition() - fresh.log_z).abs() < 1e-8);
}

#[test]
fn enumeration_guard() {
    assert!(enumerate_out_trees(MAX_ENUMERATION_SIZE + 1).is_err());
}

#[test]
fn large_log_weights_do_not_overflow() {
    let mut r = rng(7);
    let t = 6;
    let beta = random_beta(t, &mut r);
    let shifted = WeightMatrix::from_log_weights(beta.log_weights().mapv(|x| x - 2000.0)).unwrap();
    let roots = RootWeights::uniform(t);
    let a = log_partition(&beta, &roots).unwrap().log_z;
    let b = log_partition(&shifted, &roots).unwrap().log_z;
    assert!((b - (a - 2000.0 * (t - 1) as f64)).abs() < 1e-9 * b.abs());
}

fn instance() -> impl Strategy<Value = (usize, u64)> {
    (2usize..7, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn laplacian_rows_sum_to_zero((t, seed) in instance()) {
        let q = build_out_laplacian(&random_beta(t, &mut rng(seed)));
        for row in q.matrix.rows() {
            prop_assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_shifts_each_root((t, seed) in instance(), s in -5.0f64..5.0) {
        let mut r = rng(seed);
        let beta = random_beta(t, &mut r);
        let roots = random_roots(t, &mut r);
        let scaled = WeightMatrix::from_log_weights(beta.log_weights().mapv(|x| x + s)).unwrap();
        let a = log_partition_per_root(&beta).unwrap();
        let b = log_partition_per_root(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((y - x - (t - 1) as f64 * s).abs() < 1e-9 * x.abs().max(1.0));
        }
        let pa = root_posterior(&beta, &roots).unwrap();
        let pb = root_posterior(&scaled, &roots).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let wa = edge_marginals(&beta, &roots, false).unwrap().w;
        let wb = edge_marginals(&scaled, &roots, false).unwrap().w;
        prop_assert!((wa - wb).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn permutation_equivariance((t, seed) in instance()) {
        use rand::seq::SliceRandom;
        let mut r = rng(seed);
        let beta = random_beta(t, &mut r);
        let roots = random_roots(t, &mut r);
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut r);
        let pb = beta.permuted(&perm).unwrap();
        let pr = roots.permuted(&perm).unwrap();
        let a = log_partition(&beta, &roots).unwrap().log_z;
        let b = log_partition(&pb, &pr).unwrap().log_z;
        prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        let za = log_partition_per_root(&beta).unwrap();
        let zb = log_partition_per_root(&pb).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((zb[i] - za[p]).abs() < 1e-9 * za[p].abs().max(1.0));
        }
    }

    #[test]
    fn symmetric_weights_give_equal_roots((t, seed) in instance()) {
        let beta = random_beta(t, &mut rng(seed)).to_dense();
        let sym = WeightMatrix::from_weights(&beta + &beta.t()).unwrap();
        let z = log_partition_per_root(&sym).unwrap();
        for x in &z {
            prop_assert!((x - z[0]).abs() < 1e-9 * z[0].abs().max(1.0));
        }
    }

    #[test]
    fn augmented_matches_per_root_route((t, seed) in instance()) {
        let mut r = rng(seed);
        let beta = random_beta(t, &mut r);
        let roots = random_roots(t, &mut r);
        let a = log_partition(&beta, &roots).unwrap().log_z;
        let b = log_partition_by_roots(&beta, &roots).unwrap().log_z;
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn entropy_is_nonnegative((t, seed) in instance(), root in 0usize..6) {
        let beta = random_beta(t, &mut rng(seed));
        prop_assert!(tree_entropy(&beta, root % t).unwrap() >= -1e-8);
    }
}

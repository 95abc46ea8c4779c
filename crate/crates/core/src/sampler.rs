//! Forward sampling: a uniform out-tree, then attributes from the root down.
//!
//! Randomness comes from ChaCha8 seeded once per draw. Stream 0 drives the
//! tree, stream `t + 1` drives the attributes of node `t`, so a node's
//! values do not depend on the order in which nodes are visited.

use std::fmt::Write;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::MutationModel;
use crate::tree::OutTree;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub tree: OutTree,
    pub data: Array2<f64>,
    pub seed: u64,
}

/// ChaCha8 generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw over all `T^(T-1)` out-trees: a uniform Prüfer sequence
/// decoded into a labeled tree, a uniform root, and edges oriented away from
/// the root.
pub fn sample_uniform_out_tree<R: Rng + ?Sized>(t: usize, rng: &mut R) -> Result<OutTree> {
    if t == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let edges = if t == 1 {
        Vec::new()
    } else {
        let seq: Vec<usize> = (0..t - 2).map(|_| rng.random_range(0..t)).collect();
        prufer_decode(&seq, t)
    };
    let root = rng.random_range(0..t);
    orient(t, root, &edges)
}

/// Undirected edges of the labeled tree encoded by `seq` (length `t - 2`).
fn prufer_decode(seq: &[usize], t: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; t];
    for &s in seq {
        degree[s] += 1;
    }
    let mut leaves: std::collections::BinaryHeap<std::cmp::Reverse<usize>> =
        (0..t).filter(|&i| degree[i] == 1).map(std::cmp::Reverse).collect();
    let mut edges = Vec::with_capacity(t - 1);
    for &s in seq {
        let std::cmp::Reverse(leaf) = leaves.pop().expect("a leaf always exists");
        edges.push((leaf, s));
        degree[s] -= 1;
        if degree[s] == 1 {
            leaves.push(std::cmp::Reverse(s));
        }
    }
    let std::cmp::Reverse(a) = leaves.pop().expect("two leaves remain");
    let std::cmp::Reverse(b) = leaves.pop().expect("two leaves remain");
    edges.push((a, b));
    edges
}

fn orient(t: usize, root: usize, edges: &[(usize, usize)]) -> Result<OutTree> {
    let mut adj = vec![Vec::new(); t];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut parent = vec![None; t];
    let mut seen = vec![false; t];
    seen[root] = true;
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(v);
                stack.push(w);
            }
        }
    }
    OutTree::new(root, parent)
}

/// Attributes for a fixed tree: node `t` uses substream `t + 1` of `seed`.
pub fn sample_given_tree<M: MutationModel>(model: &M, tree: &OutTree, seed: u64) -> Array2<f64> {
    let t = tree.len();
    let mut data = Array2::zeros((t, model.dim()));
    for v in tree.topological_order() {
        let mut rng = substream(seed, v as u64 + 1);
        let x = match tree.parent(v) {
            None => model.sample_marginal(&mut rng),
            Some(p) => model.sample_conditional(data.row(p), &mut rng),
        };
        data.row_mut(v).assign(&x);
    }
    data
}

/// A full draw from the generative model with `T` samples.
pub fn sample_dataset<M: MutationModel>(model: &M, t: usize, seed: u64) -> Result<SampleDraw> {
    let tree = sample_uniform_out_tree(t, &mut substream(seed, 0))?;
    let data = sample_given_tree(model, &tree, seed);
    Ok(SampleDraw { tree, data, seed })
}

/// Header `x0,x1,...` then one row per sample, floats in shortest
/// round-trip form.
pub fn data_csv(data: ArrayView2<f64>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..data.ncols()).map(|d| format!("x{d}")).collect();
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

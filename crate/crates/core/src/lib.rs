//! Latent out-tree likelihoods.
//!
//! A dataset of `T` samples is modelled as the nodes of an unknown rooted
//! out-tree: the root is drawn from a marginal density and each other node
//! from a stationary parent-to-child conditional. Summing over all
//! `T^(T-1)` out-trees under a uniform structure prior gives an exchangeable
//! likelihood that reduces to the iid likelihood when the conditional
//! ignores the parent. The sum is a single determinant of a bordered
//! out-Laplacian, so evaluation and gradients cost `O(T^3)`.

pub mod doc;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod sampler;
pub mod semisup;
pub mod models;
pub mod tree;
pub mod treemath;
pub mod vb;

pub use error::{Error, Result};
pub use tree::OutTree;

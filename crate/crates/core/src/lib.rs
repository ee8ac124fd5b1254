//! Nyström-embedded kernel k-means.
//!
//! Landmarks are drawn uniformly or by ridge leverage scores, every point
//! is mapped to finite Nyström coordinates, and k-means++/Lloyd runs on
//! those coordinates. Alongside the fast path the crate carries exact
//! kernel-space oracles (Gram-form cost, brute-force ERM, dictionary
//! certificates) used to check the approximation numerically.

pub mod bench;
pub mod cluster;
pub mod error;
pub mod kernel;
pub mod landmarks;
pub mod linalg;
pub mod metrics;
pub mod nystrom;
pub mod seed;

pub use error::{KkmError, Result};
pub use kernel::{Dataset, GramMatrix, KernelFamily, KernelSpec};
pub use nystrom::{Dictionary, EmbeddedSet, Embedder, Sampler};

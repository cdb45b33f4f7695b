//! Graph intention network for click-through rate prediction.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`clicklog`] parses raw click logs and cuts each user's clicks into
//!    query-coherent sessions.
//! 2. [`cograph`] turns sessions into an undirected co-occurrence graph over
//!    items and expands click histories into nested multi-hop frontiers.
//! 3. [`gid`] aggregates each frontier layer by layer with neighbor attention
//!    and reads out an intention embedding against the candidate ad.
//! 4. [`ctrmodel`] concatenates query, user, ad and intention embeddings, feeds
//!    them through a five-layer perceptron and trains everything jointly with
//!    reverse-mode gradients from [`autodiff`].
//! 5. [`eval`] scores models with exact rank-sum AUC, overall and per
//!    behavior-length bucket.
//!
//! [`syndata`] generates seeded click logs and labeled samples with planted
//! cluster structure so the whole pipeline can be exercised offline.

pub mod autodiff;
pub mod clicklog;
pub mod cograph;
pub mod ctrmodel;
pub mod error;
pub mod eval;
pub mod gid;
pub mod syndata;

pub use error::{Error, Result};

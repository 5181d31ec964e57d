//! Offline toolkit for approximating query-ad category similarity in
//! sponsored search.
//!
//! The centerpiece is a convolutional latent semantic model (CLSM) trained so
//! that the cosine of a query embedding and an ad-title embedding predicts
//! whether the two texts share a top category — a Category Match Approximator
//! (CMA). Around it sit the pieces needed to run the full offline experiment
//! loop on synthetic data:
//!
//! - [`taxonomy`] / [`synth`] — synthetic category tree, corpus, and
//!   impression-log generator with ground-truth categories.
//! - [`textprep`] — normalization and the tri-letter word-n-gram encoding
//!   that makes embeddings total over unseen tokens.
//! - [`clsm`] — the embedding network, cosine scoring, softmax training
//!   objective, analytic gradients, and a finite-difference checker.
//! - [`cma_data`] — category-match pair construction, noise injection, and
//!   query-disjoint train/eval splits.
//! - [`relevance`] — four feature representations over query-ad pairs and a
//!   gradient-boosted decision tree classifier.
//! - [`eval`] — rank-sum AUC-ROC plus the noise-sweep and
//!   feature-comparison experiment runners.
//! - [`embed_index`] — precomputed ad-embedding index so scoring a candidate
//!   list costs one query embedding.
//!
//! Everything is deterministic given a seed: equal configs produce
//! byte-identical artifacts.

pub mod clsm;
pub mod cma_data;
pub mod embed_index;
pub mod error;
pub mod eval;
pub mod relevance;
pub mod seeding;
pub mod synth;
pub mod taxonomy;
pub mod textprep;

pub use error::{CmaError, ErrorKind, Result};

//! Weakly supervised point-cloud segmentation built around two ideas:
//! an *entropy block* that measures how much each point's predictive
//! entropy deviates from its spatial neighborhood (graphical information
//! gain) and feeds that signal back into the features, and *ArcPoint*,
//! an anchor-based additive angular-margin loss that also margins
//! quantile-selected high-entropy unlabeled points toward their nearest
//! labeled anchor's class.
//!
//! The crate ships the numerical core (graph construction, entropy
//! calibration, margin losses, a small differentiable point network with
//! hand-written reverse-mode gradients), a two-phase training loop with a
//! Siamese consistency branch, synthetic scene generators for desk-scale
//! benchmarks, and evaluation/analysis exports. Everything is pure f64,
//! single-threaded, and deterministic given a seed.

// The numeric kernels iterate by index over several parallel buffers at
// once; zipped iterators would obscure the coupling.
#![allow(clippy::needless_range_loop)]

pub mod arcpoint;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod geometry;
pub mod io;
pub mod model;
pub mod nn;
pub mod seeding;
pub mod synth;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};

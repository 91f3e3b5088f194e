//! Segmentation style discovery from multi-annotator image-mask corpora.
//!
//! A corpus pairs each image with one or more binary masks, drawn by unknown
//! annotators with unknown tools: no annotator-mask correspondence exists.
//! This crate trains an M-headed segmentation network together with a style
//! classifier so that the M heads settle into diverse, plausible, semantically
//! consistent annotation styles, and provides the evaluation protocols that
//! quantify the result (per-style Dice statistics, image-adaptive and
//! annotator-specific style selection, the AS² alignment measure, agreement
//! metrics, and shape-feature consistency analysis).
//!
//! The crate is CPU-only and fully deterministic under a fixed seed. The
//! `parallel` feature (default) enables rayon data-parallelism over images,
//! evaluation records, and batch items; reductions stay in index order, so
//! results are identical with the feature on or off.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod util;

pub use error::{Error, Result};

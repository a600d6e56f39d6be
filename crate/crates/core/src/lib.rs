//! Multi-label learning with incomplete labels guided by a structured
//! label-to-label prior.
//!
//! The crate works in embedding space: label vectors and image features are
//! plain `f64` vectors. A prior graph built from label embeddings drives a
//! residual GCN over a learnable label table, and the same graph calibrates
//! weak-view predictions that supervise the strong view during training.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod prior;
pub mod train;

pub use error::{Error, Result};
pub use numcore::{Matrix, PROB_EPS};
pub use prior::{GraphMode, LabelEmbeddings, PriorGraph, PriorParams};

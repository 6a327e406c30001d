//! Visual-audio video highlight detection.
//!
//! The crate scores every segment of an untrimmed video from pre-extracted
//! visual and audio features. Each modality is refined by a transformer
//! encoder stack and a learned-query global context decoder, the two streams
//! are fused by co-occurrence cross-attention over the concatenated 2T-long
//! sequence, and three score heads are combined by a weighted sum.
//!
//! Training combines per-head binary cross-entropy with a dense intra-video
//! segment contrastive loss and a margin rank loss over hard pairs sampled
//! around label boundaries.
//!
//! All numerics run in `f64` on a small reverse-mode tape ([`numerics::Tape`]),
//! with a central finite-difference verifier ([`numerics::finite_diff_check`]).

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod hardpairs;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

//! A desk-scale laboratory for ranking distillation.
//!
//! The crate bundles the pieces needed to study how negative sampling and
//! teacher supervision interact when training a ranking student:
//!
//! - [`lexical`]: tokenizer, inverted index and BM25 retrieval.
//! - [`losses`]: LCE, RankNet, MarginMSE and KL criteria with analytic
//!   gradients, plus the scalar Bregman divergence that unifies them.
//! - [`diagnostics`]: entropy, misordering bound, diameter, density ratio and
//!   the generalization-bound evaluator.
//! - [`selection`]: random / BM25 / teacher / ensemble negative samplers and
//!   entropy-quartile filtering.
//! - [`student`]: bi-encoder and cross-encoder scorers with hand-written
//!   backprop, AdamW and the warmup/decay training loop.
//! - [`synth`]: seeded synthetic retrieval worlds with a noisy teacher.
//! - [`eval`]: nDCG, MAP, paired TOST and power-law diagnostics.
//!
//! Numeric code is generic over [`Scalar`] (implemented for `f32` and
//! `f64`); the `*64` aliases below fix the common double-precision case.

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod io;
pub mod lexical;
pub mod losses;
mod math;
pub mod scalar;
pub mod selection;
pub mod student;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use math::stream_seed;
pub use types::{DocId, EmbeddingVector, QueryId, Qrels, ScoredList, TrainingGroup};

pub type ScoredList64 = types::ScoredList<f64>;
pub type ScoredList32 = types::ScoredList<f32>;
pub type TrainingGroup64 = types::TrainingGroup<f64>;
pub type TrainingGroup32 = types::TrainingGroup<f32>;
pub type Embedding64 = types::EmbeddingVector<f64>;
pub type Embedding32 = types::EmbeddingVector<f32>;
pub type LossResult64 = losses::LossResult<f64>;
pub type LossResult32 = losses::LossResult<f32>;
pub type BoundParams64 = diagnostics::BoundParams<f64>;
pub type StudentScorer64 = student::StudentScorer<f64>;
pub type StudentScorer32 = student::StudentScorer<f32>;
pub type PowerLawFit64 = eval::PowerLawFit<f64>;

#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Measurement toolkit for the time dependency of text data.
//!
//! The pipeline trains language models on nested subsets of a time period's
//! data, fits power-law learning curves per period, and inverts those curves
//! to express a stale model's loss as an equivalent amount of fresh data.
//! The resulting effectiveness series is summarised by an exponential decay
//! rate and half-life, and topics are compared pairwise.
//!
//! [`theory`] holds an executable model of equivalent sizes, sampling
//! densities and off-loading, and [`synth`] generates drifting corpora with
//! known ground truth so the whole chain can be validated end to end.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod curves;
pub mod decay;
pub mod exec;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
pub mod theory;

pub use backend::{EvalRecord, ManifestEntry, TrainJob};
pub use corpus::{Document, DocumentKind, PeriodId, PeriodSlice, SubsetLadder};
pub use curves::{EffectivenessPoint, EffectivenessSeries, LearningCurveFit, LearningCurvePoint};
pub use decay::{DecayFit, FormComparison, HalfLife, PairwiseFit, SignificanceBand};
pub use exec::Execution;

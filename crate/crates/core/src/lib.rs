//! Core algorithms for creativity-weighted preference optimization.
//!
//! This crate is `no_std` (with `alloc`) and performs no IO. It covers:
//!
//! - [`corpus`]: rated responses, rating rescaling and agreement filtering;
//! - [`curation`]: preference-pair and SFT dataset construction;
//! - [`metrics`]: diversity, novelty, surprise and quality scores, their
//!   normalization and the composite injection weight;
//! - [`objective`] and [`policy`]: the weighted DPO loss, its gradient and a
//!   tabular-policy trainer;
//! - [`eval`]: generation-set scoring, equivalence partitioning,
//!   `distinct_k`, `utility_k` and win rates.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod curation;
pub mod eval;
pub mod metrics;
pub mod numeric;
pub mod objective;
pub mod policy;
pub mod synthetic;
pub mod text;
pub mod union_find;

pub use corpus::{Corpus, CorpusError, RatedResponse, RescaleGrouping, Split};
pub use curation::{PairingConfig, PreferencePair, SftExample};
pub use metrics::{CreativityScores, Dimension, EmbeddingVector, InjectionWeights, MetricError, NormalizedScores};
pub use objective::PairLogits;
pub use policy::{TabularPolicy, TrainConfig};

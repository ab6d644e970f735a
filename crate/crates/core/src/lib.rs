//! Algorithms for training and serving cross-language late-interaction
//! retrievers by distilling teacher scores over translated text.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches
//! the filesystem (TSV collections, run files, checkpoints, serialized
//! indexes) lives in the `clirdistill` companion crate.
//!
//! The moving parts, from raw text to evaluation:
//!
//! - [`corpus`]: collections, judgments, tokenization and passage windows.
//! - [`synth`]: a seeded generator for bilingual topical corpora.
//! - [`lexicon`]: one-best synthetic translation and PSQ expansion.
//! - [`sparse`]: BM25 over fractional term weights.
//! - [`encoder`]: the multi-vector student and its exact gradients.
//! - [`distill`]: candidate selection, teachers, sampling and training.
//! - [`kmeans`] and [`index`]: centroid clustering and residual-coded search.
//! - [`eval`] and [`stats`]: ranked-retrieval metrics and significance tests.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod distill;
pub mod encoder;
mod error;
pub mod eval;
pub mod index;
pub mod kmeans;
pub mod lexicon;
pub mod optim;
pub mod rng;
pub mod sparse;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

pub use corpus::{window_document, Document, LanguageTag, Passage, Qrels, Query};
pub use encoder::{maxsim_score, EncoderParams, MultiVector, Role};
pub use lexicon::{BilingualLexicon, MtNoise, WeightedBag};

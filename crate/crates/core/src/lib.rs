//! CTC acoustic modelling with WFST decoding.
//!
//! The crate covers the whole pipeline: feature normalization, a deep
//! bidirectional LSTM trained with the CTC objective, construction of token,
//! lexicon and grammar transducers compiled into a single search graph, and a
//! frame-synchronous token-passing decoder driven by prior-normalized
//! posteriors.
//!
//! Per-utterance work (forward/backward passes, trellises, decoding) runs on
//! rayon when the default `parallel` feature is enabled and falls back to
//! plain iterators otherwise. Reductions always happen in a fixed order, so
//! results are bitwise identical either way.

pub mod ctc;
pub mod decoder;
pub mod edit;
mod error;
pub mod features;
pub mod graphs;
pub mod io;
pub mod math;
pub mod nnet;
pub mod par;
pub mod recipe;
pub mod trainer;
pub mod wfst;

pub use error::{Error, Result};

/// Index of the CTC blank label in every posterior row.
pub const BLANK: u32 = 0;

//! Labeled-data selection and weighted category discovery over frozen embeddings.
//!
//! The crate is organized around a small set of data types ([`data::EmbeddingSet`],
//! [`data::WeightAssignment`]) that flow through clustering, optimal transport,
//! selection strategies, a prototype-based discovery engine and clustering-accuracy
//! evaluation. [`synth`] builds tiered synthetic scenes and the experiment harnesses.

pub mod clustering;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod selection;
pub mod synth;
pub mod transport;

pub use error::{DselError, Result};

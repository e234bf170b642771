//! Multi-view dense retrieval.
//!
//! Documents are encoded once per generated pseudo-query (`query + [SEP] +
//! document`), queries are encoded alone, and a document's score is the
//! maximum over its views' inner products with the query.

pub mod analysis;
mod bytes;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod index;
pub mod pipeline;
pub mod querygen;
pub mod selftest;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};

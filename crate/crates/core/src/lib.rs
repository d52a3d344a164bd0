//! Domain-specific word embeddings expanded with context knowledge borrowed
//! from past domain corpora.
//!
//! The pipeline: build a knowledge base of past domains ([`kb`]), train a
//! pairwise meta-learner that judges whether two contexts of the same word are
//! similar ([`metalearner`]), retrieve the context bags of similar past
//! contexts for a new domain ([`retrieval`]), and train skip-gram embeddings on
//! the new corpus plus the retrieved pairs ([`embedding`]).

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod kb;
pub mod metalearner;
pub mod retrieval;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};

//! Reinforcement-learned retrieval over a semantic-grouped knowledge graph,
//! with a prompt/generation pipeline and an evaluation harness.

pub mod embeddings;
pub mod cli;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod gro;
pub mod kg;
pub mod linker;
pub mod policy;
pub mod synth;
pub mod text;

pub use error::{Error, Result};

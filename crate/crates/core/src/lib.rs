//! Rate-distortion guided construction and refinement of knowledge graphs
//! from hierarchical lecture notes.

pub mod analysis;
pub mod embeddings;
pub mod error;
pub mod kg;
pub mod lecture;
pub mod llm;
pub mod markdown;
pub mod matrix;
pub mod ot;
pub mod pipeline;
pub mod refine;

pub use error::{Error, Result};

//! Zero-shot classification with LLM-built knowledge trees.
//!
//! Class names are grouped by k-means over text embeddings; each group is
//! described comparatively by a chat model, recursively, and images are
//! scored against the per-level descriptions along each class's path.

pub mod clustering;
pub mod data;
mod digest;
pub mod embedding;
pub mod eval;
pub mod gateway;
pub mod scoring;
pub mod tree;

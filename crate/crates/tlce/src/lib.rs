//! Few-shot class-incremental learning with an ensemble of two frozen
//! embedding classifiers over an explicit prototype memory.
//!
//! Two networks share one architecture and are trained differently on the
//! base session: the RHD embedding is supervised-pretrained and then
//! episodically meta-trained so base-class prototypes become
//! quasi-orthogonal, while the TKN embedding is trained with cross-entropy
//! over cosine logits for transferable features. After base training both
//! networks freeze; every incremental session only appends class prototypes
//! to the explicit memory. A query is classified by the λ-weighted
//! combination of its tanh-cosine similarities to each classifier's
//! prototypes.
//!
//! Module map:
//! - [`tensor`], [`tape`]: dense f64 tensors and reverse-mode autodiff
//! - [`model`]: shared backbone + projection architecture and heads
//! - [`training`]: the three training procedures
//! - [`memory`]: the append-only explicit prototype memory
//! - [`ensemble`]: λ-weighted score fusion and classification
//! - [`data`]: datasets, synthetic clusters, session splitting
//! - [`harness`]: the incremental protocol, metrics, sweeps, ablations
//! - [`io`]: TLCD dataset files and TLCE checkpoints

pub mod data;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod io;
pub mod memory;
pub mod model;
pub mod seeds;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

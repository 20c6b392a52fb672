//! Attribute grouping and mining hashing for fine-grained retrieval.
//!
//! `agmh-core` holds the numerical side of the pipeline and runs without the
//! standard library (it needs `alloc`):
//!
//! - [`tensor`] and [`tape`]: dense `f64` tensors and reverse-mode
//!   differentiation for exactly the operations the model uses, with
//!   [`gradcheck`] to verify them.
//! - [`head`]: descriptor grouping, stepwise interactive external attention,
//!   skip fusion and the attention dispersion loss.
//! - [`hashing`] and [`train`]: the linear hash encoder, relaxed pairwise
//!   loss, and alternating optimization against fixed database codes.
//! - [`retrieval`]: bit-packed codes, Hamming ranking, mAP.
//! - [`synth`]: seeded synthetic base features in place of a CNN backbone.
//!
//! File formats, configuration and the command line live in the `agmh` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod gradcheck;
pub mod hashing;
pub mod head;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use hashing::{AgmhModel, Code, HashModel};
pub use head::{AdlDenominator, AttributeHeadParams, DescriptorParams, HeadOutputs, HeadShape};
pub use retrieval::{CodeDatabase, PackedCode, Query};
pub use rng::Rng;
pub use synth::{FeatureSet, SimilarityMatrix, Split, SyntheticSpec};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use train::{LossRecord, TrainConfig, TrainOutput};

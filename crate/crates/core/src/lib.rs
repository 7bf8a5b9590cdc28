//! Self-supervised temporal domain adaptation for frame-wise sequence
//! segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: a small reverse-mode tape over `T x C` sequence matrices,
//!   with the convolution, activation, loss and gradient-reversal operations
//!   the model needs.
//! - [`model`]: the multi-stage dilated temporal convolutional backbone and
//!   the frame-level and sequence-level domain classifier heads.
//! - [`sstda`]: segment splitting, domain attentive pooling, permutation
//!   labels and every loss term of the joint objective.
//! - [`metrics`]: frame accuracy, segmental edit score and segmental F1@k.
//! - [`data`]: feature and label file formats, label-fraction masks and the
//!   synthetic cross-domain corpus generator.
//! - [`harness`]: Adam, the training loop, evaluation, checkpoints and
//!   timeline rendering.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod sstda;

pub use error::{Error, Result};
pub use numerics::{Real, Tape, Var};

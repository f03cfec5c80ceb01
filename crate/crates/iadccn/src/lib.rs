//! Crowd counting by density-map regression with inverse-attention
//! background suppression.
//!
//! The crate is organized around five parts:
//!
//! - [`tensor`] — dense arrays with reverse-mode differentiation, just
//!   enough to express and train the counting network;
//! - [`data`] — annotation ingestion, density/mask ground truth, patch
//!   sampling, augmentation, and a synthetic scene generator;
//! - [`model`] — the counting architecture: VGG-style backbone, a
//!   reduce-and-upsample stage, the inverse attention block, and the
//!   density head, with named-parameter persistence;
//! - [`train`] — losses, Adam, hard sample mining, and the training loop;
//! - [`eval`] — counting metrics, dataset evaluation, and the ablation
//!   harness.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{backward, grad_check, Element, Tensor};

//! Selective-supervised contrastive learning with noisy labels, on vector data.
//!
//! The crate trains a small encoder on noisily-labelled examples by selecting,
//! every epoch, a class-balanced set of confident examples and a set of
//! confident pairs, and optimizing a supervised contrastive objective over the
//! selected pairs together with classification and pair-similarity losses. A
//! second stage fine-tunes a fresh classifier head on the confident examples.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar for common use.

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod neighbors;
pub mod scalar;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Dataset64 = datagen::Dataset<f64>;
pub type Dataset32 = datagen::Dataset<f32>;
pub type Network64 = model::Network<f64>;
pub type Network32 = model::Network<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type SelectionState64 = selection::SelectionState<f64>;
pub type SelectionState32 = selection::SelectionState<f32>;

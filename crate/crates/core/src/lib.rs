//! Generative models over the weights of small CNN populations.
//!
//! A population ("zoo") of identically shaped CNNs is trained from different
//! seeds. A transformer autoencoder learns a bounded latent code for each
//! flattened weight vector; new weights are produced by sampling that latent
//! space and decoding.

pub mod cli;
pub mod codec;
pub mod datasets;
pub mod error;
pub mod evalharness;
pub mod hyperae;
pub mod numerics;
pub mod rng;
pub mod samplers;
pub mod zoo;

pub use error::{Error, Result};

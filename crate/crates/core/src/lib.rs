//! Abnormal event detection in video with spatio-temporal adversarial networks.
//!
//! A bidirectional-ConvLSTM generator predicts the center frame of an
//! 11-frame window from its 10 neighbours, and a 3D-convolutional patch
//! discriminator judges whether a sequence is real and normal. After
//! adversarial training on normal video both networks score test frames.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks); the aliases below fix the common choice.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod interpret;
pub mod models;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{Result, StanError};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Generator32 = models::Generator<f32>;
pub type Generator64 = models::Generator<f64>;
pub type Discriminator32 = models::Discriminator<f32>;
pub type Discriminator64 = models::Discriminator<f64>;

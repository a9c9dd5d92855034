//! Desk-scale robust image watermarking.
//!
//! A message is embedded into a cover image by an encoder with
//! squeeze-and-excitation fusion, pushed through a pool of differentiable
//! distortions, partially restored by a residual-predicting denoiser, and
//! read back by a decoder; a patch discriminator keeps the embedding
//! invisible. Everything runs on a small reverse-mode autodiff engine in
//! this crate — no external ML runtime.

pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod synth;
pub mod tensor;
pub mod train;

pub use image::{ImageBatch, Role};
pub use model::{MessageBits, ModelConfig, WatermarkModel};
pub use noise::{NoiseKind, NoisePool, NoiseSpec};
pub use tensor::{Adam, ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};
pub use train::{TrainConfig, Trainer};

//! Light-field image super-resolution with angular and spatial Transformers.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: `f64` tensors with a small reverse-mode autodiff engine and a
//!   finite-difference gradient oracle.
//! - [`lf`]: light-field containers, file formats, Catmull-Rom resampling,
//!   patch extraction and a synthetic scene generator.
//! - [`model`]: the network (angular/spatial Transformer blocks, positional
//!   encodings, pixel-shuffle head) plus parameter accounting.
//! - [`train`]: initialization, Adam, the learning-rate schedule, the training
//!   loop and PSNR/SSIM evaluation.
//! - [`analysis`]: attention capture, local angular attention maps and EPIs.

pub mod analysis;
pub mod error;
pub mod kv;
pub mod lf;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tensor, Var};

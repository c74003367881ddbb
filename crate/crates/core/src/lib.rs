//! Multimodal latent-emotion recognition from micro-expression frames and
//! physiological signals (EDA, ECG, PPG).
//!
//! The crate is `no_std` and needs only `alloc`. It contains:
//!
//! - [`tensor`]: a dense `f32` tensor with a tape-based reverse-mode
//!   autodiff graph and a finite-difference gradient checker.
//! - [`wavelet`]: periodic Daubechies DWT and universal soft-threshold
//!   denoising.
//! - [`signal`]: segmentation, linear resampling and z-normalisation of
//!   physiological clips.
//! - [`fusion`]: standard-normal (and uniform) temporal weighting of frame
//!   features.
//! - [`attention`]: scaled dot-product attention and the guided multi-head
//!   fusion module, plus the concatenation baseline.
//! - [`psnet`]: the 1D separable & mixable depthwise inception network.
//! - [`backbone`] / [`me`]: per-frame CNN features, depth guidance and
//!   temporal fusion into one micro-expression feature.
//! - [`model`]: full assembly, composite loss, Adam training, prediction.
//! - [`eval`]: leave-one-subject-out protocol and Acc / UF1 / UAR.
//! - [`gradsuite`]: the finite-difference check suite over every op and
//!   module.
//!
//! IO, file formats, the synthetic dataset generator and the CLI live in the
//! `psme` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod backbone;
pub mod data;
mod error;
pub mod eval;
pub mod fusion;
pub mod gradsuite;
pub mod me;
pub mod model;
pub mod optim;
pub mod params;
pub mod psnet;
pub mod signal;
pub mod tensor;
pub mod wavelet;

pub use error::Error;
pub use params::{BoundParams, ParamDecl, ParameterStore};
pub use tensor::{Graph, Tensor, TensorError, Var};

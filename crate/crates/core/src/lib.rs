//! Frequency-domain spatio-temporal forecasting for multi-node traffic series.
//!
//! The model embeds each (time step, node) observation, splits the embedding
//! into a periodic main component and a residual via a learned sigmoid gate,
//! runs the main component through attention over Fourier coefficients and the
//! residual through a complex-weight MLP per frequency bin, fuses both, and
//! mixes information across nodes with spatial attention restricted by a
//! learned, input-dependent binary mask. Everything trains end to end with
//! reverse-mode autodiff over a small dense-tensor engine, including gradients
//! through the FFT and a straight-through estimator for the binary mask.
//!
//! Module map:
//! - [`tensor`]: dense real/complex tensors, autodiff, FFT, gradient checking
//! - [`data`]: CSV loading, calendar features, windowing, splits, normalization
//! - [`synthetic`]: seeded synthetic traffic generator with cluster structure
//! - [`embedding`], [`decomposition`], [`temporal`], [`spatial`]: model stages
//! - [`model`]: assembly, Huber loss, Adam training loop, metrics, checkpoints
//! - [`cli`]: subcommands for synth / train / eval / predict / export-mask /
//!   gradcheck

pub mod cli;
pub mod data;
pub mod decomposition;
pub mod embedding;
mod error;
mod init;
pub mod model;
pub mod spatial;
pub mod synthetic;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};

//! Prompt-guided selective state-space super-resolution.
//!
//! The crate contains everything needed to train and inspect the model on a
//! CPU: dense tensors with a reverse-mode tape ([`autodiff`]), Fourier
//! transforms ([`fft`]), the prompt-guided selective scan ([`scan`],
//! [`prompt`]), the network ([`network`]), the spectral objective
//! ([`loss`]), training and evaluation ([`train`], [`metrics`], [`optim`]),
//! and file formats plus the command-line driver ([`image`], [`config`],
//! [`checkpoint`], [`cli`]). [`gradcheck`] verifies every analytic gradient
//! against central finite differences.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod prompt;
pub mod resample;
pub mod scan;
pub mod tensor;
pub mod train;

pub use autodiff::{finite_diff_grad, Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

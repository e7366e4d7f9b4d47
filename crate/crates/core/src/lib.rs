//! Asynchronous parameter-server training of a deep 1D convolutional
//! autoencoder for task-fMRI-like time series, with an online dictionary
//! learning validation pipeline.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernels`]: convolution, dense, pooling and unpooling primitives with
//!   hand-derived gradients.
//! * [`model`]: the autoencoder, its loss and full backward pass.
//! * [`datagen`]: synthetic signals, normalization, dataset files, sharding.
//! * [`ps`]: the parameter server, Adagrad, wire protocol and training loop.
//! * [`odl`]: online dictionary learning and the validation report.
//! * [`cli`]: configuration and the commands behind the `dca` binary.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod kernels;
pub mod model;
pub mod odl;
pub mod ps;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

//! Quantization-aware training laboratory core.
//!
//! Everything in this crate is pure computation over [`tensor::Matrix`]:
//! the uniform symmetric quantizer, an MLP with manual backprop and Adam,
//! the three training regimes (full precision, QAT with the straight-through
//! estimator, and the oscillation-inducing regularizer), oscillation and
//! clustering analytics, Welch's t-test, and the one- and two-weight toy
//! models. File formats, configuration and the CLI live in `osc-lab`.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod datasets;
pub mod error;
pub mod network;
pub mod oscillation;
pub mod quantizer;
pub mod stats;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use quantizer::{BitWidth, QuantSpec, QuantView};
pub use tensor::{Matrix, Rng};

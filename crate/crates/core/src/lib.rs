//! Recurrent neural processes for one-step-ahead time-series prediction.
//!
//! The crate is self-contained: a small f64 tape for reverse-mode
//! differentiation, LSTM/MLP building blocks, diagonal-Gaussian latent
//! machinery, the RNP model itself, an ELBO training loop with Adam and
//! checkpointing, dataset ingestion and synthetic generators, and the
//! MSE / normalized-MSE / PICP evaluation stack.

pub mod checkpoint;
pub mod data;
pub mod gaussian;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use gradcheck::Parameterized;
pub use tensor::{Tape, Tensor, Var};

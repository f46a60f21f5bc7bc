//! Neural travel-time estimation.
//!
//! The crate bundles everything needed to train and compare ETA models on
//! trajectory data:
//!
//! - [`tensor`]: dense `f64` tensors with a define-by-run gradient tape.
//! - [`nn`]: self-attention, positional encoding, feed-forward stacks and
//!   the recurrent cells used by the baselines.
//! - [`models`]: the multi-factor attention network, the recurrent and
//!   feed-forward baselines, the route-sum baseline and checkpoints.
//! - [`data`]: a seeded synthetic trip generator, filtering, temporal
//!   splits, JSONL I/O and padded batching.
//! - [`training`]: MAPE/MAE/RMSE, Adam, the training loop and evaluation.
//! - [`bench`]: single-trip latency measurement and logarithmic curve fits.

pub mod bench;
pub mod data;
pub mod error;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result, TensorError};
pub use tensor::{Tape, Tensor, Var};

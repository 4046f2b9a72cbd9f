//! Sequence-to-one recurrent forecasters for multiband satellite pixel
//! time series.
//!
//! The crate trains and runs small recurrent networks (attention BiLSTM,
//! attention LSTM, plain BiLSTM) that predict per-pixel band values or
//! vegetation indices at a user-chosen target date from the five preceding
//! cloud-free acquisitions plus a time-difference channel.
//!
//! Everything is plain `f64` on the CPU with exact hand-written backward
//! passes, so analytic gradients can be checked against central finite
//! differences to tight tolerances.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod serial;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

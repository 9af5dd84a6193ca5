//! Recurrent sequence regression of the source-cup weight during robotic
//! pouring.
//!
//! The crate maps six per-timestep input features (rotation angle, initial
//! weight, target weight, cup height, cup diameter, angular velocity) to the
//! scale reading `f(t)` with stacked simple-RNN, LSTM or GRU layers and a
//! linear head, trained with full backpropagation through time over
//! zero-padded, masked batches.

pub mod batched;
pub mod cells;
pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};

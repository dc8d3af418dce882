//! Two-stage wearable fall pipeline: an LSTM fall detector and a
//! Kolmogorov–Arnold time-of-impact regressor, with the SisFall data path,
//! six-axis orientation estimation, feature selection, evaluation and a
//! streaming simulator.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fdnn;
pub mod kan;
pub mod orientation;
pub mod selection;
pub mod sisfall;
pub mod streaming;
pub mod synthetic;

pub use error::{Error, Result};

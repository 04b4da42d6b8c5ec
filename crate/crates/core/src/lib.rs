//! Depth-weighted reconstruction-error anomaly detection for video windows.

pub mod checkpoint;
pub mod detect;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod hash;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod sim;
pub mod tensor;
pub use error::{Error, Result};
pub use model::{build_model, DepCae};
pub use tensor::{Real, Tensor};

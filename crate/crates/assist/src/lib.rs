//! Box-prompted segmentation assistant for labelling platforms: a classical
//! builtin predictor, a remote predictor client and the HTTP service in front
//! of them.

pub mod audit;
pub mod builtin;
pub mod error;
pub mod predictor;
pub mod service;
pub mod wire;

pub use error::AssistError;
pub use predictor::{Backend, Predictor, PredictorConfig, BUILTIN_MODEL_VERSION};
pub use service::{router, serve, AppState};

//! Decoder-only transformer: configuration, weights, storage, forward pass.

mod config;
pub mod forward;
mod tensorfile;
mod weights;

pub use config::ModelConfig;
pub use tensorfile::TensorFile;
pub use weights::{gen_toy_model, load_model, save_model, LayerWeights, Model};

//! Token-skipping inference for decoder-only transformers.
//!
//! During prefill, later layers run their attention and feed-forward blocks
//! on a scored subset of tokens while the rest ride the residual path, and
//! the candidate sequence shrinks at stage boundaries. Decoding is dense over
//! the resulting compressed cache. Analytic FLOP and memory models mirror
//! what the engine computes and stores.

pub mod attention;
pub mod error;
pub mod ffn;
pub mod kvcache;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod tokens;

pub use error::{Error, Result};

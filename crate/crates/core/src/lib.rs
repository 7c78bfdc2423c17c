//! Masked self-distillation transducer for small-vocabulary keyword
//! spotting, with semi-autoregressive streaming decoding.
//!
//! The crate is self-contained: a small dense tensor type with reverse-mode
//! autodiff, the DFSMN encoder / stateless predictor / joiner model, the
//! transducer lattice loss with masked self-distillation, an AdamW trainer,
//! the fused AR/NAR streaming decoder, detection metrics, and a synthetic
//! token-audio task for end-to-end runs.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

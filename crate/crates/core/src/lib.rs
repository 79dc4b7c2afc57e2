//! Desk-scale audio captioning built from first principles: a keyword
//! encoder over log-mel features, an LSTM decoder with multi-modal
//! attention (acoustic frames, predicted keywords, previously generated
//! words), two-stage cross-entropy + self-critical training, beam-search
//! inference, and corpus caption metrics. A synthetic dataset generator
//! makes the whole pipeline verifiable without external data.

pub mod audio;
pub mod encoder;
pub mod error;
pub mod keywords;
pub mod metrics;
pub mod numerics;
pub mod tokens;

pub use error::{Error, Result};
pub use numerics::{Precision, Tensor};

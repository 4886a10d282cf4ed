//! End-to-end spoken language understanding on top of a CTC-trained
//! acoustic model.
//!
//! The acoustic encoder produces frame-level logits trained with CTC; the
//! same logits (or the hidden states, or their softmax) are maxpooled over
//! time and fed through a small dense utterance encoder and a linear intent
//! classifier. Both losses are optimized jointly after an ASR-only warm-up.

pub mod ctc;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

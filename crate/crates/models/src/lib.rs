//! Learned components: the multi-level tokenizer, the next-scale transformer and on-policy
//! distillation, built on candle.

pub mod aqvae;
pub mod error;
pub mod nextscale;
pub mod nn;
pub mod opd;
pub mod optim;
pub mod params;

pub use error::{Error, Result};

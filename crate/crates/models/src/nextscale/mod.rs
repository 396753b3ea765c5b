//! Next-scale prediction over acceleration levels: a block-causal transformer predicts each finer
//! token map from all coarser ones and encoder features of the 32x input.

pub mod config;
pub mod data;
pub mod decode;
pub mod infer;
pub mod model;
pub mod sequence;
pub mod train;

pub use config::{ArModelConfig, ArTrainConfig};
pub use data::{make_batch, maps_to_tensors, prepare_examples, randomize_prefix, ArBatch, ArExample, TokenMapsJson};
pub use decode::{argmax, decode_row, decode_tokens, filtered_distribution, DecodeKind, DecodeStrategy};
pub use infer::{generate, initial_map, reconstruct, Generation, Reconstruction};
pub use model::{Context, NextScaleModel, STUDENT_COMPONENT, TEACHER_COMPONENT};
pub use sequence::SequenceLayout;
pub use train::{batch_logits, evaluate_ce, train_ar, ArReport, ArStepLog};

//! Additive multi-input quantized autoencoder: one shared codebook tokenizes every
//! acceleration level of a slice at its own grid size.

pub mod codebook;
pub mod config;
pub mod extractor;
pub mod losses;
pub mod model;
pub mod network;
pub mod train;

pub use codebook::{rotation_trick, Codebook};
pub use config::{TokenizerConfig, TokenizerLossConfig, TokenizerTrainConfig};
pub use extractor::{DiscriminatorHeads, RandomExtractor, PROXY_METRIC_NAME};
pub use model::{
    images_to_tensor, level_batch, r32_batch, target_batch, tensor_to_images, AqVae, LevelOutputs, Quantized,
    TokenMap, N_LEVELS,
};
pub use train::{tokenizer_loss, train_tokenizer, LossBreakdown, TokenizerReport};

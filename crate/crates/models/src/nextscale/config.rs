use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArModelConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub drop_path: f64,
    /// Adds the privileged cross-attention branch over fully sampled features.
    pub privileged: bool,
}

impl ArModelConfig {
    pub fn desk() -> Self {
        Self {
            depth: 3,
            embed_dim: 64,
            heads: 4,
            mlp_ratio: 4.0,
            drop_path: 0.025,
            privileged: false,
        }
    }

    pub fn paper() -> Self {
        Self {
            depth: 16,
            embed_dim: 1024,
            heads: 16,
            mlp_ratio: 4.0,
            drop_path: 0.025,
            privileged: false,
        }
    }

    pub fn teacher(&self) -> Self {
        Self {
            privileged: true,
            ..self.clone()
        }
    }

    /// Which context resolution block `l` cross-attends to: 0 coarse, 1 middle, 2 fine. Blocks
    /// `0..ceil(depth/3)` take the coarse map, and the remainder is split evenly.
    pub fn resolution_of(&self, l: usize) -> usize {
        let first = self.depth.div_ceil(3);
        if l < first {
            return 0;
        }
        let rest = self.depth - first;
        let mid = rest.div_ceil(2);
        if l < first + mid {
            1
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide embed_dim ({})",
                self.heads, self.embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(Error::Config("drop_path must be in [0, 1)".into()));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub clip: f64,
    /// Prefix corruption probability for the teacher's input tokens.
    pub p_replace: f64,
    pub seed: u64,
}

impl Default for ArTrainConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            batch_size: 8,
            lr: 4e-3,
            warmup_steps: 15,
            weight_decay: 0.05,
            clip: 2.0,
            p_replace: 0.15,
            seed: 0,
        }
    }
}

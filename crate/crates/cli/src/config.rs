//! Run configuration: one TOML file layered over the defaults of its profile.

use std::path::Path;

use nasp_core::dataio::PyramidConfig;
use nasp_models::aqvae::{TokenizerConfig, TokenizerTrainConfig};
use nasp_models::nextscale::{ArModelConfig, ArTrainConfig, DecodeStrategy};
use nasp_models::opd::DistillConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "NASP_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub pyramid: PyramidConfig,
    /// The transformer trains on the first this-many training slices; 0 uses all of them.
    pub ar_train_slices: usize,
    /// Distillation rollouts come from the first this-many training slices; 0 uses all of them.
    pub distill_train_slices: usize,
    /// Held-out reverse KL is measured on the first this-many validation slices; 0 uses all.
    pub heldout_slices: usize,
    pub eval_batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Model initialization seed; [`SEED_ENV`] overrides it together with every stage seed.
    pub seed: u64,
    pub data: DataConfig,
    pub tokenizer: TokenizerConfig,
    pub tokenizer_train: TokenizerTrainConfig,
    pub ar: ArModelConfig,
    pub ar_train: ArTrainConfig,
    pub distill: DistillConfig,
    pub decode: DecodeStrategy,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                profile,
                seed: 0,
                data: DataConfig {
                    pyramid: PyramidConfig::default(),
                    ar_train_slices: 8,
                    distill_train_slices: 0,
                    heldout_slices: 16,
                    eval_batch_size: 8,
                },
                tokenizer: TokenizerConfig::desk(),
                tokenizer_train: TokenizerTrainConfig::default(),
                ar: ArModelConfig::desk(),
                ar_train: ArTrainConfig::default(),
                distill: DistillConfig::desk(),
                // the desk vocabulary is 512, below the paper profile's top-k of 900
                decode: DecodeStrategy {
                    top_k: 512,
                    ..DecodeStrategy::argmax()
                },
            },
            Profile::Paper => Self {
                profile,
                seed: 0,
                data: DataConfig {
                    pyramid: PyramidConfig::default(),
                    ar_train_slices: 0,
                    distill_train_slices: 0,
                    heldout_slices: 0,
                    eval_batch_size: 4,
                },
                tokenizer: TokenizerConfig::paper(),
                tokenizer_train: TokenizerTrainConfig::default(),
                ar: ArModelConfig::paper(),
                ar_train: ArTrainConfig::default(),
                distill: DistillConfig::paper(),
                decode: DecodeStrategy::argmax(),
            },
        }
    }

    /// Parses a config file. Keys missing from the file take the profile's defaults; unknown
    /// keys are rejected.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        let profile = match user.get("profile") {
            None => Profile::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::config(format!("config: profile: {e}")))?,
        };
        let base = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| CliError::other(format!("serializing defaults: {e}")))?;
        let merged = merge(base, user);
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match path {
            None => Self::for_profile(Profile::Desk),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.tokenizer_train.seed = seed;
        self.ar_train.seed = seed;
        self.distill.seed = seed;
        self.decode.seed = seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: nasp_models::Error| CliError::config(format!("{name}: {e}"));
        self.tokenizer.validate().map_err(|e| field("tokenizer", e))?;
        self.ar.validate().map_err(|e| field("ar", e))?;
        self.decode
            .validate(self.tokenizer.codebook_size)
            .map_err(|e| field("decode", e))?;
        let positive = [
            ("tokenizer_train.epochs", self.tokenizer_train.epochs),
            ("tokenizer_train.batch_size", self.tokenizer_train.batch_size),
            ("ar_train.batch_size", self.ar_train.batch_size),
            ("distill.batch_size", self.distill.batch_size),
            ("data.eval_batch_size", self.data.eval_batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::config(format!("{name} must be positive")));
        }
        if self.data.pyramid.n_coils != 1 {
            return Err(CliError::config("data.pyramid.n_coils: only single-coil slices are supported"));
        }
        if !(0.0..=1.0).contains(&self.ar_train.p_replace) {
            return Err(CliError::config("ar_train.p_replace must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

fn merge(mut base: toml::Table, user: toml::Table) -> toml::Table {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                let inner = std::mem::take(b);
                *b = merge(inner, u);
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

//! Block-causal transformer over the flattened token pyramid, cross-attending to context
//! encoder features of the 32x input (and, for the teacher, of the fully sampled image).

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use nasp_core::dataio::{codebook_from_bytes, codebook_to_bytes, Checkpoint};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ArModelConfig;
use super::sequence::SequenceLayout;
use crate::aqvae::network::{labels_tensor, Encoder};
use crate::aqvae::{AqVae, TokenizerConfig};
use crate::error::{Error, Result};
use crate::nn::{drop_path, gelu, resample_2d, Attention, LayerNorm, Linear};
use crate::params::{Init, ParamStore};

pub const STUDENT_COMPONENT: &str = "ar-student";
pub const TEACHER_COMPONENT: &str = "ar-teacher";
const WEIGHTS_BLOB: &str = "weights.safetensors";
const CODEBOOK_BLOB: &str = "codebook.bin";

/// Projected encoder features used as cross-attention keys, coarse first, each `(B, s^2, E)`.
#[derive(Debug, Clone)]
pub struct Context {
    pub keys: [Tensor; 3],
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    cross: Attention,
    privileged: Option<(LayerNorm, Attention)>,
    ln3: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    res: usize,
}

impl Block {
    fn new(ps: &ParamStore, cfg: &ArModelConfig, res: usize) -> Result<Self> {
        let e = cfg.embed_dim;
        let hidden = (e as f64 * cfg.mlp_ratio).round() as usize;
        let privileged = if cfg.privileged {
            Some((
                LayerNorm::new(&ps.pp("ln_priv"), e)?,
                Attention::new(&ps.pp("priv"), e, e, cfg.heads)?,
            ))
        } else {
            None
        };
        Ok(Self {
            ln1: LayerNorm::new(&ps.pp("ln1"), e)?,
            attn: Attention::new(&ps.pp("attn"), e, e, cfg.heads)?,
            ln2: LayerNorm::new(&ps.pp("ln2"), e)?,
            cross: Attention::new(&ps.pp("cross"), e, e, cfg.heads)?,
            privileged,
            ln3: LayerNorm::new(&ps.pp("ln3"), e)?,
            fc1: Linear::new(&ps.pp("fc1"), e, hidden, true)?,
            fc2: Linear::new(&ps.pp("fc2"), hidden, e, true)?,
            res,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        mask: &Tensor,
        ctx: &Context,
        privileged: Option<&Context>,
        dp: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let mut x = (x + drop_path(&self.attn.forward(&h, &h, Some(mask))?, dp, rng.as_deref_mut())?)?;
        let h = self.ln2.forward(&x)?;
        x = (&x + drop_path(&self.cross.forward(&h, &ctx.keys[self.res], None)?, dp, rng.as_deref_mut())?)?;
        if let Some((ln, attn)) = &self.privileged {
            let p = privileged.ok_or_else(|| {
                Error::InvalidArgument("teacher forward needs fully sampled features".into())
            })?;
            let h = ln.forward(&x)?;
            x = (&x + drop_path(&attn.forward(&h, &p.keys[self.res], None)?, dp, rng.as_deref_mut())?)?;
        }
        let h = self.fc2.forward(&gelu(&self.fc1.forward(&self.ln3.forward(&x)?)?)?)?;
        Ok((&x + drop_path(&h, dp, rng)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredConfig {
    model: ArModelConfig,
    tokenizer: TokenizerConfig,
}

pub struct NextScaleModel {
    pub cfg: ArModelConfig,
    pub tok_cfg: TokenizerConfig,
    pub params: ParamStore,
    pub ctx_encoder: Encoder,
    layout: SequenceLayout,
    codebook: Vec<f32>,
    codebook_t: Tensor,
    tok_proj: Linear,
    pos: Tensor,
    level: Tensor,
    start: Tensor,
    feat_proj: Vec<Linear>,
    feat_pos: Vec<Tensor>,
    blocks: Vec<Block>,
    norm_out: LayerNorm,
    head: Linear,
    up_ops: Vec<Tensor>,
    masks: Vec<Tensor>,
}

impl NextScaleModel {
    /// Fresh model whose context encoder is a copy of the tokenizer's encoder and whose token
    /// embeddings read the tokenizer's (frozen) codebook.
    pub fn new(cfg: &ArModelConfig, tokenizer: &AqVae, seed: u64) -> Result<Self> {
        let mut m = Self::build(cfg, &tokenizer.cfg, tokenizer.codebook.vectors().to_vec(), seed)?;
        let n = m.params.pp("ctx_encoder").copy_matching(&tokenizer.params.pp("encoder"))?;
        let expected = tokenizer.params.pp("encoder").named_vars().len();
        if n != expected {
            return Err(Error::Weights(format!(
                "copied {n} of {expected} encoder tensors into the context encoder"
            )));
        }
        m.tok_cfg = tokenizer.cfg.clone();
        Ok(m)
    }

    fn build(cfg: &ArModelConfig, tok_cfg: &TokenizerConfig, codebook: Vec<f32>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        tok_cfg.validate()?;
        let layout = SequenceLayout::new(&tok_cfg.schedule)?;
        let (v, d, e) = (tok_cfg.codebook_size, tok_cfg.latent_dim, cfg.embed_dim);
        if codebook.len() != v * d {
            return Err(Error::Weights(format!("codebook holds {} values, expected {}", codebook.len(), v * d)));
        }
        let params = ParamStore::new(seed);
        let ctx_encoder = Encoder::new(&params.pp("ctx_encoder"), tok_cfg)?;
        let small = Init::Normal(0.02);
        let pos = params.get("pos", &[layout.total_tokens(), e], small)?;
        let level = params.get("level", &[layout.n_maps(), e], small)?;
        let start = params.get("start", &[e], small)?;
        let sides = tok_cfg.feature_sides();
        let chans = tok_cfg.feature_channels();
        let mut feat_proj = Vec::new();
        let mut feat_pos = Vec::new();
        for r in 0..3 {
            // resolution r counts from the coarsest map
            let (s, c) = (sides[2 - r], chans[2 - r]);
            feat_proj.push(Linear::new(&params.pp(format!("feat_proj{r}")), c, e, true)?);
            feat_pos.push(params.get(&format!("feat_pos{r}"), &[s * s, e], small)?);
        }
        let blocks = (0..cfg.depth)
            .map(|l| Block::new(&params.pp(format!("block{l}")), cfg, cfg.resolution_of(l)))
            .collect::<Result<Vec<_>>>()?;
        let up_ops = (1..layout.n_maps())
            .map(|m| resample_2d(layout.sides()[m], layout.sides()[m - 1], true))
            .collect::<Result<Vec<_>>>()?;
        let masks = (1..=layout.n_targets()).map(|u| layout.mask(u)).collect::<Result<Vec<_>>>()?;
        let codebook_t = Tensor::from_slice(&codebook, (v, d), &Device::Cpu)?;
        Ok(Self {
            cfg: cfg.clone(),
            tok_cfg: tok_cfg.clone(),
            tok_proj: Linear::new(&params.pp("tok_proj"), d, e, true)?,
            norm_out: LayerNorm::new(&params.pp("norm_out"), e)?,
            head: Linear::with_init(&params.pp("head"), e, v, true, small)?,
            params,
            ctx_encoder,
            layout,
            codebook,
            codebook_t,
            pos,
            level,
            start,
            feat_proj,
            feat_pos,
            blocks,
            up_ops,
            masks,
        })
    }

    pub fn layout(&self) -> &SequenceLayout {
        &self.layout
    }

    pub fn vocab(&self) -> usize {
        self.tok_cfg.codebook_size
    }

    pub fn codebook(&self) -> &[f32] {
        &self.codebook
    }

    /// Cross-attention output projection of every block, for ablations.
    pub fn cross_out_weights(&self) -> Vec<Tensor> {
        self.blocks.iter().map(|b| b.cross.out_proj().weight().clone()).collect()
    }

    /// Runs the context encoder on `(2, B, H, W)` normalized planes.
    pub fn encode_context(&self, x: &Tensor, labels: &[usize]) -> Result<Context> {
        AqVae::check_normalized(x)?;
        let enc = self.ctx_encoder.forward(x, &labels_tensor(labels)?)?;
        let mut keys = Vec::with_capacity(3);
        for r in 0..3 {
            let f = &enc.features[2 - r];
            let (c, b, h, w) = f.dims4()?;
            let f = f.reshape((c, b, h * w))?.permute((1, 2, 0))?.contiguous()?;
            keys.push(self.feat_proj[r].forward(&f)?.broadcast_add(&self.feat_pos[r])?);
        }
        Ok(Context {
            keys: [keys[0].clone(), keys[1].clone(), keys[2].clone()],
        })
    }

    fn embed(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, n) = tokens.dims2()?;
        let q = self.codebook_t.index_select(&tokens.flatten_all()?, 0)?;
        self.tok_proj.forward(&q.reshape((b, n, self.tok_cfg.latent_dim))?)
    }

    fn pos_level(&self, m: usize) -> Result<Tensor> {
        let n = self.layout.map_len(m);
        Ok(self
            .pos
            .narrow(0, self.layout.map_offset(m), n)?
            .broadcast_add(&self.level.narrow(0, m, 1)?)?)
    }

    /// Logits for maps `1..=upto`, each `(B, side^2, V)`, given token maps `maps[0..upto]`
    /// (each `(B, side^2)` u32). Passing `rng` enables drop-path.
    pub fn forward(
        &self,
        maps: &[Tensor],
        ctx: &Context,
        privileged: Option<&Context>,
        upto: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Tensor>> {
        let n_t = self.layout.n_targets();
        if upto == 0 || upto > n_t || maps.len() < upto {
            return Err(Error::InvalidArgument(format!(
                "cannot predict {upto} maps from {} inputs (schedule has {n_t} targets)",
                maps.len()
            )));
        }
        for (m, t) in maps.iter().take(upto).enumerate() {
            if t.dim(1)? != self.layout.map_len(m) {
                return Err(Error::InvalidArgument(format!(
                    "map {m} holds {} tokens, schedule expects {}",
                    t.dim(1)?,
                    self.layout.map_len(m)
                )));
            }
        }
        let b = maps[0].dim(0)?;
        let e = self.cfg.embed_dim;
        let emb = maps[..upto].iter().map(|t| self.embed(t)).collect::<Result<Vec<_>>>()?;
        let mut parts = Vec::with_capacity(2 * upto);
        for (m, x) in emb.iter().enumerate() {
            parts.push(x.broadcast_add(&self.pos_level(m)?)?);
        }
        for m in 1..=upto {
            let prev = &emb[m - 1];
            let np = self.layout.map_len(m - 1);
            let n = self.layout.map_len(m);
            let up = prev
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b * e, np))?
                .matmul(&self.up_ops[m - 1].t()?)?
                .reshape((b, e, n))?
                .transpose(1, 2)?;
            parts.push(up.broadcast_add(&self.pos_level(m)?.broadcast_add(&self.start)?)?);
        }
        let mut x = Tensor::cat(&parts, 1)?;
        let mask = &self.masks[upto - 1];
        let dp = if rng.is_some() { self.cfg.drop_path } else { 0.0 };
        for block in &self.blocks {
            x = block.forward(&x, mask, ctx, privileged, dp, rng.as_deref_mut())?;
        }
        let ctx_len: usize = (0..upto).map(|m| self.layout.map_len(m)).sum();
        let q_len = self.layout.seq_len(upto) - ctx_len;
        let logits = self.head.forward(&self.norm_out.forward(&x.narrow(1, ctx_len, q_len)?)?)?;
        let mut out = Vec::with_capacity(upto);
        let mut off = 0;
        for m in 1..=upto {
            let n = self.layout.map_len(m);
            out.push(logits.narrow(1, off, n)?);
            off += n;
        }
        Ok(out)
    }

    /// Mean cross-entropy of teacher-forced logits against `maps[1..]`.
    pub fn cross_entropy(&self, logits: &[Tensor], maps: &[Tensor]) -> Result<Tensor> {
        let v = self.vocab();
        let mut flat = Vec::with_capacity(logits.len());
        let mut targets = Vec::with_capacity(logits.len());
        for (k, l) in logits.iter().enumerate() {
            flat.push(l.reshape(((), v))?);
            targets.push(maps[k + 1].flatten_all()?);
        }
        Ok(candle_nn::loss::cross_entropy(&Tensor::cat(&flat, 0)?, &Tensor::cat(&targets, 0)?)?)
    }

    pub fn component(&self) -> &'static str {
        if self.cfg.privileged {
            TEACHER_COMPONENT
        } else {
            STUDENT_COMPONENT
        }
    }

    pub fn to_checkpoint(&self, profile: &str, seed: u64, metrics: BTreeMap<String, f64>) -> Result<Checkpoint> {
        let stored = StoredConfig {
            model: self.cfg.clone(),
            tokenizer: self.tok_cfg.clone(),
        };
        let mut blobs = BTreeMap::new();
        blobs.insert(WEIGHTS_BLOB.to_string(), self.params.to_safetensors()?);
        blobs.insert(
            CODEBOOK_BLOB.to_string(),
            codebook_to_bytes(self.tok_cfg.codebook_size, self.tok_cfg.latent_dim, &self.codebook)?,
        );
        Ok(Checkpoint::new(
            self.component(),
            profile,
            serde_json::to_value(&stored)?,
            seed,
            metrics,
            blobs,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let stored: StoredConfig = serde_json::from_value(ckpt.manifest.config.clone())?;
        let (_, _, codebook) = codebook_from_bytes(ckpt.blob(CODEBOOK_BLOB)?)?;
        let m = Self::build(&stored.model, &stored.tokenizer, codebook, ckpt.manifest.seed)?;
        m.params.load_safetensors(ckpt.blob(WEIGHTS_BLOB)?)?;
        Ok(m)
    }

    /// Loads a checkpoint of the given component (`ar-student` or `ar-teacher`).
    pub fn load(dir: &Path, component: &str) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load_component(dir, component)?)
    }

    /// A deep copy with independent parameters.
    pub fn duplicate(&self, seed: u64) -> Result<Self> {
        let m = Self::build(&self.cfg, &self.tok_cfg, self.codebook.clone(), seed)?;
        m.params.restore(&self.params.snapshot()?)?;
        Ok(m)
    }
}

//! Flattened token layout: context blocks for maps `0..L-1` followed by query blocks for maps
//! `1..L`, with a block-causal attention mask.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

pub const MASKED: f32 = -1e9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    sides: Vec<usize>,
}

impl SequenceLayout {
    pub fn new(sides: &[usize]) -> Result<Self> {
        if sides.len() < 2 || sides.windows(2).any(|w| w[1] <= w[0]) || sides[0] == 0 {
            return Err(Error::Config(format!(
                "schedule must hold at least two strictly increasing sides, got {sides:?}"
            )));
        }
        Ok(Self { sides: sides.to_vec() })
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn n_maps(&self) -> usize {
        self.sides.len()
    }

    /// Number of predicted maps.
    pub fn n_targets(&self) -> usize {
        self.sides.len() - 1
    }

    pub fn map_len(&self, m: usize) -> usize {
        self.sides[m] * self.sides[m]
    }

    /// Tokens of all maps but the last.
    pub fn context_len(&self) -> usize {
        (0..self.n_targets()).map(|m| self.map_len(m)).sum()
    }

    /// Tokens of all maps, including the finest target.
    pub fn total_tokens(&self) -> usize {
        (0..self.n_maps()).map(|m| self.map_len(m)).sum()
    }

    /// Predicted positions across maps `1..L`.
    pub fn predicted_len(&self) -> usize {
        (1..self.n_maps()).map(|m| self.map_len(m)).sum()
    }

    /// Offset of map `m` in a table that stacks all maps.
    pub fn map_offset(&self, m: usize) -> usize {
        (0..m).map(|k| self.map_len(k)).sum()
    }

    /// Sequence length when predicting maps `1..=upto`.
    pub fn seq_len(&self, upto: usize) -> usize {
        (0..upto).map(|m| self.map_len(m)).sum::<usize>() + (1..=upto).map(|m| self.map_len(m)).sum::<usize>()
    }

    /// Block id of each sequence position for a prefix predicting maps `1..=upto`: context
    /// blocks are `(false, m)` and query blocks `(true, m)`.
    pub fn blocks(&self, upto: usize) -> Vec<(bool, usize)> {
        let mut out = Vec::with_capacity(self.seq_len(upto));
        for m in 0..upto {
            out.extend(std::iter::repeat((false, m)).take(self.map_len(m)));
        }
        for m in 1..=upto {
            out.extend(std::iter::repeat((true, m)).take(self.map_len(m)));
        }
        out
    }

    /// Whether a position in `from` may attend to a position in `to`. Context block `m` sees
    /// context blocks `<= m`; the query block for map `m` sees context blocks `< m` and itself.
    pub fn allowed(from: (bool, usize), to: (bool, usize)) -> bool {
        match (from, to) {
            ((false, a), (false, b)) => b <= a,
            ((true, a), (false, b)) => b < a,
            ((true, a), (true, b)) => a == b,
            ((false, _), (true, _)) => false,
        }
    }

    /// Additive `(T, T)` mask, 0 where attention is allowed and [`MASKED`] elsewhere.
    pub fn mask_values(&self, upto: usize) -> Vec<f32> {
        let blocks = self.blocks(upto);
        let t = blocks.len();
        let mut m = vec![MASKED; t * t];
        for (i, &a) in blocks.iter().enumerate() {
            for (j, &b) in blocks.iter().enumerate() {
                if Self::allowed(a, b) {
                    m[i * t + j] = 0.0;
                }
            }
        }
        m
    }

    pub fn mask(&self, upto: usize) -> Result<Tensor> {
        let t = self.seq_len(upto);
        Ok(Tensor::from_vec(self.mask_values(upto), (t, t), &Device::Cpu)?)
    }
}

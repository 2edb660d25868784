use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::QuadBox;

/// How layout enters the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMode {
    /// Four-vertex relative pair embedding coupled with the query.
    #[default]
    Relative,
    /// Learned per-axis tables of the top-left vertex added to the token
    /// embedding.
    Absolute,
    /// Learned scalar bias on bucketed axis offsets added to the logit.
    AxisBias,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Zero means "take it from the vocabulary".
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub sinusoid_dim: usize,
    pub sinusoid_scale: f64,
    pub spatial_mode: SpatialMode,
    pub use_1d_positions: bool,
    pub dropout: f64,
    /// Buckets per axis for absolute mode.
    pub abs_grid: usize,
    /// Signed log buckets (odd) for axis-bias mode.
    pub axis_bias_buckets: usize,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 256,
            vocab_size: 0,
            max_tokens: 128,
            sinusoid_dim: 8,
            sinusoid_scale: 100.0,
            spatial_mode: SpatialMode::Relative,
            use_1d_positions: false,
            dropout: 0.1,
            abs_grid: 128,
            axis_bias_buckets: 65,
            layer_norm_eps: 1e-12,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return fail("layers, hidden, heads and ffn must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return fail(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.vocab_size == 0 {
            return fail("vocab_size unresolved".into());
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be positive".into());
        }
        if self.sinusoid_dim == 0 || self.sinusoid_dim % 2 != 0 {
            return fail(format!("sinusoid_dim must be even and positive, got {}", self.sinusoid_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.abs_grid == 0 {
            return fail("abs_grid must be positive".into());
        }
        if self.axis_bias_buckets < 3 || self.axis_bias_buckets % 2 == 0 {
            return fail(format!("axis_bias_buckets must be odd and ≥ 3, got {}", self.axis_bias_buckets));
        }
        if self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}

/// Token ids, per-token boxes and the attention mask (`false` = padding).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenInput {
    pub ids: Vec<usize>,
    pub boxes: Vec<QuadBox>,
    pub mask: Vec<bool>,
}

impl TokenInput {
    pub fn new(ids: Vec<usize>, boxes: Vec<QuadBox>) -> Self {
        let mask = vec![true; ids.len()];
        TokenInput { ids, boxes, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Append padding up to `n` positions.
    pub fn pad_to(&mut self, n: usize, pad_id: usize) {
        while self.ids.len() < n {
            self.ids.push(pad_id);
            self.boxes.push(QuadBox::ZERO);
            self.mask.push(false);
        }
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        let n = self.ids.len();
        if self.boxes.len() != n || self.mask.len() != n {
            return Err(Error::Data(format!(
                "token input lengths disagree: {} ids, {} boxes, {} mask",
                n,
                self.boxes.len(),
                self.mask.len()
            )));
        }
        if n == 0 {
            return Err(Error::Data("empty token input".into()));
        }
        if n > cfg.max_tokens {
            return Err(Error::Data(format!("{n} tokens exceed max_tokens {}", cfg.max_tokens)));
        }
        if let Some(&bad) = self.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Both modality streams, co-occurrence decoders, three heads.
    Full,
    VisualOnly,
    AudioOnly,
    /// Concatenated raw features through a single stream and head.
    ConcatAv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub d_in_visual: usize,
    pub d_in_audio: usize,
    /// FFN hidden width; `None` means `4·d`.
    pub d_ff: Option<usize>,
    /// Score-head hidden width; `None` means `d`.
    pub d_head: Option<usize>,
    pub positional_encoding: bool,
    /// Weights of `(ỹ, ŷᵛ, ŷᵃ)` in the fused score.
    pub fusion_weights: [f64; 3],
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 256,
            d_k: 512,
            d_v: 512,
            n_layers: 2,
            heads: 8,
            dropout: 0.5,
            d_in_visual: 512,
            d_in_audio: 2048,
            d_ff: None,
            d_head: None,
            positional_encoding: false,
            fusion_weights: [1.0 / 3.0; 3],
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by gradient checks.
    pub fn toy(d_in_visual: usize, d_in_audio: usize) -> Self {
        ModelConfig {
            d: 16,
            d_k: 32,
            d_v: 32,
            n_layers: 1,
            heads: 2,
            dropout: 0.0,
            d_in_visual,
            d_in_audio,
            ..Self::default()
        }
    }

    pub fn ff_dim(&self) -> usize {
        self.d_ff.unwrap_or(4 * self.d)
    }

    pub fn head_dim(&self) -> usize {
        self.d_head.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("n_layers", self.n_layers),
            ("heads", self.heads),
            ("d_in_visual", self.d_in_visual),
            ("d_in_audio", self.d_in_audio),
            ("d_ff", self.ff_dim()),
            ("d_head", self.head_dim()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_k.is_multiple_of(self.heads) || !self.d_v.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_k={} and d_v={} must be divisible by heads={}",
                self.d_k, self.d_v, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        let w = self.fusion_weights;
        if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "fusion weights {w:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }
}

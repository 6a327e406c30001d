//! Flat run configuration: model, optimiser, loss and sampler settings in
//! one JSON object.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SamplerConfig;
use crate::error::{Error, Result};
use crate::hardpairs::DEFAULT_REGION_SIZE;
use crate::losses::LossConfig;
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub d_ff: Option<usize>,
    pub d_head: Option<usize>,
    pub positional_encoding: bool,
    pub fusion_weights: [f64; 3],
    pub variant: Variant,
    /// Input widths; unset values are taken from the manifest.
    pub d_in_visual: Option<usize>,
    pub d_in_audio: Option<usize>,

    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub checkpoint_every: usize,

    pub tau: f64,
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub normalize_embeddings: bool,

    pub sampler_t: usize,
    pub min_fraction: f64,
    pub region_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let l = LossConfig::default();
        let s = SamplerConfig::default();
        RunConfig {
            d: m.d,
            d_k: m.d_k,
            d_v: m.d_v,
            n_layers: m.n_layers,
            heads: m.heads,
            dropout: m.dropout,
            d_ff: m.d_ff,
            d_head: m.d_head,
            positional_encoding: m.positional_encoding,
            fusion_weights: m.fusion_weights,
            variant: m.variant,
            d_in_visual: None,
            d_in_audio: None,
            lr: t.lr,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            tau: l.tau,
            margin: l.margin,
            lambda1: l.lambda1,
            lambda2: l.lambda2,
            lambda3: l.lambda3,
            normalize_embeddings: l.normalize_embeddings,
            sampler_t: s.t,
            min_fraction: s.min_fraction,
            region_size: DEFAULT_REGION_SIZE,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Applies a `key=value` override. The value is read as JSON, falling
    /// back to a plain string, so `variant=visual_only` works unquoted.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("config is an object");
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(obj).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Model settings for the given manifest input widths. Widths fixed in
    /// the config must agree with the data.
    pub fn model_config(&self, d_in_visual: usize, d_in_audio: usize) -> Result<ModelConfig> {
        for (name, fixed, data) in [
            ("d_in_visual", self.d_in_visual, d_in_visual),
            ("d_in_audio", self.d_in_audio, d_in_audio),
        ] {
            if let Some(fixed) = fixed {
                if fixed != data {
                    return Err(Error::Config(format!(
                        "{name} mismatch: config has {fixed}, data has {data}"
                    )));
                }
            }
        }
        let cfg = ModelConfig {
            d: self.d,
            d_k: self.d_k,
            d_v: self.d_v,
            n_layers: self.n_layers,
            heads: self.heads,
            dropout: self.dropout,
            d_in_visual,
            d_in_audio,
            d_ff: self.d_ff,
            d_head: self.d_head,
            positional_encoding: self.positional_encoding,
            fusion_weights: self.fusion_weights,
            variant: self.variant,
        };
        cfg.validate().map_err(as_config)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            loss: LossConfig {
                tau: self.tau,
                margin: self.margin,
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
                normalize_embeddings: self.normalize_embeddings,
            },
            sampler: SamplerConfig {
                t: self.sampler_t,
                min_fraction: self.min_fraction,
            },
            region_size: self.region_size,
            checkpoint_every: self.checkpoint_every,
        };
        cfg.validate().map_err(as_config)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(self.d_in_visual.unwrap_or(1), self.d_in_audio.unwrap_or(1))?;
        self.train_config()?;
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

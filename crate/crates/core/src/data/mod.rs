//! Segment feature sequences, their on-disk format, dataset manifests,
//! the training-sequence sampler, TVSum label construction, and a synthetic
//! dataset generator.

mod features;
mod manifest;
mod sampler;
mod synth;
mod tvsum;

pub use features::{
    decode_features, encode_features, read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use sampler::{sample_training_sequence, SamplerConfig};
pub use synth::{synth_generate, SynthConfig, SynthDataset};
pub use tvsum::tvsum_segment_labels;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One video's segment features and binary highlight labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub id: String,
    pub category: String,
    /// `T × d_in_v`
    pub visual: Tensor,
    /// `T × d_in_a`
    pub audio: Tensor,
    pub labels: Vec<u8>,
}

impl VideoSequence {
    pub fn new(
        id: impl Into<String>,
        category: impl Into<String>,
        visual: Tensor,
        audio: Tensor,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let t = labels.len();
        if visual.rows() != t
            || audio.rows() != t
            || visual.shape().len() != 2
            || audio.shape().len() != 2
        {
            return Err(Error::shape(format!(
                "visual {:?}, audio {:?} and {t} labels disagree",
                visual.shape(),
                audio.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        Ok(VideoSequence {
            id: id.into(),
            category: category.into(),
            visual,
            audio,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in_visual(&self) -> usize {
        self.visual.cols()
    }

    pub fn d_in_audio(&self) -> usize {
        self.audio.cols()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Rows at `idx` (duplicates allowed), in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<VideoSequence> {
        Ok(VideoSequence {
            id: self.id.clone(),
            category: self.category.clone(),
            visual: self.visual.select_rows(idx)?,
            audio: self.audio.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

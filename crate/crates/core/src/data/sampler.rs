use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::VideoSequence;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Segments per training sequence.
    pub t: usize,
    /// Minimum share of each class in a sampled sequence.
    pub min_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t: 20,
            min_fraction: 1.0 / 3.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::Config(format!(
                "sampler T must be >= 2, got {}",
                self.t
            )));
        }
        if !(self.min_fraction > 0.0 && self.min_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "min_fraction must be in (0, 1/2], got {}",
                self.min_fraction
            )));
        }
        Ok(())
    }

    /// `⌈T · min_fraction⌉`, the least count allowed for either class.
    pub fn min_count(&self) -> usize {
        ((self.t as f64 * self.min_fraction) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Draw `k` items from `pool`: without replacement when it is large enough,
/// otherwise the whole pool plus uniform draws with replacement.
fn draw(pool: &[usize], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k <= pool.len() {
        sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        let mut out = pool.to_vec();
        out.extend((0..k - pool.len()).map(|_| pool[rng.random_range(0..pool.len())]));
        out
    }
}

/// Ascending indices of a length-`T` training sequence with both classes
/// holding at least `⌈T · min_fraction⌉` segments.
///
/// A uniform draw is kept when it already satisfies the class bounds;
/// otherwise positives and negatives are drawn separately (with repeats when
/// a pool is too small) and merged in temporal order.
pub fn sample_training_sequence(
    seq: &VideoSequence,
    cfg: &SamplerConfig,
    stream: SeedStream,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let pos: Vec<usize> = (0..seq.len()).filter(|&i| seq.labels[i] == 1).collect();
    let neg: Vec<usize> = (0..seq.len()).filter(|&i| seq.labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Sampler(format!(
            "video {} has a single class ({} positives of {})",
            seq.id,
            pos.len(),
            seq.len()
        )));
    }
    let t = cfg.t;
    let lo = cfg.min_count();
    let hi = t - lo;
    let mut rng = stream.rng();

    let target = if seq.len() >= t {
        let mut idx = sample(&mut rng, seq.len(), t).into_vec();
        let p = idx.iter().filter(|&&i| seq.labels[i] == 1).count();
        if (lo..=hi).contains(&p) {
            idx.sort_unstable();
            return Ok(idx);
        }
        p.clamp(lo, hi)
    } else {
        let share = pos.len() as f64 / seq.len() as f64;
        ((t as f64 * share).round() as usize).clamp(lo, hi)
    };

    let mut idx = draw(&pos, target, &mut rng);
    idx.extend(draw(&neg, t - target, &mut rng));
    idx.sort_unstable();
    Ok(idx)
}

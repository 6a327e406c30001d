use crate::error::{Error, Result};
use crate::eval::rank_order;

/// Aggregates frame-level importance into segment scores and marks the top
/// `⌈S/2⌉` segments as highlights.
///
/// Segment scores are frame means (a short final segment is kept). Ties are
/// resolved by earlier index first, so the result is reproducible.
pub fn tvsum_segment_labels(
    frame_scores: &[f64],
    frames_per_segment: usize,
) -> Result<(Vec<f64>, Vec<u8>)> {
    if frame_scores.is_empty() {
        return Err(Error::Data("no frame scores".into()));
    }
    if frames_per_segment == 0 {
        return Err(Error::Param("frames_per_segment must be >= 1".into()));
    }
    let scores: Vec<f64> = frame_scores
        .chunks(frames_per_segment)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let keep = scores.len().div_ceil(2);
    let mut labels = vec![0u8; scores.len()];
    for &i in rank_order(&scores).iter().take(keep) {
        labels[i] = 1;
    }
    Ok((scores, labels))
}

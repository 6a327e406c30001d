//! Per-video ranking metrics.
//!
//! Highlights are only comparable within a video, so AP is computed per
//! video, averaged per category, and the dataset figure is the unweighted
//! mean of category means.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Full-list average precision.
    Map,
    /// Average precision over the five highest-scored segments.
    Top5,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Map => "map",
            Protocol::Top5 => "top5",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Protocol::Map),
            "top5" => Ok(Protocol::Top5),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (map|top5)"
            ))),
        }
    }
}

/// Indices sorted by descending score; ties keep the earlier index first.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn check(scores: &[f64], labels: &[u8]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::Metric(
            "average precision needs at least one positive".into(),
        ));
    }
    Ok(positives)
}

/// AP truncated to the first `k` ranks, normalised by `min(P, k)`.
fn truncated_ap(scores: &[f64], labels: &[u8], k: usize, positives: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in rank_order(scores).iter().take(k).enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / positives.min(k) as f64
}

pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let p = check(scores, labels)?;
    Ok(truncated_ap(scores, labels, scores.len(), p))
}

pub fn top5_map(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let p = check(scores, labels)?;
    if scores.len() < 5 {
        return Err(Error::Metric(format!(
            "top-5 protocol needs at least 5 segments, got {}",
            scores.len()
        )));
    }
    Ok(truncated_ap(scores, labels, 5, p))
}

pub fn video_metric(scores: &[f64], labels: &[u8], protocol: Protocol) -> Result<f64> {
    match protocol {
        Protocol::Map => average_precision(scores, labels),
        Protocol::Top5 => top5_map(scores, labels),
    }
}

/// Ground truth for one evaluated video.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub category: String,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub id: String,
    pub category: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_video: Vec<VideoScore>,
    pub per_category: BTreeMap<String, f64>,
    pub dataset_average: f64,
}

pub fn map_report(
    predictions: &HashMap<String, Vec<f64>>,
    items: &[EvalItem],
    protocol: Protocol,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Data("no videos to evaluate".into()));
    }
    let mut per_video = Vec::with_capacity(items.len());
    let mut by_cat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for item in items {
        let scores = predictions
            .get(&item.id)
            .ok_or_else(|| Error::Data(format!("missing predictions for video {}", item.id)))?;
        let ap = video_metric(scores, &item.labels, protocol)
            .map_err(|e| Error::Data(format!("video {}: {e}", item.id)))?;
        by_cat.entry(item.category.clone()).or_default().push(ap);
        per_video.push(VideoScore {
            id: item.id.clone(),
            category: item.category.clone(),
            ap,
        });
    }
    let per_category: BTreeMap<String, f64> = by_cat
        .into_iter()
        .map(|(c, v)| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (c, m)
        })
        .collect();
    let dataset_average = per_category.values().sum::<f64>() / per_category.len() as f64;
    Ok(EvalReport {
        protocol,
        per_video,
        per_category,
        dataset_average,
    })
}

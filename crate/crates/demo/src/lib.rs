//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions hold the
//! logic and are plain Rust so they can be tested natively.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;

use highlight_core::data::{
    sample_training_sequence, synth_generate, Split, SynthConfig, VideoSequence,
};
use highlight_core::eval::{map_report, EvalItem, Protocol};
use highlight_core::hardpairs::sample_hard_pairs;
use highlight_core::losses::{hpcl, rank, LossConfig};
use highlight_core::model::{Mode, Model, ModelConfig};
use highlight_core::numerics::{ParamMap, Tensor};
use highlight_core::rng::SeedStream;
use highlight_core::training::{adam_step, init_seed, loss_and_grads, AdamState, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Parses a label string such as `"0011100"`.
pub fn parse_labels(s: &str) -> Result<Vec<u8>, String> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(format!("labels must be 0 or 1, got {other:?}")),
        })
        .collect()
}

pub fn hard_pairs_json(labels: &str, region_size: usize) -> Result<String, String> {
    let labels = parse_labels(labels)?;
    if labels.is_empty() {
        return Err("enter at least one label".into());
    }
    let set = sample_hard_pairs(&labels, region_size).map_err(|e| e.to_string())?;
    Ok(json!({ "labels": labels, "watersheds": set.watersheds, "pairs": set.pairs }).to_string())
}

/// Boundary pairs for a label string, e.g. `hard_pairs("0011100", 3)`.
#[wasm_bindgen]
pub fn hard_pairs(labels: &str, region_size: usize) -> Result<String, JsValue> {
    js(hard_pairs_json(labels, region_size))
}

/// Two 2-D Gaussian clusters (one per class) with one contiguous highlight
/// run, their contrastive and rank losses, and the contrastive loss over a
/// sweep of temperatures.
pub fn loss_playground_json(
    separation: f64,
    spread: f64,
    tau: f64,
    seed: u64,
) -> Result<String, String> {
    if !(tau > 0.0) || !(spread >= 0.0) {
        return Err("tau must be > 0 and spread >= 0".into());
    }
    let t = 16;
    let mut rng = SeedStream::new(seed).rng();
    let labels: Vec<u8> = (0..t).map(|i| (5..11).contains(&i) as u8).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| {
            let cx = if y == 1 {
                separation / 2.0
            } else {
                -separation / 2.0
            };
            vec![
                cx + spread * rng.random_range(-1.0..1.0),
                spread * rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let emb = Tensor::from_rows(&rows).map_err(|e| e.to_string())?;
    let pairs = sample_hard_pairs(&labels, 3).map_err(|e| e.to_string())?;
    let cfg = LossConfig {
        tau,
        normalize_embeddings: false,
        ..LossConfig::default()
    };
    let err = |e: highlight_core::Error| e.to_string();
    let sweep: Vec<[f64; 2]> = (0..40)
        .map(|i| {
            let tau = 0.02 * 1.12f64.powi(i);
            let c = LossConfig { tau, ..cfg.clone() };
            hpcl(&emb, &labels, &c).map(|v| [tau, v])
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    Ok(json!({
        "points": rows,
        "labels": labels,
        "pairs": pairs.pairs,
        "hpcl": hpcl(&emb, &labels, &cfg).map_err(err)?,
        "rank": rank(&emb, &pairs, &cfg).map_err(err)?,
        "margin": cfg.margin,
        "tau_sweep": sweep,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn loss_playground(
    separation: f64,
    spread: f64,
    tau: f64,
    seed: u64,
) -> Result<String, JsValue> {
    js(loss_playground_json(separation, spread, tau, seed))
}

#[derive(Serialize)]
struct EpochReport {
    epoch: usize,
    ce: f64,
    hpcl: f64,
    rank: f64,
    total: f64,
    test_map: f64,
    /// Fused scores and labels of the first test video.
    scores: Vec<f64>,
    labels: Vec<u8>,
}

/// A small model trained one epoch at a time on synthetic videos.
#[wasm_bindgen]
pub struct Trainer {
    model: Model,
    params: ParamMap,
    state: AdamState,
    cfg: TrainConfig,
    train: Vec<VideoSequence>,
    test: Vec<VideoSequence>,
    epoch: usize,
}

impl Trainer {
    pub fn create(separation: f64, contrastive: bool, seed: u64) -> Result<Trainer, String> {
        let err = |e: highlight_core::Error| e.to_string();
        let ds = synth_generate(&SynthConfig {
            n_videos: 16,
            n_test: 4,
            t_full: 24,
            d_in_v: 8,
            d_in_a: 8,
            separation,
            categories: 2,
            seed,
            ..SynthConfig::default()
        })
        .map_err(err)?;
        let (train, test): (Vec<_>, Vec<_>) = ds
            .manifest
            .entries
            .iter()
            .zip(ds.videos)
            .partition(|(e, _)| e.split == Split::Train);
        let model = Model::new(ModelConfig {
            dropout: 0.1,
            ..ModelConfig::toy(8, 8)
        })
        .map_err(err)?;
        let mut cfg = TrainConfig {
            lr: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        cfg.sampler.t = 12;
        if !contrastive {
            cfg.loss = LossConfig::ce_only();
        }
        Ok(Trainer {
            params: model.init_params(init_seed(seed)),
            model,
            state: AdamState::default(),
            cfg,
            train: train.into_iter().map(|(_, v)| v).collect(),
            test: test.into_iter().map(|(_, v)| v).collect(),
            epoch: 0,
        })
    }

    pub fn epoch_json(&mut self) -> Result<String, String> {
        let err = |e: highlight_core::Error| e.to_string();
        self.epoch += 1;
        let stream = SeedStream::new(self.cfg.seed).child(self.epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut stream.child_str("order").rng());
        let mut sums = [0.0; 4];
        for &i in &order {
            let v = &self.train[i];
            let vs = stream.child(i as u64);
            let idx = sample_training_sequence(v, &self.cfg.sampler, vs.child_str("sample"))
                .map_err(err)?;
            let sub = v.select(&idx).map_err(err)?;
            let (l, g) = loss_and_grads(
                &self.model,
                &self.params,
                &sub.visual,
                &sub.audio,
                &sub.labels,
                &self.cfg.loss,
                self.cfg.region_size,
                Mode::Train,
                vs.child_str("dropout").seed(),
            )
            .map_err(err)?;
            adam_step(&mut self.params, &g, &mut self.state, &self.cfg).map_err(err)?;
            for (s, x) in sums.iter_mut().zip([l.ce, l.hpcl, l.rank, l.total]) {
                *s += x;
            }
        }
        let n = order.len() as f64;
        let mut predictions = HashMap::new();
        for v in &self.test {
            let out = self
                .model
                .predict(&self.params, &v.visual, &v.audio)
                .map_err(err)?;
            predictions.insert(v.id.clone(), out.y_fused);
        }
        let items: Vec<EvalItem> = self
            .test
            .iter()
            .map(|v| EvalItem {
                id: v.id.clone(),
                category: v.category.clone(),
                labels: v.labels.clone(),
            })
            .collect();
        let report = map_report(&predictions, &items, Protocol::Map).map_err(err)?;
        let first = &self.test[0];
        let scores = predictions
            .remove(&first.id)
            .expect("first test video scored");
        let r = EpochReport {
            epoch: self.epoch,
            ce: sums[0] / n,
            hpcl: sums[1] / n,
            rank: sums[2] / n,
            total: sums[3] / n,
            test_map: report.dataset_average,
            scores,
            labels: first.labels.clone(),
        };
        serde_json::to_string(&r).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(separation: f64, contrastive: bool, seed: u64) -> Result<Trainer, JsValue> {
        Trainer::create(separation, contrastive, seed).map_err(|e| JsValue::from_str(&e))
    }

    /// Runs one epoch and returns its losses, test mAP and sample scores.
    pub fn epoch(&mut self) -> Result<String, JsValue> {
        js(self.epoch_json())
    }
}

//! Adam and the per-video training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{sample_training_sequence, SamplerConfig, VideoSequence};
use crate::error::{Error, Result};
use crate::hardpairs::{sample_hard_pairs, DEFAULT_REGION_SIZE};
use crate::losses::{ce_loss, hpcl_loss, rank_loss, total_loss, LossBreakdown, LossConfig};
use crate::model::{Mode, Model};
use crate::numerics::{ParamMap, Tape, Tensor};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    /// Hard-pair region size `L`.
    pub region_size: usize,
    /// Snapshot interval in epochs; 0 keeps only the final parameters.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            region_size: DEFAULT_REGION_SIZE,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must be in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!(
                "adam_eps must be > 0, got {}",
                self.adam_eps
            )));
        }
        if self.region_size == 0 {
            return Err(Error::Config("region_size must be >= 1".into()));
        }
        self.loss.validate()?;
        self.sampler.validate()
    }
}

/// First and second moments keyed like the parameters, plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamMap,
    pub v: ParamMap,
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ParamMap,
    grads: &ParamMap,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            Some(g) if g.shape() == p.shape() => {}
            Some(g) => {
                return Err(Error::Contract(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            None => return Err(Error::Contract(format!("no gradient for parameter {name}"))),
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for (((x, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let step = cfg.lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
            *x -= step;
        }
    }
    Ok(())
}

/// Loss terms and parameter gradients for one (sub)sequence. Parameters the
/// forward pass never touches get zero gradients.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads(
    model: &Model,
    params: &ParamMap,
    visual: &Tensor,
    audio: &Tensor,
    labels: &[u8],
    loss: &LossConfig,
    region_size: usize,
    mode: Mode,
    seed: u64,
) -> Result<(LossBreakdown, ParamMap)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, params, true)?;
    let out = model.forward(&mut tape, &vars, visual, audio, mode, seed)?;
    let pairs = sample_hard_pairs(labels, region_size)?;
    let ce = ce_loss(&mut tape, &out.ce_heads(), labels)?;
    let hpcl = hpcl_loss(&mut tape, out.f_hat, labels, loss)?;
    let rank = rank_loss(&mut tape, out.f_hat, &pairs, loss)?;
    let total = total_loss(&mut tape, ce, hpcl, rank, loss)?;
    let breakdown = LossBreakdown {
        ce: tape.value(ce).item(),
        hpcl: tape.value(hpcl).item(),
        rank: tape.value(rank).item(),
        total: tape.value(total).item(),
    };
    let mut g = tape.backward(total)?;
    let grads = params
        .iter()
        .zip(&vars)
        .map(|((name, p), &v)| {
            (
                name.clone(),
                g.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())),
            )
        })
        .collect();
    Ok((breakdown, grads))
}

/// Per-epoch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub ce: f64,
    pub hpcl: f64,
    pub rank: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ParamMap,
    pub history: Vec<EpochStats>,
    /// Ids of training videos left out because they hold a single class.
    pub skipped: Vec<String>,
}

/// Parameter seed used by [`train`] for a run seed.
pub fn init_seed(seed: u64) -> u64 {
    SeedStream::new(seed).child_str("init").seed()
}

/// Initialises parameters from `cfg.seed` and runs [`fit`].
pub fn train(
    model: &Model,
    videos: &[VideoSequence],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats, &ParamMap) -> Result<()>,
) -> Result<FitResult> {
    fit(
        model,
        model.init_params(init_seed(cfg.seed)),
        videos,
        cfg,
        on_epoch,
    )
}

/// Trains one video per step. Each epoch visits the usable videos in a
/// seeded shuffled order and draws a fresh subsequence per visit; hard pairs
/// come from the subsequence's labels. `on_epoch` sees the statistics and
/// the parameters after every epoch.
pub fn fit(
    model: &Model,
    mut params: ParamMap,
    videos: &[VideoSequence],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ParamMap) -> Result<()>,
) -> Result<FitResult> {
    cfg.validate()?;
    model.check_params(&params)?;
    let (usable, skipped): (Vec<usize>, Vec<usize>) = (0..videos.len()).partition(|&i| {
        let p = videos[i].positives();
        p > 0 && p < videos[i].len()
    });
    if usable.is_empty() {
        return Err(Error::Data("no training video holds both classes".into()));
    }
    let root = SeedStream::new(cfg.seed);
    let mut state = AdamState::default();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let es = root.child_str("epoch").child(epoch as u64);
        let mut order = usable.clone();
        order.shuffle(&mut es.child_str("order").rng());
        let mut sum = LossBreakdown::default();
        for &i in &order {
            let video = &videos[i];
            let vs = es.child_str("video").child(i as u64);
            let idx = sample_training_sequence(video, &cfg.sampler, vs.child_str("sample"))?;
            let sub = video.select(&idx)?;
            let (l, grads) = loss_and_grads(
                model,
                &params,
                &sub.visual,
                &sub.audio,
                &sub.labels,
                &cfg.loss,
                cfg.region_size,
                Mode::Train,
                vs.child_str("dropout").seed(),
            )?;
            for (term, v) in [
                ("ce", l.ce),
                ("hpcl", l.hpcl),
                ("rank", l.rank),
                ("total", l.total),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        video: video.id.clone(),
                        term,
                    });
                }
            }
            adam_step(&mut params, &grads, &mut state, cfg)?;
            sum.ce += l.ce;
            sum.hpcl += l.hpcl;
            sum.rank += l.rank;
            sum.total += l.total;
        }
        let n = order.len() as f64;
        let stats = EpochStats {
            epoch,
            ce: sum.ce / n,
            hpcl: sum.hpcl / n,
            rank: sum.rank / n,
            total: sum.total / n,
        };
        on_epoch(&stats, &params)?;
        history.push(stats);
    }
    Ok(FitResult {
        params,
        history,
        skipped: skipped.into_iter().map(|i| videos[i].id.clone()).collect(),
    })
}

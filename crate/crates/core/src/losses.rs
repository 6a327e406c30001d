//! Training objectives: per-head BCE, the dense segment contrastive loss,
//! the hard-pair margin rank loss, and their weighted total.
//!
//! Each loss has a value-level entry point and a tape entry point; both go
//! through the same closed-form value/gradient kernels below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardpairs::HardPairSet;
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Rank-loss margin on Euclidean embedding distance.
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// L2-normalise embedding rows before dot products and distances.
    pub normalize_embeddings: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            margin: 0.7,
            lambda1: 1.0,
            lambda2: 0.3,
            lambda3: 0.1,
            normalize_embeddings: true,
        }
    }
}

impl LossConfig {
    /// Cross-entropy only.
    pub fn ce_only() -> Self {
        LossConfig {
            lambda2: 0.0,
            lambda3: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-term loss values of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub hpcl: f64,
    pub rank: f64,
    pub total: f64,
}

fn check_labels(rows: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!(
            "{} labels for {rows} segments",
            labels.len()
        )));
    }
    Ok(())
}

/// `concat(F̂ᵛ + F̃ᵛ, F̂ᵃ + F̃ᵃ)` on the tape.
pub fn aggregate_embeddings(
    tape: &mut Tape,
    fv_hat: Var,
    fv_tilde: Var,
    fa_hat: Var,
    fa_tilde: Var,
) -> Result<Var> {
    let v = tape.add(fv_hat, fv_tilde)?;
    let a = tape.add(fa_hat, fa_tilde)?;
    tape.concat_cols(&[v, a])
}

pub fn aggregate_embedding_values(
    fv_hat: &Tensor,
    fv_tilde: &Tensor,
    fa_hat: &Tensor,
    fa_tilde: &Tensor,
) -> Result<Tensor> {
    let shapes = [fv_hat, fv_tilde, fa_hat, fa_tilde].map(|t| t.shape().to_vec());
    if shapes.iter().any(|s| s != &shapes[0]) {
        return Err(Error::shape(format!("aggregate over shapes {shapes:?}")));
    }
    Tensor::concat_cols(&[&fv_hat.add(fv_tilde)?, &fa_hat.add(fa_tilde)?])
}

/// Value and gradient of the segment contrastive loss on fixed embeddings.
///
/// For each query row `q`, positives are the other rows sharing its label
/// and negatives are rows of the opposite label. Each positive `p` adds
/// `-log(e^{s_qp} / (e^{s_qp} + Σ_n e^{s_qn}))` with `s = q·k / τ`,
/// averaged over positives then over the queries that have any.
pub fn hpcl_value_grad(emb: &Tensor, labels: &[u8], tau: f64) -> Result<(f64, Tensor)> {
    let t = emb.rows();
    check_labels(t, labels)?;
    let c = emb.cols();
    let mut grad = Tensor::zeros(&[t, c]);

    let valid: Vec<usize> = (0..t)
        .filter(|&q| (0..t).any(|j| j != q && labels[j] == labels[q]))
        .collect();
    if valid.is_empty() {
        return Ok((0.0, grad));
    }
    let qn = valid.len() as f64;

    let mut sim = vec![0.0; t * t];
    for i in 0..t {
        for j in i..t {
            let s: f64 = emb
                .row(i)
                .iter()
                .zip(emb.row(j))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / tau;
            sim[i * t + j] = s;
            sim[j * t + i] = s;
        }
    }

    let mut dsim = vec![0.0; t * t];
    let mut total = 0.0;
    for &q in &valid {
        let row = &sim[q * t..(q + 1) * t];
        let pos: Vec<usize> = (0..t)
            .filter(|&j| j != q && labels[j] == labels[q])
            .collect();
        let neg: Vec<usize> = (0..t).filter(|&j| labels[j] != labels[q]).collect();
        if neg.is_empty() {
            // every ratio is exactly 1
            continue;
        }
        let m = (0..t)
            .filter(|&j| j != q)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let neg_sum: f64 = neg.iter().map(|&n| (row[n] - m).exp()).sum();
        let w = 1.0 / (pos.len() as f64 * qn);
        let mut inv_z_sum = 0.0;
        for &p in &pos {
            let ep = (row[p] - m).exp();
            let z = ep + neg_sum;
            total += w * (z.ln() + m - row[p]);
            dsim[q * t + p] += w * (ep / z - 1.0);
            inv_z_sum += w / z;
        }
        for &n in &neg {
            dsim[q * t + n] += (row[n] - m).exp() * inv_z_sum;
        }
    }

    // s_ij = e_i·e_j / τ  ⇒  dE = (G + Gᵀ) E / τ
    for i in 0..t {
        for j in 0..t {
            let g = (dsim[i * t + j] + dsim[j * t + i]) / tau;
            if g == 0.0 {
                continue;
            }
            let ej = emb.row(j).to_vec();
            for (o, v) in grad.row_mut(i).iter_mut().zip(ej) {
                *o += g * v;
            }
        }
    }
    Ok((total, grad))
}

/// Value and gradient of `Σ max(margin - ‖e_a - e_b‖, 0)` over hard pairs.
///
/// Self-pairs sit at distance 0 by construction and carry no gradient.
pub fn rank_value_grad(emb: &Tensor, pairs: &HardPairSet, margin: f64) -> Result<(f64, Tensor)> {
    let t = emb.rows();
    let mut grad = Tensor::zeros(&[t, emb.cols()]);
    let mut total = 0.0;
    for &(a, b) in &pairs.pairs {
        if a >= t || b >= t {
            return Err(Error::shape(format!(
                "hard pair ({a}, {b}) out of range for {t} segments"
            )));
        }
        if a == b {
            total += margin.max(0.0);
            continue;
        }
        let diff: Vec<f64> = emb
            .row(a)
            .iter()
            .zip(emb.row(b))
            .map(|(x, y)| x - y)
            .collect();
        let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if d >= margin {
            continue;
        }
        total += margin - d;
        if d > 0.0 {
            for (o, v) in grad.row_mut(a).iter_mut().zip(&diff) {
                *o -= v / d;
            }
            for (o, v) in grad.row_mut(b).iter_mut().zip(&diff) {
                *o += v / d;
            }
        }
    }
    Ok((total, grad))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits, and its gradient.
pub fn bce_value_grad(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let t = logits.len();
    check_labels(t, labels)?;
    if t == 0 {
        return Err(Error::Data("cross-entropy over an empty sequence".into()));
    }
    let n = t as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(t);
    for (&z, &y) in logits.data().iter().zip(labels) {
        let y = y as f64;
        value += softplus(z) - y * z;
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((value / n, Tensor::new(logits.shape(), grad)?))
}

fn embedding_view(tape: &mut Tape, emb: Var, cfg: &LossConfig) -> Var {
    if cfg.normalize_embeddings {
        tape.l2_normalize_rows(emb)
    } else {
        emb
    }
}

pub fn hpcl_loss(tape: &mut Tape, emb: Var, labels: &[u8], cfg: &LossConfig) -> Result<Var> {
    let e = embedding_view(tape, emb, cfg);
    let (v, g) = hpcl_value_grad(tape.value(e), labels, cfg.tau)?;
    tape.fused_scalar(e, v, g)
}

pub fn rank_loss(tape: &mut Tape, emb: Var, pairs: &HardPairSet, cfg: &LossConfig) -> Result<Var> {
    let e = embedding_view(tape, emb, cfg);
    let (v, g) = rank_value_grad(tape.value(e), pairs, cfg.margin)?;
    tape.fused_scalar(e, v, g)
}

/// Sum of per-head mean BCE terms.
pub fn ce_loss(tape: &mut Tape, logits: &[Var], labels: &[u8]) -> Result<Var> {
    let mut terms = Vec::with_capacity(logits.len());
    for &l in logits {
        let (v, g) = bce_value_grad(tape.value(l), labels)?;
        terms.push(tape.fused_scalar(l, v, g)?);
    }
    let mut acc = *terms
        .first()
        .ok_or_else(|| Error::Contract("cross-entropy needs at least one head".into()))?;
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

pub fn total_loss(tape: &mut Tape, ce: Var, hpcl: Var, rank: Var, cfg: &LossConfig) -> Result<Var> {
    let a = tape.scale(ce, cfg.lambda1);
    let b = tape.scale(hpcl, cfg.lambda2);
    let c = tape.scale(rank, cfg.lambda3);
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

fn normalized(emb: &Tensor, cfg: &LossConfig) -> Tensor {
    if cfg.normalize_embeddings {
        crate::numerics::l2_normalize_rows(emb)
    } else {
        emb.as_matrix()
    }
}

pub fn hpcl(emb: &Tensor, labels: &[u8], cfg: &LossConfig) -> Result<f64> {
    Ok(hpcl_value_grad(&normalized(emb, cfg), labels, cfg.tau)?.0)
}

pub fn rank(emb: &Tensor, pairs: &HardPairSet, cfg: &LossConfig) -> Result<f64> {
    Ok(rank_value_grad(&normalized(emb, cfg), pairs, cfg.margin)?.0)
}

pub fn ce(logits: &[&Tensor], labels: &[u8]) -> Result<f64> {
    logits
        .iter()
        .map(|l| bce_value_grad(l, labels).map(|(v, _)| v))
        .sum()
}

pub fn total(ce: f64, hpcl: f64, rank: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda1 * ce + cfg.lambda2 * hpcl + cfg.lambda3 * rank
}

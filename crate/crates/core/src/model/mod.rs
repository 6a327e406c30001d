//! Visual-audio highlight model.
//!
//! Per modality: input projection, a post-norm transformer encoder stack,
//! and a single learned-query decoder whose output `G` is added back to
//! every segment. The two encoded streams then each query the concatenated
//! `2T × d` visual+audio sequence through their own co-occurrence decoder
//! stack. Three heads score the fused co-occurrence features and the two
//! globally-refined streams; the final score is their weighted sum.

mod config;
mod layers;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

pub use config::{ModelConfig, Variant};
use layers::{Block, Ctx, Head, Linear};

use crate::error::{Error, Result};
use crate::losses::aggregate_embeddings;
use crate::numerics::{ParamMap, Tape, Tensor, Var};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout disabled.
    Eval,
}

/// Index of a parameter in the model's [`ParamMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ParamId(usize);

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Records parameter names and shapes while the architecture is laid out.
#[derive(Debug, Default)]
pub(crate) struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub(crate) fn matrix(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.add(name, &[rows, cols], Init::Xavier)
    }

    pub(crate) fn bias(&mut self, name: String, n: usize) -> ParamId {
        self.add(name, &[n], Init::Zeros)
    }

    pub(crate) fn ones(&mut self, name: String, n: usize) -> ParamId {
        self.add(name, &[n], Init::Ones)
    }

    pub(crate) fn normal(&mut self, name: String, n: usize, std: f64) -> ParamId {
        self.add(name, &[n], Init::Normal(std))
    }
}

#[derive(Debug, Clone)]
struct Stream {
    proj: Linear,
    encoder: Vec<Block>,
    g_init: ParamId,
    global: Block,
    head: Head,
}

impl Stream {
    fn new(reg: &mut Registry, prefix: &str, d_in: usize, cfg: &ModelConfig) -> Self {
        Stream {
            proj: Linear::new(reg, &format!("{prefix}.proj"), d_in, cfg.d, true),
            encoder: (0..cfg.n_layers)
                .map(|i| Block::new(reg, &format!("{prefix}.enc.{i}"), cfg))
                .collect(),
            g_init: reg.normal(format!("{prefix}.global.g_init"), cfg.d, 0.02),
            global: Block::new(reg, &format!("{prefix}.global"), cfg),
            head: Head::new(reg, &format!("{prefix}.head"), cfg.d, cfg),
        }
    }

    /// Projection + encoder stack: `F_n`.
    fn encode(&self, ctx: &mut Ctx, input: Var, pe: Option<&Tensor>) -> Result<Var> {
        let mut x = self.proj.forward(ctx, input)?;
        if let Some(pe) = pe {
            let p = ctx.tape.constant(pe.clone());
            x = ctx.tape.add(x, p)?;
        }
        for layer in &self.encoder {
            x = layer.forward(ctx, x, None)?;
        }
        Ok(x)
    }

    /// Learned-query summary `G` of the encoded sequence.
    fn global_context(&self, ctx: &mut Ctx, f_n: Var) -> Result<Var> {
        let q = ctx.var(self.g_init);
        self.global.forward(ctx, q, Some(f_n))
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Arch {
    Full {
        visual: Stream,
        audio: Stream,
        cooc_visual: Vec<Block>,
        cooc_audio: Vec<Block>,
        fused_head: Head,
    },
    Single {
        visual: bool,
        stream: Stream,
    },
    Concat {
        stream: Stream,
    },
}

/// Architecture and parameter layout for one [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    arch: Arch,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub y_tilde: Option<Var>,
    pub y_v: Option<Var>,
    pub y_a: Option<Var>,
    pub y_fused: Var,
    /// Embeddings used by the contrastive and rank losses.
    pub f_hat: Var,
    pub fv_hat: Option<Var>,
    pub fa_hat: Option<Var>,
    pub fv_tilde: Option<Var>,
    pub fa_tilde: Option<Var>,
    pub g_v: Option<Var>,
    pub g_a: Option<Var>,
}

impl ForwardVars {
    /// Logit vectors that receive a cross-entropy term.
    pub fn ce_heads(&self) -> Vec<Var> {
        [self.y_tilde, self.y_v, self.y_a]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Plain-value outputs. Scores of heads a variant lacks are zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOutput {
    pub y_tilde: Vec<f64>,
    pub y_v: Vec<f64>,
    pub y_a: Vec<f64>,
    pub y_fused: Vec<f64>,
    /// `T × 2d` for the full model, `T × d` for single-stream variants.
    pub f_hat: Tensor,
    pub fv_hat: Option<Tensor>,
    pub fa_hat: Option<Tensor>,
    pub fv_tilde: Option<Tensor>,
    pub fa_tilde: Option<Tensor>,
    pub g_v: Option<Vec<f64>>,
    pub g_a: Option<Vec<f64>>,
}

/// Sinusoidal position encodings, `T × d`.
pub fn sinusoidal_encoding(t: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(t, d, data).expect("pe shape")
}

fn init_specs(specs: &[ParamSpec], seed: u64) -> ParamMap {
    let root = SeedStream::new(seed).child_str("init");
    specs
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let mut rng = root.child_str(&s.name).rng();
            let data: Vec<f64> = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Xavier => {
                    let a = (6.0 / (s.shape[0] + s.shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("valid std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            (
                s.name.clone(),
                Tensor::new(&s.shape, data).expect("spec shape"),
            )
        })
        .collect()
}

fn check_input(name: &str, t: &Tensor, d_in: usize) -> Result<()> {
    if t.shape().len() != 2 || t.cols() != d_in {
        return Err(Error::shape(format!(
            "{name} features {:?}, model expects width {d_in}",
            t.shape()
        )));
    }
    if !t.all_finite() {
        return Err(Error::Data(format!(
            "{name} features contain NaN or infinity"
        )));
    }
    Ok(())
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut reg = Registry::default();
        let cfg = &config;
        let arch = match cfg.variant {
            Variant::Full => {
                let visual = Stream::new(&mut reg, "visual", cfg.d_in_visual, cfg);
                let audio = Stream::new(&mut reg, "audio", cfg.d_in_audio, cfg);
                let cooc_visual = (0..cfg.n_layers)
                    .map(|i| Block::new(&mut reg, &format!("cooc.visual.{i}"), cfg))
                    .collect();
                let cooc_audio = (0..cfg.n_layers)
                    .map(|i| Block::new(&mut reg, &format!("cooc.audio.{i}"), cfg))
                    .collect();
                let fused_head = Head::new(&mut reg, "fused.head", 2 * cfg.d, cfg);
                Arch::Full {
                    visual,
                    audio,
                    cooc_visual,
                    cooc_audio,
                    fused_head,
                }
            }
            Variant::VisualOnly => Arch::Single {
                visual: true,
                stream: Stream::new(&mut reg, "visual", cfg.d_in_visual, cfg),
            },
            Variant::AudioOnly => Arch::Single {
                visual: false,
                stream: Stream::new(&mut reg, "audio", cfg.d_in_audio, cfg),
            },
            Variant::ConcatAv => Arch::Concat {
                stream: Stream::new(&mut reg, "av", cfg.d_in_visual + cfg.d_in_audio, cfg),
            },
        };
        Ok(Model {
            config,
            specs: reg.specs,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn param_count(&self) -> usize {
        self.specs
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    /// Xavier-uniform matrices, zero biases, unit norm gains, and
    /// `N(0, 0.02²)` global queries. Each tensor draws from a stream keyed
    /// by its name.
    pub fn init_params(&self, seed: u64) -> ParamMap {
        init_specs(&self.specs, seed)
    }

    /// Names, order, and shapes of `params` match this architecture.
    pub fn check_params(&self, params: &ParamMap) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, model needs {}",
                params.len(),
                self.specs.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(params) {
            if &spec.name != name {
                return Err(Error::Config(format!(
                    "parameter {name} found where {} was expected",
                    spec.name
                )));
            }
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, model needs {:?}",
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Records every parameter as a leaf; the result is indexed like `params`.
    pub fn bind(
        &self,
        tape: &mut Tape,
        params: &ParamMap,
        requires_grad: bool,
    ) -> Result<Vec<Var>> {
        self.check_params(params)?;
        Ok(params
            .values()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        visual: &Tensor,
        audio: &Tensor,
        mode: Mode,
        seed: u64,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let t = visual.rows();
        if t == 0 || visual.is_empty() {
            return Err(Error::Data("empty sequence".into()));
        }
        let uses_visual = !matches!(self.arch, Arch::Single { visual: false, .. });
        let uses_audio = !matches!(self.arch, Arch::Single { visual: true, .. });
        if uses_visual {
            check_input("visual", visual, cfg.d_in_visual)?;
        }
        if uses_audio {
            check_input("audio", audio, cfg.d_in_audio)?;
            if audio.rows() != t {
                return Err(Error::shape(format!(
                    "visual has {t} segments, audio has {}",
                    audio.rows()
                )));
            }
        }
        let t = if uses_visual { t } else { audio.rows() };
        let pe = cfg
            .positional_encoding
            .then(|| sinusoidal_encoding(t, cfg.d));

        let mut ctx = Ctx {
            tape,
            vars,
            training: mode == Mode::Train,
            dropout: cfg.dropout,
            seed: SeedStream::new(seed).child_str("dropout"),
            counter: 0,
        };

        match &self.arch {
            Arch::Full {
                visual: sv,
                audio: sa,
                cooc_visual,
                cooc_audio,
                fused_head,
            } => {
                let xv = ctx.tape.constant(visual.clone());
                let xa = ctx.tape.constant(audio.clone());
                let fv_n = sv.encode(&mut ctx, xv, pe.as_ref())?;
                let fa_n = sa.encode(&mut ctx, xa, pe.as_ref())?;
                let g_v = sv.global_context(&mut ctx, fv_n)?;
                let g_a = sa.global_context(&mut ctx, fa_n)?;
                let fv_hat = ctx.tape.add_row(fv_n, g_v)?;
                let fa_hat = ctx.tape.add_row(fa_n, g_a)?;

                let f_va = ctx.tape.concat_rows(&[fv_n, fa_n])?;
                let mut fv_tilde = fv_n;
                for layer in cooc_visual {
                    fv_tilde = layer.forward(&mut ctx, fv_tilde, Some(f_va))?;
                }
                let mut fa_tilde = fa_n;
                for layer in cooc_audio {
                    fa_tilde = layer.forward(&mut ctx, fa_tilde, Some(f_va))?;
                }

                let f_tilde = ctx.tape.concat_cols(&[fv_tilde, fa_tilde])?;
                let y_tilde = fused_head.forward(&mut ctx, f_tilde)?;
                let y_v = sv.head.forward(&mut ctx, fv_hat)?;
                let y_a = sa.head.forward(&mut ctx, fa_hat)?;

                let [w1, w2, w3] = cfg.fusion_weights;
                let a = ctx.tape.scale(y_tilde, w1);
                let b = ctx.tape.scale(y_v, w2);
                let c = ctx.tape.scale(y_a, w3);
                let ab = ctx.tape.add(a, b)?;
                let y_fused = ctx.tape.add(ab, c)?;

                let f_hat = aggregate_embeddings(ctx.tape, fv_hat, fv_tilde, fa_hat, fa_tilde)?;
                Ok(ForwardVars {
                    y_tilde: Some(y_tilde),
                    y_v: Some(y_v),
                    y_a: Some(y_a),
                    y_fused,
                    f_hat,
                    fv_hat: Some(fv_hat),
                    fa_hat: Some(fa_hat),
                    fv_tilde: Some(fv_tilde),
                    fa_tilde: Some(fa_tilde),
                    g_v: Some(g_v),
                    g_a: Some(g_a),
                })
            }
            Arch::Single {
                visual: is_v,
                stream,
            } => {
                let x = ctx
                    .tape
                    .constant(if *is_v { visual.clone() } else { audio.clone() });
                let f_n = stream.encode(&mut ctx, x, pe.as_ref())?;
                let g = stream.global_context(&mut ctx, f_n)?;
                let f_hat = ctx.tape.add_row(f_n, g)?;
                let y = stream.head.forward(&mut ctx, f_hat)?;
                let (y_v, y_a, fv_hat, fa_hat, g_v, g_a) = if *is_v {
                    (Some(y), None, Some(f_hat), None, Some(g), None)
                } else {
                    (None, Some(y), None, Some(f_hat), None, Some(g))
                };
                Ok(ForwardVars {
                    y_tilde: None,
                    y_v,
                    y_a,
                    y_fused: y,
                    f_hat,
                    fv_hat,
                    fa_hat,
                    fv_tilde: None,
                    fa_tilde: None,
                    g_v,
                    g_a,
                })
            }
            Arch::Concat { stream } => {
                let x = ctx.tape.constant(Tensor::concat_cols(&[visual, audio])?);
                let f_n = stream.encode(&mut ctx, x, pe.as_ref())?;
                let g = stream.global_context(&mut ctx, f_n)?;
                let f_hat = ctx.tape.add_row(f_n, g)?;
                let y = stream.head.forward(&mut ctx, f_hat)?;
                Ok(ForwardVars {
                    y_tilde: Some(y),
                    y_v: None,
                    y_a: None,
                    y_fused: y,
                    f_hat,
                    fv_hat: None,
                    fa_hat: None,
                    fv_tilde: None,
                    fa_tilde: None,
                    g_v: None,
                    g_a: None,
                })
            }
        }
    }

    /// Forward pass returning plain values (no gradients kept).
    pub fn run(
        &self,
        params: &ParamMap,
        visual: &Tensor,
        audio: &Tensor,
        mode: Mode,
        seed: u64,
    ) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, params, false)?;
        let out = self.forward(&mut tape, &vars, visual, audio, mode, seed)?;
        let t = tape.value(out.y_fused).len();
        let vec_or_zero = |v: Option<Var>| -> Vec<f64> {
            v.map_or_else(|| vec![0.0; t], |v| tape.value(v).data().to_vec())
        };
        let val = |v: Option<Var>| v.map(|v| tape.value(v).clone());
        Ok(ModelOutput {
            y_tilde: vec_or_zero(out.y_tilde),
            y_v: vec_or_zero(out.y_v),
            y_a: vec_or_zero(out.y_a),
            y_fused: tape.value(out.y_fused).data().to_vec(),
            f_hat: tape.value(out.f_hat).clone(),
            fv_hat: val(out.fv_hat),
            fa_hat: val(out.fa_hat),
            fv_tilde: val(out.fv_tilde),
            fa_tilde: val(out.fa_tilde),
            g_v: out.g_v.map(|v| tape.value(v).data().to_vec()),
            g_a: out.g_a.map(|v| tape.value(v).data().to_vec()),
        })
    }

    /// Eval-mode scores.
    pub fn predict(
        &self,
        params: &ParamMap,
        visual: &Tensor,
        audio: &Tensor,
    ) -> Result<ModelOutput> {
        self.run(params, visual, audio, Mode::Eval, 0)
    }
}

#[cfg(test)]
mod tests;

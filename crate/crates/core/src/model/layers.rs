use super::{ModelConfig, ParamId, Registry};
use crate::error::Result;
use crate::numerics::{Tape, Var, LAYER_NORM_EPS};
use crate::rng::SeedStream;

/// Forward-pass state: the tape, bound parameters, and the dropout stream.
pub(crate) struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub vars: &'a [Var],
    pub training: bool,
    pub dropout: f64,
    pub seed: SeedStream,
    pub counter: u64,
}

impl Ctx<'_> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Each call site draws its own mask stream, in call order.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let seed = self.seed.child(self.counter).seed();
        self.counter += 1;
        self.tape.dropout(x, self.dropout, seed, self.training)
    }
}

/// `x · W (+ b)` with `W: in × out`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(reg: &mut Registry, prefix: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            w: reg.matrix(format!("{prefix}.w"), d_in, d_out),
            b: bias.then(|| reg.bias(format!("{prefix}.b"), d_out)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = ctx.tape.matmul(x, ctx.var(self.w))?;
        match self.b {
            Some(b) => ctx.tape.add_row(y, ctx.var(b)),
            None => Ok(y),
        }
    }
}

/// Multi-head scaled dot-product attention with an output projection.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    d_k: usize,
    d_v: usize,
}

impl Attention {
    pub fn new(reg: &mut Registry, prefix: &str, cfg: &ModelConfig) -> Self {
        Attention {
            q: Linear::new(reg, &format!("{prefix}.wq"), cfg.d, cfg.d_k, false),
            k: Linear::new(reg, &format!("{prefix}.wk"), cfg.d, cfg.d_k, false),
            v: Linear::new(reg, &format!("{prefix}.wv"), cfg.d, cfg.d_v, false),
            o: Linear::new(reg, &format!("{prefix}.wo"), cfg.d_v, cfg.d, false),
            heads: cfg.heads,
            d_k: cfg.d_k,
            d_v: cfg.d_v,
        }
    }

    /// Queries from `q_in`, keys and values from `kv_in`.
    pub fn forward(&self, ctx: &mut Ctx, q_in: Var, kv_in: Var) -> Result<Var> {
        let q = self.q.forward(ctx, q_in)?;
        let k = self.k.forward(ctx, kv_in)?;
        let v = self.v.forward(ctx, kv_in)?;
        let (hk, hv) = (self.d_k / self.heads, self.d_v / self.heads);
        let scale = 1.0 / (hk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ctx.tape.slice_cols(q, h * hk, hk)?;
            let kh = ctx.tape.slice_cols(k, h * hk, hk)?;
            let vh = ctx.tape.slice_cols(v, h * hv, hv)?;
            let scores = ctx.tape.matmul_nt(qh, kh)?;
            let scores = ctx.tape.scale(scores, scale);
            let attn = ctx.tape.softmax_rows(scores);
            outs.push(ctx.tape.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            ctx.tape.concat_cols(&outs)?
        };
        self.o.forward(ctx, cat)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new(reg: &mut Registry, prefix: &str, d: usize) -> Self {
        Norm {
            gamma: reg.ones(format!("{prefix}.gamma"), d),
            beta: reg.bias(format!("{prefix}.beta"), d),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        ctx.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Linear → ReLU → Linear.
#[derive(Debug, Clone)]
pub(crate) struct Ffn {
    l1: Linear,
    l2: Linear,
}

impl Ffn {
    pub fn new(reg: &mut Registry, prefix: &str, d: usize, d_ff: usize) -> Self {
        Ffn {
            l1: Linear::new(reg, &format!("{prefix}.l1"), d, d_ff, true),
            l2: Linear::new(reg, &format!("{prefix}.l2"), d_ff, d, true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.l1.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        self.l2.forward(ctx, h)
    }
}

/// Post-norm attention block:
/// `x1 = LN(x + drop(MHA(x, mem)))`, `out = LN(x1 + drop(FFN(x1)))`.
///
/// With `mem = None` it is a self-attention encoder layer; otherwise a
/// cross-attention decoder layer over `mem`.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub attn: Attention,
    norm1: Norm,
    ffn: Ffn,
    norm2: Norm,
}

impl Block {
    pub fn new(reg: &mut Registry, prefix: &str, cfg: &ModelConfig) -> Self {
        Block {
            attn: Attention::new(reg, &format!("{prefix}.attn"), cfg),
            norm1: Norm::new(reg, &format!("{prefix}.norm1"), cfg.d),
            ffn: Ffn::new(reg, &format!("{prefix}.ffn"), cfg.d, cfg.ff_dim()),
            norm2: Norm::new(reg, &format!("{prefix}.norm2"), cfg.d),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mem: Option<Var>) -> Result<Var> {
        let a = self.attn.forward(ctx, x, mem.unwrap_or(x))?;
        let a = ctx.dropout(a)?;
        let r = ctx.tape.add(x, a)?;
        let x1 = self.norm1.forward(ctx, r)?;
        let f = self.ffn.forward(ctx, x1)?;
        let f = ctx.dropout(f)?;
        let r = ctx.tape.add(x1, f)?;
        self.norm2.forward(ctx, r)
    }
}

/// Linear → ReLU → Dropout → Linear, one logit per row.
#[derive(Debug, Clone)]
pub(crate) struct Head {
    l1: Linear,
    l2: Linear,
}

impl Head {
    pub fn new(reg: &mut Registry, prefix: &str, d_in: usize, cfg: &ModelConfig) -> Self {
        Head {
            l1: Linear::new(reg, &format!("{prefix}.l1"), d_in, cfg.head_dim(), true),
            l2: Linear::new(reg, &format!("{prefix}.l2"), cfg.head_dim(), 1, true),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.l1.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        let h = ctx.dropout(h)?;
        self.l2.forward(ctx, h)
    }
}

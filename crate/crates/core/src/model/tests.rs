use rand::Rng;

use super::layers::{Attention, Block, Ctx, Head};
use super::*;
use crate::numerics::{layer_norm, LAYER_NORM_EPS};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeedStream::new(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Registers a component and fills every parameter with uniform noise.
fn build<T>(seed: u64, f: impl FnOnce(&mut Registry) -> T) -> (T, ParamMap) {
    let mut reg = Registry::default();
    let part = f(&mut reg);
    let mut params = init_specs(&reg.specs, seed);
    for (i, t) in params.values_mut().enumerate() {
        let shape = t.shape().to_vec();
        *t = random(&shape, seed.wrapping_mul(31).wrapping_add(i as u64)).scale(0.5);
    }
    (part, params)
}

fn with_ctx(params: &ParamMap, f: impl FnOnce(&mut Ctx) -> Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().map(|t| tape.constant(t.clone())).collect();
    let mut ctx = Ctx {
        tape: &mut tape,
        vars: &vars,
        training: false,
        dropout: 0.0,
        seed: SeedStream::new(0),
        counter: 0,
    };
    let out = f(&mut ctx).unwrap();
    tape.value(out).clone()
}

fn cfg(d: usize, dk: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        d,
        d_k: dk,
        d_v: dk,
        heads,
        d_ff: Some(2 * d),
        d_head: Some(d),
        ..ModelConfig::toy(3, 2)
    }
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= tol)
}

// ---- scripted oracles, built from value-level primitives only ----

fn mha_oracle(q_in: &Tensor, kv: &Tensor, p: &ParamMap, prefix: &str, heads: usize) -> Tensor {
    let w = |n: &str| &p[&format!("{prefix}.{n}.w")];
    let q = q_in.matmul(w("wq")).unwrap();
    let k = kv.matmul(w("wk")).unwrap();
    let v = kv.matmul(w("wv")).unwrap();
    let (hk, hv) = (q.cols() / heads, v.cols() / heads);
    let mut out = Tensor::zeros(&[q.rows(), v.cols()]);
    for h in 0..heads {
        for i in 0..q.rows() {
            let s: Vec<f64> = (0..k.rows())
                .map(|j| {
                    (0..hk)
                        .map(|c| q.get(i, h * hk + c) * k.get(j, h * hk + c))
                        .sum::<f64>()
                        / (hk as f64).sqrt()
                })
                .collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - mx).exp()).sum();
            for c in 0..hv {
                let acc: f64 = (0..k.rows())
                    .map(|j| (s[j] - mx).exp() / z * v.get(j, h * hv + c))
                    .sum();
                out.row_mut(i)[h * hv + c] = acc;
            }
        }
    }
    out.matmul(w("wo")).unwrap()
}

fn linear_oracle(x: &Tensor, p: &ParamMap, prefix: &str) -> Tensor {
    let y = x.matmul(&p[&format!("{prefix}.w")]).unwrap();
    let b = &p[&format!("{prefix}.b")];
    let mut out = y.clone();
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    out
}

fn ln_oracle(x: &Tensor, p: &ParamMap, prefix: &str) -> Tensor {
    layer_norm(
        x,
        &p[&format!("{prefix}.gamma")],
        &p[&format!("{prefix}.beta")],
        LAYER_NORM_EPS,
    )
    .unwrap()
}

fn block_oracle(
    x: &Tensor,
    mem: Option<&Tensor>,
    p: &ParamMap,
    prefix: &str,
    heads: usize,
) -> Tensor {
    let a = mha_oracle(x, mem.unwrap_or(x), p, &format!("{prefix}.attn"), heads);
    let x1 = ln_oracle(&x.add(&a).unwrap(), p, &format!("{prefix}.norm1"));
    let h = linear_oracle(&x1, p, &format!("{prefix}.ffn.l1")).map(|v| v.max(0.0));
    let f = linear_oracle(&h, p, &format!("{prefix}.ffn.l2"));
    ln_oracle(&x1.add(&f).unwrap(), p, &format!("{prefix}.norm2"))
}

// ---- attention ----

#[test]
fn attention_over_single_key_is_value_projection() {
    let c = cfg(6, 8, 2);
    let (attn, p) = build(1, |r| Attention::new(r, "a", &c));
    let q = random(&[4, 6], 2);
    let kv = random(&[1, 6], 3);
    let got = with_ctx(&p, |ctx| {
        let (q, kv) = (ctx.tape.constant(q.clone()), ctx.tape.constant(kv.clone()));
        attn.forward(ctx, q, kv)
    });
    let want_row = kv
        .matmul(&p["a.wv.w"])
        .unwrap()
        .matmul(&p["a.wo.w"])
        .unwrap();
    for r in 0..4 {
        for (g, w) in got.row(r).iter().zip(want_row.row(0)) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_query_weights_give_uniform_attention() {
    let c = cfg(6, 8, 2);
    let (attn, mut p) = build(4, |r| Attention::new(r, "a", &c));
    p["a.wq.w"] = Tensor::zeros(&[6, 8]);
    let q = random(&[3, 6], 5);
    let kv = random(&[5, 6], 6);
    let got = with_ctx(&p, |ctx| {
        let (q, kv) = (ctx.tape.constant(q.clone()), ctx.tape.constant(kv.clone()));
        attn.forward(ctx, q, kv)
    });
    let v = kv.matmul(&p["a.wv.w"]).unwrap();
    let mean: Vec<f64> = (0..v.cols())
        .map(|j| (0..5).map(|i| v.get(i, j)).sum::<f64>() / 5.0)
        .collect();
    let want = Tensor::from_rows(&[mean])
        .unwrap()
        .matmul(&p["a.wo.w"])
        .unwrap();
    for r in 0..3 {
        for (g, w) in got.row(r).iter().zip(want.row(0)) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_matches_dense_oracle() {
    for heads in [1, 2, 4] {
        let c = cfg(8, 8, heads);
        let (attn, p) = build(7 + heads as u64, |r| Attention::new(r, "a", &c));
        let q = random(&[5, 8], 8);
        let kv = random(&[7, 8], 9);
        let got = with_ctx(&p, |ctx| {
            let (q, kv) = (ctx.tape.constant(q.clone()), ctx.tape.constant(kv.clone()));
            attn.forward(ctx, q, kv)
        });
        let want = mha_oracle(&q, &kv, &p, "a", heads);
        assert!(close(&got, &want, 1e-10), "heads={heads}");
    }
}

// ---- encoder / decoder blocks ----

#[test]
fn encoder_layer_matches_scripted_oracle() {
    let c = cfg(8, 8, 2);
    let (blk, p) = build(10, |r| Block::new(r, "b", &c));
    let x = random(&[6, 8], 11);
    let got = with_ctx(&p, |ctx| {
        let x = ctx.tape.constant(x.clone());
        blk.forward(ctx, x, None)
    });
    assert!(close(&got, &block_oracle(&x, None, &p, "b", 2), 1e-10));

    let one = random(&[1, 8], 12);
    let got = with_ctx(&p, |ctx| {
        let x = ctx.tape.constant(one.clone());
        blk.forward(ctx, x, None)
    });
    assert_eq!(got.shape(), &[1, 8]);
    assert!(got.all_finite());
}

#[test]
fn encoder_layer_is_permutation_equivariant() {
    let c = cfg(8, 8, 2);
    let (blk, p) = build(13, |r| Block::new(r, "b", &c));
    let x = random(&[6, 8], 14);
    let perm = [3, 0, 5, 1, 4, 2];
    let run = |x: &Tensor| {
        with_ctx(&p, |ctx| {
            let x = ctx.tape.constant(x.clone());
            blk.forward(ctx, x, None)
        })
    };
    let a = run(&x).select_rows(&perm).unwrap();
    let b = run(&x.select_rows(&perm).unwrap());
    assert!(close(&a, &b, 1e-12));
}

#[test]
fn cooccurrence_layer_matches_dense_2t_oracle() {
    let c = cfg(8, 8, 2);
    let (blk, p) = build(15, |r| Block::new(r, "co", &c));
    let fv = random(&[5, 8], 16);
    let fa = random(&[5, 8], 17);
    let fva = Tensor::concat_rows(&[&fv, &fa]).unwrap();
    let got = with_ctx(&p, |ctx| {
        let v = ctx.tape.constant(fv.clone());
        let a = ctx.tape.constant(fa.clone());
        let mem = ctx.tape.concat_rows(&[v, a])?;
        blk.forward(ctx, v, Some(mem))
    });
    assert_eq!(got.shape(), &[5, 8]);
    assert!(close(
        &got,
        &block_oracle(&fv, Some(&fva), &p, "co", 2),
        1e-10
    ));
    // the attention itself sees all 2T keys
    let att = with_ctx(&p, |ctx| {
        let v = ctx.tape.constant(fv.clone());
        let m = ctx.tape.constant(fva.clone());
        blk.attn.forward(ctx, v, m)
    });
    assert!(close(&att, &mha_oracle(&fv, &fva, &p, "co.attn", 2), 1e-10));
}

#[test]
fn score_head_oracle_and_zero_weights() {
    let c = cfg(8, 8, 2);
    let (head, mut p) = build(18, |r| Head::new(r, "h", 8, &c));
    let x = random(&[20, 8], 19);
    let got = with_ctx(&p, |ctx| {
        let x = ctx.tape.constant(x.clone());
        head.forward(ctx, x)
    });
    assert_eq!(got.len(), 20);
    let h = linear_oracle(&x, &p, "h.l1").map(|v| v.max(0.0));
    let want = linear_oracle(&h, &p, "h.l2");
    assert!(close(&got, &want, 1e-12));

    for t in p.values_mut() {
        *t = Tensor::zeros(t.shape());
    }
    let got = with_ctx(&p, |ctx| {
        let x = ctx.tape.constant(x.clone());
        head.forward(ctx, x)
    });
    assert!(got.data().iter().all(|&v| v == 0.0));
}

// ---- streams ----

fn toy_model(variant: Variant, pe: bool) -> (Model, ParamMap) {
    let model = Model::new(ModelConfig {
        variant,
        positional_encoding: pe,
        ..ModelConfig::toy(5, 4)
    })
    .unwrap();
    let mut params = model.init_params(3);
    // non-trivial norms and biases
    for (i, (name, t)) in params.iter_mut().enumerate() {
        if name.ends_with(".b") || name.ends_with(".beta") {
            *t = random(t.shape(), 500 + i as u64).scale(0.1);
        }
    }
    (model, params)
}

#[test]
fn single_layer_stack_equals_block() {
    let (model, p) = toy_model(Variant::VisualOnly, false);
    let Arch::Single { stream, .. } = &model.arch else {
        unreachable!()
    };
    let x = random(&[6, 5], 20);
    let encoded = with_ctx(&p, |ctx| {
        let x = ctx.tape.constant(x.clone());
        stream.encode(ctx, x, None)
    });
    let projected = linear_oracle(&x, &p, "visual.proj");
    assert!(close(
        &encoded,
        &block_oracle(&projected, None, &p, "visual.enc.0", 2),
        1e-10
    ));
}

#[test]
fn paper_dims_stack_shape() {
    let model = Model::new(ModelConfig {
        d_in_visual: 12,
        d_in_audio: 10,
        dropout: 0.0,
        variant: Variant::VisualOnly,
        ..ModelConfig::default()
    })
    .unwrap();
    let p = model.init_params(0);
    let Arch::Single { stream, .. } = &model.arch else {
        unreachable!()
    };
    assert_eq!(stream.encoder.len(), 2);
    let x = random(&[20, 12], 21);
    let out = with_ctx(&p, |ctx| {
        let x = ctx.tape.constant(x.clone());
        stream.encode(ctx, x, None)
    });
    assert_eq!(out.shape(), &[20, 256]);
}

#[test]
fn positional_encoding_breaks_permutation_symmetry() {
    let (model, p) = toy_model(Variant::VisualOnly, true);
    let Arch::Single { stream, .. } = &model.arch else {
        unreachable!()
    };
    let x = random(&[6, 5], 22);
    let pe = sinusoidal_encoding(6, 16);
    let run = |x: &Tensor| {
        with_ctx(&p, |ctx| {
            let x = ctx.tape.constant(x.clone());
            stream.encode(ctx, x, Some(&pe))
        })
    };
    let perm = [1, 0, 2, 3, 4, 5];
    let a = run(&x).select_rows(&perm).unwrap();
    let b = run(&x.select_rows(&perm).unwrap());
    assert!(!close(&a, &b, 1e-6));
}

#[test]
fn global_context_oracle_and_set_invariance() {
    let (model, p) = toy_model(Variant::VisualOnly, false);
    let Arch::Single { stream, .. } = &model.arch else {
        unreachable!()
    };
    let f = random(&[6, 16], 23);
    let run = |f: &Tensor| {
        with_ctx(&p, |ctx| {
            let f = ctx.tape.constant(f.clone());
            stream.global_context(ctx, f)
        })
    };
    let g = run(&f);
    let q = p["visual.global.g_init"].as_matrix();
    let want = block_oracle(&q, Some(&f), &p, "visual.global", 2);
    assert!(close(&g.as_matrix(), &want, 1e-10));

    let g2 = run(&f.select_rows(&[5, 2, 0, 4, 1, 3]).unwrap());
    assert!(close(&g, &g2, 1e-12));

    // one segment: attention weight 1 on it
    let one = random(&[1, 16], 24);
    let g1 = run(&one);
    let want = block_oracle(&q, Some(&one), &p, "visual.global", 2);
    assert!(close(&g1.as_matrix(), &want, 1e-10));
}

// ---- full forward ----

#[test]
fn full_forward_shapes() {
    let (model, p) = toy_model(Variant::Full, false);
    let out = model
        .predict(&p, &random(&[6, 5], 30), &random(&[6, 4], 31))
        .unwrap();
    for v in [&out.y_tilde, &out.y_v, &out.y_a, &out.y_fused] {
        assert_eq!(v.len(), 6);
    }
    assert_eq!(out.f_hat.shape(), &[6, 32]);
    assert_eq!(out.fv_tilde.as_ref().unwrap().shape(), &[6, 16]);
    assert_eq!(out.fa_tilde.as_ref().unwrap().shape(), &[6, 16]);
    assert_eq!(out.g_v.as_ref().unwrap().len(), 16);

    let fhat = crate::losses::aggregate_embedding_values(
        out.fv_hat.as_ref().unwrap(),
        out.fv_tilde.as_ref().unwrap(),
        out.fa_hat.as_ref().unwrap(),
        out.fa_tilde.as_ref().unwrap(),
    )
    .unwrap();
    assert_eq!(fhat, out.f_hat);
}

#[test]
fn fused_score_is_the_weighted_sum() {
    let (model, p) = toy_model(Variant::Full, false);
    let (v, a) = (random(&[6, 5], 32), random(&[6, 4], 33));
    let out = model.predict(&p, &v, &a).unwrap();
    for i in 0..6 {
        let want = (out.y_tilde[i] + out.y_v[i] + out.y_a[i]) / 3.0;
        assert!((out.y_fused[i] - want).abs() < 1e-12);
    }
    let only = Model::new(ModelConfig {
        fusion_weights: [1.0, 0.0, 0.0],
        ..model.config().clone()
    })
    .unwrap();
    let out = only.predict(&p, &v, &a).unwrap();
    assert_eq!(out.y_fused, out.y_tilde);
}

#[test]
fn tied_cooccurrence_params_make_streams_symmetric() {
    let (model, mut p) = toy_model(Variant::Full, false);
    let names: Vec<String> = p.keys().cloned().collect();
    for n in names {
        if let Some(rest) = n.strip_prefix("audio.") {
            if !rest.starts_with("proj") {
                p[&n] = p[&format!("visual.{rest}")].clone();
            }
        }
        if let Some(rest) = n.strip_prefix("cooc.audio.") {
            p[&n] = p[&format!("cooc.visual.{rest}")].clone();
        }
    }
    // identical projected streams: same raw width, same projection
    let model = Model::new(ModelConfig {
        d_in_audio: 5,
        ..model.config().clone()
    })
    .unwrap();
    let mut p2 = model.init_params(0);
    for (k, v) in p2.iter_mut() {
        *v = p
            .get(k)
            .cloned()
            .unwrap_or_else(|| p[&k.replace("audio.", "visual.")].clone());
    }
    p2["audio.proj.w"] = p2["visual.proj.w"].clone();
    p2["audio.proj.b"] = p2["visual.proj.b"].clone();
    let x = random(&[6, 5], 34);
    let out = model.predict(&p2, &x, &x).unwrap();
    assert!(close(
        out.fv_tilde.as_ref().unwrap(),
        out.fa_tilde.as_ref().unwrap(),
        1e-12
    ));
}

#[test]
fn permutation_equivariance_of_full_model() {
    let (model, p) = toy_model(Variant::Full, false);
    let (v, a) = (random(&[7, 5], 35), random(&[7, 4], 36));
    let perm = [4, 6, 0, 2, 1, 5, 3];
    let base = model.predict(&p, &v, &a).unwrap();
    let moved = model
        .predict(
            &p,
            &v.select_rows(&perm).unwrap(),
            &a.select_rows(&perm).unwrap(),
        )
        .unwrap();
    for (x, y) in [
        (&base.y_tilde, &moved.y_tilde),
        (&base.y_v, &moved.y_v),
        (&base.y_a, &moved.y_a),
        (&base.y_fused, &moved.y_fused),
    ] {
        for (k, &i) in perm.iter().enumerate() {
            assert!((x[i] - y[k]).abs() < 1e-9);
        }
    }
    assert!(close(
        &base.f_hat.select_rows(&perm).unwrap(),
        &moved.f_hat,
        1e-9
    ));
    for (g, h) in base.g_v.unwrap().iter().zip(moved.g_v.unwrap()) {
        assert!((g - h).abs() < 1e-9);
    }
}

#[test]
fn forward_is_deterministic_under_dropout_seed() {
    let (model, p) = toy_model(Variant::Full, false);
    let model = Model::new(ModelConfig {
        dropout: 0.5,
        ..model.config().clone()
    })
    .unwrap();
    let (v, a) = (random(&[6, 5], 37), random(&[6, 4], 38));
    let x = model.run(&p, &v, &a, Mode::Train, 9).unwrap();
    let y = model.run(&p, &v, &a, Mode::Train, 9).unwrap();
    let z = model.run(&p, &v, &a, Mode::Train, 10).unwrap();
    assert_eq!(
        x.y_fused.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        y.y_fused.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_ne!(x.y_fused, z.y_fused);
    // eval mode ignores the seed
    assert_eq!(
        model.run(&p, &v, &a, Mode::Eval, 1).unwrap(),
        model.run(&p, &v, &a, Mode::Eval, 2).unwrap()
    );
}

#[test]
fn visual_only_never_reads_audio() {
    let (model, p) = toy_model(Variant::VisualOnly, false);
    let v = random(&[6, 5], 39);
    let nan_audio = Tensor::full(&[6, 4], f64::NAN);
    let out = model.predict(&p, &v, &nan_audio).unwrap();
    assert!(out.y_fused.iter().all(|x| x.is_finite()));
    assert!(out.f_hat.all_finite());
    assert_eq!(out.y_a, vec![0.0; 6]);
    assert_eq!(out.y_fused, out.y_v);
}

#[test]
fn variants_have_expected_heads() {
    let (v, a) = (random(&[6, 5], 40), random(&[6, 4], 41));
    for (variant, width) in [
        (Variant::AudioOnly, 16),
        (Variant::ConcatAv, 16),
        (Variant::Full, 32),
    ] {
        let (model, p) = toy_model(variant, false);
        let out = model.predict(&p, &v, &a).unwrap();
        assert_eq!(out.f_hat.cols(), width, "{variant:?}");
        assert!(out.y_fused.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn input_errors() {
    let (model, p) = toy_model(Variant::Full, false);
    let empty = Tensor::new(&[0, 5], vec![]).unwrap();
    assert!(matches!(
        model.predict(&p, &empty, &Tensor::new(&[0, 4], vec![]).unwrap()),
        Err(Error::Data(_))
    ));
    let mut v = random(&[6, 5], 42);
    v.data_mut()[3] = f64::NAN;
    assert!(matches!(
        model.predict(&p, &v, &random(&[6, 4], 43)),
        Err(Error::Data(_))
    ));
    assert!(matches!(
        model.predict(&p, &random(&[6, 3], 44), &random(&[6, 4], 43)),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        model.predict(&p, &random(&[6, 5], 44), &random(&[5, 4], 43)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn config_validation() {
    let bad = |f: fn(&mut ModelConfig)| {
        let mut c = ModelConfig::toy(3, 3);
        f(&mut c);
        Model::new(c).is_err()
    };
    assert!(bad(|c| c.heads = 3));
    assert!(bad(|c| c.d = 0));
    assert!(bad(|c| c.fusion_weights = [0.5, 0.5, 0.5]));
    assert!(bad(|c| c.fusion_weights = [1.5, -0.5, 0.0]));
    assert!(bad(|c| c.dropout = 1.0));
    assert!(!bad(|_| {}));
}

#[test]
fn params_are_uniquely_named_and_checked() {
    let (model, p) = toy_model(Variant::Full, false);
    let names: std::collections::HashSet<&str> = model.param_names().collect();
    assert_eq!(names.len(), p.len());
    assert!(model.check_params(&p).is_ok());
    let mut wrong = p.clone();
    wrong["visual.proj.w"] = Tensor::zeros(&[2, 2]);
    assert!(model.check_params(&wrong).is_err());
    assert_eq!(model.init_params(3), model.init_params(3));
    assert_ne!(model.init_params(3), model.init_params(4));
}

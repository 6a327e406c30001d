use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::SeedStream;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeedStream::new(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.get(i, p) * b.get(p, j);
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}

/// Checks `build` against central differences, using a random linear
/// read-out so every output coordinate contributes to the scalar.
fn fd_check_op<F>(inputs: ParamMap, build: F, tol: f64) -> FdReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |params: &ParamMap, want_grad: bool| -> (f64, Option<ParamMap>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.values().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let w = random_tensor(tape.value(out).shape(), 99);
        let weighted = tape.mul_const(out, w).unwrap();
        let loss = tape.sum(weighted);
        let value = tape.value(loss).item();
        let grads = want_grad.then(|| {
            let g = tape.backward(loss).unwrap();
            params
                .keys()
                .zip(&vars)
                .map(|(k, v)| {
                    let t = g
                        .get(*v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
                    (k.clone(), t)
                })
                .collect()
        });
        (value, grads)
    };
    let (_, analytic) = eval(&inputs, true);
    let mut params = inputs.clone();
    // A 1e-6 floor at tol 1e-6 asks for 1e-12 absolute agreement, below the
    // rounding noise of a 1e-5 central difference.
    let cfg = FdConfig {
        tol,
        abs_floor: 1e-4,
        ..FdConfig::default()
    };
    finite_diff_check(
        |p| Ok(eval(p, false).0),
        &mut params,
        &analytic.unwrap(),
        &cfg,
    )
    .unwrap()
}

fn inputs(list: &[(&str, &[usize], u64)]) -> ParamMap {
    list.iter()
        .map(|(n, s, seed)| (n.to_string(), random_tensor(s, *seed)))
        .collect()
}

#[test]
fn matmul_matches_triple_loop() {
    let a = random_tensor(&[3, 4], 1);
    let b = random_tensor(&[4, 2], 2);
    let got = matmul(&a, &b).unwrap();
    let want = naive_matmul(&a, &b);
    for (x, y) in got.data().iter().zip(want.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn softmax_examples() {
    let m = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
    assert_eq!(softmax_rows(&m).data(), &[0.5, 0.5]);

    let m = Tensor::from_rows(&[vec![1000.0, 1000.0, 1000.0]]).unwrap();
    for v in softmax_rows(&m).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    // Oracle: exp(i) / (e + e^2 + e^3), evaluated directly.
    let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
    let want: Vec<f64> = (1..=3).map(|i| (i as f64).exp() / z).collect();
    let m = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let got = softmax_rows(&m);
    for ((g, w), frozen) in got
        .data()
        .iter()
        .zip(&want)
        .zip([0.09003, 0.24473, 0.66524])
    {
        assert!((g - w).abs() < 1e-14);
        assert!((g - frozen).abs() < 1e-5);
    }
}

#[test]
fn layer_norm_examples() {
    let ones = Tensor::vector(vec![1.0; 3]);
    let zeros = Tensor::vector(vec![0.0; 3]);
    let c = Tensor::from_rows(&[vec![2.5, 2.5, 2.5]]).unwrap();
    let out = layer_norm(&c, &ones, &zeros, LAYER_NORM_EPS).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));

    let ones = Tensor::vector(vec![1.0; 2]);
    let zeros = Tensor::vector(vec![0.0; 2]);
    let m = Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap();
    let out = layer_norm(&m, &ones, &zeros, 1e-15).unwrap();
    assert!((out.data()[0] + 1.0).abs() < 1e-12);
    assert!((out.data()[1] - 1.0).abs() < 1e-12);
}

#[test]
fn layer_norm_matches_two_pass_oracle() {
    let m = random_tensor(&[4, 7], 5);
    let gamma = random_tensor(&[7], 6);
    let beta = random_tensor(&[7], 7);
    let out = layer_norm(&m, &gamma, &beta, LAYER_NORM_EPS).unwrap();
    for r in 0..4 {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / 7.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 7.0;
        for (j, x) in row.iter().enumerate() {
            let want =
                (x - mean) / (var + LAYER_NORM_EPS).sqrt() * gamma.data()[j] + beta.data()[j];
            assert!((out.get(r, j) - want).abs() < 1e-10);
        }
    }
}

#[test]
fn l2_normalize_examples() {
    let m = Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
    let out = l2_normalize_rows(&m);
    assert!((out.get(0, 0) - 0.6).abs() < 1e-15);
    assert!((out.get(0, 1) - 0.8).abs() < 1e-15);
    assert_eq!(out.row(1), &[0.0, 0.0]);

    let out = l2_normalize_rows(&random_tensor(&[5, 9], 3));
    for r in 0..5 {
        let n: f64 = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dropout_modes_and_keep_rate() {
    let m = random_tensor(&[10, 10], 4);
    assert_eq!(seeded_dropout(&m, 0.0, 1, true).unwrap(), m);
    assert_eq!(seeded_dropout(&m, 0.9, 1, false).unwrap(), m);
    assert!(seeded_dropout(&m, 1.0, 1, true).is_err());

    let ones = Tensor::full(&[100_000], 1.0);
    let out = seeded_dropout(&ones, 0.5, 17, true).unwrap();
    let kept = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    assert!((kept - 0.5).abs() < 0.01, "keep rate {kept}");
    assert!(out.data().iter().all(|&v| v == 0.0 || v == 2.0));

    let again = seeded_dropout(&ones, 0.5, 17, true).unwrap();
    assert_eq!(
        out.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        again.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::zeros(&[2, 2]));
    let s = tape.sum(w);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[1.0; 4]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let y = tape.param(Tensor::scalar(3.0));
    let p = tape.mul(x, y).unwrap();
    let g = tape.backward(p).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 3.0);
    assert_eq!(g.get(y).unwrap().item(), 2.0);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(w), Err(crate::Error::Contract(_))));
}

#[test]
fn shared_leaf_accumulates_once() {
    // loss = sum(x * x) uses x twice; gradient must be 2x, not x.
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, -2.0, 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn fd_scalar_square() {
    let mut params: ParamMap = [("t".to_string(), Tensor::scalar(3.0))]
        .into_iter()
        .collect();
    let analytic: ParamMap = [("t".to_string(), Tensor::scalar(6.0))]
        .into_iter()
        .collect();
    let report = finite_diff_check(
        |p| Ok(p["t"].item().powi(2)),
        &mut params,
        &analytic,
        &FdConfig {
            tol: 1e-8,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(params["t"].item(), 3.0);
}

#[test]
fn fd_refinement_steps_off_a_kink_but_not_off_a_wrong_gradient() {
    // relu(t) probed 3e-6 right of its kink: a 1e-5 step straddles it
    let f = |p: &ParamMap| Ok(p["t"].item().max(0.0));
    let at = |g: f64, refinements| {
        let mut params: ParamMap = [("t".to_string(), Tensor::scalar(3e-6))]
            .into_iter()
            .collect();
        let analytic: ParamMap = [("t".to_string(), Tensor::scalar(g))].into_iter().collect();
        let cfg = FdConfig {
            tol: 1e-6,
            refinements,
            ..Default::default()
        };
        finite_diff_check(f, &mut params, &analytic, &cfg).unwrap()
    };
    let plain = at(1.0, 0);
    assert!(!plain.passed);
    assert!((plain.entries[0].numeric - 0.65).abs() < 1e-9);
    assert!(at(1.0, 2).passed);
    assert!(!at(1.1, 4).passed);
}

#[test]
fn fd_detects_nondeterminism() {
    let mut params: ParamMap = [("t".to_string(), Tensor::scalar(1.0))]
        .into_iter()
        .collect();
    let analytic = params.clone();
    let mut calls = 0.0;
    let err = finite_diff_check(
        |p| {
            calls += 1.0;
            Ok(p["t"].item() + calls)
        },
        &mut params,
        &analytic,
        &FdConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
}

#[test]
fn fd_softmax_cross_entropy_composite() {
    // Cross-entropy of row softmax against fixed one-hot targets.
    let report = fd_check_op(
        inputs(&[("logits", &[4, 5], 11)]),
        |t, v| {
            let p = t.softmax_rows(v[0]);
            let probs = t.value(p).clone();
            let mut onehot = Tensor::zeros(&[4, 5]);
            for r in 0..4 {
                onehot.data_mut()[r * 5 + (r * 2) % 5] = 1.0;
            }
            // -log p_target per row; gradient w.r.t. p is -onehot / p.
            let value: f64 = (0..4).map(|r| -probs.get(r, (r * 2) % 5).ln()).sum();
            let grad = onehot.mul(&probs.map(|v| -1.0 / v)).unwrap();
            t.fused_scalar(p, value, grad).unwrap()
        },
        1e-6,
    );
    assert!(report.passed, "{report:?}");
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

#[test]
fn fd_every_primitive() {
    let cases: Vec<(&str, ParamMap, Build)> = vec![
        (
            "matmul",
            inputs(&[("a", &[3, 4], 1), ("b", &[4, 2], 2)]),
            Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "matmul_nt",
            inputs(&[("a", &[3, 4], 1), ("b", &[5, 4], 2)]),
            Box::new(|t, v| t.matmul_nt(v[0], v[1]).unwrap()),
        ),
        (
            "transpose",
            inputs(&[("a", &[3, 4], 3)]),
            Box::new(|t, v| t.transpose(v[0])),
        ),
        (
            "add",
            inputs(&[("a", &[3, 4], 1), ("b", &[3, 4], 2)]),
            Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "add_row",
            inputs(&[("a", &[3, 4], 1), ("r", &[4], 2)]),
            Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            inputs(&[("a", &[3, 4], 1), ("b", &[3, 4], 2)]),
            Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
        ),
        (
            "scale",
            inputs(&[("a", &[2, 3], 4)]),
            Box::new(|t, v| t.scale(v[0], -1.7)),
        ),
        (
            "relu",
            inputs(&[("a", &[4, 4], 5)]),
            Box::new(|t, v| t.relu(v[0])),
        ),
        (
            "softmax",
            inputs(&[("a", &[3, 6], 6)]),
            Box::new(|t, v| t.softmax_rows(v[0])),
        ),
        (
            "layer_norm",
            inputs(&[("x", &[3, 5], 7), ("g", &[5], 8), ("b", &[5], 9)]),
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap()),
        ),
        (
            "l2_normalize",
            inputs(&[("a", &[4, 3], 10)]),
            Box::new(|t, v| t.l2_normalize_rows(v[0])),
        ),
        (
            "slice_cols",
            inputs(&[("a", &[3, 6], 11)]),
            Box::new(|t, v| t.slice_cols(v[0], 2, 3).unwrap()),
        ),
        (
            "concat_cols",
            inputs(&[("a", &[3, 2], 12), ("b", &[3, 4], 13)]),
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]]).unwrap()),
        ),
        (
            "concat_rows",
            inputs(&[("a", &[2, 3], 12), ("b", &[4, 3], 13)]),
            Box::new(|t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
        ),
        (
            "dropout",
            inputs(&[("a", &[5, 5], 14)]),
            Box::new(|t, v| t.dropout(v[0], 0.3, 8, true).unwrap()),
        ),
    ];
    for (name, params, build) in cases {
        let report = fd_check_op(params, build, 1e-6);
        assert!(report.passed, "{name}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
        let a = random_tensor(&[m, k], seed);
        let b = random_tensor(&[k, n], seed ^ 1);
        let c = random_tensor(&[n, p], seed ^ 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let m = random_tensor(&[3, 5], seed);
        let a = softmax_rows(&m);
        let b = softmax_rows(&m.map(|v| v + shift));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for r in 0..3 {
            prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn primitives_pass_fd_on_random_inputs(seed in 0u64..1000) {
        let report = fd_check_op(
            inputs(&[("x", &[3, 4], seed), ("w", &[4, 4], seed + 1), ("g", &[4], seed + 2), ("b", &[4], seed + 3)]),
            |t, v| {
                let h = t.matmul(v[0], v[1]).unwrap();
                let h = t.layer_norm(h, v[2], v[3], LAYER_NORM_EPS).unwrap();
                let s = t.softmax_rows(h);
                t.l2_normalize_rows(s)
            },
            1e-6,
        );
        prop_assert!(report.passed, "{:?}", report);
    }
}

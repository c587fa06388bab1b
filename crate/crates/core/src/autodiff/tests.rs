use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in [lo, hi] whose distance to each kink in `kinks` is at least 1e-3.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64]) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > 1e-3) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn square_and_relu_forward() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![3.0]).unwrap());
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.value(y).data(), &[9.0]);
    let r = tape.constant(Tensor::vector(vec![-1.0, 2.0]).unwrap());
    let r = tape.relu(r).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
}

#[test]
fn derivative_of_square() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let g = backprop(&tape, y).unwrap();
    assert_eq!(g.wrt(x).data(), &[6.0]);
}

#[test]
fn clamp_subgradient_convention() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![0.4, 1.7, -0.3, 0.0, 1.0]).unwrap());
    let c = tape.clamp01(x).unwrap();
    let w = tape.constant(Tensor::vector(vec![2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let y = tape.mul(c, w).unwrap();
    let ones = tape.constant(Tensor::full(&[5], 0.0));
    // mse against zero: d/dy = 2y/5, so dL/dx = 2·y·w/5 on the interior only
    let loss = tape.mse(y, ones).unwrap();
    let g = backprop(&tape, loss).unwrap().wrt(x);
    assert!((g.data()[0] - 2.0 * 0.8 * 2.0 / 5.0f64).abs() < 1e-15);
    assert_eq!(&g.data()[1..], &[0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![0.0, 1.0]).unwrap());
    let r = tape.relu(x).unwrap();
    let t = tape.constant(Tensor::vector(vec![-1.0, 0.0]).unwrap());
    let loss = tape.mse(r, t).unwrap();
    let g = backprop(&tape, loss).unwrap().wrt(x);
    assert_eq!(g.data()[0], 0.0);
    assert_eq!(g.data()[1], 1.0);
}

#[test]
fn mse_of_linear_map_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10 {
        let w = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
        let x = rand_tensor(&mut rng, &[4, 1], -1.0, 1.0);
        let y = rand_tensor(&mut rng, &[4, 1], -1.0, 1.0);
        let report = grad_check(
            |tape, p| {
                let xv = tape.constant(x.clone());
                let yv = tape.constant(y.clone());
                let wx = tape.matmul(p[0], xv)?;
                tape.mse(wx, yv)
            },
            &[w],
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 16);
    }
}

#[test]
fn linear_layer_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[5, 3], -1.0, 1.0);
    let t = rand_tensor(&mut rng, &[5, 2], -1.0, 1.0);
    let params = [rand_tensor(&mut rng, &[3, 2], -1.0, 1.0), rand_tensor(&mut rng, &[2], -1.0, 1.0)];
    let report = grad_check(
        |tape, p| {
            let xv = tape.constant(x.clone());
            let tv = tape.constant(t.clone());
            let h = tape.matmul(xv, p[0])?;
            let h = tape.add(h, p[1])?;
            tape.mse(h, tv)
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

/// Reduces any tensor to a scalar through a fixed random projection so every
/// output coordinate influences the loss.
fn project(tape: &mut Tape<f64>, v: Var, rng_seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = tape.value(v).shape().to_vec();
    let target = rand_tensor(&mut rng, &shape, -1.0, 1.0);
    let t = tape.constant(target);
    tape.mse(v, t)
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>>);
    for round in 0..5 {
        let cases: Vec<Case> = vec![
            (
                "matmul batched x shared",
                vec![rand_tensor(&mut rng, &[3, 4, 5], -1.0, 1.0), rand_tensor(&mut rng, &[5, 2], -1.0, 1.0)],
                Box::new(|t, p| t.matmul(p[0], p[1])),
            ),
            (
                "matmul batched x batched",
                vec![rand_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0), rand_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0)],
                Box::new(|t, p| t.matmul(p[0], p[1])),
            ),
            (
                "add broadcast",
                vec![rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0), rand_tensor(&mut rng, &[4], -1.0, 1.0)],
                Box::new(|t, p| t.add(p[0], p[1])),
            ),
            (
                "mul",
                vec![rand_tensor(&mut rng, &[3, 4], -1.0, 1.0), rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)],
                Box::new(|t, p| t.mul(p[0], p[1])),
            ),
            (
                "mul broadcast",
                vec![rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0), rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)],
                Box::new(|t, p| t.mul(p[0], p[1])),
            ),
            ("scale", vec![rand_tensor(&mut rng, &[6], -1.0, 1.0)], Box::new(|t, p| t.scale(p[0], 0.37))),
            (
                "concat",
                vec![
                    rand_tensor(&mut rng, &[2, 3, 2], -1.0, 1.0),
                    rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0),
                    rand_tensor(&mut rng, &[2, 3, 1], -1.0, 1.0),
                ],
                Box::new(|t, p| t.concat(p)),
            ),
            ("relu", vec![away_from(&mut rng, &[4, 5], -1.0, 1.0, &[0.0])], Box::new(|t, p| t.relu(p[0]))),
            ("sigmoid", vec![rand_tensor(&mut rng, &[4, 5], -4.0, 4.0)], Box::new(|t, p| t.sigmoid(p[0]))),
            (
                "clamp01",
                vec![away_from(&mut rng, &[4, 5], -0.5, 1.5, &[0.0, 1.0])],
                Box::new(|t, p| t.clamp01(p[0])),
            ),
            ("mean_nodes", vec![rand_tensor(&mut rng, &[3, 4, 2], -1.0, 1.0)], Box::new(|t, p| t.mean_nodes(p[0], None))),
            (
                "mean_nodes masked",
                vec![rand_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0)],
                Box::new(|t, p| {
                    let mask = Tensor::new(vec![2, 4], vec![1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
                    t.mean_nodes(p[0], Some(&mask))
                }),
            ),
            (
                "mse",
                vec![rand_tensor(&mut rng, &[5], -1.0, 1.0), rand_tensor(&mut rng, &[5], -1.0, 1.0)],
                Box::new(|t, p| t.mse(p[0], p[1])),
            ),
            ("transpose", vec![rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0)], Box::new(|t, p| t.transpose(p[0]))),
            ("row_normalize", vec![rand_tensor(&mut rng, &[2, 4, 4], 0.0, 1.0)], Box::new(|t, p| t.row_normalize(p[0]))),
            ("slice_rows", vec![rand_tensor(&mut rng, &[6, 3], -1.0, 1.0)], Box::new(|t, p| t.slice_rows(p[0], 2, 5))),
            (
                "matmul constant x param",
                vec![rand_tensor(&mut rng, &[4, 3], -1.0, 1.0)],
                Box::new(|t, p| {
                    let c = t.constant(Tensor::new(vec![2, 2, 4], (0..16).map(|i| i as f64 * 0.1 - 0.7).collect()).unwrap());
                    t.matmul(c, p[0])
                }),
            ),
        ];
        for (name, params, f) in cases {
            let report = grad_check(
                |tape, p| {
                    let out = f(tape, p)?;
                    if tape.value(out).len() == 1 {
                        Ok(out)
                    } else {
                        project(tape, out, round)
                    }
                },
                &params,
                1e-6,
            )
            .unwrap();
            assert!(report.passed(), "{name}: {:?}", report.worst);
        }
    }
}

fn naive_matmul(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[i * m + k] * b[k * p + j];
            }
            out[i * p + j] = s;
        }
    }
    out
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let w = tape.param(Tensor::vector(vec![0.5, -1.0]).unwrap());
    let y = tape.mul(c, w).unwrap();
    let z = tape.constant(Tensor::zeros(&[2]));
    let loss = tape.mse(y, z).unwrap();
    let g = backprop(&tape, loss).unwrap();
    assert_eq!(g.wrt(c), Tensor::zeros(&[2]));
    assert_eq!(g.wrt(w).data(), &[0.5, -4.0]);
}

#[test]
fn slice_rows_rejects_bad_ranges() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(Tensor::zeros(&[3, 2]));
    assert!(tape.slice_rows(a, 1, 1).is_err());
    assert!(tape.slice_rows(a, 0, 4).is_err());
    let b = tape.param(Tensor::zeros(&[2, 3, 2]));
    assert!(tape.slice_rows(b, 0, 1).is_err());
    let s = tape.slice_rows(a, 1, 3).unwrap();
    assert_eq!(tape.value(s).shape(), &[2, 2]);
}

#[test]
fn three_layer_forward_matches_straight_line_code() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let (n, d, h) = (6, 4, 5);
        let x = rand_tensor(&mut rng, &[n, d], -1.0, 1.0);
        let w1 = rand_tensor(&mut rng, &[d, h], -1.0, 1.0);
        let b1 = rand_tensor(&mut rng, &[h], -1.0, 1.0);
        let w2 = rand_tensor(&mut rng, &[h, h], -1.0, 1.0);
        let w3 = rand_tensor(&mut rng, &[h, 1], -1.0, 1.0);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let [w1v, b1v, w2v, w3v] = [&w1, &b1, &w2, &w3].map(|p| tape.param(p.clone()));
        let l1 = tape.matmul(xv, w1v).unwrap();
        let l1 = tape.add(l1, b1v).unwrap();
        let l1 = tape.relu(l1).unwrap();
        let l2 = tape.matmul(l1, w2v).unwrap();
        let l2 = tape.sigmoid(l2).unwrap();
        let l3 = tape.matmul(l2, w3v).unwrap();
        let out = tape.mean_nodes(l3, None).unwrap();
        assert_eq!(
            tape.op_names(),
            ["constant", "param", "param", "param", "param", "matmul", "add", "relu", "matmul", "sigmoid", "matmul", "mean_nodes"]
        );

        let mut s1 = naive_matmul(x.data(), w1.data(), n, d, h);
        for (i, v) in s1.iter_mut().enumerate() {
            *v = (*v + b1.data()[i % h]).max(0.0);
        }
        let s2: Vec<f64> = naive_matmul(&s1, w2.data(), n, h, h).into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let s3 = naive_matmul(&s2, w3.data(), n, h, 1);
        let expected = s3.iter().sum::<f64>() / n as f64;
        assert!((tape.value(out).data()[0] - expected).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic_and_backprop_replays() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, &[3, 4, 4], 0.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let build = || {
        let mut tape = Tape::new();
        let av = tape.param(a.clone());
        let wv = tape.param(w.clone());
        let n = tape.row_normalize(av).unwrap();
        let h = tape.matmul(n, wv).unwrap();
        let h = tape.relu(h).unwrap();
        let h = tape.mean_nodes(h, None).unwrap();
        let z = tape.constant(Tensor::zeros(&[3, 3]));
        let loss = tape.mse(h, z).unwrap();
        (tape, loss)
    };
    let (t1, l1) = build();
    let (t2, l2) = build();
    assert_eq!(t1.value(l1).data()[0].to_bits(), t2.value(l2).data()[0].to_bits());
    let g1 = backprop(&t1, l1).unwrap().params();
    let g2 = backprop(&t1, l1).unwrap().params();
    assert_eq!(g1, g2);
}

#[test]
fn untouched_params_get_zero_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let unused = tape.param(Tensor::full(&[2, 2], 1.0));
    let y = tape.mul(x, x).unwrap();
    let g = backprop(&tape, y).unwrap();
    assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    assert_eq!(g.params().len(), 2);
}

#[test]
fn error_paths() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::zeros(&[2, 3]));
    let b = tape.param(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(AutodiffError::ShapeMismatch { .. })));
    let v = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.add(v, a), Err(AutodiffError::ShapeMismatch { .. })));
    assert!(matches!(backprop(&tape, a), Err(AutodiffError::NotScalar { .. })));
    let big = tape.constant(Tensor::scalar(1e300));
    assert!(matches!(tape.mul(big, big), Err(AutodiffError::NonFinite { .. })));
}

#[test]
fn parents_precede_children() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[2, 2], 0.5));
    let t = tape.transpose(x).unwrap();
    let y = tape.matmul(x, t).unwrap();
    let s = tape.sigmoid(y).unwrap();
    for v in [t, y, s] {
        assert!(tape.parents(v).iter().all(|&p| p < v.index()));
    }
}

#[test]
fn corrupted_gradient_is_located() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let x = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let build = |ps: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let wv = tape.param(ps[0].clone());
        let xv = tape.constant(x.clone());
        let h = tape.matmul(wv, xv).unwrap();
        let z = tape.constant(Tensor::zeros(&[3, 2]));
        let loss = tape.mse(h, z).unwrap();
        (tape, loss)
    };
    let (tape, loss) = build(std::slice::from_ref(&w));
    let mut grads = backprop(&tape, loss).unwrap().params();
    grads[0].data_mut()[4] += 0.25;
    let report = compare_gradients(
        &grads,
        |ps| {
            let (t, l) = build(ps);
            Ok(t.value(l).data()[0])
        },
        std::slice::from_ref(&w),
        1e-6,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(!report.passed());
    assert_eq!(report.failures.len(), 1);
    assert_eq!((report.failures[0].param, report.failures[0].coord), (0, 4));
}

#[test]
fn f32_forward_runs() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::vector(vec![1.0f32, -2.0]).unwrap());
    let y = tape.sigmoid(x).unwrap();
    assert!((tape.value(y).data()[0] - 0.731_058_6).abs() < 1e-6);
}

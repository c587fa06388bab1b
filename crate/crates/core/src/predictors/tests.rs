use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{compare_gradients, Tensor, DEFAULT_STEP};
use crate::bench_io::{gen_synthetic, SynthSpec};
use crate::cell::{CellGraph, OpVocabulary};

fn vocab() -> OpVocabulary {
    OpVocabulary::new(["input", "output", "conv3x3", "conv1x1", "maxpool"]).unwrap()
}

/// Random valid cell with 2..=max_nodes nodes; every intermediate node has an
/// in-edge and an out-edge.
fn random_cell(rng: &mut impl Rng, vocab: &OpVocabulary, max_nodes: usize) -> CellGraph {
    let n = rng.random_range(2..=max_nodes);
    let mut adj = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            adj[i][j] = rng.random_bool(0.4) as u8;
        }
    }
    for j in 1..n - 1 {
        if (0..j).all(|i| adj[i][j] == 0) {
            adj[rng.random_range(0..j)][j] = 1;
        }
        if (j + 1..n).all(|k| adj[j][k] == 0) {
            adj[j][rng.random_range(j + 1..n)] = 1;
        }
    }
    if n == 2 {
        adj[0][1] = 1;
    }
    let mut ops = vec!["input".to_string()];
    for _ in 1..n - 1 {
        ops.push(vocab.names()[rng.random_range(2..vocab.len())].clone());
    }
    ops.push("output".into());
    CellGraph::from_names(&adj, &ops, vocab).unwrap()
}

fn random_cells(seed: u64, count: usize, max_nodes: usize) -> Vec<CellGraph> {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_cell(&mut rng, &v, max_nodes)).collect()
}

fn config(kind: PredictorKind) -> PredictorConfig {
    PredictorConfig::new(kind, vocab().len(), 8)
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn adjacency_tensor(cell: &CellGraph) -> Tensor<f64> {
    let m = cell.num_nodes();
    Tensor::new(vec![m, m], cell.adjacency_as()).unwrap()
}

#[test]
fn rats_module_gcn_extreme_returns_adjacency() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cell in random_cells(2, 50, 8) {
        let m = cell.num_nodes();
        let mut p = RatsParams::<f64>::init(&mut rng, 6, 4, m);
        p.set_gcn_extreme();
        let x = random_tensor(&mut rng, &[m, 6], 2.0);
        let a = adjacency_tensor(&cell);
        let out = rats_module(&x, &a, &p).unwrap();
        assert!(out.max_abs_diff(&a).unwrap() < 1e-6);
    }
}

#[test]
fn rats_module_mlp_extreme_removes_trails() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for cell in random_cells(4, 50, 8) {
        let m = cell.num_nodes();
        let mut p = RatsParams::<f64>::init(&mut rng, 6, 4, m);
        p.set_mlp_extreme();
        let x = random_tensor(&mut rng, &[m, 6], 2.0);
        let out = rats_module(&x, &adjacency_tensor(&cell), &p).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-6));
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Literal evaluation: materialize E = [Q | K | V | A] and project it.
fn literal_rats(x: &Tensor<f64>, a: &Tensor<f64>, p: &RatsParams<f64>) -> Vec<f64> {
    let (m, f) = (x.shape()[0], x.shape()[1]);
    let h = p.w_q.shape()[1];
    let proj = |w: &Tensor<f64>, i: usize, c: usize| (0..f).map(|k| x.data()[i * f + k] * w.data()[k * h + c]).sum::<f64>();
    let width = 3 * h + m;
    let mut e = vec![0.0; m * width];
    for i in 0..m {
        for c in 0..h {
            e[i * width + c] = proj(&p.w_q, i, c);
            e[i * width + h + c] = proj(&p.w_k, i, c);
            e[i * width + 2 * h + c] = proj(&p.w_v, i, c);
        }
        for j in 0..m {
            e[i * width + 3 * h + j] = a.data()[i * m + j];
        }
    }
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let dot = |w: &Tensor<f64>| (0..width).map(|k| e[i * width + k] * w.data()[k * m + j]).sum::<f64>();
            let off = sigmoid(dot(&p.w_off) + p.b_off.data()[j]);
            let st = sigmoid(dot(&p.w_str) + p.b_str.data()[j]);
            out[i * m + j] = ((a.data()[i * m + j] + off) * st).clamp(0.0, 1.0);
        }
    }
    out
}

#[test]
fn rats_module_matches_literal_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for cell in random_cells(20, 200, 8) {
        let m = cell.num_nodes();
        let (f, h) = (rng.random_range(1..7), rng.random_range(1..6));
        let mut p = RatsParams::<f64>::init(&mut rng, f, h, m);
        p.b_off = random_tensor(&mut rng, &[m], 1.0);
        p.b_str = random_tensor(&mut rng, &[m], 1.0);
        let x = random_tensor(&mut rng, &[m, f], 2.0);
        let a = adjacency_tensor(&cell);
        let got = rats_module(&x, &a, &p).unwrap();
        for (g, e) in got.data().iter().zip(literal_rats(&x, &a, &p)) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }
}

#[test]
fn rats_module_output_stays_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cells = random_cells(6, 100, 8);
    for draw in 0..10_000 {
        let cell = &cells[draw % cells.len()];
        let m = cell.num_nodes();
        let (f, h) = (rng.random_range(1..6), rng.random_range(1..5));
        let scale = [0.1, 1.0, 10.0, 100.0][draw % 4];
        let p = RatsParams {
            w_q: random_tensor(&mut rng, &[f, h], scale),
            w_k: random_tensor(&mut rng, &[f, h], scale),
            w_v: random_tensor(&mut rng, &[f, h], scale),
            w_off: random_tensor(&mut rng, &[3 * h + m, m], scale),
            b_off: random_tensor(&mut rng, &[m], scale),
            w_str: random_tensor(&mut rng, &[3 * h + m, m], scale),
            b_str: random_tensor(&mut rng, &[m], scale),
        };
        let x = random_tensor(&mut rng, &[m, f], scale);
        let out = rats_module(&x, &adjacency_tensor(cell), &p).unwrap();
        assert_eq!(out.shape(), &[m, m]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)), "draw {draw}");
    }
}

#[test]
fn rats_module_rejects_bad_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = RatsParams::<f64>::init(&mut rng, 6, 4, 5);
    let x = random_tensor(&mut rng, &[5, 3], 1.0);
    let a = Tensor::zeros(&[5, 5]);
    assert!(matches!(rats_module(&x, &a, &p), Err(PredictorError::Autodiff(_))));
}

/// Copies the shared weights of `src` into a fresh params set of `kind`.
fn transplant(src: &PredictorParams<f64>, kind: PredictorKind, seed: u64) -> PredictorParams<f64> {
    let mut cfg = src.config;
    cfg.kind = kind;
    let mut out = PredictorParams::init(&cfg, seed).unwrap();
    for (dst, s) in out.layers.iter_mut().zip(&src.layers) {
        dst.w = s.w.clone();
    }
    out.readout_w = src.readout_w.clone();
    out.readout_b = src.readout_b.clone();
    out
}

#[test]
fn rats_gcn_degenerates_to_gcn_and_mlp() {
    let cells = random_cells(8, 100, 8);
    let refs: Vec<&CellGraph> = cells.iter().collect();
    for seed in 0..3 {
        let mut rats = PredictorParams::<f64>::init(&config(PredictorKind::RatsGcn), seed).unwrap();
        rats.readout_b = Tensor::vector(vec![0.3]).unwrap();

        let gcn = transplant(&rats, PredictorKind::Gcn, 99);
        let mut as_gcn = rats.clone();
        as_gcn.layers.iter_mut().for_each(|l| l.rats.as_mut().unwrap().set_gcn_extreme());
        let a = forward_batch(&as_gcn, &refs).unwrap();
        let b = forward_batch(&gcn, &refs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "gcn extreme {x} vs {y}");
        }

        let mlp = transplant(&rats, PredictorKind::Mlp, 98);
        let mut as_mlp = rats.clone();
        as_mlp.layers.iter_mut().for_each(|l| l.rats.as_mut().unwrap().set_mlp_extreme());
        let a = forward_batch(&as_mlp, &refs).unwrap();
        let b = forward_batch(&mlp, &refs).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6, "mlp extreme {x} vs {y}");
        }
    }
}

#[test]
fn gcn_forward_matches_dense_oracle() {
    let cfg = config(PredictorKind::Gcn).with_size(2, 5);
    let params = PredictorParams::<f64>::init(&cfg, 17).unwrap();
    for cell in random_cells(9, 20, 8) {
        let m = cell.num_nodes();
        // unpadded reference: H <- relu(D^-1 (A + I) H W)
        let mut h: Vec<Vec<f64>> = cell
            .op_indices()
            .iter()
            .map(|&op| (0..cfg.input_dim()).map(|c| (c == op) as u8 as f64).collect())
            .collect();
        for layer in &params.layers {
            let w = layer.w.data();
            let cols = layer.w.shape()[1];
            let hw: Vec<Vec<f64>> = h
                .iter()
                .map(|row| (0..cols).map(|c| row.iter().enumerate().map(|(r, v)| v * w[r * cols + c]).sum()).collect())
                .collect();
            h = (0..m)
                .map(|i| {
                    let nbrs: Vec<usize> = (0..m).filter(|&j| j == i || cell.has_edge(i, j)).collect();
                    (0..cols)
                        .map(|c| (nbrs.iter().map(|&j| hw[j][c]).sum::<f64>() / nbrs.len() as f64).max(0.0))
                        .collect()
                })
                .collect();
        }
        let pooled: Vec<f64> = (0..cfg.hidden).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / m as f64).collect();
        let expected: f64 =
            pooled.iter().zip(params.readout_w.data()).map(|(a, b)| a * b).sum::<f64>() + params.readout_b.data()[0];
        let got = forward(&params, &cell).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cells = random_cells(10, 20, 8);
    let refs: Vec<&CellGraph> = cells.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let targets: Vec<f64> = (0..cells.len()).map(|_| rng.random_range(0.0..1.0)).collect();
    for kind in PredictorKind::ALL {
        let cfg = config(kind).with_size(2, 6);
        let params = PredictorParams::<f64>::init(&cfg, 21).unwrap();
        let batch = CellBatch::new(&cfg, &refs).unwrap();
        let t = Tensor::new(vec![cells.len(), 1], targets.clone()).unwrap();
        let (_, grads) = pool_loss(&params, &batch, &t, true).unwrap();
        let tensors: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
        let report = compare_gradients(
            &grads.unwrap(),
            |ps| {
                let p = params.with_tensors(ps).unwrap();
                Ok(pool_loss(&p, &batch, &t, false).unwrap().0)
            },
            &tensors,
            1e-4,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.passed(), "{kind}: {:?}", report.worst);
        assert_eq!(report.checked, params.num_scalars());
    }
}

#[test]
fn every_kind_memorizes_five_cells() {
    // MLP only sees the multiset of operations, so the cells must differ there
    let mut seen = std::collections::HashSet::new();
    let cells: Vec<CellGraph> = random_cells(12, 200, 7)
        .into_iter()
        .filter(|c| {
            let mut ops = c.op_indices().to_vec();
            ops.sort_unstable();
            seen.insert(ops)
        })
        .take(5)
        .collect();
    let pool: Vec<(&CellGraph, f64)> = cells.iter().zip([0.91, 0.85, 0.72, 0.94, 0.60]).collect();
    for kind in PredictorKind::ALL {
        let train = TrainConfig { epochs: 2000, ..TrainConfig::default() };
        let (params, log) = train_predictor::<f64>(&config(kind), &pool, &train).unwrap();
        assert!(log.final_loss < 1e-4, "{kind}: {}", log.final_loss);
        assert!(log.final_loss < log.losses[0]);
        let preds = forward_batch(&params, &cells.iter().collect::<Vec<_>>()).unwrap();
        let mse = preds.iter().zip(&pool).map(|(p, (_, a))| (p - a).powi(2)).sum::<f64>() / 5.0;
        assert!((mse - log.final_loss).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic() {
    let cells = random_cells(13, 12, 8);
    let pool: Vec<(&CellGraph, f64)> = cells.iter().enumerate().map(|(i, c)| (c, 0.5 + 0.03 * i as f64)).collect();
    let train = TrainConfig { epochs: 50, seed: 4, ..TrainConfig::default() };
    let cfg = config(PredictorKind::RatsGcn);
    let (a, la) = train_predictor::<f64>(&cfg, &pool, &train).unwrap();
    let (b, lb) = train_predictor::<f64>(&cfg, &pool, &train).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = train_predictor::<f64>(&cfg, &pool, &TrainConfig { seed: 5, ..train }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn training_errors() {
    let cfg = config(PredictorKind::Gcn);
    let train = TrainConfig::default();
    assert_eq!(train_predictor::<f64>(&cfg, &[], &train).unwrap_err(), PredictorError::EmptyPool);
    let cells = random_cells(14, 1, 8);
    assert_eq!(
        train_predictor::<f64>(&cfg, &[(&cells[0], 1.2)], &train).unwrap_err(),
        PredictorError::BadTarget(1.2)
    );
    let small = PredictorConfig::new(PredictorKind::Gcn, 5, 3);
    let big = random_cells(15, 30, 8).into_iter().find(|c| c.num_nodes() > 3).unwrap();
    assert!(matches!(
        train_predictor::<f64>(&small, &[(&big, 0.5)], &train),
        Err(PredictorError::CellShape(_))
    ));
    assert!(matches!(PredictorParams::<f64>::init(&cfg.with_size(0, 4), 0), Err(PredictorError::Config(_))));
}

#[test]
fn predict_all_is_order_equivariant_and_parallel_safe() {
    let (space, _) = gen_synthetic(&SynthSpec { n_cells: 700, ..SynthSpec::default() }).unwrap();
    let cfg = PredictorConfig::new(PredictorKind::RatsGcn, space.vocab().len(), space.max_nodes());
    let params = PredictorParams::<f64>::init(&cfg, 3).unwrap();
    let all = predict_all(&params, &space).unwrap();
    assert_eq!(all.len(), space.len());

    let serial: Vec<f64> = space.entries().iter().map(|e| forward(&params, &e.cell).unwrap()).collect();
    for (a, b) in all.iter().zip(&serial) {
        assert!((a - b).abs() < 1e-12);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(pool.install(|| predict_all(&params, &space).unwrap()), all);

    let mut perm: Vec<usize> = (0..space.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let cells: Vec<&CellGraph> = perm.iter().map(|&i| &space.entry(i).cell).collect();
    let permuted = predict_cells(&params, &cells).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(permuted[k], all[i]);
    }

    let single = predict_cells(&params, &cells[..1]).unwrap();
    assert_eq!(single, vec![forward(&params, cells[0]).unwrap()]);
}

#[test]
fn params_json_round_trip() {
    for kind in PredictorKind::ALL {
        let params = PredictorParams::<f64>::init(&config(kind), 8).unwrap();
        let json = params.to_json();
        assert_eq!(PredictorParams::<f64>::from_json(&json).unwrap(), params);
        assert_eq!(params.tensor_names().len(), params.tensors().len());
    }
    let params = PredictorParams::<f64>::init(&config(PredictorKind::BiGcn), 8).unwrap();
    let mut record = params.to_record();
    record.tensors[1].name = "layers.0.bogus".into();
    assert!(matches!(PredictorParams::<f64>::from_record(&record), Err(PredictorError::Format(_))));
    record = params.to_record();
    record.format_version = 9;
    assert!(matches!(PredictorParams::<f64>::from_record(&record), Err(PredictorError::Format(_))));
    assert!(PredictorParams::<f64>::from_json("{").is_err());
}

#[test]
fn parameter_names_follow_layout() {
    let params = PredictorParams::<f64>::init(&config(PredictorKind::RatsGcn).with_size(1, 4), 0).unwrap();
    assert_eq!(
        params.tensor_names(),
        [
            "layers.0.w",
            "layers.0.rats.w_q",
            "layers.0.rats.w_k",
            "layers.0.rats.w_v",
            "layers.0.rats.w_off",
            "layers.0.rats.b_off",
            "layers.0.rats.w_str",
            "layers.0.rats.b_str",
            "readout.w",
            "readout.b",
        ]
    );
    assert_eq!(params.layers[0].rats.as_ref().unwrap().w_off.shape(), &[3 * 4 + 8, 8]);
}

#[test]
fn trail_weights_per_kind() {
    let cells = random_cells(16, 30, 8);
    for cell in &cells {
        let m = cell.num_nodes();
        let gcn = PredictorParams::<f64>::init(&config(PredictorKind::Gcn), 1).unwrap();
        let trails = trail_weights(&gcn, cell).unwrap();
        assert_eq!(trails.len(), 3);
        assert!(trails.iter().all(|t| *t == adjacency_tensor(cell)));

        let mlp = PredictorParams::<f64>::init(&config(PredictorKind::Mlp), 1).unwrap();
        let full = &trail_weights(&mlp, cell).unwrap()[0];
        for i in 0..m {
            for j in 0..m {
                assert_eq!(full.data()[i * m + j], (i != j) as u8 as f64);
            }
        }

        let mut rats = PredictorParams::<f64>::init(&config(PredictorKind::RatsGcn), 1).unwrap();
        for t in trail_weights(&rats, cell).unwrap() {
            assert_eq!(t.shape(), &[m, m]);
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        rats.layers.iter_mut().for_each(|l| l.rats.as_mut().unwrap().set_gcn_extreme());
        for t in trail_weights(&rats, cell).unwrap() {
            assert!(t.max_abs_diff(&adjacency_tensor(cell)).unwrap() < 1e-6);
        }
    }
}

#[test]
fn kind_names_parse() {
    for kind in PredictorKind::ALL {
        assert_eq!(kind.as_str().parse::<PredictorKind>().unwrap(), kind);
    }
    assert_eq!("rats-gcn".parse::<PredictorKind>().unwrap(), PredictorKind::RatsGcn);
    assert_eq!("Bi-GCN".parse::<PredictorKind>().unwrap(), PredictorKind::BiGcn);
    assert!("cnn".parse::<PredictorKind>().is_err());
}

#[test]
fn f32_forward_tracks_f64() {
    let cells = random_cells(17, 10, 8);
    let refs: Vec<&CellGraph> = cells.iter().collect();
    let cfg = config(PredictorKind::RatsGcn);
    let p64 = PredictorParams::<f64>::init(&cfg, 2).unwrap();
    let p32 = PredictorParams::<f32>::from_record(&p64.to_record()).unwrap();
    let a = forward_batch(&p64, &refs).unwrap();
    let b = forward_batch(&p32, &refs).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
}

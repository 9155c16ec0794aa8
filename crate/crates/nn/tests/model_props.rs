mod common;

use common::{check_params, jitter, randn, record, rng};
use sourcenet_nn::graph::Graph;
use sourcenet_nn::model::{forward, init_params, predict, Batch, Mode, ModelConfig, Variant};

fn tiny_variants() -> Vec<ModelConfig> {
    let base = ModelConfig::tiny();
    let mut split = base.clone();
    split.siamese = false;
    let mut raw = base.clone();
    raw.input_norm = false;
    let mut noscalar = base.clone().with_variant(Variant::NoScalar);
    noscalar.tower_p = 4;
    noscalar.tower_s = 4;
    vec![base.clone(), split, raw, noscalar, base.with_variant(Variant::DeepSets)]
}

#[test]
fn tiny_model_gradients_all_variants() {
    let mut r = rng(1);
    let recs = [record(&mut r, 3, 16), record(&mut r, 2, 16)];
    let refs: Vec<_> = recs.iter().collect();
    let masks = vec![vec![true, false, true], vec![true, true]];
    for (i, mut cfg) in tiny_variants().into_iter().enumerate() {
        cfg.dropout = 0.2;
        let mut store = init_params(&cfg, i as u64).unwrap().cast::<f64>();
        jitter(&mut store, i as u64);
        let batch = Batch::<f64>::build(&refs, Some(&masks), Some(4)).unwrap();
        check_params(
            &store,
            |g| forward(g, &cfg, &batch, Mode::Train { seed: 5 }).unwrap().y,
            1e-5,
        );
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    let cfg = ModelConfig::tiny();
    let mut store = init_params(&cfg, 2).unwrap().cast::<f64>();
    jitter(&mut store, 2);
    let mut r = rng(2);
    let rec = record(&mut r, 3, 16);
    let batch = Batch::<f64>::from_records(&[&rec]).unwrap();
    let seed = randn(&mut rng(3), 6);
    let loss = |b: &Batch<f64>| {
        let (y, _) = predict(&store, &cfg, b).unwrap();
        y.iter().zip(&seed).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut g = Graph::new(&store);
    let f = forward(&mut g, &cfg, &batch, Mode::Eval).unwrap();
    let grads = g.backward(f.y, &seed).unwrap();
    let gin = grads.node(f.inputs[0].node).unwrap();
    let gsc = grads.node(f.scalars.unwrap()).unwrap();
    let (m, t) = (3, 16);
    let h = 1e-6;
    for &(c, s, k) in &[(0, 0, 3), (2, 1, 10), (4, 2, 7), (5, 0, 0)] {
        for (tower, offset) in [(0, 0), (1, m)] {
            let mut bp = batch.clone();
            let mut bm = batch.clone();
            let i = (c * m + s) * t + k;
            if tower == 0 {
                bp.p[i] += h;
                bm.p[i] -= h;
            } else {
                bp.s[i] += h;
                bm.s[i] -= h;
            }
            let num = (loss(&bp) - loss(&bm)) / (2.0 * h);
            let ana = gin.data[(c * 2 * m + offset + s) * t + k];
            assert!((num - ana).abs() <= 1e-5 * (1.0 + num.abs()), "{num} vs {ana}");
        }
    }
    for i in [0, 17, 45] {
        let mut bp = batch.clone();
        let mut bm = batch.clone();
        bp.scalars[i] += h;
        bm.scalars[i] -= h;
        let num = (loss(&bp) - loss(&bm)) / (2.0 * h);
        assert!((num - gsc.data[i]).abs() <= 1e-5 * (1.0 + num.abs()));
    }
}

#[test]
fn masked_station_receives_no_gradient() {
    for cfg in tiny_variants() {
        let store = init_params(&cfg, 4).unwrap().cast::<f64>();
        let mut r = rng(4);
        let recs = [record(&mut r, 3, 16), record(&mut r, 3, 16)];
        let refs: Vec<_> = recs.iter().collect();
        let masks = vec![vec![true, false, true], vec![true, true, true]];
        let batch = Batch::<f64>::build(&refs, Some(&masks), None).unwrap();
        let mut g = Graph::new(&store);
        let f = forward(&mut g, &cfg, &batch, Mode::Eval).unwrap();
        let grads = g.backward(f.y, &[1.0; 12]).unwrap();
        let m = batch.n_encoded();
        for tower in f.inputs {
            let gin = grads.node(tower.node).unwrap();
            let (samples, t) = (gin.shape[1], gin.shape[2]);
            for c in 0..6 {
                let row = &gin.data[(c * samples + tower.offset + 1) * t..][..t];
                assert!(row.iter().all(|v| *v == 0.0), "{:?}", cfg.variant);
                let live = &gin.data[(c * samples + tower.offset) * t..][..t];
                assert!(live.iter().any(|v| *v != 0.0));
            }
        }
        if let Some(s) = f.scalars {
            let gs = grads.node(s).unwrap();
            assert!(gs.data[20..40].iter().all(|v| *v == 0.0));
            assert_eq!(gs.data.len(), m * 20);
        }
    }
}

#[test]
fn zero_seed_gives_zero_gradients() {
    let cfg = ModelConfig::tiny();
    let store = init_params(&cfg, 5).unwrap().cast::<f64>();
    let rec = record(&mut rng(5), 3, 16);
    let batch = Batch::<f64>::from_records(&[&rec]).unwrap();
    let mut g = Graph::new(&store);
    let f = forward(&mut g, &cfg, &batch, Mode::Train { seed: 0 }).unwrap();
    let grads = g.backward(f.y, &[0.0; 6]).unwrap();
    assert!(grads.params.iter().all(|t| t.data.iter().all(|v| *v == 0.0)));
}

fn permuted(rec: &sourcenet_core::features::EventRecord, perm: &[usize]) -> sourcenet_core::features::EventRecord {
    let mut out = rec.clone();
    out.stations = perm.iter().map(|&i| rec.stations[i].clone()).collect();
    out
}

#[test]
fn permutation_invariance_and_weight_equivariance() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 6).unwrap();
    let mut r = rng(6);
    for n in [1, 4, 9] {
        let rec = record(&mut r, n, 120);
        let (y0, w0) = predict(&store, &cfg, &Batch::from_records(&[&rec]).unwrap()).unwrap();
        let w0 = w0.unwrap();
        assert!((w0.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        for k in 0..5u64 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(k as usize % n.max(1));
            perm.reverse();
            let (y, w) = predict(&store, &cfg, &Batch::from_records(&[&permuted(&rec, &perm)]).unwrap()).unwrap();
            for (a, b) in y.iter().zip(&y0) {
                assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
            }
            let w = w.unwrap();
            for (j, &src) in perm.iter().enumerate() {
                assert!((w[j] - w0[src]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn padded_batch_matches_single_events() {
    for cfg in [ModelConfig::desk(), ModelConfig::desk().with_variant(Variant::DeepSets)] {
        let store = init_params(&cfg, 7).unwrap();
        let mut r = rng(7);
        let recs: Vec<_> = [2, 7, 4, 1].iter().map(|&n| record(&mut r, n, 120)).collect();
        let refs: Vec<_> = recs.iter().collect();
        let (yb, _) = predict(&store, &cfg, &Batch::from_records(&refs).unwrap()).unwrap();
        for (e, rec) in recs.iter().enumerate() {
            let (y, _) = predict(&store, &cfg, &Batch::from_records(&[rec]).unwrap()).unwrap();
            for k in 0..6 {
                assert!((y[k] - yb[e * 6 + k]).abs() <= 1e-5 * (1.0 + y[k].abs()));
            }
        }
    }
}

#[test]
fn masking_equals_deleting() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 8).unwrap();
    let mut r = rng(8);
    let rec = record(&mut r, 6, 120);
    let mut kept = rec.clone();
    kept.stations.remove(2);
    let masks = vec![vec![true, true, false, true, true, true]];
    let (ym, wm) = predict(&store, &cfg, &Batch::build(&[&rec], Some(&masks), Some(9)).unwrap()).unwrap();
    let (yd, wd) = predict(&store, &cfg, &Batch::from_records(&[&kept]).unwrap()).unwrap();
    for (a, b) in ym.iter().zip(&yd) {
        assert!((a - b).abs() < 1e-6);
    }
    let (wm, wd) = (wm.unwrap(), wd.unwrap());
    assert_eq!(wm[2], 0.0);
    let live: Vec<f32> = wm
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != 2 && *j < 6)
        .map(|(_, v)| *v)
        .collect();
    for (a, b) in live.iter().zip(&wd) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(wm[6..].iter().all(|v| *v == 0.0));
}

#[test]
fn identical_stations_pool_uniformly() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 9).unwrap();
    let mut rec = record(&mut rng(9), 1, 120);
    rec.stations = vec![rec.stations[0].clone(); 5];
    let (_, w) = predict(&store, &cfg, &Batch::from_records(&[&rec]).unwrap()).unwrap();
    for a in w.unwrap() {
        assert!((a - 0.2).abs() < 1e-6);
    }
}

#[test]
fn single_station_attends_to_itself() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 10).unwrap();
    let rec = record(&mut rng(10), 1, 120);
    let batch = Batch::from_records(&[&rec]).unwrap();
    let mut g = Graph::new(&store);
    let f = forward(&mut g, &cfg, &batch, Mode::Eval).unwrap();
    for a in f.attn {
        assert!(g.attention_probs(a).unwrap().iter().all(|p| (*p - 1.0).abs() < 1e-7));
    }
}

#[test]
fn eval_is_deterministic_and_train_uses_dropout() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 11).unwrap();
    let rec = record(&mut rng(11), 5, 120);
    let batch = Batch::from_records(&[&rec]).unwrap();
    let (a, _) = predict(&store, &cfg, &batch).unwrap();
    let (b, _) = predict(&store, &cfg, &batch).unwrap();
    assert_eq!(a, b);
    let run = |seed| {
        let mut g = Graph::new(&store);
        let f = forward(&mut g, &cfg, &batch, Mode::Train { seed }).unwrap();
        g.value(f.y).data.clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert!(a[..5].iter().all(|v| v.abs() < 1.0));
}

#[test]
fn identical_stations_get_identical_embeddings() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 12).unwrap();
    let mut rec = record(&mut rng(12), 1, 120);
    rec.stations.push(rec.stations[0].clone());
    let batch = Batch::from_records(&[&rec]).unwrap();
    let mut g = Graph::new(&store);
    let f = forward(&mut g, &cfg, &batch, Mode::Eval).unwrap();
    let h = g.value(f.h);
    let d = h.shape[1];
    assert_eq!(h.data[..d], h.data[d..2 * d]);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn any_station_order_gives_the_same_output(
        perm in proptest::strategy::Strategy::prop_shuffle(proptest::strategy::Just((0..7usize).collect::<Vec<_>>())),
        seed in 0u64..1000,
    ) {
        let cfg = ModelConfig::tiny();
        let store = init_params(&cfg, seed).unwrap();
        let rec = record(&mut rng(seed), 7, 16);
        let (y0, w0) = predict(&store, &cfg, &Batch::from_records(&[&rec]).unwrap()).unwrap();
        let (y, w) = predict(&store, &cfg, &Batch::from_records(&[&permuted(&rec, &perm)]).unwrap()).unwrap();
        for (a, b) in y.iter().zip(&y0) {
            proptest::prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
        let (w, w0) = (w.unwrap(), w0.unwrap());
        for (j, &src) in perm.iter().enumerate() {
            proptest::prop_assert!((w[j] - w0[src]).abs() < 1e-6);
        }
    }
}

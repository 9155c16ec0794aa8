#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcenet_core::features::{EventRecord, StationFeatures, CHANNELS, N_SCALARS};
use sourcenet_core::Domain;
use sourcenet_nn::graph::{Graph, NodeId, ParamStore};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

pub fn station(r: &mut ChaCha8Rng, window: usize) -> StationFeatures {
    let mut win = || {
        (0..CHANNELS * window)
            .map(|_| r.random::<f32>() * 2.0 - 1.0)
            .collect::<Vec<_>>()
    };
    let p_win = win();
    let s_win = win();
    let mut scalars = [0f32; N_SCALARS];
    scalars.iter_mut().for_each(|v| *v = r.random::<f32>() * 2.0 - 1.0);
    StationFeatures {
        azimuth: r.random::<f32>() * 360.0,
        dist: 10.0 + r.random::<f32>() * 100.0,
        scalars,
        p_win,
        s_win,
    }
}

pub fn record(r: &mut ChaCha8Rng, n: usize, window: usize) -> EventRecord {
    let stations = (0..n).map(|_| station(r, window)).collect();
    let mut label = [0f32; 6];
    label.iter_mut().for_each(|v| *v = r.random::<f32>() - 0.5);
    label[5] = 4.0;
    EventRecord {
        id: "test".into(),
        domain: Domain::Synthetic,
        normalized: true,
        lat: 34.0,
        lon: -117.0,
        depth: 10.0,
        label,
        window,
        stations,
    }
}

/// Compares the tape gradient of `Σ seed·f(params)` against central
/// differences for (a sample of) every parameter element.
pub fn check_params<F>(store: &ParamStore<f64>, build: F, tol: f64)
where
    F: Fn(&mut Graph<'_, f64>) -> NodeId,
{
    let mut g = Graph::new(store);
    let out = build(&mut g);
    let seed = randn(&mut rng(99), g.value(out).len());
    let grads = g.backward(out, &seed).unwrap();
    let loss = |s: &ParamStore<f64>| {
        let mut g = Graph::new(s);
        let o = build(&mut g);
        g.value(o).data.iter().zip(&seed).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-6;
    let mut pick = rng(7);
    for (pi, t) in store.tensors.iter().enumerate() {
        let n = t.len();
        let idx: Vec<usize> = if n <= 24 {
            (0..n).collect()
        } else {
            (0..24).map(|_| pick.random_range(0..n)).collect()
        };
        for i in idx {
            let mut plus = store.clone();
            plus.tensors[pi].data[i] += h;
            let mut minus = store.clone();
            minus.tensors[pi].data[i] -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let ana = grads.params[pi].data[i];
            assert!(
                (num - ana).abs() <= tol * (1.0 + num.abs().max(ana.abs())),
                "{}[{i}]: analytic {ana} numeric {num}",
                store.names[pi]
            );
        }
    }
}

/// Adds small noise to every parameter so no ReLU sits exactly on its kink
/// (zero biases over zero-padded inputs do otherwise).
pub fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for t in &mut store.tensors {
        for v in &mut t.data {
            *v += 0.1 * (r.random::<f64>() * 2.0 - 1.0);
        }
    }
}

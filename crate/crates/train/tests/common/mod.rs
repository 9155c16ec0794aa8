#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sourcenet_core::features::{EventRecord, StationFeatures, CHANNELS, N_SCALARS};
use sourcenet_core::mtmath::{mt_to_label, sample_uniform_dc};
use sourcenet_core::Domain;
use sourcenet_nn::model::ModelConfig;
use std::path::PathBuf;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Label of a uniformly oriented double couple.
pub fn dc_label(r: &mut ChaCha8Rng) -> [f32; 6] {
    let mt = sample_uniform_dc(r, (2.5, 4.5));
    mt_to_label(&mt).unwrap().as_array().map(|v| v as f32)
}

/// Normalized record with random features. The first deviatoric component
/// leaks into the scalars so a model has something to learn.
pub fn record(r: &mut ChaCha8Rng, id: usize, n: usize, window: usize) -> EventRecord {
    let label = dc_label(r);
    let stations = (0..n)
        .map(|_| {
            let mut win = || {
                (0..CHANNELS * window)
                    .map(|_| r.random::<f32>() * 2.0 - 1.0)
                    .collect::<Vec<_>>()
            };
            let p_win = win();
            let s_win = win();
            let mut scalars = [0f32; N_SCALARS];
            scalars.iter_mut().for_each(|v| *v = r.random::<f32>() * 2.0 - 1.0);
            scalars[0] = label[0];
            StationFeatures {
                azimuth: r.random::<f32>() * 360.0,
                dist: 10.0 + r.random::<f32>() * 100.0,
                scalars,
                p_win,
                s_win,
            }
        })
        .collect();
    EventRecord {
        id: format!("syn-{id:06}"),
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

pub fn dataset(seed: u64, n: usize) -> Vec<EventRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let k = r.random_range(5..9);
            record(&mut r, i, k, 16)
        })
        .collect()
}

pub fn tiny() -> ModelConfig {
    ModelConfig {
        dropout: 0.1,
        ..ModelConfig::tiny()
    }
}

pub fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("sourcenet-train-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

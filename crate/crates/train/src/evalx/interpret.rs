use crate::evalx::metrics::kagan_between;
use crate::runtime::{Model, Predictions};
use crate::TrainError;
use serde::{Deserialize, Serialize};
use sourcenet_core::features::{EventRecord, CHANNELS};
use sourcenet_nn::graph::Graph;
use sourcenet_nn::model::{forward, Batch, Mode};
use std::fmt::Write as _;

pub const AZIMUTH_BINS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSource {
    /// Attention-pooling weights.
    Pooling,
    /// Self-attention received per station, averaged over layers and heads.
    SelfAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AzimuthBin {
    pub start_deg: f64,
    pub count: usize,
    /// Mean rescaled weight; `None` for a bin without stations.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AzimuthProfile {
    pub source: AttentionSource,
    pub bins: Vec<AzimuthBin>,
}

/// Averages per-station weights, rescaled by the event's station count so
/// uniform attention maps to 1, within 30° azimuth bins.
pub fn azimuth_profile(
    records: &[&EventRecord],
    preds: &Predictions,
    source: AttentionSource,
) -> Result<AzimuthProfile, TrainError> {
    let width = 360.0 / AZIMUTH_BINS as f64;
    let mut sum = [0.0; AZIMUTH_BINS];
    let mut count = [0usize; AZIMUTH_BINS];
    for (e, rec) in records.iter().enumerate() {
        let n = rec.stations.len();
        let scaled: Vec<f64> = match source {
            AttentionSource::Pooling => preds.pool[e]
                .as_ref()
                .ok_or_else(|| TrainError::Config("model has no attention pooling".into()))?
                .iter()
                .map(|w| *w as f64 * n as f64)
                .collect(),
            AttentionSource::SelfAttention => preds.received[e]
                .as_ref()
                .ok_or_else(|| TrainError::Config("model has no self-attention".into()))?
                .iter()
                .map(|w| *w as f64)
                .collect(),
        };
        for (st, w) in rec.stations.iter().zip(scaled) {
            let b = ((st.azimuth as f64).rem_euclid(360.0) / width) as usize % AZIMUTH_BINS;
            sum[b] += w;
            count[b] += 1;
        }
    }
    let bins = (0..AZIMUTH_BINS)
        .map(|b| AzimuthBin {
            start_deg: b as f64 * width,
            count: count[b],
            mean: (count[b] > 0).then(|| sum[b] / count[b] as f64),
        })
        .collect();
    Ok(AzimuthProfile { source, bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamTarget {
    /// Deviatoric component 0..5.
    Dev(usize),
    Mw,
}

impl CamTarget {
    fn index(self) -> usize {
        match self {
            CamTarget::Dev(k) => k,
            CamTarget::Mw => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCam {
    /// Saliency over the P window and the S window, each of window length,
    /// in [0, 1].
    pub p: Vec<f64>,
    pub s: Vec<f64>,
}

/// Linear interpolation of `x` onto `n` evenly spaced sample centres.
fn upsample(x: &[f64], n: usize) -> Vec<f64> {
    let l = x.len();
    (0..n)
        .map(|t| {
            let u = ((t as f64 + 0.5) * l as f64 / n as f64 - 0.5).clamp(0.0, (l - 1) as f64);
            let i = (u.floor() as usize).min(l - 1);
            let j = (i + 1).min(l - 1);
            let f = u - i as f64;
            x[i] * (1.0 - f) + x[j] * f
        })
        .collect()
}

/// Grad-CAM on the last residual-block activations of each tower for one
/// station.
pub fn gradcam(model: &Model, record: &EventRecord, station: usize, target: CamTarget) -> Result<GradCam, TrainError> {
    if station >= record.stations.len() {
        return Err(TrainError::Index(format!(
            "station {station} out of range for event {} with {} stations",
            record.id,
            record.stations.len()
        )));
    }
    if target.index() > 5 {
        return Err(TrainError::Index(format!("target component {}", target.index())));
    }
    let rec = model.prepare(record)?;
    let batch = Batch::<f32>::from_records(&[&rec])?;
    let mut g = Graph::new(&model.params);
    let f = forward(&mut g, &model.config, &batch, Mode::Eval)?;
    let mut seed = vec![0f32; 6];
    seed[target.index()] = 1.0;
    let grads = g.backward(f.y, &seed)?;
    let t = rec.window;
    let st = &rec.stations[station];
    let mut cams = Vec::new();
    for (tower, win) in f.last_act.iter().zip([&st.p_win, &st.s_win]) {
        if win[..CHANNELS * t].iter().all(|v| *v == 0.0) {
            cams.push(vec![0.0; t]);
            continue;
        }
        let a = g.value(tower.node);
        let (c, samples, l) = (a.shape[0], a.shape[1], a.shape[2]);
        let row = tower.offset + station;
        let gr = grads.node(tower.node);
        let mut cam = vec![0.0f64; l];
        for ch in 0..c {
            let base = (ch * samples + row) * l;
            let alpha = gr.map_or(0.0, |gr| {
                gr.data[base..base + l].iter().map(|v| *v as f64).sum::<f64>() / l as f64
            });
            for (k, v) in cam.iter_mut().enumerate() {
                *v += alpha * a.data[base + k] as f64;
            }
        }
        cam.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut up = upsample(&cam, t);
        let mx = up.iter().cloned().fold(0.0, f64::max);
        if mx > 0.0 {
            up.iter_mut().for_each(|v| *v /= mx);
        }
        cams.push(up);
    }
    let s = cams.pop().unwrap_or_default();
    let p = cams.pop().unwrap_or_default();
    Ok(GradCam { p, s })
}

/// One row per event: id, domain, pooled latent vector, Kagan angle of the
/// prediction.
pub fn latents_csv(records: &[&EventRecord], preds: &Predictions) -> String {
    let d = preds.z.first().map_or(0, |z| z.len());
    let mut s = String::from("event_id,domain");
    for k in 0..d {
        let _ = write!(s, ",z_{k}");
    }
    s.push_str(",kagan_deg\n");
    for ((rec, z), y) in records.iter().zip(&preds.z).zip(&preds.y) {
        let _ = write!(s, "{},{}", rec.id, rec.domain.name());
        for v in z {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", kagan_between(&rec.label, y));
    }
    s
}

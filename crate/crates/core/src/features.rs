//! Station features: band-passed P/S windows in the time and spectral domain
//! plus the 20-entry scalar vector, and dataset normalization.

use crate::dsp::{resample_linear, rfft_magnitude, Sos};
use crate::forward::{geo_to_local, EventGeom, StationGeom, SyntheticEvent, Trace};
use crate::mtmath::SourceLabel;
use crate::Domain;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WINDOW: usize = 120;
pub const CHANNELS: usize = 6;
pub const N_SCALARS: usize = 20;
pub const BAND: (f64, f64) = (0.1, 2.0);
/// Window offsets relative to the pick, seconds.
pub const WINDOW_OFFSETS: (f64, f64) = (-1.0, 5.0);
/// Simulated traces are in micrometres; features are computed in nanometres
/// so that `log10(1 + ·)` compresses amplitudes of small events too.
pub const AMPLITUDE_GAIN: f64 = 1e3;
const RATIO_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("series of {0} samples is too short to filter (need 64)")]
    TooShort(usize),
    #[error("cannot fit normalization statistics on an empty dataset")]
    EmptyDataset,
    #[error("record {0} is already normalized")]
    AlreadyNormalized(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFeatures {
    pub azimuth: f32,
    pub dist: f32,
    pub scalars: [f32; N_SCALARS],
    /// Channel-major `6 × T`: Z, N, E time series then their spectra.
    pub p_win: Vec<f32>,
    pub s_win: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub domain: Domain,
    pub normalized: bool,
    pub lat: f32,
    pub lon: f32,
    pub depth: f32,
    pub label: [f32; 6],
    pub window: usize,
    pub stations: Vec<StationFeatures>,
}

impl EventRecord {
    pub fn source_label(&self) -> SourceLabel {
        SourceLabel::from_array(&self.label.map(f64::from))
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Checks shapes and finiteness; `min_stations` is the catalog floor.
    pub fn check(&self, min_stations: usize) -> Result<(), String> {
        if self.stations.len() < min_stations {
            return Err(format!(
                "record {} has {} stations (< {min_stations})",
                self.id,
                self.stations.len()
            ));
        }
        if !(self.lat.is_finite() && self.lon.is_finite() && self.depth.is_finite())
            || self.label.iter().any(|v| !v.is_finite())
        {
            return Err(format!("record {} has non-finite header values", self.id));
        }
        let len = CHANNELS * self.window;
        for (i, st) in self.stations.iter().enumerate() {
            if st.p_win.len() != len || st.s_win.len() != len {
                return Err(format!("record {} station {i}: bad window size", self.id));
            }
            let finite = st.azimuth.is_finite()
                && st.dist.is_finite()
                && st.scalars.iter().all(|v| v.is_finite())
                && st.p_win.iter().chain(&st.s_win).all(|v| v.is_finite());
            if !finite {
                return Err(format!("record {} station {i}: non-finite values", self.id));
            }
        }
        Ok(())
    }
}

pub fn bandpass_filter(rate: f64) -> Sos {
    Sos::butter_bandpass(4, BAND.0, BAND.1, rate)
}

/// Causal 4th-order Butterworth band-pass, 0.1–2 Hz.
pub fn bandpass(x: &[f64], rate: f64) -> Result<Vec<f64>, FeatureError> {
    if x.len() < 64 {
        return Err(FeatureError::TooShort(x.len()));
    }
    Ok(bandpass_filter(rate).filter(x))
}

/// `len` samples starting at `round((pick + offset) · rate)`; out-of-range
/// samples are zero and set the padding flag.
pub fn cut_window(x: &[f64], pick: f64, rate: f64, offset: f64, len: usize) -> (Vec<f64>, bool) {
    let start = ((pick + offset) * rate).round();
    let mut out = vec![0.0; len];
    let mut padded = false;
    for (j, v) in out.iter_mut().enumerate() {
        let i = start + j as f64;
        if i >= 0.0 && (i as usize) < x.len() {
            *v = x[i as usize];
        } else {
            padded = true;
        }
    }
    (out, padded)
}

/// `log10(1 + |rFFT|)` resampled from `len/2 + 1` bins to `len` points.
pub fn spectral_channel(win: &[f64]) -> Vec<f64> {
    let mag: Vec<f64> = rfft_magnitude(win)
        .into_iter()
        .map(|m| m.ln_1p() / std::f64::consts::LN_10)
        .collect();
    resample_linear(&mag, win.len())
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Fixed layout: station lat/lon, azimuth, epicentral distance, source depth;
/// six P amplitude entries, six S entries; three P/S time-channel ratios.
pub fn scalar_vector(
    st: &StationGeom,
    ev: &EventGeom,
    azimuth: f64,
    dist: f64,
    p: &[Vec<f64>; CHANNELS],
    s: &[Vec<f64>; CHANNELS],
) -> [f64; N_SCALARS] {
    let mut out = [0.0; N_SCALARS];
    out[0] = st.lat;
    out[1] = st.lon;
    out[2] = azimuth;
    out[3] = dist;
    out[4] = ev.depth;
    for (base, win) in [(5, p), (11, s)] {
        for c in 0..CHANNELS {
            let m = max_abs(&win[c]);
            out[base + c] = if c < 3 { m.ln_1p() / std::f64::consts::LN_10 } else { m };
        }
    }
    for c in 0..3 {
        out[17 + c] = max_abs(&p[c]) / max_abs(&s[c]).max(RATIO_EPS);
    }
    out
}

fn six_channels(trace: &[Vec<f64>; 3], pick: f64, rate: f64) -> [Vec<f64>; CHANNELS] {
    let time: [Vec<f64>; 3] = std::array::from_fn(|c| cut_window(&trace[c], pick, rate, WINDOW_OFFSETS.0, WINDOW).0);
    let spec: [Vec<f64>; 3] = std::array::from_fn(|c| spectral_channel(&time[c]));
    let [t0, t1, t2] = time;
    let [s0, s1, s2] = spec;
    [t0, t1, t2, s0, s1, s2]
}

fn flatten(ch: &[Vec<f64>; CHANNELS]) -> Vec<f32> {
    ch.iter().flatten().map(|&v| v as f32).collect()
}

pub fn extract_station(trace: &Trace, st: &StationGeom, ev: &EventGeom) -> Result<StationFeatures, FeatureError> {
    let rate = trace.rate;
    let filt = bandpass_filter(rate);
    let mut filtered: [Vec<f64>; 3] = Default::default();
    for c in 0..3 {
        if trace.data[c].len() < 64 {
            return Err(FeatureError::TooShort(trace.data[c].len()));
        }
        let scaled: Vec<f64> = trace.data[c].iter().map(|v| v * AMPLITUDE_GAIN).collect();
        filtered[c] = filt.filter(&scaled);
    }
    let p = six_channels(&filtered, trace.p_pick, rate);
    let s = six_channels(&filtered, trace.s_pick, rate);
    let (dist, az) = geo_to_local(ev, st);
    let scalars = scalar_vector(st, ev, az, dist, &p, &s).map(|v| v as f32);
    Ok(StationFeatures {
        azimuth: az as f32,
        dist: dist as f32,
        scalars,
        p_win: flatten(&p),
        s_win: flatten(&s),
    })
}

/// Per-station extraction; station order is preserved.
pub fn extract_event(id: &str, ev: &SyntheticEvent) -> Result<EventRecord, FeatureError> {
    let stations = ev
        .stations
        .iter()
        .map(|(st, tr)| extract_station(tr, st, &ev.geom))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EventRecord {
        id: id.to_string(),
        domain: ev.domain,
        normalized: false,
        lat: ev.geom.lat as f32,
        lon: ev.geom.lon as f32,
        depth: ev.geom.depth as f32,
        label: ev.label.as_array().map(|v| v as f32),
        window: WINDOW,
        stations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scalar_mean: [f64; N_SCALARS],
    pub scalar_std: [f64; N_SCALARS],
    /// 95th percentile of per-station peak time-channel amplitude.
    pub wave_scale: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            scalar_mean: [0.0; N_SCALARS],
            scalar_std: [1.0; N_SCALARS],
            wave_scale: 1.0,
        }
    }
}

fn station_peak(st: &StationFeatures, t: usize) -> f64 {
    st.p_win[..3 * t]
        .iter()
        .chain(&st.s_win[..3 * t])
        .fold(0.0f64, |a, v| a.max(v.abs() as f64))
}

/// Returns the statistics and the indices of zero-variance scalar columns
/// (whose std is clamped to 1).
pub fn fit_stats<'a, I>(records: I) -> Result<(NormStats, Vec<usize>), FeatureError>
where
    I: IntoIterator<Item = &'a EventRecord> + Clone,
{
    let n: usize = records.clone().into_iter().map(|r| r.stations.len()).sum();
    if n == 0 {
        return Err(FeatureError::EmptyDataset);
    }
    let mut mean = [0.0; N_SCALARS];
    for st in records.clone().into_iter().flat_map(|r| &r.stations) {
        for (m, v) in mean.iter_mut().zip(&st.scalars) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = [0.0; N_SCALARS];
    for st in records.clone().into_iter().flat_map(|r| &r.stations) {
        for k in 0..N_SCALARS {
            var[k] += (st.scalars[k] as f64 - mean[k]).powi(2);
        }
    }
    let mut degenerate = Vec::new();
    let std = std::array::from_fn(|k| {
        let s = (var[k] / n as f64).sqrt();
        if s > 1e-12 * (1.0 + mean[k].abs()) {
            s
        } else {
            degenerate.push(k);
            1.0
        }
    });
    if !degenerate.is_empty() {
        log::warn!("zero-variance scalar columns {degenerate:?}: std clamped to 1");
    }
    let mut peaks: Vec<f64> = records
        .into_iter()
        .flat_map(|r| r.stations.iter().map(move |s| station_peak(s, r.window)))
        .collect();
    peaks.sort_by(f64::total_cmp);
    let rank = ((0.95 * peaks.len() as f64).ceil() as usize).clamp(1, peaks.len());
    let scale = peaks[rank - 1];
    let stats = NormStats {
        scalar_mean: mean,
        scalar_std: std,
        wave_scale: if scale > 0.0 { scale } else { 1.0 },
    };
    Ok((stats, degenerate))
}

/// Z-scores the scalars and divides time channels by the waveform scale.
/// Spectral channels are already log-compressed and are left as they are.
pub fn apply_norm(record: &EventRecord, stats: &NormStats) -> Result<EventRecord, FeatureError> {
    if record.normalized {
        return Err(FeatureError::AlreadyNormalized(record.id.clone()));
    }
    let mut out = record.clone();
    let t = record.window;
    let inv = 1.0 / stats.wave_scale;
    for st in out.stations.iter_mut() {
        for k in 0..N_SCALARS {
            st.scalars[k] = ((st.scalars[k] as f64 - stats.scalar_mean[k]) / stats.scalar_std[k]) as f32;
        }
        for v in st.p_win[..3 * t].iter_mut().chain(st.s_win[..3 * t].iter_mut()) {
            *v = (*v as f64 * inv) as f32;
        }
    }
    out.normalized = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / 20.0).sin()).collect()
    }

    #[test]
    fn bandpass_contract() {
        assert_eq!(bandpass(&[0.0; 10], 20.0), Err(FeatureError::TooShort(10)));
        let dc = bandpass(&vec![1.0; 4000], 20.0).unwrap();
        let tail = &dc[3000..];
        let rms = (tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt();
        assert!(rms < 1e-3);
        let sos = bandpass_filter(20.0);
        let g = sos.gain_at(0.5, 20.0);
        let y = bandpass(&sine(0.5, 4000), 20.0).unwrap();
        let amp = max_abs(&y[2000..]);
        assert!((amp - g).abs() < 1e-3 && (0.9..=1.1).contains(&amp));
        let y = bandpass(&sine(5.0, 4000), 20.0).unwrap();
        assert!(max_abs(&y[2000..]) < 0.05);
    }

    #[test]
    fn window_indexing() {
        let x: Vec<f64> = (0..1800).map(|i| i as f64).collect();
        let (w, pad) = cut_window(&x, 10.0, 20.0, -1.0, 120);
        assert!(!pad);
        assert_eq!(w[0], 180.0);
        assert_eq!(w[119], 299.0);
        let (w, pad) = cut_window(&x, 0.5, 20.0, -1.0, 120);
        assert!(pad);
        assert!(w[..10].iter().all(|v| *v == 0.0));
        assert_eq!(w[10], 0.0);
        assert_eq!(w[11], 1.0);
        let (w, pad) = cut_window(&x, 200.0, 20.0, -1.0, 120);
        assert!(pad && w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spectral_channel_properties() {
        assert!(spectral_channel(&[0.0; 120]).iter().all(|v| *v == 0.0));
        // A 10-cycle cosine lands in rFFT bin 10, which maps to resampled
        // index 10 · 119 / 60 ≈ 19.8.
        let x: Vec<f64> = (0..120).map(|i| (2.0 * PI * 10.0 * i as f64 / 120.0).cos()).collect();
        let s = spectral_channel(&x);
        let argmax = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((19..=20).contains(&argmax), "{argmax}");
        let pos = argmax as f64 * 60.0 / 119.0;
        let expect = (1.0 - (pos - 10.0).abs()) * (61.0f64).log10();
        assert!((s[argmax] - expect).abs() < 1e-9);
        // Energy ordering follows the time-domain energy ordering.
        let small: Vec<f64> = x.iter().map(|v| 0.3 * v).collect();
        let e = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert_eq!(
            e(&spectral_channel(&x)) > e(&spectral_channel(&small)),
            e(&x) > e(&small)
        );
    }

    fn geom() -> (StationGeom, EventGeom) {
        (
            StationGeom {
                name: "A".into(),
                lat: 34.5,
                lon: -117.2,
            },
            EventGeom {
                lat: 34.0,
                lon: -117.0,
                depth: 8.0,
                origin_time: 0.0,
            },
        )
    }

    #[test]
    fn scalar_vector_layout() {
        let (st, ev) = geom();
        let zero: [Vec<f64>; 6] = Default::default();
        let zero = zero.map(|_| vec![0.0; 120]);
        let v = scalar_vector(&st, &ev, 10.0, 50.0, &zero, &zero);
        assert_eq!(v.len(), N_SCALARS);
        assert_eq!(&v[..5], &[34.5, -117.2, 10.0, 50.0, 8.0]);
        assert!(v[5..].iter().all(|x| *x == 0.0));

        let p: [Vec<f64>; 6] = std::array::from_fn(|c| sine(0.5 + c as f64 * 0.1, 120));
        let s: [Vec<f64>; 6] =
            std::array::from_fn(|c| sine(0.3 + c as f64 * 0.1, 120).iter().map(|v| 2.0 * v).collect());
        let a = scalar_vector(&st, &ev, 10.0, 50.0, &p, &s);
        let scale = |w: &[Vec<f64>; 6]| w.clone().map(|c| c.iter().map(|v| 10.0 * v).collect::<Vec<_>>());
        let b = scalar_vector(&st, &ev, 10.0, 50.0, &scale(&p), &scale(&s));
        assert_eq!(&a[..5], &b[..5]);
        for k in 17..20 {
            assert!((a[k] - b[k]).abs() < 1e-12 * a[k].abs().max(1.0));
        }
        assert!((5..17).all(|k| a[k] != b[k]));
    }

    fn record(id: &str, seed: f32) -> EventRecord {
        let st = |k: f32| StationFeatures {
            azimuth: 10.0 * k,
            dist: 20.0 + k,
            scalars: std::array::from_fn(|j| if j == 4 { 8.0 } else { seed + k * (j as f32 + 1.0) }),
            p_win: (0..720).map(|i| ((i as f32) * 0.01 + k).sin()).collect(),
            s_win: (0..720).map(|i| ((i as f32) * 0.02 - k).cos() * 2.0).collect(),
        };
        EventRecord {
            id: id.into(),
            domain: Domain::Synthetic,
            normalized: false,
            lat: 34.0,
            lon: -117.0,
            depth: 8.0,
            label: [0.1, 0.2, -0.3, 0.4, 0.5, 4.0],
            window: WINDOW,
            stations: (0..6).map(|k| st(k as f32)).collect(),
        }
    }

    #[test]
    fn normalization() {
        let recs = vec![record("a", 0.0), record("b", 1.5)];
        let (stats, degenerate) = fit_stats(&recs).unwrap();
        assert_eq!(degenerate, vec![4]);
        assert_eq!(stats.scalar_std[4], 1.0);
        let normed: Vec<_> = recs.iter().map(|r| apply_norm(r, &stats).unwrap()).collect();
        for k in 0..N_SCALARS {
            let m: f64 = normed
                .iter()
                .flat_map(|r| &r.stations)
                .map(|s| s.scalars[k] as f64)
                .sum::<f64>()
                / 12.0;
            assert!(m.abs() < 1e-6, "column {k}: {m}");
        }
        assert!(matches!(
            apply_norm(&normed[0], &stats),
            Err(FeatureError::AlreadyNormalized(_))
        ));
        assert_eq!(
            fit_stats(&Vec::<EventRecord>::new()).unwrap_err(),
            FeatureError::EmptyDataset
        );
    }
}

//! Physics-structured domain randomization.
//!
//! The augmented observation is `M(T(S(y, φ)) + n)`: velocity-model sampling
//! picks `φ`, [`distort`] is `T`, [`inject_noise`] adds `n`, and
//! [`dropout_stations`] is the masking operator `M`. None of the operators
//! touch the source label.

use crate::dsp::Sos;
use crate::forward::{
    simulate_event, EventGeom, ForwardError, Layer, SimConfig, StationGeom, SyntheticEvent, Trace, VelocityModel,
};
use crate::mtmath::MomentTensor;
use crate::Domain;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsdrError {
    #[error("invalid randomization config: {0}")]
    Config(String),
    #[error("noise records ({have} samples) shorter than trace ({need} samples)")]
    NoiseTooShort { have: usize, need: usize },
    #[error("noise injection requested without a noise library")]
    NoNoiseLibrary,
    #[error("event has {have} stations, below the floor of {min}")]
    TooFewStations { have: usize, min: usize },
    #[error(transparent)]
    Forward(#[from] ForwardError),
}

/// JSON has no infinity; the no-noise sentinel is written as the string "inf".
mod inf_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }

    fn enc(v: f64) -> Num {
        if v.is_infinite() {
            Num::S("inf".into())
        } else {
            Num::F(v)
        }
    }

    pub fn serialize<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        (enc(v.0), enc(v.1)).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        let (a, b) = <(Num, Num)>::deserialize(d)?;
        let dec = |n: Num| match n {
            Num::F(v) => Ok(v),
            Num::S(s) if s == "inf" => Ok(f64::INFINITY),
            Num::S(s) => Err(serde::de::Error::custom(format!("bad number {s:?}"))),
        };
        Ok((dec(a)?, dec(b)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdrConfig {
    pub time_shift_max: f64,
    pub amp_sigma: f64,
    pub coda_rel_amp: (f64, f64),
    pub coda_tau: (f64, f64),
    /// Log-uniform SNR interval; `(inf, inf)` disables noise injection.
    #[serde(with = "inf_pair")]
    pub snr_range: (f64, f64),
    pub keep_prob: (f64, f64),
    pub min_stations: usize,
    pub model_library: Vec<String>,
}

impl Default for PsdrConfig {
    fn default() -> Self {
        Self {
            time_shift_max: 0.5,
            amp_sigma: 0.2,
            coda_rel_amp: (0.1, 0.5),
            coda_tau: (1.0, 5.0),
            snr_range: (2.0, 20.0),
            keep_prob: (0.6, 1.0),
            min_stations: 5,
            model_library: Vec::new(),
        }
    }
}

impl PsdrConfig {
    /// Configuration under which every operator is the identity.
    pub fn identity() -> Self {
        Self {
            time_shift_max: 0.0,
            amp_sigma: 0.0,
            coda_rel_amp: (0.0, 0.0),
            coda_tau: (1.0, 1.0),
            snr_range: (f64::INFINITY, f64::INFINITY),
            keep_prob: (1.0, 1.0),
            min_stations: 1,
            model_library: Vec::new(),
        }
    }

    pub fn noise_enabled(&self) -> bool {
        self.snr_range.0.is_finite()
    }

    pub fn validate(&self) -> Result<(), PsdrError> {
        let bad = |m: &str| Err(PsdrError::Config(m.to_string()));
        let ordered = |r: (f64, f64)| r.0 <= r.1 && !r.0.is_nan() && !r.1.is_nan();
        if !(self.time_shift_max >= 0.0 && self.time_shift_max.is_finite()) {
            return bad("time_shift_max must be finite and non-negative");
        }
        if !(self.amp_sigma >= 0.0 && self.amp_sigma.is_finite()) {
            return bad("amp_sigma must be finite and non-negative");
        }
        if !ordered(self.coda_rel_amp) || self.coda_rel_amp.0 < 0.0 {
            return bad("coda_rel_amp must be an ordered non-negative interval");
        }
        if !ordered(self.coda_tau) || !(self.coda_tau.0 > 0.0) {
            return bad("coda_tau must be an ordered positive interval");
        }
        if !ordered(self.snr_range) || !(self.snr_range.0 > 0.0) {
            return bad("snr_range must be an ordered positive interval");
        }
        if self.snr_range.0.is_infinite() != self.snr_range.1.is_infinite() {
            return bad("snr_range sentinel must be (inf, inf)");
        }
        if !ordered(self.keep_prob) || self.keep_prob.0 < 0.0 || self.keep_prob.1 > 1.0 {
            return bad("keep_prob must be an ordered interval within [0, 1]");
        }
        if self.min_stations < 1 {
            return bad("min_stations must be at least 1");
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    range.0 + u * (range.1 - range.0)
}

/// Velocity-model library: model 0 is the base, the rest perturb vp/vs by
/// up to ±8% and layer thickness by up to ±15%.
pub fn build_model_library<R: Rng + ?Sized>(base: &VelocityModel, n: usize, rng: &mut R) -> Vec<VelocityModel> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(base.clone());
    for k in 1..n {
        let id = format!("{}-lib{k:02}", base.id);
        out.push(perturb_model(base, id, 0.08, 0.15, rng));
    }
    out
}

/// Independent uniform relative perturbation of every layer.
pub fn perturb_model<R: Rng + ?Sized>(
    base: &VelocityModel,
    id: String,
    vel_frac: f64,
    thick_frac: f64,
    rng: &mut R,
) -> VelocityModel {
    let layers = base
        .layers
        .iter()
        .map(|l| {
            let mut out = *l;
            for _ in 0..100 {
                let vp = l.vp * (1.0 + uniform(rng, (-vel_frac, vel_frac)));
                let vs = l.vs * (1.0 + uniform(rng, (-vel_frac, vel_frac)));
                if vp > vs {
                    out.vp = vp;
                    out.vs = vs;
                    break;
                }
            }
            let h = if l.thickness.is_finite() {
                l.thickness * (1.0 + uniform(rng, (-thick_frac, thick_frac)))
            } else {
                l.thickness
            };
            Layer { thickness: h, ..out }
        })
        .collect();
    VelocityModel { id, layers }
}

/// Spectral shape of the synthetic ambient-noise surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub n_records: usize,
    pub duration_s: f64,
    pub rate: f64,
    /// Center and width (Hz) of the microseism bump.
    pub bump_freq: f64,
    pub bump_width: f64,
    /// Bump height relative to the 1/f background at 1 Hz.
    pub bump_gain: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            n_records: 16,
            duration_s: 180.0,
            rate: 20.0,
            bump_freq: 0.2,
            bump_width: 0.05,
            bump_gain: 20.0,
        }
    }
}

impl NoiseParams {
    /// Target power spectral density (arbitrary units).
    pub fn psd(&self, f: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        let z = (f - self.bump_freq) / self.bump_width;
        1.0 / f + self.bump_gain * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLibrary {
    pub records: Vec<[Vec<f64>; 3]>,
    pub rate: f64,
    pub params: NoiseParams,
}

impl NoiseLibrary {
    pub fn record_len(&self) -> usize {
        self.records.iter().map(|r| r[0].len()).min().unwrap_or(0)
    }
}

fn shaped_noise<R: Rng + ?Sized>(n: usize, params: &NoiseParams, rng: &mut R) -> Vec<f64> {
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=(n / 2) {
        let f = k as f64 * params.rate / n as f64;
        let amp = (params.psd(f) / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        spec[k] = Complex64::new(re * amp, im * amp);
        if k != n - k {
            spec[n - k] = spec[k].conj();
        } else {
            spec[k] = Complex64::new(spec[k].re, 0.0);
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Gaussian noise shaped to `1/f` plus a microseism bump, unit RMS per component.
pub fn build_noise_library<R: Rng + ?Sized>(params: &NoiseParams, rng: &mut R) -> NoiseLibrary {
    let n = (params.duration_s * params.rate).round() as usize;
    let records = (0..params.n_records.max(1))
        .map(|_| {
            [
                shaped_noise(n, params, rng),
                shaped_noise(n, params, rng),
                shaped_noise(n, params, rng),
            ]
        })
        .collect();
    NoiseLibrary {
        records,
        rate: params.rate,
        params: *params,
    }
}

/// What [`distort`] drew, for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distortion {
    /// Applied waveform shift relative to the picks, seconds.
    pub shift: f64,
    pub gain: f64,
    /// `(relative amplitude, decay time)` of the P and S coda.
    pub coda: [(f64, f64); 2],
}

fn band_limited_white<R: Rng + ?Sized>(n: usize, filt: &Sos, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut x = filt.filter(&raw);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Signal distortion: waveform time shift relative to the picks, log-normal
/// station gain, and exponentially decaying scattered coda after P and S.
pub fn distort<R: Rng + ?Sized>(trace: &Trace, cfg: &PsdrConfig, rng: &mut R) -> (Trace, Distortion) {
    let rate = trace.rate;
    let n = trace.len();
    let mut out = trace.clone();

    let u = uniform(rng, (-cfg.time_shift_max, cfg.time_shift_max));
    let max_k = (cfg.time_shift_max * rate + 1e-9).floor() as i64;
    let k = ((u * rate).round() as i64).clamp(-max_k, max_k);
    if k != 0 {
        for c in 0..3 {
            let src = &trace.data[c];
            let dst = &mut out.data[c];
            for (i, v) in dst.iter_mut().enumerate() {
                let j = i as i64 - k;
                *v = if (0..n as i64).contains(&j) {
                    src[j as usize]
                } else {
                    0.0
                };
            }
        }
    }
    let shift = k as f64 / rate;

    let gain = if cfg.amp_sigma > 0.0 {
        let g: f64 = Normal::new(0.0, cfg.amp_sigma).expect("finite sigma").sample(rng);
        g.exp()
    } else {
        1.0
    };
    if gain != 1.0 {
        out.data.iter_mut().flatten().for_each(|v| *v *= gain);
    }

    let filt = Sos::butter_bandpass(2, 0.1, 2.0_f64.min(0.45 * rate), rate);
    let mut coda = [(0.0, 0.0); 2];
    for (slot, pick) in [trace.p_pick, trace.s_pick].into_iter().enumerate() {
        let a = uniform(rng, cfg.coda_rel_amp);
        let tau = uniform(rng, cfg.coda_tau);
        coda[slot] = (a, tau);
        if a <= 0.0 {
            continue;
        }
        let t_arr = pick + shift;
        let start = ((t_arr * rate).ceil().max(0.0) as usize).min(n);
        let local_peak = out.peak_between(t_arr - 0.5, t_arr + 2.5);
        for c in 0..3 {
            let eta = band_limited_white(n - start, &filt, rng);
            for (i, e) in eta.iter().enumerate() {
                let t = (start + i) as f64 / rate - t_arr;
                out.data[c][start + i] += a * local_peak * e * (-t / tau).exp();
            }
        }
    }
    (out, Distortion { shift, gain, coda })
}

/// Draws the scaled noise that [`inject_noise`] would add. Returns `None`
/// for the no-noise sentinel.
pub fn noise_segment<R: Rng + ?Sized>(
    len: usize,
    peak: f64,
    lib: &NoiseLibrary,
    rng: &mut R,
    snr_range: (f64, f64),
) -> Result<Option<([Vec<f64>; 3], f64)>, PsdrError> {
    if snr_range.0.is_infinite() {
        return Ok(None);
    }
    let have = lib.record_len();
    if have < len || lib.records.is_empty() {
        return Err(PsdrError::NoiseTooShort { have, need: len });
    }
    let (lo, hi) = (snr_range.0.ln(), snr_range.1.ln());
    let snr = uniform(rng, (lo, hi)).exp();
    let rec = &lib.records[rng.random_range(0..lib.records.len())];
    let off = rng.random_range(0..=(have - len));
    let seg: [Vec<f64>; 3] = std::array::from_fn(|c| rec[c][off..off + len].to_vec());
    let ms = seg.iter().flatten().map(|v| v * v).sum::<f64>() / (3 * len).max(1) as f64;
    let rms = ms.sqrt();
    let scale = if rms > 0.0 { peak / (snr * rms) } else { 0.0 };
    let seg = seg.map(|c| c.into_iter().map(|v| v * scale).collect());
    Ok(Some((seg, snr)))
}

/// Adds a random library segment scaled so that signal peak / noise RMS
/// equals an SNR drawn log-uniformly from `snr_range`.
pub fn inject_noise<R: Rng + ?Sized>(
    trace: &Trace,
    lib: &NoiseLibrary,
    rng: &mut R,
    snr_range: (f64, f64),
) -> Result<(Trace, f64), PsdrError> {
    match noise_segment(trace.len(), trace.peak(), lib, rng, snr_range)? {
        None => Ok((trace.clone(), f64::INFINITY)),
        Some((seg, snr)) => {
            let mut out = trace.clone();
            for (dst, src) in out.data.iter_mut().zip(&seg) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            Ok((out, snr))
        }
    }
}

/// Bernoulli station dropout with keep probability drawn once per event; the
/// floor of `min_stations` is restored from the dropped stations with the
/// highest restoration scores.
pub fn dropout_stations<R: Rng + ?Sized>(
    ev: &SyntheticEvent,
    cfg: &PsdrConfig,
    rng: &mut R,
) -> Result<SyntheticEvent, PsdrError> {
    let n = ev.stations.len();
    if n < cfg.min_stations {
        return Err(PsdrError::TooFewStations {
            have: n,
            min: cfg.min_stations,
        });
    }
    let p = uniform(rng, cfg.keep_prob);
    let draws: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let mut keep: Vec<bool> = draws.iter().map(|(u, _)| *u < p).collect();
    let kept = keep.iter().filter(|k| **k).count();
    if kept < cfg.min_stations {
        let mut dropped: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
        dropped.sort_by(|&a, &b| draws[b].1.total_cmp(&draws[a].1).then(a.cmp(&b)));
        for &i in dropped.iter().take(cfg.min_stations - kept) {
            keep[i] = true;
        }
    }
    let mut out = ev.clone();
    out.stations = ev
        .stations
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(out)
}

/// Distortion, then noise, then station masking. The label is untouched.
pub fn augment_event<R: Rng + ?Sized>(
    ev: &SyntheticEvent,
    cfg: &PsdrConfig,
    lib: Option<&NoiseLibrary>,
    rng: &mut R,
) -> Result<SyntheticEvent, PsdrError> {
    cfg.validate()?;
    let mut out = ev.clone();
    for (_, trace) in out.stations.iter_mut() {
        let (distorted, _) = distort(trace, cfg, rng);
        *trace = if cfg.noise_enabled() {
            let lib = lib.ok_or(PsdrError::NoNoiseLibrary)?;
            inject_noise(&distorted, lib, rng, cfg.snr_range)?.0
        } else {
            distorted
        };
    }
    dropout_stations(&out, cfg, rng)
}

/// Inputs for one pseudo-real event.
#[derive(Debug, Clone)]
pub struct PseudoRealParams<'a> {
    pub mt: MomentTensor,
    pub geom: EventGeom,
    pub stations: &'a [StationGeom],
    pub base_model: &'a VelocityModel,
    pub sim: SimConfig,
    pub psdr: PsdrConfig,
    pub noise: &'a NoiseLibrary,
}

pub const PSEUDO_REAL_PREFIX: &str = "pseudo-real";

/// Randomization applied to the pseudo-real domain: doubled coda amplitude
/// and a lower SNR band than the synthetic defaults.
pub fn pseudo_real_config(base: &PsdrConfig) -> PsdrConfig {
    PsdrConfig {
        coda_rel_amp: (2.0 * base.coda_rel_amp.0, 2.0 * base.coda_rel_amp.1),
        snr_range: (1.0, 10.0),
        ..base.clone()
    }
}

/// Simulates an event in an out-of-library earth (±15% perturbations) with
/// stronger coda and noise than the training domain.
pub fn make_pseudo_real<R: Rng + ?Sized>(
    params: &PseudoRealParams<'_>,
    rng: &mut R,
) -> Result<SyntheticEvent, PsdrError> {
    let tag: u32 = rng.random();
    let model = perturb_model(
        params.base_model,
        format!("{PSEUDO_REAL_PREFIX}-{tag:08x}"),
        0.15,
        0.15,
        rng,
    );
    let sim = simulate_event(&params.mt, &params.geom, params.stations, &model, &params.sim)?;
    let cfg = pseudo_real_config(&params.psdr);
    let mut ev = augment_event(&sim.event, &cfg, Some(params.noise), rng)?;
    ev.domain = Domain::PseudoReal;
    Ok(ev)
}

/// Uniformly shuffled copy; used by tests and station sub-sampling.
pub fn shuffled<T: Clone, R: Rng + ?Sized>(items: &[T], rng: &mut R) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::load_velocity_model;
    use crate::mtmath::{sdr_to_mt, DoubleCouple};
    use crate::rng::rng_from_seed;

    fn base_model() -> VelocityModel {
        load_velocity_model(
            "socal",
            "5.5 5.5 3.18 2.4\n10.5 6.3 3.64 2.67\n16 6.7 3.87 2.8\n0 7.8 4.5 3.3",
        )
        .unwrap()
    }

    fn stations() -> Vec<StationGeom> {
        (0..12)
            .map(|i| {
                let az = i as f64 * 30.0_f64.to_radians();
                StationGeom {
                    name: format!("S{i:02}"),
                    lat: 34.0 + 0.4 * az.cos(),
                    lon: -117.0 + 0.5 * az.sin(),
                }
            })
            .collect()
    }

    fn event() -> SyntheticEvent {
        let mt = sdr_to_mt(&DoubleCouple::new(30.0, 70.0, 20.0, 10f64.powf(14.0)));
        let geom = EventGeom {
            lat: 34.0,
            lon: -117.0,
            depth: 9.0,
            origin_time: 0.0,
        };
        simulate_event(&mt, &geom, &stations(), &base_model(), &SimConfig::default())
            .unwrap()
            .event
    }

    fn small_noise(seed: u64) -> NoiseLibrary {
        let params = NoiseParams {
            n_records: 3,
            duration_s: 120.0,
            ..Default::default()
        };
        build_noise_library(&params, &mut rng_from_seed(seed))
    }

    #[test]
    fn model_library_bounds() {
        let base = base_model();
        let lib = build_model_library(&base, 17, &mut rng_from_seed(1));
        assert_eq!(lib.len(), 17);
        assert_eq!(lib[0], base);
        for m in &lib {
            m.validate().unwrap();
            for (l, b) in m.layers.iter().zip(&base.layers) {
                assert!((l.vp / b.vp - 1.0).abs() <= 0.08 + 1e-12);
                assert!((l.vs / b.vs - 1.0).abs() <= 0.08 + 1e-12);
                if b.thickness.is_finite() {
                    assert!((l.thickness / b.thickness - 1.0).abs() <= 0.15 + 1e-12);
                }
            }
        }
        let again = build_model_library(&base, 17, &mut rng_from_seed(1));
        assert_eq!(lib, again);
        let ids: std::collections::HashSet<_> = lib.iter().map(|m| m.id.clone()).collect();
        assert_eq!(ids.len(), 17);
    }

    #[test]
    fn noise_library_normalized_and_seeded() {
        let lib = small_noise(4);
        for rec in &lib.records {
            for c in rec {
                let rms = (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt();
                assert!((rms - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(lib, small_noise(4));
    }

    #[test]
    fn noise_spectrum_favors_microseism_band() {
        let p = NoiseParams::default();
        // Shaping-filter oracle.
        assert!(10.0 * (p.psd(0.2) / p.psd(2.0)).log10() >= 6.0);
        // Averaged periodogram of the generated records.
        let lib = build_noise_library(&NoiseParams { n_records: 8, ..p }, &mut rng_from_seed(2));
        let n = 400usize;
        let (mut p02, mut p2) = (0.0, 0.0);
        for rec in &lib.records {
            for c in rec {
                for seg in c.chunks_exact(n) {
                    let m = crate::dsp::rfft_magnitude(seg);
                    let bin = |f: f64| (f * n as f64 / p.rate).round() as usize;
                    p02 += m[bin(0.2)].powi(2);
                    p2 += m[bin(2.0)].powi(2);
                }
            }
        }
        assert!(10.0 * (p02 / p2).log10() >= 6.0, "{}", 10.0 * (p02 / p2).log10());
    }

    #[test]
    fn identity_distortion_is_exact() {
        let ev = event();
        let cfg = PsdrConfig::identity();
        let mut rng = rng_from_seed(3);
        for (_, tr) in &ev.stations {
            let (out, info) = distort(tr, &cfg, &mut rng);
            assert_eq!(&out, tr);
            assert_eq!(info.shift, 0.0);
        }
    }

    #[test]
    fn distortion_bounds_and_coda() {
        let ev = event();
        let cfg = PsdrConfig::default();
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            for (_, tr) in &ev.stations {
                let (out, info) = distort(tr, &cfg, &mut rng);
                assert!(info.shift.abs() <= cfg.time_shift_max + 1e-12);
                assert_eq!(out.p_pick, tr.p_pick);
                let start = ((tr.s_pick + info.shift + 6.0) * tr.rate) as usize;
                let energy: f64 = (0..3)
                    .map(|c| {
                        out.data[c][start..]
                            .iter()
                            .zip(&tr.data[c][start..])
                            .map(|(a, b)| (a - b * info.gain).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                assert!(energy > 0.0);
            }
        }
    }

    #[test]
    fn noise_injection_contract() {
        let ev = event();
        let lib = small_noise(6);
        let tr = &ev.stations[0].1;
        let (same, snr) = inject_noise(tr, &lib, &mut rng_from_seed(1), (f64::INFINITY, f64::INFINITY)).unwrap();
        assert_eq!(&same, tr);
        assert!(snr.is_infinite());

        let (noisy, snr) = inject_noise(tr, &lib, &mut rng_from_seed(7), (2.0, 20.0)).unwrap();
        assert!((2.0..=20.0).contains(&snr));
        let (seg, snr2) = noise_segment(tr.len(), tr.peak(), &lib, &mut rng_from_seed(7), (2.0, 20.0))
            .unwrap()
            .unwrap();
        assert_eq!(snr, snr2);
        let rms = (seg.iter().flatten().map(|v| v * v).sum::<f64>() / (3 * tr.len()) as f64).sqrt();
        assert!(((tr.peak() / rms) / snr - 1.0).abs() < 0.01);
        for c in 0..3 {
            for i in 0..tr.len() {
                assert!((noisy.data[c][i] - seg[c][i] - tr.data[c][i]).abs() < 1e-6);
            }
        }

        let short = NoiseLibrary {
            records: vec![[vec![0.0; 10], vec![0.0; 10], vec![0.0; 10]]],
            rate: 20.0,
            params: NoiseParams::default(),
        };
        assert!(matches!(
            inject_noise(tr, &short, &mut rng_from_seed(1), (2.0, 20.0)),
            Err(PsdrError::NoiseTooShort { .. })
        ));
    }

    #[test]
    fn dropout_floor_and_identity() {
        let ev = event();
        let mut cfg = PsdrConfig::default();
        cfg.keep_prob = (1.0, 1.0);
        assert_eq!(dropout_stations(&ev, &cfg, &mut rng_from_seed(1)).unwrap(), ev);

        cfg.keep_prob = (0.0, 0.1);
        for seed in 0..50 {
            let out = dropout_stations(&ev, &cfg, &mut rng_from_seed(seed)).unwrap();
            assert!(out.stations.len() >= cfg.min_stations);
            assert_eq!(out.label, ev.label);
        }
        let a = dropout_stations(&ev, &PsdrConfig::default(), &mut rng_from_seed(9)).unwrap();
        let b = dropout_stations(&ev, &PsdrConfig::default(), &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);

        let mut tiny = ev.clone();
        tiny.stations.truncate(3);
        assert!(matches!(
            dropout_stations(&tiny, &PsdrConfig::default(), &mut rng_from_seed(1)),
            Err(PsdrError::TooFewStations { have: 3, min: 5 })
        ));
    }

    #[test]
    fn augmentation_composition() {
        let ev = event();
        let same = augment_event(&ev, &PsdrConfig::identity(), None, &mut rng_from_seed(1)).unwrap();
        assert_eq!(same, ev);

        let lib = small_noise(8);
        let cfg = PsdrConfig::default();
        let a = augment_event(&ev, &cfg, Some(&lib), &mut rng_from_seed(2)).unwrap();
        let b = augment_event(&ev, &cfg, Some(&lib), &mut rng_from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, ev.label);
        assert!(a.stations.len() >= cfg.min_stations);
        assert!(matches!(
            augment_event(&ev, &cfg, None, &mut rng_from_seed(2)),
            Err(PsdrError::NoNoiseLibrary)
        ));
    }

    #[test]
    fn config_validation_and_json() {
        PsdrConfig::default().validate().unwrap();
        PsdrConfig::identity().validate().unwrap();
        let mut bad = PsdrConfig::default();
        bad.keep_prob = (0.9, 0.1);
        assert!(bad.validate().is_err());
        bad = PsdrConfig::default();
        bad.min_stations = 0;
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&PsdrConfig::identity()).unwrap();
        assert!(json.contains("\"inf\""));
        let back: PsdrConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PsdrConfig::identity());
        assert!(serde_json::from_str::<PsdrConfig>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn pseudo_real_is_out_of_library() {
        let base = base_model();
        let library = build_model_library(&base, 17, &mut rng_from_seed(1));
        let lib = small_noise(3);
        let st = stations();
        let params = PseudoRealParams {
            mt: sdr_to_mt(&DoubleCouple::new(100.0, 50.0, -60.0, 1e15)),
            geom: EventGeom {
                lat: 34.0,
                lon: -117.0,
                depth: 12.0,
                origin_time: 0.0,
            },
            stations: &st,
            base_model: &base,
            sim: SimConfig::default(),
            psdr: PsdrConfig::default(),
            noise: &lib,
        };
        let a = make_pseudo_real(&params, &mut rng_from_seed(4)).unwrap();
        let b = make_pseudo_real(&params, &mut rng_from_seed(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.domain, Domain::PseudoReal);
        assert!(library.iter().all(|m| m.id != a.model_id));
    }
}

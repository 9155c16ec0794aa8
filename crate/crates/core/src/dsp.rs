//! Causal Butterworth band-pass (bilinear transform, second-order sections)
//! and small spectral helpers.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// One biquad: `b0, b1, b2, a1, a2` with `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z_inv * z_inv;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z_inv * z_inv;
        num / den
    }
}

impl Sos {
    /// Band-pass from an order-`order` analog Butterworth prototype, so the
    /// digital filter has `2·order` poles. Gain is unity at `sqrt(lo·hi)`.
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, rate: f64) -> Self {
        assert!(order > 0 && 0.0 < lo && lo < hi && hi < rate / 2.0);
        let fs2 = 2.0 * rate;
        let w1 = fs2 * (PI * lo / rate).tan();
        let w2 = fs2 * (PI * hi / rate).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        let mut sections = Vec::with_capacity(order);
        for k in 0..order {
            // Upper-half-plane-free prototype pole in the left half plane.
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let half = proto * bw / 2.0;
            let disc = (half * half - w0sq).sqrt();
            for s in [half + disc, half - disc] {
                if s.im > 0.0 {
                    let z = (fs2 + s) / (fs2 - s);
                    sections.push(Biquad {
                        b: [1.0, 0.0, -1.0],
                        a: [-2.0 * z.re, z.norm_sqr()],
                    });
                }
            }
        }
        // Prototype poles at theta = pi exactly (odd orders) map to the real
        // axis and pair up with each other; collect any leftover real poles.
        if sections.len() < order {
            let mut reals = Vec::new();
            for k in 0..order {
                let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
                let proto = Complex64::from_polar(1.0, theta);
                let half = proto * bw / 2.0;
                let disc = (half * half - w0sq).sqrt();
                for s in [half + disc, half - disc] {
                    if s.im.abs() < 1e-12 {
                        reals.push(((fs2 + s) / (fs2 - s)).re);
                    }
                }
            }
            for pair in reals.chunks(2) {
                let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-(p1 + p2), p1 * p2],
                });
            }
        }
        let mut sos = Sos { sections };
        let g = sos.gain_at((lo * hi).sqrt(), rate);
        sos.sections[0].b = sos.sections[0].b.map(|v| v / g);
        sos
    }

    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / rate);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn gain_at(&self, freq: f64, rate: f64) -> f64 {
        self.response(freq, rate).norm()
    }

    /// Causal forward filtering (transposed direct form II per section).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }
}

/// Magnitudes of the real DFT bins `0..=n/2`.
pub fn rfft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// Linear resampling of `x` onto `n` points spanning the same index range.
pub fn resample_linear(x: &[f64], n: usize) -> Vec<f64> {
    if x.is_empty() || n == 0 {
        return vec![0.0; n];
    }
    if x.len() == 1 || n == 1 {
        return vec![x[0]; n];
    }
    let span = (x.len() - 1) as f64;
    (0..n)
        .map(|j| {
            let pos = j as f64 * span / (n - 1) as f64;
            let i = (pos.floor() as usize).min(x.len() - 2);
            let f = pos - i as f64;
            x[i] * (1.0 - f) + x[i + 1] * f
        })
        .collect()
}

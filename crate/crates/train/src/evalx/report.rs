//! Self-contained SVG rendering: parity scatters, Kagan histogram, azimuth
//! bars and beachball glyphs.

use crate::evalx::interpret::{AzimuthProfile, GradCam};
use crate::evalx::metrics::{MetricsReport, HIST_BINS, HIST_WIDTH};
use sourcenet_core::mtmath::{label_to_mt, MomentTensor, SourceLabel};
use std::fmt::Write as _;

pub const BEACHBALL_GRID: usize = 64;

/// Lower-hemisphere equal-area grid, row 0 at the top (north). Each cell
/// inside the unit circle holds whether P radiation there is compressional.
pub fn beachball_grid(mt: &MomentTensor, n: usize) -> Vec<Option<bool>> {
    let m = mt.matrix();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let east = (j as f64 + 0.5) / n as f64 * 2.0 - 1.0;
            let north = 1.0 - (i as f64 + 0.5) / n as f64 * 2.0;
            let r = (east * east + north * north).sqrt();
            if r > 1.0 {
                out.push(None);
                continue;
            }
            let inc = 2.0 * (r / std::f64::consts::SQRT_2).asin();
            let az = east.atan2(north);
            let g = [inc.sin() * az.cos(), inc.sin() * az.sin(), inc.cos()];
            let mut v = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    v += g[a] * m[(a, b)] * g[b];
                }
            }
            out.push(Some(v > 0.0));
        }
    }
    out
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Beachball glyph at `(cx, cy)` with radius `r`, merged into row runs.
fn beachball_svg(svg: &mut String, mt: &MomentTensor, cx: f64, cy: f64, r: f64, color: &str) {
    let n = BEACHBALL_GRID;
    let grid = beachball_grid(mt, n);
    let cell = 2.0 * r / n as f64;
    let _ = writeln!(
        svg,
        r#"<g><circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="white" stroke="black" stroke-width="0.8"/>"#
    );
    for i in 0..n {
        let mut j = 0;
        while j < n {
            if grid[i * n + j] == Some(true) {
                let start = j;
                while j < n && grid[i * n + j] == Some(true) {
                    j += 1;
                }
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                    cx - r + start as f64 * cell,
                    cy - r + i as f64 * cell,
                    (j - start) as f64 * cell,
                    cell
                );
            } else {
                j += 1;
            }
        }
    }
    svg.push_str("</g>\n");
}

pub struct ReportInput<'a> {
    pub title: String,
    pub metrics: Option<&'a MetricsReport>,
    pub profile: Option<&'a AzimuthProfile>,
    /// `(id, true label, predicted label)` for the beachball grid.
    pub pairs: Vec<(String, [f32; 6], [f32; 6])>,
}

fn panel_frame(svg: &mut String, x: f64, y: f64, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        svg,
        r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="none" stroke="gray"/><text x="{}" y="{}" font-size="12">{}</text>"#,
        x + 4.0,
        y - 4.0,
        esc(title)
    );
}

fn scatter(svg: &mut String, x0: f64, y0: f64, size: f64, pts: &[(f64, f64)], range: (f64, f64), title: &str) {
    panel_frame(svg, x0, y0, size, size, title);
    let (lo, hi) = range;
    let map = |v: f64| ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * size;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{}" x2="{}" y2="{y0}" stroke="silver"/>"#,
        y0 + size,
        x0 + size
    );
    for (t, p) in pts {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="steelblue" fill-opacity="0.6"/>"#,
            x0 + map(*t),
            y0 + size - map(*p)
        );
    }
}

fn bars(svg: &mut String, x0: f64, y0: f64, w: f64, h: f64, vals: &[Option<f64>], title: &str) {
    panel_frame(svg, x0, y0, w, h, title);
    let mx = vals.iter().flatten().cloned().fold(0.0, f64::max);
    let bw = w / vals.len().max(1) as f64;
    for (i, v) in vals.iter().enumerate() {
        match v {
            Some(v) if mx > 0.0 => {
                let bh = v / mx * (h - 4.0);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue"/>"#,
                    x0 + i as f64 * bw + 0.5,
                    y0 + h - bh,
                    (bw - 1.0).max(0.5),
                    bh
                );
            }
            None => {
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}" font-size="8" fill="gray">-</text>"#,
                    x0 + i as f64 * bw + bw / 2.0 - 2.0,
                    y0 + h - 2.0
                );
            }
            _ => {}
        }
    }
}

pub fn render_report(input: &ReportInput) -> String {
    let (w, h) = (900.0, 720.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="20" y="24" font-size="16">{}</text>"#,
        esc(&input.title)
    );
    let has_metrics = input.metrics.is_some_and(|m| m.n > 0);
    if !has_metrics && input.profile.is_none() && input.pairs.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="20" text-anchor="middle">no data</text>"#,
            w / 2.0,
            h / 2.0
        );
        svg.push_str("</svg>\n");
        return svg;
    }
    if let Some(m) = input.metrics.filter(|m| m.n > 0) {
        let _ = writeln!(
            svg,
            r#"<text x="20" y="44" font-size="12">n = {}, Kagan mean {:.1}°, median {:.1}°, Mw MAE {:.3}, dev MAE {:.3}</text>"#,
            m.n, m.kagan_mean, m.kagan_median, m.mw_mae, m.dev_mae_mean
        );
        let mw: Vec<(f64, f64)> = m.rows.iter().map(|r| (r.truth[5] as f64, r.pred[5] as f64)).collect();
        let lo = mw.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min).floor();
        let hi = mw.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max).ceil();
        scatter(
            &mut svg,
            30.0,
            70.0,
            180.0,
            &mw,
            (lo, hi.max(lo + 1.0)),
            "Mw: predicted vs true",
        );
        let dev: Vec<(f64, f64)> = m
            .rows
            .iter()
            .flat_map(|r| (0..5).map(move |k| (r.truth[k] as f64, r.pred[k] as f64)))
            .collect();
        scatter(&mut svg, 240.0, 70.0, 180.0, &dev, (-1.0, 1.0), "deviatoric components");
        let hist: Vec<Option<f64>> = m.kagan_hist.iter().map(|c| Some(*c as f64)).collect();
        bars(
            &mut svg,
            450.0,
            70.0,
            420.0,
            180.0,
            &hist,
            &format!("Kagan angle, {HIST_BINS} bins of {HIST_WIDTH}° over [0, 120]"),
        );
    } else {
        let _ = writeln!(svg, r#"<text x="30" y="160" font-size="14">no data</text>"#);
    }
    if let Some(p) = input.profile {
        let vals: Vec<Option<f64>> = p.bins.iter().map(|b| b.mean).collect();
        bars(
            &mut svg,
            30.0,
            300.0,
            390.0,
            140.0,
            &vals,
            "attention by station azimuth (30° bins from N)",
        );
    }
    let per_row = 6;
    for (k, (id, t, pr)) in input.pairs.iter().take(12).enumerate() {
        let cx = 480.0 + (k % per_row) as f64 * 68.0;
        let cy = 320.0 + (k / per_row) as f64 * 150.0;
        let lab = |y: &[f32; 6]| label_to_mt(&SourceLabel::from_array(&y.map(f64::from)));
        if let Ok(mt) = lab(t) {
            beachball_svg(&mut svg, &mt, cx, cy, 26.0, "black");
        }
        if let Ok(mt) = lab(pr) {
            beachball_svg(&mut svg, &mt, cx, cy + 60.0, 26.0, "royalblue");
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="8" text-anchor="middle">{}</text>"#,
            cx,
            cy + 98.0,
            esc(id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Saliency traces over the P and S windows with the station's vertical
/// waveform for reference.
pub fn render_gradcam(title: &str, cam: &GradCam, p_wave: &[f32], s_wave: &[f32]) -> String {
    let (w, h) = (720.0, 360.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="20" y="22" font-size="14">{}</text>"#, esc(title));
    for (row, (name, c, wave)) in [("P window", &cam.p, p_wave), ("S window", &cam.s, s_wave)]
        .iter()
        .enumerate()
    {
        let (x0, y0, pw, ph) = (40.0, 50.0 + row as f64 * 150.0, 640.0, 120.0);
        panel_frame(&mut svg, x0, y0, pw, ph, name);
        let n = c.len().max(2);
        let xs = |i: usize| x0 + i as f64 / (n - 1) as f64 * pw;
        let mut path = String::new();
        for (i, v) in c.iter().enumerate() {
            let _ = write!(path, "{:.1},{:.1} ", xs(i), y0 + ph - v * ph);
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{path}" fill="none" stroke="crimson" stroke-width="1.5"/>"#
        );
        let t = wave.len().min(c.len());
        let amp = wave[..t].iter().fold(0f32, |a, v| a.max(v.abs())).max(1e-12);
        let mut path = String::new();
        for (i, v) in wave[..t].iter().enumerate() {
            let _ = write!(
                path,
                "{:.1},{:.1} ",
                xs(i),
                y0 + ph / 2.0 - (*v / amp) as f64 * ph * 0.45
            );
        }
        let _ = writeln!(
            svg,
            r##"<polyline points="{path}" fill="none" stroke="#555" stroke-width="0.8"/>"##
        );
    }
    svg.push_str("</svg>\n");
    svg
}

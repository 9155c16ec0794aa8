use crate::runtime::{Model, Predictions};
use crate::TrainError;
use serde::Serialize;
use sourcenet_core::features::EventRecord;
use sourcenet_core::mtmath::{kagan_angle, label_to_mt, SourceLabel};
use std::fmt::Write as _;

pub const HIST_BINS: usize = 60;
pub const HIST_WIDTH: f64 = 2.0;
/// Kagan angle assigned when a label cannot be turned into a tensor.
pub const DEGENERATE_KAGAN: f64 = 120.0;

pub const METRICS_HEADER: &str = "event_id,n_stations,true_mw,pred_mw,true_m1,true_m2,true_m3,true_m4,true_m5,pred_m1,pred_m2,pred_m3,pred_m4,pred_m5,kagan_deg";

fn to_label(y: &[f32; 6]) -> SourceLabel {
    SourceLabel::from_array(&y.map(f64::from))
}

/// Kagan angle between the mechanisms encoded by two label vectors.
pub fn kagan_between(truth: &[f32; 6], pred: &[f32; 6]) -> f64 {
    match (label_to_mt(&to_label(truth)), label_to_mt(&to_label(pred))) {
        (Ok(a), Ok(b)) => kagan_angle(&a, &b).unwrap_or(DEGENERATE_KAGAN),
        _ => DEGENERATE_KAGAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRow {
    pub id: String,
    pub n_stations: usize,
    pub truth: [f32; 6],
    pub pred: [f32; 6],
    pub kagan: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mw_mae: f64,
    pub dev_mae: [f64; 5],
    pub dev_mae_mean: f64,
    pub kagan_mean: f64,
    pub kagan_median: f64,
    /// Counts in 2° bins over [0, 120].
    pub kagan_hist: Vec<usize>,
    pub rows: Vec<EventRow>,
}

impl MetricsReport {
    pub fn from_pairs(rows: Vec<EventRow>) -> Self {
        let n = rows.len();
        let mut hist = vec![0; HIST_BINS];
        let mut dev = [0.0; 5];
        let mut mw = 0.0;
        let mut k: Vec<f64> = Vec::with_capacity(n);
        for r in &rows {
            let bin = ((r.kagan / HIST_WIDTH).floor() as usize).min(HIST_BINS - 1);
            hist[bin] += 1;
            for (c, d) in dev.iter_mut().enumerate() {
                *d += (r.pred[c] - r.truth[c]).abs() as f64;
            }
            mw += (r.pred[5] - r.truth[5]).abs() as f64;
            k.push(r.kagan);
        }
        let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        dev.iter_mut().for_each(|d| *d *= inv);
        k.sort_by(f64::total_cmp);
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => k[n / 2],
            _ => 0.5 * (k[n / 2 - 1] + k[n / 2]),
        };
        Self {
            n,
            mw_mae: mw * inv,
            dev_mae: dev,
            dev_mae_mean: dev.iter().sum::<f64>() / 5.0,
            kagan_mean: k.iter().sum::<f64>() * inv,
            kagan_median: median,
            kagan_hist: hist,
            rows,
        }
    }
}

/// Eval-mode predictions for every record, paired with its label.
pub fn evaluate(model: &Model, records: &[&EventRecord]) -> Result<(MetricsReport, Predictions), TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let pred = model.predict(records, 32)?;
    let rows = records
        .iter()
        .zip(&pred.y)
        .map(|(r, y)| EventRow {
            id: r.id.clone(),
            n_stations: r.stations.len(),
            truth: r.label,
            pred: *y,
            kagan: kagan_between(&r.label, y),
        })
        .collect();
    Ok((MetricsReport::from_pairs(rows), pred))
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = write!(s, "{},{},{},{}", r.id, r.n_stations, r.truth[5], r.pred[5]);
        for v in r.truth[..5].iter().chain(&r.pred[..5]) {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", r.kagan);
    }
    s
}

/// Reads rows written by [`metrics_csv`] back into a report.
pub fn parse_metrics_csv(text: &str) -> Result<MetricsReport, TrainError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(TrainError::Format("metrics csv: unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| TrainError::Format(format!("metrics csv line {}: {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(bad("expected 15 fields"));
        }
        let num = |s: &str| s.parse::<f32>().map_err(|_| bad("bad number"));
        let mut truth = [0.0; 6];
        let mut pred = [0.0; 6];
        truth[5] = num(f[2])?;
        pred[5] = num(f[3])?;
        for c in 0..5 {
            truth[c] = num(f[4 + c])?;
            pred[c] = num(f[9 + c])?;
        }
        rows.push(EventRow {
            id: f[0].to_string(),
            n_stations: f[1].parse().map_err(|_| bad("bad station count"))?,
            truth,
            pred,
            kagan: f[14].parse().map_err(|_| bad("bad kagan"))?,
        });
    }
    Ok(MetricsReport::from_pairs(rows))
}

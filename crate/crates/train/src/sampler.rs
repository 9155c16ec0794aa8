//! Class-balancing weights over a binned deviatoric label space.

use std::collections::HashMap;

/// Bins each of the five deviatoric components into `bins` equal-width bins
/// over [-1, 1]; weight ∝ 1/(cell count + 1), scaled to mean 1.
pub fn balance_weights(labels: &[[f32; 6]], bins: usize) -> Vec<f64> {
    let cell = |l: &[f32; 6]| -> Vec<usize> {
        l[..5]
            .iter()
            .map(|v| {
                let u = ((*v as f64 + 1.0) / 2.0 * bins as f64).floor();
                (u.max(0.0) as usize).min(bins - 1)
            })
            .collect()
    };
    let cells: Vec<Vec<usize>> = labels.iter().map(cell).collect();
    let mut counts: HashMap<&[usize], usize> = HashMap::new();
    for c in &cells {
        *counts.entry(c.as_slice()).or_insert(0) += 1;
    }
    let raw: Vec<f64> = cells.iter().map(|c| 1.0 / (counts[c.as_slice()] + 1) as f64).collect();
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

//! Regression losses with their gradients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Loss {
    Mse,
    FocalL1 { gamma: f64, beta: f64 },
}

impl Loss {
    pub fn focal() -> Self {
        Loss::FocalL1 { gamma: 1.5, beta: 1.0 }
    }

    /// Per-element loss and its derivative with respect to the prediction.
    pub fn element(&self, pred: f64, target: f64) -> (f64, f64) {
        let e = pred - target;
        match *self {
            Loss::Mse => (e * e, 2.0 * e),
            Loss::FocalL1 { gamma, beta } => {
                let a = e.abs();
                if a == 0.0 {
                    return (0.0, 0.0);
                }
                let s = 1.0 / (1.0 + (-beta * a).exp());
                let w = 2.0 * s - 1.0;
                let dw = 2.0 * beta * s * (1.0 - s);
                let wg = w.powf(gamma);
                let dl = gamma * w.powf(gamma - 1.0) * dw * a + wg;
                (wg * a, dl * e.signum())
            }
        }
    }

    /// Mean loss over all elements and the gradient of that mean.
    pub fn eval(&self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), String> {
        if pred.len() != target.len() || pred.is_empty() {
            return Err(format!("loss shapes {} vs {}", pred.len(), target.len()));
        }
        let inv = 1.0 / pred.len() as f64;
        let mut total = 0.0;
        let grad = pred
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let (l, d) = self.element(*p, *t);
                total += l;
                d * inv
            })
            .collect();
        Ok((total * inv, grad))
    }
}

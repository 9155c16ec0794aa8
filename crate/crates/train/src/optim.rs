//! AdamW with decoupled weight decay and global-norm clipping.

use sourcenet_nn::{ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One update. Decay is applied to the weights before the Adam step.
    pub fn update(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &[Tensor<f32>],
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), String> {
        if grads.len() != params.tensors.len() || self.m.len() != grads.len() {
            return Err("optimizer state does not match parameters".into());
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let shrink = 1.0 - lr * weight_decay;
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.tensors[i];
            if g.shape != p.shape {
                return Err(format!("gradient shape mismatch for {}", params.names[i]));
            }
            let (m, v) = (&mut self.m[i].data, &mut self.v[i].data);
            for k in 0..p.data.len() {
                let gk = g.data[k] as f64;
                let mk = BETA1 * m[k] as f64 + (1.0 - BETA1) * gk;
                let vk = BETA2 * v[k] as f64 + (1.0 - BETA2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let upd = lr * (mk / bc1) / ((vk / bc2).sqrt() + EPS);
                p.data[k] = (p.data[k] as f64 * shrink - upd) as f32;
            }
        }
        Ok(())
    }
}

/// Scales gradients in place so their global L2 norm is at most `max`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|t| &t.data)
        .map(|v| (*v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max && norm.is_finite() {
        let s = (max / norm) as f32;
        grads.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

//! A loaded model (config, weights, input normalization) and batched
//! eval-mode inference.

use crate::TrainError;
use sourcenet_core::features::{apply_norm, EventRecord, NormStats};
use sourcenet_nn::checkpoint::Checkpoint;
use sourcenet_nn::graph::Graph;
use sourcenet_nn::model::{forward, Batch, Mode, ModelConfig};
use sourcenet_nn::ParamStore;

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub norm: NormStats,
}

/// Per-event outputs, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub y: Vec<[f32; 6]>,
    /// Pooling weights per station (attention pooling only).
    pub pool: Vec<Option<Vec<f32>>>,
    /// Attention received per station, averaged over layers and heads and
    /// scaled so the mean over stations is 1.
    pub received: Vec<Option<Vec<f32>>>,
    pub z: Vec<Vec<f32>>,
}

impl Model {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let params = ck.params()?;
        let norm = match ck.meta.get("norm") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| TrainError::Format(e.to_string()))?,
            None => NormStats::identity(),
        };
        Ok(Self {
            config: ck.model.clone(),
            params,
            norm,
        })
    }

    /// The record as the network sees it; records already normalized are
    /// passed through.
    pub fn prepare(&self, rec: &EventRecord) -> Result<EventRecord, TrainError> {
        if rec.normalized {
            return Ok(rec.clone());
        }
        if rec.window != self.config.window {
            return Err(TrainError::Config(format!(
                "event {} has window {}, model expects {}",
                rec.id, rec.window, self.config.window
            )));
        }
        apply_norm(rec, &self.norm).map_err(|e| TrainError::Format(e.to_string()))
    }

    pub fn predict(&self, records: &[&EventRecord], batch: usize) -> Result<Predictions, TrainError> {
        let mut out = Predictions::default();
        for chunk in records.chunks(batch.max(1)) {
            let prepared = chunk.iter().map(|r| self.prepare(r)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&EventRecord> = prepared.iter().collect();
            let b = Batch::<f32>::from_records(&refs)?;
            let mut g = Graph::new(&self.params);
            let f = forward(&mut g, &self.config, &b, Mode::Eval)?;
            let y = &g.value(f.y).data;
            let z = g.value(f.z);
            let d = z.shape[1];
            let weights = f.pool.and_then(|p| g.pool_weights(p));
            let probs: Vec<&[f32]> = f.attn.iter().filter_map(|a| g.attention_probs(*a)).collect();
            let heads = self.config.n_heads;
            for (e, rec) in refs.iter().enumerate() {
                let ns = rec.stations.len();
                out.y.push(std::array::from_fn(|k| y[e * 6 + k]));
                out.z.push(z.data[e * d..(e + 1) * d].to_vec());
                out.pool.push(weights.map(|w| w[e * b.n..e * b.n + ns].to_vec()));
                out.received.push((!probs.is_empty()).then(|| {
                    let mut r = vec![0f32; ns];
                    for p in &probs {
                        for h in 0..heads {
                            let base = (e * heads + h) * b.n * b.n;
                            for i in 0..ns {
                                for (j, rj) in r.iter_mut().enumerate() {
                                    *rj += p[base + i * b.n + j];
                                }
                            }
                        }
                    }
                    let s = 1.0 / (probs.len() * heads) as f32;
                    r.iter_mut().for_each(|v| *v *= s);
                    r
                }));
            }
        }
        Ok(out)
    }
}

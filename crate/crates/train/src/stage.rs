//! One training stage: split, epoch loop, validation, early stopping,
//! checkpoints and history.

use crate::config::{Stage, TrainConfig};
use crate::evalx::metrics::kagan_between;
use crate::optim::{clip_global_norm, AdamW};
use crate::runtime::Model;
use crate::sampler::balance_weights;
use crate::TrainError;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sourcenet_core::features::{fit_stats, EventRecord, NormStats};
use sourcenet_core::rng::{derive_rng, derive_seed, streams};
use sourcenet_nn::checkpoint::Checkpoint;
use sourcenet_nn::graph::Graph;
use sourcenet_nn::model::{forward, init_params, Batch, Mode, ModelConfig};
use sourcenet_nn::{ParamStore, Tensor};
use std::fmt::Write as _;
use std::path::Path;

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_kagan_mean,val_mw_mae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_kagan_mean: f64,
    pub val_mw_mae: f64,
}

pub fn history_csv(rows: &[EpochStats]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_kagan_mean, r.val_mw_mae
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle cut into train / validation / test by the fractions.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(seed, streams::SPLIT, 0));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

/// Where the stage's weights come from.
#[derive(Debug, Clone)]
pub enum Init {
    Fresh(ModelConfig),
    /// Start from a trained checkpoint (fine-tuning); its input normalization
    /// is kept.
    From(Checkpoint),
    /// Continue an interrupted stage from its `last.snck`.
    Resume(Checkpoint),
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
    pub split: Split,
    pub norm: NormStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Progress {
    stage: Stage,
    train: TrainConfig,
    norm: NormStats,
    split: Split,
    epoch: usize,
    adam_step: u64,
    best_val: f64,
    best_epoch: usize,
    bad_epochs: usize,
    history: Vec<EpochStats>,
}

struct State {
    model: Model,
    opt: AdamW,
    best: ParamStore<f32>,
    progress: Progress,
}

fn meta(p: &Progress) -> serde_json::Value {
    serde_json::to_value(p).expect("progress serializes")
}

fn best_checkpoint(s: &State) -> Checkpoint {
    Checkpoint::new(s.model.config.clone(), meta(&s.progress), &s.best, Vec::new())
}

fn last_checkpoint(s: &State) -> Checkpoint {
    let names = &s.model.params.names;
    let mut extra = Vec::new();
    for (prefix, ts) in [("adam.m.", &s.opt.m), ("adam.v.", &s.opt.v), ("best.", &s.best.tensors)] {
        for (n, t) in names.iter().zip(ts) {
            extra.push((format!("{prefix}{n}"), t.clone()));
        }
    }
    Checkpoint::new(s.model.config.clone(), meta(&s.progress), &s.model.params, extra)
}

fn restore_tensors(ck: &Checkpoint, prefix: &str, like: &ParamStore<f32>) -> Result<Vec<Tensor<f32>>, TrainError> {
    like.names
        .iter()
        .zip(&like.tensors)
        .map(|(n, t)| match ck.tensor(&format!("{prefix}{n}")) {
            Some(x) if x.shape == t.shape => Ok(x.clone()),
            _ => Err(TrainError::Format(format!("checkpoint lacks {prefix}{n}"))),
        })
        .collect()
}

fn init_state(records: &[EventRecord], cfg: &TrainConfig, init: Init) -> Result<State, TrainError> {
    if let Init::Resume(ck) = init {
        let mut progress: Progress =
            serde_json::from_value(ck.meta.clone()).map_err(|e| TrainError::Format(format!("resume: {e}")))?;
        // A resumed run may be extended; everything else must match.
        let same = TrainConfig {
            max_epochs: cfg.max_epochs,
            ..progress.train.clone()
        } == *cfg;
        if !same || progress.split.train.len() + progress.split.val.len() + progress.split.test.len() != records.len() {
            return Err(TrainError::Config(
                "resume checkpoint was made with a different config or dataset".into(),
            ));
        }
        progress.train = cfg.clone();
        let params = ck.params()?;
        let opt = AdamW {
            m: restore_tensors(&ck, "adam.m.", &params)?,
            v: restore_tensors(&ck, "adam.v.", &params)?,
            step: progress.adam_step,
        };
        let best = ParamStore {
            names: params.names.clone(),
            tensors: restore_tensors(&ck, "best.", &params)?,
        };
        let model = Model {
            config: ck.model.clone(),
            params,
            norm: progress.norm.clone(),
        };
        return Ok(State {
            model,
            opt,
            best,
            progress,
        });
    }
    let split = split_indices(records.len(), cfg.split, cfg.seed);
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let model = match init {
        Init::Fresh(mc) => {
            let train: Vec<&EventRecord> = split.train.iter().map(|&i| &records[i]).collect();
            let norm = if train.iter().all(|r| r.normalized) {
                NormStats::identity()
            } else {
                fit_stats(train.iter().copied())
                    .map_err(|e| TrainError::Format(e.to_string()))?
                    .0
            };
            let mut params = init_params(&mc, derive_seed(cfg.seed, streams::INIT, 0))?;
            // Start the magnitude output at the training mean.
            let mean_mw = train.iter().map(|r| r.label[5] as f64).sum::<f64>() / train.len() as f64;
            let bi = params.index("head.fc2.b").expect("head bias");
            params.tensors[bi].data[5] = mean_mw as f32;
            Model {
                config: mc,
                params,
                norm,
            }
        }
        Init::From(ck) => Model::from_checkpoint(&ck)?,
        Init::Resume(_) => unreachable!(),
    };
    let opt = AdamW::new(&model.params);
    let best = model.params.clone();
    let progress = Progress {
        stage: cfg.stage,
        train: cfg.clone(),
        norm: model.norm.clone(),
        split,
        epoch: 0,
        adam_step: 0,
        best_val: f64::INFINITY,
        best_epoch: 0,
        bad_epochs: 0,
        history: Vec::new(),
    };
    Ok(State {
        model,
        opt,
        best,
        progress,
    })
}

struct EvalSummary {
    loss: f64,
    kagan_mean: f64,
    mw_mae: f64,
}

fn validate(model: &Model, records: &[&EventRecord], cfg: &TrainConfig) -> Result<EvalSummary, TrainError> {
    let pred = model.predict(records, cfg.batch.max(32))?;
    let (mut loss, mut kagan, mut mae) = (0.0, 0.0, 0.0);
    for (rec, y) in records.iter().zip(&pred.y) {
        let p: Vec<f64> = y.iter().map(|v| *v as f64).collect();
        let t: Vec<f64> = rec.label.iter().map(|v| *v as f64).collect();
        loss += cfg.loss.eval(&p, &t).map_err(TrainError::Config)?.0;
        kagan += kagan_between(&rec.label, y);
        mae += (y[5] - rec.label[5]).abs() as f64;
    }
    let n = records.len() as f64;
    Ok(EvalSummary {
        loss: loss / n,
        kagan_mean: kagan / n,
        mw_mae: mae / n,
    })
}

fn epoch_order(state: &State, records: &[EventRecord], cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut rng = derive_rng(cfg.seed, streams::EPOCH, epoch as u64);
    let train = &state.progress.split.train;
    if cfg.weighted {
        let labels: Vec<[f32; 6]> = train.iter().map(|&i| records[i].label).collect();
        let w = balance_weights(&labels, cfg.bins_per_dim);
        let dist = WeightedIndex::new(&w).expect("positive finite weights");
        (0..train.len()).map(|_| train[dist.sample(&mut rng)]).collect()
    } else {
        let mut order = train.clone();
        order.shuffle(&mut rng);
        order
    }
}

/// Runs one stage to completion (max epochs or early stop). With `out_dir`,
/// writes `best.snck`, `last.snck` and `history.csv` after every epoch.
pub fn run_stage(
    records: &[EventRecord],
    cfg: &TrainConfig,
    init: Init,
    out_dir: Option<&Path>,
) -> Result<StageOutput, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if records.is_empty() {
        return Err(TrainError::EmptySplit("dataset"));
    }
    let mut state = init_state(records, cfg, init)?;
    let val: Vec<&EventRecord> = state.progress.split.val.iter().map(|&i| &records[i]).collect();
    let max_epochs = cfg.max_epochs.unwrap_or(usize::MAX);
    let stopped = |p: &Progress| p.bad_epochs >= cfg.patience;
    while state.progress.epoch < max_epochs && !stopped(&state.progress) {
        let epoch = state.progress.epoch + 1;
        let order = epoch_order(&state, records, cfg, epoch);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let prepared = chunk
                .iter()
                .map(|&i| state.model.prepare(&records[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&EventRecord> = prepared.iter().collect();
            let batch = Batch::<f32>::from_records(&refs)?;
            let dropout_seed = derive_seed(cfg.seed, streams::DROPOUT, state.opt.step);
            let mut grads = {
                let mut g = Graph::new(&state.model.params);
                let f = forward(&mut g, &state.model.config, &batch, Mode::Train { seed: dropout_seed })?;
                let pred: Vec<f64> = g.value(f.y).data.iter().map(|v| *v as f64).collect();
                let target: Vec<f64> = batch.labels.iter().map(|v| *v as f64).collect();
                let (loss, dl) = cfg.loss.eval(&pred, &target).map_err(TrainError::Config)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: bi,
                        events: chunk.iter().map(|&i| records[i].id.clone()).collect(),
                    });
                }
                total += loss * chunk.len() as f64;
                let seed: Vec<f32> = dl.iter().map(|v| *v as f32).collect();
                g.backward(f.y, &seed)?.params
            };
            if let Some(c) = cfg.clip {
                let norm = clip_global_norm(&mut grads, c);
                if !norm.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        batch: bi,
                        events: chunk.iter().map(|&i| records[i].id.clone()).collect(),
                    });
                }
            }
            state
                .opt
                .update(&mut state.model.params, &grads, cfg.lr, cfg.weight_decay)
                .map_err(TrainError::Config)?;
        }
        let v = validate(&state.model, &val, cfg)?;
        if !v.loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: usize::MAX,
                events: Vec::new(),
            });
        }
        let row = EpochStats {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss: v.loss,
            val_kagan_mean: v.kagan_mean,
            val_mw_mae: v.mw_mae,
        };
        log::info!(
            "{} epoch {epoch}: train {:.5} val {:.5} kagan {:.2} mw_mae {:.3}",
            cfg.stage.name(),
            row.train_loss,
            row.val_loss,
            row.val_kagan_mean,
            row.val_mw_mae
        );
        let p = &mut state.progress;
        p.history.push(row);
        p.epoch = epoch;
        p.adam_step = state.opt.step;
        if v.loss < p.best_val {
            p.best_val = v.loss;
            p.best_epoch = epoch;
            p.bad_epochs = 0;
            state.best = state.model.params.clone();
        } else {
            p.bad_epochs += 1;
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            best_checkpoint(&state).save(&dir.join("best.snck"))?;
            last_checkpoint(&state).save(&dir.join("last.snck"))?;
            std::fs::write(dir.join("history.csv"), history_csv(&state.progress.history))?;
        }
    }
    Ok(StageOutput {
        best: best_checkpoint(&state),
        history: state.progress.history.clone(),
        split: state.progress.split.clone(),
        norm: state.model.norm.clone(),
    })
}

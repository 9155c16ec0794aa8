//! The set-based source-inversion network: Siamese 1-D ResNet towers for the
//! P and S windows, a scalar MLP, a pre-norm transformer encoder over the
//! station set, attention pooling and a regression head.

use crate::graph::{Graph, GraphError, NodeId, ParamStore, Tensor};
use crate::real::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sourcenet_core::features::{EventRecord, CHANNELS, N_SCALARS};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("bad batch: {0}")]
    Batch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoScalar,
    #[serde(rename = "deepsets")]
    DeepSets,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "no_scalar" => Ok(Variant::NoScalar),
            "deepsets" => Ok(Variant::DeepSets),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub conv_kernel: usize,
    pub stem_channels: usize,
    /// One residual block per entry, each downsampling by 2.
    pub block_channels: Vec<usize>,
    pub tower_p: usize,
    pub tower_s: usize,
    pub tower_scalar: usize,
    pub scalar_hidden: usize,
    pub pool_hidden: usize,
    pub head_hidden: usize,
    pub variant: Variant,
    /// Share ResNet weights between the P and S towers.
    pub siamese: bool,
    /// Per-station RMS normalization of the time and spectral channel groups
    /// before the towers.
    pub input_norm: bool,
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 3,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            conv_kernel: 7,
            stem_channels: 64,
            block_channels: vec![128, 192, 192],
            tower_p: 48,
            tower_s: 48,
            tower_scalar: 32,
            scalar_hidden: 64,
            pool_hidden: 64,
            head_hidden: 64,
            variant: Variant::Full,
            siamese: true,
            input_norm: true,
            window: 120,
        }
    }
}

impl ModelConfig {
    /// Small configuration for CPU experiments.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            d_ff: 128,
            dropout: 0.1,
            stem_channels: 16,
            block_channels: vec![16, 32, 32],
            tower_p: 24,
            tower_s: 24,
            tower_scalar: 16,
            scalar_hidden: 64,
            pool_hidden: 32,
            head_hidden: 64,
            ..Self::default()
        }
    }

    /// Minimal configuration for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            dropout: 0.0,
            conv_kernel: 3,
            stem_channels: 3,
            block_channels: vec![4, 5, 5],
            tower_p: 3,
            tower_s: 3,
            tower_scalar: 2,
            scalar_hidden: 5,
            pool_hidden: 4,
            head_hidden: 5,
            window: 16,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    fn fusion_in(&self) -> usize {
        match self.variant {
            Variant::NoScalar => self.tower_p + self.tower_s,
            _ => self.tower_p + self.tower_s + self.tower_scalar,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.variant == Variant::Full && self.tower_p + self.tower_s + self.tower_scalar != self.d_model {
            return bad("tower dims must sum to d_model".into());
        }
        if self.block_channels.is_empty() || self.conv_kernel % 2 == 0 {
            return bad("need at least one residual block and an odd kernel".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.window < 1 << self.block_channels.len() {
            return bad("window too short for the downsampling stack".into());
        }
        Ok(())
    }

    fn tower_prefixes(&self) -> [&'static str; 2] {
        if self.siamese {
            ["resnet", "resnet"]
        } else {
            ["resnet_p", "resnet_s"]
        }
    }
}

/// Parameter names and shapes, in storage order, with fan-in (0 = gain/bias).
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize, f64)> {
    let mut out: Vec<(String, Vec<usize>, usize, f64)> = Vec::new();
    let mut w = |name: String, shape: Vec<usize>, fan: usize| out.push((name, shape, fan, 0.0));
    let k = cfg.conv_kernel;
    let towers: Vec<&str> = if cfg.siamese {
        vec!["resnet"]
    } else {
        vec!["resnet_p", "resnet_s"]
    };
    for t in towers {
        let c0 = cfg.stem_channels;
        w(format!("{t}.stem.w"), vec![c0, CHANNELS, k], CHANNELS * k);
        w(format!("{t}.stem.b"), vec![c0], 0);
        let mut cin = c0;
        for (i, &c) in cfg.block_channels.iter().enumerate() {
            w(format!("{t}.block{i}.conv1.w"), vec![c, cin, k], cin * k);
            w(format!("{t}.block{i}.conv1.b"), vec![c], 0);
            w(format!("{t}.block{i}.conv2.w"), vec![c, c, k], c * k);
            w(format!("{t}.block{i}.conv2.b"), vec![c], 0);
            w(format!("{t}.block{i}.short.w"), vec![c, cin, 1], cin);
            w(format!("{t}.block{i}.short.b"), vec![c], 0);
            cin = c;
        }
    }
    let c_last = *cfg.block_channels.last().unwrap();
    w("proj_p.w".into(), vec![cfg.tower_p, c_last], c_last);
    w("proj_p.b".into(), vec![cfg.tower_p], 0);
    w("proj_s.w".into(), vec![cfg.tower_s, c_last], c_last);
    w("proj_s.b".into(), vec![cfg.tower_s], 0);
    if cfg.variant != Variant::NoScalar {
        w("scalar.fc1.w".into(), vec![cfg.scalar_hidden, N_SCALARS], N_SCALARS);
        w("scalar.fc1.b".into(), vec![cfg.scalar_hidden], 0);
        w(
            "scalar.fc2.w".into(),
            vec![cfg.tower_scalar, cfg.scalar_hidden],
            cfg.scalar_hidden,
        );
        w("scalar.fc2.b".into(), vec![cfg.tower_scalar], 0);
    }
    let d = cfg.d_model;
    w("fusion.w".into(), vec![d, cfg.fusion_in()], cfg.fusion_in());
    w("fusion.b".into(), vec![d], 0);
    if cfg.variant == Variant::DeepSets {
        w("ds.fc1.w".into(), vec![d, d], d);
        w("ds.fc1.b".into(), vec![d], 0);
        w("ds.fc2.w".into(), vec![d, d], d);
        w("ds.fc2.b".into(), vec![d], 0);
    } else {
        for l in 0..cfg.n_layers {
            w(format!("enc{l}.ln1.g"), vec![d], 0);
            w(format!("enc{l}.ln1.b"), vec![d], 0);
            w(format!("enc{l}.qkv.w"), vec![3 * d, d], d);
            w(format!("enc{l}.qkv.b"), vec![3 * d], 0);
            w(format!("enc{l}.out.w"), vec![d, d], d);
            w(format!("enc{l}.out.b"), vec![d], 0);
            w(format!("enc{l}.ln2.g"), vec![d], 0);
            w(format!("enc{l}.ln2.b"), vec![d], 0);
            w(format!("enc{l}.ff1.w"), vec![cfg.d_ff, d], d);
            w(format!("enc{l}.ff1.b"), vec![cfg.d_ff], 0);
            w(format!("enc{l}.ff2.w"), vec![d, cfg.d_ff], cfg.d_ff);
            w(format!("enc{l}.ff2.b"), vec![d], 0);
        }
        w("enc.ln.g".into(), vec![d], 0);
        w("enc.ln.b".into(), vec![d], 0);
        w("pool.v.w".into(), vec![cfg.pool_hidden, d], d);
        w("pool.w.w".into(), vec![1, cfg.pool_hidden], cfg.pool_hidden);
    }
    w("head.fc1.w".into(), vec![cfg.head_hidden, d], d);
    w("head.fc1.b".into(), vec![cfg.head_hidden], 0);
    w("head.fc2.w".into(), vec![6, cfg.head_hidden], cfg.head_hidden);
    w("head.fc2.b".into(), vec![6], 0);
    out
}

/// Uniform `±sqrt(3 / fan_in)` weights, unit normalization gains, zero biases.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<f32>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, fan, _) in layout(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if fan > 0 {
            let bound = (3.0 / fan as f64).sqrt();
            (0..n)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) as f32 * bound as f32)
                .collect()
        } else if name.ends_with(".g") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        store.push(name, Tensor::new(shape, data));
    }
    Ok(store)
}

/// Checks that a parameter store matches the config's layout.
pub fn check_params<T: Real>(cfg: &ModelConfig, params: &ParamStore<T>) -> Result<(), ModelError> {
    let want = layout(cfg);
    if want.len() != params.tensors.len() {
        return Err(ModelError::Config(format!(
            "expected {} tensors, found {}",
            want.len(),
            params.tensors.len()
        )));
    }
    for ((name, shape, _, _), (n, t)) in want.iter().zip(params.names.iter().zip(&params.tensors)) {
        if name != n || shape != &t.shape {
            return Err(ModelError::Config(format!(
                "parameter {n} {:?} does not match {name} {shape:?}",
                t.shape
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Config(format!("parameter {n} is not finite")));
        }
    }
    Ok(())
}

/// Padded batch. Slot `e·n + j` holds station `j` of event `e`; stations
/// that are present but masked are encoded and then ignored downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub events: usize,
    pub n: usize,
    pub window: usize,
    /// Slot of each encoded station, in encoding order.
    pub rows: Vec<usize>,
    /// Per slot: an unmasked station.
    pub mask: Vec<bool>,
    /// `[6, M, T]` channel-major windows of the encoded stations.
    pub p: Vec<T>,
    pub s: Vec<T>,
    /// `[M, 20]`.
    pub scalars: Vec<T>,
    /// `[E, 6]`.
    pub labels: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_records(records: &[&EventRecord]) -> Result<Self, ModelError> {
        Self::build(records, None, None)
    }

    /// `masks[e][j] == false` keeps station `j` of event `e` in the input but
    /// masks it; `pad_to` pads every event to at least that many slots.
    pub fn build(
        records: &[&EventRecord],
        masks: Option<&[Vec<bool>]>,
        pad_to: Option<usize>,
    ) -> Result<Self, ModelError> {
        if records.is_empty() {
            return Err(ModelError::Batch("empty batch".into()));
        }
        let window = records[0].window;
        let n = records
            .iter()
            .map(|r| r.stations.len())
            .max()
            .unwrap_or(0)
            .max(pad_to.unwrap_or(0));
        let m: usize = records.iter().map(|r| r.stations.len()).sum();
        let mut rows = Vec::with_capacity(m);
        let mut mask = vec![false; records.len() * n];
        let mut p = vec![T::zero(); CHANNELS * m * window];
        let mut s = vec![T::zero(); CHANNELS * m * window];
        let mut scalars = Vec::with_capacity(m * N_SCALARS);
        let mut labels = Vec::with_capacity(records.len() * 6);
        let mut idx = 0;
        for (e, r) in records.iter().enumerate() {
            if r.window != window {
                return Err(ModelError::Batch("mixed window lengths".into()));
            }
            labels.extend(r.label.iter().map(|v| T::of(*v as f64)));
            for (j, st) in r.stations.iter().enumerate() {
                let slot = e * n + j;
                rows.push(slot);
                mask[slot] = masks.map_or(true, |ms| ms[e][j]);
                for c in 0..CHANNELS {
                    let dst = (c * m + idx) * window;
                    for t in 0..window {
                        p[dst + t] = T::of(st.p_win[c * window + t] as f64);
                        s[dst + t] = T::of(st.s_win[c * window + t] as f64);
                    }
                }
                scalars.extend(st.scalars.iter().map(|v| T::of(*v as f64)));
                idx += 1;
            }
            if !(0..n).any(|j| mask[e * n + j]) {
                return Err(ModelError::Graph(GraphError::AllMasked(e)));
            }
        }
        Ok(Self {
            events: records.len(),
            n,
            window,
            rows,
            mask,
            p,
            s,
            scalars,
            labels,
        })
    }

    pub fn n_encoded(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// No dropout; gradients reach the inputs.
    Eval,
    /// Dropout active, masks drawn from the given seed; inputs are constants.
    Train { seed: u64 },
}

/// A tower activation: node holding `[C, ·, L]` and the first sample index
/// belonging to this tower.
#[derive(Debug, Clone, Copy)]
pub struct TowerAct {
    pub node: NodeId,
    pub offset: usize,
}

/// Node handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[E, 6]` predictions.
    pub y: NodeId,
    /// `[E, D]` pooled event vectors.
    pub z: NodeId,
    /// `[E·N, D]` station embeddings before the set encoder.
    pub h: NodeId,
    /// Pooling node (attention pooling only).
    pub pool: Option<NodeId>,
    /// Attention nodes, one per encoder layer.
    pub attn: Vec<NodeId>,
    /// Raw window inputs and last residual-block activations, P then S.
    pub inputs: [TowerAct; 2],
    pub last_act: [TowerAct; 2],
    pub scalars: Option<NodeId>,
}

struct Dropper {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropper {
    fn apply<T: Real>(&mut self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let Some(rng) = self.rng.as_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let n = g.value(x).len();
        let factors = (0..n)
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        g.scale(x, factors)
    }
}

fn resnet<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, prefix: &str, x: NodeId) -> NodeId {
    let pad = cfg.conv_kernel / 2;
    let w = g.param_named(&format!("{prefix}.stem.w"));
    let b = g.param_named(&format!("{prefix}.stem.b"));
    let c = g.conv1d(x, w, b, 1, pad);
    let mut h = g.relu(c);
    for i in 0..cfg.block_channels.len() {
        let p = |s: &str| format!("{prefix}.block{i}.{s}");
        let (w1, b1) = (g.param_named(&p("conv1.w")), g.param_named(&p("conv1.b")));
        let (w2, b2) = (g.param_named(&p("conv2.w")), g.param_named(&p("conv2.b")));
        let (ws, bs) = (g.param_named(&p("short.w")), g.param_named(&p("short.b")));
        let a = g.conv1d(h, w1, b1, 2, pad);
        let a = g.relu(a);
        let a = g.conv1d(a, w2, b2, 1, pad);
        let sc = g.conv1d(h, ws, bs, 2, 0);
        let sum = g.add(a, sc);
        h = g.relu(sum);
    }
    h
}

fn linear<T: Real>(g: &mut Graph<'_, T>, x: NodeId, name: &str, bias: bool) -> NodeId {
    let w = g.param_named(&format!("{name}.w"));
    let b = bias.then(|| g.param_named(&format!("{name}.b")));
    g.linear(x, w, b)
}

fn input_tensor<T: Real>(data: Vec<T>, m: usize, t: usize) -> Tensor<T> {
    Tensor::new(vec![CHANNELS, m, t], data)
}

/// Builds the forward graph for a batch.
pub fn forward<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    batch: &Batch<T>,
    mode: Mode,
) -> Result<Forward, ModelError> {
    if batch.window != cfg.window {
        return Err(ModelError::Batch(format!(
            "window {} does not match model window {}",
            batch.window, cfg.window
        )));
    }
    let m = batch.n_encoded();
    let t = batch.window;
    let mut drop = Dropper {
        rate: cfg.dropout,
        rng: match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        },
    };
    let groups = vec![(0, 3), (3, 6)];
    // Input gradients are only needed for analysis, never for training.
    let track = matches!(mode, Mode::Eval);
    let feed = |g: &mut Graph<'_, T>, t: Tensor<T>| if track { g.input(t) } else { g.constant(t) };
    let [pre_p, pre_s] = cfg.tower_prefixes();
    let (inputs, last_act, pooled_p, pooled_s) = if cfg.siamese {
        let mut both = Vec::with_capacity(batch.p.len() * 2);
        for c in 0..CHANNELS {
            both.extend_from_slice(&batch.p[c * m * t..(c + 1) * m * t]);
            both.extend_from_slice(&batch.s[c * m * t..(c + 1) * m * t]);
        }
        let x = feed(g, input_tensor(both, 2 * m, t));
        let xn = if cfg.input_norm { g.group_rms(x, groups) } else { x };
        let act = resnet(g, cfg, pre_p, xn);
        let pooled = g.time_mean(act);
        let pp = g.slice_rows(pooled, 0, m);
        let ps = g.slice_rows(pooled, m, m);
        (
            [TowerAct { node: x, offset: 0 }, TowerAct { node: x, offset: m }],
            [TowerAct { node: act, offset: 0 }, TowerAct { node: act, offset: m }],
            pp,
            ps,
        )
    } else {
        let xp = feed(g, input_tensor(batch.p.clone(), m, t));
        let xs = feed(g, input_tensor(batch.s.clone(), m, t));
        let (np, ns) = if cfg.input_norm {
            (g.group_rms(xp, groups.clone()), g.group_rms(xs, groups))
        } else {
            (xp, xs)
        };
        let ap = resnet(g, cfg, pre_p, np);
        let as_ = resnet(g, cfg, pre_s, ns);
        let pp = g.time_mean(ap);
        let ps = g.time_mean(as_);
        (
            [TowerAct { node: xp, offset: 0 }, TowerAct { node: xs, offset: 0 }],
            [TowerAct { node: ap, offset: 0 }, TowerAct { node: as_, offset: 0 }],
            pp,
            ps,
        )
    };
    let fp = linear(g, pooled_p, "proj_p", true);
    let fp = g.relu(fp);
    let fs = linear(g, pooled_s, "proj_s", true);
    let fs = g.relu(fs);
    let mut parts = vec![fp, fs];
    let mut scalar_node = None;
    if cfg.variant != Variant::NoScalar {
        let sx = feed(g, Tensor::new(vec![m, N_SCALARS], batch.scalars.clone()));
        scalar_node = Some(sx);
        let a = linear(g, sx, "scalar.fc1", true);
        let a = g.relu(a);
        let a = linear(g, a, "scalar.fc2", true);
        parts.push(g.relu(a));
    }
    let cat = g.concat(&parts);
    let h_compact = linear(g, cat, "fusion", true);
    let slots = batch.events * batch.n;
    let h = g.scatter_rows(h_compact, batch.rows.clone(), slots);

    let mut attn = Vec::new();
    let (z, pool) = if cfg.variant == Variant::DeepSets {
        let a = linear(g, h, "ds.fc1", true);
        let a = g.relu(a);
        let a = linear(g, a, "ds.fc2", true);
        let a = g.relu(a);
        (g.masked_mean(a, batch.events, batch.n, batch.mask.clone())?, None)
    } else {
        let mut x = h;
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("enc{l}.{s}");
            let (g1, b1) = (g.param_named(&p("ln1.g")), g.param_named(&p("ln1.b")));
            let a = g.layer_norm(x, g1, b1);
            let qkv = linear(g, a, &p("qkv"), true);
            let at = g.attention(qkv, batch.events, batch.n, cfg.n_heads, batch.mask.clone())?;
            attn.push(at);
            let o = linear(g, at, &p("out"), true);
            let o = drop.apply(g, o);
            let o = g.row_mask(o, batch.mask.clone());
            x = g.add(x, o);
            let (g2, b2) = (g.param_named(&p("ln2.g")), g.param_named(&p("ln2.b")));
            let a = g.layer_norm(x, g2, b2);
            let f = linear(g, a, &p("ff1"), true);
            let f = g.relu(f);
            let f = drop.apply(g, f);
            let f = linear(g, f, &p("ff2"), true);
            let f = drop.apply(g, f);
            let f = g.row_mask(f, batch.mask.clone());
            x = g.add(x, f);
        }
        let (gf, bf) = (g.param_named("enc.ln.g"), g.param_named("enc.ln.b"));
        let x = g.layer_norm(x, gf, bf);
        let v = linear(g, x, "pool.v", false);
        let v = g.tanh(v);
        let s = linear(g, v, "pool.w", false);
        let z = g.softmax_pool(x, s, batch.events, batch.n, batch.mask.clone())?;
        (z, Some(z))
    };
    let a = linear(g, z, "head.fc1", true);
    let a = g.relu(a);
    let a = linear(g, a, "head.fc2", true);
    let y = g.partial_tanh(a, 5);
    Ok(Forward {
        y,
        z,
        h,
        pool,
        attn,
        inputs,
        last_act,
        scalars: scalar_node,
    })
}

/// Eval-mode predictions `[E, 6]` and, if present, pooling weights per slot.
pub fn predict<T: Real>(
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    batch: &Batch<T>,
) -> Result<(Vec<T>, Option<Vec<T>>), ModelError> {
    let mut g = Graph::new(params);
    let f = forward(&mut g, cfg, batch, Mode::Eval)?;
    let y = g.value(f.y).data.clone();
    let w = f.pool.and_then(|p| g.pool_weights(p).map(|w| w.to_vec()));
    Ok((y, w))
}

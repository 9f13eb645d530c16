//! Behavioral cloning of the DP oracle.
//!
//! States are 13 normalized features (the feature list below is this crate's
//! own choice; only the dimension and the [0, 1] range are fixed):
//!
//! | index | feature |
//! |-------|---------|
//! | 0     | soc / 100 |
//! | 1..4  | fraction of radar-disc cells that are Low, Mid, High |
//! | 4..7  | fraction of lookahead cells that are Low, Mid, High (0 when empty) |
//! | 7..10 | distance from nadir to the nearest radar cell of each class / radar radius (1 if absent) |
//! | 10..13| (columns ahead - 1) / lookahead length of the first lookahead column holding each class (1 if absent) |
//!
//! The network is a 13-32-16-8-4-1 perceptron with ReLU hidden layers and a
//! sigmoid output giving the probability of sampling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dporacle::{expert_action, DpTable};
use crate::error::{Error, Result};
use crate::satsim::{Action, Observation, Policy, Satellite, SOC_LEVELS};
use crate::worldgen::{EnvStrip, RewardClass};
use crate::{seeded_rng, SeedRng};

pub const N_FEATURES: usize = 13;
pub const ARCHITECTURE: [usize; 6] = [N_FEATURES, 32, 16, 8, 4, 1];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcFeatures(pub [f64; N_FEATURES]);

impl BcFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Highest class present in the radar disc.
    pub fn dominant_radar_class(&self) -> Option<RewardClass> {
        RewardClass::ALL
            .into_iter()
            .rev()
            .find(|c| self.0[1 + c.index()] > 0.0)
    }
}

pub fn featurize_bc(obs: &Observation<'_>) -> BcFeatures {
    let fp = obs.footprint();
    let mut f = [0.0; N_FEATURES];
    f[0] = obs.soc as f64 / 100.0;

    let mut radar = [0usize; 3];
    let mut nearest = [u32::MAX; 3];
    for (o, c) in obs.radar_cells() {
        radar[c.index()] += 1;
        // Cells arrive in distance order, so the first hit is the nearest.
        if nearest[c.index()] == u32::MAX {
            nearest[c.index()] = o.dist2;
        }
    }
    let n_radar = radar.iter().sum::<usize>().max(1) as f64;

    let mut ahead = [0usize; 3];
    let mut earliest = [usize::MAX; 3];
    for (k, _, c) in obs.lookahead_cells() {
        ahead[c.index()] += 1;
        earliest[c.index()] = earliest[c.index()].min(k);
    }
    let n_ahead = ahead.iter().sum::<usize>();

    let radius = fp.radar_radius_px().max(1) as f64;
    let look_len = fp.lookahead_len_px().max(1) as f64;
    for k in 0..3 {
        f[1 + k] = radar[k] as f64 / n_radar;
        f[4 + k] = if n_ahead == 0 { 0.0 } else { ahead[k] as f64 / n_ahead as f64 };
        f[7 + k] = if nearest[k] == u32::MAX {
            1.0
        } else {
            ((nearest[k] as f64).sqrt() / radius).min(1.0)
        };
        f[10 + k] = if earliest[k] == usize::MAX {
            1.0
        } else {
            ((earliest[k] - 1) as f64 / look_len).min(1.0)
        };
    }
    BcFeatures(f)
}

/// Charge-independent feature columns for a whole strip (index `t - 1`).
/// Entry 0 is left at zero and filled with the charge per query.
pub fn column_features(strip: &EnvStrip, sat: &Satellite) -> Vec<BcFeatures> {
    (1..=strip.length())
        .map(|t| featurize_bc(&Observation::new(strip, sat, t, 0)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// First eight digest bytes of the source strip.
    pub strip: u64,
    pub t: u32,
    pub soc: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demo {
    pub features: BcFeatures,
    /// 1 = sample, 0 = off.
    pub action: u8,
    /// Both actions have the same oracle value, so the label is only the
    /// tie-break convention.
    pub tie: bool,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Demo>,
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn extend(&mut self, other: DemoSet) {
        self.demos.extend(other.demos);
    }

    /// Drops demonstrations whose label carries no preference.
    pub fn without_ties(&self) -> DemoSet {
        DemoSet {
            demos: self.demos.iter().filter(|d| !d.tie).cloned().collect(),
        }
    }

    pub fn tie_count(&self) -> usize {
        self.demos.iter().filter(|d| d.tie).count()
    }

    /// Counts per dominant radar class (Low, Mid, High).
    pub fn group_sizes(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for d in &self.demos {
            if let Some(c) = d.features.dominant_radar_class() {
                n[c.index()] += 1;
            }
        }
        n
    }

    /// Seeded random subset holding `fraction` of the demonstrations.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<DemoSet> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::param(format!("fraction {fraction} outside (0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeded_rng(seed));
        let keep = ((self.len() as f64 * fraction).round() as usize).max(1).min(self.len());
        idx.truncate(keep);
        idx.sort_unstable();
        Ok(DemoSet {
            demos: idx.into_iter().map(|i| self.demos[i].clone()).collect(),
        })
    }
}

/// Keeps each `(t, soc)` oracle decision with probability `keep_prob`.
pub fn collect_demonstrations(
    table: &DpTable,
    strip: &EnvStrip,
    sat: &Satellite,
    keep_prob: f64,
    seed: u64,
) -> Result<DemoSet> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::param(format!("keep_prob {keep_prob} outside (0, 1]")));
    }
    let digest = strip.digest();
    if table.strip_digest() != digest || table.n_t() != strip.length() {
        return Err(Error::Consistency(
            "DP table was built for a different strip".into(),
        ));
    }
    let strip_id = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let columns = column_features(strip, sat);
    let mut rng = seeded_rng(seed);
    let mut set = DemoSet::default();
    for t in 1..=strip.length() {
        for soc in 0..SOC_LEVELS as u8 {
            if rng.random::<f64>() >= keep_prob {
                continue;
            }
            let mut features = columns[t - 1];
            features.0[0] = soc as f64 / 100.0;
            let action = expert_action(table, t, soc)?.index() as u8;
            let tie = sat.energy.can_sample(soc)
                && table.value(t, soc, Action::Off)? == table.value(t, soc, Action::SAMPLE)?;
            set.demos.push(Demo {
                features,
                action,
                tie,
                provenance: Provenance {
                    strip: strip_id,
                    t: t as u32,
                    soc,
                },
            });
        }
    }
    Ok(set)
}

/// Equalizes the groups keyed by the best class visible in the radar disc by
/// downsampling each to the smallest non-empty group, then shuffles.
pub fn balance_dataset(demos: &DemoSet, seed: u64) -> DemoSet {
    let mut groups: [Vec<&Demo>; 3] = Default::default();
    for d in &demos.demos {
        if let Some(c) = d.features.dominant_radar_class() {
            groups[c.index()].push(d);
        }
    }
    if groups.iter().any(|g| g.is_empty()) {
        log::warn!(
            "balance_dataset: empty class group (sizes {:?}); balancing the rest",
            groups.each_ref().map(|g| g.len())
        );
    }
    let target = groups
        .iter()
        .map(|g| g.len())
        .filter(|n| *n > 0)
        .min()
        .unwrap_or(0);
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(3 * target);
    for g in groups.iter_mut() {
        g.shuffle(&mut rng);
        out.extend(g.iter().take(target).map(|d| (*d).clone()));
    }
    out.shuffle(&mut rng);
    DemoSet { demos: out }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *out_o = self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Multilayer perceptron: ReLU hidden layers, sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    CrossEntropy,
    SquaredError,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut m = Self::zeros(sizes);
        for l in &mut m.layers {
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        m
    }

    pub fn behavioral_cloning(seed: u64) -> Self {
        Self::init(&ARCHITECTURE, seed)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters in layer order, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::param("parameter vector has the wrong length"));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[i..i + nw]);
            i += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    /// Pre-activations of every layer for one input. The last entry holds the output logit.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.outputs];
            l.affine(&act, &mut z);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        let mut buf = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            buf.resize(l.outputs, 0.0);
            l.affine(&act, &mut buf);
            if i + 1 < self.layers.len() {
                for v in &mut buf {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut act, &mut buf);
        }
        act[0]
    }

    /// Probability of sampling.
    pub fn forward(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
            for v in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parameters come back at `f32` precision.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"DTM1\""));
        }
        let mut off = 4;
        let next_u32 = |off: &mut usize| -> Result<u32> {
            let v = bytes
                .get(*off..*off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::format(*off as u64, "truncated model file"))?;
            *off += 4;
            Ok(v)
        };
        let n_layers = next_u32(&mut off)? as usize;
        if n_layers > 64 {
            return Err(Error::format(4, format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        let mut prev_out: Option<usize> = None;
        for _ in 0..n_layers {
            let at = off;
            let inputs = next_u32(&mut off)? as usize;
            let outputs = next_u32(&mut off)? as usize;
            if inputs == 0 || outputs == 0 || inputs > 1 << 16 || outputs > 1 << 16 {
                return Err(Error::format(at as u64, "bad layer dimensions"));
            }
            if prev_out.is_some_and(|p| p != inputs) {
                return Err(Error::format(at as u64, "layer sizes do not chain"));
            }
            prev_out = Some(outputs);
            let mut l = Dense::zeros(inputs, outputs);
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = f32::from_bits(next_u32(&mut off)?) as f64;
            }
            layers.push(l);
        }
        if off != bytes.len() {
            return Err(Error::format(off as u64, "trailing bytes after model"));
        }
        Ok(Mlp { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"DTM1";

/// Probability of sampling for one feature vector.
pub fn mlp_forward(model: &Mlp, x: &BcFeatures) -> f64 {
    model.forward(x.as_slice())
}

/// Mean loss of one example given its output logit.
fn example_loss(loss: Loss, z: f64, y: f64) -> f64 {
    match loss {
        // softplus(z) - y z, stable for large |z|
        Loss::CrossEntropy => z.max(0.0) - y * z + (-z.abs()).exp().ln_1p(),
        Loss::SquaredError => {
            let d = sigmoid(z) - y;
            d * d
        }
    }
}

/// Mean loss over `(features, label)` pairs.
pub fn batch_loss(model: &Mlp, batch: &[(&[f64], f64)], loss: Loss) -> f64 {
    let s: f64 = batch
        .iter()
        .map(|(x, y)| example_loss(loss, model.logit(x), *y))
        .sum();
    s / batch.len().max(1) as f64
}

/// Mean loss and its gradient with respect to [`Mlp::params`] order.
pub fn mlp_grad(model: &Mlp, batch: &[(&[f64], f64)], loss: Loss) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let offsets: Vec<usize> = model
        .layers
        .iter()
        .scan(0, |acc, l| {
            let o = *acc;
            *acc += l.weights.len() + l.biases.len();
            Some(o)
        })
        .collect();
    let n = batch.len().max(1) as f64;
    let mut total = 0.0;
    for (x, y) in batch {
        let pre = model.pre_activations(x);
        let z = pre.last().unwrap()[0];
        if !z.is_finite() {
            return Err(Error::Numeric(format!("non-finite output logit {z}")));
        }
        total += example_loss(loss, z, *y);
        let p = sigmoid(z);
        let mut delta = vec![match loss {
            Loss::CrossEntropy => p - y,
            Loss::SquaredError => 2.0 * (p - y) * p * (1.0 - p),
        } / n];
        for li in (0..model.layers.len()).rev() {
            let l = &model.layers[li];
            let input: Vec<f64> = if li == 0 {
                x.to_vec()
            } else {
                pre[li - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let base = offsets[li];
            for o in 0..l.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[base + o * l.inputs..base + (o + 1) * l.inputs];
                for (gi, xi) in g.iter_mut().zip(&input) {
                    *gi += d * xi;
                }
                grad[base + l.weights.len() + o] += d;
            }
            if li > 0 {
                let mut prev = vec![0.0; l.inputs];
                for o in 0..l.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    for (pi, w) in prev.iter_mut().zip(row) {
                        *pi += d * w;
                    }
                }
                for (pi, z) in prev.iter_mut().zip(&pre[li - 1]) {
                    if *z <= 0.0 {
                        *pi = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    Ok((total / n, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub keep_prob: f64,
    pub loss: Loss,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            keep_prob: 0.01,
            loss: Loss::CrossEntropy,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::param("keep_prob must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::param("learning rate, batch size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-epoch losses from [`train_bc`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch training with a seeded train/validation split and early
/// stopping. Returns the parameters with the lowest validation loss.
pub fn train_bc(demos: &DemoSet, params: &TrainParams) -> Result<(Mlp, TrainHistory)> {
    params.validate()?;
    if demos.len() < params.batch_size {
        return Err(Error::param(format!(
            "{} demonstrations is fewer than one batch of {}",
            demos.len(),
            params.batch_size
        )));
    }
    let mut rng: SeedRng = seeded_rng(params.seed);
    let mut idx: Vec<usize> = (0..demos.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = (demos.len() as f64 * params.validation_fraction).round() as usize;
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let pair = |i: usize| -> (&[f64], f64) {
        let d = &demos.demos[i];
        (d.features.as_slice(), d.action as f64)
    };
    let val: Vec<_> = val_idx.iter().map(|&i| pair(i)).collect();
    let train_all: Vec<_> = train_idx.iter().map(|&i| pair(i)).collect();

    let mut model = Mlp::behavioral_cloning(params.seed);
    let mut theta = model.params();
    let mut adam = Adam::new(theta.len(), params.learning_rate);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;

    for epoch in 0..params.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(params.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| pair(i)).collect();
            let (l, g) = mlp_grad(&model, &batch, params.loss)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("training diverged in epoch {}", epoch + 1)));
            }
            adam.apply(&mut theta, &g);
            model.set_params(&theta)?;
            epoch_loss += l;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);
        let val_loss = if val.is_empty() {
            batch_loss(&model, &train_all, params.loss)
        } else {
            batch_loss(&model, &val, params.loss)
        };
        history.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, model.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}

/// Fraction of demonstrations where the thresholded output matches the expert.
pub fn agreement(model: &Mlp, demos: &DemoSet) -> f64 {
    let hits = demos
        .demos
        .iter()
        .filter(|d| (mlp_forward(model, &d.features) >= 0.5) == (d.action == 1))
        .count();
    hits as f64 / demos.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BcMode {
    #[default]
    Stochastic,
    Deterministic,
}

impl BcMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stochastic" => Some(BcMode::Stochastic),
            "deterministic" => Some(BcMode::Deterministic),
            _ => None,
        }
    }
}

pub struct BcPolicy {
    model: Mlp,
    mode: BcMode,
    seed: u64,
    rng: SeedRng,
}

pub fn bc_policy(model: Mlp, mode: BcMode, seed: u64) -> BcPolicy {
    BcPolicy {
        model,
        mode,
        seed,
        rng: seeded_rng(seed),
    }
}

impl BcPolicy {
    pub fn model(&self) -> &Mlp {
        &self.model
    }
}

impl Policy for BcPolicy {
    fn name(&self) -> &str {
        "behavioral_cloning"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Action> {
        let p = mlp_forward(&self.model, &featurize_bc(obs));
        if !p.is_finite() {
            return Err(Error::Numeric(format!("policy output {p}")));
        }
        let fire = match self.mode {
            BcMode::Stochastic => self.rng.random::<f64>() < p,
            BcMode::Deterministic => p >= 0.5,
        };
        Ok(if fire && obs.can_sample() { Action::SAMPLE } else { Action::Off })
    }

    fn reset(&mut self) {
        self.rng = seeded_rng(self.seed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dporacle::build_dp_table;
    use crate::satsim::{observe, run_episode, Footprint, SatState};
    use crate::worldgen::{generate_synthetic, GenParams};
    use proptest::prelude::*;
    use rand::Rng;

    fn approx(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn features_uniform_low() {
        let sat = Satellite::default();
        let strip = EnvStrip::filled(31, 200, RewardClass::Low).unwrap();
        let f = featurize_bc(&observe(&strip, &sat, SatState { t: 50, soc: 50 }).unwrap());
        approx(&f.0, &[0.5, 1., 0., 0., 1., 0., 0., 0., 1., 1., 0., 1., 1.]);

        let high = EnvStrip::filled(31, 200, RewardClass::High).unwrap();
        let f = featurize_bc(&observe(&high, &sat, SatState { t: 50, soc: 100 }).unwrap());
        approx(&f.0, &[1.0, 0., 0., 1., 0., 0., 1., 1., 1., 0., 1., 1., 0.]);
    }

    #[test]
    fn features_at_horizon() {
        let sat = Satellite::default();
        let strip = EnvStrip::filled(31, 200, RewardClass::Mid).unwrap();
        let f = featurize_bc(&observe(&strip, &sat, SatState { t: 200, soc: 0 }).unwrap());
        approx(&f.0, &[0., 0., 1., 0., 0., 0., 0., 1., 0., 1., 1., 1., 1.]);
    }

    #[test]
    fn features_distance_and_earliest() {
        let sat = Satellite::default();
        let mut strip = EnvStrip::filled(31, 200, RewardClass::Low).unwrap();
        strip.set(15 + 3, 49 + 4, RewardClass::High); // 5 px from nadir at t = 50
        strip.set(7, 49 + 20, RewardClass::Mid); // 20 columns ahead
        let f = featurize_bc(&observe(&strip, &sat, SatState { t: 50, soc: 0 }).unwrap());
        assert!((f.0[9] - 5.0 / 15.0).abs() < 1e-12);
        assert!((f.0[11] - 19.0 / 57.0).abs() < 1e-12);
        assert!((f.0[12] - 3.0 / 57.0).abs() < 1e-12);
        assert_eq!(f.0[8], 1.0);
        assert_eq!(f.dominant_radar_class(), Some(RewardClass::High));
    }

    #[test]
    fn architecture_parameter_count() {
        let m = Mlp::behavioral_cloning(1);
        assert_eq!(m.param_count(), 13 * 32 + 32 + 32 * 16 + 16 + 16 * 8 + 8 + 8 * 4 + 4 + 4 + 1);
        assert_eq!(m.param_count(), 1153);
        assert_eq!(m.input_dim(), 13);
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = Mlp::zeros(&ARCHITECTURE);
        for x in [[0.0; 13], [1.0; 13], [0.3; 13]] {
            assert_eq!(m.forward(&x), 0.5);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded_rng(4);
        let model = Mlp::behavioral_cloning(8);
        let xs: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..13).map(|_| rng.random::<f64>()).collect())
            .collect();
        let batch: Vec<(&[f64], f64)> = xs
            .iter()
            .map(|x| (x.as_slice(), rng.random_range(0..2) as f64))
            .collect();
        for loss in [Loss::CrossEntropy, Loss::SquaredError] {
            let (_, g) = mlp_grad(&model, &batch, loss).unwrap();
            let theta = model.params();
            let h = 1e-5;
            let mut probe = model.clone();
            let mut worst: f64 = 0.0;
            for i in 0..theta.len() {
                let mut p = theta.clone();
                p[i] += h;
                probe.set_params(&p).unwrap();
                let up = batch_loss(&probe, &batch, loss);
                p[i] -= 2.0 * h;
                probe.set_params(&p).unwrap();
                let down = batch_loss(&probe, &batch, loss);
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "{loss:?}: {worst}");
        }
    }

    #[test]
    fn demos_full_enumeration_and_determinism() {
        let sat = Satellite {
            footprint: Footprint::new(0, 1),
            ..Satellite::default()
        };
        let strip = EnvStrip::from_rows(&["LH"]).unwrap();
        let table = build_dp_table(&strip, &sat).unwrap();
        let all = collect_demonstrations(&table, &strip, &sat, 1.0, 0).unwrap();
        assert_eq!(all.len(), 202);
        let d = all
            .demos
            .iter()
            .find(|d| d.provenance.t == 1 && d.provenance.soc == 5)
            .unwrap();
        // From soc 5, sampling Low leaves too little charge for the High next step.
        assert_eq!(d.action, 0);
        assert!(!d.tie);
        // At t = 2 the last step has no future, so Sample is strictly better.
        assert!(all.demos.iter().filter(|d| d.provenance.t == 2 && d.provenance.soc >= 5).all(|d| d.action == 1 && !d.tie));
        // soc 100 at t = 1: Sample (1 + 100) beats Off (100).
        let top = all.demos.iter().find(|d| d.provenance.t == 1 && d.provenance.soc == 100).unwrap();
        assert_eq!((top.action, top.tie), (1, false));
        assert_eq!(all.without_ties().len(), all.len() - all.tie_count());

        let big = generate_synthetic(&GenParams {
            length: 3000,
            seed: 1,
            ..GenParams::default()
        })
        .unwrap();
        let sat = Satellite::default();
        let table = build_dp_table(&big, &sat).unwrap();
        let a = collect_demonstrations(&table, &big, &sat, 0.01, 5).unwrap();
        let b = collect_demonstrations(&table, &big, &sat, 0.01, 5).unwrap();
        assert_eq!(a, b);
        let expected = 0.01 * 3000.0 * 101.0;
        assert!((a.len() as f64 - expected).abs() < 4.0 * expected.sqrt(), "{}", a.len());

        let other = EnvStrip::from_rows(&["HL"]).unwrap();
        assert!(matches!(
            collect_demonstrations(&table, &other, &sat, 1.0, 0),
            Err(Error::Consistency(_))
        ));
    }

    fn demo(class: RewardClass, action: u8) -> Demo {
        let mut f = [0.0; 13];
        f[1 + class.index()] = 1.0;
        Demo {
            features: BcFeatures(f),
            action,
            tie: false,
            provenance: Provenance { strip: 0, t: 1, soc: 0 },
        }
    }

    #[test]
    fn balancing_equalizes_groups() {
        let mut set = DemoSet::default();
        for (c, n) in [(RewardClass::Low, 900), (RewardClass::Mid, 300), (RewardClass::High, 300)] {
            set.demos.extend((0..n).map(|i| demo(c, (i % 2) as u8)));
        }
        let b = balance_dataset(&set, 1);
        assert_eq!(b.group_sizes(), [300, 300, 300]);
        let sizes = b.group_sizes();
        for s in sizes {
            assert!((s as f64 / b.len() as f64 - 1.0 / 3.0).abs() <= 0.01);
        }

        let mut even = DemoSet::default();
        for c in RewardClass::ALL {
            even.demos.extend((0..5).map(|i| demo(c, (i % 2) as u8)));
        }
        let b = balance_dataset(&even, 2);
        assert_eq!(b.len(), even.len());
        let key = |d: &Demo| (d.features.dominant_radar_class(), d.action);
        let mut x: Vec<_> = even.demos.iter().map(key).collect();
        let mut y: Vec<_> = b.demos.iter().map(key).collect();
        x.sort();
        y.sort();
        assert_eq!(x, y);

        let mut missing = DemoSet::default();
        missing.demos.extend((0..7).map(|_| demo(RewardClass::Low, 0)));
        missing.demos.extend((0..3).map(|_| demo(RewardClass::High, 1)));
        assert_eq!(balance_dataset(&missing, 0).group_sizes(), [3, 0, 3]);
    }

    #[test]
    fn constant_label_is_learned() {
        let mut rng = seeded_rng(3);
        let demos = DemoSet {
            demos: (0..400)
                .map(|_| Demo {
                    features: BcFeatures(std::array::from_fn(|_| rng.random())),
                    action: 0,
                    tie: false,
                    provenance: Provenance { strip: 0, t: 1, soc: 0 },
                })
                .collect(),
        };
        let params = TrainParams {
            learning_rate: 1e-2,
            ..TrainParams::default()
        };
        let (model, hist) = train_bc(&demos, &params).unwrap();
        assert!(demos.demos.iter().all(|d| mlp_forward(&model, &d.features) < 0.1));
        assert!(hist.train_loss.last().unwrap() < &hist.train_loss[0]);
        let (again, _) = train_bc(&demos, &params).unwrap();
        assert_eq!(again, model);
    }

    #[test]
    fn too_few_demos_is_an_error() {
        let demos = DemoSet {
            demos: vec![demo(RewardClass::Low, 0); 10],
        };
        assert!(matches!(train_bc(&demos, &TrainParams::default()), Err(Error::Param(_))));
    }

    #[test]
    fn policy_modes_and_mask() {
        let sat = Satellite::default();
        let strip = EnvStrip::filled(31, 300, RewardClass::High).unwrap();
        let mut never = Mlp::zeros(&ARCHITECTURE);
        never.layers.last_mut().unwrap().biases[0] = -1e3;
        let log = run_episode(&strip, &sat, &mut bc_policy(never, BcMode::Stochastic, 1), 100).unwrap();
        assert_eq!(log.off_fraction(), 1.0);

        let mut always = Mlp::zeros(&ARCHITECTURE);
        always.layers.last_mut().unwrap().biases[0] = 1e3;
        let mut pol = bc_policy(always, BcMode::Deterministic, 1);
        let obs = observe(&strip, &sat, SatState { t: 3, soc: 4 }).unwrap();
        assert_eq!(pol.decide(&obs).unwrap(), Action::Off);
        assert_eq!(pol.decide(&obs.with_soc(5)).unwrap(), Action::SAMPLE);
        let log = run_episode(&strip, &sat, &mut pol, 100).unwrap();
        assert_eq!(log.violations, 0);
    }

    #[test]
    fn model_file_round_trip() {
        let m = Mlp::behavioral_cloning(3);
        let back = Mlp::decode(&m.encode()).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(*a as f32 as f64, b);
        }
        let mut bad = m.encode();
        bad.truncate(40);
        assert!(matches!(Mlp::decode(&bad), Err(Error::Format { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn features_stay_in_unit_box(seed in 0u64..5000, t in 1usize..=400, soc in 0u8..=100) {
            let strip = generate_synthetic(&GenParams {
                height: 31,
                length: 400,
                prevalence: [0.5, 0.3, 0.2],
                seed,
                ..GenParams::default()
            }).unwrap();
            let sat = Satellite::default();
            let f = featurize_bc(&observe(&strip, &sat, SatState { t, soc }).unwrap());
            prop_assert!(f.0.iter().all(|v| (0.0..=1.0).contains(v)));
            let radar: f64 = f.0[1..4].iter().sum();
            prop_assert!((radar - 1.0).abs() < 1e-9);
            let ahead: f64 = f.0[4..7].iter().sum();
            prop_assert!(t == 400 || (ahead - 1.0).abs() < 1e-9);
        }

        #[test]
        fn output_is_strictly_inside_unit_interval(seed in 0u64..1000, xs in proptest::collection::vec(0.0f64..1.0, 13)) {
            let m = Mlp::behavioral_cloning(seed);
            let p = m.forward(&xs);
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}

//! Residual MLP student: linear embedding, two residual blocks, warmup plus
//! cosine learning rate, label smoothing, stochastic weight averaging and a
//! collapse detector that restarts training at higher dropout.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_split_indices, ColumnKind, Dataset, Matrix};
use crate::distill::{mixed_gradient_mlp_smoothed, mixed_loss_smoothed};
use crate::error::{Error, Result};
use crate::scalar::{argmax, softmax};
use crate::{DistillTargets, LossConfig};

pub const FORMAT: &str = "distillforge-mlp";
pub const VERSION: u32 = 1;
pub const COLLAPSE_ENTROPY: f64 = 0.01;
pub const COLLAPSE_SHARE: f64 = 0.99;
pub const MAX_DROPOUT: f64 = 0.5;
pub const DROPOUT_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub swa_start_fraction: f64,
    pub smoothing: f64,
    pub augment: bool,
    pub augment_sigma: f64,
    pub max_restarts: usize,
    pub initial_dropout: f64,
    pub val_fraction: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 200,
            warmup_fraction: 0.1,
            peak_lr: 1e-3,
            batch_size: 64,
            swa_start_fraction: 0.8,
            smoothing: 0.05,
            augment: true,
            augment_sigma: 0.05,
            max_restarts: 3,
            initial_dropout: 0.1,
            val_fraction: 0.15,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.peak_lr > 0.0
            && (0.0..1.0).contains(&self.warmup_fraction)
            && (0.0..=1.0).contains(&self.swa_start_fraction)
            && (0.0..1.0).contains(&self.smoothing)
            && self.augment_sigma >= 0.0
            && (0.0..1.0).contains(&self.initial_dropout)
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training schedule {self:?}")))
        }
    }

    fn warmup_steps(&self, total: usize) -> usize {
        (self.warmup_fraction * total as f64).ceil() as usize
    }

    /// Learning rate at optimizer step `step` of `total`: linear warmup from 0,
    /// then cosine decay reaching 0 on the last step.
    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        let warm = self.warmup_steps(total);
        if step < warm {
            return self.peak_lr * step as f64 / warm as f64;
        }
        let span = total.saturating_sub(1).saturating_sub(warm);
        if span == 0 {
            return self.peak_lr;
        }
        let progress = (step - warm) as f64 / span as f64;
        0.5 * self.peak_lr * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
    }

    pub fn swa_start_epoch(&self) -> usize {
        ((self.swa_start_fraction * self.epochs as f64).floor() as usize).min(self.epochs.saturating_sub(1))
    }
}

pub fn embedding_width(d: usize) -> usize {
    (8 * d).min(128)
}

pub fn hidden_width(n: usize) -> usize {
    (n / 8).clamp(32, 256)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Healthy,
    Collapsed,
}

/// Flags degenerate predictions: mean entropy in nats below
/// `threshold_entropy` while one class takes more than `max_share` of the
/// argmaxes, or any non-finite probability. Fewer than 10 rows are never judged.
pub fn collapse_check(val_probs: &[Vec<f64>], threshold_entropy: f64, max_share: f64) -> Health {
    if val_probs.iter().flatten().any(|p| !p.is_finite()) {
        return Health::Collapsed;
    }
    if val_probs.len() < 10 {
        return Health::Healthy;
    }
    let n = val_probs.len() as f64;
    let entropy = val_probs.iter().map(|p| entropy_nats(p)).sum::<f64>() / n;
    let c = val_probs[0].len();
    let mut counts = vec![0usize; c];
    for p in val_probs {
        counts[argmax(p)] += 1;
    }
    let share = *counts.iter().max().unwrap_or(&0) as f64 / n;
    if entropy < threshold_entropy && share > max_share {
        Health::Collapsed
    } else {
        Health::Healthy
    }
}

fn entropy_nats(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Dropout for the next restart. Restart `attempt` also reseeds initialization with `seed + attempt`.
pub fn restart_policy(current_dropout: f64, _attempt: usize) -> f64 {
    (current_dropout * DROPOUT_GROWTH).min(MAX_DROPOUT)
}

/// One-hot expansion of categorical columns and z-scoring of numeric ones,
/// fitted on training rows. Missing values map to 0 (all-zero one-hot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub kinds: Vec<ColumnKind>,
    pub levels: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Preprocessor {
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.n_features();
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            if ds.feature_kinds[j] != ColumnKind::Numeric {
                continue;
            }
            let col: Vec<f64> = ds.features.column(j).into_iter().filter(|v| !v.is_nan()).collect();
            if col.is_empty() {
                continue;
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
            mean[j] = m;
            scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self {
            kinds: ds.feature_kinds.clone(),
            levels: ds.category_levels.clone(),
            mean,
            scale,
        }
    }

    pub fn input_width(&self) -> usize {
        self.kinds
            .iter()
            .zip(&self.levels)
            .map(|(k, &l)| if *k == ColumnKind::Categorical { l.max(1) } else { 1 })
            .sum()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Array2<f64>> {
        if x.cols() != self.kinds.len() {
            return Err(Error::FeatureMismatch {
                expected: self.kinds.len(),
                found: x.cols(),
            });
        }
        let w = self.input_width();
        let mut out = Array2::zeros((x.rows(), w));
        for i in 0..x.rows() {
            let row = x.row(i);
            let mut at = 0;
            for j in 0..row.len() {
                let v = row[j];
                if self.kinds[j] == ColumnKind::Categorical {
                    let l = self.levels[j].max(1);
                    if !v.is_nan() && v >= 0.0 && (v as usize) < l {
                        out[[i, at + v as usize]] = 1.0;
                    }
                    at += l;
                } else {
                    out[[i, at]] = if v.is_nan() { 0.0 } else { (v - self.mean[j]) / self.scale[j] };
                    at += 1;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub embed: usize,
    pub hidden: usize,
    pub classes: usize,
}

const BLOCKS: usize = 2;

impl Dims {
    pub fn new(input: usize, n_train: usize, classes: usize) -> Self {
        Self {
            input,
            embed: embedding_width(input),
            hidden: hidden_width(n_train),
            classes,
        }
    }

    fn block_len(&self) -> usize {
        2 * self.embed * self.hidden + self.hidden + self.embed
    }

    pub fn n_params(&self) -> usize {
        self.input * self.embed + self.embed + BLOCKS * self.block_len() + self.embed * self.classes + self.classes
    }

    fn embed_at(&self) -> (usize, usize) {
        (0, self.input * self.embed)
    }

    fn block_at(&self, b: usize) -> [usize; 4] {
        let start = self.input * self.embed + self.embed + b * self.block_len();
        let w1 = start;
        let b1 = w1 + self.embed * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.embed;
        [w1, b1, w2, b2]
    }

    fn head_at(&self) -> (usize, usize) {
        let w = self.input * self.embed + self.embed + BLOCKS * self.block_len();
        (w, w + self.embed * self.classes)
    }
}

fn mat(p: &[f64], at: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[at..at + rows * cols]).expect("parameter layout")
}

fn vector(p: &[f64], at: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[at..at + len])
}

struct Cache {
    x: Array2<f64>,
    /// Residual stream entering each block, then the head input.
    stream: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    logits: Array2<f64>,
}

fn forward(p: &[f64], dims: &Dims, x: Array2<f64>, dropout: Option<(f64, &mut ChaCha8Rng)>) -> Cache {
    let (we, be) = dims.embed_at();
    let mut h = x.dot(&mat(p, we, dims.input, dims.embed)) + &vector(p, be, dims.embed);
    let mut stream = Vec::with_capacity(BLOCKS + 1);
    let mut pre = Vec::with_capacity(BLOCKS);
    let mut act = Vec::with_capacity(BLOCKS);
    let mut masks = Vec::with_capacity(BLOCKS);
    let mut dropout = dropout;
    for b in 0..BLOCKS {
        let [w1, b1, w2, b2] = dims.block_at(b);
        let a = h.dot(&mat(p, w1, dims.embed, dims.hidden)) + &vector(p, b1, dims.hidden);
        let mut u = a.mapv(|v| v.max(0.0));
        let mask = match dropout.as_mut() {
            Some((rate, rng)) if *rate > 0.0 => {
                let keep = 1.0 - *rate;
                let m = Array2::from_shape_fn(u.raw_dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                u *= &m;
                Some(m)
            }
            _ => None,
        };
        let v = u.dot(&mat(p, w2, dims.hidden, dims.embed)) + &vector(p, b2, dims.embed);
        stream.push(h.clone());
        h += &v;
        pre.push(a);
        act.push(u);
        masks.push(mask);
    }
    let (wh, bh) = dims.head_at();
    let logits = h.dot(&mat(p, wh, dims.embed, dims.classes)) + &vector(p, bh, dims.classes);
    stream.push(h);
    Cache {
        x,
        stream,
        pre,
        act,
        masks,
        logits,
    }
}

fn put(grad: &mut [f64], at: usize, values: &Array2<f64>) {
    for (slot, v) in grad[at..at + values.len()].iter_mut().zip(values.iter()) {
        *slot = *v;
    }
}

fn put_sum(grad: &mut [f64], at: usize, values: &Array2<f64>) {
    let s = values.sum_axis(Axis(0));
    for (slot, v) in grad[at..at + s.len()].iter_mut().zip(s.iter()) {
        *slot = *v;
    }
}

/// Gradient of the loss with respect to every parameter, given `d loss / d logits`.
fn backward(p: &[f64], dims: &Dims, cache: &Cache, g_logits: &Array2<f64>) -> Vec<f64> {
    let mut grad = vec![0.0; dims.n_params()];
    let (wh, bh) = dims.head_at();
    put(&mut grad, wh, &cache.stream[BLOCKS].t().dot(g_logits));
    put_sum(&mut grad, bh, g_logits);
    let mut dh = g_logits.dot(&mat(p, wh, dims.embed, dims.classes).t());
    for b in (0..BLOCKS).rev() {
        let [w1, b1, w2, b2] = dims.block_at(b);
        put(&mut grad, w2, &cache.act[b].t().dot(&dh));
        put_sum(&mut grad, b2, &dh);
        let mut du = dh.dot(&mat(p, w2, dims.hidden, dims.embed).t());
        if let Some(m) = &cache.masks[b] {
            du *= m;
        }
        ndarray::Zip::from(&mut du).and(&cache.pre[b]).for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        put(&mut grad, w1, &cache.stream[b].t().dot(&du));
        put_sum(&mut grad, b1, &du);
        dh += &du.dot(&mat(p, w1, dims.embed, dims.hidden).t());
    }
    let (we, be) = dims.embed_at();
    put(&mut grad, we, &cache.x.t().dot(&dh));
    put_sum(&mut grad, be, &dh);
    grad
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Mean smoothed mixed loss and its parameter gradient on one batch (no dropout).
pub fn batch_loss_and_grad(
    params: &[f64],
    dims: &Dims,
    x: &Array2<f64>,
    targets: &DistillTargets,
    loss: &LossConfig,
    smoothing: f64,
) -> (f64, Vec<f64>) {
    let cache = forward(params, dims, x.clone(), None);
    let logits = rows_of(&cache.logits);
    let n = logits.len() as f64;
    let value = mixed_loss_smoothed(&logits, targets, loss, smoothing) / n;
    let g = logit_grad(&logits, targets, loss, smoothing);
    (value, backward(params, dims, &cache, &g))
}

fn logit_grad(logits: &[Vec<f64>], targets: &DistillTargets, loss: &LossConfig, smoothing: f64) -> Array2<f64> {
    let n = logits.len();
    let c = logits[0].len();
    let g = mixed_gradient_mlp_smoothed(logits, targets, loss, smoothing);
    Array2::from_shape_fn((n, c), |(i, k)| g[i][k] / n as f64)
}

/// Random initialization with `N(0, 1/fan_in)` weights and zero biases.
pub fn init_params(dims: &Dims, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; dims.n_params()];
    let mut fill = |at: usize, fan_in: usize, len: usize, rng: &mut ChaCha8Rng| {
        let dist = Normal::new(0.0, (1.0 / fan_in.max(1) as f64).sqrt()).expect("valid normal");
        for v in &mut p[at..at + len] {
            *v = dist.sample(rng);
        }
    };
    fill(0, dims.input, dims.input * dims.embed, &mut rng);
    for b in 0..BLOCKS {
        let [w1, _, w2, _] = dims.block_at(b);
        fill(w1, dims.embed, dims.embed * dims.hidden, &mut rng);
        fill(w2, dims.hidden, dims.hidden * dims.embed, &mut rng);
    }
    fill(dims.head_at().0, dims.embed, dims.embed * dims.classes, &mut rng);
    p
}

/// Running uniform average of parameter snapshots.
#[derive(Debug, Clone, Default)]
pub struct SwaAverager {
    sum: Vec<f64>,
    count: usize,
}

impl SwaAverager {
    pub fn push(&mut self, params: &[f64]) {
        if self.sum.is_empty() {
            self.sum = vec![0.0; params.len()];
        }
        for (s, p) in self.sum.iter_mut().zip(params) {
            *s += p;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.sum.iter().map(|s| s / self.count as f64).collect())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    pub version: u32,
    pub dims: Dims,
    pub preprocessor: Preprocessor,
    /// Dropout rate of the run that produced the weights.
    pub dropout: f64,
    /// Flat row-major parameters: embedding, two residual blocks, head.
    pub weights: Vec<f64>,
    /// Whether `weights` is the stochastic weight average.
    pub swa: bool,
    pub swa_snapshots: usize,
    pub seed: u64,
    pub restarts: usize,
    pub collapsed: bool,
    pub schedule: TrainSchedule,
}

impl MlpModel {
    pub fn logits(&self, rows: &Matrix) -> Result<Array2<f64>> {
        let x = self.preprocessor.transform(rows)?;
        Ok(forward(&self.weights, &self.dims, x, None).logits)
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        Ok(self.logits(rows)?.outer_iter().map(|z| softmax(z.as_slice().expect("contiguous"))).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MlpModel = serde_json::from_str(text)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::Model(format!("expected {FORMAT} v{VERSION}, found {} v{}", m.format, m.version)));
        }
        if m.weights.len() != m.dims.n_params() {
            return Err(Error::Model("weight count does not match dims".into()));
        }
        Ok(m)
    }
}

/// Snapshots averaged by SWA, kept when tracing is requested.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub swa_snapshots: Vec<Vec<f64>>,
    pub dropouts: Vec<f64>,
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

pub fn fit_mlp(train: &Dataset, targets: &DistillTargets, loss: &LossConfig, sched: &TrainSchedule, seed: u64) -> Result<MlpModel> {
    fit_mlp_traced(train, targets, loss, sched, seed, None)
}

/// Hard-label MLP: the same trainer with `alpha = 0`, unit weights and temperatures.
pub fn fit_mlp_hard(train: &Dataset, sched: &TrainSchedule, seed: u64) -> Result<MlpModel> {
    let targets = DistillTargets::hard(&train.labels, train.class_count);
    fit_mlp(train, &targets, &LossConfig::hard_labels(), sched, seed)
}

pub fn fit_mlp_traced(
    train: &Dataset,
    targets: &DistillTargets,
    loss: &LossConfig,
    sched: &TrainSchedule,
    seed: u64,
    mut trace: Option<&mut TrainTrace>,
) -> Result<MlpModel> {
    sched.validate()?;
    loss.validate()?;
    if targets.len() != train.n_rows() {
        return Err(Error::SoftLabels(format!("{} targets for {} training rows", targets.len(), train.n_rows())));
    }
    let pre = Preprocessor::fit(train);
    let x_all = pre.transform(&train.features)?;
    let (fit_idx, val_idx) = if sched.val_fraction > 0.0 {
        stratified_split_indices(&train.labels, train.class_count, sched.val_fraction, seed)?
    } else {
        ((0..train.n_rows()).collect(), Vec::new())
    };
    let monitor_idx = if val_idx.is_empty() { fit_idx.clone() } else { val_idx.clone() };
    let x_fit = select_rows(&x_all, &fit_idx);
    let x_mon = select_rows(&x_all, &monitor_idx);
    let t_fit = targets.select(&fit_idx);
    let t_mon = targets.select(&monitor_idx);
    let jitter_sd: Vec<f64> = x_fit
        .columns()
        .into_iter()
        .map(|c| sched.augment_sigma * c.std(0.0))
        .collect();

    let dims = Dims::new(pre.input_width(), train.n_rows(), train.class_count);
    let batches = fit_idx.len().div_ceil(sched.batch_size);
    let total_steps = sched.epochs * batches;
    let swa_start = sched.swa_start_epoch();

    let mut dropout = sched.initial_dropout;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut attempt = 0usize;
    loop {
        if let Some(t) = trace.as_deref_mut() {
            t.swa_snapshots.clear();
            t.dropouts.push(dropout);
        }
        let run_seed = seed.wrapping_add(attempt as u64);
        let mut params = init_params(&dims, run_seed);
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(run_seed);
            r.set_stream(s);
            r
        };
        let (mut shuffle_rng, mut jitter_rng, mut drop_rng) = (stream(1), stream(2), stream(3));
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let mut adam = Adam::new(params.len());
        let mut swa = SwaAverager::default();
        let mut order: Vec<usize> = (0..fit_idx.len()).collect();
        let mut step = 0;
        let mut collapsed = false;
        for epoch in 0..sched.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(sched.batch_size) {
                let mut xb = select_rows(&x_fit, chunk);
                if sched.augment && sched.augment_sigma > 0.0 {
                    for mut row in xb.outer_iter_mut() {
                        for (v, &sd) in row.iter_mut().zip(&jitter_sd) {
                            *v += sd * unit.sample(&mut jitter_rng);
                        }
                    }
                }
                let tb = t_fit.select(chunk);
                let cache = forward(&params, &dims, xb, Some((dropout, &mut drop_rng)));
                let g = logit_grad(&rows_of(&cache.logits), &tb, loss, sched.smoothing);
                let grad = backward(&params, &dims, &cache, &g);
                adam.step(&mut params, &grad, sched.learning_rate(step, total_steps));
                step += 1;
            }
            let logits = rows_of(&forward(&params, &dims, x_mon.clone(), None).logits);
            let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
            if params.iter().any(|v| !v.is_finite())
                || collapse_check(&probs, COLLAPSE_ENTROPY, COLLAPSE_SHARE) == Health::Collapsed
            {
                collapsed = true;
                break;
            }
            let val_loss = mixed_loss_smoothed(&logits, &t_mon, loss, sched.smoothing) / logits.len() as f64;
            if best.as_ref().is_none_or(|b| val_loss < b.0) {
                best = Some((val_loss, params.clone(), dropout));
            }
            if epoch >= swa_start {
                swa.push(&params);
                if let Some(t) = trace.as_deref_mut() {
                    t.swa_snapshots.push(params.clone());
                }
            }
        }
        if !collapsed {
            let averaged = swa.mean();
            return Ok(MlpModel {
                format: FORMAT.into(),
                version: VERSION,
                dims,
                preprocessor: pre,
                dropout,
                swa: averaged.is_some(),
                swa_snapshots: swa.count(),
                weights: averaged.unwrap_or(params),
                seed,
                restarts: attempt,
                collapsed: false,
                schedule: sched.clone(),
            });
        }
        if attempt >= sched.max_restarts {
            let (weights, used) = match best {
                Some((_, w, d)) => (w, d),
                None => (params, dropout),
            };
            return Ok(MlpModel {
                format: FORMAT.into(),
                version: VERSION,
                dims,
                preprocessor: pre,
                dropout: used,
                weights,
                swa: false,
                swa_snapshots: 0,
                seed,
                restarts: attempt,
                collapsed: true,
                schedule: sched.clone(),
            });
        }
        attempt += 1;
        dropout = restart_policy(dropout, attempt);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::distill::{build_targets_from_probs, TemperatureMode};
    use crate::metrics::auc;

    #[test]
    fn widths() {
        assert_eq!(embedding_width(10), 80);
        assert_eq!(embedding_width(20), 128);
        assert_eq!(hidden_width(100), 32);
        assert_eq!(hidden_width(1000), 125);
        assert_eq!(hidden_width(100_000), 256);
    }

    #[test]
    fn smoothed_binary_target() {
        let eps: f64 = 0.05;
        let y = [eps / 2.0, 1.0 - eps + eps / 2.0];
        assert!((y[0] - 0.025).abs() < 1e-15 && (y[1] - 0.975).abs() < 1e-15);
        // the smoothed hard gradient at zero logits is q - y
        let targets = DistillTargets::hard(&[1], 2);
        let g = mixed_gradient_mlp_smoothed(&[vec![0.0, 0.0]], &targets, &LossConfig::hard_labels(), eps);
        assert!((g[0][0] - (0.5 - 0.025)).abs() < 1e-15);
        assert!((g[0][1] - (0.5 - 0.975)).abs() < 1e-15);
    }

    #[test]
    fn schedule_shape() {
        let s = TrainSchedule::default();
        let total = 1000;
        assert_eq!(s.learning_rate(0, total), 0.0);
        assert_eq!(s.learning_rate(100, total), s.peak_lr);
        assert!(s.learning_rate(50, total) < s.peak_lr);
        assert!(s.learning_rate(total - 1, total) <= 1e-3 * s.peak_lr);
        assert!((0..total - 1).skip(100).all(|t| s.learning_rate(t + 1, total) <= s.learning_rate(t, total)));
        assert_eq!(s.swa_start_epoch(), 160);
    }

    #[test]
    fn collapse_cases() {
        assert_eq!(collapse_check(&vec![vec![0.999, 0.001]; 20], COLLAPSE_ENTROPY, COLLAPSE_SHARE), Health::Collapsed);
        assert_eq!(collapse_check(&vec![vec![0.5, 0.5]; 20], COLLAPSE_ENTROPY, COLLAPSE_SHARE), Health::Healthy);
        let mixed: Vec<Vec<f64>> = (0..20).map(|i| if i % 2 == 0 { vec![0.9999, 0.0001] } else { vec![0.0001, 0.9999] }).collect();
        assert_eq!(collapse_check(&mixed, COLLAPSE_ENTROPY, COLLAPSE_SHARE), Health::Healthy);
        assert_eq!(collapse_check(&vec![vec![f64::NAN, 0.5]; 20], COLLAPSE_ENTROPY, COLLAPSE_SHARE), Health::Collapsed);
    }

    #[test]
    fn restart_sequence() {
        let mut d = 0.1;
        let mut seen = Vec::new();
        for attempt in 1..=3 {
            d = restart_policy(d, attempt);
            seen.push(d);
        }
        let expected = [0.15, 0.225, 0.3375];
        for (a, b) in seen.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(restart_policy(0.34, 4), 0.5);
        assert_eq!(restart_policy(0.5, 5), 0.5);
    }

    fn small_dataset(n: usize, d: usize, classes: usize, seed: u64) -> Dataset {
        synth_generate(&SynthConfig {
            n,
            d,
            classes,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for instance in 0..20 {
            let classes = 2 + instance % 2;
            let d = 2 + instance % 3;
            let dims = Dims {
                input: d,
                embed: 3,
                hidden: 4,
                classes,
            };
            let params = init_params(&dims, instance as u64);
            let n = 5;
            let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 0.05).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|p| p / s).collect()
                })
                .collect();
            let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            let cfg = LossConfig {
                alpha: 0.6,
                ..LossConfig::default()
            };
            let targets = build_targets_from_probs(&probs, &labels, &cfg).unwrap();
            let (_, analytic) = batch_loss_and_grad(&params, &dims, &x, &targets, &cfg, 0.05);
            let h = 1e-5;
            let numeric: Vec<f64> = (0..params.len())
                .map(|k| {
                    let mut up = params.clone();
                    let mut down = params.clone();
                    up[k] += h;
                    down[k] -= h;
                    let fu = batch_loss_and_grad(&up, &dims, &x, &targets, &cfg, 0.05).0;
                    let fd = batch_loss_and_grad(&down, &dims, &x, &targets, &cfg, 0.05).0;
                    (fu - fd) / (2.0 * h)
                })
                .collect();
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff / scale < 1e-4, "instance {instance}: {}", diff / scale);
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let ds = small_dataset(40, 3, 3, 0);
        let pre = Preprocessor::fit(&ds);
        let dims = Dims::new(pre.input_width(), 40, 3);
        let m = MlpModel {
            format: FORMAT.into(),
            version: VERSION,
            dims,
            preprocessor: pre,
            dropout: 0.1,
            weights: vec![0.0; dims.n_params()],
            swa: false,
            swa_snapshots: 0,
            seed: 0,
            restarts: 0,
            collapsed: false,
            schedule: TrainSchedule::default(),
        };
        for row in m.predict_proba(&ds.features).unwrap() {
            assert!(row.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    fn quick() -> TrainSchedule {
        TrainSchedule {
            epochs: 20,
            ..TrainSchedule::default()
        }
    }

    #[test]
    fn trains_deterministically_and_round_trips() {
        let ds = small_dataset(300, 5, 2, 3);
        let a = fit_mlp_hard(&ds, &quick(), 7).unwrap();
        let b = fit_mlp_hard(&ds, &quick(), 7).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.swa && !a.collapsed);
        assert_eq!(a.swa_snapshots, 4);
        let p = a.predict_proba(&ds.features).unwrap();
        assert!(p.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
        let p1: Vec<f64> = p.iter().map(|r| r[1]).collect();
        assert!(auc(&p1, &ds.labels).unwrap() > 0.8);
        let back = MlpModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.predict_proba(&ds.features).unwrap(), p);
        assert!(a.predict_proba(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn swa_weights_are_snapshot_mean() {
        let ds = small_dataset(200, 4, 2, 5);
        let mut trace = TrainTrace::default();
        let cfg = LossConfig::default();
        let probs: Vec<Vec<f64>> = ds.labels.iter().map(|&y| if y == 1 { vec![0.3, 0.7] } else { vec![0.8, 0.2] }).collect();
        let targets = build_targets_from_probs(&probs, &ds.labels, &cfg).unwrap();
        let m = fit_mlp_traced(&ds, &targets, &cfg, &quick(), 1, Some(&mut trace)).unwrap();
        assert_eq!(trace.swa_snapshots.len(), m.swa_snapshots);
        let k = trace.swa_snapshots.len() as f64;
        for (j, w) in m.weights.iter().enumerate() {
            let mean = trace.swa_snapshots.iter().map(|s| s[j]).sum::<f64>() / k;
            assert!((w - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        }
    }

    #[test]
    fn hard_trainer_equals_alpha_zero() {
        let ds = small_dataset(150, 3, 2, 8);
        let probs: Vec<Vec<f64>> = (0..150).map(|i| vec![0.1 + 0.005 * i as f64, 0.9 - 0.005 * i as f64]).collect();
        let cfg = LossConfig::hard_labels();
        assert_eq!(cfg.temperature, TemperatureMode::Fixed(1.0));
        let targets = build_targets_from_probs(&probs, &ds.labels, &cfg).unwrap();
        let sched = TrainSchedule { epochs: 5, ..TrainSchedule::default() };
        let a = fit_mlp(&ds, &targets, &cfg, &sched, 2).unwrap();
        let b = fit_mlp_hard(&ds, &sched, 2).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn persistent_collapse_stops_at_max_restarts() {
        // a learning rate this large diverges on every attempt
        let ds = small_dataset(200, 4, 2, 9);
        let sched = TrainSchedule {
            epochs: 3,
            peak_lr: 1e200,
            warmup_fraction: 0.0,
            ..TrainSchedule::default()
        };
        let mut trace = TrainTrace::default();
        let targets = DistillTargets::hard(&ds.labels, 2);
        let m = fit_mlp_traced(&ds, &targets, &LossConfig::hard_labels(), &sched, 0, Some(&mut trace)).unwrap();
        assert!(m.collapsed);
        assert_eq!(m.restarts, sched.max_restarts);
        assert_eq!(trace.dropouts.len(), sched.max_restarts + 1);
        assert!(trace.dropouts.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn preprocessor_one_hot() {
        let schema = crate::dataset::Schema {
            columns: vec![
                crate::dataset::ColumnSpec {
                    name: "a".into(),
                    kind: ColumnKind::Numeric,
                    role: crate::dataset::ColumnRole::Feature,
                    classes: None,
                },
                crate::dataset::ColumnSpec {
                    name: "c".into(),
                    kind: ColumnKind::Categorical,
                    role: crate::dataset::ColumnRole::Feature,
                    classes: None,
                },
                crate::dataset::ColumnSpec {
                    name: "y".into(),
                    kind: ColumnKind::Categorical,
                    role: crate::dataset::ColumnRole::Target,
                    classes: None,
                },
            ],
        };
        let ds = crate::dataset::load_csv_str("a,c,y\n1,x,0\n3,y,1\n,z,0\n", &schema).unwrap();
        let pre = Preprocessor::fit(&ds);
        assert_eq!(pre.input_width(), 4);
        let x = pre.transform(&ds.features).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![-1.0, 1.0, 0.0, 0.0]);
        assert_eq!(x.row(2).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
    }
}

//! Distillation targets and the mixed soft/hard objective.
//!
//! Teacher probabilities become per-sample soft logits, an entropy-driven
//! temperature `T_i` and a confidence weight `w_i`. The mixed loss is
//!
//! ```text
//! L = alpha * sum_i w_i T_i^2 KL(p_i^{T_i} || q_i^{T_i}) + (1 - alpha) * sum_i w_i CE(y_i, q_i)
//! ```
//!
//! where `x^T` is the distribution obtained by dividing logits by `T`.
//! Tree students use the scalar reduction in [`tree_grad_hess`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, sigmoid, softmax, softmax_t, Scalar};
use crate::teacher::SoftLabelSet;

/// Lower clip applied to probabilities before taking logs.
pub const PROB_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum TemperatureMode<S> {
    /// `T = t_min + (t_max - t_min) * normalized entropy`.
    Adaptive,
    /// Same temperature for every sample.
    Fixed(S),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig<S> {
    pub alpha: S,
    pub t_min: S,
    pub t_max: S,
    pub mu: S,
    pub sigma: S,
    pub temperature: TemperatureMode<S>,
    /// When false every sample gets weight 1.
    pub confidence_weighting: bool,
}

impl<S: Scalar> Default for LossConfig<S> {
    fn default() -> Self {
        Self {
            alpha: S::lit(0.7),
            t_min: S::one(),
            t_max: S::lit(5.0),
            mu: S::lit(0.7),
            sigma: S::lit(0.2),
            temperature: TemperatureMode::Adaptive,
            confidence_weighting: true,
        }
    }
}

impl<S: Scalar> LossConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= S::zero()
            && self.alpha <= S::one()
            && self.t_min >= S::one()
            && self.t_max >= self.t_min
            && self.sigma > S::zero()
            && match self.temperature {
                TemperatureMode::Adaptive => true,
                TemperatureMode::Fixed(t) => t > S::zero(),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss config out of range: alpha={}, t_min={}, t_max={}, sigma={}",
                self.alpha, self.t_min, self.t_max, self.sigma
            )))
        }
    }

    /// Pure hard-label training: `alpha = 0`, unit weights, unit temperature.
    pub fn hard_labels() -> Self {
        Self {
            alpha: S::zero(),
            temperature: TemperatureMode::Fixed(S::one()),
            confidence_weighting: false,
            ..Self::default()
        }
    }
}

/// Shannon entropy divided by `ln C`, with `0 ln 0 = 0`.
pub fn normalized_entropy<S: Scalar>(p: &[S]) -> S {
    if p.len() < 2 {
        return S::zero();
    }
    let h: S = p
        .iter()
        .filter(|&&v| v > S::zero())
        .map(|&v| -v * v.ln())
        .sum();
    let hn = h / S::from_count(p.len()).ln();
    hn.max(S::zero()).min(S::one())
}

pub fn adaptive_temperature<S: Scalar>(p: &[S], cfg: &LossConfig<S>) -> S {
    cfg.t_min + (cfg.t_max - cfg.t_min) * normalized_entropy(p)
}

/// Temperature for one sample under the configured mode.
pub fn sample_temperature<S: Scalar>(p: &[S], cfg: &LossConfig<S>) -> S {
    match cfg.temperature {
        TemperatureMode::Adaptive => adaptive_temperature(p, cfg),
        TemperatureMode::Fixed(t) => t,
    }
}

/// Gaussian bump over normalized entropy, peaking at `mu`.
pub fn confidence_weight<S: Scalar>(p: &[S], cfg: &LossConfig<S>) -> S {
    let d = normalized_entropy(p) - cfg.mu;
    (-(d * d) / (S::lit(2.0) * cfg.sigma * cfg.sigma)).exp()
}

fn clip<S: Scalar>(p: S) -> S {
    let lo = S::lit(PROB_CLIP);
    p.max(lo).min(S::one() - lo)
}

/// `ln(p / (1 - p))` after clipping `p` into `[1e-6, 1 - 1e-6]`.
pub fn class_logit<S: Scalar>(p: S) -> S {
    let c = clip(p);
    (c / (S::one() - c)).ln()
}

/// Scalar binary soft logit, `ln(p1 / p0)` with both clipped.
pub fn binary_soft_logit<S: Scalar>(p: &[S]) -> S {
    (clip(p[1]) / clip(p[0])).ln()
}

/// Clipped log-probabilities centred by their row mean.
pub fn centered_log_probs<S: Scalar>(p: &[S]) -> Vec<S> {
    let logs: Vec<S> = p.iter().map(|&v| clip(v).ln()).collect();
    let mean = logs.iter().copied().sum::<S>() / S::from_count(logs.len());
    logs.into_iter().map(|l| l - mean).collect()
}

/// Per-sample targets for a distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillTargets<S> {
    pub soft_probs: Vec<Vec<S>>,
    pub soft_logits: Vec<Vec<S>>,
    pub temperature: Vec<S>,
    pub weight: Vec<S>,
    pub hard_label: Vec<usize>,
    pub class_count: usize,
}

impl<S: Scalar> DistillTargets<S> {
    pub fn len(&self) -> usize {
        self.hard_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_label.is_empty()
    }

    /// Targets whose soft part is the one-hot hard label, with unit weight and temperature.
    pub fn hard(labels: &[usize], class_count: usize) -> Self {
        let soft_probs: Vec<Vec<S>> = labels
            .iter()
            .map(|&y| {
                (0..class_count)
                    .map(|c| if c == y { S::one() } else { S::zero() })
                    .collect()
            })
            .collect();
        Self {
            soft_logits: soft_probs.iter().map(|p| centered_log_probs(p)).collect(),
            soft_probs,
            temperature: vec![S::one(); labels.len()],
            weight: vec![S::one(); labels.len()],
            hard_label: labels.to_vec(),
            class_count,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            soft_probs: idx.iter().map(|&i| self.soft_probs[i].clone()).collect(),
            soft_logits: idx.iter().map(|&i| self.soft_logits[i].clone()).collect(),
            temperature: idx.iter().map(|&i| self.temperature[i]).collect(),
            weight: idx.iter().map(|&i| self.weight[i]).collect(),
            hard_label: idx.iter().map(|&i| self.hard_label[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Scalar one-vs-rest soft logit of class `c` for row `i`.
    pub fn class_logit(&self, i: usize, c: usize) -> S {
        if self.class_count == 2 {
            let z = binary_soft_logit(&self.soft_probs[i]);
            if c == 1 {
                z
            } else {
                -z
            }
        } else {
            class_logit(self.soft_probs[i][c])
        }
    }
}

/// Builds targets from teacher probabilities and hard labels.
pub fn build_targets_from_probs<S: Scalar>(
    probs: &[Vec<S>],
    labels: &[usize],
    cfg: &LossConfig<S>,
) -> Result<DistillTargets<S>> {
    if probs.len() != labels.len() {
        return Err(Error::SoftLabels(format!(
            "{} soft-label rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let class_count = probs.first().map_or(2, Vec::len);
    if let Some(bad) = labels.iter().position(|&y| y >= class_count) {
        return Err(Error::SoftLabels(format!("label at row {bad} exceeds class count {class_count}")));
    }
    Ok(DistillTargets {
        soft_logits: probs.iter().map(|p| centered_log_probs(p)).collect(),
        temperature: probs.iter().map(|p| sample_temperature(p, cfg)).collect(),
        weight: probs
            .iter()
            .map(|p| {
                if cfg.confidence_weighting {
                    confidence_weight(p, cfg)
                } else {
                    S::one()
                }
            })
            .collect(),
        soft_probs: probs.to_vec(),
        hard_label: labels.to_vec(),
        class_count,
    })
}

pub fn build_targets(soft: &SoftLabelSet, labels: &[usize], cfg: &LossConfig<f64>) -> Result<DistillTargets<f64>> {
    build_targets_from_probs(&soft.probs, labels, cfg)
}

/// `KL(p || q)` with `0 ln 0 = 0`.
pub fn kl_divergence<S: Scalar>(p: &[S], q: &[S]) -> S {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > S::zero())
        .map(|(&a, &b)| a * (a.ln() - b.ln()))
        .sum()
}

/// Cross-entropy `-sum_c t_c ln softmax(z)_c`, computed through log-sum-exp.
pub fn cross_entropy_logits<S: Scalar>(target: &[S], logits: &[S]) -> S {
    let lse = log_sum_exp(logits);
    target
        .iter()
        .zip(logits)
        .map(|(&t, &z)| t * (lse - z))
        .sum()
}

fn smoothed_onehot<S: Scalar>(y: usize, c: usize, eps: S) -> Vec<S> {
    let base = eps / S::from_count(c);
    (0..c)
        .map(|k| if k == y { S::one() - eps + base } else { base })
        .collect()
}

/// Mixed loss summed over rows. `student_logits[i]` has one entry per class.
pub fn mixed_loss<S: Scalar>(student_logits: &[Vec<S>], targets: &DistillTargets<S>, cfg: &LossConfig<S>) -> S {
    mixed_loss_smoothed(student_logits, targets, cfg, S::zero())
}

/// [`mixed_loss`] with the hard term against `y (1 - eps) + eps / C`.
pub fn mixed_loss_smoothed<S: Scalar>(
    student_logits: &[Vec<S>],
    targets: &DistillTargets<S>,
    cfg: &LossConfig<S>,
    eps: S,
) -> S {
    let mut total = S::zero();
    for (i, z) in student_logits.iter().enumerate() {
        let t = targets.temperature[i];
        let w = targets.weight[i];
        if cfg.alpha > S::zero() {
            let p_t = softmax_t(&targets.soft_logits[i], t);
            let z_t: Vec<S> = z.iter().map(|&v| v / t).collect();
            // KL(p || softmax(z_t)) = sum p ln p - sum p ln q
            let neg_h: S = p_t.iter().filter(|&&v| v > S::zero()).map(|&v| v * v.ln()).sum();
            let kl = (neg_h + cross_entropy_logits(&p_t, &z_t)).max(S::zero());
            total += cfg.alpha * w * t * t * kl;
        }
        if cfg.alpha < S::one() {
            let y = smoothed_onehot(targets.hard_label[i], z.len(), eps);
            total += (S::one() - cfg.alpha) * w * cross_entropy_logits(&y, z);
        }
    }
    total
}

/// Gradient of [`mixed_loss`] with respect to each row's student logits.
pub fn mixed_gradient_mlp<S: Scalar>(
    student_logits: &[Vec<S>],
    targets: &DistillTargets<S>,
    cfg: &LossConfig<S>,
) -> Vec<Vec<S>> {
    mixed_gradient_mlp_smoothed(student_logits, targets, cfg, S::zero())
}

pub fn mixed_gradient_mlp_smoothed<S: Scalar>(
    student_logits: &[Vec<S>],
    targets: &DistillTargets<S>,
    cfg: &LossConfig<S>,
    eps: S,
) -> Vec<Vec<S>> {
    student_logits
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let t = targets.temperature[i];
            let w = targets.weight[i];
            let mut g = vec![S::zero(); z.len()];
            if cfg.alpha > S::zero() {
                let p_t = softmax_t(&targets.soft_logits[i], t);
                let q_t = softmax_t(z, t);
                for c in 0..z.len() {
                    g[c] += cfg.alpha * w * t * (q_t[c] - p_t[c]);
                }
            }
            if cfg.alpha < S::one() {
                let q = softmax(z);
                let y = smoothed_onehot(targets.hard_label[i], z.len(), eps);
                for c in 0..z.len() {
                    g[c] += (S::one() - cfg.alpha) * w * (q[c] - y[c]);
                }
            }
            g
        })
        .collect()
}

/// One row of the scalar tree objective
/// `alpha w T^2 (F - z/T)^2 / 2 + (1 - alpha) w logloss(y, sigmoid(F))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeRow<S> {
    pub soft_logit: S,
    pub temperature: S,
    pub weight: S,
    /// Binary hard target in {0, 1}.
    pub label: S,
}

pub fn tree_loss<S: Scalar>(raw: S, row: &TreeRow<S>, alpha: S) -> S {
    let t = row.temperature;
    let diff = raw - row.soft_logit / t;
    let soft = alpha * row.weight * t * t * diff * diff / S::lit(2.0);
    // logloss = softplus(F) - y F
    let softplus = raw.max(S::zero()) + (-raw.abs()).exp().ln_1p();
    let hard = (S::one() - alpha) * row.weight * (softplus - row.label * raw);
    soft + hard
}

/// Gradient and hessian of [`tree_loss`] with respect to the raw score.
pub fn tree_grad_hess<S: Scalar>(raw: S, row: &TreeRow<S>, alpha: S) -> (S, S) {
    let t = row.temperature;
    let w = row.weight;
    let s = sigmoid(raw);
    let g = alpha * w * t * t * (raw - row.soft_logit / t) + (S::one() - alpha) * w * (s - row.label);
    let h = alpha * w * t * t + (S::one() - alpha) * w * s * (S::one() - s);
    (g, h)
}

/// Scalar tree rows for class `c` (class 1 for binary tasks).
pub fn tree_rows<S: Scalar>(targets: &DistillTargets<S>, c: usize) -> Vec<TreeRow<S>> {
    (0..targets.len())
        .map(|i| TreeRow {
            soft_logit: targets.class_logit(i, c),
            temperature: targets.temperature[i],
            weight: targets.weight[i],
            label: if targets.hard_label[i] == c { S::one() } else { S::zero() },
        })
        .collect()
}

/// Per-row `(gradient, hessian)` of the binary tree objective.
pub fn mixed_gradient_tree<S: Scalar>(raw_score: &[S], targets: &DistillTargets<S>, cfg: &LossConfig<S>) -> Vec<(S, S)> {
    tree_rows(targets, 1)
        .iter()
        .zip(raw_score)
        .map(|(row, &f)| tree_grad_hess(f, row, cfg.alpha))
        .collect()
}

//! Hard-label reference models. The hard-label GBDT lives in [`crate::gbdt::fit_hard`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, sigmoid, softmax};
use crate::teacher::Standardizer;

pub const FORMAT: &str = "distillforge-logreg";
pub const VERSION: u32 = 1;
const BIAS_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub format: String,
    pub version: u32,
    pub scaler: Standardizer,
    /// One weight vector per output: a single one for binary tasks, one per class otherwise.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub class_count: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Set when the gradient norm did not reach the tolerance.
    pub not_converged: bool,
}

impl LogRegModel {
    fn scores(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        if rows.cols() != self.scaler.mean.len() {
            return Err(Error::FeatureMismatch {
                expected: self.scaler.mean.len(),
                found: rows.cols(),
            });
        }
        let mut z = vec![0.0; rows.cols()];
        Ok((0..rows.rows())
            .map(|i| {
                standardize(&self.scaler, rows.row(i), &mut z);
                let s = self.scores(&z);
                if self.class_count == 2 {
                    let p = sigmoid(s[0]);
                    vec![1.0 - p, p]
                } else {
                    softmax(&s)
                }
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: LogRegModel = serde_json::from_str(text)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::Model(format!("expected {FORMAT} v{VERSION}, found {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

fn standardize(s: &Standardizer, row: &[f64], out: &mut [f64]) {
    s.apply_row(row, out);
    for v in out.iter_mut() {
        if v.is_nan() {
            *v = 0.0;
        }
    }
}

struct Problem {
    z: Vec<Vec<f64>>,
    y: Vec<usize>,
    outputs: usize,
    l2: f64,
}

impl Problem {
    fn dim(&self) -> usize {
        self.outputs * (self.z[0].len() + 1)
    }

    /// Parameter layout: for each output, `d` weights followed by the bias.
    fn scores(&self, theta: &DVector<f64>, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        (0..self.outputs)
            .map(|k| {
                let base = k * (d + 1);
                theta[base + d] + (0..d).map(|j| theta[base + j] * z[j]).sum::<f64>()
            })
            .collect()
    }

    fn is_bias(&self, idx: usize) -> bool {
        idx % (self.z[0].len() + 1) == self.z[0].len()
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let ce: f64 = self
            .z
            .iter()
            .zip(&self.y)
            .map(|(z, &y)| {
                let s = self.scores(theta, z);
                if self.outputs == 1 {
                    // log(1 + e^s) - y s
                    log_sum_exp(&[0.0, s[0]]) - if y == 1 { s[0] } else { 0.0 }
                } else {
                    log_sum_exp(&s) - s[y]
                }
            })
            .sum();
        let reg: f64 = (0..theta.len()).filter(|&i| !self.is_bias(i)).map(|i| theta[i] * theta[i]).sum();
        ce + 0.5 * self.l2 * reg
    }

    fn grad_hess(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.z[0].len();
        let p = self.dim();
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        let mut x1 = vec![0.0; d + 1];
        for (z, &y) in self.z.iter().zip(&self.y) {
            x1[..d].copy_from_slice(z);
            x1[d] = 1.0;
            let s = self.scores(theta, z);
            let probs = if self.outputs == 1 { vec![sigmoid(s[0])] } else { softmax(&s) };
            for k in 0..self.outputs {
                let target = if self.outputs == 1 { f64::from(u8::from(y == 1)) } else { f64::from(u8::from(y == k)) };
                let r = probs[k] - target;
                for a in 0..=d {
                    g[k * (d + 1) + a] += r * x1[a];
                }
                for l in 0..self.outputs {
                    let c = if self.outputs == 1 {
                        probs[0] * (1.0 - probs[0])
                    } else {
                        probs[k] * (f64::from(u8::from(k == l)) - probs[l])
                    };
                    for a in 0..=d {
                        let row = k * (d + 1) + a;
                        for b in 0..=d {
                            h[(row, l * (d + 1) + b)] += c * x1[a] * x1[b];
                        }
                    }
                }
            }
        }
        for i in 0..p {
            if self.is_bias(i) {
                h[(i, i)] += BIAS_RIDGE;
            } else {
                g[i] += self.l2 * theta[i];
                h[(i, i)] += self.l2;
            }
        }
        (g, h)
    }
}

/// L2-regularised logistic regression fitted by damped Newton iterations on
/// z-scored features. Binary tasks use one sigmoid output, multiclass a softmax.
pub fn fit_logreg(train: &Dataset, cfg: &LogRegConfig) -> Result<LogRegModel> {
    if cfg.l2 < 0.0 || cfg.tol <= 0.0 {
        return Err(Error::Config(format!("invalid logreg config {cfg:?}")));
    }
    if train.n_rows() == 0 {
        return Err(Error::Dataset("empty training set".into()));
    }
    let scaler = Standardizer::fit(&train.features);
    let d = train.n_features();
    let z: Vec<Vec<f64>> = (0..train.n_rows())
        .map(|i| {
            let mut out = vec![0.0; d];
            standardize(&scaler, train.features.row(i), &mut out);
            out
        })
        .collect();
    let outputs = if train.class_count == 2 { 1 } else { train.class_count };
    let prob = Problem {
        z,
        y: train.labels.clone(),
        outputs,
        l2: cfg.l2,
    };
    let mut theta = DVector::zeros(prob.dim());
    let mut f = prob.objective(&theta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < cfg.max_iter {
        let (g, h) = prob.grad_hess(&theta);
        grad_norm = g.norm();
        if grad_norm <= cfg.tol {
            break;
        }
        iterations += 1;
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let fc = prob.objective(&cand);
            if fc <= f - 1e-4 * t * g.dot(&step) || t < 1e-10 {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
    }
    if iterations == cfg.max_iter {
        grad_norm = prob.grad_hess(&theta).0.norm();
    }
    let weights = (0..outputs).map(|k| (0..d).map(|j| theta[k * (d + 1) + j]).collect()).collect();
    let bias = (0..outputs).map(|k| theta[k * (d + 1) + d]).collect();
    Ok(LogRegModel {
        format: FORMAT.into(),
        version: VERSION,
        scaler,
        weights,
        bias,
        l2: cfg.l2,
        class_count: train.class_count,
        iterations,
        grad_norm,
        not_converged: grad_norm > cfg.tol,
    })
}

//! Gradient-boosted regression trees trained on the scalar distillation
//! objective (or plain log-loss for the hard-label baseline).
//!
//! Multiclass tasks are handled one-vs-rest: one boosted sequence per class,
//! each regressing that class's clipped soft logit. This path is experimental.

use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_split_indices, Dataset, Matrix};
use crate::distill::{tree_grad_hess, tree_loss, tree_rows, TreeRow};
use crate::error::{Error, Result};
use crate::scalar::sigmoid;
use crate::{DistillTargets, LossConfig};

pub const FORMAT: &str = "distillforge-gbdt";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub lambda: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 6,
            patience: 30,
            learning_rate: 0.1,
            min_leaf: 20,
            lambda: 1.0,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.lambda < 0.0 || self.min_leaf == 0 || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("invalid gbdt config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold`, or a missing value, go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = row[*feature];
                    node = if v <= *threshold || v.is_nan() { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    pub gain: f64,
}

fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Exact sorted-scan split search on one column.
///
/// Gain is `G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)`; only positive gains
/// count. Thresholds are midpoints between consecutive distinct values, ties
/// go to the lowest threshold, and missing values always fall on the left.
pub fn find_best_split(
    values: &[f64],
    grads: &[f64],
    hess: &[f64],
    min_leaf: usize,
    lambda: f64,
) -> Option<SplitCandidate> {
    let n = values.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let (mut g_total, mut h_total) = (0.0, 0.0);
    let (mut g_left, mut h_left, mut n_left) = (0.0, 0.0, 0usize);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        g_total += grads[i];
        h_total += hess[i];
        if values[i].is_nan() {
            g_left += grads[i];
            h_left += hess[i];
            n_left += 1;
        } else {
            order.push(i);
        }
    }
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let parent = leaf_score(g_total, h_total, lambda);
    let mut best: Option<SplitCandidate> = None;
    for s in 0..order.len().saturating_sub(1) {
        let i = order[s];
        g_left += grads[i];
        h_left += hess[i];
        n_left += 1;
        let (v, next) = (values[i], values[order[s + 1]]);
        if v == next || n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let gain = leaf_score(g_left, h_left, lambda) + leaf_score(g_total - g_left, h_total - h_left, lambda) - parent;
        if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                threshold: 0.5 * (v + next),
                gain,
            });
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    grads: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<TreeNode>,
    col: Vec<f64>,
    g_buf: Vec<f64>,
    h_buf: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grads[i], h + self.hess[i]));
        let mut best: Option<(usize, SplitCandidate)> = None;
        if depth < self.cfg.max_depth {
            self.g_buf.clear();
            self.h_buf.clear();
            self.g_buf.extend(rows.iter().map(|&i| self.grads[i]));
            self.h_buf.extend(rows.iter().map(|&i| self.hess[i]));
            for j in 0..self.x.cols() {
                self.col.clear();
                self.col.extend(rows.iter().map(|&i| self.x.get(i, j)));
                if let Some(c) = find_best_split(&self.col, &self.g_buf, &self.h_buf, self.cfg.min_leaf, self.cfg.lambda) {
                    if best.is_none_or(|(_, b)| c.gain > b.gain) {
                        best = Some((j, c));
                    }
                }
            }
        }
        let id = self.nodes.len();
        match best {
            None => {
                // `+ 0.0` turns a negative zero into a positive one
                self.nodes.push(TreeNode::Leaf {
                    value: -g / (h + self.cfg.lambda) + 0.0,
                });
                id
            }
            Some((feature, split)) => {
                self.nodes.push(TreeNode::Leaf { value: 0.0 });
                let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| {
                    let v = self.x.get(i, feature);
                    v <= split.threshold || v.is_nan()
                });
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                id
            }
        }
    }
}

/// Fits one regression tree to per-row gradients and hessians.
pub fn build_tree(x: &Matrix, grads: &[f64], hess: &[f64], cfg: &GbdtConfig) -> RegressionTree {
    let mut b = TreeBuilder {
        x,
        grads,
        hess,
        cfg,
        nodes: Vec::new(),
        col: Vec::new(),
        g_buf: Vec::new(),
        h_buf: Vec::new(),
    };
    b.grow((0..x.rows()).collect(), 0);
    RegressionTree { nodes: b.nodes }
}

/// Tracks the best validation loss and signals when `patience` iterations
/// pass without a strict improvement. Iterations are numbered from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_iteration: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_iteration: 0,
        }
    }

    /// Records the loss after `iteration`; returns false once training should stop.
    pub fn update(&mut self, iteration: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_iteration = iteration;
        }
        iteration - self.best_iteration < self.patience
    }

    pub fn best_iteration(&self) -> usize {
        self.best_iteration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub format: String,
    pub version: u32,
    pub config: GbdtConfig,
    pub alpha: f64,
    pub n_features: usize,
    pub class_count: usize,
    /// One entry per boosted output (1 for binary, C for one-vs-rest).
    pub base_score: Vec<f64>,
    pub learning_rate: f64,
    pub best_iteration: usize,
    /// Validation loss after each trained iteration (empty without validation).
    pub val_history: Vec<f64>,
    /// `trees[output][iteration]`, truncated to `best_iteration`.
    pub trees: Vec<Vec<RegressionTree>>,
}

impl BoostedModel {
    pub fn n_outputs(&self) -> usize {
        self.base_score.len()
    }

    /// Raw scores using the first `iterations` trees of each output.
    pub fn raw_scores(&self, row: &[f64], iterations: usize) -> Vec<f64> {
        self.trees
            .iter()
            .zip(&self.base_score)
            .map(|(seq, &base)| {
                let mut f = base;
                for t in seq.iter().take(iterations) {
                    f += self.learning_rate * t.predict_row(row);
                }
                f
            })
            .collect()
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        if rows.cols() != self.n_features {
            return Err(Error::FeatureMismatch {
                expected: self.n_features,
                found: rows.cols(),
            });
        }
        Ok((0..rows.rows())
            .map(|i| scores_to_proba(&self.raw_scores(rows.row(i), self.best_iteration)))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: BoostedModel = serde_json::from_str(text)?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(Error::Model(format!("expected {FORMAT} v{VERSION}, found {} v{}", m.format, m.version)));
        }
        Ok(m)
    }
}

fn scores_to_proba(scores: &[f64]) -> Vec<f64> {
    if scores.len() == 1 {
        let p = sigmoid(scores[0]);
        vec![1.0 - p, p]
    } else {
        let s: Vec<f64> = scores.iter().map(|&f| sigmoid(f)).collect();
        let total: f64 = s.iter().sum();
        if total > 0.0 {
            s.into_iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / scores.len() as f64; scores.len()]
        }
    }
}

/// Newton iterations for the best constant raw score.
fn constant_score(rows: &[TreeRow<f64>], idx: &[usize], alpha: f64) -> f64 {
    let mut f = 0.0;
    for _ in 0..50 {
        let (g, h) = idx.iter().fold((0.0, 0.0), |(g, h), &i| {
            let (gi, hi) = tree_grad_hess(f, &rows[i], alpha);
            (g + gi, h + hi)
        });
        if h <= 0.0 {
            break;
        }
        let step = g / h;
        f -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    f
}

fn mean_loss(rows: &[Vec<TreeRow<f64>>], scores: &[Vec<f64>], idx: &[usize], alpha: f64) -> f64 {
    let total: f64 = rows
        .iter()
        .zip(scores)
        .map(|(r, f)| idx.iter().map(|&i| tree_loss(f[i], &r[i], alpha)).sum::<f64>())
        .sum();
    total / idx.len().max(1) as f64
}

/// Boosts regression trees on the composite distillation objective.
pub fn fit_distilled(
    train: &Dataset,
    targets: &DistillTargets,
    loss: &LossConfig,
    cfg: &GbdtConfig,
) -> Result<BoostedModel> {
    cfg.validate()?;
    loss.validate()?;
    if targets.len() != train.n_rows() {
        return Err(Error::SoftLabels(format!(
            "{} targets for {} training rows",
            targets.len(),
            train.n_rows()
        )));
    }
    let c = train.class_count;
    let outputs: Vec<usize> = if c == 2 { vec![1] } else { (0..c).collect() };
    let rows: Vec<Vec<TreeRow<f64>>> = outputs.iter().map(|&k| tree_rows(targets, k)).collect();
    let alpha = loss.alpha;

    let (fit_idx, val_idx) = if cfg.val_fraction > 0.0 {
        stratified_split_indices(&train.labels, c, cfg.val_fraction, cfg.seed)?
    } else {
        ((0..train.n_rows()).collect(), Vec::new())
    };
    let x_fit = train.features.select_rows(&fit_idx);
    let x_val = train.features.select_rows(&val_idx);

    let base_score: Vec<f64> = rows.iter().map(|r| constant_score(r, &fit_idx, alpha)).collect();
    let mut model = BoostedModel {
        format: FORMAT.into(),
        version: VERSION,
        config: cfg.clone(),
        alpha,
        n_features: train.n_features(),
        class_count: c,
        base_score: base_score.clone(),
        learning_rate: cfg.learning_rate,
        best_iteration: 0,
        val_history: Vec::new(),
        trees: vec![Vec::new(); outputs.len()],
    };

    let mut f_fit: Vec<Vec<f64>> = base_score.iter().map(|&b| vec![b; fit_idx.len()]).collect();
    let mut f_val: Vec<Vec<f64>> = base_score.iter().map(|&b| vec![b; val_idx.len()]).collect();
    let fit_rows: Vec<Vec<TreeRow<f64>>> = rows.iter().map(|r| fit_idx.iter().map(|&i| r[i]).collect()).collect();
    let val_rows: Vec<Vec<TreeRow<f64>>> = rows.iter().map(|r| val_idx.iter().map(|&i| r[i]).collect()).collect();
    let all_val: Vec<usize> = (0..val_idx.len()).collect();

    let degenerate = fit_rows.iter().zip(&f_fit).all(|(r, f)| {
        r.iter()
            .zip(f)
            .all(|(row, &score)| tree_grad_hess(score, row, alpha).0.abs() <= 1e-12)
    });
    if degenerate || cfg.n_trees == 0 {
        return Ok(model);
    }

    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut grads = vec![0.0; fit_idx.len()];
    let mut hess = vec![0.0; fit_idx.len()];
    for iteration in 1..=cfg.n_trees {
        for o in 0..outputs.len() {
            for i in 0..fit_idx.len() {
                let (g, h) = tree_grad_hess(f_fit[o][i], &fit_rows[o][i], alpha);
                grads[i] = g;
                hess[i] = h;
            }
            let tree = build_tree(&x_fit, &grads, &hess, cfg);
            for (i, f) in f_fit[o].iter_mut().enumerate() {
                *f += cfg.learning_rate * tree.predict_row(x_fit.row(i));
            }
            for (i, f) in f_val[o].iter_mut().enumerate() {
                *f += cfg.learning_rate * tree.predict_row(x_val.row(i));
            }
            model.trees[o].push(tree);
        }
        if val_idx.is_empty() {
            continue;
        }
        let vl = mean_loss(&val_rows, &f_val, &all_val, alpha);
        model.val_history.push(vl);
        if !stopper.update(iteration, vl) {
            break;
        }
    }
    model.best_iteration = if val_idx.is_empty() {
        model.trees[0].len()
    } else {
        stopper.best_iteration()
    };
    for seq in &mut model.trees {
        seq.truncate(model.best_iteration);
    }
    Ok(model)
}

/// Hard-label baseline: the same trainer with `alpha = 0`, unit weights and temperatures.
pub fn fit_hard(train: &Dataset, cfg: &GbdtConfig) -> Result<BoostedModel> {
    let targets = DistillTargets::hard(&train.labels, train.class_count);
    fit_distilled(train, &targets, &LossConfig::hard_labels(), cfg)
}

/// Mean validation-style tree loss of a model on given rows; used to replay training.
pub fn objective_at(model: &BoostedModel, x: &Matrix, targets: &DistillTargets, iterations: usize) -> f64 {
    let outputs: Vec<usize> = if model.class_count == 2 { vec![1] } else { (0..model.class_count).collect() };
    let rows: Vec<Vec<TreeRow<f64>>> = outputs.iter().map(|&k| tree_rows(targets, k)).collect();
    let scores: Vec<Vec<f64>> = (0..outputs.len())
        .map(|o| (0..x.rows()).map(|i| model.raw_scores(x.row(i), iterations)[o]).collect())
        .collect();
    let idx: Vec<usize> = (0..x.rows()).collect();
    mean_loss(&rows, &scores, &idx, model.alpha)
}

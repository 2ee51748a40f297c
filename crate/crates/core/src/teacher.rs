//! Out-of-fold teacher soft labels.
//!
//! For every fold a fresh teacher is fitted on the rows outside the fold and
//! scores only the rows inside it, so no row's soft label comes from a teacher
//! that saw that row. The rows each teacher was fitted on are kept as an audit
//! trail and checked by [`leakage_audit`].

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FoldAssignment, Matrix};
use crate::error::{Error, Result};

/// Simplex tolerance for imported probability rows.
pub const IMPORT_TOLERANCE: f64 = 1e-6;

/// Out-of-fold class-probability vectors with fold and teacher provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelSet {
    pub probs: Vec<Vec<f64>>,
    pub fold_of: Vec<usize>,
    pub teacher_id: String,
    /// Per fold, the sorted row indices the teacher for that fold was fitted on.
    pub seen_sets: Vec<Vec<usize>>,
    pub class_count: usize,
}

impl SoftLabelSet {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Checks that every row lies on the probability simplex.
    pub fn check_simplex(&self, tol: f64) -> Result<()> {
        for (i, p) in self.probs.iter().enumerate() {
            if p.len() != self.class_count {
                return Err(Error::SoftLabels(format!("row {i} has {} probabilities", p.len())));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > tol || p.iter().any(|&v| !(-tol..=1.0 + tol).contains(&v)) {
                return Err(Error::SoftLabels(format!("row {i} is off the simplex (sum {sum})")));
            }
        }
        Ok(())
    }
}

/// Which reference teacher to run, or a file of precomputed soft labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSpec {
    Knn {
        /// Defaults to `ceil(sqrt(n_train))`.
        #[serde(default)]
        k: Option<usize>,
    },
    BaggedTree {
        #[serde(default = "default_trees")]
        trees: usize,
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

fn default_trees() -> usize {
    50
}

fn default_depth() -> usize {
    8
}

impl TeacherSpec {
    pub fn bagged() -> Self {
        TeacherSpec::BaggedTree {
            trees: default_trees(),
            depth: default_depth(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TeacherSpec::Knn { k: Some(0) } => Err(Error::Config("knn teacher needs k >= 1".into())),
            TeacherSpec::BaggedTree { trees: 0, .. } => Err(Error::Config("bagged teacher needs trees >= 1".into())),
            TeacherSpec::File { path } if path.as_os_str().is_empty() => {
                Err(Error::Config("file teacher needs a path".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short identifier written into soft-label files.
    pub fn id(&self) -> String {
        match self {
            TeacherSpec::Knn { k: None } => "knn".into(),
            TeacherSpec::Knn { k: Some(k) } => format!("knn-k{k}"),
            TeacherSpec::BaggedTree { trees, depth, seed } => format!("bagged-{trees}x{depth}-s{seed}"),
            TeacherSpec::File { path } => path
                .file_stem()
                .map_or_else(|| "file".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Same spec with its random seed shifted, used to vary teachers across runs.
    pub fn reseeded(&self, offset: u64) -> Self {
        match self {
            TeacherSpec::BaggedTree { trees, depth, seed } => TeacherSpec::BaggedTree {
                trees: *trees,
                depth: *depth,
                seed: seed.wrapping_add(offset),
            },
            other => other.clone(),
        }
    }
}

/// A fitted model mapping feature rows to class-probability vectors.
pub trait ProbabilisticPredictor: Send + Sync {
    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>>;
}

/// Fits the reference teacher described by `spec` on `train`.
pub fn fit_teacher(spec: &TeacherSpec, train: &Dataset) -> Result<Box<dyn ProbabilisticPredictor>> {
    spec.validate()?;
    match spec {
        TeacherSpec::Knn { k } => {
            let k = k.unwrap_or_else(|| default_k(train.n_rows()));
            Ok(Box::new(knn_teacher(train, k)?))
        }
        TeacherSpec::BaggedTree { trees, depth, seed } => {
            Ok(Box::new(bagged_tree_teacher(train, *trees, *depth, *seed)?))
        }
        TeacherSpec::File { path } => Err(Error::Config(format!(
            "file teacher {} has no in-process model",
            path.display()
        ))),
    }
}

pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// Runs out-of-fold labelling with one fresh teacher per fold.
pub fn oof_label(ds: &Dataset, folds: &FoldAssignment, spec: &TeacherSpec) -> Result<SoftLabelSet> {
    if folds.fold_of.len() != ds.n_rows() {
        return Err(Error::Config(format!(
            "fold assignment covers {} rows, dataset has {}",
            folds.fold_of.len(),
            ds.n_rows()
        )));
    }
    if let TeacherSpec::File { path } = spec {
        return import_foreign_soft_labels(path, ds, folds);
    }
    spec.validate()?;

    let per_fold: Vec<Result<(Vec<usize>, Vec<usize>, Vec<Vec<f64>>)>> = (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let seen = folds.train_rows(fold);
            let held = folds.fold_rows(fold);
            let fold_spec = spec.reseeded(fold as u64);
            let teacher = fit_teacher(&fold_spec, &ds.select(&seen)).map_err(|e| Error::TeacherFit {
                fold,
                reason: e.to_string(),
            })?;
            let probs = teacher
                .predict_proba(&ds.features.select_rows(&held))
                .map_err(|e| Error::TeacherFit {
                    fold,
                    reason: e.to_string(),
                })?;
            Ok((seen, held, probs))
        })
        .collect();

    let mut probs = vec![Vec::new(); ds.n_rows()];
    let mut seen_sets = Vec::with_capacity(folds.k);
    for result in per_fold {
        let (seen, held, fold_probs) = result?;
        for (i, p) in held.into_iter().zip(fold_probs) {
            probs[i] = p;
        }
        seen_sets.push(seen);
    }
    Ok(SoftLabelSet {
        probs,
        fold_of: folds.fold_of.clone(),
        teacher_id: spec.id(),
        seen_sets,
        class_count: ds.class_count,
    })
}

/// Equal-weight mean of several soft-label sets over the same rows and folds.
///
/// Each entry is averaged over its values in sorted order, so the result does
/// not depend on the order of `sets` and equals the input when all sets agree.
pub fn average_teachers(sets: &[SoftLabelSet]) -> Result<SoftLabelSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::SoftLabels("no soft-label sets to average".into()))?;
    for s in &sets[1..] {
        if s.len() != first.len() {
            return Err(Error::SoftLabels(format!(
                "row count mismatch: {} vs {}",
                s.len(),
                first.len()
            )));
        }
        if s.class_count != first.class_count {
            return Err(Error::SoftLabels(format!(
                "class count mismatch: {} vs {}",
                s.class_count, first.class_count
            )));
        }
        if s.fold_of != first.fold_of {
            return Err(Error::SoftLabels("teachers were run on different fold assignments".into()));
        }
    }
    let mut probs = Vec::with_capacity(first.len());
    let mut column = Vec::with_capacity(sets.len());
    for i in 0..first.len() {
        let row: Vec<f64> = (0..first.class_count)
            .map(|c| {
                column.clear();
                column.extend(sets.iter().map(|s| s.probs[i][c]));
                column.sort_by(f64::total_cmp);
                let mut mean = 0.0;
                for (m, &v) in column.iter().enumerate() {
                    mean += (v - mean) / (m + 1) as f64;
                }
                mean
            })
            .collect();
        probs.push(row);
    }
    let folds = sets.iter().map(|s| s.seen_sets.len()).max().unwrap_or(0);
    let seen_sets = (0..folds)
        .map(|k| {
            sets.iter()
                .filter_map(|s| s.seen_sets.get(k))
                .flatten()
                .copied()
                .collect::<BTreeSet<usize>>()
                .into_iter()
                .collect()
        })
        .collect();
    Ok(SoftLabelSet {
        probs,
        fold_of: first.fold_of.clone(),
        teacher_id: sets.iter().map(|s| s.teacher_id.as_str()).collect::<Vec<_>>().join("+"),
        seen_sets,
        class_count: first.class_count,
    })
}

/// z-scoring statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        if n == 0 {
            return Self { mean, scale };
        }
        for j in 0..d {
            let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.mean[j]) / self.scale[j];
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut buf = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            self.apply_row(x.row(i), &mut buf);
            for (j, &v) in buf.iter().enumerate() {
                out.set(i, j, v);
            }
        }
        out
    }
}

/// Distance-weighted k-nearest-neighbour teacher over z-scored features.
#[derive(Debug, Clone)]
pub struct KnnTeacher {
    scaler: Standardizer,
    train: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    k: usize,
}

/// Fits a k-NN teacher. Class estimates are `(k * W_c / W + 1) / (k + C)`,
/// where `W_c` is the total `1 / (1 + distance)` weight of neighbours in class
/// `c`; with equal distances this is the Laplace-smoothed neighbour count.
pub fn knn_teacher(train: &Dataset, k: usize) -> Result<KnnTeacher> {
    if train.n_rows() == 0 {
        return Err(Error::Dataset("knn teacher needs a non-empty training set".into()));
    }
    if k == 0 || k > train.n_rows() {
        return Err(Error::Config(format!(
            "knn k must be in 1..={}, got {k}",
            train.n_rows()
        )));
    }
    let scaler = Standardizer::fit(&train.features);
    Ok(KnnTeacher {
        train: scaler.apply(&train.features),
        scaler,
        labels: train.labels.clone(),
        class_count: train.class_count,
        k,
    })
}

impl ProbabilisticPredictor for KnnTeacher {
    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        if rows.cols() != self.train.cols() {
            return Err(Error::FeatureMismatch {
                expected: self.train.cols(),
                found: rows.cols(),
            });
        }
        let d = rows.cols();
        let mut q = vec![0.0; d];
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.train.rows());
        let c = self.class_count as f64;
        let k = self.k as f64;
        Ok((0..rows.rows())
            .map(|r| {
                self.scaler.apply_row(rows.row(r), &mut q);
                dist.clear();
                for i in 0..self.train.rows() {
                    let t = self.train.row(i);
                    let d2: f64 = q.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                    dist.push((d2, i));
                }
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < dist.len() {
                    dist.select_nth_unstable_by(self.k - 1, cmp);
                }
                let nbrs = &mut dist[..self.k];
                nbrs.sort_by(cmp);
                let mut mass = vec![0.0; self.class_count];
                let mut total = 0.0;
                for &(d2, i) in nbrs.iter() {
                    let w = 1.0 / (1.0 + d2.sqrt());
                    mass[self.labels[i]] += w;
                    total += w;
                }
                mass.iter().map(|&m| (k * m / total + 1.0) / (k + c)).collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ClassNode {
    Leaf { counts: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Gini classification tree with Laplace-smoothed leaf frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    nodes: Vec<ClassNode>,
    class_count: usize,
}

impl ClassTree {
    fn fit(x: &Matrix, labels: &[usize], rows: Vec<usize>, class_count: usize, max_depth: usize) -> Self {
        let mut tree = ClassTree {
            nodes: Vec::new(),
            class_count,
        };
        tree.grow(x, labels, rows, max_depth);
        tree
    }

    fn grow(&mut self, x: &Matrix, labels: &[usize], rows: Vec<usize>, depth_left: usize) -> usize {
        let mut counts = vec![0.0; self.class_count];
        for &i in &rows {
            counts[labels[i]] += 1.0;
        }
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let split = if depth_left == 0 || pure || rows.len() < 2 {
            None
        } else {
            best_gini_split(x, labels, &rows, self.class_count, &counts)
        };
        let id = self.nodes.len();
        match split {
            None => {
                self.nodes.push(ClassNode::Leaf { counts });
                id
            }
            Some((feature, threshold)) => {
                self.nodes.push(ClassNode::Leaf { counts: Vec::new() });
                let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| {
                    let v = x.get(i, feature);
                    v.is_nan() || v <= threshold
                });
                let left = self.grow(x, labels, l, depth_left - 1);
                let right = self.grow(x, labels, r, depth_left - 1);
                self.nodes[id] = ClassNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                id
            }
        }
    }

    fn leaf_proba(&self, row: &[f64], out: &mut [f64]) {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                ClassNode::Leaf { counts } => {
                    let n: f64 = counts.iter().sum();
                    let c = self.class_count as f64;
                    for (o, &k) in out.iter_mut().zip(counts) {
                        *o += (k + 1.0) / (n + c);
                    }
                    return;
                }
                ClassNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = row[*feature];
                    node = if v.is_nan() || v <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

fn gini_impurity(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

fn best_gini_split(
    x: &Matrix,
    labels: &[usize],
    rows: &[usize],
    class_count: usize,
    counts: &[f64],
) -> Option<(usize, f64)> {
    let n = rows.len() as f64;
    let parent = gini_impurity(counts, n) * n;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for j in 0..x.cols() {
        order.clear();
        order.extend(rows.iter().map(|&i| {
            let v = x.get(i, j);
            (if v.is_nan() { f64::NEG_INFINITY } else { v }, labels[i])
        }));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = vec![0.0; class_count];
        for s in 0..order.len() - 1 {
            left[order[s].1] += 1.0;
            if order[s].0 == order[s + 1].0 {
                continue;
            }
            let nl = (s + 1) as f64;
            let right: Vec<f64> = counts.iter().zip(&left).map(|(t, l)| t - l).collect();
            let child = gini_impurity(&left, nl) * nl + gini_impurity(&right, n - nl) * (n - nl);
            let gain = parent - child;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                let lo = order[s].0;
                let thr = if lo.is_finite() { 0.5 * (lo + order[s + 1].0) } else { order[s + 1].0 - 1.0 };
                best = Some((gain, j, thr));
            }
        }
    }
    best.map(|(_, j, t)| (j, t))
}

/// Bootstrap-bagged Gini trees; probability is the mean of per-tree smoothed leaf frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedTreeTeacher {
    trees: Vec<ClassTree>,
    class_count: usize,
    n_features: usize,
}

pub fn bagged_tree_teacher(train: &Dataset, trees: usize, depth: usize, seed: u64) -> Result<BaggedTreeTeacher> {
    if trees == 0 {
        return Err(Error::Config("bagged teacher needs trees >= 1".into()));
    }
    if train.n_rows() == 0 {
        return Err(Error::Dataset("bagged teacher needs a non-empty training set".into()));
    }
    let n = train.n_rows();
    let fitted: Vec<ClassTree> = (0..trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            ClassTree::fit(&train.features, &train.labels, sample, train.class_count, depth)
        })
        .collect();
    Ok(BaggedTreeTeacher {
        trees: fitted,
        class_count: train.class_count,
        n_features: train.n_features(),
    })
}

impl ProbabilisticPredictor for BaggedTreeTeacher {
    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<Vec<f64>>> {
        if rows.cols() != self.n_features {
            return Err(Error::FeatureMismatch {
                expected: self.n_features,
                found: rows.cols(),
            });
        }
        let m = self.trees.len() as f64;
        Ok((0..rows.rows())
            .map(|i| {
                let mut p = vec![0.0; self.class_count];
                for t in &self.trees {
                    t.leaf_proba(rows.row(i), &mut p);
                }
                p.iter_mut().for_each(|v| *v /= m);
                p
            })
            .collect())
    }
}

/// Writes `row_id,fold_id,teacher_id,p0,...,p{C-1}`, one line per row.
pub fn export_soft_labels(set: &SoftLabelSet, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_soft_labels(set, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_soft_labels<W: Write>(set: &SoftLabelSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row_id".to_string(), "fold_id".into(), "teacher_id".into()];
    header.extend((0..set.class_count).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for (i, p) in set.probs.iter().enumerate() {
        let mut rec = vec![i.to_string(), set.fold_of[i].to_string(), set.teacher_id.clone()];
        rec.extend(p.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a soft-label file and checks it against the dataset and fold assignment.
///
/// Rows may appear in any order but must cover every dataset row exactly once.
/// Probability rows within `1e-6` of the simplex are renormalised; anything
/// further off is rejected. Seen sets are rebuilt from the fold structure.
pub fn import_soft_labels(path: &Path, ds: &Dataset, folds: &FoldAssignment) -> Result<SoftLabelSet> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_soft_labels(file, ds.n_rows(), ds.class_count, folds)
}

pub fn read_soft_labels<R: std::io::Read>(
    input: R,
    n_rows: usize,
    class_count: usize,
    folds: &FoldAssignment,
) -> Result<SoftLabelSet> {
    parse_soft_labels(input, n_rows, class_count, folds, true)
}

/// Like [`import_soft_labels`], but a row whose `fold_id` disagrees with the
/// assignment keeps the file's fold instead of failing. Such rows were scored
/// by a teacher whose training folds contain them, so [`leakage_audit`]
/// reports them.
pub fn import_foreign_soft_labels(path: &Path, ds: &Dataset, folds: &FoldAssignment) -> Result<SoftLabelSet> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_soft_labels(file, ds.n_rows(), ds.class_count, folds, false)
}

fn parse_soft_labels<R: std::io::Read>(
    input: R,
    n_rows: usize,
    class_count: usize,
    folds: &FoldAssignment,
    strict_folds: bool,
) -> Result<SoftLabelSet> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<String> = ["row_id", "fold_id", "teacher_id"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..class_count).map(|c| format!("p{c}")))
        .collect();
    if header != expected {
        return Err(Error::SoftLabels(format!(
            "header {header:?} does not match expected {expected:?}"
        )));
    }
    if folds.fold_of.len() != n_rows {
        return Err(Error::Config("fold assignment does not cover the dataset".into()));
    }
    let mut probs: Vec<Option<Vec<f64>>> = vec![None; n_rows];
    let mut fold_of = folds.fold_of.clone();
    let mut teacher_id: Option<String> = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let row: usize = field(0)
            .parse()
            .map_err(|_| Error::SoftLabels(format!("line {}: bad row_id `{}`", line + 2, field(0))))?;
        if row >= n_rows {
            return Err(Error::SoftLabels(format!("row {row} is outside the dataset")));
        }
        if probs[row].is_some() {
            return Err(Error::SoftLabels(format!("duplicate row {row}")));
        }
        let fold: usize = field(1)
            .parse()
            .map_err(|_| Error::SoftLabels(format!("row {row}: bad fold_id `{}`", field(1))))?;
        if fold >= folds.k {
            return Err(Error::SoftLabels(format!("row {row}: fold {fold} outside 0..{}", folds.k)));
        }
        if strict_folds && fold != folds.fold_of[row] {
            return Err(Error::FoldMismatch {
                row,
                found: fold,
                expected: folds.fold_of[row],
            });
        }
        match &teacher_id {
            None => teacher_id = Some(field(2).to_string()),
            Some(t) if t != field(2) => {
                return Err(Error::SoftLabels(format!(
                    "row {row}: teacher `{}` differs from `{t}`",
                    field(2)
                )))
            }
            _ => {}
        }
        let p: Vec<f64> = (0..class_count)
            .map(|c| {
                field(3 + c)
                    .parse::<f64>()
                    .map_err(|_| Error::SoftLabels(format!("row {row}: bad probability `{}`", field(3 + c))))
            })
            .collect::<Result<_>>()?;
        let sum: f64 = p.iter().sum();
        if !sum.is_finite()
            || (sum - 1.0).abs() > IMPORT_TOLERANCE
            || p.iter().any(|&v| !(-IMPORT_TOLERANCE..=1.0 + IMPORT_TOLERANCE).contains(&v))
        {
            return Err(Error::SoftLabels(format!("row {row} is off the simplex (sum {sum})")));
        }
        let clamped: Vec<f64> = p.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        fold_of[row] = fold;
        probs[row] = Some(clamped.into_iter().map(|v| v / total).collect());
    }
    let probs: Vec<Vec<f64>> = probs
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::SoftLabels(format!("missing row {i}"))))
        .collect::<Result<_>>()?;
    Ok(SoftLabelSet {
        probs,
        fold_of,
        teacher_id: teacher_id.unwrap_or_default(),
        seen_sets: (0..folds.k).map(|k| folds.train_rows(k)).collect(),
        class_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub offending_rows: Vec<usize>,
}

/// Passes iff no row appears in the seen set of its own fold's teacher.
pub fn leakage_audit(set: &SoftLabelSet) -> AuditReport {
    let seen: Vec<std::collections::HashSet<usize>> = set
        .seen_sets
        .iter()
        .map(|rows| rows.iter().copied().collect())
        .collect();
    let offending_rows: Vec<usize> = (0..set.fold_of.len())
        .filter(|&i| seen.get(set.fold_of[i]).is_some_and(|s| s.contains(&i)))
        .collect();
    AuditReport {
        passed: offending_rows.is_empty(),
        offending_rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{stratified_kfold, synth_generate, ColumnKind, SynthConfig};
    use std::collections::BTreeMap;

    fn line_ds(xs: &[f64], labels: &[usize]) -> Dataset {
        let n = xs.len();
        Dataset {
            features: Matrix::new(n, 1, xs.to_vec()).unwrap(),
            feature_names: vec!["x".into()],
            feature_kinds: vec![ColumnKind::Numeric],
            category_levels: vec![0],
            labels: labels.to_vec(),
            class_count: 2,
            class_names: vec!["0".into(), "1".into()],
            sensitive: BTreeMap::new(),
            missing: vec![false; n],
        }
    }

    fn small_synth() -> Dataset {
        synth_generate(&SynthConfig {
            n: 100,
            d: 4,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn knn_smoothing_hand_cases() {
        let ds = line_ds(&[0.0, 1.0, 2.0, 3.0], &[0, 1, 1, 1]);
        let t = knn_teacher(&ds, 1).unwrap();
        let p = t.predict_proba(&Matrix::new(1, 1, vec![0.0]).unwrap()).unwrap();
        // (count + 1) / (k + C) with count 1, k 1, C 2
        assert!((p[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[0][1] - 1.0 / 3.0).abs() < 1e-12);

        let xs: Vec<f64> = (0..12).map(f64::from).collect();
        let labels: Vec<usize> = (0..12).map(|i| usize::from(i >= 4)).collect();
        let t = knn_teacher(&line_ds(&xs, &labels), 8).unwrap();
        let p = t.predict_proba(&Matrix::new(1, 1, vec![11.0]).unwrap()).unwrap();
        assert!((p[0][0] - 0.1).abs() < 1e-12);
        assert!((p[0][1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn knn_conflicting_duplicates_stay_interior() {
        let t = knn_teacher(&line_ds(&[1.0, 1.0, 1.0], &[0, 1, 1]), 3).unwrap();
        let p = t.predict_proba(&Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        assert!(p[0].iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(knn_teacher(&line_ds(&[], &[]), 1).is_err());
        assert!(knn_teacher(&line_ds(&[1.0], &[0]), 2).is_err());
    }

    #[test]
    fn stump_bag_predicts_constant_prior() {
        let ds = small_synth();
        let t = bagged_tree_teacher(&ds, 1, 0, 3).unwrap();
        let p = t.predict_proba(&ds.features).unwrap();
        assert!(p.iter().all(|r| r == &p[0]));
        let prior = ds.class_counts()[1] as f64 / ds.n_rows() as f64;
        assert!((p[0][1] - prior).abs() < 0.15);
    }

    #[test]
    fn bagged_teacher_deterministic() {
        let ds = small_synth();
        let a = bagged_tree_teacher(&ds, 5, 4, 9).unwrap().predict_proba(&ds.features).unwrap();
        let b = bagged_tree_teacher(&ds, 5, 4, 9).unwrap().predict_proba(&ds.features).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn oof_covers_every_row_once_and_passes_audit() {
        let ds = small_synth();
        let folds = stratified_kfold(&ds, 5, 1).unwrap();
        let set = oof_label(&ds, &folds, &TeacherSpec::Knn { k: None }).unwrap();
        assert_eq!(set.len(), 100);
        assert!(set.probs.iter().all(|p| p.len() == 2));
        for (k, seen) in set.seen_sets.iter().enumerate() {
            assert_eq!(seen.len(), 80);
            assert!(seen.iter().all(|&i| folds.fold_of[i] != k));
        }
        set.check_simplex(1e-9).unwrap();
        assert!(leakage_audit(&set).passed);
    }

    #[test]
    fn audit_flags_planted_row() {
        let mut set = SoftLabelSet {
            probs: vec![vec![0.5, 0.5]; 6],
            fold_of: vec![0, 1, 0, 1, 0, 1],
            teacher_id: "t".into(),
            seen_sets: vec![vec![1, 3, 5], vec![0, 2, 4]],
            class_count: 2,
        };
        assert!(leakage_audit(&set).passed);
        set.seen_sets[1] = vec![0, 2, 3, 4];
        let r = leakage_audit(&set);
        assert!(!r.passed);
        assert_eq!(r.offending_rows, vec![3]);

        let empty = SoftLabelSet {
            probs: vec![],
            fold_of: vec![],
            teacher_id: String::new(),
            seen_sets: vec![],
            class_count: 2,
        };
        assert!(leakage_audit(&empty).passed);
    }

    fn set_with(probs: Vec<Vec<f64>>, id: &str) -> SoftLabelSet {
        let n = probs.len();
        SoftLabelSet {
            probs,
            fold_of: vec![0; n],
            teacher_id: id.into(),
            seen_sets: vec![vec![]],
            class_count: 2,
        }
    }

    #[test]
    fn averaging_hand_case_and_order_invariance() {
        let a = set_with(vec![vec![0.8, 0.2]], "a");
        let b = set_with(vec![vec![0.6, 0.4]], "b");
        let ab = average_teachers(&[a.clone(), b.clone()]).unwrap();
        let ba = average_teachers(&[b, a.clone()]).unwrap();
        assert!((ab.probs[0][0] - 0.7).abs() < 1e-12);
        assert!((ab.probs[0][1] - 0.3).abs() < 1e-12);
        assert_eq!(ab.probs, ba.probs);
        assert_eq!(ab.teacher_id, "a+b");
        let same = average_teachers(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(same.probs, a.probs);
    }

    #[test]
    fn averaging_rejects_mismatches() {
        let a = set_with(vec![vec![0.8, 0.2]], "a");
        let b = set_with(vec![vec![0.8, 0.2], vec![0.1, 0.9]], "b");
        assert!(average_teachers(&[a.clone(), b]).is_err());
        let mut c = set_with(vec![vec![0.3, 0.3, 0.4]], "c");
        c.class_count = 3;
        assert!(average_teachers(&[a, c]).is_err());
        assert!(average_teachers(&[]).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let ds = small_synth();
        let folds = stratified_kfold(&ds, 5, 2).unwrap();
        let set = oof_label(&ds, &folds, &TeacherSpec::bagged()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("soft.csv");
        export_soft_labels(&set, &path).unwrap();
        let back = import_soft_labels(&path, &ds, &folds).unwrap();
        assert_eq!(back.teacher_id, set.teacher_id);
        assert_eq!(back.seen_sets, set.seen_sets);
        for (a, b) in set.probs.iter().zip(&back.probs) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn export_format() {
        let mut buf = Vec::new();
        write_soft_labels(&set_with(vec![], "t"), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row_id,fold_id,teacher_id,p0,p1\n");
        let mut buf = Vec::new();
        write_soft_labels(&set_with(vec![vec![0.25, 0.75]], "t"), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("0,0,t,2.5000000000000000e-1,"), "{line}");
    }

    fn folds_of(fold_of: Vec<usize>, k: usize) -> FoldAssignment {
        FoldAssignment { fold_of, k, seed: 0 }
    }

    #[test]
    fn import_errors() {
        let folds = folds_of(vec![0, 1], 2);
        let read = |text: &str| read_soft_labels(text.as_bytes(), 2, 2, &folds);
        let head = "row_id,fold_id,teacher_id,p0,p1\n";
        let err = read(&format!("{head}0,0,t,0.5,0.5\n1,1,t,0.9,0.6\n")).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let err = read(&format!("{head}0,0,t,0.5,0.5\n1,0,t,0.4,0.6\n")).unwrap_err();
        assert!(err.to_string().contains("fold mismatch"), "{err}");
        assert!(read(&format!("{head}0,0,t,0.5,0.5\n")).unwrap_err().to_string().contains("missing row 1"));
        assert!(read(&format!("{head}0,0,t,0.5,0.5\n0,0,t,0.5,0.5\n"))
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let ok = read(&format!("{head}1,1,t,0.4,0.6000001\n0,0,t,1,0\n")).unwrap();
        assert!((ok.probs[1].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(ok.seen_sets, vec![vec![1], vec![0]]);
    }

    #[test]
    fn spec_validation() {
        assert!(TeacherSpec::Knn { k: Some(0) }.validate().is_err());
        assert!(TeacherSpec::File { path: PathBuf::new() }.validate().is_err());
        let parsed: TeacherSpec = serde_json::from_str(r#"{"kind":"bagged_tree"}"#).unwrap();
        assert_eq!(parsed, TeacherSpec::bagged());
    }
}

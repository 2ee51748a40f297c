//! Tabular datasets: loading, imputation, stratified folds and splits, and a
//! synthetic generator used as the default test corpus.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Target,
    Sensitive,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    /// Declared levels of a target or sensitive column, in code order.
    /// When absent, levels are numbered in first-appearance order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

/// Column schema sidecar: `{"columns":[{"name","kind","role"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let targets = self
            .columns
            .iter()
            .filter(|c| c.role == ColumnRole::Target)
            .count();
        if targets == 0 {
            return Err(Error::Schema("no target column".into()));
        }
        if targets > 1 {
            return Err(Error::Schema("more than one target column".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name)));
            }
        }
        if !self.columns.iter().any(|c| c.role == ColumnRole::Feature) {
            return Err(Error::Schema("no feature column".into()));
        }
        Ok(())
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dataset(format!(
                "matrix data has {} cells, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dataset(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

/// A labelled tabular classification dataset.
///
/// Missing cells hold `NaN` in `features` until imputed; `missing` keeps the
/// original mask either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<ColumnKind>,
    /// Number of integer codes per categorical feature (0 for numeric ones).
    pub category_levels: Vec<usize>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub sensitive: BTreeMap<String, Vec<usize>>,
    pub missing: Vec<bool>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[i * self.n_features() + j]
    }

    /// Checks the dataset invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.rows() != n || self.missing.len() != n * self.features.cols() {
            return Err(Error::Dataset("feature, label and mask row counts differ".into()));
        }
        if self.class_count < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 classes, got {}",
                self.class_count
            )));
        }
        if self.feature_names.len() != self.n_features()
            || self.feature_kinds.len() != self.n_features()
            || self.category_levels.len() != self.n_features()
        {
            return Err(Error::Dataset("feature metadata width mismatch".into()));
        }
        let counts = self.class_counts();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::Dataset(format!("class id {bad} >= {}", self.class_count)));
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::Dataset(format!("class {c} has no rows")));
        }
        for (name, groups) in &self.sensitive {
            if groups.len() != n {
                return Err(Error::Dataset(format!("sensitive column `{name}` length mismatch")));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            if y < self.class_count {
                counts[y] += 1;
            }
        }
        counts
    }

    /// Rows at `idx`, in that order. Class metadata is kept even if a class
    /// ends up absent from the subset.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.n_features();
        let mut missing = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            missing.extend_from_slice(&self.missing[i * d..(i + 1) * d]);
        }
        Dataset {
            features: self.features.select_rows(idx),
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            category_levels: self.category_levels.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            sensitive: self
                .sensitive
                .iter()
                .map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect()))
                .collect(),
            missing,
        }
    }
}

fn is_missing_cell(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "NA"
}

/// Loads a CSV file described by a JSON schema sidecar.
pub fn load_csv(path: &Path, schema_path: &Path) -> Result<Dataset> {
    let schema = Schema::from_path(schema_path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    load_records(&schema, &header, reader.records())
}

/// Parses CSV text (header row included) against a schema.
pub fn load_csv_str(text: &str, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    load_records(schema, &header, reader.records())
}

fn load_records<R: std::io::Read>(
    schema: &Schema,
    header: &[String],
    records: csv::StringRecordsIter<'_, R>,
) -> Result<Dataset> {
    for h in header {
        if !schema.columns.iter().any(|c| &c.name == h) {
            return Err(Error::UnknownColumn(h.clone()));
        }
    }
    let mut position = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        let p = header
            .iter()
            .position(|h| h == &c.name)
            .ok_or_else(|| Error::UnknownColumn(c.name.clone()))?;
        position.push(p);
    }

    let feature_cols: Vec<usize> = (0..schema.columns.len())
        .filter(|&i| schema.columns[i].role == ColumnRole::Feature)
        .collect();
    let target_col = schema
        .columns
        .iter()
        .position(|c| c.role == ColumnRole::Target)
        .expect("validated schema has a target");
    let sensitive_cols: Vec<usize> = (0..schema.columns.len())
        .filter(|&i| schema.columns[i].role == ColumnRole::Sensitive)
        .collect();
    let target = &schema.columns[target_col];

    let d = feature_cols.len();
    let mut data = Vec::new();
    let mut missing = Vec::new();
    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); d];
    let mut class_codes: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = target.classes.clone().unwrap_or_default();
    for (i, name) in class_names.iter().enumerate() {
        class_codes.insert(name.clone(), i);
    }
    let declared = target.classes.is_some();
    let mut raw_labels: Vec<usize> = Vec::new();
    let mut sensitive_codes: Vec<HashMap<String, usize>> = sensitive_cols
        .iter()
        .map(|&ci| {
            let levels = schema.columns[ci].classes.iter().flatten();
            levels.enumerate().map(|(i, l)| (l.clone(), i)).collect()
        })
        .collect();
    let mut sensitive: Vec<Vec<usize>> = vec![Vec::new(); sensitive_cols.len()];

    for (row, rec) in records.enumerate() {
        let rec = rec?;
        for (j, &ci) in feature_cols.iter().enumerate() {
            let col = &schema.columns[ci];
            let cell = rec.get(position[ci]).unwrap_or("");
            if is_missing_cell(cell) {
                data.push(f64::NAN);
                missing.push(true);
                continue;
            }
            missing.push(false);
            match col.kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                        row,
                        column: col.name.clone(),
                        value: cell.to_string(),
                    })?;
                    data.push(v);
                }
                ColumnKind::Categorical => {
                    let next = codes[j].len();
                    let code = *codes[j].entry(cell.trim().to_string()).or_insert(next);
                    data.push(code as f64);
                }
            }
        }

        let cell = rec.get(position[target_col]).unwrap_or("").trim();
        if is_missing_cell(cell) {
            return Err(Error::UnknownLabel {
                row,
                label: cell.to_string(),
            });
        }
        let label = match (target.kind, declared) {
            (_, true) => *class_codes.get(cell).ok_or_else(|| Error::UnknownLabel {
                row,
                label: cell.to_string(),
            })?,
            (ColumnKind::Categorical, false) => {
                let next = class_codes.len();
                *class_codes.entry(cell.to_string()).or_insert_with(|| {
                    class_names.push(cell.to_string());
                    next
                })
            }
            (ColumnKind::Numeric, false) => cell.parse::<usize>().map_err(|_| Error::UnknownLabel {
                row,
                label: cell.to_string(),
            })?,
        };
        raw_labels.push(label);

        for (s, &ci) in sensitive_cols.iter().enumerate() {
            let cell = rec.get(position[ci]).unwrap_or("").trim().to_string();
            let next = sensitive_codes[s].len();
            sensitive[s].push(*sensitive_codes[s].entry(cell).or_insert(next));
        }
    }

    let class_count = if declared || target.kind == ColumnKind::Categorical {
        class_names.len()
    } else {
        let c = raw_labels.iter().copied().max().map_or(0, |m| m + 1);
        class_names = (0..c).map(|k| k.to_string()).collect();
        c
    };

    let n = raw_labels.len();
    let ds = Dataset {
        features: Matrix::new(n, d, data)?,
        feature_names: feature_cols.iter().map(|&c| schema.columns[c].name.clone()).collect(),
        feature_kinds: feature_cols.iter().map(|&c| schema.columns[c].kind).collect(),
        category_levels: feature_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| match schema.columns[c].kind {
                ColumnKind::Numeric => 0,
                ColumnKind::Categorical => codes[j].len(),
            })
            .collect(),
        labels: raw_labels,
        class_count,
        class_names,
        sensitive: sensitive_cols
            .iter()
            .zip(sensitive)
            .map(|(&c, g)| (schema.columns[c].name.clone(), g))
            .collect(),
        missing,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeStrategy {
    #[default]
    Zero,
    Median,
}

/// Replaces missing cells. The missing mask is kept for provenance.
pub fn impute(ds: &Dataset, strategy: ImputeStrategy) -> Result<Dataset> {
    let mut out = ds.clone();
    let (n, d) = (ds.n_rows(), ds.n_features());
    for j in 0..d {
        let holes: Vec<usize> = (0..n).filter(|&i| ds.is_missing(i, j)).collect();
        if holes.is_empty() {
            continue;
        }
        let fill = match strategy {
            ImputeStrategy::Zero => 0.0,
            ImputeStrategy::Median => {
                let mut observed: Vec<f64> = (0..n)
                    .filter(|&i| !ds.is_missing(i, j))
                    .map(|i| ds.features.get(i, j))
                    .collect();
                if observed.is_empty() {
                    return Err(Error::EmptyColumn(ds.feature_names[j].clone()));
                }
                observed.sort_by(f64::total_cmp);
                let m = observed.len();
                if m % 2 == 1 {
                    observed[m / 2]
                } else {
                    0.5 * (observed[m / 2 - 1] + observed[m / 2])
                }
            }
        };
        for i in holes {
            out.features.set(i, j, fill);
        }
    }
    Ok(out)
}

/// Per-row fold ids of a stratified K-fold partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Rows outside `fold`, i.e. the rows a teacher for that fold may see.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

fn rows_by_class(labels: &[usize], class_count: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); class_count];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

/// Stratified K-fold: rows of each class are shuffled and dealt round-robin.
/// The dealing position carries over between classes so fold totals stay balanced too.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    stratified_kfold_labels(&ds.labels, ds.class_count, k, seed)
}

pub fn stratified_kfold_labels(
    labels: &[usize],
    class_count: usize,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be >= 2, got {k}")));
    }
    let by_class = rows_by_class(labels, class_count);
    for (c, rows) in by_class.iter().enumerate() {
        if rows.len() < k {
            return Err(Error::ClassTooSmall {
                class: c,
                count: rows.len(),
                required: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for mut rows in by_class {
        rows.shuffle(&mut rng);
        for i in rows {
            fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

/// Stratified split of row indices into (kept, held-out), each sorted ascending.
///
/// Each class with `m` rows sends `round(fraction * m)` rows to the held-out
/// side, clamped so both sides keep at least one row of every class.
pub fn stratified_split_indices(
    labels: &[usize],
    class_count: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0,1), got {fraction}")));
    }
    let by_class = rows_by_class(labels, class_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for (c, mut rows) in by_class.into_iter().enumerate() {
        let m = rows.len();
        if m < 2 {
            return Err(Error::ClassTooSmall {
                class: c,
                count: m,
                required: 2,
            });
        }
        let n_held = ((fraction * m as f64).round() as usize).clamp(1, m - 1);
        rows.shuffle(&mut rng);
        held.extend_from_slice(&rows[..n_held]);
        kept.extend_from_slice(&rows[n_held..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}

/// Stratified train/test split. Rows keep their original relative order on both sides.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = stratified_split_indices(&ds.labels, ds.class_count, test_fraction, seed)?;
    Ok((ds.select(&train), ds.select(&test)))
}

/// Stratified subsample to at most `max_rows` rows (identity when already small enough).
pub fn stratified_subsample(ds: &Dataset, max_rows: usize, seed: u64) -> Result<Dataset> {
    if ds.n_rows() <= max_rows {
        return Ok(ds.clone());
    }
    let fraction = max_rows as f64 / ds.n_rows() as f64;
    let (_, keep) = stratified_split_indices(&ds.labels, ds.class_count, fraction, seed)?;
    Ok(ds.select(&keep))
}

/// Synthetic data generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub cluster_sep: f64,
    pub label_noise: f64,
    pub group_bias: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 20,
            classes: 2,
            cluster_sep: 1.5,
            label_noise: 0.1,
            group_bias: 0.5,
            seed: 0,
        }
    }
}

/// Noise-free class scores behind the synthetic label rule: negative squared
/// distance to each cluster centre plus an alternating-sign interaction term
/// on the first two features, which bends the decision boundary.
pub fn synth_scores(x: &[f64], centres: &[Vec<f64>]) -> Vec<f64> {
    let inter = 0.5 * x[0] * x[1];
    centres
        .iter()
        .enumerate()
        .map(|(k, mu)| {
            let dist2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            -0.5 * dist2 + sign * inter
        })
        .collect()
}

/// Draws the cluster centres for a generator config.
pub fn synth_centres(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| 0.5 * cfg.cluster_sep * a / norm).collect()
        })
        .collect()
}

/// Gaussian clusters with a quadratic-margin label rule, label flips, and one
/// binary sensitive attribute `group` correlated with feature 0.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.classes < 2 || cfg.d < 2 || cfg.n < 10 * cfg.classes {
        return Err(Error::Config(format!(
            "synthetic generator needs classes >= 2, d >= 2, n >= 10*classes (got n={}, d={}, classes={})",
            cfg.n, cfg.d, cfg.classes
        )));
    }
    if !(0.0..=1.0).contains(&cfg.label_noise) || !(-1.0..=1.0).contains(&cfg.group_bias) {
        return Err(Error::Config("label_noise must be in [0,1] and group_bias in [-1,1]".into()));
    }
    let centres = synth_centres(cfg);
    // Separate stream from the centres so changing n does not move them.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut data = Vec::with_capacity(cfg.n * cfg.d);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let cluster = rng.random_range(0..cfg.classes);
        let x: Vec<f64> = centres[cluster]
            .iter()
            .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut y = crate::scalar::argmax(&synth_scores(&x, &centres));
        if rng.random::<f64>() < cfg.label_noise {
            let shift = rng.random_range(1..cfg.classes);
            y = (y + shift) % cfg.classes;
        }
        data.extend_from_slice(&x);
        labels.push(y);
    }

    let x0: Vec<f64> = (0..cfg.n).map(|i| data[i * cfg.d]).collect();
    let mean = x0.iter().sum::<f64>() / cfg.n as f64;
    let sd = (x0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cfg.n as f64)
        .sqrt()
        .max(1e-12);
    let rho = cfg.group_bias;
    let groups: Vec<usize> = x0
        .iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            usize::from(rho * (v - mean) / sd + (1.0 - rho * rho).sqrt() * e > 0.0)
        })
        .collect();

    let ds = Dataset {
        features: Matrix::new(cfg.n, cfg.d, data)?,
        feature_names: (0..cfg.d).map(|j| format!("x{j}")).collect(),
        feature_kinds: vec![ColumnKind::Numeric; cfg.d],
        category_levels: vec![0; cfg.d],
        labels,
        class_count: cfg.classes,
        class_names: (0..cfg.classes).map(|k| k.to_string()).collect(),
        sensitive: BTreeMap::from([("group".to_string(), groups)]),
        missing: vec![false; cfg.n * cfg.d],
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset as CSV plus its schema sidecar.
pub fn write_csv(ds: &Dataset, csv_path: &Path, schema_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.extend(ds.sensitive.keys().cloned());
    header.push("target".into());
    w.write_record(&header)?;
    for i in 0..ds.n_rows() {
        let mut rec: Vec<String> = (0..ds.n_features())
            .map(|j| {
                if ds.is_missing(i, j) {
                    String::new()
                } else {
                    format!("{:?}", ds.features.get(i, j))
                }
            })
            .collect();
        rec.extend(ds.sensitive.values().map(|g| g[i].to_string()));
        rec.push(ds.class_names[ds.labels[i]].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut columns: Vec<ColumnSpec> = ds
        .feature_names
        .iter()
        .zip(&ds.feature_kinds)
        .map(|(n, k)| ColumnSpec {
            name: n.clone(),
            kind: *k,
            role: ColumnRole::Feature,
            classes: None,
        })
        .collect();
    columns.extend(ds.sensitive.iter().map(|(n, g)| ColumnSpec {
        name: n.clone(),
        kind: ColumnKind::Categorical,
        role: ColumnRole::Sensitive,
        classes: Some((0..=g.iter().copied().max().unwrap_or(0)).map(|v| v.to_string()).collect()),
    }));
    columns.push(ColumnSpec {
        name: "target".into(),
        kind: ColumnKind::Categorical,
        role: ColumnRole::Target,
        classes: Some(ds.class_names.clone()),
    });
    std::fs::write(schema_path, serde_json::to_string_pretty(&Schema { columns })?)?;
    Ok(())
}

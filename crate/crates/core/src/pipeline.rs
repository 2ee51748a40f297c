//! End-to-end runs: split, out-of-fold teaching, distillation, evaluation and
//! benchmarking, with every intermediate artifact persisted per seed.
//!
//! Layout of an output directory:
//!
//! ```text
//! run_config.json
//! aggregate.json
//! seed-<s>/folds.json        split and fold assignment
//! seed-<s>/softlabels.csv    out-of-fold teacher probabilities
//! seed-<s>/teacher.json      teacher ids, test AUC, leakage audit
//! seed-<s>/model.json        trained student
//! seed-<s>/report.json       evaluation report
//! timings/seed-<s>.json      latency (wall-clock, not reproducible)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_logreg, LogRegConfig};
use crate::bench::{measure, LatencyReport, RUNS, WARMUP};
use crate::dataset::{
    impute, load_csv, stratified_split_indices, stratified_subsample, synth_generate, Dataset,
    FoldAssignment, ImputeStrategy, SynthConfig,
};
use crate::distill::build_targets;
use crate::error::{Error, Result};
use crate::gbdt::{fit_distilled, fit_hard, GbdtConfig};
use crate::metrics::{evaluate, macro_auc, EoMode, EvalReport};
use crate::mlp::{fit_mlp, fit_mlp_hard, TrainSchedule};
use crate::model::{Model, StudentKind};
use crate::teacher::{
    average_teachers, export_soft_labels, fit_teacher, import_foreign_soft_labels, import_soft_labels, leakage_audit,
    oof_label, AuditReport, SoftLabelSet, TeacherSpec,
};
use crate::{DistillTargets, LossConfig};

pub const FOLDS_FILE: &str = "folds.json";
pub const SOFT_LABELS_FILE: &str = "softlabels.csv";
pub const TEACHER_FILE: &str = "teacher.json";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const CONFIG_FILE: &str = "run_config.json";
pub const TIMINGS_DIR: &str = "timings";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, schema: PathBuf },
    Synthetic(SynthConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub enabled: bool,
    pub warmup: usize,
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            warmup: WARMUP,
            runs: RUNS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub k_folds: usize,
    pub seeds: Vec<u64>,
    pub teachers: Vec<TeacherSpec>,
    pub student: StudentKind,
    pub loss: LossConfig,
    pub gbdt: GbdtConfig,
    pub mlp: TrainSchedule,
    pub logreg: LogRegConfig,
    pub test_fraction: f64,
    /// Share of the non-test rows held out to fit the calibration temperature.
    pub calib_fraction: f64,
    pub impute: ImputeStrategy,
    pub max_rows: Option<usize>,
    pub eo_mode: EoMode,
    pub bench: BenchConfig,
    pub allow_unaudited: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            k_folds: 5,
            seeds: vec![0, 1, 2, 3, 4],
            teachers: vec![TeacherSpec::bagged()],
            student: StudentKind::Gbdt,
            loss: LossConfig::default(),
            gbdt: GbdtConfig::default(),
            mlp: TrainSchedule::default(),
            logreg: LogRegConfig::default(),
            test_fraction: 0.2,
            calib_fraction: 0.15,
            impute: ImputeStrategy::Zero,
            max_rows: None,
            eo_mode: EoMode::Opportunity,
            bench: BenchConfig::default(),
            allow_unaudited: false,
            out: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.teachers.is_empty() {
            return Err(Error::Config("at least one teacher is required".into()));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be >= 2, got {}", self.k_folds)));
        }
        for t in &self.teachers {
            t.validate()?;
        }
        self.loss.validate()?;
        self.gbdt.validate()?;
        self.mlp.validate()?;
        Ok(())
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }
}

/// Loads (or generates) the dataset, applies `max_rows` and imputes.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.data {
        DataSource::Csv { path, schema } => load_csv(path, schema)?,
        DataSource::Synthetic(s) => synth_generate(s)?,
    };
    let ds = match cfg.max_rows {
        Some(m) => stratified_subsample(&ds, m, 0)?,
        None => ds,
    };
    impute(&ds, cfg.impute)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Row partition of one seed. Row indices refer to the loaded dataset;
/// `fold_of` is indexed like `train_rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitArtifact {
    pub seed: u64,
    pub k: usize,
    pub train_rows: Vec<usize>,
    pub calib_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub fold_of: Vec<usize>,
}

impl SplitArtifact {
    pub fn folds(&self) -> FoldAssignment {
        FoldAssignment {
            fold_of: self.fold_of.clone(),
            k: self.k,
            seed: self.seed,
        }
    }
}

/// Stratified test split, calibration split and K folds over the remaining rows.
pub fn make_split(ds: &Dataset, k: usize, test_fraction: f64, calib_fraction: f64, seed: u64) -> Result<SplitArtifact> {
    let (rest, test_rows) = stratified_split_indices(&ds.labels, ds.class_count, test_fraction, seed)?;
    let rest_labels: Vec<usize> = rest.iter().map(|&i| ds.labels[i]).collect();
    let (train_local, calib_local) =
        stratified_split_indices(&rest_labels, ds.class_count, calib_fraction, seed.wrapping_add(1))?;
    let train_rows: Vec<usize> = train_local.iter().map(|&i| rest[i]).collect();
    let calib_rows: Vec<usize> = calib_local.iter().map(|&i| rest[i]).collect();
    let train_labels: Vec<usize> = train_rows.iter().map(|&i| ds.labels[i]).collect();
    let folds = crate::dataset::stratified_kfold_labels(&train_labels, ds.class_count, k, seed.wrapping_add(2))?;
    Ok(SplitArtifact {
        seed,
        k,
        train_rows,
        calib_rows,
        test_rows,
        fold_of: folds.fold_of,
    })
}

pub fn stage_split(cfg: &RunConfig, ds: &Dataset, seed: u64) -> Result<SplitArtifact> {
    let split = make_split(ds, cfg.k_folds, cfg.test_fraction, cfg.calib_fraction, seed)?;
    write_json(&cfg.seed_dir(seed).join(FOLDS_FILE), &split)?;
    Ok(split)
}

pub fn load_split(cfg: &RunConfig, seed: u64) -> Result<SplitArtifact> {
    read_json(&cfg.seed_dir(seed).join(FOLDS_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherArtifact {
    pub teacher_ids: Vec<String>,
    /// AUC on the test rows of the teachers refitted on all training rows
    /// (absent when a teacher only exists as a file).
    pub test_auc: Option<f64>,
    pub audit: AuditReport,
}

/// Per-seed variation of a teacher spec, so seeds do not share teacher randomness.
fn seeded_teacher(spec: &TeacherSpec, seed: u64) -> TeacherSpec {
    spec.reseeded(seed.wrapping_mul(1000))
}

/// Out-of-fold soft labels from every teacher, averaged, audited and written.
pub fn teach(cfg: &RunConfig, ds: &Dataset, split: &SplitArtifact) -> Result<(SoftLabelSet, TeacherArtifact)> {
    let train = ds.select(&split.train_rows);
    let folds = split.folds();
    let sets: Vec<SoftLabelSet> = cfg
        .teachers
        .iter()
        .map(|spec| oof_label(&train, &folds, &seeded_teacher(spec, split.seed)))
        .collect::<Result<_>>()?;
    let soft = if sets.len() == 1 {
        sets.into_iter().next().expect("one set")
    } else {
        average_teachers(&sets)?
    };
    let audit = leakage_audit(&soft);
    if !audit.passed && !cfg.allow_unaudited {
        return Err(Error::Leakage {
            count: audit.offending_rows.len(),
            first: audit.offending_rows.iter().take(5).copied().collect(),
        });
    }
    let test = ds.select(&split.test_rows);
    let mut test_probs: Option<Vec<Vec<f64>>> = Some(vec![vec![0.0; ds.class_count]; test.n_rows()]);
    for spec in &cfg.teachers {
        let Some(acc) = test_probs.as_mut() else { break };
        if matches!(spec, TeacherSpec::File { .. }) {
            test_probs = None;
            continue;
        }
        let teacher = fit_teacher(&seeded_teacher(spec, split.seed).reseeded(split.k as u64), &train)?;
        for (a, p) in acc.iter_mut().zip(teacher.predict_proba(&test.features)?) {
            for (x, v) in a.iter_mut().zip(p) {
                *x += v;
            }
        }
    }
    let m = cfg.teachers.len() as f64;
    let test_auc = test_probs
        .map(|mut probs| {
            probs.iter_mut().flatten().for_each(|v| *v /= m);
            macro_auc(&probs, &test.labels)
        })
        .transpose()?;
    let artifact = TeacherArtifact {
        teacher_ids: cfg.teachers.iter().map(TeacherSpec::id).collect(),
        test_auc,
        audit,
    };
    Ok((soft, artifact))
}

pub fn stage_teach(cfg: &RunConfig, ds: &Dataset, seed: u64) -> Result<TeacherArtifact> {
    let split = load_split(cfg, seed)?;
    let (soft, artifact) = teach(cfg, ds, &split)?;
    let dir = cfg.seed_dir(seed);
    export_soft_labels(&soft, &dir.join(SOFT_LABELS_FILE))?;
    write_json(&dir.join(TEACHER_FILE), &artifact)?;
    Ok(artifact)
}

pub fn train_student(
    kind: StudentKind,
    train: &Dataset,
    targets: &DistillTargets,
    loss: &LossConfig,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Model> {
    Ok(match kind {
        StudentKind::Gbdt => Model::Gbdt(fit_distilled(
            train,
            targets,
            loss,
            &GbdtConfig {
                seed: cfg.gbdt.seed.wrapping_add(seed),
                ..cfg.gbdt.clone()
            },
        )?),
        StudentKind::Mlp => Model::Mlp(fit_mlp(train, targets, loss, &cfg.mlp, seed)?),
        StudentKind::Logreg => Model::LogReg(fit_logreg(train, &cfg.logreg)?),
    })
}

/// The hard-label trainer for each student kind.
pub fn train_hard(kind: StudentKind, train: &Dataset, cfg: &RunConfig, seed: u64) -> Result<Model> {
    Ok(match kind {
        StudentKind::Gbdt => Model::Gbdt(fit_hard(
            train,
            &GbdtConfig {
                seed: cfg.gbdt.seed.wrapping_add(seed),
                ..cfg.gbdt.clone()
            },
        )?),
        StudentKind::Mlp => Model::Mlp(fit_mlp_hard(train, &cfg.mlp, seed)?),
        StudentKind::Logreg => Model::LogReg(fit_logreg(train, &cfg.logreg)?),
    })
}

/// Reads soft labels for the training rows. A file other than the seed's own
/// `softlabels.csv` is treated as foreign: fold ids are taken from the file and
/// the leakage audit must pass unless `allow_unaudited` is set.
pub fn load_soft_labels(cfg: &RunConfig, ds: &Dataset, split: &SplitArtifact, foreign: Option<&Path>) -> Result<SoftLabelSet> {
    let train = ds.select(&split.train_rows);
    let folds = split.folds();
    let soft = match foreign {
        None => import_soft_labels(&cfg.seed_dir(split.seed).join(SOFT_LABELS_FILE), &train, &folds)?,
        Some(path) => import_foreign_soft_labels(path, &train, &folds)?,
    };
    let audit = leakage_audit(&soft);
    if !audit.passed && !cfg.allow_unaudited {
        return Err(Error::Leakage {
            count: audit.offending_rows.len(),
            first: audit.offending_rows.iter().take(5).copied().collect(),
        });
    }
    Ok(soft)
}

pub fn stage_distill(cfg: &RunConfig, ds: &Dataset, seed: u64, foreign: Option<&Path>) -> Result<Model> {
    let split = load_split(cfg, seed)?;
    let soft = load_soft_labels(cfg, ds, &split, foreign)?;
    let train = ds.select(&split.train_rows);
    let targets = build_targets(&soft, &train.labels, &cfg.loss)?;
    let model = train_student(cfg.student, &train, &targets, &cfg.loss, cfg, seed)?;
    model.save(&cfg.seed_dir(seed).join(MODEL_FILE))?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub student: StudentKind,
    pub teacher_ids: Vec<String>,
    pub teacher_auc: Option<f64>,
    pub audit_passed: bool,
    pub model_bytes: usize,
    pub metrics: EvalReport,
}

pub fn evaluate_model(cfg: &RunConfig, ds: &Dataset, split: &SplitArtifact, model: &Model, teacher_auc: Option<f64>) -> Result<EvalReport> {
    let test = ds.select(&split.test_rows);
    let calib = ds.select(&split.calib_rows);
    let test_probs = model.predict_proba(&test.features)?;
    let calib_probs = model.predict_proba(&calib.features)?;
    evaluate(&test_probs, &test, &calib_probs, &calib.labels, teacher_auc, cfg.eo_mode)
}

pub fn stage_evaluate(cfg: &RunConfig, ds: &Dataset, seed: u64) -> Result<SeedReport> {
    let dir = cfg.seed_dir(seed);
    let split = load_split(cfg, seed)?;
    let teacher: TeacherArtifact = read_json(&dir.join(TEACHER_FILE))?;
    let model = Model::load(&dir.join(MODEL_FILE))?;
    let metrics = evaluate_model(cfg, ds, &split, &model, teacher.test_auc)?;
    let report = SeedReport {
        seed,
        student: model.kind(),
        teacher_ids: teacher.teacher_ids,
        teacher_auc: teacher.test_auc,
        audit_passed: teacher.audit.passed,
        model_bytes: model.serialized_bytes()?,
        metrics,
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn stage_bench(cfg: &RunConfig, ds: &Dataset, seed: u64) -> Result<LatencyReport> {
    let split = load_split(cfg, seed)?;
    let model = Model::load(&cfg.seed_dir(seed).join(MODEL_FILE))?;
    let test = ds.select(&split.test_rows);
    let report = measure(&model, &test.features, cfg.bench.warmup, cfg.bench.runs)?;
    write_json(&cfg.out.join(TIMINGS_DIR).join(format!("seed-{seed}.json")), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { values, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub student: StudentKind,
    pub seeds: Vec<u64>,
    /// Per-metric values in seed order over the seeds that completed.
    pub metrics: BTreeMap<String, MetricSummary>,
    pub failures: Vec<SeedFailure>,
}

/// Numeric fields of a seed report that are aggregated.
pub fn summary_fields(r: &SeedReport) -> Vec<(String, f64)> {
    let m = &r.metrics;
    let mut out = vec![
        ("auc".to_string(), m.auc),
        ("ece".to_string(), m.ece),
        ("ece_ts".to_string(), m.ece_ts),
        ("brier".to_string(), m.brier),
        ("brier_ts".to_string(), m.brier_ts),
        ("fitted_temperature".to_string(), m.fitted_temperature),
    ];
    if let Some(t) = r.teacher_auc {
        out.push(("teacher_auc".into(), t));
    }
    if let Some(v) = m.retention_pct {
        out.push(("retention_pct".into(), v));
    }
    for (k, v) in &m.dp_diff {
        out.push((format!("dp_diff.{k}"), *v));
    }
    for (k, v) in &m.eo_diff {
        out.push((format!("eo_diff.{k}"), *v));
    }
    out
}

pub fn aggregate(student: StudentKind, reports: &[SeedReport], failures: Vec<SeedFailure>) -> AggregateReport {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in summary_fields(r) {
            values.entry(k).or_default().push(v);
        }
    }
    AggregateReport {
        student,
        seeds: reports.iter().map(|r| r.seed).collect(),
        metrics: values.into_iter().map(|(k, v)| (k, MetricSummary::from_values(v))).collect(),
        failures,
    }
}

/// Runs split, teach, distill and evaluate for one seed.
pub fn run_seed(cfg: &RunConfig, ds: &Dataset, seed: u64) -> Result<SeedReport> {
    stage_split(cfg, ds, seed)?;
    stage_teach(cfg, ds, seed)?;
    stage_distill(cfg, ds, seed, None)?;
    stage_evaluate(cfg, ds, seed)
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub aggregate: AggregateReport,
    pub reports: Vec<SeedReport>,
    pub latency: Vec<(u64, LatencyReport)>,
    /// First seed error, if any; the aggregate is written regardless.
    pub first_error: Option<Error>,
}

/// Runs every seed (in parallel), then benchmarks each model on its own,
/// and writes the aggregate report.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join(CONFIG_FILE), cfg)?;
    let results: Vec<(u64, Result<SeedReport>)> = cfg.seeds.par_iter().map(|&s| (s, run_seed(cfg, &ds, s))).collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (seed, r) in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let mut latency = Vec::new();
    if cfg.bench.enabled {
        for r in &reports {
            latency.push((r.seed, stage_bench(cfg, &ds, r.seed)?));
        }
    }
    let agg = aggregate(cfg.student, &reports, failures);
    write_json(&cfg.out.join(AGGREGATE_FILE), &agg)?;
    Ok(PipelineOutcome {
        aggregate: agg,
        reports,
        latency,
        first_error,
    })
}

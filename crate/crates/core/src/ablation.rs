//! Component ablation: eight training configurations over the same seeds,
//! with paired AUC deltas against the full configuration and Wilcoxon p-values.

use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{build_targets, TemperatureMode};
use crate::error::Result;
use crate::metrics::macro_auc;
use crate::model::StudentKind;
use crate::pipeline::{load_dataset, make_split, teach, train_hard, train_student, RunConfig};
use crate::stats::{wilcoxon_signed_rank, WilcoxonMethod};
use crate::LossConfig;

pub const ABLATION_FILE: &str = "ablation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAdaptiveTemperature,
    NoConfidenceWeighting,
    NoAugmentation,
    HardLabelsOnly,
    SoftLabelsOnly,
    FixedT1,
    FixedT5,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoAdaptiveTemperature,
        Variant::NoConfidenceWeighting,
        Variant::NoAugmentation,
        Variant::HardLabelsOnly,
        Variant::SoftLabelsOnly,
        Variant::FixedT1,
        Variant::FixedT5,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full (all components)",
            Variant::NoAdaptiveTemperature => "No adaptive temperature",
            Variant::NoConfidenceWeighting => "No confidence weighting",
            Variant::NoAugmentation => "No augmentation",
            Variant::HardLabelsOnly => "Hard labels only (alpha=0)",
            Variant::SoftLabelsOnly => "Soft labels only (alpha=1)",
            Variant::FixedT1 => "Fixed temperature (T=1)",
            Variant::FixedT5 => "High temperature (T=5)",
        }
    }

    /// Run configuration for this variant, derived from the full one.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let loss = &mut cfg.loss;
        match self {
            Variant::Full => {}
            Variant::NoAdaptiveTemperature => loss.temperature = TemperatureMode::Fixed((loss.t_min + loss.t_max) / 2.0),
            Variant::NoConfidenceWeighting => loss.confidence_weighting = false,
            Variant::NoAugmentation => cfg.mlp.augment = false,
            Variant::HardLabelsOnly => cfg.loss = LossConfig::hard_labels(),
            Variant::SoftLabelsOnly => loss.alpha = 1.0,
            Variant::FixedT1 => loss.temperature = TemperatureMode::Fixed(1.0),
            Variant::FixedT5 => loss.temperature = TemperatureMode::Fixed(5.0),
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub auc: Vec<f64>,
    pub mean_auc: f64,
    /// Per-seed `auc - full auc`.
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    /// Two-sided Wilcoxon signed-rank p-value; `None` with fewer than 5 pairs.
    pub p_value: Option<f64>,
    pub test_method: Option<WilcoxonMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub student: StudentKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// Whether the alpha=0 model equals the hard-label trainer's model on every seed.
    pub hard_row_matches_hard_trainer: bool,
}

struct SeedResult {
    auc: Vec<f64>,
    hard_match: bool,
}

fn run_seed(base: &RunConfig, ds: &crate::dataset::Dataset, seed: u64) -> Result<SeedResult> {
    let split = make_split(ds, base.k_folds, base.test_fraction, base.calib_fraction, seed)?;
    let (soft, _) = teach(base, ds, &split)?;
    let train = ds.select(&split.train_rows);
    let test = ds.select(&split.test_rows);
    let mut auc = Vec::with_capacity(Variant::ALL.len());
    let mut hard_match = true;
    for v in Variant::ALL {
        let cfg = v.apply(base);
        let targets = build_targets(&soft, &train.labels, &cfg.loss)?;
        let model = train_student(cfg.student, &train, &targets, &cfg.loss, &cfg, seed)?;
        if v == Variant::HardLabelsOnly {
            let hard = train_hard(cfg.student, &train, &cfg, seed)?;
            hard_match = hard.to_json()? == model.to_json()?;
        }
        auc.push(macro_auc(&model.predict_proba(&test.features)?, &test.labels)?);
    }
    Ok(SeedResult { auc, hard_match })
}

pub fn run_ablation(base: &RunConfig) -> Result<AblationTable> {
    base.validate()?;
    let ds = load_dataset(base)?;
    let per_seed: Vec<SeedResult> = base
        .seeds
        .par_iter()
        .map(|&s| run_seed(base, &ds, s))
        .collect::<Result<_>>()?;
    let n = per_seed.len() as f64;
    let rows = Variant::ALL
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let auc: Vec<f64> = per_seed.iter().map(|r| r.auc[j]).collect();
            let deltas: Vec<f64> = per_seed.iter().map(|r| r.auc[j] - r.auc[0]).collect();
            let test = wilcoxon_signed_rank(&deltas);
            AblationRow {
                variant: v,
                label: v.label().to_string(),
                mean_auc: auc.iter().sum::<f64>() / n,
                mean_delta: deltas.iter().sum::<f64>() / n,
                auc,
                deltas,
                p_value: test.as_ref().map(|t| t.p_value),
                test_method: test.map(|t| t.method),
            }
        })
        .collect();
    Ok(AblationTable {
        student: base.student,
        seeds: base.seeds.clone(),
        rows,
        hard_row_matches_hard_trainer: per_seed.iter().all(|r| r.hard_match),
    })
}

/// Runs the ablation and writes `ablation.json` into the output directory.
pub fn cmd_ablate(base: &RunConfig) -> Result<AblationTable> {
    let table = run_ablation(base)?;
    fs::create_dir_all(&base.out)?;
    fs::write(base.out.join(ABLATION_FILE), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}

pub fn format_table(t: &AblationTable) -> String {
    let mut out = format!("{:<30}  {:>8}  {:>9}  {:>8}\n", "Configuration", "AUC", "Delta", "p");
    for r in &t.rows {
        let p = r.p_value.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"));
        out.push_str(&format!("{:<30}  {:>8.4}  {:>+9.4}  {:>8}\n", r.label, r.mean_auc, r.mean_delta, p));
    }
    out
}

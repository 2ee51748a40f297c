use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use distillforge::ablation::{self, cmd_ablate};
use distillforge::bench;
use distillforge::dataset::{synth_generate, write_csv, SynthConfig};
use distillforge::model::StudentKind;
use distillforge::pipeline::{
    cmd_pipeline, load_dataset, stage_bench, stage_distill, stage_evaluate, stage_split, stage_teach, RunConfig,
};
use distillforge::teacher::TeacherSpec;
use distillforge::Error;

#[derive(Parser)]
#[command(name = "distillforge", version, about = "Out-of-fold distillation of tabular teachers into fast students")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, teach, distill, evaluate and bench every seed, then aggregate.
    Pipeline(Overrides),
    /// Run the eight ablation configurations over all seeds.
    Ablate(Overrides),
    /// Write the train/calibration/test split and fold assignment.
    Split(Overrides),
    /// Produce out-of-fold soft labels from the configured teachers.
    Teach(Overrides),
    /// Train the student from persisted soft labels.
    Distill {
        #[command(flatten)]
        overrides: Overrides,
        /// Use this soft-label file instead of the seed's own; it must pass the leakage audit.
        #[arg(long)]
        soft_labels: Option<PathBuf>,
    },
    /// Evaluate the persisted student. With --soft-labels the file is audited
    /// and the student retrained from it first.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        soft_labels: Option<PathBuf>,
    },
    /// Time batch prediction of the persisted students.
    Bench(Overrides),
    /// Write a synthetic dataset as CSV plus schema.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        label_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_folds: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// gbdt, mlp or logreg.
    #[arg(long)]
    student: Option<StudentKind>,
    /// knn, bagged or file:PATH. Repeat for several teachers.
    #[arg(long, value_parser = parse_teacher)]
    teacher: Vec<TeacherSpec>,
    /// Comma-separated seeds, e.g. 0,1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_rows: Option<usize>,
    #[arg(long)]
    allow_unaudited: bool,
    /// Skip latency measurement in `pipeline`.
    #[arg(long)]
    no_bench: bool,
}

fn parse_teacher(s: &str) -> std::result::Result<TeacherSpec, String> {
    match s {
        "knn" => Ok(TeacherSpec::Knn { k: None }),
        "bagged" => Ok(TeacherSpec::bagged()),
        _ => match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(TeacherSpec::File { path: p.into() }),
            _ => Err(format!("expected knn, bagged or file:PATH, got {s:?}")),
        },
    }
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(k) = self.k_folds {
            cfg.k_folds = k;
        }
        let loss = &mut cfg.loss;
        for (field, v) in [
            (&mut loss.alpha, self.alpha),
            (&mut loss.t_min, self.t_min),
            (&mut loss.t_max, self.t_max),
            (&mut loss.mu, self.mu),
            (&mut loss.sigma, self.sigma),
        ] {
            if let Some(v) = v {
                *field = v;
            }
        }
        if let Some(s) = self.student {
            cfg.student = s;
        }
        if !self.teacher.is_empty() {
            cfg.teachers = self.teacher.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if self.max_rows.is_some() {
            cfg.max_rows = self.max_rows;
        }
        cfg.allow_unaudited |= self.allow_unaudited;
        if self.no_bench {
            cfg.bench.enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn for_each_seed<F: FnMut(&RunConfig, &distillforge::dataset::Dataset, u64) -> distillforge::Result<()>>(
    o: &Overrides,
    mut f: F,
) -> Result<()> {
    let cfg = o.resolve()?;
    let ds = load_dataset(&cfg)?;
    for &s in &cfg.seeds {
        f(&cfg, &ds, s).with_context(|| format!("seed {s}"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(o) => {
            let cfg = o.resolve()?;
            let outcome = cmd_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome.aggregate)?);
            if !outcome.latency.is_empty() {
                let rows: Vec<_> = outcome.latency.into_iter().map(|(s, r)| (format!("seed {s}"), r)).collect();
                print!("{}", bench::format_table(&rows));
            }
            if let Some(e) = outcome.first_error {
                return Err(e.into());
            }
        }
        Command::Ablate(o) => {
            let table = cmd_ablate(&o.resolve()?)?;
            print!("{}", ablation::format_table(&table));
        }
        Command::Split(o) => for_each_seed(&o, |cfg, ds, s| {
            stage_split(cfg, ds, s)?;
            println!("{}", cfg.seed_dir(s).display());
            Ok(())
        })?,
        Command::Teach(o) => for_each_seed(&o, |cfg, ds, s| {
            let t = stage_teach(cfg, ds, s)?;
            println!("seed {s}: audit {}", if t.audit.passed { "PASS" } else { "FAIL" });
            Ok(())
        })?,
        Command::Distill { overrides, soft_labels } => for_each_seed(&overrides, |cfg, ds, s| {
            stage_distill(cfg, ds, s, soft_labels.as_deref())?;
            Ok(())
        })?,
        Command::Evaluate { overrides, soft_labels } => for_each_seed(&overrides, |cfg, ds, s| {
            if let Some(path) = &soft_labels {
                stage_distill(cfg, ds, s, Some(path))?;
            }
            let r = stage_evaluate(cfg, ds, s)?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        })?,
        Command::Bench(o) => {
            let mut rows = Vec::new();
            for_each_seed(&o, |cfg, ds, s| {
                rows.push((format!("seed {s}"), stage_bench(cfg, ds, s)?));
                Ok(())
            })?;
            print!("{}", bench::format_table(&rows));
        }
        Command::Synth {
            n,
            d,
            classes,
            label_noise,
            seed,
            csv,
            schema,
        } => {
            let ds = synth_generate(&SynthConfig {
                n,
                d,
                classes,
                label_noise,
                seed,
                ..SynthConfig::default()
            })?;
            write_csv(&ds, &csv, &schema)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Leakage { .. }) => 3,
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

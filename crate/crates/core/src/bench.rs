//! Prediction latency, throughput and model size.

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Matrix;
use crate::error::Result;
use crate::model::Model;

pub const WARMUP: usize = 5;
pub const RUNS: usize = 50;

/// Serializes timed sections across threads of this process.
static TIMING_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub throughput_per_s: f64,
    pub runs: usize,
    pub batch_rows: usize,
    pub model_bytes: usize,
}

/// Nearest-rank quantile of ascending `sorted` values.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `run` (one full-batch prediction) after `warmup` discarded calls.
pub fn measure_fn<F: FnMut() -> Result<()>>(
    mut run: F,
    batch_rows: usize,
    model_bytes: usize,
    warmup: usize,
    runs: usize,
) -> Result<LatencyReport> {
    let runs = runs.max(1);
    let _guard = TIMING_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    for _ in 0..warmup {
        run()?;
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        run()?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / runs as f64;
    ms.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        mean_ms,
        p99_ms: nearest_rank(&ms, 0.99),
        min_ms: ms[0],
        max_ms: ms[runs - 1],
        throughput_per_s: batch_rows as f64 / (mean_ms / 1e3),
        runs,
        batch_rows,
        model_bytes,
    })
}

/// Measures full-batch `predict_proba` of a model on the calling thread.
pub fn measure(model: &Model, rows: &Matrix, warmup: usize, runs: usize) -> Result<LatencyReport> {
    let bytes = model.serialized_bytes()?;
    measure_fn(
        || {
            std::hint::black_box(model.predict_proba(std::hint::black_box(rows))?);
            Ok(())
        },
        rows.rows(),
        bytes,
        warmup,
        runs,
    )
}

/// Plain-text latency table.
pub fn format_table(rows: &[(String, LatencyReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>10}  {:>10}  {:>14}  {:>10}\n",
        "Model", "Mean ms", "P99 ms", "Throughput/s", "Size KB"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>10.3}  {:>10.3}  {:>14.0}  {:>10.1}\n",
            name,
            r.mean_ms,
            r.p99_ms,
            r.throughput_per_s,
            r.model_bytes as f64 / 1024.0
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_p99_of_fifty_is_max() {
        let v: Vec<f64> = (1..=50).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.99), 50.0);
        assert_eq!(nearest_rank(&v, 0.5), 25.0);
        assert_eq!(nearest_rank(&[3.0], 0.99), 3.0);
    }

    #[test]
    fn report_is_consistent() {
        let mut acc = 0u64;
        let r = measure_fn(
            || {
                for i in 0..20_000u64 {
                    acc = acc.wrapping_add(std::hint::black_box(i * i));
                }
                Ok(())
            },
            100,
            7,
            WARMUP,
            RUNS,
        )
        .unwrap();
        assert_eq!(r.runs, 50);
        assert_eq!(r.p99_ms, r.max_ms);
        assert!(r.min_ms <= r.mean_ms && r.mean_ms <= r.max_ms);
        let expected = r.batch_rows as f64 / (r.mean_ms / 1e3);
        assert!((r.throughput_per_s - expected).abs() <= 1e-3 * expected);
        assert!(format_table(&[("toy".into(), r)]).contains("toy"));
    }
}

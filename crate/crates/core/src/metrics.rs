//! Discrimination, calibration and fairness metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{argmax, log_sum_exp, Scalar};

pub const ECE_BINS: usize = 15;
pub const TS_MIN: f64 = 0.05;
pub const TS_MAX: f64 = 20.0;
pub const TS_TOL: f64 = 1e-3;
pub const DECISION_THRESHOLD: f64 = 0.5;
const LOGIT_FLOOR: f64 = 1e-15;

/// Compensated (Neumaier) summation.
fn neumaier<S: Scalar>(values: impl IntoIterator<Item = S>) -> S {
    let (mut sum, mut comp) = (S::zero(), S::zero());
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mann-Whitney AUC with midranks; label 1 is the positive class.
pub fn auc<S: Scalar>(scores: &[S], labels: &[usize]) -> Result<S> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // doubled ranks keep every quantity an integer
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank2 += midrank2;
            }
        }
        i = j + 1;
    }
    let u2 = pos_rank2 - (n_pos * (n_pos + 1)) as u64;
    Ok(S::lit(u2 as f64 / (2 * n_pos * n_neg) as f64))
}

/// Unweighted mean of one-vs-rest AUCs over the classes present in `labels`.
pub fn macro_auc<S: Scalar>(probs: &[Vec<S>], labels: &[usize]) -> Result<S> {
    let c = probs.first().map_or(0, Vec::len);
    if c == 2 {
        let p1: Vec<S> = probs.iter().map(|p| p[1]).collect();
        return auc(&p1, labels);
    }
    let present: Vec<usize> = (0..c).filter(|k| labels.contains(k)).collect();
    if present.len() < 2 {
        return Err(Error::Metric("macro-auc needs at least two classes".into()));
    }
    let mut total = S::zero();
    for &k in &present {
        let scores: Vec<S> = probs.iter().map(|p| p[k]).collect();
        let bin: Vec<usize> = labels.iter().map(|&y| usize::from(y == k)).collect();
        total += auc(&scores, &bin)?;
    }
    Ok(total / S::from_count(present.len()))
}

pub fn retention<S: Scalar>(student_auc: S, teacher_auc: S) -> Result<S> {
    if teacher_auc <= S::zero() {
        return Err(Error::Metric("teacher auc must be positive".into()));
    }
    Ok(student_auc / teacher_auc * S::lit(100.0))
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn ece<S: Scalar>(probs: &[Vec<S>], labels: &[usize], bins: usize) -> S {
    let n = probs.len();
    if n == 0 {
        return S::zero();
    }
    let mut conf: Vec<Vec<S>> = vec![Vec::new(); bins];
    let mut hits = vec![0usize; bins];
    for (p, &y) in probs.iter().zip(labels) {
        let k = argmax(p);
        let c = p[k];
        let b = (c * S::from_count(bins)).floor().to_usize().unwrap_or(0).min(bins - 1);
        conf[b].push(c);
        hits[b] += usize::from(k == y);
    }
    let terms = conf.iter().zip(&hits).filter(|(c, _)| !c.is_empty()).map(|(c, &h)| {
        let nb = S::from_count(c.len());
        let acc = S::from_count(h) / nb;
        let mean_conf = neumaier(c.iter().copied()) / nb;
        nb / S::from_count(n) * (acc - mean_conf).abs()
    });
    neumaier(terms)
}

/// Multiclass Brier score: mean of the squared distance to the one-hot label.
pub fn brier<S: Scalar>(probs: &[Vec<S>], labels: &[usize]) -> S {
    if probs.is_empty() {
        return S::zero();
    }
    let rows = probs.iter().zip(labels).map(|(p, &y)| {
        p.iter()
            .enumerate()
            .map(|(c, &v)| {
                let t = if c == y { S::one() } else { S::zero() };
                (v - t) * (v - t)
            })
            .sum::<S>()
    });
    neumaier(rows) / S::from_count(probs.len())
}

/// Binary Brier score on the positive-class probability.
pub fn brier_binary<S: Scalar>(p1: &[S], labels: &[usize]) -> S {
    if p1.is_empty() {
        return S::zero();
    }
    let rows = p1.iter().zip(labels).map(|(&p, &y)| {
        let d = p - S::from_count(usize::from(y == 1));
        d * d
    });
    neumaier(rows) / S::from_count(p1.len())
}

/// Mean cross-entropy of `softmax(logits / t)`.
pub fn temperature_ce<S: Scalar>(logits: &[Vec<S>], labels: &[usize], t: S) -> S {
    let rows = logits.iter().zip(labels).map(|(z, &y)| {
        let scaled: Vec<S> = z.iter().map(|&v| v / t).collect();
        log_sum_exp(&scaled) - scaled[y]
    });
    neumaier(rows) / S::from_count(logits.len().max(1))
}

/// Global temperature minimising cross-entropy on held-out rows.
///
/// The search runs over the inverse temperature, where the objective is
/// convex, until the bracket is narrower than `TS_TOL` in temperature.
/// `T = 1` is returned whenever it is at least as good as the search result.
pub fn fit_temperature<S: Scalar>(logits: &[Vec<S>], labels: &[usize]) -> S {
    if logits.is_empty() {
        return S::one();
    }
    let ce_at = |beta: S| temperature_ce(logits, labels, S::one() / beta);
    let ratio = S::lit((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (S::lit(1.0 / TS_MAX), S::lit(1.0 / TS_MIN));
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (ce_at(c), ce_at(d));
    while S::one() / a - S::one() / b > S::lit(TS_TOL) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = ce_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = ce_at(d);
        }
    }
    let t = S::lit(2.0) / (a + b);
    if temperature_ce(logits, labels, t) < ce_at(S::one()) {
        t
    } else {
        S::one()
    }
}

/// Log-probabilities usable as logits (softmax of them recovers `p`).
pub fn probs_to_logits<S: Scalar>(probs: &[Vec<S>]) -> Vec<Vec<S>> {
    probs
        .iter()
        .map(|p| p.iter().map(|&v| v.max(S::lit(LOGIT_FLOOR)).ln()).collect())
        .collect()
}

/// Max-minus-min positive-decision rate over the groups that have rows.
pub fn dp_diff<S: Scalar>(preds: &[bool], groups: &[usize]) -> S {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &g) in preds.iter().zip(groups) {
        let e = tally.entry(g).or_default();
        e.0 += usize::from(p);
        e.1 += 1;
    }
    spread(tally.values().map(|&(k, n)| S::from_count(k) / S::from_count(n)))
}

fn spread<S: Scalar>(rates: impl Iterator<Item = S>) -> S {
    let (lo, hi) = rates.fold((S::infinity(), S::neg_infinity()), |(lo, hi), r| (lo.min(r), hi.max(r)));
    if lo > hi {
        S::zero()
    } else {
        hi - lo
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EoMode {
    /// True-positive-rate gap.
    #[default]
    Opportunity,
    /// Larger of the true-positive-rate and false-positive-rate gaps.
    Odds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoResult<S> {
    pub value: S,
    /// Groups left out because they lack positive (or, for odds, negative) rows.
    pub excluded_groups: Vec<usize>,
}

pub fn eo_diff<S: Scalar>(preds: &[bool], labels: &[usize], groups: &[usize], mode: EoMode) -> Result<EoResult<S>> {
    // group -> (tp, pos, fp, neg)
    let mut tally: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
    for ((&p, &y), &g) in preds.iter().zip(labels).zip(groups) {
        let e = tally.entry(g).or_default();
        if y == 1 {
            e[0] += usize::from(p);
            e[1] += 1;
        } else {
            e[2] += usize::from(p);
            e[3] += 1;
        }
    }
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for (&g, t) in &tally {
        if t[1] == 0 || (mode == EoMode::Odds && t[3] == 0) {
            excluded.push(g);
        } else {
            kept.push(*t);
        }
    }
    if kept.is_empty() {
        return Err(Error::Metric("no group has positive-label rows".into()));
    }
    let rate = |k: usize, n: usize| S::from_count(k) / S::from_count(n);
    let tpr_gap = spread(kept.iter().map(|t| rate(t[0], t[1])));
    let value = match mode {
        EoMode::Opportunity => tpr_gap,
        EoMode::Odds => tpr_gap.max(spread(kept.iter().map(|t| rate(t[2], t[3])))),
    };
    Ok(EoResult {
        value,
        excluded_groups: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub retention_pct: Option<f64>,
    pub ece: f64,
    pub brier: f64,
    pub ece_ts: f64,
    pub brier_ts: f64,
    pub fitted_temperature: f64,
    pub dp_diff: BTreeMap<String, f64>,
    pub eo_diff: BTreeMap<String, f64>,
    pub eo_excluded_groups: BTreeMap<String, Vec<usize>>,
    pub n_test: usize,
    pub ece_bins: usize,
    pub eo_mode: EoMode,
}

/// Fills an [`EvalReport`] from test and calibration probabilities.
///
/// The temperature is fitted on the calibration rows only. Brier uses the
/// binary scalar form for two classes. Fairness gaps are computed for binary
/// tasks on every sensitive attribute of `test`.
pub fn evaluate(
    test_probs: &[Vec<f64>],
    test: &Dataset,
    calib_probs: &[Vec<f64>],
    calib_labels: &[usize],
    teacher_auc: Option<f64>,
    eo_mode: EoMode,
) -> Result<EvalReport> {
    if test_probs.len() != test.n_rows() || calib_probs.len() != calib_labels.len() {
        return Err(Error::Metric("prediction count does not match rows".into()));
    }
    let labels = &test.labels;
    let binary = test.class_count == 2;
    let score = |p: &[Vec<f64>]| {
        if binary {
            brier_binary(&p.iter().map(|r| r[1]).collect::<Vec<_>>(), labels)
        } else {
            brier(p, labels)
        }
    };
    let auc_value = macro_auc(test_probs, labels)?;
    let t = fit_temperature(&probs_to_logits(calib_probs), calib_labels);
    let scaled: Vec<Vec<f64>> = probs_to_logits(test_probs)
        .iter()
        .map(|z| crate::scalar::softmax_t(z, t))
        .collect();

    let mut dp = BTreeMap::new();
    let mut eo = BTreeMap::new();
    let mut eo_excluded = BTreeMap::new();
    if binary {
        let preds: Vec<bool> = test_probs.iter().map(|p| p[1] >= DECISION_THRESHOLD).collect();
        for (name, groups) in &test.sensitive {
            dp.insert(name.clone(), dp_diff(&preds, groups));
            if let Ok(r) = eo_diff::<f64>(&preds, labels, groups, eo_mode) {
                eo.insert(name.clone(), r.value);
                eo_excluded.insert(name.clone(), r.excluded_groups);
            }
        }
    }
    Ok(EvalReport {
        auc: auc_value,
        retention_pct: teacher_auc.map(|ta| retention(auc_value, ta)).transpose()?,
        ece: ece(test_probs, labels, ECE_BINS),
        brier: score(test_probs),
        ece_ts: ece(&scaled, labels, ECE_BINS),
        brier_ts: score(&scaled),
        fitted_temperature: t,
        dp_diff: dp,
        eo_diff: eo,
        eo_excluded_groups: eo_excluded,
        n_test: test.n_rows(),
        ece_bins: ECE_BINS,
        eo_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise_auc(scores: &[f64], labels: &[usize]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(2..=30);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 8.0).collect();
            assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
        }
    }

    #[test]
    fn macro_auc_cases() {
        let probs = vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6, 0.4], vec![0.2, 0.8]];
        let labels = [0, 1, 1, 0];
        let p1: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        assert_eq!(macro_auc(&probs, &labels).unwrap(), auc(&p1, &labels).unwrap());
        let three = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8], vec![0.7, 0.2, 0.1]];
        assert_eq!(macro_auc(&three, &[0, 1, 2, 0]).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rand_probs: Vec<Vec<f64>> = (0..3000)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..3000).map(|i| i % 3).collect();
        assert!((macro_auc(&rand_probs, &labels).unwrap() - 0.5).abs() <= 0.03);
    }

    #[test]
    fn retention_values() {
        assert!((retention(0.862_f64, 0.870).unwrap() - 99.08).abs() < 0.01);
        assert_eq!(retention(0.8, 0.8).unwrap(), 100.0);
        assert!((retention(0.749_f64, 0.985).unwrap() - 76.04).abs() < 0.01);
        assert!(retention(0.5, 0.0).is_err());
    }

    #[test]
    fn ece_hand_cases() {
        assert_eq!(ece(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], ECE_BINS), 0.0);
        let probs = vec![vec![0.9, 0.1]; 10];
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert_eq!(ece(&probs, &labels, ECE_BINS), 0.4);
        let calibrated = vec![vec![0.75, 0.25]; 4];
        assert!(ece::<f64>(&calibrated, &[0, 0, 0, 1], ECE_BINS).abs() < 1e-12);
    }

    #[test]
    fn brier_hand_cases() {
        assert!((brier_binary::<f64>(&[0.5, 0.5, 0.5], &[0, 1, 1]) - 0.25).abs() < 1e-12);
        assert_eq!(brier(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]), 0.0);
        assert!((brier_binary::<f64>(&[0.2], &[0]) - 0.04).abs() < 1e-12);
        assert!((brier::<f64>(&[vec![0.8, 0.2]], &[0]) - 0.08).abs() < 1e-12);
    }

    fn sampled_logits(scale: f64, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut logits = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..3).map(|_| 2.0 * (rng.random::<f64>() - 0.5) * 3.0).collect();
            let p = crate::scalar::softmax(&z);
            let u: f64 = rng.random();
            let y = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
            labels.push(y);
            logits.push(z.iter().map(|v| v * scale).collect());
        }
        (logits, labels)
    }

    #[test]
    fn temperature_recovers_scale() {
        let (z, y) = sampled_logits(1.0, 20000, 2);
        assert!((fit_temperature(&z, &y) - 1.0).abs() <= 0.1);
        let (z, y) = sampled_logits(3.0, 20000, 3);
        let t = fit_temperature(&z, &y);
        assert!((t - 3.0).abs() <= 0.15, "{t}");
        assert!(temperature_ce(&z, &y, t) <= temperature_ce(&z, &y, 1.0));
    }

    #[test]
    fn temperature_single_precision() {
        let (z, y) = sampled_logits(2.0, 5000, 5);
        let z32: Vec<Vec<f32>> = z.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
        let t32 = fit_temperature(&z32, &y);
        let t64 = fit_temperature(&z, &y);
        assert!((f64::from(t32) - t64).abs() < 0.01);
    }

    #[test]
    fn fairness_hand_cases() {
        let preds = [true, true, true, false, false, true, true, false, false, false];
        let groups = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert!((dp_diff::<f64>(&preds, &groups) - 0.2).abs() < 1e-12);
        assert_eq!(dp_diff::<f64>(&preds, &[0; 10]), 0.0);
        assert_eq!(dp_diff::<f64>(&[true, false, true, false], &[0, 0, 1, 1]), 0.0);

        let mut preds = vec![true; 9];
        preds.push(false);
        preds.extend(vec![true; 7]);
        preds.extend(vec![false; 3]);
        let labels = vec![1; 20];
        let groups: Vec<usize> = (0..20).map(|i| i / 10).collect();
        let r = eo_diff::<f64>(&preds, &labels, &groups, EoMode::Opportunity).unwrap();
        assert!((r.value - 0.2).abs() < 1e-12);

        let r = eo_diff::<f64>(&[true, false, true], &[1, 1, 0], &[0, 0, 1], EoMode::Opportunity).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.excluded_groups, vec![1]);
        assert!(eo_diff::<f64>(&[true], &[0], &[0], EoMode::Opportunity).is_err());
    }

    #[test]
    fn evaluate_perfect_classifier() {
        let ds = crate::dataset::synth_generate(&crate::dataset::SynthConfig {
            n: 40,
            d: 2,
            ..Default::default()
        })
        .unwrap();
        let probs: Vec<Vec<f64>> = ds.labels.iter().map(|&y| if y == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect();
        let r = evaluate(&probs, &ds, &probs, &ds.labels, Some(1.0), EoMode::Opportunity).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.brier, 0.0);
        assert_eq!(r.retention_pct, Some(100.0));
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let r = evaluate(&probs, &ds, &probs, &ds.labels, None, EoMode::Opportunity).unwrap();
        assert!(r.retention_pct.is_none());
        assert!(r.dp_diff.contains_key("group"));
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            cells in proptest::collection::vec((-100i32..100, 0usize..2), 2..40)
        ) {
            let scores: Vec<f64> = cells.iter().map(|c| f64::from(c.0)).collect();
            let mut labels: Vec<usize> = cells.iter().map(|c| c.1).collect();
            labels[0] = 0;
            labels[1] = 1;
            let a = auc(&scores, &labels).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(a, auc(&t, &labels).unwrap());
            let distinct = { let mut s = scores.clone(); s.sort_by(f64::total_cmp); s.dedup(); s.len() == scores.len() };
            if distinct {
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn ece_brier_permutation_invariant(
            rows in proptest::collection::vec((0.0f64..1.0, 0usize..2), 1..60),
            shift in 0usize..60,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| vec![1.0 - r.0, r.0]).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let mut p2 = probs.clone();
            let mut l2 = labels.clone();
            let k = shift % probs.len();
            p2.rotate_left(k);
            l2.rotate_left(k);
            p2.reverse();
            l2.reverse();
            prop_assert!((ece(&probs, &labels, ECE_BINS) - ece(&p2, &l2, ECE_BINS)).abs() < 1e-12);
            prop_assert!((brier(&probs, &labels) - brier(&p2, &l2)).abs() < 1e-12);
        }

        #[test]
        fn temperature_never_worse_than_one(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0usize..2), 1..50)
        ) {
            let z: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let t = fit_temperature(&z, &y);
            prop_assert!(t > 0.0);
            prop_assert!(temperature_ce(&z, &y, t) <= temperature_ce(&z, &y, 1.0));
        }

        #[test]
        fn fairness_relabel_invariant(
            rows in proptest::collection::vec((proptest::bool::ANY, 0usize..2, 0usize..4), 1..60)
        ) {
            let preds: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let groups: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let relabeled: Vec<usize> = groups.iter().map(|g| 10 + 3 - g).collect();
            let dp = dp_diff::<f64>(&preds, &groups);
            prop_assert_eq!(dp, dp_diff::<f64>(&preds, &relabeled));
            prop_assert!((0.0..=1.0).contains(&dp));
            if let Ok(e) = eo_diff::<f64>(&preds, &labels, &groups, EoMode::Opportunity) {
                let e2 = eo_diff::<f64>(&preds, &labels, &relabeled, EoMode::Opportunity).unwrap();
                prop_assert_eq!(e.value, e2.value);
                prop_assert!((0.0..=1.0).contains(&e.value));
            }
        }
    }
}

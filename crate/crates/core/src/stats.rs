//! Wilcoxon signed-rank test for paired differences.

use serde::{Deserialize, Serialize};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_MAX: usize = 20;
/// Fewer paired samples than this make the test not applicable.
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Sum of midranks of the positive differences.
    pub w_plus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Midranks of `|d|`, doubled so they stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped; the
/// null distribution is enumerated exactly for up to [`EXACT_MAX`] non-zero
/// differences and approximated by a tie-corrected normal above that.
/// Returns `None` with fewer than [`MIN_PAIRS`] pairs.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Option<WilcoxonResult> {
    if deltas.len() < MIN_PAIRS {
        return None;
    }
    let nz: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Some(WilcoxonResult {
            n,
            w_plus: 0.0,
            p_value: 1.0,
            method: WilcoxonMethod::Degenerate,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w_plus = w2 as f64 / 2.0;
    if n <= EXACT_MAX {
        let total: u64 = ranks.iter().sum();
        // counts[s] = number of sign assignments whose doubled positive-rank sum is s
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        for &r in &ranks {
            for s in (r as usize..=total as usize).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w2 as usize].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2 as usize..].iter().sum::<f64>() / all;
        return Some(WilcoxonResult {
            n,
            w_plus,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            method: WilcoxonMethod::Exact,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    // two-sided normal tail: 2 (1 - Phi(z)) = erfc(z / sqrt 2)
    Some(WilcoxonResult {
        n,
        w_plus,
        p_value: libm::erfc(z / std::f64::consts::SQRT_2).min(1.0),
        method: WilcoxonMethod::Normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerates every sign assignment of the observed midranks.
    fn oracle(deltas: &[f64]) -> f64 {
        let nz: Vec<f64> = deltas.iter().copied().filter(|d| *d != 0.0).collect();
        let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
        let ranks: Vec<f64> = abs
            .iter()
            .map(|a| {
                let below = abs.iter().filter(|b| *b < a).count() as f64;
                let equal = abs.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect();
        let observed: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
        let n = nz.len();
        let (mut le, mut ge) = (0usize, 0usize);
        for mask in 0..(1usize << n) {
            let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            le += usize::from(w <= observed + 1e-9);
            ge += usize::from(w >= observed - 1e-9);
        }
        let total = (1usize << n) as f64;
        (2.0 * (le as f64 / total).min(ge as f64 / total)).min(1.0)
    }

    #[test]
    fn exact_matches_enumeration() {
        let d = [1.0, 2.0, 3.0, -1.0, -2.0];
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.w_plus, 10.0);
        assert!((r.p_value - oracle(&d)).abs() < 1e-12);
        for d in [
            vec![0.5, 1.5, -0.2, 2.0, 3.0, 0.1],
            vec![1.0, 1.0, 1.0, 1.0, 1.0],
            vec![-3.0, 0.0, 2.0, -1.0, 4.0, -5.0, 0.25],
        ] {
            assert!((wilcoxon_signed_rank(&d).unwrap().p_value - oracle(&d)).abs() < 1e-12);
        }
        assert!((wilcoxon_signed_rank(&[1.0; 5]).unwrap().p_value - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn conventions() {
        assert!(wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0]).is_none());
        let r = wilcoxon_signed_rank(&[0.0; 5]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_boundary() {
        let d: Vec<f64> = (1..=20).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let exact = wilcoxon_signed_rank(&d).unwrap();
        let mut more = d.clone();
        more.push(21.0);
        let approx = wilcoxon_signed_rank(&more).unwrap();
        assert_eq!(approx.method, WilcoxonMethod::Normal);
        assert!(approx.p_value > 0.0 && approx.p_value < 1.0);
        assert!(exact.p_value > 0.0 && exact.p_value < 0.2);
    }
}

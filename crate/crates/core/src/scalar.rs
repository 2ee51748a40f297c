use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type the loss and metric kernels are written against.
///
/// Implemented for `f32` and `f64`.
pub trait Scalar:
    'static
    + Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
{
    /// Converts an `f64` constant into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax_t<S: Scalar>(logits: &[S], temperature: S) -> Vec<S> {
    let max = logits
        .iter()
        .fold(S::neg_infinity(), |m, &z| m.max(z / temperature));
    let exps: Vec<S> = logits
        .iter()
        .map(|&z| (z / temperature - max).exp())
        .collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    softmax_t(logits, S::one())
}

/// `ln(sum(exp(z)))`.
pub fn log_sum_exp<S: Scalar>(logits: &[S]) -> S {
    let max = logits.iter().fold(S::neg_infinity(), |m, &z| m.max(z));
    if max == S::neg_infinity() {
        return max;
    }
    let s: S = logits.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Index of the first maximum.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_for_both_widths() {
        let p64 = softmax(&[1.0f64, 2.0, 3.0]);
        let p32 = softmax(&[1.0f32, 2.0, 3.0]);
        assert!((p64.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p32.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((p64[2] as f32 - p32[2]).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let z = [0.1f64, -0.3, 2.0];
        let naive = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&z) - naive).abs() < 1e-12);
    }
}

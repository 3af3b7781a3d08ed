//! Small numeric helpers shared across modules.

use crate::Scalar;

/// Numerically stable log-softmax of `xs / tau`.
pub(crate) fn log_softmax<T: Scalar>(xs: &[T], tau: T) -> Vec<T> {
    let scaled: Vec<T> = xs.iter().map(|&x| x / tau).collect();
    let max = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + scaled.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    scaled.into_iter().map(|x| x - lse).collect()
}

pub(crate) fn softmax<T: Scalar>(xs: &[T], tau: T) -> Vec<T> {
    log_softmax(xs, tau).into_iter().map(T::exp).collect()
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + e^x) without overflow.
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// x ln x with 0 ln 0 = 0.
pub(crate) fn xlogx<T: Scalar>(x: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x * x.ln()
    }
}

/// Percentile with linear interpolation between closest ranks (`p` in [0, 1]).
pub(crate) fn percentile<T: Scalar>(values: &[T], p: f64) -> T {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub(crate) fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::of_usize(values.len())
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub(crate) fn sample_std<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    let m = mean(values);
    let ss: T = values.iter().map(|&v| (v - m) * (v - m)).sum();
    (ss / T::of_usize(values.len() - 1)).sqrt()
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// 1 - cos(a, b), clamped to [0, 2].
pub(crate) fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let cos = dot(a, b) / (norm(a) * norm(b));
    (T::one() - cos).max(T::zero()).min(T::of(2.0))
}

/// Derives an independent RNG seed from a base seed and a string key (FNV-1a).
pub fn stream_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

use std::ops::RangeInclusive;

use crate::types::ScoredList;
use crate::{Error, Result, Scalar};

/// Minimum value non-positive score ranges are shifted to before taking logs.
pub const POWERLAW_SHIFT_EPS: f64 = 1e-6;

/// Least-squares line through `(ln rank, ln score)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit<T> {
    pub exponent: T,
    pub intercept: T,
    pub r2: T,
    /// Rank farthest (perpendicularly) from the chord joining the first and
    /// last log-log points.
    pub elbow_rank: usize,
}

/// Fits the scores of `run` over the 1-based `ranks`.
pub fn powerlaw_fit<T: Scalar>(run: &ScoredList<T>, ranks: RangeInclusive<usize>) -> Result<PowerLawFit<T>> {
    let scores: Vec<T> = run.scores().collect();
    powerlaw_fit_scores(&scores, ranks)
}

/// Like [`powerlaw_fit`] for scores already in rank order.
pub fn powerlaw_fit_scores<T: Scalar>(scores: &[T], ranks: RangeInclusive<usize>) -> Result<PowerLawFit<T>> {
    let start = (*ranks.start()).max(1);
    let end = (*ranks.end()).min(scores.len());
    if end < start || end - start + 1 < 3 {
        return Err(Error::Invalid(format!(
            "power-law fit needs at least 3 ranked scores, got range {start}..={end}"
        )));
    }
    let window = &scores[start - 1..end];
    let min = window.iter().copied().fold(T::infinity(), T::min);
    let shifted = |s: T| {
        if min <= T::zero() {
            (s - min) + T::of(POWERLAW_SHIFT_EPS)
        } else {
            s
        }
    };
    let pts: Vec<(T, T)> = window
        .iter()
        .enumerate()
        .map(|(i, &s)| (T::of_usize(start + i).ln(), shifted(s).ln()))
        .collect();

    let n = T::of_usize(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / n;
    let my = pts.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: T = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: T = pts
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let r2 = if syy == T::zero() {
        T::one()
    } else {
        T::one() - ss_res / syy
    };

    let (x0, y0) = pts[0];
    let (x1, y1) = pts[pts.len() - 1];
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = (dx * dx + dy * dy).sqrt();
    let mut elbow = 0;
    let mut best = T::neg_infinity();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let dist = ((x - x0) * dy - (y - y0) * dx).abs() / len;
        if dist > best {
            best = dist;
            elbow = i;
        }
    }
    Ok(PowerLawFit {
        exponent: slope,
        intercept,
        r2,
        elbow_rank: start + elbow,
    })
}

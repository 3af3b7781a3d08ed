use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result, Scalar};

/// Outcome of a paired two one-sided t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TostResult {
    pub mu1: f64,
    pub mu2: f64,
    /// Equivalence margin `epsilon * max(|mu1|, |mu2|)`.
    pub theta: f64,
    /// p-value of H0: mu2 - mu1 <= -theta.
    pub p_lower: f64,
    /// p-value of H0: mu2 - mu1 >= theta.
    pub p_upper: f64,
    pub alpha: f64,
    pub equivalent: bool,
}

/// Paired TOST on per-query scores `a` and `b` with a relative margin.
pub fn tost<T: Scalar>(a: &[T], b: &[T], alpha: f64, epsilon: f64) -> Result<TostResult> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::Invalid(format!("TOST needs at least 3 pairs, got {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let a: Vec<f64> = a.iter().map(|x| x.to_f64_lossy()).collect();
    let b: Vec<f64> = b.iter().map(|x| x.to_f64_lossy()).collect();
    let nf = n as f64;
    let mu1 = a.iter().sum::<f64>() / nf;
    let mu2 = b.iter().sum::<f64>() / nf;
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
    let dbar = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - dbar).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let theta = epsilon * mu1.abs().max(mu2.abs());

    let (p_lower, p_upper) = if se == 0.0 {
        (
            if dbar > -theta { 0.0 } else { 1.0 },
            if dbar < theta { 0.0 } else { 1.0 },
        )
    } else {
        let t = StudentsT::new(0.0, 1.0, nf - 1.0).expect("df >= 2");
        let t_lower = (dbar + theta) / se;
        let t_upper = (dbar - theta) / se;
        (t.sf(t_lower), t.cdf(t_upper))
    };
    Ok(TostResult {
        mu1,
        mu2,
        theta,
        p_lower,
        p_upper,
        alpha,
        equivalent: p_lower.max(p_upper) < alpha,
    })
}

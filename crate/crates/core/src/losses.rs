//! Training criteria over one group of `m` student scores.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the student scores. RankNet and MarginMSE are sums of scalar
//! Bregman divergences (negative binary entropy and quadratic potentials
//! respectively), which [`bregman`] exposes directly.

use std::fmt;
use std::str::FromStr;

use crate::math::{log_softmax, sigmoid, softmax, softplus, xlogx};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<T> {
    pub value: T,
    /// d loss / d student score, one entry per candidate.
    pub grad: Vec<T>,
}

/// Convex potential of a scalar Bregman divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// phi(u) = u^2
    Quadratic,
    /// phi(u) = u ln u + (1 - u) ln(1 - u)
    NegBinaryEntropy,
}

/// `phi(a) - phi(b) - phi'(b) (a - b)`.
pub fn bregman<T: Scalar>(phi: Potential, a: T, b: T) -> Result<T> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain("bregman arguments must be finite".into()));
    }
    match phi {
        Potential::Quadratic => {
            let f = |u: T| u * u;
            let two = T::of(2.0);
            Ok(f(a) - f(b) - two * b * (a - b))
        }
        Potential::NegBinaryEntropy => {
            if !(a >= T::zero() && a <= T::one()) {
                return Err(Error::Domain(format!("a = {a} outside [0, 1]")));
            }
            if !(b > T::zero() && b < T::one()) {
                return Err(Error::Domain(format!("b = {b} outside (0, 1)")));
            }
            let f = |u: T| xlogx(u) + xlogx(T::one() - u);
            let fprime = b.ln() - (T::one() - b).ln();
            Ok((f(a) - f(b) - fprime * (a - b)).max(T::zero()))
        }
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature must be > 0, got {tau}")))
    }
}

fn check_group<T: Scalar>(scores: &[T]) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::Invalid(format!(
            "a group needs at least 2 candidates, got {}",
            scores.len()
        )));
    }
    Ok(())
}

/// Localized contrastive estimation: softmax cross-entropy at temperature
/// `tau` against the positive.
pub fn lce_loss<T: Scalar>(scores: &[T], positive_index: usize, tau: T) -> Result<LossResult<T>> {
    check_group(scores)?;
    check_tau(tau)?;
    if positive_index >= scores.len() {
        return Err(Error::Invalid(format!("positive index {positive_index} out of range")));
    }
    let logp = log_softmax(scores, tau);
    let grad = logp
        .iter()
        .enumerate()
        .map(|(j, &lp)| {
            let target = if j == positive_index { T::one() } else { T::zero() };
            (lp.exp() - target) / tau
        })
        .collect();
    Ok(LossResult {
        value: -logp[positive_index],
        grad,
    })
}

/// Teacher pairwise preferences over ordered pairs `i != j`. Pairs whose
/// teacher scores tie carry no target and are left out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPrefs {
    m: usize,
    /// (i, j, y_ij) with y_ij = 1 iff g_i > g_j.
    pairs: Vec<(usize, usize, bool)>,
}

impl PairPrefs {
    pub fn from_teacher<T: Scalar>(teacher: &[T]) -> Self {
        let m = teacher.len();
        let mut pairs = Vec::with_capacity(m * m.saturating_sub(1));
        for i in 0..m {
            for j in 0..m {
                if i != j && teacher[i] != teacher[j] {
                    pairs.push((i, j, teacher[i] > teacher[j]));
                }
            }
        }
        Self { m, pairs }
    }

    /// Explicit pair list; indices must be `< m` and distinct within a pair.
    pub fn from_pairs(m: usize, pairs: Vec<(usize, usize, bool)>) -> Result<Self> {
        if let Some(&(i, j, _)) = pairs.iter().find(|&&(i, j, _)| i >= m || j >= m || i == j) {
            return Err(Error::Invalid(format!("invalid pair ({i}, {j}) for m = {m}")));
        }
        Ok(Self { m, pairs })
    }

    pub fn group_size(&self) -> usize {
        self.m
    }

    pub fn pairs(&self) -> &[(usize, usize, bool)] {
        &self.pairs
    }
}

/// Pairwise logistic loss summed over the included ordered pairs.
pub fn ranknet_loss<T: Scalar>(student: &[T], prefs: &PairPrefs) -> Result<LossResult<T>> {
    check_group(student)?;
    if prefs.m != student.len() {
        return Err(Error::Dimension {
            expected: prefs.m,
            got: student.len(),
        });
    }
    let mut value = T::zero();
    let mut grad = vec![T::zero(); student.len()];
    for &(i, j, y) in &prefs.pairs {
        let s = student[i] - student[j];
        // -[y ln sigma(s) + (1 - y) ln(1 - sigma(s))]
        value = value + if y { softplus(-s) } else { softplus(s) };
        let target = if y { T::one() } else { T::zero() };
        let d = sigmoid(s) - target;
        grad[i] = grad[i] + d;
        grad[j] = grad[j] - d;
    }
    Ok(LossResult { value, grad })
}

/// Squared error between student and teacher margins to the positive.
pub fn margin_mse_loss<T: Scalar>(
    student: &[T],
    teacher: &[T],
    positive_index: usize,
) -> Result<LossResult<T>> {
    check_group(student)?;
    if teacher.len() != student.len() {
        return Err(Error::Dimension {
            expected: student.len(),
            got: teacher.len(),
        });
    }
    if positive_index >= student.len() {
        return Err(Error::Invalid(format!("positive index {positive_index} out of range")));
    }
    let i = positive_index;
    let two = T::of(2.0);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); student.len()];
    for j in (0..student.len()).filter(|&j| j != i) {
        let r = (student[i] - student[j]) - (teacher[i] - teacher[j]);
        value = value + r * r;
        grad[i] = grad[i] + two * r;
        grad[j] = grad[j] - two * r;
    }
    Ok(LossResult { value, grad })
}

/// Student-led KL divergence `sum_j p_f(j) ln(p_f(j) / p_g(j))` between the
/// temperature-`tau` softmax distributions of student and teacher scores.
pub fn kl_loss<T: Scalar>(student: &[T], teacher: &[T], tau: T) -> Result<LossResult<T>> {
    check_group(student)?;
    check_tau(tau)?;
    if teacher.len() != student.len() {
        return Err(Error::Dimension {
            expected: student.len(),
            got: teacher.len(),
        });
    }
    let lp = log_softmax(student, tau);
    let lq = log_softmax(teacher, tau);
    let p: Vec<T> = lp.iter().map(|&x| x.exp()).collect();
    let mut value = T::zero();
    for j in 0..p.len() {
        if p[j] > T::zero() {
            value = value + p[j] * (lp[j] - lq[j]);
        }
    }
    let value = value.max(T::zero());
    // d/df_k = p_k (a_k - KL) / tau, with a_k = ln p_k - ln q_k.
    let grad = (0..p.len())
        .map(|k| p[k] * ((lp[k] - lq[k]) - value) / tau)
        .collect();
    Ok(LossResult { value, grad })
}

/// Loss selector used by training and configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Lce,
    RankNet,
    MarginMse,
    Kl,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Lce, LossKind::RankNet, LossKind::MarginMse, LossKind::Kl];

    /// Whether the loss consumes teacher scores (all but LCE).
    pub fn needs_teacher(self) -> bool {
        !matches!(self, LossKind::Lce)
    }

    /// Whether the loss needs a designated positive.
    pub fn needs_positive(self) -> bool {
        matches!(self, LossKind::Lce | LossKind::MarginMse)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Lce => "lce",
            LossKind::RankNet => "ranknet",
            LossKind::MarginMse => "margin_mse",
            LossKind::Kl => "kl",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lce" => Ok(LossKind::Lce),
            "ranknet" => Ok(LossKind::RankNet),
            "margin_mse" | "marginmse" | "mmse" => Ok(LossKind::MarginMse),
            "kl" => Ok(LossKind::Kl),
            other => Err(Error::Invalid(format!("unknown loss {other:?}"))),
        }
    }
}

/// Targets a loss is evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a, T> {
    pub teacher: Option<&'a [T]>,
    pub positive_index: Option<usize>,
}

/// Evaluates `kind` on `student` scores. `tau` applies to LCE and KL.
pub fn evaluate<T: Scalar>(
    kind: LossKind,
    student: &[T],
    targets: Targets<'_, T>,
    tau: T,
) -> Result<LossResult<T>> {
    let teacher = || {
        targets
            .teacher
            .ok_or_else(|| Error::Invalid(format!("{kind} requires teacher scores")))
    };
    let positive = || {
        targets
            .positive_index
            .ok_or_else(|| Error::Invalid(format!("{kind} requires a positive index")))
    };
    match kind {
        LossKind::Lce => lce_loss(student, positive()?, tau),
        LossKind::RankNet => ranknet_loss(student, &PairPrefs::from_teacher(teacher()?)),
        LossKind::MarginMse => margin_mse_loss(student, teacher()?, positive()?),
        LossKind::Kl => kl_loss(student, teacher()?, tau),
    }
}

/// The softmax used by LCE and KL, exposed for diagnostics.
pub fn softmax_at<T: Scalar>(scores: &[T], tau: T) -> Result<Vec<T>> {
    check_tau(tau)?;
    Ok(softmax(scores, tau))
}

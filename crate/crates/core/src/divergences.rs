//! KL, skewed Bhattacharyya and Rényi divergences on a finite simplex.
//!
//! Conventions, fixed across the crate:
//!
//! - `BC_β(p ∥ q) = Σ_i p_i^β q_i^(1-β)`: the skew `β` always sits on the
//!   first argument.
//! - `0^β = 0` for `β > 0`, and a coordinate with `p_i = 0` contributes
//!   nothing to `BC` whatever `q_i` is.
//! - `0 · log(0 / q) = 0`; `KL(p ∥ q) = +∞` when `p_i > 0 = q_i`.
//! - Units are nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbVector;

/// A skew parameter `β ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Skew(f64);

impl Skew {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta < 1.0 {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidParameter(format!(
                "skew must lie in (0, 1), got {beta}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - β`.
    pub fn complement(self) -> Skew {
        Skew(1.0 - self.0)
    }
}

impl TryFrom<f64> for Skew {
    type Error = Error;

    fn try_from(beta: f64) -> Result<Self> {
        Skew::new(beta)
    }
}

impl From<Skew> for f64 {
    fn from(s: Skew) -> f64 {
        s.0
    }
}

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() == q.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            expected: p.len(),
            found: q.len(),
        })
    }
}

/// `KL(p ∥ q) = Σ p_i log(p_i / q_i)`.
pub fn kl(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    same_len(p.as_slice(), q.as_slice())?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        if pi == 0.0 {
            continue;
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc)
}

/// `Σ p_i^e q_i^(1-e)` over coordinates with `p_i > 0`, for any real `e`.
///
/// This is the Bhattacharyya coefficient when `e ∈ (0, 1)`. The joint density
/// ratio under the modified log-loss routes through this same function, which
/// is what makes its divergence-scale threshold exact.
pub(crate) fn affinity(exponent: f64, p: &[f64], q: &[f64]) -> f64 {
    let rest = 1.0 - exponent;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        acc += pi.powf(exponent) * qi.powf(rest);
    }
    acc
}

/// Skewed Bhattacharyya coefficient `BC_β(p ∥ q) ∈ [0, 1]`.
pub fn bhattacharyya_coeff(beta: Skew, p: &ProbVector, q: &ProbVector) -> Result<f64> {
    same_len(p.as_slice(), q.as_slice())?;
    Ok(affinity(beta.value(), p.as_slice(), q.as_slice()))
}

/// Skewed Bhattacharyya divergence `B_β(p ∥ q) = -log BC_β(p ∥ q)`.
pub fn bhattacharyya_div(beta: Skew, p: &ProbVector, q: &ProbVector) -> Result<f64> {
    Ok(-bhattacharyya_coeff(beta, p, q)?.ln())
}

/// Rényi divergence of order `α ∈ (0, 1)`:
/// `R_α(p ∥ q) = log(Σ p_i^α q_i^(1-α)) / (α - 1)`.
pub fn renyi(alpha: f64, p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Rényi order must lie in (0, 1), got {alpha}"
        )));
    }
    same_len(p.as_slice(), q.as_slice())?;
    Ok(affinity(alpha, p.as_slice(), q.as_slice()).ln() / (alpha - 1.0))
}

/// Per-input divergences between `π*(x)` and `π(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProfile {
    pub skew: f64,
    pub kl: Vec<f64>,
    pub bhattacharyya_coeff: Vec<f64>,
    pub bhattacharyya_div: Vec<f64>,
    pub renyi: Vec<f64>,
}

impl DivergenceProfile {
    /// Evaluates `KL(π* ∥ π)`, `BC_β(π* ∥ π)`, `B_β(π* ∥ π)` and `R_β(π* ∥ π)`
    /// at every input.
    pub fn compute(task: &crate::model::FiniteTask, beta: Skew) -> Result<Self> {
        let n = task.n_inputs();
        let mut profile = Self {
            skew: beta.value(),
            kl: Vec::with_capacity(n),
            bhattacharyya_coeff: Vec::with_capacity(n),
            bhattacharyya_div: Vec::with_capacity(n),
            renyi: Vec::with_capacity(n),
        };
        for x in 0..n {
            let (p, q) = (task.bayes(x), task.model(x));
            profile.kl.push(kl(p, q)?);
            profile
                .bhattacharyya_coeff
                .push(bhattacharyya_coeff(beta, p, q)?);
            profile
                .bhattacharyya_div
                .push(bhattacharyya_div(beta, p, q)?);
            profile.renyi.push(renyi(beta.value(), p, q)?);
        }
        Ok(profile)
    }
}

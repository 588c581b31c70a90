//! Finite-domain probability objects and the prediction layer.
//!
//! A [`FiniteTask`] bundles the ground-truth joint distribution over a finite
//! input set `X` and label set `Y = {0, .., L-1}`, factored as a marginal
//! `P_x` times a Bayes posterior `π*(x)`, together with the logits `h(x)` of a
//! fixed model. The model posterior `π(x) = softmax(h(x))` is computed once at
//! construction.
//!
//! Labels are 0-based indices throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sums further than this from one are rejected.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Sums within this distance of one are stored as given (no renormalization),
/// which keeps serialization round trips bit-identical.
const EXACT_SUM_SLACK: f64 = 1e-12;

/// Sizes of the input and label spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteDomain {
    n_inputs: usize,
    n_labels: usize,
}

impl FiniteDomain {
    pub fn new(n_inputs: usize, n_labels: usize) -> Result<Self> {
        if n_inputs < 1 {
            return Err(Error::InvalidInput("n_inputs must be at least 1".into()));
        }
        if n_labels < 2 {
            return Err(Error::InvalidInput("n_labels must be at least 2".into()));
        }
        Ok(Self { n_inputs, n_labels })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }
}

/// An element of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `weights` as a probability vector.
    ///
    /// Entries must be finite and nonnegative, and the sum must lie within
    /// [`SUM_TOLERANCE`] of one. Vectors off by more than rounding noise are
    /// renormalized.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NotNormalized("empty vector".into()));
        }
        for (idx, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { idx, value: w });
            }
            if w < 0.0 {
                return Err(Error::NotNormalized(format!(
                    "negative entry {w} at index {idx}"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::NotNormalized(format!("sum is {sum}")));
        }
        if (sum - 1.0).abs() > EXACT_SUM_SLACK {
            return Ok(Self(weights.into_iter().map(|w| w / sum).collect()));
        }
        Ok(Self(weights))
    }

    /// Normalizes nonnegative finite weights with a positive total.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::NotNormalized(format!(
                "cannot normalize total {sum}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    /// The point mass on `idx`.
    pub fn one_hot(len: usize, idx: usize) -> Result<Self> {
        if idx >= len {
            return Err(Error::InvalidInput(format!(
                "index {idx} out of range for length {len}"
            )));
        }
        let mut w = vec![0.0; len];
        w[idx] = 1.0;
        Ok(Self(w))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::NotNormalized("empty vector".into()));
        }
        Ok(Self(vec![1.0 / len as f64; len]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, idx: usize) -> &f64 {
        &self.0[idx]
    }
}

/// One label distribution per input.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    rows: Vec<ProbVector>,
}

impl PosteriorField {
    pub fn new(rows: Vec<ProbVector>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::InvalidInput("posterior field has no rows".into()));
        };
        let width = first.len();
        for row in &rows {
            if row.len() != width {
                return Err(Error::LengthMismatch {
                    expected: width,
                    found: row.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn row(&self, x: usize) -> &ProbVector {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[ProbVector] {
        &self.rows
    }

    pub fn n_inputs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_labels(&self) -> usize {
        self.rows[0].len()
    }
}

/// Model outputs `h(x) ∈ R^L`, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    values: Vec<Vec<f64>>,
}

impl Logits {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = values.first() else {
            return Err(Error::InvalidInput("logits have no rows".into()));
        };
        let width = first.len();
        for row in &values {
            if row.len() != width {
                return Err(Error::LengthMismatch {
                    expected: width,
                    found: row.len(),
                });
            }
            if let Some((idx, &value)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { idx, value });
            }
        }
        Ok(Self { values })
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Maps a logit row onto the simplex, `π_y ∝ exp(h_y)`.
///
/// The row maximum is subtracted before exponentiating, so large logits do not
/// overflow. Entries more than ~745 nats below the maximum underflow to zero.
pub fn softmax(logits_row: &[f64]) -> Result<ProbVector> {
    if logits_row.is_empty() {
        return Err(Error::InvalidInput("empty logit row".into()));
    }
    if let Some((idx, &value)) = logits_row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { idx, value });
    }
    let max = logits_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits_row.iter().map(|&h| (h - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Argmax of a posterior row; ties go to the lowest index.
pub fn predict(posterior_row: &ProbVector) -> usize {
    let mut best = 0;
    for (y, &p) in posterior_row.as_slice().iter().enumerate().skip(1) {
        if p > posterior_row[best] {
            best = y;
        }
    }
    best
}

/// Binary rejection decision per input; `true` means reject.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RejectMask(Vec<bool>);

impl RejectMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn none(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    /// Decodes the low `n` bits of `code`; bit `x` set means input `x` is rejected.
    pub fn from_bits(code: u64, n: usize) -> Self {
        Self((0..n).map(|x| code >> x & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rejects(&self, x: usize) -> bool {
        self.0[x]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| !b).collect())
    }

    /// True when every input rejected here is also rejected by `other`.
    pub fn is_subset_of(&self, other: &RejectMask) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }

    /// Number of inputs rejected here but not by `other`.
    pub fn count_not_in(&self, other: &RejectMask) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(&a, &b)| a && !b)
            .count()
    }

    /// `0`/`1` string, one character per input.
    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl FromIterator<bool> for RejectMask {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Output of the combined model for one input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Predict(usize),
    Reject,
}

/// Per-input output of the combined model `h` plus rejector `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinedOutput(Vec<Decision>);

impl CombinedOutput {
    pub fn decisions(&self) -> &[Decision] {
        &self.0
    }

    pub fn n_rejected(&self) -> usize {
        self.0
            .iter()
            .filter(|d| matches!(d, Decision::Reject))
            .count()
    }
}

/// Ground-truth joint distribution plus the fixed model under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTask {
    domain: FiniteDomain,
    marginal: ProbVector,
    bayes_posterior: PosteriorField,
    logits: Logits,
    model_posterior: PosteriorField,
}

impl FiniteTask {
    pub fn new(
        marginal: ProbVector,
        bayes_posterior: PosteriorField,
        logits: Logits,
    ) -> Result<Self> {
        let domain = FiniteDomain::new(marginal.len(), bayes_posterior.n_labels())?;
        if bayes_posterior.n_inputs() != domain.n_inputs() {
            return Err(Error::LengthMismatch {
                expected: domain.n_inputs(),
                found: bayes_posterior.n_inputs(),
            });
        }
        if logits.rows().len() != domain.n_inputs() {
            return Err(Error::LengthMismatch {
                expected: domain.n_inputs(),
                found: logits.rows().len(),
            });
        }
        if logits.row(0).len() != domain.n_labels() {
            return Err(Error::LengthMismatch {
                expected: domain.n_labels(),
                found: logits.row(0).len(),
            });
        }
        if let Some(x) = marginal.as_slice().iter().position(|&p| p <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "marginal mass at input {x} must be positive"
            )));
        }
        let model_rows = logits
            .rows()
            .iter()
            .map(|row| softmax(row))
            .collect::<Result<Vec<_>>>()?;
        let model_posterior = PosteriorField::new(model_rows)?;
        Ok(Self {
            domain,
            marginal,
            bayes_posterior,
            logits,
            model_posterior,
        })
    }

    /// Builds a task from raw nested vectors.
    pub fn from_parts(
        marginal: Vec<f64>,
        bayes_posterior: Vec<Vec<f64>>,
        logits: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let marginal = ProbVector::new(marginal)?;
        let rows = bayes_posterior
            .into_iter()
            .map(ProbVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(marginal, PosteriorField::new(rows)?, Logits::new(logits)?)
    }

    pub fn domain(&self) -> FiniteDomain {
        self.domain
    }

    pub fn n_inputs(&self) -> usize {
        self.domain.n_inputs()
    }

    pub fn n_labels(&self) -> usize {
        self.domain.n_labels()
    }

    /// `P_x`.
    pub fn marginal(&self) -> &ProbVector {
        &self.marginal
    }

    /// `π*(x)`.
    pub fn bayes(&self, x: usize) -> &ProbVector {
        self.bayes_posterior.row(x)
    }

    pub fn bayes_posterior(&self) -> &PosteriorField {
        &self.bayes_posterior
    }

    /// `π(x) = softmax(h(x))`.
    pub fn model(&self, x: usize) -> &ProbVector {
        self.model_posterior.row(x)
    }

    pub fn model_posterior(&self) -> &PosteriorField {
        &self.model_posterior
    }

    pub fn logits(&self) -> &Logits {
        &self.logits
    }

    /// `P(x, y) = P_x(x) · π*_y(x)`.
    pub fn joint(&self, x: usize, y: usize) -> f64 {
        self.marginal[x] * self.bayes(x)[y]
    }

    /// Model prediction `argmax_y π_y(x)`.
    pub fn prediction(&self, x: usize) -> usize {
        predict(self.model(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TaskFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaskFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }
}

/// Applies a rejection mask to the model's predictions.
pub fn combine(task: &FiniteTask, reject_mask: &RejectMask) -> Result<CombinedOutput> {
    if reject_mask.len() != task.n_inputs() {
        return Err(Error::LengthMismatch {
            expected: task.n_inputs(),
            found: reject_mask.len(),
        });
    }
    Ok(CombinedOutput(
        (0..task.n_inputs())
            .map(|x| {
                if reject_mask.rejects(x) {
                    Decision::Reject
                } else {
                    Decision::Predict(task.prediction(x))
                }
            })
            .collect(),
    ))
}

/// On-disk task schema (JSON).
///
/// ```json
/// {
///   "n_inputs": 2,
///   "n_labels": 2,
///   "marginal": [0.5, 0.5],
///   "bayes_posterior": [[0.7, 0.3], [0.1, 0.9]],
///   "logits": [[0.4, -0.2], [0.0, 1.3]]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub n_inputs: usize,
    pub n_labels: usize,
    pub marginal: Vec<f64>,
    pub bayes_posterior: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl From<&FiniteTask> for TaskFile {
    fn from(task: &FiniteTask) -> Self {
        Self {
            n_inputs: task.n_inputs(),
            n_labels: task.n_labels(),
            marginal: task.marginal.as_slice().to_vec(),
            bayes_posterior: task
                .bayes_posterior
                .rows()
                .iter()
                .map(|r| r.as_slice().to_vec())
                .collect(),
            logits: task.logits.rows().to_vec(),
        }
    }
}

impl TryFrom<TaskFile> for FiniteTask {
    type Error = Error;

    fn try_from(file: TaskFile) -> Result<Self> {
        if file.marginal.len() != file.n_inputs {
            return Err(Error::LengthMismatch {
                expected: file.n_inputs,
                found: file.marginal.len(),
            });
        }
        if file.bayes_posterior.len() != file.n_inputs {
            return Err(Error::LengthMismatch {
                expected: file.n_inputs,
                found: file.bayes_posterior.len(),
            });
        }
        if let Some(row) = file
            .bayes_posterior
            .iter()
            .chain(&file.logits)
            .find(|r| r.len() != file.n_labels)
        {
            return Err(Error::LengthMismatch {
                expected: file.n_labels,
                found: row.len(),
            });
        }
        Self::from_parts(file.marginal, file.bayes_posterior, file.logits)
    }
}

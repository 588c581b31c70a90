//! Chow's rule, density-ratio rejectors and the rejection objectives.
//!
//! A density-ratio rejector reweights the true marginal `P_x` towards an ideal
//! distribution `Q = P_x · α` and rejects wherever the ratio `α(x)` is small:
//! `r(x; τ) = [α(x) ≤ τ]`. Two ratios are built here, both closed-form
//! solutions of a KL-regularized objective:
//!
//! - marginal: `α(x) = exp(-E_{π*(x)}[ℓ] / λ) / Z`
//! - joint: `α_j(x) = E_{π*(x)}[exp(-ℓ / λ)] / Z_j`
//!
//! Each rejector keeps its per-input log weights `log(Z · α(x))` and `log Z`
//! so that the divergence-scale reparameterizations are computed from the
//! same numbers the scores were. On the divergence scale:
//!
//! - marginal: reject iff `E_{π*}[ℓ] ≥ κ`, `κ = -λ log(Z τ)`. Under the
//!   modified log-loss the left side is `KL(π* ∥ π)`; under other losses `κ`
//!   is the equivalent Chow cost.
//! - joint: reject iff `-log(Z_j α_j(x)) ≥ κ_j`, `κ_j = -log(Z_j τ)`. Under the
//!   modified log-loss the left side is `B_{1-1/λ}(π* ∥ π)`.
//!
//! Ties always reject.

use serde::{Deserialize, Serialize};

use crate::divergences::{affinity, bhattacharyya_div, kl};
use crate::error::{Error, Result};
use crate::losses::{
    conditional_risk, conditional_risks, pointwise_loss, shannon_entropy, LossKind,
};
use crate::model::{FiniteTask, RejectMask};

/// Regularization weight `λ > 0` on the dissimilarity to the true distribution.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda > 0.0 && lambda.is_finite() {
            Ok(Self(lambda))
        } else {
            Err(Error::InvalidParameter(format!(
                "lambda must be positive and finite, got {lambda}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether `1 - 1/λ` is a valid skew.
    pub fn exceeds_one(self) -> bool {
        self.0 > 1.0
    }

    /// `1 - 1/λ`, unchecked. Shared by the joint ratio and the Bhattacharyya
    /// rejector so both see the same exponent.
    pub(crate) fn complement_exponent(self) -> f64 {
        1.0 - 1.0 / self.0
    }

    /// `Skew(1 - 1/λ)`; requires `λ > 1`.
    pub fn complement_skew(self) -> Result<crate::divergences::Skew> {
        crate::divergences::Skew::new(self.complement_exponent())
    }

    /// `Skew(1/λ)`; requires `λ > 1`.
    pub fn inverse_skew(self) -> Result<crate::divergences::Skew> {
        crate::divergences::Skew::new(1.0 / self.0)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Temperature::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Cost `c ≥ 0` paid per rejected input.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RejectionCost(f64);

impl RejectionCost {
    pub fn new(c: f64) -> Result<Self> {
        if c >= 0.0 && c.is_finite() {
            Ok(Self(c))
        } else {
            Err(Error::InvalidParameter(format!(
                "rejection cost must be finite and nonnegative, got {c}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RejectionCost {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        RejectionCost::new(v)
    }
}

impl From<RejectionCost> for f64 {
    fn from(c: RejectionCost) -> f64 {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioKind {
    Marginal,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScale {
    /// `τ` compared against density ratios.
    Ratio,
    /// `κ` compared against divergences (or conditional risks).
    Divergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub scale: ThresholdScale,
}

impl Threshold {
    pub fn ratio(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "ratio threshold must be nonnegative, got {tau}"
            )));
        }
        Ok(Self {
            value: tau,
            scale: ThresholdScale::Ratio,
        })
    }

    pub fn divergence(kappa: f64) -> Result<Self> {
        if kappa.is_nan() {
            return Err(Error::InvalidParameter(
                "divergence threshold is NaN".into(),
            ));
        }
        Ok(Self {
            value: kappa,
            scale: ThresholdScale::Divergence,
        })
    }

    fn expect(self, scale: ThresholdScale) -> Result<f64> {
        if self.scale == scale {
            Ok(self.value)
        } else {
            Err(Error::InvalidParameter(format!(
                "expected a {scale:?} threshold, got {:?}",
                self.scale
            )))
        }
    }
}

/// Closed-form density ratio over `X`, together with its normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioRejector {
    kind: RatioKind,
    loss: LossKind,
    lambda: Temperature,
    log_weights: Vec<f64>,
    log_normalizer: f64,
    scores: Vec<f64>,
}

/// `-risk / λ`, the marginal log weight. Also used to map divergence-scale
/// thresholds back onto ratios, so the two agree bit for bit.
fn marginal_log_weight(risk: f64, lambda: Temperature) -> f64 {
    -risk / lambda.value()
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = terms.map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

impl DensityRatioRejector {
    fn from_log_weights(
        kind: RatioKind,
        loss: LossKind,
        lambda: Temperature,
        task: &FiniteTask,
        log_weights: Vec<f64>,
    ) -> Result<Self> {
        let marginal = task.marginal().as_slice();
        let log_normalizer =
            log_sum_exp(marginal.iter().zip(&log_weights).map(|(p, w)| p.ln() + w));
        if !log_normalizer.is_finite() {
            return Err(Error::Domain(format!(
                "normalizer is degenerate (log Z = {log_normalizer})"
            )));
        }
        let scores = log_weights
            .iter()
            .map(|w| (w - log_normalizer).exp())
            .collect();
        Ok(Self {
            kind,
            loss,
            lambda,
            log_weights,
            log_normalizer,
            scores,
        })
    }

    pub fn kind(&self) -> RatioKind {
        self.kind
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn lambda(&self) -> Temperature {
        self.lambda
    }

    /// `α(x)` (or `α_j(x)`) per input.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score(&self, x: usize) -> f64 {
        self.scores[x]
    }

    /// `log(Z · α(x))` per input.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `Z · α(x)`: `exp(-E[ℓ]/λ)` for the marginal ratio, `E[exp(-ℓ/λ)]` for the joint.
    pub fn unnormalized(&self, x: usize) -> f64 {
        self.log_weights[x].exp()
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// `Z` or `Z_j`.
    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    /// The ratio an input with divergence-scale value `d` would receive.
    pub fn score_from_divergence(&self, d: f64) -> f64 {
        let log_weight = match self.kind {
            RatioKind::Marginal => marginal_log_weight(d, self.lambda),
            RatioKind::Joint => -d,
        };
        (log_weight - self.log_normalizer).exp()
    }

    /// Maps a ratio threshold `τ` to the divergence threshold `κ` that rejects
    /// the same inputs: `κ = -λ log(Z τ)` (marginal) or `κ_j = -log(Z_j τ)`
    /// (joint).
    ///
    /// The closed form is then moved by a few ulps onto the exact
    /// floating-point boundary of [`Self::score_from_divergence`], so that
    /// `[d ≥ κ] == [score(d) ≤ τ]` holds for every representable `d`.
    pub fn divergence_threshold(&self, tau: f64) -> f64 {
        let log_tau = tau.ln();
        let (guess, scale) = match self.kind {
            RatioKind::Marginal => {
                let lambda = self.lambda.value();
                (
                    -lambda * (self.log_normalizer + log_tau),
                    lambda * (self.log_normalizer.abs() + log_tau.abs()),
                )
            }
            RatioKind::Joint => (
                -(self.log_normalizer + log_tau),
                self.log_normalizer.abs() + log_tau.abs(),
            ),
        };
        snap_to_boundary(guess, 1e-9 * (1.0 + guess.abs() + scale), |d| {
            self.score_from_divergence(d) <= tau
        })
    }

    /// All thresholds that produce distinct masks: every distinct score, the
    /// midpoints between consecutive scores, and half the smallest score.
    pub fn auto_tau_grid(&self) -> Vec<f64> {
        auto_tau_grid(&self.scores)
    }
}

/// Sorted distinct `values` with midpoints, led by half the smallest value.
pub fn auto_tau_grid(values: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut grid = Vec::with_capacity(2 * distinct.len());
    if let Some(&first) = distinct.first() {
        grid.push(first / 2.0);
    }
    for (i, &v) in distinct.iter().enumerate() {
        if i > 0 {
            let mid = distinct[i - 1] + (v - distinct[i - 1]) / 2.0;
            if mid > distinct[i - 1] && mid < v {
                grid.push(mid);
            }
        }
        grid.push(v);
    }
    grid.dedup();
    grid
}

/// Total-order key for finite and infinite floats.
fn float_key(v: f64) -> i64 {
    let bits = v.to_bits() as i64;
    if bits >= 0 {
        bits
    } else {
        i64::MIN.wrapping_sub(bits)
    }
}

fn from_float_key(k: i64) -> f64 {
    if k >= 0 {
        f64::from_bits(k as u64)
    } else {
        f64::from_bits(i64::MIN.wrapping_sub(k) as u64)
    }
}

/// Smallest float `κ` in `[guess - width, guess + width]` with `accept(κ)`,
/// where `accept` is monotone (false below the boundary, true above). Returns
/// `guess` unchanged when the boundary is not inside the window.
fn snap_to_boundary(guess: f64, width: f64, accept: impl Fn(f64) -> bool) -> f64 {
    if !guess.is_finite() {
        return guess;
    }
    let (lo, hi) = (guess - width, guess + width);
    if accept(lo) || !accept(hi) {
        return guess;
    }
    let (mut lo, mut hi) = (float_key(lo), float_key(hi));
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if accept(from_float_key(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    from_float_key(hi)
}

/// Chow's rule: reject iff the conditional risk is at least `c`.
pub fn chow_rule(kind: LossKind, task: &FiniteTask, c: RejectionCost) -> RejectMask {
    (0..task.n_inputs())
        .map(|x| conditional_risk(kind, task, x) >= c.value())
        .collect()
}

/// Chow's rule for the log-loss, written as a KL threshold with the
/// input-dependent cost `c - H(π*(x))`.
pub fn chow_log_form(task: &FiniteTask, c: RejectionCost) -> RejectMask {
    (0..task.n_inputs())
        .map(|x| {
            let (p, q) = (task.bayes(x), task.model(x));
            let divergence = kl(p, q).expect("posterior rows share a length");
            divergence >= c.value() - shannon_entropy(p)
        })
        .collect()
}

/// Optimal marginal density ratio `α(x) = exp(-E_{π*}[ℓ]/λ) / Z`.
pub fn marginal_ratio(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
) -> Result<DensityRatioRejector> {
    let log_weights = conditional_risks(kind, task)
        .into_iter()
        .map(|r| marginal_log_weight(r, lambda))
        .collect();
    DensityRatioRejector::from_log_weights(RatioKind::Marginal, kind, lambda, task, log_weights)
}

/// Optimal joint density ratio, marginalized over labels:
/// `α_j(x) = E_{π*(x)}[exp(-ℓ/λ)] / Z_j`.
///
/// Under the modified log-loss `π*_y exp(-ℓ̃_y/λ) = π*_y^(1-1/λ) π_y^(1/λ)`,
/// and the inner expectation is evaluated in that form.
pub fn joint_ratio(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
) -> Result<DensityRatioRejector> {
    let log_weights = (0..task.n_inputs())
        .map(|x| match kind {
            LossKind::ModifiedLog => affinity(
                lambda.complement_exponent(),
                task.bayes(x).as_slice(),
                task.model(x).as_slice(),
            )
            .ln(),
            _ => {
                let support: Vec<(f64, f64)> = task
                    .bayes(x)
                    .as_slice()
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(y, &p)| (p, -pointwise_loss(kind, task, x, y) / lambda.value()))
                    .collect();
                let max = support
                    .iter()
                    .map(|&(_, e)| e)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                let inner: f64 = support.iter().map(|&(p, e)| p * (e - max).exp()).sum();
                max + inner.ln()
            }
        })
        .collect();
    DensityRatioRejector::from_log_weights(RatioKind::Joint, kind, lambda, task, log_weights)
}

/// `r(x; τ) = [α(x) ≤ τ]`.
pub fn threshold_reject(rej: &DensityRatioRejector, tau: Threshold) -> Result<RejectMask> {
    let tau = tau.expect(ThresholdScale::Ratio)?;
    if tau < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ratio threshold must be nonnegative, got {tau}"
        )));
    }
    Ok(rej.scores.iter().map(|&s| s <= tau).collect())
}

/// Joint rejector on the Bhattacharyya scale:
/// reject iff `B_{1-1/λ}(π*(x) ∥ π(x)) ≥ κ_j`. Requires `λ > 1`.
pub fn bhatta_rejector(
    task: &FiniteTask,
    lambda: Temperature,
    kappa_j: Threshold,
) -> Result<RejectMask> {
    let kappa = kappa_j.expect(ThresholdScale::Divergence)?;
    if !lambda.exceeds_one() {
        return Err(Error::InvalidParameter(format!(
            "the Bhattacharyya rejector needs lambda > 1, got {}",
            lambda.value()
        )));
    }
    let skew = lambda.complement_skew()?;
    (0..task.n_inputs())
        .map(|x| Ok(bhattacharyya_div(skew, task.bayes(x), task.model(x))? >= kappa))
        .collect()
}

/// Marginal rejector on the KL scale: reject iff `KL(π*(x) ∥ π(x)) ≥ κ`.
///
/// `λ` only enters through the reparameterization `κ = -λ log(Z τ)`.
pub fn kl_rejector(
    task: &FiniteTask,
    _lambda: Temperature,
    kappa: Threshold,
) -> Result<RejectMask> {
    let kappa = kappa.expect(ThresholdScale::Divergence)?;
    (0..task.n_inputs())
        .map(|x| Ok(kl(task.bayes(x), task.model(x))? >= kappa))
        .collect()
}

fn check_mask(task: &FiniteTask, mask: &RejectMask) -> Result<()> {
    if mask.len() == task.n_inputs() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            expected: task.n_inputs(),
            found: mask.len(),
        })
    }
}

/// `E_P[(1 - r(X)) ℓ(Y, h(X))] + c P[r(X) = 1]`.
pub fn rejection_objective(
    kind: LossKind,
    task: &FiniteTask,
    mask: &RejectMask,
    c: RejectionCost,
) -> Result<f64> {
    check_mask(task, mask)?;
    let mut total = 0.0;
    for (x, &p) in task.marginal().as_slice().iter().enumerate() {
        total += if mask.rejects(x) {
            p * c.value()
        } else {
            p * conditional_risk(kind, task, x)
        };
    }
    Ok(total)
}

/// Two-model cascade objective: accepted inputs pay the model's log-loss,
/// deferred ones pay the log-loss of the Bayes posterior, plus `c` per
/// deferral and the expected Bayes entropy.
///
/// Equals `rejection_objective(ModifiedLog, ..) + cascade_offset(task)` for
/// every mask.
pub fn cascade_objective(task: &FiniteTask, mask: &RejectMask, c: RejectionCost) -> Result<f64> {
    check_mask(task, mask)?;
    let mut routed = 0.0;
    let mut deferred_mass = 0.0;
    let mut entropy = 0.0;
    for (x, &p) in task.marginal().as_slice().iter().enumerate() {
        let h = shannon_entropy(task.bayes(x));
        if mask.rejects(x) {
            routed += p * h;
            deferred_mass += p;
        } else {
            routed += p * conditional_risk(LossKind::Log, task, x);
        }
        entropy += p * h;
    }
    Ok(routed + c.value() * deferred_mass + entropy)
}

/// Mask-independent gap `cascade_objective - rejection_objective(ModifiedLog)`:
/// `2 E_{P_x}[H(π*(X))]`.
///
/// Accepted inputs contribute `H + KL` to the cascade and `KL` to the
/// rejection objective; deferred ones contribute `H` and nothing. The trailing
/// entropy term adds a second `E[H]`.
pub fn cascade_offset(task: &FiniteTask) -> f64 {
    2.0 * task
        .marginal()
        .as_slice()
        .iter()
        .enumerate()
        .map(|(x, &p)| p * shannon_entropy(task.bayes(x)))
        .sum::<f64>()
}

/// Outcome of checking the marginal-vs-joint ratio inequalities on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub passed: bool,
    /// `min_x (Z_j α_j(x) - Z α(x))`; nonnegative up to `1e-12`.
    pub worst_pointwise_slack: f64,
    /// `1 - Z / Z_j`; nonnegative up to `1e-12`.
    pub normalizer_slack: f64,
    /// Inputs with `r(x; τ) = 0` but `r_j(x; (Z/Z_j) τ) = 1`, summed over the grid.
    pub containment_violations: usize,
    pub grid_points: usize,
}

/// Checks `Z α(x) ≤ Z_j α_j(x)`, `Z ≤ Z_j`, and the rejector containment
/// `r(x; τ) ≥ r_j(x; (Z/Z_j) τ)` for every `τ` in `tau_grid` (marginal scale).
pub fn lemma1_check(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
    tau_grid: &[f64],
) -> Result<Lemma1Report> {
    let marginal = marginal_ratio(kind, task, lambda)?;
    let joint = joint_ratio(kind, task, lambda)?;
    let worst_pointwise_slack = (0..task.n_inputs())
        .map(|x| joint.unnormalized(x) - marginal.unnormalized(x))
        .fold(f64::INFINITY, f64::min);
    let ratio = (marginal.log_normalizer() - joint.log_normalizer()).exp();
    let normalizer_slack = 1.0 - ratio;
    let mut containment_violations = 0;
    for &tau in tau_grid {
        let wide = threshold_reject(&marginal, Threshold::ratio(tau)?)?;
        let narrow = threshold_reject(&joint, Threshold::ratio(ratio * tau)?)?;
        containment_violations += narrow.count_not_in(&wide);
    }
    Ok(Lemma1Report {
        passed: worst_pointwise_slack >= -1e-12
            && normalizer_slack >= -1e-12
            && containment_violations == 0,
        worst_pointwise_slack,
        normalizer_slack,
        containment_violations,
        grid_points: tau_grid.len(),
    })
}

/// Serialized form of a single rejection decision.
///
/// ```json
/// {"kind": "joint", "loss": "modified-log", "lambda": 2.0,
///  "threshold": {"value": 0.8, "scale": "ratio"},
///  "normalizer": 0.93, "mask": [0, 1, 0]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectorOutput {
    pub kind: String,
    pub loss: LossKind,
    pub lambda: f64,
    pub threshold: Threshold,
    pub normalizer: f64,
    pub mask: Vec<u8>,
}

impl RejectorOutput {
    pub fn new(
        kind: &str,
        rej: &DensityRatioRejector,
        threshold: Threshold,
        mask: &RejectMask,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            loss: rej.loss(),
            lambda: rej.lambda().value(),
            threshold,
            normalizer: rej.normalizer(),
            mask: mask.as_slice().iter().map(|&b| u8::from(b)).collect(),
        }
    }
}

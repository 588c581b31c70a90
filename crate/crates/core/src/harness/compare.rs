use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::FiniteTask;
use crate::rejectors::{
    bhatta_rejector, joint_ratio, kl_rejector, marginal_ratio, threshold_reject, Temperature,
    Threshold,
};

/// Mask agreement at one joint threshold `τ`, with the marginal rejector at
/// the matched threshold `(Z_j / Z) · τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub tau: f64,
    pub matched_tau: f64,
    pub both: usize,
    pub only_marginal: usize,
    pub only_joint: usize,
    pub neither: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub loss: LossKind,
    pub lambda: f64,
    pub normalizer: f64,
    pub joint_normalizer: f64,
    pub rows: Vec<AgreementRow>,
    /// Inputs rejected by the joint rejector but not by the matched marginal one.
    pub joint_violations: usize,
    /// Inputs with `B_{1-1/λ} ≥ κ` but `KL < λ κ`; `None` when `λ ≤ 1`.
    pub bhattacharyya_violations: Option<usize>,
}

impl AgreementReport {
    pub fn total_violations(&self) -> usize {
        self.joint_violations + self.bhattacharyya_violations.unwrap_or(0)
    }
}

/// Checks that the joint rejector is contained in the marginal one at
/// matched thresholds, and that the Bhattacharyya rejector at `κ` is
/// contained in the KL rejector at `λ κ`.
///
/// The second check runs under the modified log-loss on the `κ` values the
/// joint modified-log ratio assigns to `tau_grid`, and only when `λ > 1`.
pub fn compare_rejectors(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
    tau_grid: &[f64],
) -> Result<AgreementReport> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidInput("empty tau grid".into()));
    }
    let marginal = marginal_ratio(kind, task, lambda)?;
    let joint = joint_ratio(kind, task, lambda)?;
    let scale = (joint.log_normalizer() - marginal.log_normalizer()).exp();
    let n = task.n_inputs();

    let mut rows = Vec::with_capacity(tau_grid.len());
    let mut joint_violations = 0;
    for &tau in tau_grid {
        let matched_tau = scale * tau;
        let m = threshold_reject(&marginal, Threshold::ratio(matched_tau)?)?;
        let j = threshold_reject(&joint, Threshold::ratio(tau)?)?;
        let mut row = AgreementRow {
            tau,
            matched_tau,
            both: 0,
            only_marginal: 0,
            only_joint: 0,
            neither: 0,
        };
        for x in 0..n {
            match (m.rejects(x), j.rejects(x)) {
                (true, true) => row.both += 1,
                (true, false) => row.only_marginal += 1,
                (false, true) => row.only_joint += 1,
                (false, false) => row.neither += 1,
            }
        }
        joint_violations += row.only_joint;
        rows.push(row);
    }

    let bhattacharyya_violations = if lambda.exceeds_one() {
        let bhatta_ratio = joint_ratio(LossKind::ModifiedLog, task, lambda)?;
        let mut violations = 0;
        for &tau in tau_grid {
            let kappa = bhatta_ratio.divergence_threshold(tau);
            let narrow = bhatta_rejector(task, lambda, Threshold::divergence(kappa)?)?;
            let wide = kl_rejector(task, lambda, Threshold::divergence(lambda.value() * kappa)?)?;
            violations += narrow.count_not_in(&wide);
        }
        Some(violations)
    } else {
        None
    };

    Ok(AgreementReport {
        loss: kind,
        lambda: lambda.value(),
        normalizer: marginal.normalizer(),
        joint_normalizer: joint.normalizer(),
        rows,
        joint_violations,
        bhattacharyya_violations,
    })
}

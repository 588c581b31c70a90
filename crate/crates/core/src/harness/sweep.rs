use serde::{Deserialize, Serialize};

use super::{short_hash, task_fingerprint, RejectorKind};
use crate::error::{Error, Result};
use crate::losses::{conditional_risks, LossKind};
use crate::model::{FiniteTask, RejectMask};
use crate::rejectors::{
    bhatta_rejector, chow_rule, joint_ratio, kl_rejector, marginal_ratio, threshold_reject,
    DensityRatioRejector, RejectionCost, Temperature, Threshold,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    /// Divergence-scale threshold, or the rejection cost for Chow's rule.
    pub kappa: f64,
    pub rejection_rate: f64,
    pub selective_risk: f64,
    pub n_rejected: usize,
    pub mask_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub loss: LossKind,
    pub lambda: f64,
    pub rejector: RejectorKind,
    pub task_fingerprint: String,
    pub normalizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub rows: Vec<SweepRow>,
}

/// The ratio whose scores drive a rejector kind. KL and Bhattacharyya
/// rejectors are the modified-log ratios on a divergence scale; Chow's rule is
/// swept through the marginal ratio.
fn driving_ratio(
    rejector: RejectorKind,
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
) -> Result<DensityRatioRejector> {
    match rejector {
        RejectorKind::Chow | RejectorKind::Marginal => marginal_ratio(kind, task, lambda),
        RejectorKind::Joint => joint_ratio(kind, task, lambda),
        RejectorKind::Kl => marginal_ratio(LossKind::ModifiedLog, task, lambda),
        RejectorKind::Bhatta => {
            if !lambda.exceeds_one() {
                return Err(Error::InvalidParameter(format!(
                    "the Bhattacharyya rejector needs lambda > 1, got {}",
                    lambda.value()
                )));
            }
            joint_ratio(LossKind::ModifiedLog, task, lambda)
        }
    }
}

/// One rejector at one ratio threshold: the driving ratio, the equivalent
/// divergence-scale threshold (the rejection cost for Chow's rule) and the mask.
pub fn rejector_mask(
    task: &FiniteTask,
    kind: LossKind,
    lambda: Temperature,
    rejector: RejectorKind,
    tau: f64,
) -> Result<(DensityRatioRejector, f64, RejectMask)> {
    Threshold::ratio(tau)?;
    let rej = driving_ratio(rejector, kind, task, lambda)?;
    let (kappa, mask) = mask_at(rejector, kind, task, &rej, tau)?;
    Ok((rej, kappa, mask))
}

/// Every threshold producing a distinct mask for this rejector.
pub fn default_tau_grid(
    task: &FiniteTask,
    kind: LossKind,
    lambda: Temperature,
    rejector: RejectorKind,
) -> Result<Vec<f64>> {
    Ok(driving_ratio(rejector, kind, task, lambda)?.auto_tau_grid())
}

fn mask_at(
    rejector: RejectorKind,
    kind: LossKind,
    task: &FiniteTask,
    rej: &DensityRatioRejector,
    tau: f64,
) -> Result<(f64, RejectMask)> {
    let kappa = rej.divergence_threshold(tau);
    let mask = match rejector {
        RejectorKind::Marginal | RejectorKind::Joint => {
            threshold_reject(rej, Threshold::ratio(tau)?)?
        }
        RejectorKind::Kl => kl_rejector(task, rej.lambda(), Threshold::divergence(kappa)?)?,
        RejectorKind::Bhatta => bhatta_rejector(task, rej.lambda(), Threshold::divergence(kappa)?)?,
        RejectorKind::Chow => {
            if kappa == f64::INFINITY {
                RejectMask::none(task.n_inputs())
            } else {
                chow_rule(kind, task, RejectionCost::new(kappa.max(0.0))?)
            }
        }
    };
    Ok((kappa, mask))
}

/// Evaluates the rejector on each `τ` of an ascending grid.
pub fn sweep(
    task: &FiniteTask,
    kind: LossKind,
    lambda: Temperature,
    rejector: RejectorKind,
    tau_grid: &[f64],
) -> Result<SweepResult> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidInput("empty tau grid".into()));
    }
    if tau_grid.iter().any(|t| !(*t >= 0.0)) || tau_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "tau grid must be nonnegative and ascending".into(),
        ));
    }
    let rej = driving_ratio(rejector, kind, task, lambda)?;
    let risks = conditional_risks(kind, task);
    let marginal = task.marginal().as_slice();
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let (kappa, mask) = mask_at(rejector, kind, task, &rej, tau)?;
        let mut rejection_rate = 0.0;
        let mut selective_risk = 0.0;
        for x in 0..task.n_inputs() {
            if mask.rejects(x) {
                rejection_rate += marginal[x];
            } else {
                selective_risk += marginal[x] * risks[x];
            }
        }
        rows.push(SweepRow {
            tau,
            kappa,
            rejection_rate,
            selective_risk,
            n_rejected: mask.count(),
            mask_hash: short_hash(mask.to_bit_string().as_bytes()),
        });
    }
    Ok(SweepResult {
        metadata: SweepMetadata {
            loss: kind,
            lambda: lambda.value(),
            rejector,
            task_fingerprint: task_fingerprint(task)?,
            normalizer: rej.normalizer(),
        },
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub tau: f64,
    pub coverage: f64,
    pub selective_risk: f64,
    /// Selective risk divided by coverage; `0` when nothing is accepted.
    pub accepted_risk: f64,
}

/// Risk–coverage curve of a sweep.
pub fn risk_coverage(result: &SweepResult) -> Vec<CoveragePoint> {
    result
        .rows
        .iter()
        .map(|row| {
            let coverage = (1.0 - row.rejection_rate).max(0.0);
            let accepted_risk = if coverage > 0.0 {
                row.selective_risk / coverage
            } else {
                0.0
            };
            CoveragePoint {
                tau: row.tau,
                coverage,
                selective_risk: row.selective_risk,
                accepted_risk,
            }
        })
        .collect()
}

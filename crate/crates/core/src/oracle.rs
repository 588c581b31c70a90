//! Brute-force solvers used to validate the closed forms.
//!
//! The ideal-distribution problems
//!
//! ```text
//! min_{Q ∈ Δ(S)}  E_Q[cost] + λ KL(Q ∥ P)
//! ```
//!
//! are solved by entropic mirror descent (exponentiated gradient) on the
//! simplex, starting from `Q = P`. With `S = X` and `cost = conditional risk`
//! this is the marginal problem; with `S = X × Y` and `cost = ℓ(y, h(x))` it
//! is the joint one. Cells with `P = 0` or infinite cost carry no mass at the
//! optimum and stay pinned at zero.
//!
//! Rejector search enumerates every binary mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{conditional_risks, pointwise_loss, LossKind};
use crate::model::{FiniteTask, ProbVector, RejectMask};
use crate::rejectors::{
    chow_rule, marginal_ratio, rejection_objective, threshold_reject, RejectionCost, Temperature,
    Threshold,
};

pub const MAX_MARGINAL_INPUTS: usize = 64;
pub const MAX_JOINT_CELLS: usize = 256;
pub const MAX_EXHAUSTIVE_INPUTS: usize = 20;
/// Temperatures at or below this are refused: `exp(-ℓ/λ)` is too ill-conditioned.
pub const MIN_ORACLE_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub max_iters: usize,
    /// Mirror step, in units of `1/λ`.
    pub step_size: f64,
    /// Stationarity target: the spread of the gradient over the support.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            step_size: 0.5,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Over `X`, or over `X × Y` flattened row-major (`x · L + y`).
    pub distribution: ProbVector,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Largest `|Σ Q - 1|` seen after renormalizing an iterate.
    pub max_simplex_deviation: f64,
}

impl OracleSolution {
    /// `Q_x(x) / P_x(x)`, marginalizing labels first for a joint solution.
    pub fn density_ratio(&self, task: &FiniteTask) -> Vec<f64> {
        let q = self.distribution.as_slice();
        let n = task.n_inputs();
        let width = q.len() / n;
        (0..n)
            .map(|x| q[x * width..(x + 1) * width].iter().sum::<f64>() / task.marginal()[x])
            .collect()
    }
}

/// `Σ Q c + λ Σ Q log(Q / P)` over the cells with `Q > 0`.
pub fn ideal_objective(q: &[f64], prior: &[f64], costs: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for ((&qi, &pi), &ci) in q.iter().zip(prior).zip(costs) {
        if qi > 0.0 {
            total += qi * ci + lambda * qi * (qi / pi).ln();
        }
    }
    total
}

fn check_lambda(lambda: Temperature) -> Result<()> {
    if lambda.value() <= MIN_ORACLE_LAMBDA {
        return Err(Error::InvalidParameter(format!(
            "oracle refuses lambda <= {MIN_ORACLE_LAMBDA}, got {}",
            lambda.value()
        )));
    }
    Ok(())
}

fn mirror_descent(
    prior: &[f64],
    costs: &[f64],
    lambda: f64,
    cfg: &OracleConfig,
) -> Result<OracleSolution> {
    cfg.validate()?;
    let mut active: Vec<bool> = prior
        .iter()
        .zip(costs)
        .map(|(&p, &c)| p > 0.0 && c.is_finite())
        .collect();
    if !active.iter().any(|&a| a) {
        return Err(Error::Domain(
            "every cell has zero mass or infinite cost".into(),
        ));
    }
    let normalize = |v: &mut [f64]| -> f64 {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|e| *e /= s);
        (v.iter().sum::<f64>() - 1.0).abs()
    };

    let mut q: Vec<f64> = prior
        .iter()
        .zip(&active)
        .map(|(&p, &a)| if a { p } else { 0.0 })
        .collect();
    let mut max_dev = normalize(&mut q);
    let mut value = ideal_objective(&q, prior, costs, lambda);
    let base_step = cfg.step_size / lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let grad: Vec<f64> = (0..q.len())
            .map(|i| {
                if active[i] {
                    costs[i] + lambda * (q[i] / prior[i]).ln()
                } else {
                    0.0
                }
            })
            .collect();
        let active_grad = || {
            grad.iter()
                .zip(&active)
                .filter(|(_, &a)| a)
                .map(|(&g, _)| g)
        };
        let hi = active_grad().fold(f64::NEG_INFINITY, f64::max);
        let lo = active_grad().fold(f64::INFINITY, f64::min);
        if hi - lo < cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // backtrack: halve the step until the objective does not increase
        // beyond rounding noise
        let noise = 1e-12 * value.abs().max(1.0);
        let mut step = base_step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut next: Vec<f64> = (0..q.len())
                .map(|i| {
                    if active[i] {
                        q[i] * (-step * (grad[i] - lo)).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let dev = normalize(&mut next);
            let next_value = ideal_objective(&next, prior, costs, lambda);
            if next_value <= value + noise {
                accepted = Some((next, next_value, dev));
                break;
            }
            step /= 2.0;
        }
        let Some((next, next_value, dev)) = accepted else {
            break;
        };
        max_dev = max_dev.max(dev);
        // a cell that underflowed to zero has no gradient left
        for (a, &v) in active.iter_mut().zip(&next) {
            *a &= v > 0.0;
        }
        q = next;
        value = next_value;
    }

    Ok(OracleSolution {
        distribution: ProbVector::new(q)?,
        objective_value: value,
        converged,
        iterations_used: iterations,
        max_simplex_deviation: max_dev,
    })
}

/// Minimizes `E_{Q_x}[conditional risk] + λ KL(Q_x ∥ P_x)` over `Δ(X)`.
pub fn solve_marginal_ideal(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
    cfg: &OracleConfig,
) -> Result<OracleSolution> {
    check_lambda(lambda)?;
    if task.n_inputs() > MAX_MARGINAL_INPUTS {
        return Err(Error::TooLarge(format!(
            "{} inputs (limit {MAX_MARGINAL_INPUTS})",
            task.n_inputs()
        )));
    }
    let costs = conditional_risks(kind, task);
    mirror_descent(task.marginal().as_slice(), &costs, lambda.value(), cfg)
}

/// Minimizes `E_Q[ℓ(Y, h(X))] + λ KL(Q ∥ P)` over `Δ(X × Y)`.
pub fn solve_joint_ideal(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
    cfg: &OracleConfig,
) -> Result<OracleSolution> {
    check_lambda(lambda)?;
    let (n, l) = (task.n_inputs(), task.n_labels());
    if n * l > MAX_JOINT_CELLS {
        return Err(Error::TooLarge(format!(
            "{} cells (limit {MAX_JOINT_CELLS})",
            n * l
        )));
    }
    let mut prior = Vec::with_capacity(n * l);
    let mut costs = Vec::with_capacity(n * l);
    for x in 0..n {
        for y in 0..l {
            let p = task.joint(x, y);
            prior.push(p);
            costs.push(if p > 0.0 {
                pointwise_loss(kind, task, x, y)
            } else {
                0.0
            });
        }
    }
    mirror_descent(&prior, &costs, lambda.value(), cfg)
}

/// Closed-form joint ideal distribution `Q*(x, y) = P(x, y) exp(-ℓ/λ) / Z_j`,
/// flattened like [`solve_joint_ideal`]'s output. Evaluated directly, without
/// going through [`crate::rejectors::joint_ratio`].
pub fn joint_ideal_closed_form(kind: LossKind, task: &FiniteTask, lambda: Temperature) -> Vec<f64> {
    let (n, l) = (task.n_inputs(), task.n_labels());
    let mut q = Vec::with_capacity(n * l);
    for x in 0..n {
        for y in 0..l {
            let p = task.joint(x, y);
            q.push(if p > 0.0 {
                p * (-pointwise_loss(kind, task, x, y) / lambda.value()).exp()
            } else {
                0.0
            });
        }
    }
    let z: f64 = q.iter().sum();
    q.into_iter().map(|v| v / z).collect()
}

/// Minimizes the rejection objective over all `2^|X|` masks.
///
/// Returns the first minimizer in mask-code order and its value.
pub fn exhaustive_rejector_search(
    kind: LossKind,
    task: &FiniteTask,
    c: RejectionCost,
) -> Result<(RejectMask, f64)> {
    let n = task.n_inputs();
    if n > MAX_EXHAUSTIVE_INPUTS {
        return Err(Error::TooLarge(format!(
            "{n} inputs (exhaustive limit {MAX_EXHAUSTIVE_INPUTS})"
        )));
    }
    let mut best = (RejectMask::none(n), f64::INFINITY);
    for code in 0..1u64 << n {
        let mask = RejectMask::from_bits(code, n);
        let value = rejection_objective(kind, task, &mask, c)?;
        if value < best.1 || (code == 0 && value.is_infinite()) {
            best = (mask, value);
        }
    }
    Ok(best)
}

/// Looks for a ratio threshold `τ` whose marginal-ratio rejector coincides
/// with Chow's rule at cost `c`, scanning `0`, every distinct score, and one
/// above the largest score.
pub fn chow_equivalence_scan(
    kind: LossKind,
    task: &FiniteTask,
    lambda: Temperature,
    c: RejectionCost,
) -> Result<Option<f64>> {
    let target = chow_rule(kind, task, c);
    let rej = marginal_ratio(kind, task, lambda)?;
    let mut candidates: Vec<f64> = rej.scores().to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let top = candidates.last().copied().unwrap_or(0.0) + 1.0;
    candidates.insert(0, 0.0);
    candidates.push(top);
    for tau in candidates {
        if threshold_reject(&rej, Threshold::ratio(tau)?)? == target {
            return Ok(Some(tau));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rejectors::joint_ratio;

    fn sample_task() -> FiniteTask {
        FiniteTask::from_parts(
            vec![0.2, 0.3, 0.5],
            vec![vec![0.7, 0.3], vec![0.1, 0.9], vec![0.45, 0.55]],
            vec![vec![1.0, 0.2], vec![0.3, 0.0], vec![-1.0, 2.0]],
        )
        .unwrap()
    }

    fn lam(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn marginal_oracle_matches_closed_form() {
        let task = sample_task();
        for kind in LossKind::ALL {
            let sol =
                solve_marginal_ideal(kind, &task, lam(2.0), &OracleConfig::default()).unwrap();
            assert!(sol.converged);
            let closed = marginal_ratio(kind, &task, lam(2.0)).unwrap();
            for (a, b) in sol.density_ratio(&task).iter().zip(closed.scores()) {
                assert!((a - b).abs() < 1e-6);
            }
            // plug the closed-form Q_x = P_x α into the objective
            let q: Vec<f64> = (0..3)
                .map(|x| task.marginal()[x] * closed.score(x))
                .collect();
            let plug_in = ideal_objective(
                &q,
                task.marginal().as_slice(),
                &conditional_risks(kind, &task),
                2.0,
            );
            assert!((sol.objective_value - plug_in).abs() < 1e-8);
            assert!(sol.max_simplex_deviation < 1e-12);
        }
    }

    #[test]
    fn large_lambda_keeps_prior() {
        let task = sample_task();
        let sol =
            solve_marginal_ideal(LossKind::Log, &task, lam(1e6), &OracleConfig::default()).unwrap();
        for (q, p) in sol
            .distribution
            .as_slice()
            .iter()
            .zip(task.marginal().as_slice())
        {
            assert!((q - p).abs() < 1e-4);
        }
        let sol =
            solve_joint_ideal(LossKind::Log, &task, lam(1e6), &OracleConfig::default()).unwrap();
        for x in 0..3 {
            for y in 0..2 {
                assert!((sol.distribution[x * 2 + y] - task.joint(x, y)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn constant_risk_leaves_prior_unchanged() {
        let task = FiniteTask::from_parts(
            vec![0.3, 0.7],
            vec![vec![0.5, 0.5], vec![0.2, 0.8]],
            vec![vec![0.0, 0.0]; 2],
        )
        .unwrap();
        let sol =
            solve_marginal_ideal(LossKind::Log, &task, lam(0.5), &OracleConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations_used, 0);
        assert_eq!(sol.distribution.as_slice(), task.marginal().as_slice());
    }

    #[test]
    fn joint_oracle_matches_closed_forms() {
        let task = sample_task();
        for kind in LossKind::ALL {
            let sol = solve_joint_ideal(kind, &task, lam(1.5), &OracleConfig::default()).unwrap();
            assert!(sol.converged);
            for (a, b) in sol
                .distribution
                .as_slice()
                .iter()
                .zip(joint_ideal_closed_form(kind, &task, lam(1.5)))
            {
                assert!((a - b).abs() < 1e-6);
            }
            let closed = joint_ratio(kind, &task, lam(1.5)).unwrap();
            for (a, b) in sol.density_ratio(&task).iter().zip(closed.scores()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_mass_cells_stay_empty() {
        let task = FiniteTask::from_parts(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![0.3, 0.7]],
            vec![vec![0.0, 1.0]; 2],
        )
        .unwrap();
        let sol = solve_joint_ideal(
            LossKind::ModifiedLog,
            &task,
            lam(2.0),
            &OracleConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.distribution[1], 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn refuses_bad_inputs() {
        let task = sample_task();
        assert!(
            solve_marginal_ideal(LossKind::Log, &task, lam(1e-7), &OracleConfig::default())
                .is_err()
        );
        let cfg = OracleConfig {
            tolerance: 0.0,
            ..OracleConfig::default()
        };
        assert!(solve_marginal_ideal(LossKind::Log, &task, lam(1.0), &cfg).is_err());
        let big = FiniteTask::from_parts(
            vec![1.0 / 21.0; 21],
            vec![vec![0.5, 0.5]; 21],
            vec![vec![0.0, 0.0]; 21],
        )
        .unwrap();
        assert!(matches!(
            exhaustive_rejector_search(LossKind::Log, &big, RejectionCost::new(0.1).unwrap()),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let cfg = OracleConfig {
            max_iters: 1,
            step_size: 0.01,
            ..OracleConfig::default()
        };
        let sol = solve_marginal_ideal(LossKind::ZeroOne, &sample_task(), lam(1.0), &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations_used, 1);
    }

    #[test]
    fn exhaustive_extremes() {
        let task = sample_task();
        let (mask, _) =
            exhaustive_rejector_search(LossKind::Log, &task, RejectionCost::new(100.0).unwrap())
                .unwrap();
        assert_eq!(mask, RejectMask::none(3));
        let (mask, value) =
            exhaustive_rejector_search(LossKind::Log, &task, RejectionCost::new(0.0).unwrap())
                .unwrap();
        assert_eq!(mask, RejectMask::all(3));
        assert_eq!(value, 0.0);
    }

    #[test]
    fn chow_matches_exhaustive_minimum() {
        let task = sample_task();
        for kind in LossKind::ALL {
            for c in [0.0, 0.1, 0.3, 0.5, 1.0] {
                let c = RejectionCost::new(c).unwrap();
                let (_, best) = exhaustive_rejector_search(kind, &task, c).unwrap();
                let chow = rejection_objective(kind, &task, &chow_rule(kind, &task, c), c).unwrap();
                assert!((chow - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scan_finds_threshold_at_extremes() {
        let task = sample_task();
        let tau = chow_equivalence_scan(
            LossKind::ZeroOne,
            &task,
            lam(1.0),
            RejectionCost::new(0.0).unwrap(),
        )
        .unwrap();
        assert!(tau.is_some());
        let tau = chow_equivalence_scan(
            LossKind::ZeroOne,
            &task,
            lam(1.0),
            RejectionCost::new(5.0).unwrap(),
        )
        .unwrap();
        assert_eq!(tau, Some(0.0));
    }
}

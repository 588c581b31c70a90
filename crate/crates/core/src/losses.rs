//! Loss functions and conditional risk.
//!
//! Losses are evaluated at the model posterior `π(x)`; the conditional risk
//! averages them under the Bayes posterior `π*(x)`. All logarithms are natural.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FiniteTask, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `1` when the model's argmax differs from the label.
    ZeroOne,
    /// Cross-entropy `-log π_y(x)`.
    Log,
    /// Log-loss relative to the Bayes posterior, `-log(π_y(x) / π*_y(x))`.
    /// Can be negative.
    ModifiedLog,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::ZeroOne, LossKind::Log, LossKind::ModifiedLog];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::ZeroOne => "zero-one",
            LossKind::Log => "log",
            LossKind::ModifiedLog => "modified-log",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-one" => Ok(LossKind::ZeroOne),
            "log" => Ok(LossKind::Log),
            "modified-log" => Ok(LossKind::ModifiedLog),
            other => Err(Error::InvalidInput(format!(
                "unknown loss '{other}' (expected zero-one, log or modified-log)"
            ))),
        }
    }
}

/// Loss of the model at input `x` on label `y`.
///
/// The modified log-loss is undefined where `π*_y(x) = 0`; querying it there
/// is a domain error.
pub fn loss(kind: LossKind, task: &FiniteTask, x: usize, y: usize) -> Result<f64> {
    if x >= task.n_inputs() || y >= task.n_labels() {
        return Err(Error::InvalidInput(format!(
            "index ({x}, {y}) out of range"
        )));
    }
    if kind == LossKind::ModifiedLog && task.bayes(x)[y] == 0.0 {
        return Err(Error::Domain(format!(
            "modified log-loss undefined where π*_{y}({x}) = 0"
        )));
    }
    Ok(pointwise_loss(kind, task, x, y))
}

/// Loss without index or support checks. The modified log-loss is written as
/// `log(π*_y / π_y)` so that its conditional risk is evaluated with exactly the
/// same floating-point operations as [`crate::divergences::kl`].
pub(crate) fn pointwise_loss(kind: LossKind, task: &FiniteTask, x: usize, y: usize) -> f64 {
    let model = task.model(x);
    match kind {
        LossKind::ZeroOne => {
            if task.prediction(x) == y {
                0.0
            } else {
                1.0
            }
        }
        LossKind::Log => -model[y].ln(),
        LossKind::ModifiedLog => (task.bayes(x)[y] / model[y]).ln(),
    }
}

/// `E_{Y ~ π*(x)}[ℓ(Y, h(x))]`; labels with zero Bayes mass contribute nothing.
pub fn conditional_risk(kind: LossKind, task: &FiniteTask, x: usize) -> f64 {
    let bayes = task.bayes(x);
    let mut risk = 0.0;
    for (y, &p) in bayes.as_slice().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        risk += p * pointwise_loss(kind, task, x, y);
    }
    risk
}

/// Conditional risk for every input.
pub fn conditional_risks(kind: LossKind, task: &FiniteTask) -> Vec<f64> {
    (0..task.n_inputs())
        .map(|x| conditional_risk(kind, task, x))
        .collect()
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn shannon_entropy(p: &ProbVector) -> f64 {
    let mut h = 0.0;
    for &v in p.as_slice() {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::kl;

    fn task(bayes: Vec<Vec<f64>>, model: Vec<Vec<f64>>) -> FiniteTask {
        let n = bayes.len();
        let logits = model
            .into_iter()
            .map(|row| row.into_iter().map(f64::ln).collect())
            .collect();
        FiniteTask::from_parts(vec![1.0 / n as f64; n], bayes, logits).unwrap()
    }

    #[test]
    fn parse_flag_strings() {
        for kind in LossKind::ALL {
            assert_eq!(kind.as_str().parse::<LossKind>().unwrap(), kind);
        }
        assert!("hinge".parse::<LossKind>().is_err());
    }

    #[test]
    fn modified_log_vanishes_when_model_is_bayes() {
        let t = task(vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]);
        for y in 0..2 {
            assert_eq!(loss(LossKind::ModifiedLog, &t, 0, y).unwrap(), 0.0);
        }
        assert_eq!(conditional_risk(LossKind::ModifiedLog, &t, 0), 0.0);
    }

    #[test]
    fn modified_log_can_be_negative() {
        // π_0 = 0.5 against π*_0 = 0.25
        let t = task(vec![vec![0.25, 0.75]], vec![vec![0.5, 0.5]]);
        let v = loss(LossKind::ModifiedLog, &t, 0, 0).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn modified_log_domain_error_off_support() {
        let t = task(vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]]);
        assert!(matches!(
            loss(LossKind::ModifiedLog, &t, 0, 1),
            Err(Error::Domain(_))
        ));
        // the risk convention skips the zero-mass label
        let r = conditional_risk(LossKind::ModifiedLog, &t, 0);
        assert!((r - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_one_on_predicted_label_is_zero() {
        let t = task(vec![vec![0.7, 0.3]], vec![vec![0.6, 0.4]]);
        assert_eq!(
            loss(LossKind::ZeroOne, &t, 0, t.prediction(0)).unwrap(),
            0.0
        );
        // enumerate labels: y = 0 is predicted (loss 0), y = 1 has mass 0.3
        assert!((conditional_risk(LossKind::ZeroOne, &t, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn log_risk_of_bayes_model_is_entropy() {
        let t = task(vec![vec![0.2, 0.3, 0.5]], vec![vec![0.2, 0.3, 0.5]]);
        let r = conditional_risk(LossKind::Log, &t, 0);
        assert!((r - shannon_entropy(t.bayes(0))).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_indices() {
        let t = task(vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]);
        assert!(loss(LossKind::Log, &t, 1, 0).is_err());
        assert!(loss(LossKind::Log, &t, 0, 2).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(
            shannon_entropy(&ProbVector::new(vec![1.0, 0.0]).unwrap()),
            0.0
        );
        let h = shannon_entropy(&ProbVector::new(vec![0.5, 0.5]).unwrap());
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        // direct summation: -(0.25 ln 0.25 + 0.75 ln 0.75)
        let oracle = -(0.25f64 * 0.25f64.ln() + 0.75f64 * 0.75f64.ln());
        let h = shannon_entropy(&ProbVector::new(vec![0.25, 0.75]).unwrap());
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.562_335_144_618_808_2).abs() < 1e-12);
    }

    #[test]
    fn modified_log_risk_is_kl_bitwise() {
        let t = task(
            vec![vec![0.2, 0.0, 0.8], vec![0.3, 0.3, 0.4]],
            vec![vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]],
        );
        for x in 0..2 {
            let r = conditional_risk(LossKind::ModifiedLog, &t, x);
            assert_eq!(r.to_bits(), kl(t.bayes(x), t.model(x)).unwrap().to_bits());
        }
    }
}

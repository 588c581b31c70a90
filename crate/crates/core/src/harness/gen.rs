use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FiniteTask;

/// Recipe for a random finite task.
///
/// `P_x ~ Dirichlet(marginal_concentration)`, each `π*(x) ~
/// Dirichlet(posterior_concentration)`, and the logits are
/// `log π*(x) + model_noise · g` with `g` standard normal. Dirichlet vectors
/// are normalized Gamma draws from a ChaCha8 stream seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskGenSpec {
    pub n_inputs: usize,
    pub n_labels: usize,
    pub marginal_concentration: f64,
    pub posterior_concentration: f64,
    pub model_noise: f64,
    pub seed: u64,
}

impl Default for TaskGenSpec {
    fn default() -> Self {
        Self {
            n_inputs: 8,
            n_labels: 3,
            marginal_concentration: 1.0,
            posterior_concentration: 1.0,
            model_noise: 1.0,
            seed: 0,
        }
    }
}

impl TaskGenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_inputs < 1 || self.n_labels < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 1 input and 2 labels, got {} and {}",
                self.n_inputs, self.n_labels
            )));
        }
        for (name, v) in [
            ("marginal_concentration", self.marginal_concentration),
            ("posterior_concentration", self.posterior_concentration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.model_noise >= 0.0 && self.model_noise.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "model_noise must be nonnegative, got {}",
                self.model_noise
            )));
        }
        Ok(())
    }
}

pub(super) fn dirichlet(rng: &mut ChaCha8Rng, concentration: f64, len: usize) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let draws: Vec<f64> = (0..len)
        .map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = draws.iter().sum();
    Ok(draws.into_iter().map(|g| g / total).collect())
}

pub fn generate_task(spec: &TaskGenSpec) -> Result<FiniteTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let marginal = dirichlet(&mut rng, spec.marginal_concentration, spec.n_inputs)?;
    let mut bayes = Vec::with_capacity(spec.n_inputs);
    for _ in 0..spec.n_inputs {
        bayes.push(dirichlet(
            &mut rng,
            spec.posterior_concentration,
            spec.n_labels,
        )?);
    }
    let logits = bayes
        .iter()
        .map(|row| {
            row.iter()
                .map(|&p| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    p.ln() + spec.model_noise * g
                })
                .collect()
        })
        .collect();
    FiniteTask::from_parts(marginal, bayes, logits)
}

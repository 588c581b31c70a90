//! Learning to reject on finite classification tasks.
//!
//! A [`FiniteTask`] fixes a marginal over inputs, a Bayes posterior and a
//! model. Rejectors either threshold the conditional risk directly
//! ([`chow_rule`]) or threshold a density ratio between an ideal
//! distribution and the data marginal ([`marginal_ratio`], [`joint_ratio`]).

pub mod divergences;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod rejectors;

pub use divergences::{bhattacharyya_coeff, bhattacharyya_div, kl, renyi, DivergenceProfile, Skew};
pub use error::{Error, Result};
pub use losses::{conditional_risk, conditional_risks, loss, shannon_entropy, LossKind};
pub use model::{
    combine, predict, softmax, CombinedOutput, Decision, FiniteDomain, FiniteTask, ProbVector,
    RejectMask,
};
pub use oracle::{
    chow_equivalence_scan, exhaustive_rejector_search, solve_joint_ideal, solve_marginal_ideal,
    OracleConfig, OracleSolution,
};
pub use rejectors::{
    bhatta_rejector, cascade_objective, chow_rule, joint_ratio, kl_rejector, marginal_ratio,
    rejection_objective, threshold_reject, DensityRatioRejector, RatioKind, RejectionCost,
    Temperature, Threshold,
};

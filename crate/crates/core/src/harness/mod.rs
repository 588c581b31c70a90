//! Synthetic tasks, threshold sweeps, rejector agreement and the verification suite.

mod compare;
mod gen;
mod sweep;
mod verify;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::FiniteTask;

pub use compare::{compare_rejectors, AgreementReport, AgreementRow};
pub use gen::{generate_task, TaskGenSpec};
pub use sweep::{
    default_tau_grid, rejector_mask, risk_coverage, sweep, CoveragePoint, SweepMetadata,
    SweepResult, SweepRow,
};
pub use verify::{run_verification_suite, CheckReport, KappaMap, SuiteOptions, SuiteReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectorKind {
    Chow,
    Marginal,
    Joint,
    Bhatta,
    Kl,
}

impl RejectorKind {
    pub const ALL: [RejectorKind; 5] = [
        RejectorKind::Chow,
        RejectorKind::Marginal,
        RejectorKind::Joint,
        RejectorKind::Bhatta,
        RejectorKind::Kl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectorKind::Chow => "chow",
            RejectorKind::Marginal => "marginal",
            RejectorKind::Joint => "joint",
            RejectorKind::Bhatta => "bhatta",
            RejectorKind::Kl => "kl",
        }
    }
}

impl fmt::Display for RejectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RejectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown rejector '{s}' (expected chow, marginal, joint, bhatta or kl)"
                ))
            })
    }
}

fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(digest)[..16].to_string()
}

/// First 16 hex digits of the SHA-256 of the task's JSON form.
pub fn task_fingerprint(task: &FiniteTask) -> Result<String> {
    Ok(short_hash(task.to_json()?.as_bytes()))
}

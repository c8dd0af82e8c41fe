//! Cross-engine and convergence studies with pass/fail bands.

mod crosscheck;
mod flln;
mod refine;
mod sir;

pub use crosscheck::{crosscheck, reduce_q0, reduce_sir, CrosscheckOptions};
pub use flln::{flln_study, ConvergenceEntry, ConvergenceReport, FllnOptions, ObservableErrors, SeedRecord};
pub use refine::{refinement_study, Engine, OrderEstimate, RefinementReport};
pub use sir::{sir_oracle, SirTrajectory};

use serde::Serialize;

/// One banded quantity of a study.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable band, e.g. "< 1e-6" or "in [-0.65, -0.35]".
    pub band: String,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            band: format!("< {bound:e}"),
            passed: value < bound,
        }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            band: format!("in [{lo}, {hi}]"),
            passed: (lo..=hi).contains(&value),
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            band: format!(">= {bound}"),
            passed: value >= bound,
        }
    }
}

/// Outcome of a named study; `details` carries the study-specific payload.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: serde_json::Value,
}

impl StudyReport {
    pub fn new(study: &str, checks: Vec<Check>, details: serde_json::Value) -> Self {
        Self {
            study: study.to_string(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            details,
        }
    }
}

pub(crate) fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

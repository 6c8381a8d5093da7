//! Brute-force verification on tiny tabular feudal systems, plus naive
//! reference versions of the reward computations.

use std::fmt;

use serde::Serialize;

mod enumerate;
mod reference;
mod tabular;
mod toys;

pub use enumerate::{verify_lower_levels, LowerLevelPolicies};
pub use reference::{reference_advantage, reference_rewards, ReferenceRewards, RewardQuery};
pub use tabular::{
    enumerate_returns, enumerate_returns_bounded, monte_carlo, verify_lemma1, verify_manager_alignment, FeudalPolicy, MonteCarloEstimate, Returns,
    TabularFeudalMdp,
};
pub use toys::{bundled, counterexample, lower_level_toys, Layout, LocalMdp};

/// Default bound on the number of weighted states or trajectories held at
/// once.
pub const FRONTIER_LIMIT: usize = 10_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs more than {limit} entries")]
    FrontierExceeded { limit: usize },
    #[error("invalid tabular model: {0}")]
    Invalid(String),
}

/// One checked (or merely reported) equality.
#[derive(Debug, Clone, Serialize)]
pub struct Identity {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub discrepancy: f64,
    /// `None` when the gap is only reported.
    pub tolerance: Option<f64>,
}

impl Identity {
    pub fn new(name: &str, lhs: f64, rhs: f64, tolerance: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            discrepancy: (lhs - rhs).abs(),
            tolerance,
        }
    }

    pub fn holds(&self) -> bool {
        self.tolerance.is_none_or(|tol| self.discrepancy <= tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    pub mdp: String,
    pub eta: f64,
    pub eta_m: f64,
    pub k_m: f64,
    pub identities: Vec<Identity>,
    /// Preconditions of the checked identities that the model violates.
    pub violations: Vec<String>,
}

impl AlignmentReport {
    pub fn holds(&self) -> bool {
        self.identities.iter().all(Identity::holds)
    }
}

impl fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: eta = {:.12}, eta_m = {:.12}, k_m = {}", self.mdp, self.eta, self.eta_m, self.k_m)?;
        for id in &self.identities {
            let verdict = match (id.tolerance, id.holds()) {
                (None, _) => "reported".to_string(),
                (Some(t), true) => format!("ok (tol {t:e})"),
                (Some(t), false) => format!("FAILED (tol {t:e})"),
            };
            writeln!(f, "  {}: lhs = {:.12}, rhs = {:.12}, |diff| = {:.3e}  {verdict}", id.name, id.lhs, id.rhs, id.discrepancy)?;
        }
        for v in &self.violations {
            writeln!(f, "  precondition violated: {v}")?;
        }
        Ok(())
    }
}

/// Pairwise summation with a fixed reduction order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

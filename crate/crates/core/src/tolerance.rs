//! Numeric tolerances shared by production code and tests.
//!
//! Every threshold that decides a verdict (feasible, certified, exact) lives
//! here so that tests assert against the same numbers the library uses.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Similarity/reconstruction checks on closed-form Jordan data.
    pub similarity: f64,
    /// Agreement between the closed-form and generic matrix exponential.
    pub expm_agreement: f64,
    /// Polytope decomposition reconstruction error.
    pub reconstruction: f64,
    /// Exact discretization against an ODE oracle.
    pub discretization: f64,
    /// Strict LMI inequalities are enforced as `F(x) >= margin * I`.
    pub lmi_margin: f64,
    /// A certificate passes when every checked minimum eigenvalue is at least `-certify`.
    pub certify: f64,
}

pub const DEFAULT_POLICY: NumericPolicy = NumericPolicy {
    similarity: 1e-12,
    expm_agreement: 1e-12,
    reconstruction: 1e-10,
    discretization: 1e-8,
    lmi_margin: 1e-7,
    certify: 1e-8,
};

impl Default for NumericPolicy {
    fn default() -> Self {
        DEFAULT_POLICY
    }
}

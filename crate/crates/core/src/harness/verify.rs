//! Numerical checks of the convergence conditions for one model.

use crate::error::Result;
use crate::sutse::{compose, SutseSpec};
use crate::theory::{
    check_assumptions_with, exact_error_moments_models, geometric_norm_check, limiting_filter, AssumptionReport,
    GeometricEnvelope, MomentTrace, DEFAULT_LIMIT_MAX_ITER, DEFAULT_LIMIT_TOL, DEFAULT_WINDOW_HORIZON,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub t_max: usize,
    pub envelope_n: usize,
    pub window_horizon: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            t_max: 500,
            envelope_n: 500,
            window_horizon: DEFAULT_WINDOW_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub assumptions: AssumptionReport,
    pub limiting_iterations: usize,
    pub limiting_residual: f64,
    pub moments: MomentTrace,
    /// Envelope of (T L′)ⁿ; `None` when ρ(T L′) ≥ 1.
    pub envelope: Option<GeometricEnvelope>,
}

/// Compare `spec` with its diagonal-Σε counterpart.
pub fn run_verify(spec: &SutseSpec, cfg: &VerifyConfig) -> Result<VerifyReport> {
    let truth = compose(spec)?;
    let misspec = compose(&spec.diagonalized())?;
    let assumptions = check_assumptions_with(&truth, &misspec, cfg.window_horizon)?;
    let lim = limiting_filter(&misspec, DEFAULT_LIMIT_TOL, DEFAULT_LIMIT_MAX_ITER)?;
    let moments = exact_error_moments_models(&truth, &misspec, cfg.t_max)?;
    let tl = &truth.t * &lim.l;
    let envelope = match geometric_norm_check(&tl, cfg.envelope_n) {
        Ok(env) => Some(env),
        Err(e) => {
            log::warn!("no geometric envelope: {e}");
            None
        }
    };
    Ok(VerifyReport {
        assumptions,
        limiting_iterations: lim.iterations,
        limiting_residual: lim.residual,
        moments,
        envelope,
    })
}

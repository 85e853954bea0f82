//! The uniform interface every conceptual model implements, so the sensitivity
//! solver, optimizers, and CLI stay model-agnostic.
//!
//! A model exposes `m` states — the last state is an infinite, non-depleting
//! reservoir accumulating discharge — `d` parameters with physical bounds, and
//! a pure `dynamics` function returning the rate vector together with both
//! analytic Jacobians of the rates with respect to states and parameters.

use crate::numdiff::{self, DiffConfig, DiffError};
use crate::series::ParameterSpace;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dynamics produced a non-finite result")]
    NonFiniteResult,
    #[error("finite-difference oracle failed: {0}")]
    OracleFailure(#[from] DiffError),
}

/// Per-interval drivers, held constant within one reporting step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Drivers {
    /// Precipitation rate, mm per time unit.
    pub precip: f64,
    /// Potential evapotranspiration rate, mm per time unit.
    pub pet: f64,
}

/// One evaluation of the system dynamics: rates and both analytic Jacobians.
#[derive(Debug, Clone)]
pub struct DynamicsEval {
    /// dx/dt, mm per time unit, length m.
    pub f: DVector<f64>,
    /// d f / d x^T, m x m.
    pub jf_x: DMatrix<f64>,
    /// d f / d theta^T, m x d.
    pub jf_theta: DMatrix<f64>,
    /// Total actual-evaporation rate leaving the system, for mass balance.
    pub et_actual: f64,
}

impl DynamicsEval {
    pub fn check_finite(&self) -> Result<(), ModelError> {
        let ok = self.f.iter().all(|v| v.is_finite())
            && self.jf_x.iter().all(|v| v.is_finite())
            && self.jf_theta.iter().all(|v| v.is_finite())
            && self.et_actual.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ModelError::NonFiniteResult)
        }
    }
}

/// Contract for a conceptual watershed model as a continuous-time system.
///
/// `dynamics` must be a pure, reentrant function of its arguments, total for
/// states slightly outside the admissible set (negative transients produced by
/// the stepper are clamped internally for flux evaluation). The rate of the
/// last state must be nonnegative under nonnegative drivers.
pub trait ModelDynamics: Sync {
    fn name(&self) -> &'static str;
    /// State count m; the m-th state is the cumulative-discharge reservoir.
    fn state_count(&self) -> usize;
    /// Parameter count d.
    fn param_count(&self) -> usize;
    fn space(&self) -> &ParameterSpace;
    fn initial_state(&self) -> DVector<f64>;
    fn dynamics(&self, x: &DVector<f64>, theta: &DVector<f64>, drivers: Drivers) -> DynamicsEval;

    /// Rates and ET only, skipping Jacobian assembly. Used by plain (state-only)
    /// integrations; models override this with a lean path.
    fn dynamics_rate_only(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        drivers: Drivers,
    ) -> (DVector<f64>, f64) {
        let eval = self.dynamics(x, theta, drivers);
        (eval.f, eval.et_actual)
    }
}

/// Discrepancies between the analytic Jacobians and the finite-difference
/// oracle at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyReport {
    pub max_err_jf_x: f64,
    pub max_err_jf_theta: f64,
}

/// Wraps the Richardson oracle around `jf_x` and `jf_theta` at one point.
///
/// Away from clamp boundaries both discrepancies should sit near rounding
/// level; evaluations straddling a clamp show up as a large discrepancy or an
/// oracle failure.
pub fn check_dynamics_consistency(
    model: &dyn ModelDynamics,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    drivers: Drivers,
    cfg: &DiffConfig,
) -> Result<ConsistencyReport, ModelError> {
    let eval = model.dynamics(x, theta, drivers);
    eval.check_finite()?;

    let fd_x = numdiff::fd_jacobian(
        |xp: &DVector<f64>| model.dynamics(xp, theta, drivers).f,
        x,
        cfg,
    )?;
    let fd_theta = numdiff::fd_jacobian(
        |tp: &DVector<f64>| model.dynamics(x, tp, drivers).f,
        theta,
        cfg,
    )?;

    Ok(ConsistencyReport {
        max_err_jf_x: (&eval.jf_x - fd_x).abs().max(),
        max_err_jf_theta: (&eval.jf_theta - fd_theta).abs().max(),
    })
}

//! Glue wiring a model, forcing, observations, and a loss into one objective
//! over the unconstrained parameter space.
//!
//! One augmented integration per evaluation yields the discharge, the loss and
//! its sensitivity vector, the rescaled Jacobian, and the gradient
//! `g = J_q^T delta` — everything both optimizers consume.

use crate::loss::{self, GlsWeights, HuberConfig, LossError, LossEvaluation};
use crate::model::ModelDynamics;
use crate::optimize::{Objective, ObjectiveFailure, ResidualEval, ResidualObjective};
use crate::series::{ForcingSeries, ObservedDischarge};
use crate::solver::{self, SolverConfig, SolverError};
use crate::transform::{self, TransformError, TransformedPoint};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Loss selection with its fixed configuration.
pub enum LossSpec {
    Sar,
    Gls(GlsWeights),
    Nse,
    Kge,
    Huber(HuberConfig),
    Fdc,
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sar => "sar",
            Self::Gls(_) => "gls",
            Self::Nse => "nse",
            Self::Kge => "kge",
            Self::Huber(_) => "huber",
            Self::Fdc => "fdc",
        }
    }

    /// Levenberg-Marquardt is defined for the (scaled) sum-of-squares losses
    /// only; gradient descent serves all six.
    pub fn supports_lm(&self) -> bool {
        matches!(self, Self::Gls(_) | Self::Nse)
    }

    pub fn evaluate(&self, y: &[f64], q: &[f64]) -> Result<LossEvaluation, LossError> {
        match self {
            Self::Sar => loss::loss_sar(y, q),
            Self::Gls(w) => loss::loss_gls(y, q, w),
            Self::Nse => loss::loss_nse(y, q),
            Self::Kge => loss::loss_kge(y, q),
            Self::Huber(cfg) => loss::loss_huber(y, q, cfg),
            Self::Fdc => loss::loss_fdc(y, q),
        }
    }
}

/// Everything one augmented evaluation of the pipeline produces.
pub struct PipelineEval {
    pub point: TransformedPoint,
    /// Post-spin-up discharge, length n.
    pub q: DVector<f64>,
    pub loss: LossEvaluation,
    /// Physical-space discharge Jacobian, n x d.
    pub jq_theta: DMatrix<f64>,
    /// Unconstrained-space discharge Jacobian, n x d.
    pub jq_vartheta: DMatrix<f64>,
    /// Gradient in the unconstrained space.
    pub gradient: DVector<f64>,
}

pub struct CalibrationProblem<'a> {
    pub model: &'a dyn ModelDynamics,
    pub forcing: &'a ForcingSeries,
    pub obs: &'a ObservedDischarge,
    pub loss: LossSpec,
    pub solver: SolverConfig,
}

impl<'a> CalibrationProblem<'a> {
    pub fn new(
        model: &'a dyn ModelDynamics,
        forcing: &'a ForcingSeries,
        obs: &'a ObservedDischarge,
        loss: LossSpec,
        solver: SolverConfig,
    ) -> Self {
        Self {
            model,
            forcing,
            obs,
            loss,
            solver,
        }
    }

    /// Full augmented evaluation at an unconstrained point.
    pub fn evaluate(&self, vartheta: &DVector<f64>) -> Result<PipelineEval, PipelineError> {
        let point = transform::to_physical(vartheta, self.model.space());
        let traj = solver::integrate_augmented(self.model, &point.theta, self.forcing, &self.solver)?;
        let q = solver::extract_discharge(&traj, self.forcing.spin_up);
        let jq_theta = solver::extract_jacobian(&traj, self.forcing.spin_up);
        let loss = self.loss.evaluate(&self.obs.y, q.as_slice())?;
        let jq_vartheta = transform::rescale_jacobian(&jq_theta, &point)?;
        let gradient = loss::assemble_gradient(&jq_vartheta, &loss)?;
        Ok(PipelineEval {
            point,
            q,
            loss,
            jq_theta,
            jq_vartheta,
            gradient,
        })
    }

    /// Scalar loss from a plain state integration; `solver_override` lets the
    /// finite-difference oracle run at tighter tolerances than the pipeline.
    pub fn loss_plain(
        &self,
        vartheta: &DVector<f64>,
        solver_override: Option<&SolverConfig>,
    ) -> Result<f64, PipelineError> {
        let cfg = solver_override.unwrap_or(&self.solver);
        let point = transform::to_physical(vartheta, self.model.space());
        let traj = solver::integrate_states(self.model, &point.theta, self.forcing, cfg)?;
        let q = solver::extract_discharge(&traj, self.forcing.spin_up);
        Ok(self.loss.evaluate(&self.obs.y, q.as_slice())?.value)
    }

    /// Post-spin-up discharge at a physical parameter vector.
    pub fn simulate_discharge(
        &self,
        theta: &DVector<f64>,
        cfg: &SolverConfig,
    ) -> Result<DVector<f64>, PipelineError> {
        let traj = solver::integrate_states(self.model, theta, self.forcing, cfg)?;
        Ok(solver::extract_discharge(&traj, self.forcing.spin_up))
    }
}

fn to_failure(err: PipelineError) -> ObjectiveFailure {
    ObjectiveFailure(err.to_string())
}

impl Objective for CalibrationProblem<'_> {
    fn loss_and_gradient(
        &self,
        vartheta: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>), ObjectiveFailure> {
        let eval = self.evaluate(vartheta).map_err(to_failure)?;
        Ok((eval.loss.value, eval.gradient))
    }
}

impl ResidualObjective for CalibrationProblem<'_> {
    fn evaluate(&self, vartheta: &DVector<f64>) -> Result<ResidualEval, ObjectiveFailure> {
        // Levenberg-Marquardt treats J^T J as the Gauss-Newton curvature of a
        // (scaled) sum of squares; only gls and nse have that structure.
        if !self.loss.supports_lm() {
            return Err(ObjectiveFailure(format!(
                "loss `{}` has no residual structure for Levenberg-Marquardt; use gradient descent",
                self.loss.name()
            )));
        }
        let eval = CalibrationProblem::evaluate(self, vartheta).map_err(to_failure)?;
        Ok(ResidualEval {
            loss: eval.loss.value,
            jq: eval.jq_vartheta,
            delta: eval.loss.delta,
        })
    }
}

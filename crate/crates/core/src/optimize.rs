//! Gradient descent with Armijo backtracking and Levenberg-Marquardt with
//! multiplicative damping control, both operating in the unconstrained
//! parameter space, plus deterministic multi-start orchestration.

use crate::series::ParameterSpace;
use crate::transform;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("objective returned a non-finite value at the starting point")]
    NonFiniteObjective,
    #[error("normal equations singular even after diagonal regularization")]
    SingularNormalEquations,
    #[error("objective evaluation failed: {0}")]
    Objective(String),
}

/// Failure raised by an objective evaluation (solver blow-up, loss error).
/// Optimizers treat trial-point failures as rejected steps; a failure at the
/// starting point aborts the run.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ObjectiveFailure(pub String);

/// Loss-and-gradient objective for gradient descent.
pub trait Objective {
    fn loss_and_gradient(
        &self,
        vartheta: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>), ObjectiveFailure>;
}

/// Jacobian-level objective for Levenberg-Marquardt.
#[derive(Debug, Clone)]
pub struct ResidualEval {
    pub loss: f64,
    /// Discharge Jacobian in the unconstrained space, n x d.
    pub jq: DMatrix<f64>,
    /// Loss-sensitivity vector, length n.
    pub delta: DVector<f64>,
}

pub trait ResidualObjective {
    fn evaluate(&self, vartheta: &DVector<f64>) -> Result<ResidualEval, ObjectiveFailure>;
}

#[derive(Debug, Clone, Copy)]
pub struct GdConfig {
    pub k_max: usize,
    pub eta0: f64,
    pub armijo_c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Infinity-norm gradient tolerance.
    pub tol_g: f64,
    pub tol_loss_rel: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            k_max: 500,
            eta0: 0.1,
            armijo_c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            tol_g: 1e-6,
            tol_loss_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub k_max: usize,
    /// Damping multiplier: accepted steps divide lambda by nu, rejected steps
    /// multiply by nu.
    pub nu: f64,
    /// lambda_0 = lambda0_scale * max diag(J^T J) at the start.
    pub lambda0_scale: f64,
    pub tol_g: f64,
    pub tol_loss_rel: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            k_max: 200,
            nu: 10.0,
            lambda0_scale: 1e-3,
            tol_g: 1e-6,
            tol_loss_rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    LossTolerance,
    MaxIterations,
    BacktrackingExhausted,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GradientTolerance => "gradient_tolerance",
            Self::LossTolerance => "loss_tolerance",
            Self::MaxIterations => "max_iterations",
            Self::BacktrackingExhausted => "backtracking_exhausted",
        }
    }
}

/// One recorded trial: the iterate (or the unchanged point for a rejected LM
/// trial), its loss, gradient norm, and step-control value (eta or lambda).
#[derive(Debug, Clone)]
pub struct Iterate {
    pub vartheta: DVector<f64>,
    pub theta: DVector<f64>,
    pub loss: f64,
    pub grad_norm_inf: f64,
    pub step_control: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizerTrace {
    pub iterates: Vec<Iterate>,
    pub termination: Termination,
}

impl OptimizerTrace {
    pub fn final_accepted(&self) -> &Iterate {
        self.iterates
            .iter()
            .rev()
            .find(|it| it.accepted)
            .expect("trace always contains the accepted starting point")
    }

    pub fn final_loss(&self) -> f64 {
        self.final_accepted().loss
    }

    /// Losses over accepted iterations, in order.
    pub fn accepted_losses(&self) -> Vec<f64> {
        self.iterates
            .iter()
            .filter(|it| it.accepted)
            .map(|it| it.loss)
            .collect()
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

/// Steepest descent with an Armijo line search along the gradient direction.
///
/// A step is admissible once `L(v - eta g) <= L(v) - c1 eta |g|^2`. Starting
/// from `eta0`, a failing step is shrunk geometrically; a succeeding first
/// step is doubled while the condition keeps holding, approximating the
/// best point along the search direction. Accepted-iteration losses are
/// non-increasing by construction.
pub fn gradient_descent(
    objective: &dyn Objective,
    vartheta0: &DVector<f64>,
    space: &ParameterSpace,
    cfg: &GdConfig,
) -> Result<OptimizerTrace, OptimizerError> {
    let (mut loss, mut grad) = objective
        .loss_and_gradient(vartheta0)
        .map_err(|e| OptimizerError::Objective(e.0))?;
    if !loss.is_finite() {
        return Err(OptimizerError::NonFiniteObjective);
    }
    let mut v = vartheta0.clone();
    let mut iterates = vec![Iterate {
        vartheta: v.clone(),
        theta: transform::to_physical(&v, space).theta,
        loss,
        grad_norm_inf: inf_norm(&grad),
        step_control: 0.0,
        accepted: true,
    }];

    let termination = loop {
        if inf_norm(&grad) <= cfg.tol_g {
            break Termination::GradientTolerance;
        }
        if iterates.iter().filter(|it| it.accepted).count() > cfg.k_max {
            break Termination::MaxIterations;
        }

        let g_sq = grad.norm_squared();
        let armijo = |eta: f64, cand_loss: f64| {
            cand_loss.is_finite() && cand_loss <= loss - cfg.armijo_c1 * eta * g_sq
        };
        // (eta, point, loss, gradient) of the best admissible trial.
        let mut best: Option<(f64, DVector<f64>, f64, DVector<f64>)> = None;
        let mut eta = cfg.eta0;
        let mut expanding = false;
        for trial in 0..cfg.max_backtracks {
            let cand = &v - &grad * eta;
            match objective.loss_and_gradient(&cand) {
                Ok((cand_loss, cand_grad)) if armijo(eta, cand_loss) => {
                    let improved = best.as_ref().is_none_or(|b| cand_loss < b.2);
                    if improved {
                        best = Some((eta, cand, cand_loss, cand_grad));
                    }
                    if trial == 0 {
                        expanding = true;
                    }
                    if expanding && improved {
                        eta *= 2.0;
                    } else {
                        break;
                    }
                }
                _ if expanding => break,
                _ => eta *= cfg.shrink,
            }
        }

        match best {
            Some((eta, cand, cand_loss, cand_grad)) => {
                iterates.push(Iterate {
                    vartheta: cand.clone(),
                    theta: transform::to_physical(&cand, space).theta,
                    loss: cand_loss,
                    grad_norm_inf: inf_norm(&cand_grad),
                    step_control: eta,
                    accepted: true,
                });
                let rel_change = (loss - cand_loss).abs() / loss.abs().max(f64::MIN_POSITIVE);
                v = cand;
                grad = cand_grad;
                loss = cand_loss;
                if rel_change <= cfg.tol_loss_rel {
                    break Termination::LossTolerance;
                }
            }
            None => break Termination::BacktrackingExhausted,
        }
    };

    Ok(OptimizerTrace {
        iterates,
        termination,
    })
}

/// Levenberg-Marquardt with damping `lambda Diag(J^T J)` and the
/// multiplicative nu-update: accepted steps shrink lambda, rejected steps
/// grow it and leave the iterate unchanged.
///
/// The step solves `(J^T J + lambda Diag(J^T J)) dv = -J^T delta`, which for
/// ordinary least squares (`delta = -e`) is the classical normal-equations
/// step `(J^T J) dv = J^T e` as damping vanishes.
pub fn levenberg_marquardt(
    objective: &dyn ResidualObjective,
    vartheta0: &DVector<f64>,
    space: &ParameterSpace,
    cfg: &LmConfig,
) -> Result<OptimizerTrace, OptimizerError> {
    let mut eval = objective
        .evaluate(vartheta0)
        .map_err(|e| OptimizerError::Objective(e.0))?;
    if !eval.loss.is_finite() {
        return Err(OptimizerError::NonFiniteObjective);
    }
    let d = vartheta0.len();
    let mut v = vartheta0.clone();
    let mut jtj = eval.jq.transpose() * &eval.jq;
    let mut grad = eval.jq.transpose() * &eval.delta;
    let mut lambda = cfg.lambda0_scale * jtj.diagonal().max();

    let mut iterates = vec![Iterate {
        vartheta: v.clone(),
        theta: transform::to_physical(&v, space).theta,
        loss: eval.loss,
        grad_norm_inf: inf_norm(&grad),
        step_control: lambda,
        accepted: true,
    }];

    let mut k = 0;
    let termination = loop {
        if inf_norm(&grad) <= cfg.tol_g {
            break Termination::GradientTolerance;
        }
        if k >= cfg.k_max {
            break Termination::MaxIterations;
        }
        k += 1;

        // Damped normal equations with a floor on the diagonal regularizer.
        let mut a = jtj.clone();
        for j in 0..d {
            a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
        }
        let chol = Cholesky::new(a).ok_or(OptimizerError::SingularNormalEquations)?;
        let step = chol.solve(&(-&grad));
        let cand = &v + &step;

        match objective.evaluate(&cand) {
            Ok(cand_eval) if cand_eval.loss.is_finite() && cand_eval.loss < eval.loss => {
                let prev_loss = eval.loss;
                jtj = cand_eval.jq.transpose() * &cand_eval.jq;
                grad = cand_eval.jq.transpose() * &cand_eval.delta;
                v = cand;
                eval = cand_eval;
                iterates.push(Iterate {
                    vartheta: v.clone(),
                    theta: transform::to_physical(&v, space).theta,
                    loss: eval.loss,
                    grad_norm_inf: inf_norm(&grad),
                    step_control: lambda,
                    accepted: true,
                });
                lambda /= cfg.nu;
                let rel_change =
                    (prev_loss - eval.loss).abs() / prev_loss.abs().max(f64::MIN_POSITIVE);
                if rel_change <= cfg.tol_loss_rel {
                    break Termination::LossTolerance;
                }
            }
            _ => {
                iterates.push(Iterate {
                    vartheta: v.clone(),
                    theta: transform::to_physical(&v, space).theta,
                    loss: eval.loss,
                    grad_norm_inf: inf_norm(&grad),
                    step_control: lambda,
                    accepted: false,
                });
                lambda *= cfg.nu;
            }
        }
    };

    Ok(OptimizerTrace {
        iterates,
        termination,
    })
}

/// One multi-start trial: its index, starting point, and full trace.
#[derive(Debug, Clone)]
pub struct MultiStartTrial {
    pub trial: usize,
    pub start_vartheta: DVector<f64>,
    pub trace: OptimizerTrace,
}

/// Runs `n_starts` trials from unit-cube starting points drawn with a seeded
/// generator, and ranks the results by final loss. Fully deterministic given
/// the seed.
pub fn multi_start<F>(
    space: &ParameterSpace,
    n_starts: usize,
    seed: u64,
    runner: F,
) -> Result<Vec<MultiStartTrial>, OptimizerError>
where
    F: Fn(usize, &DVector<f64>) -> Result<OptimizerTrace, OptimizerError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = space.dim();
    let starts: Vec<DVector<f64>> = (0..n_starts)
        .map(|_| {
            let theta_bar = DVector::from_iterator(d, (0..d).map(|_| rng.random::<f64>()));
            transform::unit_cube_to_unconstrained(&theta_bar)
        })
        .collect();

    let mut trials = Vec::with_capacity(n_starts);
    for (trial, start) in starts.iter().enumerate() {
        let trace = runner(trial, start)?;
        trials.push(MultiStartTrial {
            trial,
            start_vartheta: start.clone(),
            trace,
        });
    }
    trials.sort_by(|a, b| {
        a.trace
            .final_loss()
            .total_cmp(&b.trace.final_loss())
            .then(a.trial.cmp(&b.trial))
    });
    Ok(trials)
}

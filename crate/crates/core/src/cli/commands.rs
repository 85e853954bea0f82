//! The five subcommands and their file outputs.
//!
//! Every output CSV is deterministic byte-for-byte given (config, data, seed):
//! runs are single-threaded, every random draw is seeded, and numbers are
//! written with 17 significant digits. When no `--data` file is given, the
//! commands synthesize forcing and truth discharge from the `[cli_io]`
//! `synthetic.*` settings and write both into the output directory.

use crate::cli::config::{ConfigError, GlsWeightsSpec, OptimizerChoice, RunConfig};
use crate::cli::csvio::{self, DataError};
use crate::cli::synth;
use crate::loss::{self, GlsWeights};
use crate::model::ModelDynamics;
use crate::numdiff::{self, DiffConfig};
use crate::optimize::{self, MultiStartTrial};
use crate::problem::{CalibrationProblem, LossSpec};
use crate::series::{ForcingSeries, ObservedDischarge};
use crate::solver::{self, SolverConfig};
use crate::transform;
use nalgebra::DVector;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl AppError {
    /// 2 for usage/config problems, 3 for data and runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::Runtime(_) => 3,
        }
    }
}

pub fn runtime<E: std::fmt::Display>(err: E) -> AppError {
    AppError::Runtime(err.to_string())
}

/// Data resolved for one run: either a loaded CSV or synthesized files.
pub struct RunInputs {
    pub model: Box<dyn ModelDynamics>,
    pub forcing: ForcingSeries,
    pub obs: Option<ObservedDischarge>,
    pub synthesized: bool,
}

pub fn prepare_inputs(
    cfg: &RunConfig,
    data: Option<&Path>,
    out_dir: &Path,
) -> Result<RunInputs, AppError> {
    let model = cfg.build_model()?;
    match data {
        Some(path) => {
            let (forcing, obs) = csvio::load_forcing_csv(path, cfg.spin_up)?;
            Ok(RunInputs {
                model,
                forcing,
                obs,
                synthesized: false,
            })
        }
        None => {
            let data = synth::generate(&cfg.synthetic, model.as_ref(), cfg.spin_up)
                .map_err(runtime)?;
            data.write_files(out_dir, model.as_ref())?;
            Ok(RunInputs {
                model,
                forcing: data.forcing,
                obs: Some(data.obs),
                synthesized: true,
            })
        }
    }
}

/// Resolves the configured loss against the observation window length.
pub fn build_loss(cfg: &RunConfig, n: usize) -> Result<LossSpec, AppError> {
    Ok(match cfg.loss.as_str() {
        "sar" => LossSpec::Sar,
        "gls" => LossSpec::Gls(build_gls_weights(cfg, n)?),
        "nse" => LossSpec::Nse,
        "kge" => LossSpec::Kge,
        "huber" => LossSpec::Huber(cfg.huber),
        "fdc" => LossSpec::Fdc,
        other => {
            return Err(AppError::Config(ConfigError::Invalid(format!(
                "unknown loss `{other}`"
            ))))
        }
    })
}

pub fn build_gls_weights(cfg: &RunConfig, n: usize) -> Result<GlsWeights, AppError> {
    Ok(match &cfg.gls_weights {
        GlsWeightsSpec::Identity => GlsWeights::Identity,
        GlsWeightsSpec::DiagonalPath(path) => {
            let sigma = csvio::load_sigma_diagonal(path, n)?;
            GlsWeights::diagonal(sigma).map_err(runtime)?
        }
        GlsWeightsSpec::DensePath(path) => {
            let sigma = csvio::load_sigma_dense(path, n)?;
            GlsWeights::dense(sigma).map_err(runtime)?
        }
    })
}

/// Evaluation anchor in unconstrained coordinates: the configured unit-cube
/// point, or 0.4 per coordinate. The default sits away from the synthetic
/// truth midpoint so gradient checks do not compare noise at a stationary
/// point.
pub fn anchor_vartheta(cfg: &RunConfig, model: &dyn ModelDynamics) -> Result<DVector<f64>, AppError> {
    let d = model.param_count();
    let theta_bar = match &cfg.theta_bar {
        Some(tb) => {
            if tb.len() != d {
                return Err(AppError::Config(ConfigError::Invalid(format!(
                    "theta_bar has {} entries, model {} needs {d}",
                    tb.len(),
                    model.name()
                ))));
            }
            DVector::from_vec(tb.clone())
        }
        None => DVector::from_element(d, 0.4),
    };
    Ok(transform::unit_cube_to_unconstrained(&theta_bar))
}

/// `simulate`: post-spin-up discharge at the anchor point, as `t,q` rows.
pub fn cmd_simulate(cfg: &RunConfig, data: Option<&Path>, out_dir: &Path) -> Result<(), AppError> {
    let inputs = prepare_inputs(cfg, data, out_dir)?;
    let vartheta = anchor_vartheta(cfg, inputs.model.as_ref())?;
    let point = transform::to_physical(&vartheta, inputs.model.space());
    let traj = solver::integrate_states(inputs.model.as_ref(), &point.theta, &inputs.forcing, &cfg.solver)
        .map_err(runtime)?;
    let q = solver::extract_discharge(&traj, inputs.forcing.spin_up);

    let mut out = String::from("t,q\n");
    for (i, qt) in q.iter().enumerate() {
        out.push_str(&format!("{},{}\n", inputs.forcing.spin_up + i + 1, csvio::fmt(*qt)));
    }
    csvio::write_text(&out_dir.join("simulation.csv"), &out)?;
    Ok(())
}

fn jacobian_csv(names: &[String], jq: &nalgebra::DMatrix<f64>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for t in 0..jq.nrows() {
        let row: Vec<String> = (0..jq.ncols()).map(|j| csvio::fmt(jq[(t, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Step mesh tolerance for the frozen-mesh reference replays: one order
/// tighter than the default pipeline, so the discretization error of the
/// reference map sits well below the analytic side's own tolerance.
pub fn oracle_mesh_config() -> SolverConfig {
    SolverConfig {
        abstol: 1e-6,
        reltol: 1e-6,
        h_min: 1e-6,
        ..SolverConfig::default()
    }
}

/// Richardson cascade for the replay-based oracles: the replayed map is
/// smooth, so a short cascade already reaches rounding level.
pub fn oracle_diff_config(base_step: f64) -> DiffConfig {
    DiffConfig {
        n_steps: 5,
        extrapolation_terms: 3,
        base_step: Some(base_step),
        ..DiffConfig::default()
    }
}

/// Reference discharge Jacobian in unconstrained coordinates: Richardson
/// differences of a frozen-mesh replay.
pub fn fd_jacobian_vartheta(
    model: &dyn ModelDynamics,
    forcing: &ForcingSeries,
    vartheta: &DVector<f64>,
    base_step: f64,
) -> Result<nalgebra::DMatrix<f64>, AppError> {
    let mesh_cfg = oracle_mesh_config();
    let point = transform::to_physical(vartheta, model.space());
    let anchor =
        solver::integrate_states(model, &point.theta, forcing, &mesh_cfg).map_err(runtime)?;
    let mesh = anchor.mesh.clone();
    let spin_up = forcing.spin_up;
    numdiff::fd_jacobian(
        |v: &DVector<f64>| {
            let p = transform::to_physical(v, model.space());
            match solver::integrate_states_frozen(model, &p.theta, forcing, &mesh) {
                Ok(states) => solver::discharge_from_states(&states, spin_up, mesh_cfg.abstol),
                Err(_) => DVector::from_element(forcing.n(), f64::NAN),
            }
        },
        vartheta,
        &oracle_diff_config(base_step),
    )
    .map_err(runtime)
}

/// `jacobian`: the discharge Jacobian at the anchor, with an optional
/// finite-difference companion and elementwise-difference summary.
pub fn cmd_jacobian(
    cfg: &RunConfig,
    data: Option<&Path>,
    out_dir: &Path,
    verify: bool,
) -> Result<(), AppError> {
    let inputs = prepare_inputs(cfg, data, out_dir)?;
    let model = inputs.model.as_ref();
    let vartheta = anchor_vartheta(cfg, model)?;
    let point = transform::to_physical(&vartheta, model.space());
    let traj = solver::integrate_augmented(model, &point.theta, &inputs.forcing, &cfg.solver)
        .map_err(runtime)?;
    let jq_theta = solver::extract_jacobian(&traj, inputs.forcing.spin_up);
    csvio::write_text(
        &out_dir.join("jacobian.csv"),
        &jacobian_csv(&model.space().names, &jq_theta),
    )?;

    if verify {
        let jq_vartheta = transform::rescale_jacobian(&jq_theta, &point).map_err(runtime)?;
        let fd_vartheta = fd_jacobian_vartheta(model, &inputs.forcing, &vartheta, 1e-3)?;
        // Companion file in physical coordinates, like the primary output.
        let mut fd_theta = fd_vartheta.clone();
        for j in 0..fd_theta.ncols() {
            let mut col = fd_theta.column_mut(j);
            col /= point.chain[j];
        }
        csvio::write_text(
            &out_dir.join("jacobian_fd.csv"),
            &jacobian_csv(&model.space().names, &fd_theta),
        )?;

        let diff_v = (&jq_vartheta - &fd_vartheta).abs();
        let diff_t = (&jq_theta - &fd_theta).abs();
        let entries = (diff_v.nrows() * diff_v.ncols()) as f64;
        let summary = format!(
            "metric,value\nrows,{}\ncols,{}\nmean_abs_diff_vartheta,{}\nmax_abs_diff_vartheta,{}\nmean_abs_diff_theta,{}\nmax_abs_diff_theta,{}\n",
            diff_v.nrows(),
            diff_v.ncols(),
            csvio::fmt(diff_v.sum() / entries),
            csvio::fmt(diff_v.max()),
            csvio::fmt(diff_t.sum() / entries),
            csvio::fmt(diff_t.max()),
        );
        csvio::write_text(&out_dir.join("jacobian_diff.csv"), &summary)?;
    }
    Ok(())
}

/// `gradient`: analytic vs finite-difference gradient of the configured loss
/// at the anchor, one `name,analytic,fd,abs_diff` row per parameter.
pub fn cmd_gradient(cfg: &RunConfig, data: Option<&Path>, out_dir: &Path) -> Result<(), AppError> {
    let inputs = prepare_inputs(cfg, data, out_dir)?;
    let model = inputs.model.as_ref();
    let obs = inputs.obs.as_ref().ok_or_else(|| {
        AppError::Runtime("gradient requires a discharge column (or synthetic data)".into())
    })?;
    let loss = build_loss(cfg, inputs.forcing.n())?;
    let problem = CalibrationProblem::new(model, &inputs.forcing, obs, loss, cfg.solver);

    let vartheta = anchor_vartheta(cfg, model)?;
    let eval = problem.evaluate(&vartheta).map_err(runtime)?;
    let fd = fd_loss_gradient(&problem, &vartheta, 1e-3)?;

    let mut out = String::from("name,analytic,fd,abs_diff\n");
    for (j, name) in model.space().names.iter().enumerate() {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            csvio::fmt(eval.gradient[j]),
            csvio::fmt(fd[j]),
            csvio::fmt((eval.gradient[j] - fd[j]).abs())
        ));
    }
    csvio::write_text(&out_dir.join("gradient.csv"), &out)?;
    Ok(())
}

/// Reference gradients for several losses from one frozen-mesh cascade: each
/// replay yields one discharge vector, evaluated under every loss at once.
/// Row `i` of the result is the FD gradient of `losses[i]`.
pub fn fd_multi_loss_gradient(
    model: &dyn ModelDynamics,
    forcing: &ForcingSeries,
    obs: &ObservedDischarge,
    losses: &[&LossSpec],
    vartheta: &DVector<f64>,
    base_step: f64,
) -> Result<nalgebra::DMatrix<f64>, AppError> {
    let mesh_cfg = oracle_mesh_config();
    let point = transform::to_physical(vartheta, model.space());
    let anchor =
        solver::integrate_states(model, &point.theta, forcing, &mesh_cfg).map_err(runtime)?;
    let mesh = anchor.mesh.clone();
    let spin_up = forcing.spin_up;
    numdiff::fd_jacobian(
        |v: &DVector<f64>| {
            let p = transform::to_physical(v, model.space());
            let states = match solver::integrate_states_frozen(model, &p.theta, forcing, &mesh) {
                Ok(s) => s,
                Err(_) => return DVector::from_element(losses.len(), f64::NAN),
            };
            let q = solver::discharge_from_states(&states, spin_up, mesh_cfg.abstol);
            DVector::from_iterator(
                losses.len(),
                losses.iter().map(|loss| {
                    loss.evaluate(&obs.y, q.as_slice())
                        .map(|e| e.value)
                        .unwrap_or(f64::NAN)
                }),
            )
        },
        vartheta,
        &oracle_diff_config(base_step),
    )
    .map_err(runtime)
}

/// Reference gradient of one loss over unconstrained parameters.
pub fn fd_loss_gradient(
    problem: &CalibrationProblem<'_>,
    vartheta: &DVector<f64>,
    base_step: f64,
) -> Result<DVector<f64>, AppError> {
    let rows = fd_multi_loss_gradient(
        problem.model,
        problem.forcing,
        problem.obs,
        &[&problem.loss],
        vartheta,
        base_step,
    )?;
    Ok(rows.row(0).transpose())
}

/// `calibrate`: seeded multi-start optimization, per-trial trace CSV, ranked
/// summary, and goodness-of-fit of the best trial.
pub fn cmd_calibrate(cfg: &RunConfig, data: Option<&Path>, out_dir: &Path) -> Result<(), AppError> {
    let inputs = prepare_inputs(cfg, data, out_dir)?;
    let model = inputs.model.as_ref();
    let obs = inputs.obs.as_ref().ok_or_else(|| {
        AppError::Runtime("calibrate requires a discharge column (or synthetic data)".into())
    })?;
    let loss = build_loss(cfg, inputs.forcing.n())?;
    if cfg.optimizer == OptimizerChoice::Lm && !loss.supports_lm() {
        return Err(AppError::Config(ConfigError::Invalid(
            "optimizer lm requires loss gls or nse".into(),
        )));
    }
    let problem = CalibrationProblem::new(model, &inputs.forcing, obs, loss, cfg.solver);
    let space = model.space();

    let trials = match cfg.optimizer {
        OptimizerChoice::Lm => optimize::multi_start(space, cfg.n_starts, cfg.seed, |_, start| {
            optimize::levenberg_marquardt(&problem, start, space, &cfg.lm)
        }),
        OptimizerChoice::Gd => optimize::multi_start(space, cfg.n_starts, cfg.seed, |_, start| {
            optimize::gradient_descent(&problem, start, space, &cfg.gd)
        }),
    }
    .map_err(runtime)?;

    write_calibration_outputs(cfg, &problem, &trials, out_dir)
}

fn write_calibration_outputs(
    cfg: &RunConfig,
    problem: &CalibrationProblem<'_>,
    trials: &[MultiStartTrial],
    out_dir: &Path,
) -> Result<(), AppError> {
    let names = &problem.model.space().names;
    let d = names.len();
    let theta_header: Vec<String> = (1..=d).map(|j| format!("theta_{j}")).collect();

    // Full iterate history, ordered by trial then iteration.
    let mut trace = format!("trial,iter,loss,grad_norm,step_ctrl,{}\n", theta_header.join(","));
    let mut by_trial: Vec<&MultiStartTrial> = trials.iter().collect();
    by_trial.sort_by_key(|t| t.trial);
    for trial in &by_trial {
        for (iter, it) in trial.trace.iterates.iter().enumerate() {
            let thetas: Vec<String> = it.theta.iter().map(|&v| csvio::fmt(v)).collect();
            trace.push_str(&format!(
                "{},{},{},{},{},{}\n",
                trial.trial,
                iter,
                csvio::fmt(it.loss),
                csvio::fmt(it.grad_norm_inf),
                csvio::fmt(it.step_control),
                thetas.join(",")
            ));
        }
    }
    csvio::write_text(&out_dir.join("trace.csv"), &trace)?;

    let mut summary = format!("rank,trial,final_loss,termination,{}\n", theta_header.join(","));
    for (rank, trial) in trials.iter().enumerate() {
        let best = trial.trace.final_accepted();
        let thetas: Vec<String> = best.theta.iter().map(|&v| csvio::fmt(v)).collect();
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            rank + 1,
            trial.trial,
            csvio::fmt(best.loss),
            trial.trace.termination.as_str(),
            thetas.join(",")
        ));
    }
    csvio::write_text(&out_dir.join("summary.csv"), &summary)?;

    // Goodness of fit of the best trial, with NSE and KGE as rewards 1 - L.
    let best = &trials[0];
    let best_it = best.trace.final_accepted();
    let q = problem
        .simulate_discharge(&best_it.theta, &problem.solver)
        .map_err(runtime)?;
    let nse = 1.0 - loss::loss_nse(&problem.obs.y, q.as_slice()).map_err(runtime)?.value;
    let kge = 1.0 - loss::loss_kge(&problem.obs.y, q.as_slice()).map_err(runtime)?.value;

    let mut report = String::from("name,value\n");
    report.push_str(&format!("model,{}\n", problem.model.name()));
    report.push_str(&format!("loss,{}\n", problem.loss.name()));
    report.push_str(&format!(
        "optimizer,{}\n",
        match cfg.optimizer {
            OptimizerChoice::Gd => "gd",
            OptimizerChoice::Lm => "lm",
        }
    ));
    report.push_str(&format!("best_trial,{}\n", best.trial));
    report.push_str(&format!("final_loss,{}\n", csvio::fmt(best_it.loss)));
    report.push_str(&format!("nse,{}\n", csvio::fmt(nse)));
    report.push_str(&format!("kge,{}\n", csvio::fmt(kge)));
    for (name, value) in names.iter().zip(best_it.theta.iter()) {
        report.push_str(&format!("{name},{}\n", csvio::fmt(*value)));
    }
    csvio::write_text(&out_dir.join("best_fit.csv"), &report)?;
    Ok(())
}

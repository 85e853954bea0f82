//! Cross-module integration tests exercising the public API end to end.

use gradhyd::hmodel::Hmodel;
use gradhyd::hymod::Hymod;
use gradhyd::loss::GlsWeights;
use gradhyd::model::{check_dynamics_consistency, Drivers, DynamicsEval, ModelDynamics};
use gradhyd::numdiff::DiffConfig;
use gradhyd::optimize::{self, GdConfig, LmConfig, Objective, ObjectiveFailure};
use gradhyd::problem::{CalibrationProblem, LossSpec};
use gradhyd::series::{ForcingSeries, ObservedDischarge, ParameterSpace};
use gradhyd::solver::SolverConfig;
use gradhyd::transform;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pulse_forcing(n_total: usize, spin_up: usize) -> ForcingSeries {
    let precip: Vec<f64> = (0..n_total)
        .map(|t| if t % 5 == 0 { 10.0 + (t % 11) as f64 } else { 0.0 })
        .collect();
    let pet: Vec<f64> = (0..n_total)
        .map(|t| 3.0 + 1.5 * (2.0 * std::f64::consts::PI * t as f64 / 365.0).sin())
        .collect();
    ForcingSeries::new(precip, pet, spin_up).unwrap()
}

fn truth_obs(model: &dyn ModelDynamics, forcing: &ForcingSeries, theta_bar: f64) -> ObservedDischarge {
    let tb = DVector::from_element(model.param_count(), theta_bar);
    let theta = model.space().from_unit_cube(&tb);
    let traj =
        gradhyd::solver::integrate_states(model, &theta, forcing, &SolverConfig::tight()).unwrap();
    let q = gradhyd::solver::extract_discharge(&traj, forcing.spin_up);
    ObservedDischarge::new(q.iter().copied().collect()).unwrap()
}

/// A model whose parameter Jacobian is deliberately corrupted: the
/// consistency checker must flag it.
struct CorruptedJacobian {
    inner: Hymod,
}

impl ModelDynamics for CorruptedJacobian {
    fn name(&self) -> &'static str {
        "hymod_corrupted"
    }
    fn state_count(&self) -> usize {
        self.inner.state_count()
    }
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
    fn space(&self) -> &ParameterSpace {
        self.inner.space()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.inner.initial_state()
    }
    fn dynamics(&self, x: &DVector<f64>, theta: &DVector<f64>, drivers: Drivers) -> DynamicsEval {
        let mut eval = self.inner.dynamics(x, theta, drivers);
        eval.jf_theta[(1, 2)] += 0.5;
        eval
    }
}

#[test]
fn corrupted_parameter_jacobian_is_caught() {
    let good = Hymod::new();
    let bad = CorruptedJacobian { inner: Hymod::new() };
    let theta = DVector::from_vec(vec![300.0, 2.0, 0.5, 0.1, 1.0]);
    let x = DVector::from_vec(vec![80.0, 12.0, 3.0, 2.0, 1.0, 0.0]);
    let drivers = Drivers {
        precip: 12.0,
        pet: 3.0,
    };
    let cfg = DiffConfig::with_base_step(1e-3);

    let clean = check_dynamics_consistency(&good, &theta, &x, drivers, &cfg).unwrap();
    assert!(clean.max_err_jf_theta < 1e-6);

    let flagged = check_dynamics_consistency(&bad, &theta, &x, drivers, &cfg).unwrap();
    assert!(
        flagged.max_err_jf_theta > 0.4,
        "corruption must show up, got {}",
        flagged.max_err_jf_theta
    );
}

#[test]
fn hmodel_discharge_rate_is_nonnegative() {
    let model = Hmodel::new();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..300 {
        let tb = DVector::from_iterator(7, (0..7).map(|_| rng.random::<f64>()));
        let theta = model.space().from_unit_cube(&tb);
        let x = DVector::from_vec(vec![
            rng.random::<f64>() * theta[0],
            rng.random::<f64>() * theta[1],
            rng.random::<f64>() * 20.0,
            rng.random::<f64>() * 40.0,
            rng.random::<f64>() * 100.0,
        ]);
        let drivers = Drivers {
            precip: rng.random::<f64>() * 40.0,
            pet: rng.random::<f64>() * 8.0,
        };
        let eval = model.dynamics(&x, &theta, drivers);
        assert!(eval.f[4] >= 0.0, "discharge rate {}", eval.f[4]);
    }
}

// Full pipeline on hmodel: analytic gradient against the FD oracle for a
// loss that exercises the statistics path.
#[test]
fn hmodel_kge_gradient_matches_fd() {
    let model = Hmodel::new();
    let forcing = pulse_forcing(180, 40);
    let obs = truth_obs(&model, &forcing, 0.45);
    let problem = CalibrationProblem::new(
        &model,
        &forcing,
        &obs,
        LossSpec::Kge,
        SolverConfig::default(),
    );
    let vartheta = transform::unit_cube_to_unconstrained(&DVector::from_element(7, 0.6));
    let eval = problem.evaluate(&vartheta).unwrap();
    let fd = gradhyd::cli::commands::fd_multi_loss_gradient(
        &model,
        &forcing,
        &obs,
        &[&LossSpec::Kge],
        &vartheta,
        1e-3,
    )
    .unwrap()
    .row(0)
    .transpose();
    let rel = (&eval.gradient - &fd).norm() / fd.norm();
    assert!(rel < 1e-4, "relative gradient error {rel}");
}

// The loss minimizer found in the unconstrained space maps back to the same
// point as the analytic minimizer of a convex surrogate in unit-cube space.
#[test]
fn argmin_is_invariant_under_reparameterization() {
    struct CubeBowl {
        space: ParameterSpace,
        target_bar: DVector<f64>,
    }
    impl Objective for CubeBowl {
        fn loss_and_gradient(
            &self,
            vartheta: &DVector<f64>,
        ) -> Result<(f64, DVector<f64>), ObjectiveFailure> {
            let point = transform::to_physical(vartheta, &self.space);
            let diff = &point.theta_bar - &self.target_bar;
            let loss = 0.5 * diff.norm_squared();
            // d theta_bar / d vartheta = theta_bar (1 - theta_bar)
            let grad = DVector::from_iterator(
                vartheta.len(),
                diff.iter()
                    .zip(point.theta_bar.iter())
                    .map(|(&d, &tb)| d * tb * (1.0 - tb)),
            );
            Ok((loss, grad))
        }
    }

    let space = ParameterSpace::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![10.0, -5.0, 0.0],
        vec![20.0, 5.0, 1.0],
    )
    .unwrap();
    let target_bar = DVector::from_vec(vec![0.3, 0.62, 0.81]);
    let bowl = CubeBowl {
        space: space.clone(),
        target_bar: target_bar.clone(),
    };
    let cfg = GdConfig {
        k_max: 400,
        tol_g: 1e-12,
        tol_loss_rel: 0.0,
        ..GdConfig::default()
    };
    let trace = optimize::gradient_descent(
        &bowl,
        &DVector::from_vec(vec![2.0, -2.0, 0.5]),
        &space,
        &cfg,
    )
    .unwrap();
    let found = transform::to_physical(&trace.final_accepted().vartheta, &space);
    assert!(
        (&found.theta_bar - &target_bar).amax() < 1e-6,
        "minimizer in unit-cube space: {:?}",
        found.theta_bar.as_slice()
    );
    // And the physical coordinates agree with the direct affine image.
    let direct = space.from_unit_cube(&target_bar);
    assert!((&found.theta - &direct).amax() < 1e-4);
}

// Twenty gradient-descent starts on a hymod/OLS problem: every accepted-loss
// sequence is non-increasing.
#[test]
fn gd_multistart_losses_are_monotone() {
    let model = Hymod::new();
    let forcing = pulse_forcing(120, 30);
    let obs = truth_obs(&model, &forcing, 0.5);
    let problem = CalibrationProblem::new(
        &model,
        &forcing,
        &obs,
        LossSpec::Gls(GlsWeights::Identity),
        SolverConfig::default(),
    );
    let cfg = GdConfig {
        k_max: 8,
        ..GdConfig::default()
    };
    let trials = optimize::multi_start(model.space(), 20, 4242, |_, start| {
        optimize::gradient_descent(&problem, start, model.space(), &cfg)
    })
    .unwrap();
    assert_eq!(trials.len(), 20);
    for trial in &trials {
        let losses = trial.trace.accepted_losses();
        assert!(
            losses.windows(2).all(|w| w[1] <= w[0]),
            "trial {} is not monotone",
            trial.trial
        );
    }
}

// LM on an NSE objective drives the efficiency toward 1 on recoverable data.
#[test]
fn lm_with_nse_loss_calibrates() {
    let model = Hymod::new();
    let forcing = pulse_forcing(200, 50);
    let obs = truth_obs(&model, &forcing, 0.5);
    let problem = CalibrationProblem::new(
        &model,
        &forcing,
        &obs,
        LossSpec::Nse,
        SolverConfig::default(),
    );
    let start = transform::unit_cube_to_unconstrained(&DVector::from_element(5, 0.7));
    let trace =
        optimize::levenberg_marquardt(&problem, &start, model.space(), &LmConfig::default())
            .unwrap();
    let final_loss = trace.final_loss();
    assert!(
        final_loss < 1e-4,
        "1 - NSE should approach 0, got {final_loss}"
    );
}

// Dense GLS weights flow through the whole pipeline.
#[test]
fn dense_gls_pipeline_gradient_matches_fd() {
    let model = Hymod::new();
    let forcing = pulse_forcing(60, 20);
    let obs = truth_obs(&model, &forcing, 0.45);
    let n = obs.y.len();

    // AR(1)-flavored SPD covariance.
    let mut sigma = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sigma[(i, j)] = 0.5_f64.powi((i as i32 - j as i32).abs()) * 2.0;
        }
    }
    let make_loss = || LossSpec::Gls(GlsWeights::dense(sigma.clone()).unwrap());

    let problem =
        CalibrationProblem::new(&model, &forcing, &obs, make_loss(), SolverConfig::default());
    let vartheta = transform::unit_cube_to_unconstrained(&DVector::from_element(5, 0.6));
    let eval = problem.evaluate(&vartheta).unwrap();
    let loss2 = make_loss();
    let fd = gradhyd::cli::commands::fd_multi_loss_gradient(
        &model,
        &forcing,
        &obs,
        &[&loss2],
        &vartheta,
        1e-3,
    )
    .unwrap()
    .row(0)
    .transpose();
    let rel = (&eval.gradient - &fd).norm() / fd.norm();
    assert!(rel < 1e-4, "relative gradient error {rel}");
}

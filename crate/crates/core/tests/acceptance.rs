//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Criteria run on seeded synthetic data (730-step forcing unless a criterion
//! pins nothing) at the tolerances stated in each assertion. Run with
//! `cargo test --test acceptance -- --nocapture` to see the summary lines.

use gradhyd::cli::commands::{fd_jacobian_vartheta, fd_multi_loss_gradient};
use gradhyd::cli::synth::{self, SyntheticSpec};
use gradhyd::hmodel::Hmodel;
use gradhyd::hymod::Hymod;
use gradhyd::loss::{self, GlsWeights};
use gradhyd::model::{Drivers, ModelDynamics};
use gradhyd::numdiff::{self, DiffConfig};
use gradhyd::optimize::{self, GdConfig, LmConfig};
use gradhyd::problem::{CalibrationProblem, LossSpec};
use gradhyd::series::ForcingSeries;
use gradhyd::solver::{self, LinearReservoir, SolverConfig};
use gradhyd::transform;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{LazyLock, Mutex, MutexGuard};
use std::time::Instant;

/// The machine-time criteria must not contend for shared cores, so every
/// criterion serializes on this lock and wall-clock assertions stay fair.
static HEAVY: LazyLock<Mutex<()>> = LazyLock::new(|| Mutex::new(()));

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

fn synthetic_for(model: &dyn ModelDynamics, n_total: usize, spin_up: usize) -> synth::SyntheticData {
    let spec = SyntheticSpec {
        n_total,
        ..SyntheticSpec::default()
    };
    synth::generate(&spec, model, spin_up).expect("synthetic truth integrates")
}

fn random_interior_vartheta(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    let tb = DVector::from_iterator(d, (0..d).map(|_| 0.1 + 0.8 * rng.random::<f64>()));
    transform::unit_cube_to_unconstrained(&tb)
}

// 1. Analytic-vs-FD discharge Jacobian agreement for both models on 730-step
//    synthetic forcing at 5 random parameter vectors each; mean absolute
//    difference at most 1e-3 (target 1e-5), within 60 seconds.
#[test]
fn criterion_1_jacobian_agreement() {
    let _guard = heavy();
    let started = Instant::now();
    let models: [Box<dyn ModelDynamics>; 2] = [Box::new(Hymod::new()), Box::new(Hmodel::new())];
    let mut worst_mean: f64 = 0.0;
    for model in &models {
        let data = synthetic_for(model.as_ref(), 730, 365);
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        for _ in 0..5 {
            let vartheta = random_interior_vartheta(&mut rng, model.param_count());
            let point = transform::to_physical(&vartheta, model.space());
            let traj = solver::integrate_augmented(
                model.as_ref(),
                &point.theta,
                &data.forcing,
                &SolverConfig::default(),
            )
            .unwrap();
            let jq_theta = solver::extract_jacobian(&traj, data.forcing.spin_up);
            let jq = transform::rescale_jacobian(&jq_theta, &point).unwrap();
            let fd = fd_jacobian_vartheta(model.as_ref(), &data.forcing, &vartheta, 1e-3).unwrap();
            let diff = (&jq - &fd).abs();
            let mean = diff.sum() / (diff.nrows() * diff.ncols()) as f64;
            worst_mean = worst_mean.max(mean);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let passed = worst_mean <= 1e-3 && elapsed <= 60.0;
    report(
        "1 (Jacobian agreement)",
        passed,
        &format!("worst mean |J_a - J_fd| = {worst_mean:.3e} (required 1e-3, target 1e-5), {elapsed:.1} s"),
    );
}

// 2. Gradient agreement for all six losses at 5 random parameter vectors per
//    model: relative l2 at most 1e-4 for the smooth losses; componentwise
//    sign agreement plus 1e-3 absolute for SAR/FDC at kink-free points.
#[test]
fn criterion_2_gradient_agreement() {
    let _guard = heavy();
    let models: [Box<dyn ModelDynamics>; 2] = [Box::new(Hymod::new()), Box::new(Hmodel::new())];
    let mut worst_smooth: f64 = 0.0;
    let mut worst_kinked: f64 = 0.0;
    let mut signs_ok = true;
    for model in &models {
        let data = synthetic_for(model.as_ref(), 730, 365);
        let mut rng = ChaCha8Rng::seed_from_u64(2002);
        let specs: Vec<(&str, LossSpec)> = vec![
            ("sar", LossSpec::Sar),
            ("gls", LossSpec::Gls(GlsWeights::Identity)),
            ("nse", LossSpec::Nse),
            ("kge", LossSpec::Kge),
            ("huber", LossSpec::Huber(Default::default())),
            ("fdc", LossSpec::Fdc),
        ];
        let refs: Vec<&LossSpec> = specs.iter().map(|(_, l)| l).collect();
        for _ in 0..5 {
            let vartheta = random_interior_vartheta(&mut rng, model.param_count());
            let base = 1e-3;
            let fd_rows = fd_multi_loss_gradient(
                model.as_ref(),
                &data.forcing,
                &data.obs,
                &refs,
                &vartheta,
                base,
            )
            .unwrap();
            for (i, (name, _)) in specs.iter().enumerate() {
                let loss = match *name {
                    "sar" => LossSpec::Sar,
                    "gls" => LossSpec::Gls(GlsWeights::Identity),
                    "nse" => LossSpec::Nse,
                    "kge" => LossSpec::Kge,
                    "huber" => LossSpec::Huber(Default::default()),
                    _ => LossSpec::Fdc,
                };
                let problem = CalibrationProblem::new(
                    model.as_ref(),
                    &data.forcing,
                    &data.obs,
                    loss,
                    SolverConfig::default(),
                );
                let eval = problem.evaluate(&vartheta).unwrap();
                let fd = fd_rows.row(i).transpose();
                match *name {
                    "sar" | "fdc" => {
                        // SAR: skip coordinates whose stencil can flip a
                        // residual sign; FDC kink effects are 2/n^2 each and
                        // average out.
                        for j in 0..fd.len() {
                            if *name == "sar" {
                                let reach_hit = (0..eval.q.len()).any(|t| {
                                    (eval.q[t] - problem.obs.y[t]).abs()
                                        <= 3.0 * base * eval.jq_vartheta[(t, j)].abs()
                                });
                                if reach_hit {
                                    continue;
                                }
                            }
                            worst_kinked = worst_kinked.max((eval.gradient[j] - fd[j]).abs());
                            if eval.gradient[j] * fd[j] < 0.0
                                && eval.gradient[j].abs() > 1e-10
                                && fd[j].abs() > 1e-10
                            {
                                signs_ok = false;
                            }
                        }
                    }
                    _ => {
                        let rel = (&eval.gradient - &fd).norm() / fd.norm().max(1e-300);
                        worst_smooth = worst_smooth.max(rel);
                    }
                }
            }
        }
    }
    let passed = worst_smooth <= 1e-4 && worst_kinked <= 1e-3 && signs_ok;
    report(
        "2 (gradient agreement)",
        passed,
        &format!(
            "smooth rel l2 = {worst_smooth:.3e} (<= 1e-4), kinked abs = {worst_kinked:.3e} (<= 1e-3), signs agree: {signs_ok}"
        ),
    );
}

// 3. Loss-sensitivity checks independent of any ODE: every delta matches a
//    central-difference gradient of its scalar loss to 1e-8 relative over 100
//    random pairs, and the fast FDC path equals the O(n^2) brute force
//    exactly for n up to 200.
#[test]
fn criterion_3_loss_sensitivities() {
    let _guard = heavy();
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let diff = DiffConfig {
        n_steps: 6,
        extrapolation_terms: 3,
        base_step: Some(1e-3),
        ..DiffConfig::default()
    };
    let mut worst_rel: f64 = 0.0;

    for trial in 0..100 {
        let n = 6 + trial % 10;
        let y: Vec<f64> = (0..n).map(|_| 0.5 + 10.0 * rng.random::<f64>()).collect();
        let q: Vec<f64> = (0..n).map(|_| 0.5 + 10.0 * rng.random::<f64>()).collect();

        let evals = [
            loss::loss_gls(&y, &q, &GlsWeights::Identity).unwrap(),
            loss::loss_nse(&y, &q).unwrap(),
            loss::loss_kge(&y, &q).unwrap(),
            loss::loss_huber(&y, &q, &Default::default()).unwrap(),
        ];
        type ScalarLoss = Box<dyn Fn(&[f64]) -> f64>;
        let scalars: [ScalarLoss; 4] = [
            Box::new({
                let y = y.clone();
                move |qv: &[f64]| loss::loss_gls(&y, qv, &GlsWeights::Identity).unwrap().value
            }),
            Box::new({
                let y = y.clone();
                move |qv: &[f64]| loss::loss_nse(&y, qv).unwrap().value
            }),
            Box::new({
                let y = y.clone();
                move |qv: &[f64]| loss::loss_kge(&y, qv).unwrap().value
            }),
            Box::new({
                let y = y.clone();
                move |qv: &[f64]| loss::loss_huber(&y, qv, &Default::default()).unwrap().value
            }),
        ];
        for (eval, scalar) in evals.iter().zip(&scalars) {
            // Keep Huber stencils off the |e| = c threshold.
            if let Some(s_y) = eval.aux_value("s_y_scale") {
                let near_kink = y.iter().zip(&q).any(|(&yt, &qt)| {
                    ((((yt - qt) / s_y).abs()) - 1.345).abs() * s_y < 1e-2
                });
                if near_kink {
                    continue;
                }
            }
            let mut probe = q.clone();
            for t in 0..n {
                let est = numdiff::richardson_derivative(
                    |v| {
                        probe[t] = v;
                        scalar(&probe)
                    },
                    q[t],
                    &diff,
                )
                .unwrap();
                probe[t] = q[t];
                let denom = eval.delta.amax().max(1.0);
                worst_rel = worst_rel.max((est.value - eval.delta[t]).abs() / denom);
            }
        }
    }

    // FDC fast path vs brute force, exact.
    let mut fdc_exact = true;
    for n in [1usize, 3, 17, 100, 200] {
        let y: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * 8.0).round() * 0.5)
            .collect();
        let q: Vec<f64> = (0..n)
            .map(|_| (rng.random::<f64>() * 8.0).round() * 0.5)
            .collect();
        let fast = loss::loss_fdc(&y, &q).unwrap();
        let n2 = (n * n) as f64;
        for t in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += (q[t] - y[j]).signum_zero() - (q[t] - q[j]).signum_zero();
            }
            if fast.delta[t] != acc / n2 {
                fdc_exact = false;
            }
        }
    }

    let passed = worst_rel <= 1e-8 && fdc_exact;
    report(
        "3 (loss sensitivities)",
        passed,
        &format!("worst delta rel err = {worst_rel:.3e} (<= 1e-8), FDC fast == brute force: {fdc_exact}"),
    );
}

trait SignumZero {
    fn signum_zero(self) -> f64;
}
impl SignumZero for f64 {
    fn signum_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

// 4. Conservation: the algebraic identity sum(f) + ET - input = 0 at 1e-12
//    per evaluation for both models over 1000 samples, and the integrated
//    volume balance within n_total * abstol over a full 730-step run.
#[test]
fn criterion_4_conservation() {
    let _guard = heavy();
    let models: [Box<dyn ModelDynamics>; 2] = [Box::new(Hymod::new()), Box::new(Hmodel::new())];
    let mut worst_identity: f64 = 0.0;
    let mut worst_budget_ratio: f64 = 0.0;
    for model in &models {
        let mut rng = ChaCha8Rng::seed_from_u64(4004);
        let d = model.param_count();
        for _ in 0..1000 {
            let vartheta = random_interior_vartheta(&mut rng, d);
            let theta = transform::to_physical(&vartheta, model.space()).theta;
            let m = model.state_count();
            let x = DVector::from_iterator(
                m,
                (0..m).map(|i| {
                    // storages within a plausible range of each capacity
                    let scale = if i == 0 { theta[0] } else { 30.0 };
                    0.05 * scale + 0.8 * scale * rng.random::<f64>()
                }),
            );
            let drivers = Drivers {
                precip: 30.0 * rng.random::<f64>(),
                pet: 6.0 * rng.random::<f64>(),
            };
            let eval = model.dynamics(&x, &theta, drivers);
            let residual = (eval.f.sum() + eval.et_actual - drivers.precip).abs();
            worst_identity = worst_identity.max(residual / (1.0 + drivers.precip));
        }

        let data = synthetic_for(model.as_ref(), 730, 0);
        let cfg = SolverConfig::default();
        let traj =
            solver::integrate_augmented(model.as_ref(), &data.theta_star, &data.forcing, &cfg)
                .unwrap();
        let budget = 730.0 * cfg.abstol;
        worst_budget_ratio = worst_budget_ratio.max(traj.max_mass_balance_error() / budget);
    }
    let passed = worst_identity <= 1e-12 && worst_budget_ratio <= 1.0;
    report(
        "4 (conservation)",
        passed,
        &format!(
            "identity residual = {worst_identity:.3e} (<= 1e-12), integrated balance at {:.2}% of budget",
            100.0 * worst_budget_ratio
        ),
    );
}

// 5. Closed-form sensitivity check on the linear reservoir: state and ds/dk
//    within 1e-4 of the exponential solution at default tolerances and 1e-7
//    at abstol = reltol = 1e-8.
#[test]
fn criterion_5_closed_form_sensitivities() {
    let _guard = heavy();
    let model = LinearReservoir::new(10.0);
    let theta = DVector::from_vec(vec![0.3]);
    let forcing = ForcingSeries::new(vec![0.0; 5], vec![0.0; 5], 0).unwrap();
    let exact_state = 10.0 * (-1.5_f64).exp();
    let exact_sens = -5.0 * 10.0 * (-1.5_f64).exp();

    let coarse = solver::integrate_augmented(&model, &theta, &forcing, &SolverConfig::default())
        .unwrap();
    let e1 = (coarse.states[5].x[0] - exact_state).abs();
    let e2 = (coarse.states[5].s[(0, 0)] - exact_sens).abs();

    let fine =
        solver::integrate_augmented(&model, &theta, &forcing, &SolverConfig::tight()).unwrap();
    let e3 = (fine.states[5].x[0] - exact_state).abs();
    let e4 = (fine.states[5].s[(0, 0)] - exact_sens).abs();

    let passed = e1 < 1e-4 && e2 < 1e-4 && e3 < 1e-7 && e4 < 1e-7;
    report(
        "5 (closed-form sensitivities)",
        passed,
        &format!("default tol: state {e1:.2e}, sens {e2:.2e} (< 1e-4); tight: {e3:.2e}, {e4:.2e} (< 1e-7)"),
    );
}

fn recovery_trials(seed: u64) -> (synth::SyntheticData, Vec<optimize::MultiStartTrial>) {
    let model = Hymod::new();
    let data = synthetic_for(&model, 730, 365);
    let trials = {
        let problem = CalibrationProblem::new(
            &model,
            &data.forcing,
            &data.obs,
            LossSpec::Gls(GlsWeights::Identity),
            SolverConfig::default(),
        );
        let space = model.space();
        optimize::multi_start(space, 20, seed, |_, start| {
            optimize::levenberg_marquardt(&problem, start, space, &LmConfig::default())
        })
        .unwrap()
    };
    (data, trials)
}

// 6. Synthetic parameter recovery: noise-free hymod truth, LM with OLS, 20
//    seeded starts. The best trial recovers theta* within 1% per coordinate
//    in unit-cube space with final loss <= 1e-6 n and NSE >= 0.999, at least
//    15 of 20 trials land within 10x of the best loss, in under 5 minutes.
#[test]
fn criterion_6_parameter_recovery() {
    let _guard = heavy();
    let started = Instant::now();
    let (data, trials) = recovery_trials(99);
    let model = Hymod::new();
    let n = data.obs.y.len() as f64;

    let best = trials[0].trace.final_accepted();
    let best_bar = transform::to_unconstrained(&best.theta, model.space())
        .unwrap()
        .theta_bar;
    let max_coord_err = (&best_bar - &data.theta_star_bar).amax();
    let best_loss = best.loss;

    let problem = CalibrationProblem::new(
        &model,
        &data.forcing,
        &data.obs,
        LossSpec::Gls(GlsWeights::Identity),
        SolverConfig::default(),
    );
    let q = problem
        .simulate_discharge(&best.theta, &SolverConfig::default())
        .unwrap();
    let nse = 1.0 - loss::loss_nse(&data.obs.y, q.as_slice()).unwrap().value;

    let within = trials
        .iter()
        .filter(|t| t.trace.final_loss() <= 10.0 * best_loss)
        .count();
    let elapsed = started.elapsed().as_secs_f64();

    let passed = max_coord_err <= 0.01
        && best_loss <= 1e-6 * n
        && nse >= 0.999
        && within >= 15
        && elapsed <= 300.0;
    report(
        "6 (parameter recovery)",
        passed,
        &format!(
            "unit-cube error {max_coord_err:.2e} (<= 1e-2), loss {best_loss:.2e} (<= {:.2e}), NSE {nse:.6}, {within}/20 within 10x, {elapsed:.0} s",
            1e-6 * n
        ),
    );
}

// 7. Analytic Jacobian at least 10x faster than the Richardson FD Jacobian
//    for d = 5, n_total = 730 at identical solver settings.
#[test]
fn criterion_7_speedup() {
    let _guard = heavy();
    let model = Hymod::new();
    let data = synthetic_for(&model, 730, 365);
    let vartheta = transform::unit_cube_to_unconstrained(&DVector::from_element(5, 0.4));
    let point = transform::to_physical(&vartheta, model.space());
    let cfg = SolverConfig::default();

    let mut analytic = f64::INFINITY;
    for _ in 0..3 {
        let t0 = Instant::now();
        let traj = solver::integrate_augmented(&model, &point.theta, &data.forcing, &cfg).unwrap();
        let jq = solver::extract_jacobian(&traj, data.forcing.spin_up);
        std::hint::black_box(&jq);
        analytic = analytic.min(t0.elapsed().as_secs_f64());
    }

    let t0 = Instant::now();
    let fd = numdiff::fd_jacobian(
        |v: &DVector<f64>| {
            let p = transform::to_physical(v, model.space());
            let traj = solver::integrate_states(&model, &p.theta, &data.forcing, &cfg).unwrap();
            solver::extract_discharge(&traj, data.forcing.spin_up)
        },
        &vartheta,
        &DiffConfig::default(),
    )
    .unwrap();
    std::hint::black_box(&fd);
    let fd_time = t0.elapsed().as_secs_f64();

    let ratio = fd_time / analytic;
    report(
        "7 (speedup)",
        ratio >= 10.0,
        &format!("analytic {analytic:.3} s vs Richardson FD {fd_time:.2} s: {ratio:.1}x (>= 10x)"),
    );
}

// 8. Transform correctness: roundtrip to 1e-12 over the working range, chain
//    factors against FD to 1e-8, and the FD gradient taken directly in the
//    unconstrained space equal to the rescaled analytic gradient to 1e-4
//    relative.
#[test]
fn criterion_8_transforms() {
    let _guard = heavy();
    let model = Hymod::new();
    let space = model.space();

    let mut worst_rt: f64 = 0.0;
    for i in 0..17 {
        let v = -8.0 + i as f64;
        let vartheta = DVector::from_element(space.dim(), v);
        let p = transform::to_physical(&vartheta, space);
        let back = transform::to_unconstrained(&p.theta, space).unwrap();
        worst_rt = worst_rt.max((back.vartheta - vartheta).amax());
    }

    let mut worst_chain: f64 = 0.0;
    let anchor = DVector::from_vec(vec![0.3, -0.7, 1.1, 0.0, -2.0]);
    let point = transform::to_physical(&anchor, space);
    for j in 0..space.dim() {
        let est = numdiff::richardson_derivative(
            |v| {
                let mut vt = anchor.clone();
                vt[j] = v;
                transform::to_physical(&vt, space).theta[j]
            },
            anchor[j],
            &DiffConfig::default(),
        )
        .unwrap();
        worst_chain = worst_chain.max((est.value - point.chain[j]).abs());
    }

    // FD gradient in the unconstrained space against the rescaled analytic
    // gradient of the pipeline.
    let data = synthetic_for(&model, 365, 100);
    let problem = CalibrationProblem::new(
        &model,
        &data.forcing,
        &data.obs,
        LossSpec::Gls(GlsWeights::Identity),
        SolverConfig::default(),
    );
    let vartheta = transform::unit_cube_to_unconstrained(&DVector::from_element(5, 0.35));
    let eval = problem.evaluate(&vartheta).unwrap();
    let g_rescaled = transform::rescale_gradient(
        &(eval.jq_theta.transpose() * &eval.loss.delta),
        &eval.point,
    )
    .unwrap();
    let fd = fd_multi_loss_gradient(
        &model,
        &data.forcing,
        &data.obs,
        &[&LossSpec::Gls(GlsWeights::Identity)],
        &vartheta,
        1e-3,
    )
    .unwrap()
    .row(0)
    .transpose();
    let rel = (&g_rescaled - &fd).norm() / fd.norm().max(1e-300);

    let passed = worst_rt <= 1e-12 && worst_chain <= 1e-8 && rel <= 1e-4;
    report(
        "8 (transforms)",
        passed,
        &format!("roundtrip {worst_rt:.2e} (<= 1e-12), chain vs FD {worst_chain:.2e} (<= 1e-8), gradient rel {rel:.2e} (<= 1e-4)"),
    );
}

// 9. Optimizer contracts: accepted GD losses non-increasing on every run,
//    LM lambda updates multiplicative by nu exactly, and LM solving a linear
//    least-squares problem in one step to 1e-8 of the normal equations.
#[test]
fn criterion_9_optimizer_contracts() {
    let _guard = heavy();
    // GD monotonicity over multi-start runs of the synthetic problem.
    let model = Hymod::new();
    let data = synthetic_for(&model, 365, 100);
    let problem = CalibrationProblem::new(
        &model,
        &data.forcing,
        &data.obs,
        LossSpec::Gls(GlsWeights::Identity),
        SolverConfig::default(),
    );
    let gd_cfg = GdConfig {
        k_max: 20,
        ..GdConfig::default()
    };
    let gd_trials = optimize::multi_start(model.space(), 5, 909, |_, start| {
        optimize::gradient_descent(&problem, start, model.space(), &gd_cfg)
    })
    .unwrap();
    let gd_monotone = gd_trials.iter().all(|t| {
        t.trace
            .accepted_losses()
            .windows(2)
            .all(|w| w[1] <= w[0])
    });

    // LM lambda audit on the same problem.
    let lm_trials = optimize::multi_start(model.space(), 5, 909, |_, start| {
        optimize::levenberg_marquardt(&problem, start, model.space(), &LmConfig::default())
    })
    .unwrap();
    let nu = LmConfig::default().nu;
    let mut lambda_ok = true;
    let mut lm_decreasing = true;
    for trial in &lm_trials {
        for w in trial.trace.iterates[1..].windows(2) {
            let expected = if w[0].accepted {
                w[0].step_control / nu
            } else {
                w[0].step_control * nu
            };
            if (w[1].step_control - expected).abs() > 1e-12 * expected {
                lambda_ok = false;
            }
        }
        let losses = trial.trace.accepted_losses();
        if !losses.windows(2).all(|w| w[1] < w[0]) {
            lm_decreasing = false;
        }
    }

    // One-step solution of a linear least-squares problem.
    struct Linear {
        a: DMatrix<f64>,
        y: DVector<f64>,
    }
    impl optimize::ResidualObjective for Linear {
        fn evaluate(
            &self,
            v: &DVector<f64>,
        ) -> Result<optimize::ResidualEval, optimize::ObjectiveFailure> {
            let e = &self.y - &self.a * v;
            Ok(optimize::ResidualEval {
                loss: 0.5 * e.norm_squared(),
                jq: self.a.clone(),
                delta: -e,
            })
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let lin = Linear {
        a: DMatrix::from_fn(10, 3, |_, _| rng.random::<f64>() - 0.5),
        y: DVector::from_fn(10, |_, _| rng.random::<f64>()),
    };
    let space = gradhyd::series::ParameterSpace::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![-100.0; 3],
        vec![100.0; 3],
    )
    .unwrap();
    let lm_cfg = LmConfig {
        lambda0_scale: 1e-12,
        ..LmConfig::default()
    };
    let trace = optimize::levenberg_marquardt(
        &lin,
        &DVector::from_vec(vec![5.0, -5.0, 5.0]),
        &space,
        &lm_cfg,
    )
    .unwrap();
    let exact = (lin.a.transpose() * &lin.a)
        .cholesky()
        .unwrap()
        .solve(&(lin.a.transpose() * &lin.y));
    let one_step_err = (&trace.iterates[1].vartheta - &exact).norm();

    let passed = gd_monotone && lambda_ok && lm_decreasing && one_step_err < 1e-8;
    report(
        "9 (optimizer contracts)",
        passed,
        &format!(
            "GD monotone: {gd_monotone}, lambda updates exact: {lambda_ok}, LM strictly decreasing: {lm_decreasing}, one-step error {one_step_err:.2e} (< 1e-8)"
        ),
    );
}

// 10. Determinism: repeated seeded runs produce byte-identical output files.
//     Covers every file-producing command; the in-memory criteria above are
//     deterministic by construction (fixed seeds, one thread, one binary).
#[test]
fn criterion_10_determinism() {
    let _guard = heavy();
    use gradhyd::cli::{cmd_calibrate, cmd_gradient, cmd_jacobian, cmd_simulate, RunConfig};

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        n_starts: 4,
        spin_up: 100,
        ..RunConfig::default()
    };
    cfg.synthetic.n_total = 365;

    let run_all = |out: &std::path::Path| {
        std::fs::create_dir_all(out).unwrap();
        cmd_simulate(&cfg, None, out).unwrap();
        cmd_jacobian(&cfg, None, out, true).unwrap();
        cmd_gradient(&cfg, None, out).unwrap();
        cmd_calibrate(&cfg, None, out).unwrap();
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_all(&a);
    run_all(&b);

    let mut compared = 0;
    let mut identical = true;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let bytes_a = std::fs::read(a.join(&name)).unwrap();
        let bytes_b = std::fs::read(b.join(&name)).unwrap();
        compared += 1;
        if bytes_a != bytes_b {
            identical = false;
            eprintln!("mismatch in {name:?}");
        }
    }
    let passed = identical && compared >= 8;
    report(
        "10 (determinism)",
        passed,
        &format!("{compared} output files byte-identical across repeated runs: {identical}"),
    );
}

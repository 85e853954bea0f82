//! Seeded synthetic forcing and solver-converged truth discharge, standing in
//! for real catchment records in tests and default runs.

use crate::cli::csvio::{self, DataError};
use crate::model::ModelDynamics;
use crate::series::{ForcingSeries, ObservedDischarge};
use crate::solver::{self, SolverConfig};
use crate::transform;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Rainfall: Bernoulli wet days with exponential depths. PET: sinusoidal
/// annual cycle. Truth parameters are unit-cube coordinates.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_total: usize,
    pub wet_prob: f64,
    /// Mean wet-day rainfall depth, mm.
    pub wet_mean_depth: f64,
    pub pet_mean: f64,
    pub pet_amplitude: f64,
    /// Unit-cube truth; `None` means the cube midpoint.
    pub theta_star_bar: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_total: 730,
            wet_prob: 0.4,
            wet_mean_depth: 8.0,
            pet_mean: 3.0,
            pet_amplitude: 2.0,
            theta_star_bar: None,
        }
    }
}

pub struct SyntheticData {
    pub forcing: ForcingSeries,
    /// Physical truth parameters.
    pub theta_star: DVector<f64>,
    pub theta_star_bar: DVector<f64>,
    /// Truth discharge at every reporting step (1..n_total).
    pub discharge_full: Vec<f64>,
    /// Post-spin-up truth discharge, the calibration target.
    pub obs: ObservedDischarge,
}

pub fn generate_forcing(spec: &SyntheticSpec, spin_up: usize) -> ForcingSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut precip = Vec::with_capacity(spec.n_total);
    let mut pet = Vec::with_capacity(spec.n_total);
    for t in 0..spec.n_total {
        let wet = rng.random::<f64>() < spec.wet_prob;
        let depth_draw: f64 = rng.random();
        precip.push(if wet {
            // Inverse-CDF exponential depth.
            -spec.wet_mean_depth * (1.0 - depth_draw).ln()
        } else {
            0.0
        });
        pet.push(
            spec.pet_mean
                + spec.pet_amplitude * (2.0 * std::f64::consts::PI * t as f64 / 365.0).sin(),
        );
    }
    ForcingSeries::new(precip, pet, spin_up).expect("generated forcing satisfies the invariants")
}

/// Generates forcing and integrates the model at the truth parameters with
/// tight tolerances (1e-8) so the calibration target is solver-converged.
pub fn generate(
    spec: &SyntheticSpec,
    model: &dyn ModelDynamics,
    spin_up: usize,
) -> Result<SyntheticData, solver::SolverError> {
    let forcing = generate_forcing(spec, spin_up);
    let d = model.param_count();
    let theta_star_bar = DVector::from_vec(
        spec.theta_star_bar
            .clone()
            .unwrap_or_else(|| vec![0.5; d]),
    );
    assert_eq!(theta_star_bar.len(), d, "theta_star length must match the model");
    let theta_star = model.space().from_unit_cube(&theta_star_bar);

    let truth_cfg = SolverConfig::tight();
    let traj = solver::integrate_states(model, &theta_star, &forcing, &truth_cfg)?;
    let discharge_full: Vec<f64> = solver::extract_discharge(&traj, 0).iter().copied().collect();
    let obs = ObservedDischarge::new(discharge_full[spin_up..].to_vec())
        .expect("truth discharge is finite and nonnegative");

    Ok(SyntheticData {
        forcing,
        theta_star,
        theta_star_bar,
        discharge_full,
        obs,
    })
}

impl SyntheticData {
    /// Writes `forcing.csv` (with the truth discharge column) and the
    /// `truth.csv` sidecar with `name,theta_star` rows.
    pub fn write_files(
        &self,
        out_dir: &Path,
        model: &dyn ModelDynamics,
    ) -> Result<(), DataError> {
        csvio::write_forcing_csv(
            &out_dir.join("forcing.csv"),
            &self.forcing,
            Some(&self.discharge_full),
        )?;
        let mut truth = String::from("name,theta_star\n");
        for (name, value) in model.space().names.iter().zip(self.theta_star.iter()) {
            truth.push_str(&format!("{name},{}\n", csvio::fmt(*value)));
        }
        csvio::write_text(&out_dir.join("truth.csv"), &truth)
    }

    /// Truth parameters in unconstrained coordinates.
    pub fn vartheta_star(&self) -> DVector<f64> {
        transform::unit_cube_to_unconstrained(&self.theta_star_bar)
    }
}

//! The 5-state, 7-parameter hmodel: state equations, the phi smoothing
//! function, and analytic state and parameter Jacobians.
//!
//! States are interception `s_i`, unsaturated zone `s_u`, fast reservoir
//! `s_f`, slow reservoir `s_s`, and the cumulative-discharge reservoir `s_q`.
//! Every nonlinear flux runs through one smoothing function,
//!
//! ```text
//! phi(x, y) = (1 - vphi(-x y)) / (1 - vphi(-x)),   vphi(u) = exp(min(u, 300))
//! ```
//!
//! evaluated with the shape constant in the first slot and the relative
//! storage in the second, so each flux multiplier is `(1 - e^(-alpha s)) /
//! (1 - e^(-alpha))`: a saturating curve from 0 at empty storage to 1 at full
//! storage, linear in the storage as the shape tends to 0.

use crate::model::{Drivers, DynamicsEval, ModelDynamics};
use crate::series::ParameterSpace;
use nalgebra::{DMatrix, DVector};

/// Shape constant for interception evaporation.
pub const ALPHA_I: f64 = 50.0;
/// Shape constant for excess precipitation.
pub const ALPHA_P: f64 = -50.0;
/// Arguments of the inner exponential are capped here to protect against
/// overflow; its derivative is defined as zero beyond the cap.
pub const PHI_EXP_CAP: f64 = 300.0;
/// Below this |x| the ratio is evaluated by its second-order series in x.
pub const PHI_SERIES_SWITCH: f64 = 1e-8;

pub const PARAM_NAMES: [&str; 7] = ["i_max", "s_max", "q_max", "alpha_e", "alpha_f", "r_f", "r_s"];
pub const LOWER: [f64; 7] = [0.1, 10.0, 0.1, 0.0, -10.0, 0.1, 1.0];
pub const UPPER: [f64; 7] = [10.0, 1000.0, 100.0, 100.0, 10.0, 10.0, 150.0];

const SBAR_CAP: f64 = 1e-10;

/// Named view of the hmodel parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct HmodelParams {
    pub i_max: f64,
    pub s_max: f64,
    pub q_max: f64,
    pub alpha_e: f64,
    pub alpha_f: f64,
    pub r_f: f64,
    pub r_s: f64,
}

impl HmodelParams {
    pub fn from_vector(theta: &DVector<f64>) -> Self {
        Self {
            i_max: theta[0],
            s_max: theta[1],
            q_max: theta[2],
            alpha_e: theta[3],
            alpha_f: theta[4],
            r_f: theta[5],
            r_s: theta[6],
        }
    }
}

/// Value and both partials of the smoothing function.
#[derive(Debug, Clone, Copy)]
pub struct SmoothingEval {
    pub value: f64,
    pub d_dx: f64,
    pub d_dy: f64,
}

// vphi'(u) = exp(u) below the cap and 0 beyond it, by definition.
fn vphi_prime(u: f64) -> f64 {
    if u < PHI_EXP_CAP {
        u.exp()
    } else {
        0.0
    }
}

// 1 - vphi(u), evaluated without cancellation for small |u|.
fn one_minus_vphi(u: f64) -> f64 {
    -u.min(PHI_EXP_CAP).exp_m1()
}

/// phi(x, y) = (1 - vphi(-x y)) / (1 - vphi(-x)) with both partials.
///
/// The ratio is indeterminate at x = 0; for |x| below the series switch it is
/// replaced by its expansion `y (1 - x (y - 1) / 2 + x^2 (2y - 1)(y - 1) / 12)`,
/// which tends to y as x tends to 0 and meets the closed form seamlessly at
/// the switch.
pub fn phi_smooth(x: f64, y: f64) -> SmoothingEval {
    if x.abs() < PHI_SERIES_SWITCH {
        let c1 = (y - 1.0) / 2.0;
        let c2 = (2.0 * y - 1.0) * (y - 1.0) / 12.0;
        let value = y * (1.0 - x * c1 + x * x * c2);
        let d_dx = y * (-c1 + 2.0 * x * c2);
        let d_dy = 1.0 - x * (2.0 * y - 1.0) / 2.0 + x * x * (6.0 * y * y - 6.0 * y + 1.0) / 12.0;
        return SmoothingEval { value, d_dx, d_dy };
    }
    let num = one_minus_vphi(-x * y);
    let den = one_minus_vphi(-x);
    let dnum_dx = y * vphi_prime(-x * y);
    let dden_dx = vphi_prime(-x);
    let value = num / den;
    SmoothingEval {
        value,
        d_dx: (dnum_dx * den - num * dden_dx) / (den * den),
        d_dy: x * vphi_prime(-x * y) / den,
    }
}

pub struct Hmodel {
    space: ParameterSpace,
}

impl Hmodel {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let space = ParameterSpace::new(
            PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            LOWER.to_vec(),
            UPPER.to_vec(),
        )
        .expect("static bounds are ordered");
        Self { space }
    }
}

/// Same capping convention as hymod: relative storages are capped just below
/// 1 with partials frozen to zero in the capped region, while small negative
/// transients pass through unclamped to keep the dynamics smooth at empty
/// storage.
fn capped_ratio(raw_state: f64, capacity: f64) -> (f64, f64, f64) {
    let ratio = raw_state / capacity;
    let cap = 1.0 - SBAR_CAP;
    if ratio >= cap {
        (cap, 0.0, 0.0)
    } else {
        (ratio, 1.0 / capacity, -raw_state / (capacity * capacity))
    }
}

impl ModelDynamics for Hmodel {
    fn name(&self) -> &'static str {
        "hmodel"
    }

    fn state_count(&self) -> usize {
        5
    }

    fn param_count(&self) -> usize {
        7
    }

    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::zeros(5)
    }

    fn dynamics(&self, x: &DVector<f64>, theta: &DVector<f64>, drivers: Drivers) -> DynamicsEval {
        let p = drivers.precip;
        let ep = drivers.pet;
        let HmodelParams {
            i_max,
            s_max,
            q_max,
            alpha_e,
            alpha_f,
            r_f,
            r_s,
        } = HmodelParams::from_vector(theta);

        let (si_bar, dsibar_dsi, dsibar_dimax) = capped_ratio(x[0], i_max);
        let (su_bar, dsubar_dsu, dsubar_dsmax) = capped_ratio(x[1], s_max);
        let sf = x[2];
        let ss = x[3];

        let phi_i = phi_smooth(ALPHA_I, si_bar);
        let phi_p = phi_smooth(ALPHA_P, si_bar);
        let phi_e = phi_smooth(alpha_e, su_bar);
        let phi_f = phi_smooth(alpha_f, su_bar);

        let e_i = ep * phi_i.value;
        let p_e = p * phi_p.value;
        let e_u = (ep - e_i) * phi_e.value;
        let q_r = p_e * phi_f.value;
        let q_p = q_max * phi_f.value;
        let q_f = sf / r_f;
        let q_s = ss / r_s;

        let f = DVector::from_vec(vec![
            p - e_i - p_e,
            p_e - e_u - q_r - q_p,
            q_r - q_f,
            q_p - q_s,
            q_f + q_s,
        ]);

        // Partials of the primary fluxes w.r.t. states (d_dy is the partial
        // w.r.t. the relative storage in the second slot).
        let dei_dsi = ep * phi_i.d_dy * dsibar_dsi;
        let dpe_dsi = p * phi_p.d_dy * dsibar_dsi;
        let deu_dsu = (ep - e_i) * phi_e.d_dy * dsubar_dsu;
        let dqr_dsu = p_e * phi_f.d_dy * dsubar_dsu;
        let dqp_dsu = q_max * phi_f.d_dy * dsubar_dsu;
        // e_u and q_r inherit an s_i dependence through e_i and p_e.
        let deu_dsi = -dei_dsi * phi_e.value;
        let dqr_dsi = dpe_dsi * phi_f.value;

        let mut jf_x = DMatrix::zeros(5, 5);
        jf_x[(0, 0)] = -dei_dsi - dpe_dsi;
        jf_x[(1, 0)] = dpe_dsi - deu_dsi - dqr_dsi;
        jf_x[(1, 1)] = -deu_dsu - dqr_dsu - dqp_dsu;
        jf_x[(2, 0)] = dqr_dsi;
        jf_x[(2, 1)] = dqr_dsu;
        jf_x[(2, 2)] = -1.0 / r_f;
        jf_x[(3, 1)] = dqp_dsu;
        jf_x[(3, 3)] = -1.0 / r_s;
        jf_x[(4, 2)] = 1.0 / r_f;
        jf_x[(4, 3)] = 1.0 / r_s;

        let dei_dimax = ep * phi_i.d_dy * dsibar_dimax;
        let dpe_dimax = p * phi_p.d_dy * dsibar_dimax;
        let deu_dimax = -dei_dimax * phi_e.value;
        let dqr_dimax = dpe_dimax * phi_f.value;
        let deu_dsmax = (ep - e_i) * phi_e.d_dy * dsubar_dsmax;
        let dqr_dsmax = p_e * phi_f.d_dy * dsubar_dsmax;
        let dqp_dsmax = q_max * phi_f.d_dy * dsubar_dsmax;

        let mut jf_theta = DMatrix::zeros(5, 7);
        jf_theta[(0, 0)] = -dei_dimax - dpe_dimax;
        jf_theta[(1, 0)] = dpe_dimax - deu_dimax - dqr_dimax;
        jf_theta[(2, 0)] = dqr_dimax;
        jf_theta[(1, 1)] = -deu_dsmax - dqr_dsmax - dqp_dsmax;
        jf_theta[(2, 1)] = dqr_dsmax;
        jf_theta[(3, 1)] = dqp_dsmax;
        jf_theta[(1, 2)] = -phi_f.value;
        jf_theta[(3, 2)] = phi_f.value;
        jf_theta[(1, 3)] = -(ep - e_i) * phi_e.d_dx;
        jf_theta[(1, 4)] = -(p_e + q_max) * phi_f.d_dx;
        jf_theta[(2, 4)] = p_e * phi_f.d_dx;
        jf_theta[(3, 4)] = q_max * phi_f.d_dx;
        jf_theta[(2, 5)] = sf / (r_f * r_f);
        jf_theta[(4, 5)] = -sf / (r_f * r_f);
        jf_theta[(3, 6)] = ss / (r_s * r_s);
        jf_theta[(4, 6)] = -ss / (r_s * r_s);

        DynamicsEval {
            f,
            jf_x,
            jf_theta,
            et_actual: e_i + e_u,
        }
    }

    fn dynamics_rate_only(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        drivers: Drivers,
    ) -> (DVector<f64>, f64) {
        let p = drivers.precip;
        let ep = drivers.pet;
        let HmodelParams {
            i_max,
            s_max,
            q_max,
            alpha_e,
            alpha_f,
            r_f,
            r_s,
        } = HmodelParams::from_vector(theta);

        let (si_bar, _, _) = capped_ratio(x[0], i_max);
        let (su_bar, _, _) = capped_ratio(x[1], s_max);
        let sf = x[2];
        let ss = x[3];

        let e_i = ep * phi_smooth(ALPHA_I, si_bar).value;
        let p_e = p * phi_smooth(ALPHA_P, si_bar).value;
        let e_u = (ep - e_i) * phi_smooth(alpha_e, su_bar).value;
        let phif = phi_smooth(alpha_f, su_bar).value;
        let q_r = p_e * phif;
        let q_p = q_max * phif;
        let q_f = sf / r_f;
        let q_s = ss / r_s;

        let f = DVector::from_vec(vec![
            p - e_i - p_e,
            p_e - e_u - q_r - q_p,
            q_r - q_f,
            q_p - q_s,
            q_f + q_s,
        ]);
        (f, e_i + e_u)
    }
}

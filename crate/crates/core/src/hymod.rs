//! The 6-state, 5-parameter hymod model: state equations and analytic state
//! and parameter Jacobians.
//!
//! States are the unsaturated-zone storage `s_u`, the slow reservoir `s_s`,
//! three cascaded quickflow tanks `s_f1..s_f3`, and the cumulative-discharge
//! reservoir `s_q`. Effective rainfall `q_u = p (1 - (1 - su_bar)^b)` splits
//! between the quickflow cascade (fraction `a`) and the slow reservoir, and
//! actual evaporation is `e_a = e_p su_bar (1 + c) / (su_bar + c)` with
//! `c = 1e-2`.

use crate::model::{Drivers, DynamicsEval, ModelDynamics};
use crate::series::ParameterSpace;
use nalgebra::{DMatrix, DVector};

/// Smoothing constant in the actual-evaporation flux.
pub const EVAP_C: f64 = 1e-2;

/// Relative storage is capped at `1 - SU_BAR_CAP` before `(1 - su_bar)` powers
/// and logs; the exponent term is singular at full storage for b < 1.
pub const SU_BAR_CAP: f64 = 1e-10;

pub const PARAM_NAMES: [&str; 5] = ["s_u_max", "b", "a", "k_s", "k_f"];
pub const LOWER: [f64; 5] = [50.0, 0.1, 0.0, 1e-4, 0.1];
pub const UPPER: [f64; 5] = [1000.0, 10.0, 1.0, 1.0, 5.0];

/// Named view of the hymod parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct HymodParams {
    pub s_u_max: f64,
    pub b: f64,
    pub a: f64,
    pub k_s: f64,
    pub k_f: f64,
}

impl HymodParams {
    pub fn from_vector(theta: &DVector<f64>) -> Self {
        Self {
            s_u_max: theta[0],
            b: theta[1],
            a: theta[2],
            k_s: theta[3],
            k_f: theta[4],
        }
    }
}

pub struct Hymod {
    space: ParameterSpace,
}

impl Hymod {
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

/// Relative storage with the full-storage cap, and its partials w.r.t. the
/// raw state and the capacity. Both partials freeze to zero in the capped
/// region, so the analytic Jacobians stay exact on either side of the cap.
/// Negative transients (bounded by the stepper's admissibility guard) pass
/// through unclamped: the dynamics stays smooth across empty storage.
fn capped_ratio(raw_state: f64, capacity: f64) -> (f64, f64, f64) {
    let ratio = raw_state / capacity;
    let cap = 1.0 - SU_BAR_CAP;
    if ratio >= cap {
        (cap, 0.0, 0.0)
    } else {
        (ratio, 1.0 / capacity, -raw_state / (capacity * capacity))
    }
}

impl ModelDynamics for Hymod {
    fn name(&self) -> &'static str {
        "hymod"
    }

    fn state_count(&self) -> usize {
        6
    }

    fn param_count(&self) -> usize {
        5
    }

    fn space(&self) -> &ParameterSpace {
        &self.space
    }

    fn initial_state(&self) -> DVector<f64> {
        // All storages start empty; spin-up absorbs the transient.
        DVector::zeros(6)
    }

    fn dynamics(&self, x: &DVector<f64>, theta: &DVector<f64>, drivers: Drivers) -> DynamicsEval {
        let p = drivers.precip;
        let ep = drivers.pet;
        let HymodParams {
            s_u_max,
            b,
            a,
            k_s,
            k_f,
        } = HymodParams::from_vector(theta);

        let (su_bar, dsubar_dsu, dsubar_dsumax) = capped_ratio(x[0], s_u_max);
        let ss = x[1];
        let sf1 = x[2];
        let sf2 = x[3];
        let sf3 = x[4];

        let omb = 1.0 - su_bar;
        let q_u = p * (1.0 - omb.powf(b));
        let e_a = ep * su_bar * (1.0 + EVAP_C) / (su_bar + EVAP_C);

        // Flux partials w.r.t. the relative storage, then chained.
        let dqu_dsubar = p * b * omb.powf(b - 1.0);
        let dea_dsubar = ep * (1.0 + EVAP_C) * EVAP_C / ((su_bar + EVAP_C) * (su_bar + EVAP_C));
        let dqu_dsu = dqu_dsubar * dsubar_dsu;
        let dea_dsu = dea_dsubar * dsubar_dsu;
        let dqu_dsumax = dqu_dsubar * dsubar_dsumax;
        let dea_dsumax = dea_dsubar * dsubar_dsumax;
        // d q_u / d b = -p (1 - su_bar)^b ln(1 - su_bar); zero at empty storage.
        let dqu_db = -p * omb.powf(b) * omb.ln();

        let f = DVector::from_vec(vec![
            p - e_a - q_u,
            (1.0 - a) * q_u - k_s * ss,
            a * q_u - k_f * sf1,
            k_f * (sf1 - sf2),
            k_f * (sf2 - sf3),
            k_f * sf3 + k_s * ss,
        ]);

        let mut jf_x = DMatrix::zeros(6, 6);
        jf_x[(0, 0)] = -dqu_dsu - dea_dsu;
        jf_x[(1, 0)] = (1.0 - a) * dqu_dsu;
        jf_x[(1, 1)] = -k_s;
        jf_x[(2, 0)] = a * dqu_dsu;
        jf_x[(2, 2)] = -k_f;
        jf_x[(3, 2)] = k_f;
        jf_x[(3, 3)] = -k_f;
        jf_x[(4, 3)] = k_f;
        jf_x[(4, 4)] = -k_f;
        jf_x[(5, 1)] = k_s;
        jf_x[(5, 4)] = k_f;
        // Column 6 (cumulative discharge) stays zero: routed discharge does
        // not feed back into the other reservoirs.

        let mut jf_theta = DMatrix::zeros(6, 5);
        jf_theta[(0, 0)] = -dqu_dsumax - dea_dsumax;
        jf_theta[(0, 1)] = -dqu_db;
        jf_theta[(1, 0)] = (1.0 - a) * dqu_dsumax;
        jf_theta[(1, 1)] = (1.0 - a) * dqu_db;
        jf_theta[(1, 2)] = -q_u;
        jf_theta[(1, 3)] = -ss;
        jf_theta[(2, 0)] = a * dqu_dsumax;
        jf_theta[(2, 1)] = a * dqu_db;
        jf_theta[(2, 2)] = q_u;
        jf_theta[(2, 4)] = -sf1;
        jf_theta[(3, 4)] = sf1 - sf2;
        jf_theta[(4, 4)] = sf2 - sf3;
        jf_theta[(5, 3)] = ss;
        jf_theta[(5, 4)] = sf3;

        DynamicsEval {
            f,
            jf_x,
            jf_theta,
            et_actual: e_a,
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
        let HymodParams {
            s_u_max,
            b,
            a,
            k_s,
            k_f,
        } = HymodParams::from_vector(theta);

        let (su_bar, _, _) = capped_ratio(x[0], s_u_max);
        let ss = x[1];
        let sf1 = x[2];
        let sf2 = x[3];
        let sf3 = x[4];

        let q_u = p * (1.0 - (1.0 - su_bar).powf(b));
        let e_a = ep * su_bar * (1.0 + EVAP_C) / (su_bar + EVAP_C);

        let f = DVector::from_vec(vec![
            p - e_a - q_u,
            (1.0 - a) * q_u - k_s * ss,
            a * q_u - k_f * sf1,
            k_f * (sf1 - sf2),
            k_f * (sf2 - sf3),
            k_f * sf3 + k_s * ss,
        ]);
        (f, e_a)
    }
}

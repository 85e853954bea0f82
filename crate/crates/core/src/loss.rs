//! The six loss functions: scalar value plus the loss-sensitivity vector
//! `delta_t = dL/dq_t`, and gradient assembly `g = J_q^T delta`.
//!
//! The sensitivity vector is the loss-specific factor in the gradient
//! identity; the discharge Jacobian is the model-specific factor. Sample
//! statistics use n-1 normalization throughout, and `sign(0) = 0` so the
//! absolute-value losses are well-defined at ties.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: observed {observed} vs simulated {simulated}")]
    LengthMismatch { observed: usize, simulated: usize },
    #[error("covariance matrix is not symmetric positive definite")]
    NotSpd,
    #[error("degenerate observations: {reason}")]
    DegenerateObservations { reason: String },
    #[error("degenerate simulation: constant discharge, correlation undefined")]
    DegenerateSimulation,
    #[error("zero scale: MAD of observations is 0 and no fixed scale given")]
    ZeroScale,
    #[error("shape mismatch: Jacobian is {rows}x{cols}, delta has length {delta}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        delta: usize,
    },
    #[error("diagonal weights must be positive, got {value} at {index}")]
    BadWeight { index: usize, value: f64 },
}

/// Scalar loss plus its sensitivity vector and named auxiliary statistics.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub value: f64,
    /// dL/dq_t, length n.
    pub delta: DVector<f64>,
    pub aux: Vec<(&'static str, f64)>,
}

impl LossEvaluation {
    pub fn aux_value(&self, name: &str) -> Option<f64> {
        self.aux.iter().find(|(k, _)| *k == name).map(|&(_, v)| v)
    }
}

/// Measurement-error weighting for the generalized least squares loss.
pub enum GlsWeights {
    Identity,
    /// Per-step error standard deviations sigma_t.
    Diagonal(DVector<f64>),
    /// Full SPD covariance with a precomputed Cholesky factorization.
    Dense {
        chol: Cholesky<f64, Dyn>,
    },
}

impl GlsWeights {
    pub fn diagonal(sigma: DVector<f64>) -> Result<Self, LossError> {
        for (index, &value) in sigma.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(LossError::BadWeight { index, value });
            }
        }
        Ok(Self::Diagonal(sigma))
    }

    pub fn dense(sigma: DMatrix<f64>) -> Result<Self, LossError> {
        let chol = Cholesky::new(sigma).ok_or(LossError::NotSpd)?;
        Ok(Self::Dense { chol })
    }

    /// Solves Sigma w = e.
    fn whiten(&self, e: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Identity => e.clone(),
            Self::Diagonal(sigma) => {
                DVector::from_iterator(e.len(), e.iter().zip(sigma.iter()).map(|(&ei, &s)| ei / (s * s)))
            }
            Self::Dense { chol } => chol.solve(e),
        }
    }
}

fn check_lengths(y: &[f64], q: &[f64]) -> Result<(), LossError> {
    if y.len() != q.len() {
        return Err(LossError::LengthMismatch {
            observed: y.len(),
            simulated: q.len(),
        });
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum of absolute residuals: `L = sum |y - q|`, `delta = -sign(y - q)`.
pub fn loss_sar(y: &[f64], q: &[f64]) -> Result<LossEvaluation, LossError> {
    check_lengths(y, q)?;
    let mut value = 0.0;
    let mut delta = DVector::zeros(y.len());
    for t in 0..y.len() {
        let e = y[t] - q[t];
        value += e.abs();
        delta[t] = -sign(e);
    }
    Ok(LossEvaluation {
        value,
        delta,
        aux: vec![],
    })
}

/// Generalized least squares: `L = 1/2 e^T Sigma^-1 e`, `delta = -Sigma^-1 e`.
/// Identity weights reduce to ordinary least squares.
pub fn loss_gls(y: &[f64], q: &[f64], weights: &GlsWeights) -> Result<LossEvaluation, LossError> {
    check_lengths(y, q)?;
    if let GlsWeights::Diagonal(sigma) = weights {
        if sigma.len() != y.len() {
            return Err(LossError::LengthMismatch {
                observed: y.len(),
                simulated: sigma.len(),
            });
        }
    }
    let e = DVector::from_iterator(y.len(), y.iter().zip(q).map(|(&yt, &qt)| yt - qt));
    let we = weights.whiten(&e);
    let value = 0.5 * e.dot(&we);
    Ok(LossEvaluation {
        value,
        delta: -we,
        aux: vec![],
    })
}

/// Nash-Sutcliffe loss `L = SS_r / SS_t` (one minus the NSE reward),
/// `delta = (2 / SS_t)(q - y)`.
pub fn loss_nse(y: &[f64], q: &[f64]) -> Result<LossEvaluation, LossError> {
    check_lengths(y, q)?;
    let n = y.len() as f64;
    let m_y = y.iter().sum::<f64>() / n;
    let ss_t: f64 = y.iter().map(|&v| (v - m_y) * (v - m_y)).sum();
    if ss_t <= 0.0 {
        return Err(LossError::DegenerateObservations {
            reason: "constant observations give SS_t = 0".into(),
        });
    }
    let ss_r: f64 = y.iter().zip(q).map(|(&yt, &qt)| (yt - qt) * (yt - qt)).sum();
    let delta = DVector::from_iterator(
        y.len(),
        y.iter().zip(q).map(|(&yt, &qt)| 2.0 / ss_t * (qt - yt)),
    );
    Ok(LossEvaluation {
        value: ss_r / ss_t,
        delta,
        aux: vec![("m_y", m_y), ("ss_t", ss_t), ("ss_r", ss_r)],
    })
}

/// Kling-Gupta loss `L = sqrt((r-1)^2 + (nu-1)^2 + (b-1)^2)` built from the
/// sample correlation, the variability ratio `s_q/s_y`, and the bias ratio
/// `m_q/m_y`. At a perfect fit the 1/L factor is singular and delta is the
/// zero vector by convention.
pub fn loss_kge(y: &[f64], q: &[f64]) -> Result<LossEvaluation, LossError> {
    check_lengths(y, q)?;
    let n = y.len();
    if n < 2 {
        return Err(LossError::DegenerateObservations {
            reason: "KGE needs at least two samples".into(),
        });
    }
    let nf = n as f64;
    let m_y = y.iter().sum::<f64>() / nf;
    let m_q = q.iter().sum::<f64>() / nf;
    let var_y = y.iter().map(|&v| (v - m_y) * (v - m_y)).sum::<f64>() / (nf - 1.0);
    let var_q = q.iter().map(|&v| (v - m_q) * (v - m_q)).sum::<f64>() / (nf - 1.0);
    let s_y = var_y.sqrt();
    let s_q = var_q.sqrt();
    if s_y <= 0.0 || m_y == 0.0 {
        return Err(LossError::DegenerateObservations {
            reason: "observations need nonzero mean and spread".into(),
        });
    }
    if s_q <= 0.0 {
        return Err(LossError::DegenerateSimulation);
    }
    let cov = y
        .iter()
        .zip(q)
        .map(|(&yt, &qt)| (qt - m_q) * (yt - m_y))
        .sum::<f64>()
        / (nf - 1.0);
    let r = cov / (s_q * s_y);
    let nu = s_q / s_y;
    let b = m_q / m_y;
    let value = ((r - 1.0).powi(2) + (nu - 1.0).powi(2) + (b - 1.0).powi(2)).sqrt();

    let aux = vec![
        ("r_qy", r),
        ("nu_qy", nu),
        ("b_qy", b),
        ("m_y", m_y),
        ("m_q", m_q),
        ("s_y", s_y),
        ("s_q", s_q),
    ];

    let mut delta = DVector::zeros(n);
    if value >= 1e-12 {
        let db = 1.0 / (nf * m_y);
        for t in 0..n {
            let dr = (y[t] - m_y) / ((nf - 1.0) * s_q * s_y)
                - r * (q[t] - m_q) / ((nf - 1.0) * s_q * s_q);
            let dnu = (q[t] - m_q) / ((nf - 1.0) * s_q * s_y);
            delta[t] = ((r - 1.0) * dr + (nu - 1.0) * dnu + (b - 1.0) * db) / value;
        }
    }
    Ok(LossEvaluation { value, delta, aux })
}

/// Robust scale and threshold configuration for the Huber loss.
#[derive(Debug, Clone, Copy)]
pub struct HuberConfig {
    /// Quadratic/linear transition on the standardized residual scale.
    pub c: f64,
    pub scale: ScaleMode,
}

#[derive(Debug, Clone, Copy)]
pub enum ScaleMode {
    /// `S_y = xi * MAD(y)` from the observations, held fixed over a
    /// calibration because it never touches q.
    Mad,
    /// Known instrument noise level; used directly (xi = 1).
    Fixed(f64),
}

/// Normal-consistency constant relating the MAD to a Gaussian sigma.
pub const MAD_XI: f64 = 1.4826;

impl Default for HuberConfig {
    fn default() -> Self {
        Self {
            c: 1.345,
            scale: ScaleMode::Mad,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the sample median.
pub fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let devs: Vec<f64> = values.iter().map(|&v| (v - med).abs()).collect();
    median(&devs)
}

/// Huber loss on MAD-standardized residuals, with the bounded influence
/// function `psi_c(e) = e` inside `|e| <= c` and `c sign(e)` outside;
/// `delta = -psi_c(e / S_y) / S_y`.
pub fn loss_huber(y: &[f64], q: &[f64], cfg: &HuberConfig) -> Result<LossEvaluation, LossError> {
    check_lengths(y, q)?;
    let s_y = match cfg.scale {
        ScaleMode::Fixed(s0) => {
            if !(s0 > 0.0) {
                return Err(LossError::ZeroScale);
            }
            s0
        }
        ScaleMode::Mad => {
            let m = mad(y);
            if m <= 0.0 {
                return Err(LossError::ZeroScale);
            }
            MAD_XI * m
        }
    };
    let c = cfg.c;
    let mut value = 0.0;
    let mut delta = DVector::zeros(y.len());
    for t in 0..y.len() {
        let e = (y[t] - q[t]) / s_y;
        let (loss_t, psi) = if e.abs() <= c {
            (0.5 * e * e, e)
        } else {
            (c * e.abs() - 0.5 * c * c, c * sign(e))
        };
        value += loss_t;
        delta[t] = -psi / s_y;
    }
    Ok(LossEvaluation {
        value,
        delta,
        aux: vec![("s_y_scale", s_y), ("c", c)],
    })
}

/// Flow-duration-curve loss: the energy-distance divergence between the
/// empirical distributions of simulated and observed discharge,
///
/// ```text
/// L = (1/n^2) sum_ij |q_i - y_j|
///   - (1/(2 n^2)) sum_ij (|q_i - q_j| + |y_i - y_j|)
/// ```
///
/// with `delta_t = (1/n^2) [#(y < q_t) - #(y > q_t) - #(q < q_t) + #(q > q_t)]`
/// computed from sorted rank counts in O(n log n).
pub fn loss_fdc(y: &[f64], q: &[f64]) -> Result<LossEvaluation, LossError> {
    check_lengths(y, q)?;
    let n = y.len();
    let nf = n as f64;
    let n2 = nf * nf;

    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let mut qs = q.to_vec();
    qs.sort_by(f64::total_cmp);

    let cross = sum_abs_cross(&qs, &ys);
    let within_q = sum_abs_within(&qs);
    let within_y = sum_abs_within(&ys);
    let value = cross / n2 - 0.5 * (within_q + within_y) / n2;

    let mut delta = DVector::zeros(n);
    for t in 0..n {
        let (y_below, y_above) = rank_counts(&ys, q[t]);
        let (q_below, q_above) = rank_counts(&qs, q[t]);
        let a = y_below as f64 - y_above as f64;
        let b = q_below as f64 - q_above as f64;
        delta[t] = (a - b) / n2;
    }
    Ok(LossEvaluation {
        value,
        delta,
        aux: vec![],
    })
}

/// Counts entries of `sorted` strictly below and strictly above `v`.
fn rank_counts(sorted: &[f64], v: f64) -> (usize, usize) {
    let below = sorted.partition_point(|&x| x < v);
    let not_above = sorted.partition_point(|&x| x <= v);
    (below, sorted.len() - not_above)
}

/// `sum_i sum_j |a_i - b_j|` for sorted inputs, via prefix sums.
fn sum_abs_cross(a_sorted: &[f64], b_sorted: &[f64]) -> f64 {
    let n = b_sorted.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in b_sorted {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total = prefix[n];
    let mut sum = 0.0;
    for &av in a_sorted {
        let k = b_sorted.partition_point(|&x| x <= av);
        sum += av * k as f64 - prefix[k] + (total - prefix[k]) - av * (n - k) as f64;
    }
    sum
}

/// `sum_i sum_j |a_i - a_j|` for a sorted input.
fn sum_abs_within(a_sorted: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut prefix = 0.0;
    for (j, &v) in a_sorted.iter().enumerate() {
        sum += j as f64 * v - prefix;
        prefix += v;
    }
    2.0 * sum
}

/// Central gradient identity: `g = J_q^T delta`.
pub fn assemble_gradient(
    jq: &DMatrix<f64>,
    eval: &LossEvaluation,
) -> Result<DVector<f64>, LossError> {
    if jq.nrows() != eval.delta.len() {
        return Err(LossError::ShapeMismatch {
            rows: jq.nrows(),
            cols: jq.ncols(),
            delta: eval.delta.len(),
        });
    }
    Ok(jq.transpose() * &eval.delta)
}

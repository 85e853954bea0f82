//! Maps between physical parameters, unit-cube parameters, and unconstrained
//! parameters, and rescales Jacobians/gradients across the three spaces.
//!
//! Physical bounds `[lo, up]` map affinely onto the unit cube, and the unit
//! cube maps onto all of `R^d` through the elementwise logistic/logit pair.
//! Optimizers operate exclusively in the unconstrained space; the chain
//! factors `d theta / d vartheta = (up - lo) * tb * (1 - tb)` carry Jacobians
//! and gradients between spaces as a diagonal rescaling.

use crate::series::ParameterSpace;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Unit-cube values closer to an edge than this are clamped before the logit;
/// keeps the map total without moving anything at representable distances.
const EDGE_EPS: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("parameter {index} = {value} lies on or outside its bounds; logit is infinite")]
    OnBoundary { index: usize, value: f64 },
    #[error("shape mismatch: expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// One point expressed in all three parameter spaces plus the chain factors.
#[derive(Debug, Clone)]
pub struct TransformedPoint {
    pub theta: DVector<f64>,
    pub theta_bar: DVector<f64>,
    pub vartheta: DVector<f64>,
    /// Elementwise `d theta_j / d vartheta_j`, strictly positive.
    pub chain: DVector<f64>,
}

fn logistic(v: f64) -> f64 {
    let tb = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    tb.clamp(EDGE_EPS, 1.0 - EDGE_EPS)
}

fn logit(theta_bar: f64) -> f64 {
    let tb = theta_bar.clamp(EDGE_EPS, 1.0 - EDGE_EPS);
    (tb / (1.0 - tb)).ln()
}

fn chain_factor(theta_bar: f64, lo: f64, up: f64) -> f64 {
    (up - lo) * theta_bar * (1.0 - theta_bar)
}

/// Maps an unconstrained point to all three representations. Total.
pub fn to_physical(vartheta: &DVector<f64>, space: &ParameterSpace) -> TransformedPoint {
    let d = space.dim();
    let mut theta_bar = DVector::zeros(d);
    let mut theta = DVector::zeros(d);
    let mut chain = DVector::zeros(d);
    for j in 0..d {
        let tb = logistic(vartheta[j]);
        theta_bar[j] = tb;
        theta[j] = space.lower[j] + tb * (space.upper[j] - space.lower[j]);
        chain[j] = chain_factor(tb, space.lower[j], space.upper[j]);
    }
    TransformedPoint {
        theta,
        theta_bar,
        vartheta: vartheta.clone(),
        chain,
    }
}

/// Maps a physical point strictly inside the bounds to all representations.
pub fn to_unconstrained(
    theta: &DVector<f64>,
    space: &ParameterSpace,
) -> Result<TransformedPoint, TransformError> {
    let d = space.dim();
    let mut theta_bar = DVector::zeros(d);
    let mut vartheta = DVector::zeros(d);
    let mut chain = DVector::zeros(d);
    for j in 0..d {
        let (lo, up) = (space.lower[j], space.upper[j]);
        if theta[j] <= lo || theta[j] >= up {
            return Err(TransformError::OnBoundary {
                index: j,
                value: theta[j],
            });
        }
        let tb = ((theta[j] - lo) / (up - lo)).clamp(EDGE_EPS, 1.0 - EDGE_EPS);
        theta_bar[j] = tb;
        vartheta[j] = logit(tb);
        chain[j] = chain_factor(tb, lo, up);
    }
    Ok(TransformedPoint {
        theta: theta.clone(),
        theta_bar,
        vartheta,
        chain,
    })
}

/// Converts unit-cube coordinates directly to the unconstrained space.
pub fn unit_cube_to_unconstrained(theta_bar: &DVector<f64>) -> DVector<f64> {
    theta_bar.map(logit)
}

/// Rescales a physical-space discharge Jacobian into the unconstrained space:
/// column `j` is multiplied by the chain factor `d theta_j / d vartheta_j`.
pub fn rescale_jacobian(
    j_theta: &DMatrix<f64>,
    point: &TransformedPoint,
) -> Result<DMatrix<f64>, TransformError> {
    let d = point.chain.len();
    if j_theta.ncols() != d {
        return Err(TransformError::ShapeMismatch {
            expected: d,
            got: j_theta.ncols(),
        });
    }
    let mut out = j_theta.clone();
    for j in 0..d {
        let mut col = out.column_mut(j);
        col *= point.chain[j];
    }
    Ok(out)
}

/// Gradients rescale identically to Jacobian columns.
pub fn rescale_gradient(
    g_theta: &DVector<f64>,
    point: &TransformedPoint,
) -> Result<DVector<f64>, TransformError> {
    let d = point.chain.len();
    if g_theta.len() != d {
        return Err(TransformError::ShapeMismatch {
            expected: d,
            got: g_theta.len(),
        });
    }
    Ok(g_theta.component_mul(&point.chain))
}

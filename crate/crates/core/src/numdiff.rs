//! Reference numerical differentiation: high-order central differences with
//! multi-term Richardson extrapolation, plus a plain fixed-step mode.
//!
//! This is the independent oracle used to verify every analytic derivative in
//! the pipeline. Central differences at logarithmically spaced steps
//! `h_j = base / contraction^j` are combined in a Richardson tableau that
//! cancels the even-power truncation terms of the central-difference error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("non-finite evaluation at perturbed point {x}")]
    NonFiniteEvaluation { x: f64 },
}

/// Step-size strategy: adaptive Richardson cascade or a single central
/// difference at fixed `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffMode {
    Richardson,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct DiffConfig {
    /// Cascade length (number of step sizes).
    pub n_steps: usize,
    /// Initial step; `None` selects `max(1e-2, 1e-2 * |x|)` per anchor.
    pub base_step: Option<f64>,
    /// Ratio between consecutive steps, > 1.
    pub contraction: f64,
    /// Tableau depth; at most `n_steps` columns are used.
    pub extrapolation_terms: usize,
    pub mode: DiffMode,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            n_steps: 10,
            base_step: None,
            contraction: 2.0,
            extrapolation_terms: 4,
            mode: DiffMode::Richardson,
        }
    }
}

impl DiffConfig {
    pub fn fixed(h: f64) -> Self {
        Self {
            mode: DiffMode::Fixed(h),
            ..Self::default()
        }
    }

    /// Richardson config with a custom base step, for kink-sensitive targets.
    pub fn with_base_step(base: f64) -> Self {
        Self {
            base_step: Some(base),
            ..Self::default()
        }
    }

    fn step_at(&self, x: f64) -> f64 {
        self.base_step.unwrap_or_else(|| (1e-2 * x.abs()).max(1e-2))
    }

    /// Largest perturbation the cascade applies around anchor `x`.
    pub fn max_step(&self, x: f64) -> f64 {
        match self.mode {
            DiffMode::Fixed(h) => h,
            DiffMode::Richardson => self.step_at(x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DerivativeEstimate {
    pub value: f64,
    /// Difference of the two deepest tableau entries; 0 in fixed mode.
    pub err_est: f64,
    pub evals_used: usize,
}

/// Derivative of a scalar function at `x`.
pub fn richardson_derivative<F>(
    mut f: F,
    x: f64,
    cfg: &DiffConfig,
) -> Result<DerivativeEstimate, DiffError>
where
    F: FnMut(f64) -> f64,
{
    match cfg.mode {
        DiffMode::Fixed(h) => {
            let fp = eval_finite(&mut f, x + h)?;
            let fm = eval_finite(&mut f, x - h)?;
            Ok(DerivativeEstimate {
                value: (fp - fm) / (2.0 * h),
                err_est: 0.0,
                evals_used: 2,
            })
        }
        DiffMode::Richardson => {
            assert!(
                cfg.n_steps >= 2 && cfg.extrapolation_terms >= 1 && cfg.contraction > 1.0,
                "cascade needs n_steps >= 2, extrapolation_terms >= 1, contraction > 1"
            );
            let base = cfg.step_at(x);
            let depth = cfg.extrapolation_terms.min(cfg.n_steps);
            let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_steps);
            for j in 0..cfg.n_steps {
                let h = base / cfg.contraction.powi(j as i32);
                let fp = eval_finite(&mut f, x + h)?;
                let fm = eval_finite(&mut f, x - h)?;
                let mut row = vec![(fp - fm) / (2.0 * h)];
                for k in 1..depth.min(j + 1) {
                    let factor = cfg.contraction.powi(2 * k as i32) - 1.0;
                    let improved = row[k - 1] + (row[k - 1] - tableau[j - 1][k - 1]) / factor;
                    row.push(improved);
                }
                tableau.push(row);
            }
            let last = &tableau[cfg.n_steps - 1];
            let prev = &tableau[cfg.n_steps - 2];
            let value = last[last.len() - 1];
            let err_est = (value - prev[prev.len() - 1]).abs();
            Ok(DerivativeEstimate {
                value,
                err_est,
                evals_used: 2 * cfg.n_steps,
            })
        }
    }
}

/// Gradient of a scalar function of a vector, one cascade per coordinate.
pub fn fd_gradient<F>(mut f: F, x: &DVector<f64>, cfg: &DiffConfig) -> Result<DVector<f64>, DiffError>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let est = richardson_derivative(
            |xj| {
                probe[j] = xj;
                f(&probe)
            },
            x[j],
            cfg,
        )?;
        probe[j] = x[j];
        grad[j] = est.value;
    }
    Ok(grad)
}

/// Jacobian of a vector-valued function, column `j` from perturbing coordinate
/// `j` only. The extrapolation tableau is carried per output component.
pub fn fd_jacobian<F>(
    mut f: F,
    x: &DVector<f64>,
    cfg: &DiffConfig,
) -> Result<DMatrix<f64>, DiffError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let d = x.len();
    let mut probe = x.clone();
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let column = match cfg.mode {
            DiffMode::Fixed(h) => {
                probe[j] = x[j] + h;
                let fp = eval_vec_finite(&mut f, &probe)?;
                probe[j] = x[j] - h;
                let fm = eval_vec_finite(&mut f, &probe)?;
                probe[j] = x[j];
                (fp - fm) / (2.0 * h)
            }
            DiffMode::Richardson => {
                let base = cfg.step_at(x[j]);
                let depth = cfg.extrapolation_terms.min(cfg.n_steps);
                let mut tableau: Vec<Vec<DVector<f64>>> = Vec::with_capacity(cfg.n_steps);
                for level in 0..cfg.n_steps {
                    let h = base / cfg.contraction.powi(level as i32);
                    probe[j] = x[j] + h;
                    let fp = eval_vec_finite(&mut f, &probe)?;
                    probe[j] = x[j] - h;
                    let fm = eval_vec_finite(&mut f, &probe)?;
                    probe[j] = x[j];
                    let mut row = vec![(fp - fm) / (2.0 * h)];
                    for k in 1..depth.min(level + 1) {
                        let factor = cfg.contraction.powi(2 * k as i32) - 1.0;
                        let improved =
                            &row[k - 1] + (&row[k - 1] - &tableau[level - 1][k - 1]) / factor;
                        row.push(improved);
                    }
                    tableau.push(row);
                }
                let last = &tableau[cfg.n_steps - 1];
                last[last.len() - 1].clone()
            }
        };
        columns.push(column);
    }
    let n = columns.first().map_or(0, |c| c.len());
    let mut jac = DMatrix::zeros(n, d);
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

fn eval_finite<F: FnMut(f64) -> f64>(f: &mut F, x: f64) -> Result<f64, DiffError> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DiffError::NonFiniteEvaluation { x })
    }
}

fn eval_vec_finite<F: FnMut(&DVector<f64>) -> DVector<f64>>(
    f: &mut F,
    x: &DVector<f64>,
) -> Result<DVector<f64>, DiffError> {
    let v = f(x);
    match v.iter().position(|e| !e.is_finite()) {
        None => Ok(v),
        Some(i) => Err(DiffError::NonFiniteEvaluation { x: x[i.min(x.len() - 1)] }),
    }
}

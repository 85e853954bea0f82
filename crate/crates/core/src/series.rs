//! Forcing/observation time series and the parameter-space description.
//!
//! All series live on a fixed unit step (`dt = 1`, days or hours — a labeling
//! concern only). The loss window excludes the leading `spin_up` steps.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("negative driver in {what} at index {index}: {value}")]
    NegativeDriver {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("series too short: n_total = {n_total}, need at least 2")]
    TooShort { n_total: usize },
    #[error("spin_up {spin_up} out of range for n_total {n_total}")]
    SpinUpOutOfRange { spin_up: usize, n_total: usize },
    #[error("invalid bounds for parameter {index}: lower {lower} must be < upper {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
}

/// Per-step precipitation and potential-ET drivers for the simulation window.
///
/// `precip[i]` and `pet[i]` drive the reporting interval `[i, i+1]`; both are
/// rates in mm per time unit, held constant within the interval.
#[derive(Debug, Clone)]
pub struct ForcingSeries {
    /// Fixed reporting step length in model time units. Always 1.
    pub dt: f64,
    pub precip: Vec<f64>,
    pub pet: Vec<f64>,
    /// Leading reporting steps excluded from the loss window.
    pub spin_up: usize,
}

impl ForcingSeries {
    pub fn new(precip: Vec<f64>, pet: Vec<f64>, spin_up: usize) -> Result<Self, SeriesError> {
        let series = Self {
            dt: 1.0,
            precip,
            pet,
            spin_up,
        };
        series.check()?;
        Ok(series)
    }

    /// Total number of reporting steps.
    pub fn n_total(&self) -> usize {
        self.precip.len()
    }

    /// Number of post-spin-up steps, i.e. the loss window length.
    pub fn n(&self) -> usize {
        self.n_total() - self.spin_up
    }

    pub fn check(&self) -> Result<(), SeriesError> {
        let n_total = self.precip.len();
        if self.pet.len() != n_total {
            return Err(SeriesError::LengthMismatch {
                what: "pet",
                got: self.pet.len(),
                expected: n_total,
            });
        }
        if n_total < 2 {
            return Err(SeriesError::TooShort { n_total });
        }
        if self.spin_up >= n_total {
            return Err(SeriesError::SpinUpOutOfRange {
                spin_up: self.spin_up,
                n_total,
            });
        }
        check_driver("precip", &self.precip)?;
        check_driver("pet", &self.pet)?;
        Ok(())
    }
}

fn check_driver(what: &'static str, values: &[f64]) -> Result<(), SeriesError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(SeriesError::NonFinite { what, index });
        }
        if value < 0.0 {
            return Err(SeriesError::NegativeDriver {
                what,
                index,
                value,
            });
        }
    }
    Ok(())
}

/// Observed discharge aligned to the post-spin-up reporting steps.
#[derive(Debug, Clone)]
pub struct ObservedDischarge {
    pub y: Vec<f64>,
}

impl ObservedDischarge {
    pub fn new(y: Vec<f64>) -> Result<Self, SeriesError> {
        let obs = Self { y };
        obs.check()?;
        Ok(obs)
    }

    pub fn check(&self) -> Result<(), SeriesError> {
        for (index, &value) in self.y.iter().enumerate() {
            if !value.is_finite() {
                return Err(SeriesError::NonFinite {
                    what: "discharge",
                    index,
                });
            }
            if value < 0.0 {
                return Err(SeriesError::NegativeDriver {
                    what: "discharge",
                    index,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Physical parameter bounds and labels for one model.
#[derive(Debug, Clone)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ParameterSpace {
    pub fn new(
        names: Vec<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, SeriesError> {
        assert_eq!(names.len(), lower.len());
        assert_eq!(names.len(), upper.len());
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) {
                return Err(SeriesError::InvalidBounds {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self {
            names,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .enumerate()
                .all(|(j, &v)| v >= self.lower[j] && v <= self.upper[j])
    }

    /// Maps unit-cube coordinates to physical values, elementwise affine.
    pub fn from_unit_cube(&self, theta_bar: &DVector<f64>) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim());
        for j in 0..self.dim() {
            theta[j] = self.lower[j] + theta_bar[j] * (self.upper[j] - self.lower[j]);
        }
        theta
    }
}

/// Alignment summary produced by [`validate_series`].
#[derive(Debug, Clone, Copy)]
pub struct AlignmentReport {
    pub n_total: usize,
    pub spin_up: usize,
    /// Loss window length, `n_total - spin_up`.
    pub n: usize,
}

/// Checks every series invariant and confirms the observation window lines up
/// with the post-spin-up forcing steps.
pub fn validate_series(
    forcing: &ForcingSeries,
    obs: &ObservedDischarge,
) -> Result<AlignmentReport, SeriesError> {
    forcing.check()?;
    obs.check()?;
    let n = forcing.n();
    if obs.y.len() != n {
        return Err(SeriesError::LengthMismatch {
            what: "discharge",
            got: obs.y.len(),
            expected: n,
        });
    }
    Ok(AlignmentReport {
        n_total: forcing.n_total(),
        spin_up: forcing.spin_up,
        n,
    })
}

//! CSV reading and writing with deterministic, round-trip-exact number
//! formatting.
//!
//! Forcing schema: header `time,precip,pet[,discharge]`, comma separators,
//! `.` decimal, comment lines starting with `#`. All outputs serialize
//! numbers with 17 significant digits so files are byte-identical across
//! repeated runs and parse back to the same doubles.

use crate::series::{ForcingSeries, ObservedDischarge, SeriesError};
use nalgebra::{DMatrix, DVector};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad header in {path}: expected `time,precip,pet[,discharge]`, found `{found}`")]
    BadHeader { path: String, found: String },
    #[error("bad row at {path}:{line}: {reason}")]
    BadRow {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("non-finite value at {path}:{line}")]
    NonFinite { path: String, line: usize },
    #[error("{path} contains no data rows")]
    Empty { path: String },
    #[error("{path}: expected {expected} values, found {found}")]
    WrongShape {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 17 significant digits: round-trip exact for 64-bit floats.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, content: &str) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(content.as_bytes()).map_err(io_err(path))?;
    Ok(())
}

/// Loads the forcing CSV; the discharge column is optional and, when present,
/// only its post-spin-up window becomes the observation vector.
pub fn load_forcing_csv(
    path: &Path,
    spin_up: usize,
) -> Result<(ForcingSeries, Option<ObservedDischarge>), DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let pstr = path.display().to_string();

    let mut rows: Vec<(usize, &str)> = Vec::new();
    let mut header: Option<(usize, &str)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if header.is_none() {
            header = Some((idx + 1, line));
        } else {
            rows.push((idx + 1, line));
        }
    }

    let (_, header_line) = header.ok_or_else(|| DataError::Empty { path: pstr.clone() })?;
    let cols: Vec<String> = header_line
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    let with_discharge = match cols.as_slice() {
        [t, p, e] if t == "time" && p == "precip" && e == "pet" => false,
        [t, p, e, q] if t == "time" && p == "precip" && e == "pet" && q == "discharge" => true,
        _ => {
            return Err(DataError::BadHeader {
                path: pstr,
                found: header_line.to_string(),
            })
        }
    };
    if rows.is_empty() {
        return Err(DataError::Empty { path: pstr });
    }

    let ncols = cols.len();
    let mut precip = Vec::with_capacity(rows.len());
    let mut pet = Vec::with_capacity(rows.len());
    let mut discharge = Vec::with_capacity(rows.len());
    for (line, content) in rows {
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != ncols {
            return Err(DataError::BadRow {
                path: pstr,
                line,
                reason: format!("expected {ncols} fields, found {}", fields.len()),
            });
        }
        let mut values = Vec::with_capacity(ncols);
        for field in &fields {
            let v: f64 = field.parse().map_err(|_| DataError::BadRow {
                path: pstr.clone(),
                line,
                reason: format!("cannot parse `{field}` as a number"),
            })?;
            values.push(v);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { path: pstr, line });
        }
        for (name, v) in cols.iter().skip(1).zip(values.iter().skip(1)) {
            if *v < 0.0 {
                return Err(DataError::BadRow {
                    path: pstr.clone(),
                    line,
                    reason: format!("{name} = {v} is negative"),
                });
            }
        }
        precip.push(values[1]);
        pet.push(values[2]);
        if with_discharge {
            discharge.push(values[3]);
        }
    }

    let forcing = ForcingSeries::new(precip, pet, spin_up)?;
    let obs = if with_discharge {
        Some(ObservedDischarge::new(discharge[spin_up..].to_vec())?)
    } else {
        None
    };
    Ok((forcing, obs))
}

/// Writes a forcing file, optionally with the discharge column.
pub fn write_forcing_csv(
    path: &Path,
    forcing: &ForcingSeries,
    discharge: Option<&[f64]>,
) -> Result<(), DataError> {
    let mut out = String::new();
    match discharge {
        Some(_) => out.push_str("time,precip,pet,discharge\n"),
        None => out.push_str("time,precip,pet\n"),
    }
    for t in 0..forcing.n_total() {
        out.push_str(&format!(
            "{},{},{}",
            t + 1,
            fmt(forcing.precip[t]),
            fmt(forcing.pet[t])
        ));
        if let Some(q) = discharge {
            out.push(',');
            out.push_str(&fmt(q[t]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// One error standard deviation per line, n lines.
pub fn load_sigma_diagonal(path: &Path, n: usize) -> Result<DVector<f64>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let pstr = path.display().to_string();
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| DataError::BadRow {
            path: pstr.clone(),
            line: idx + 1,
            reason: format!("cannot parse `{line}` as a number"),
        })?;
        values.push(v);
    }
    if values.len() != n {
        return Err(DataError::WrongShape {
            path: pstr,
            expected: n,
            found: values.len(),
        });
    }
    Ok(DVector::from_vec(values))
}

/// Dense covariance: n lines of n comma-separated values, row-major.
pub fn load_sigma_dense(path: &Path, n: usize) -> Result<DMatrix<f64>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let pstr = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| DataError::BadRow {
                path: pstr.clone(),
                line: idx + 1,
                reason: format!("cannot parse `{}` as a number", field.trim()),
            })?;
            row.push(v);
        }
        if row.len() != n {
            return Err(DataError::WrongShape {
                path: pstr,
                expected: n,
                found: row.len(),
            });
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(DataError::WrongShape {
            path: pstr,
            expected: n,
            found: rows.len(),
        });
    }
    let mut sigma = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            sigma[(i, j)] = v;
        }
    }
    Ok(sigma)
}

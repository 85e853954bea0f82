//! Flat `key = value` run configuration with sections named by module.
//!
//! Every key has a default, so an empty (or absent) file runs the synthetic
//! hymod/GLS/LM setup end to end. Unknown sections or keys are rejected to
//! catch typos early.
//!
//! ```text
//! [cli_io]
//! model = hymod            # hymod | hmodel
//! loss = gls               # sar | gls | nse | kge | huber | fdc
//! optimizer = lm           # gd | lm (lm requires gls or nse)
//! spin_up = 365
//! n_starts = 20
//! seed = 42
//! gls_weights = identity   # identity | diagonal:<path> | dense:<path>
//! huber_c = 1.345
//! huber_scale = mad        # mad | fixed:<sigma>
//! theta_bar = 0.5,0.5,0.5,0.5,0.5
//! bounds.s_u_max = 50,800
//! synthetic.n_total = 730
//! synthetic.seed = 7
//! synthetic.theta_star = 0.5,0.5,0.5,0.5,0.5
//!
//! [sensitivity_solver]
//! abstol = 1e-5
//!
//! [optimizers]
//! lm.k_max = 200
//! ```

use crate::cli::synth::SyntheticSpec;
use crate::hmodel::Hmodel;
use crate::hymod::Hymod;
use crate::loss::{HuberConfig, ScaleMode};
use crate::model::ModelDynamics;
use crate::optimize::{GdConfig, LmConfig};
use crate::solver::SolverConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("bad value for [{section}] {key}: {reason}")]
    BadValue {
        section: String,
        key: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    Gd,
    Lm,
}

/// Where the GLS error covariance comes from; resolved against the observation
/// length when the loss is built.
#[derive(Debug, Clone, PartialEq)]
pub enum GlsWeightsSpec {
    Identity,
    DiagonalPath(PathBuf),
    DensePath(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: String,
    pub loss: String,
    pub optimizer: OptimizerChoice,
    pub spin_up: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub gls_weights: GlsWeightsSpec,
    pub huber: HuberConfig,
    /// Evaluation anchor for simulate/jacobian/gradient, unit-cube coords.
    pub theta_bar: Option<Vec<f64>>,
    /// Per-parameter `name = lower,upper` overrides.
    pub bounds_override: BTreeMap<String, (f64, f64)>,
    pub solver: SolverConfig,
    pub gd: GdConfig,
    pub lm: LmConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "hymod".into(),
            loss: "gls".into(),
            optimizer: OptimizerChoice::Lm,
            spin_up: 365,
            n_starts: 20,
            seed: 42,
            gls_weights: GlsWeightsSpec::Identity,
            huber: HuberConfig::default(),
            theta_bar: None,
            bounds_override: BTreeMap::new(),
            solver: SolverConfig::default(),
            gd: GdConfig::default(),
            lm: LmConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section = String::from("cli_io");
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line: idx + 1,
                    reason: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                reason: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.apply(&section, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            reason,
        };
        let parse_f64 = |v: &str| -> Result<f64, ConfigError> {
            v.parse().map_err(|_| bad(format!("`{v}` is not a number")))
        };
        let parse_usize = |v: &str| -> Result<usize, ConfigError> {
            v.parse().map_err(|_| bad(format!("`{v}` is not a count")))
        };
        let parse_list = |v: &str| -> Result<Vec<f64>, ConfigError> {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| bad(format!("`{x}` is not a number")))
                })
                .collect()
        };

        match section {
            "cli_io" => match key {
                "model" => self.model = value.to_string(),
                "loss" => self.loss = value.to_string(),
                "optimizer" => {
                    self.optimizer = match value {
                        "gd" => OptimizerChoice::Gd,
                        "lm" => OptimizerChoice::Lm,
                        other => return Err(bad(format!("unknown optimizer `{other}`"))),
                    }
                }
                "spin_up" => self.spin_up = parse_usize(value)?,
                "n_starts" => self.n_starts = parse_usize(value)?,
                "seed" => {
                    self.seed = value
                        .parse()
                        .map_err(|_| bad(format!("`{value}` is not a seed")))?
                }
                "gls_weights" => {
                    self.gls_weights = if value == "identity" {
                        GlsWeightsSpec::Identity
                    } else if let Some(p) = value.strip_prefix("diagonal:") {
                        GlsWeightsSpec::DiagonalPath(PathBuf::from(p.trim()))
                    } else if let Some(p) = value.strip_prefix("dense:") {
                        GlsWeightsSpec::DensePath(PathBuf::from(p.trim()))
                    } else {
                        return Err(bad(format!("unknown weights `{value}`")));
                    }
                }
                "huber_c" => {
                    let c = parse_f64(value)?;
                    if c <= 0.0 {
                        return Err(bad("threshold must be positive".into()));
                    }
                    self.huber.c = c;
                }
                "huber_scale" => {
                    self.huber.scale = if value == "mad" {
                        ScaleMode::Mad
                    } else if let Some(s) = value.strip_prefix("fixed:") {
                        let s0 = parse_f64(s.trim())?;
                        if s0 <= 0.0 {
                            return Err(bad("fixed scale must be positive".into()));
                        }
                        ScaleMode::Fixed(s0)
                    } else {
                        return Err(bad(format!("unknown scale mode `{value}`")));
                    }
                }
                "theta_bar" => self.theta_bar = Some(parse_list(value)?),
                _ if key.starts_with("bounds.") => {
                    let name = key.trim_start_matches("bounds.").to_string();
                    let pair = parse_list(value)?;
                    if pair.len() != 2 || !(pair[0] < pair[1]) {
                        return Err(bad("expected `lower,upper` with lower < upper".into()));
                    }
                    self.bounds_override.insert(name, (pair[0], pair[1]));
                }
                _ if key.starts_with("synthetic.") => {
                    let sub = key.trim_start_matches("synthetic.");
                    match sub {
                        "seed" => {
                            self.synthetic.seed = value
                                .parse()
                                .map_err(|_| bad(format!("`{value}` is not a seed")))?
                        }
                        "n_total" => self.synthetic.n_total = parse_usize(value)?,
                        "wet_prob" => self.synthetic.wet_prob = parse_f64(value)?,
                        "wet_mean_depth" => self.synthetic.wet_mean_depth = parse_f64(value)?,
                        "pet_mean" => self.synthetic.pet_mean = parse_f64(value)?,
                        "pet_amplitude" => self.synthetic.pet_amplitude = parse_f64(value)?,
                        "theta_star" => self.synthetic.theta_star_bar = Some(parse_list(value)?),
                        _ => {
                            return Err(ConfigError::UnknownKey {
                                section: section.to_string(),
                                key: key.to_string(),
                            })
                        }
                    }
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: section.to_string(),
                        key: key.to_string(),
                    })
                }
            },
            "sensitivity_solver" => match key {
                "abstol" => self.solver.abstol = parse_f64(value)?,
                "reltol" => self.solver.reltol = parse_f64(value)?,
                "h_min" => self.solver.h_min = parse_f64(value)?,
                "h_max" => self.solver.h_max = parse_f64(value)?,
                "max_steps_per_interval" => {
                    self.solver.max_steps_per_interval = parse_usize(value)?
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: section.to_string(),
                        key: key.to_string(),
                    })
                }
            },
            "optimizers" => match key {
                "gd.k_max" => self.gd.k_max = parse_usize(value)?,
                "gd.eta0" => self.gd.eta0 = parse_f64(value)?,
                "gd.armijo_c1" => self.gd.armijo_c1 = parse_f64(value)?,
                "gd.shrink" => self.gd.shrink = parse_f64(value)?,
                "gd.max_backtracks" => self.gd.max_backtracks = parse_usize(value)?,
                "gd.tol_g" => self.gd.tol_g = parse_f64(value)?,
                "gd.tol_loss_rel" => self.gd.tol_loss_rel = parse_f64(value)?,
                "lm.k_max" => self.lm.k_max = parse_usize(value)?,
                "lm.nu" => self.lm.nu = parse_f64(value)?,
                "lm.lambda0_scale" => self.lm.lambda0_scale = parse_f64(value)?,
                "lm.tol_g" => self.lm.tol_g = parse_f64(value)?,
                "lm.tol_loss_rel" => self.lm.tol_loss_rel = parse_f64(value)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        section: section.to_string(),
                        key: key.to_string(),
                    })
                }
            },
            _ => {
                return Err(ConfigError::UnknownKey {
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        const MODELS: [&str; 2] = ["hymod", "hmodel"];
        const LOSSES: [&str; 6] = ["sar", "gls", "nse", "kge", "huber", "fdc"];
        if !MODELS.contains(&self.model.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown model `{}`; available: {MODELS:?}",
                self.model
            )));
        }
        if !LOSSES.contains(&self.loss.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown loss `{}`; available: {LOSSES:?}",
                self.loss
            )));
        }
        if self.optimizer == OptimizerChoice::Lm && !matches!(self.loss.as_str(), "gls" | "nse") {
            return Err(ConfigError::Invalid(format!(
                "optimizer lm requires loss gls or nse, got `{}`",
                self.loss
            )));
        }
        if self.n_starts == 0 {
            return Err(ConfigError::Invalid("n_starts must be at least 1".into()));
        }
        match &self.gls_weights {
            GlsWeightsSpec::DiagonalPath(p) | GlsWeightsSpec::DensePath(p) => {
                if !p.exists() {
                    return Err(ConfigError::Invalid(format!(
                        "gls_weights file {} does not exist",
                        p.display()
                    )));
                }
            }
            GlsWeightsSpec::Identity => {}
        }
        if !(self.lm.nu > 1.0) {
            return Err(ConfigError::Invalid("lm.nu must exceed 1".into()));
        }
        Ok(())
    }

    /// Builds the configured model, with bound overrides applied.
    pub fn build_model(&self) -> Result<Box<dyn ModelDynamics>, ConfigError> {
        let inner: Box<dyn ModelDynamics> = match self.model.as_str() {
            "hymod" => Box::new(Hymod::new()),
            "hmodel" => Box::new(Hmodel::new()),
            other => return Err(ConfigError::Invalid(format!("unknown model `{other}`"))),
        };
        if self.bounds_override.is_empty() {
            return Ok(inner);
        }
        let space = inner.space();
        let mut lower: Vec<f64> = space.lower.iter().copied().collect();
        let mut upper: Vec<f64> = space.upper.iter().copied().collect();
        for (name, &(lo, up)) in &self.bounds_override {
            let j = space.names.iter().position(|n| n == name).ok_or_else(|| {
                ConfigError::Invalid(format!("bounds override names unknown parameter `{name}`"))
            })?;
            lower[j] = lo;
            upper[j] = up;
        }
        let space = crate::series::ParameterSpace::new(space.names.clone(), lower, upper)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Box::new(BoundedModel { inner, space }))
    }

    /// Human-readable summary of the effective settings.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model={} loss={} optimizer={} spin_up={} n_starts={} seed={}",
            self.model,
            self.loss,
            match self.optimizer {
                OptimizerChoice::Gd => "gd",
                OptimizerChoice::Lm => "lm",
            },
            self.spin_up,
            self.n_starts,
            self.seed
        );
        let _ = writeln!(
            s,
            "solver: abstol={} reltol={} h_min={} h_max={}",
            self.solver.abstol, self.solver.reltol, self.solver.h_min, self.solver.h_max
        );
        s
    }
}

/// A registered model with user-overridden parameter bounds.
struct BoundedModel {
    inner: Box<dyn ModelDynamics>,
    space: crate::series::ParameterSpace,
}

impl ModelDynamics for BoundedModel {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn state_count(&self) -> usize {
        self.inner.state_count()
    }
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }
    fn space(&self) -> &crate::series::ParameterSpace {
        &self.space
    }
    fn initial_state(&self) -> nalgebra::DVector<f64> {
        self.inner.initial_state()
    }
    fn dynamics(
        &self,
        x: &nalgebra::DVector<f64>,
        theta: &nalgebra::DVector<f64>,
        drivers: crate::model::Drivers,
    ) -> crate::model::DynamicsEval {
        self.inner.dynamics(x, theta, drivers)
    }
    fn dynamics_rate_only(
        &self,
        x: &nalgebra::DVector<f64>,
        theta: &nalgebra::DVector<f64>,
        drivers: crate::model::Drivers,
    ) -> (nalgebra::DVector<f64>, f64) {
        self.inner.dynamics_rate_only(x, theta, drivers)
    }
}

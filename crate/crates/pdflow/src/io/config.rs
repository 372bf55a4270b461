//! Run configuration with three precedence layers: built-in defaults,
//! a key=value config file, then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::PyramidParams;
use crate::ops::Model;
use crate::solver::SolverParams;

/// Fully resolved run configuration. Every field has a default, may be
/// set in a config file, and may be overridden by a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Model,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub levels: usize,
    pub scale: f64,
    pub warps: usize,
    pub blend: f64,
    pub median: bool,
    pub deterministic: bool,
    pub strict_stepsize: bool,
    pub f1: Option<PathBuf>,
    pub f2: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub color: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverParams::default();
        let pyr = PyramidParams::default();
        RunConfig {
            model: Model::M2,
            alpha: solver.alpha,
            beta: solver.beta,
            lambda: solver.lambda,
            epsilon: solver.epsilon,
            max_iter: solver.max_iter,
            tau: solver.tau,
            sigma: solver.sigma,
            theta: solver.theta,
            levels: pyr.levels,
            scale: pyr.scale_factor,
            warps: pyr.warps_per_level,
            blend: pyr.blend_ratio,
            median: pyr.median_filter,
            deterministic: false,
            strict_stepsize: false,
            f1: None,
            f2: None,
            out: None,
            color: None,
            trace: None,
        }
    }
}

impl RunConfig {
    pub fn solver_params(&self) -> SolverParams {
        SolverParams {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            tau: self.tau,
            sigma: self.sigma,
            theta: self.theta,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            model: self.model,
            strict_step_size: self.strict_stepsize,
        }
    }

    pub fn pyramid_params(&self) -> PyramidParams {
        PyramidParams {
            scale_factor: self.scale,
            levels: self.levels,
            warps_per_level: self.warps,
            blend_ratio: self.blend,
            median_filter: self.median,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver_params().validate()?;
        self.pyramid_params().validate()
    }

    /// Apply one key=value assignment.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_value = |name: &'static str| Error::InvalidParameter {
            name,
            reason: format!("cannot parse {value:?}"),
        };
        match key {
            "model" => self.model = value.parse()?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad_value("alpha"))?,
            "beta" => self.beta = value.parse().map_err(|_| bad_value("beta"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad_value("lambda"))?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad_value("epsilon"))?,
            "max_iter" => self.max_iter = value.parse().map_err(|_| bad_value("max_iter"))?,
            "tau" => self.tau = value.parse().map_err(|_| bad_value("tau"))?,
            "sigma" => self.sigma = value.parse().map_err(|_| bad_value("sigma"))?,
            "theta" => self.theta = value.parse().map_err(|_| bad_value("theta"))?,
            "levels" => self.levels = value.parse().map_err(|_| bad_value("levels"))?,
            "scale" => self.scale = value.parse().map_err(|_| bad_value("scale"))?,
            "warps" => self.warps = value.parse().map_err(|_| bad_value("warps"))?,
            "blend" => self.blend = value.parse().map_err(|_| bad_value("blend"))?,
            "median" => self.median = value.parse().map_err(|_| bad_value("median"))?,
            "deterministic" => {
                self.deterministic = value.parse().map_err(|_| bad_value("deterministic"))?
            }
            "strict_stepsize" => {
                self.strict_stepsize = value.parse().map_err(|_| bad_value("strict_stepsize"))?
            }
            "f1" => self.f1 = Some(PathBuf::from(value)),
            "f2" => self.f2 = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "color" => self.color = Some(PathBuf::from(value)),
            "trace" => self.trace = Some(PathBuf::from(value)),
            other => {
                return Err(Error::InvalidParameter {
                    name: "config",
                    reason: format!("unknown key {other:?}"),
                })
            }
        }
        Ok(())
    }

    /// Layer a key=value file over the current values. Blank lines and
    /// `#` comments are ignored.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::BadConfig {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "expected key=value".into(),
            })?;
            self.apply_key(key.trim(), value.trim())
                .map_err(|e| Error::BadConfig {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
        }
        Ok(())
    }

    /// Render the fully-resolved configuration as key=value lines.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let _ = writeln!(s, "model={}", self.model.name());
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "max_iter={}", self.max_iter);
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "sigma={}", self.sigma);
        let _ = writeln!(s, "theta={}", self.theta);
        let _ = writeln!(s, "levels={}", self.levels);
        let _ = writeln!(s, "scale={}", self.scale);
        let _ = writeln!(s, "warps={}", self.warps);
        let _ = writeln!(s, "blend={}", self.blend);
        let _ = writeln!(s, "median={}", self.median);
        let _ = writeln!(s, "deterministic={}", self.deterministic);
        let _ = writeln!(s, "strict_stepsize={}", self.strict_stepsize);
        let _ = writeln!(s, "f1={}", path(&self.f1));
        let _ = writeln!(s, "f2={}", path(&self.f2));
        let _ = writeln!(s, "out={}", path(&self.out));
        let _ = writeln!(s, "color={}", path(&self.color));
        let _ = writeln!(s, "trace={}", path(&self.trace));
        s
    }
}

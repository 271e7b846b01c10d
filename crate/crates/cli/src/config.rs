//! Experiment configuration.
//!
//! A flat TOML file; unknown keys are rejected. Example:
//!
//! ```toml
//! model = "linear-kb"     # zoo name, or "linear" / "tanh" with coefficients below
//! horizon_T = 1.0
//! n_steps = 1000
//! grid = "auto"           # or grid_x_min / grid_x_max
//! grid_m = 401
//! quad_nodes = 8
//! seeds = [0, 1, 2]
//! n_particles = 100000
//! test_function = "tanh"
//! output_dir = "out"
//! slices = [0, 1000]
//! ```
//!
//! Coefficient overrides: `drift_a` and `obs_c` (linear family, `b = a x`,
//! `h = c x`), `drift_amp` and `obs_c` (tanh family, `b = -k sin x`,
//! `h = c tanh x`), and `rho`, `rho_tilde`, `prior_mean`, `prior_var` for
//! both.

use std::path::{Path, PathBuf};

use bdsde_filter::model::zoo::{self, LinearParams, TanhParams};
use bdsde_filter::{gauss_nodes, FilteringModel, QuadratureRule, SpaceGrid, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The file as written, plus command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub drift_a: Option<f64>,
    pub drift_amp: Option<f64>,
    pub obs_c: Option<f64>,
    pub rho: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub prior_mean: Option<f64>,
    pub prior_var: Option<f64>,
    #[serde(rename = "horizon_T")]
    pub horizon_t: Option<f64>,
    pub n_steps: usize,
    pub grid: Option<String>,
    pub grid_x_min: Option<f64>,
    pub grid_x_max: Option<f64>,
    #[serde(default = "default_grid_m")]
    pub grid_m: usize,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub run_filter: bool,
    #[serde(default = "yes")]
    pub run_feynman_kac: bool,
    #[serde(default = "yes")]
    pub run_adjoint: bool,
    #[serde(default = "yes")]
    pub run_kalman_bucy: bool,
    #[serde(default = "yes")]
    pub run_ks: bool,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_test_function")]
    pub test_function: String,
    pub fk_x0: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub slices: Vec<usize>,
}

fn default_grid_m() -> usize {
    bdsde_filter::gridquad::DEFAULT_NODES
}
fn default_quad_nodes() -> usize {
    bdsde_filter::gridquad::DEFAULT_QUAD_NODES
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn yes() -> bool {
    true
}
fn default_particles() -> usize {
    10_000
}
fn default_test_function() -> String {
    "tanh".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub slices: Option<Vec<usize>>,
}

/// Coefficient family of the configured model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Linear(LinearParams),
    Tanh(TanhParams),
}

/// Terminal test functions selectable by name.
pub const TEST_FUNCTIONS: [&str; 5] = ["identity", "square", "tanh", "one", "zero"];

pub fn test_function(name: &str) -> Option<fn(f64) -> f64> {
    Some(match name {
        "identity" => |x| x,
        "square" => |x| x * x,
        "tanh" => f64::tanh,
        "one" => |_| 1.0,
        "zero" => |_| 0.0,
        _ => return None,
    })
}

/// A configuration after every check has passed.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub family: Family,
    pub model: FilteringModel,
    pub time_grid: TimeGrid,
    pub grid: SpaceGrid,
    pub rule: QuadratureRule,
    pub phi: fn(f64) -> f64,
    pub x0: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(slices) = &o.slices {
            self.slices = slices.clone();
        }
    }

    fn family(&self) -> Result<Family, CliError> {
        let mut family = match self.model.as_str() {
            "linear-kb" | "linear" => Family::Linear(zoo::LINEAR_KB),
            "linear-corr" => Family::Linear(zoo::LINEAR_CORRELATED),
            "heat" => Family::Linear(zoo::HEAT),
            "nonlinear-tanh" | "tanh" => Family::Tanh(zoo::NONLINEAR_TANH),
            other => {
                return Err(CliError::Config(format!(
                    "unknown model '{other}'; expected one of {}, linear, tanh",
                    zoo::NAMES.join(", ")
                )))
            }
        };
        match &mut family {
            Family::Linear(p) => {
                if self.drift_amp.is_some() {
                    return Err(CliError::Config(
                        "drift_amp applies to the tanh family only".into(),
                    ));
                }
                set(&mut p.a, self.drift_a);
                set(&mut p.c, self.obs_c);
                set(&mut p.rho, self.rho);
                set(&mut p.rho_tilde, self.rho_tilde);
                set(&mut p.prior_mean, self.prior_mean);
                set(&mut p.prior_var, self.prior_var);
                set(&mut p.horizon, self.horizon_t);
            }
            Family::Tanh(p) => {
                if self.drift_a.is_some() {
                    return Err(CliError::Config(
                        "drift_a applies to the linear family only".into(),
                    ));
                }
                set(&mut p.drift_amp, self.drift_amp);
                set(&mut p.c, self.obs_c);
                set(&mut p.rho, self.rho);
                set(&mut p.rho_tilde, self.rho_tilde);
                set(&mut p.prior_mean, self.prior_mean);
                set(&mut p.prior_var, self.prior_var);
                set(&mut p.horizon, self.horizon_t);
            }
        }
        Ok(family)
    }

    /// Checks everything and builds the solver inputs; no computation of
    /// results happens before this succeeds.
    pub fn resolve(&self) -> Result<Experiment, CliError> {
        let family = self.family()?;
        let (prior_var, model) = match family {
            Family::Linear(p) => (p.prior_var, zoo::linear(&self.model, p)),
            Family::Tanh(p) => (p.prior_var, zoo::tanh(&self.model, p)),
        };
        if !(prior_var >= 0.0 && prior_var.is_finite()) {
            return Err(CliError::Config(format!(
                "prior_var must be non-negative, got {prior_var}"
            )));
        }
        if self.n_steps == 0 {
            return Err(CliError::Config("n_steps must be positive".into()));
        }
        let time_grid = TimeGrid::new(model.horizon(), self.n_steps)?;
        let grid = match (self.grid.as_deref(), self.grid_x_min, self.grid_x_max) {
            (Some("auto") | None, None, None) => SpaceGrid::auto(&model, self.grid_m)?,
            (None, Some(lo), Some(hi)) => SpaceGrid::new(lo, hi, self.grid_m)?,
            (Some("auto"), _, _) => {
                return Err(CliError::Config(
                    "grid = \"auto\" conflicts with grid_x_min/grid_x_max".into(),
                ))
            }
            (Some(other), _, _) => {
                return Err(CliError::Config(format!(
                    "grid must be \"auto\", got \"{other}\""
                )))
            }
            _ => {
                return Err(CliError::Config(
                    "grid_x_min and grid_x_max must be given together".into(),
                ))
            }
        };
        let rule = gauss_nodes(self.quad_nodes)?;
        let phi = test_function(&self.test_function).ok_or_else(|| {
            CliError::Config(format!(
                "unknown test_function '{}'; expected one of {}",
                self.test_function,
                TEST_FUNCTIONS.join(", ")
            ))
        })?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be distinct".into()));
        }
        if let Some(&bad) = self.slices.iter().find(|&&n| n > self.n_steps) {
            return Err(CliError::Config(format!(
                "slice {bad} exceeds n_steps = {}",
                self.n_steps
            )));
        }
        if self.n_particles < 100 {
            return Err(CliError::Config(format!(
                "n_particles must be at least 100, got {}",
                self.n_particles
            )));
        }
        let x0 = self.fk_x0.unwrap_or_else(|| model.prior().mode());
        if !(x0 > grid.x_min() && x0 < grid.x_max()) {
            return Err(CliError::Config(format!(
                "fk_x0 = {x0} is not interior to [{}, {}]",
                grid.x_min(),
                grid.x_max()
            )));
        }
        let blocking: Vec<String> = model
            .validate(&grid)
            .into_iter()
            .filter(|v| v.blocks_simulation())
            .map(|v| v.to_string())
            .collect();
        if !blocking.is_empty() {
            return Err(CliError::Config(format!(
                "model failed validation: {}",
                blocking.join("; ")
            )));
        }
        Ok(Experiment {
            config: self.clone(),
            family,
            model,
            time_grid,
            grid,
            rule,
            phi,
            x0,
        })
    }
}

fn set(slot: &mut f64, value: Option<f64>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Experiment {
    /// Grid solvers additionally need a non-degenerate diffusion.
    pub fn require_grid_solvable(&self) -> Result<(), CliError> {
        self.model.ensure_valid(&self.grid).map_err(CliError::from)
    }

    /// Kalman-Bucy parameters `(a, c, rho, m0, p0)` when the model is linear
    /// with uncorrelated noise.
    pub fn kalman_bucy_params(&self) -> Option<(f64, f64, f64, f64, f64)> {
        match self.family {
            Family::Linear(p) if p.rho_tilde == 0.0 => {
                Some((p.a, p.c, p.rho, p.prior_mean, p.prior_var))
            }
            _ => None,
        }
    }
}

//! The filtering problem
//!
//! ```text
//! dU_t = b_t(U_t) dt + rho_t dW_t + rho~_t dB_t,   U_0 ~ p0
//! dV_t = h(U_t) dt + dB_t
//! ```
//!
//! with analytic derivatives of `b` and `h` supplied alongside the
//! coefficients and cross-checked by finite differences.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{FilterError, Result};
use crate::gridquad::{BoundaryPolicy, GridField, SpaceGrid};

pub type TimeStateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const SIGMA_FLOOR: f64 = 1e-12;
const DERIVATIVE_RTOL: f64 = 1e-6;
const DERIVATIVE_PROBES: usize = 64;

/// Shape of the initial law of `U_0`.
#[derive(Clone)]
pub enum PriorShape {
    Gaussian {
        mean: f64,
        var: f64,
    },
    /// Dirac mass. Tabulated on a grid as a unit-mass spike at the nearest node.
    PointMass(f64),
    /// User density with a location/scale hint used for grid sizing.
    Custom {
        pdf: StateFn,
        center: f64,
        scale: f64,
    },
}

impl fmt::Debug for PriorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorShape::Gaussian { mean, var } => write!(f, "Gaussian({mean}, {var})"),
            PriorShape::PointMass(x) => write!(f, "PointMass({x})"),
            PriorShape::Custom { center, scale, .. } => {
                write!(f, "Custom(center={center}, scale={scale})")
            }
        }
    }
}

/// Initial density `p0 = weight * shape`. The weight is carried separately so
/// that scaling `p0` by a constant never touches the tabulated values.
#[derive(Clone, Debug)]
pub struct Prior {
    shape: PriorShape,
    weight: f64,
}

impl Prior {
    pub fn gaussian(mean: f64, var: f64) -> Self {
        Self {
            shape: PriorShape::Gaussian { mean, var },
            weight: 1.0,
        }
    }

    pub fn point_mass(x: f64) -> Self {
        Self {
            shape: PriorShape::PointMass(x),
            weight: 1.0,
        }
    }

    pub fn custom(
        pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        center: f64,
        scale: f64,
    ) -> Self {
        Self {
            shape: PriorShape::Custom {
                pdf: Arc::new(pdf),
                center,
                scale,
            },
            weight: 1.0,
        }
    }

    /// The same law with total mass multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            weight: self.weight * factor,
        }
    }

    pub fn shape(&self) -> &PriorShape {
        &self.shape
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Unit-weight density value; zero everywhere for a point mass.
    pub fn shape_density(&self, x: f64) -> f64 {
        match &self.shape {
            PriorShape::Gaussian { mean, var } => {
                let d = x - mean;
                (-0.5 * d * d / var).exp() / (2.0 * PI * var).sqrt()
            }
            PriorShape::PointMass(_) => 0.0,
            PriorShape::Custom { pdf, .. } => pdf(x),
        }
    }

    /// `p0(x)` including the weight.
    pub fn density(&self, x: f64) -> f64 {
        self.weight * self.shape_density(x)
    }

    pub fn center(&self) -> f64 {
        match &self.shape {
            PriorShape::Gaussian { mean, .. } => *mean,
            PriorShape::PointMass(x) => *x,
            PriorShape::Custom { center, .. } => *center,
        }
    }

    /// Location of the density maximum (the hint center for custom shapes).
    pub fn mode(&self) -> f64 {
        self.center()
    }

    pub fn std_dev(&self) -> f64 {
        match &self.shape {
            PriorShape::Gaussian { var, .. } => var.sqrt(),
            PriorShape::PointMass(_) => 0.0,
            PriorShape::Custom { scale, .. } => *scale,
        }
    }

    /// Unit-weight shape on the grid, zero outside.
    pub fn tabulate_shape(&self, grid: &SpaceGrid) -> GridField {
        let values = match &self.shape {
            PriorShape::PointMass(x0) => {
                let mut v = vec![0.0; grid.len()];
                let u = ((x0 - grid.x_min()) / grid.dx()).round();
                if u >= 0.0 && (u as usize) < grid.len() {
                    let j = u as usize;
                    v[j] = 1.0 / (grid.dx() * grid.trapezoid_weight(j));
                }
                v
            }
            _ => grid
                .nodes()
                .into_iter()
                .map(|x| self.shape_density(x))
                .collect(),
        };
        GridField::from_parts_unchecked(*grid, values, BoundaryPolicy::Zero)
    }

    /// `p0` including the weight, on the grid.
    pub fn tabulate(&self, grid: &SpaceGrid) -> GridField {
        self.tabulate_shape(grid).scaled(self.weight)
    }
}

/// Coefficients of the filtering problem on `[0, T]`.
#[derive(Clone)]
pub struct FilteringModel {
    name: String,
    drift: TimeStateFn,
    drift_prime: TimeStateFn,
    rho: TimeFn,
    rho_tilde: TimeFn,
    obs: StateFn,
    obs_prime: StateFn,
    obs_second: StateFn,
    prior: Prior,
    horizon: f64,
}

impl fmt::Debug for FilteringModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilteringModel")
            .field("name", &self.name)
            .field("prior", &self.prior)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl FilteringModel {
    /// Builder with `b = 0`, `rho = 1`, `rho~ = 0`, `h = 0` and a standard normal prior.
    pub fn builder(name: impl Into<String>, horizon: f64) -> FilteringModelBuilder {
        FilteringModelBuilder {
            model: FilteringModel {
                name: name.into(),
                drift: Arc::new(|_, _| 0.0),
                drift_prime: Arc::new(|_, _| 0.0),
                rho: Arc::new(|_| 1.0),
                rho_tilde: Arc::new(|_| 0.0),
                obs: Arc::new(|_| 0.0),
                obs_prime: Arc::new(|_| 0.0),
                obs_second: Arc::new(|_| 0.0),
                prior: Prior::gaussian(0.0, 1.0),
                horizon,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    #[inline]
    pub fn drift(&self, t: f64, x: f64) -> f64 {
        (self.drift)(t, x)
    }

    #[inline]
    pub fn drift_prime(&self, t: f64, x: f64) -> f64 {
        (self.drift_prime)(t, x)
    }

    #[inline]
    pub fn rho(&self, t: f64) -> f64 {
        (self.rho)(t)
    }

    #[inline]
    pub fn rho_tilde(&self, t: f64) -> f64 {
        (self.rho_tilde)(t)
    }

    #[inline]
    pub fn obs(&self, x: f64) -> f64 {
        (self.obs)(x)
    }

    #[inline]
    pub fn obs_prime(&self, x: f64) -> f64 {
        (self.obs_prime)(x)
    }

    #[inline]
    pub fn obs_second(&self, x: f64) -> f64 {
        (self.obs_second)(x)
    }

    /// Same coefficients with another initial law.
    pub fn with_prior(&self, prior: Prior) -> Self {
        let mut m = self.clone();
        m.prior = prior;
        m
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        let mut m = self.clone();
        m.horizon = horizon;
        m
    }

    pub(crate) fn sigma_unchecked(&self, t: f64) -> f64 {
        let r = self.rho(t);
        let rt = self.rho_tilde(t);
        (r * r + rt * rt).sqrt()
    }

    /// `sqrt(rho_t^2 + rho~_t^2)`.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(FilterError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let s = self.sigma_unchecked(t);
        if !(s >= SIGMA_FLOOR) {
            return Err(FilterError::DegenerateDiffusion { t, sigma: s });
        }
        Ok(s)
    }

    /// True when `h` vanishes at every probe point of `grid`.
    pub fn is_unobserved(&self, grid: &SpaceGrid) -> bool {
        grid.nodes().into_iter().all(|x| self.obs(x) == 0.0)
    }

    /// Numerical checks of the standing assumptions; empty means valid.
    pub fn validate(&self, grid: &SpaceGrid) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            out.push(Violation::BadHorizon(self.horizon));
            return out;
        }

        for i in 0..=100 {
            let t = self.horizon * i as f64 / 100.0;
            let s = self.sigma_unchecked(t);
            if !s.is_finite() {
                out.push(Violation::NonFinite {
                    what: "sigma",
                    at: t,
                });
                break;
            }
            if s < SIGMA_FLOOR {
                out.push(Violation::DegenerateDiffusion { t });
                break;
            }
        }

        let mass = self
            .prior
            .tabulate(grid)
            .values()
            .iter()
            .enumerate()
            .fold(0.0, |acc, (j, v)| acc + grid.trapezoid_weight(j) * v)
            * grid.dx();
        if !(mass > 0.0 && mass.is_finite()) {
            out.push(Violation::NonPositiveMass(mass));
        }

        let probes: Vec<f64> = (0..DERIVATIVE_PROBES)
            .map(|i| {
                grid.x_min()
                    + (grid.x_max() - grid.x_min()) * (i as f64 + 0.5) / DERIVATIVE_PROBES as f64
            })
            .collect();
        let times = [0.0, 0.5 * self.horizon, self.horizon];

        let mut push_first = |v: Option<Violation>| {
            if let Some(v) = v {
                out.push(v);
            }
        };

        push_first(probes.iter().find_map(|&x| {
            let vals = [
                ("h", self.obs(x)),
                ("h'", self.obs_prime(x)),
                ("h''", self.obs_second(x)),
                ("p0", self.prior.density(x)),
            ];
            vals.iter()
                .find(|(_, v)| !v.is_finite())
                .map(|(what, _)| Violation::NonFinite { what, at: x })
        }));
        push_first(probes.iter().find_map(|&x| {
            times.iter().find_map(|&t| {
                let vals = [("b", self.drift(t, x)), ("b'", self.drift_prime(t, x))];
                vals.iter()
                    .find(|(_, v)| !v.is_finite())
                    .map(|(what, _)| Violation::NonFinite { what, at: x })
            })
        }));

        push_first(check_derivative(
            "h'",
            &probes,
            |x| self.obs(x),
            |x| self.obs_prime(x),
        ));
        push_first(check_derivative(
            "h''",
            &probes,
            |x| self.obs_prime(x),
            |x| self.obs_second(x),
        ));
        for &t in &times {
            let v = check_derivative(
                "b'",
                &probes,
                |x| self.drift(t, x),
                |x| self.drift_prime(t, x),
            );
            if v.is_some() {
                push_first(v);
                break;
            }
        }
        out
    }

    /// `validate`, turned into an error when anything is reported.
    pub fn ensure_valid(&self, grid: &SpaceGrid) -> Result<()> {
        let v = self.validate(grid);
        if v.is_empty() {
            Ok(())
        } else {
            Err(FilterError::InvalidModel(v))
        }
    }
}

fn check_derivative(
    what: &'static str,
    probes: &[f64],
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
) -> Option<Violation> {
    probes.iter().find_map(|&x| {
        let eps = 1e-5 * x.abs().max(1.0);
        let fd = (f(x + eps) - f(x - eps)) / (2.0 * eps);
        let supplied = df(x);
        if !fd.is_finite() || !supplied.is_finite() {
            return None;
        }
        let scale = fd.abs().max(supplied.abs()).max(1.0);
        ((supplied - fd).abs() > DERIVATIVE_RTOL * scale).then_some(Violation::DerivativeMismatch {
            what,
            at: x,
            supplied,
            finite_difference: fd,
        })
    })
}

/// One failed model check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BadHorizon(f64),
    DegenerateDiffusion {
        t: f64,
    },
    NonPositiveMass(f64),
    NonFinite {
        what: &'static str,
        at: f64,
    },
    DerivativeMismatch {
        what: &'static str,
        at: f64,
        supplied: f64,
        finite_difference: f64,
    },
}

impl Violation {
    /// Simulation and particle methods never divide by sigma.
    pub fn blocks_simulation(&self) -> bool {
        !matches!(self, Violation::DegenerateDiffusion { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadHorizon(t) => write!(f, "horizon must be positive, got {t}"),
            Violation::DegenerateDiffusion { t } => write!(f, "degenerate diffusion at t = {t}"),
            Violation::NonPositiveMass(m) => write!(f, "p0 has non-positive mass {m} on the grid"),
            Violation::NonFinite { what, at } => write!(f, "{what} is not finite at {at}"),
            Violation::DerivativeMismatch {
                what,
                at,
                supplied,
                finite_difference,
            } => write!(
                f,
                "derivative mismatch: {what}({at}) = {supplied}, finite difference gives {finite_difference}"
            ),
        }
    }
}

pub struct FilteringModelBuilder {
    model: FilteringModel,
}

impl FilteringModelBuilder {
    pub fn drift(
        mut self,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        b_prime: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.model.drift = Arc::new(b);
        self.model.drift_prime = Arc::new(b_prime);
        self
    }

    pub fn rho(mut self, rho: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.model.rho = Arc::new(rho);
        self
    }

    pub fn rho_tilde(mut self, rho_tilde: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.model.rho_tilde = Arc::new(rho_tilde);
        self
    }

    pub fn observation(
        mut self,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.model.obs = Arc::new(h);
        self.model.obs_prime = Arc::new(h_prime);
        self.model.obs_second = Arc::new(h_second);
        self
    }

    pub fn prior(mut self, prior: Prior) -> Self {
        self.model.prior = prior;
        self
    }

    pub fn build(self) -> FilteringModel {
        self.model
    }
}

/// Uniform time partition `t_n = n T / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps < 2 {
            return Err(FilterError::InvalidTimeGrid(format!(
                "need at least 2 steps, got {n_steps}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(FilterError::InvalidTimeGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    /// Grid with every `factor` steps merged. The result may have a single
    /// step; it is meant for resampled observations, not for the solvers.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(FilterError::NotDivisible {
                factor,
                n_steps: self.n_steps,
            });
        }
        Ok(Self {
            n_steps: self.n_steps / factor,
            dt: self.dt * factor as f64,
        })
    }
}

/// Built-in models.
pub mod zoo {
    use super::*;

    /// Parameters of the linear family `b = a x`, `h = c x`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct LinearParams {
        pub a: f64,
        pub c: f64,
        pub rho: f64,
        pub rho_tilde: f64,
        pub prior_mean: f64,
        pub prior_var: f64,
        pub horizon: f64,
    }

    /// Parameters of the bounded family `b = -k sin x`, `h = c tanh x`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct TanhParams {
        pub drift_amp: f64,
        pub c: f64,
        pub rho: f64,
        pub rho_tilde: f64,
        pub prior_mean: f64,
        pub prior_var: f64,
        pub horizon: f64,
    }

    pub const LINEAR_KB: LinearParams = LinearParams {
        a: -1.0,
        c: 1.0,
        rho: 0.5,
        rho_tilde: 0.0,
        prior_mean: 0.0,
        prior_var: 0.25,
        horizon: 1.0,
    };

    pub const LINEAR_CORRELATED: LinearParams = LinearParams {
        a: -1.0,
        c: 1.0,
        rho: 0.5,
        rho_tilde: 0.3,
        prior_mean: 0.0,
        prior_var: 0.25,
        horizon: 0.5,
    };

    pub const NONLINEAR_TANH: TanhParams = TanhParams {
        drift_amp: 1.0,
        c: 1.0,
        rho: 1.0,
        rho_tilde: 0.0,
        prior_mean: 0.5,
        prior_var: 0.25,
        horizon: 0.5,
    };

    /// Pure diffusion, unobserved: the filter reduces to the heat equation.
    pub const HEAT: LinearParams = LinearParams {
        a: 0.0,
        c: 0.0,
        rho: 1.0,
        rho_tilde: 0.0,
        prior_mean: 0.0,
        prior_var: 0.25,
        horizon: 0.5,
    };

    pub const NAMES: [&str; 4] = ["linear-kb", "linear-corr", "nonlinear-tanh", "heat"];

    pub fn linear(name: &str, p: LinearParams) -> FilteringModel {
        let LinearParams {
            a,
            c,
            rho,
            rho_tilde,
            ..
        } = p;
        FilteringModel::builder(name, p.horizon)
            .drift(move |_, x| a * x, move |_, _| a)
            .rho(move |_| rho)
            .rho_tilde(move |_| rho_tilde)
            .observation(move |x| c * x, move |_| c, |_| 0.0)
            .prior(Prior::gaussian(p.prior_mean, p.prior_var))
            .build()
    }

    pub fn tanh(name: &str, p: TanhParams) -> FilteringModel {
        let TanhParams {
            drift_amp: k,
            c,
            rho,
            rho_tilde,
            ..
        } = p;
        FilteringModel::builder(name, p.horizon)
            .drift(move |_, x| -k * x.sin(), move |_, x| -k * x.cos())
            .rho(move |_| rho)
            .rho_tilde(move |_| rho_tilde)
            .observation(
                move |x| c * x.tanh(),
                move |x| {
                    let s = 1.0 / x.cosh();
                    c * s * s
                },
                move |x| {
                    let s = 1.0 / x.cosh();
                    -2.0 * c * x.tanh() * s * s
                },
            )
            .prior(Prior::gaussian(p.prior_mean, p.prior_var))
            .build()
    }

    pub fn by_name(name: &str) -> Option<FilteringModel> {
        match name {
            "linear-kb" => Some(linear(name, LINEAR_KB)),
            "linear-corr" => Some(linear(name, LINEAR_CORRELATED)),
            "nonlinear-tanh" => Some(tanh(name, NONLINEAR_TANH)),
            "heat" => Some(linear(name, HEAT)),
            _ => None,
        }
    }

    pub fn all() -> Vec<FilteringModel> {
        NAMES.iter().filter_map(|n| by_name(n)).collect()
    }
}

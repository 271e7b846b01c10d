//! Forward evolution of the unnormalized filtering density through the
//! time-inverse doubly stochastic system
//!
//! ```text
//! dX~_t = b_t(X~_t) dt - sigma_t d<-W_t
//! dY~_t = -b'_t Y~_t dt + Z~_t d<-W_t + (h Y~_t - (rho~_t / sigma_t) Z~_t) dV_t
//! ```
//!
//! with `Y~_0 = p0`. Normalized posterior quantities follow from the
//! Kallianpur–Striebel ratio.

use std::io::Write;

use crate::error::{FilterError, Result};
use crate::fksolver::{check_path, RunKey};
use crate::gridquad::{
    weighted_sum, BoundaryPolicy, GridField, QuadratureRule, SpaceGrid, Stencil,
};
use crate::io::fmt17;
use crate::model::{FilteringModel, TimeGrid};
use crate::randpath::PathBundle;

const RESCALE_LOW: f64 = 1e-6;
const RESCALE_HIGH: f64 = 1e6;
const NEGATIVITY_RATIO: f64 = 0.01;

/// Solver switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    /// Keep `max |Y~_n|` inside `[1e-6, 1e6]` by power-of-two rescaling.
    pub rescale: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { rescale: true }
    }
}

/// Recorded when a slice carries more negative mass than the scheme should
/// produce: `min < -0.01 max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativityWarning {
    pub index: usize,
    pub min: f64,
    pub max: f64,
}

/// Output of [`solve_filter`]. The physical density at step `n` is
/// `fields_ybar()[n] * exp(log_scale()[n])`.
#[derive(Debug, Clone)]
pub struct FilterRun {
    time_grid: TimeGrid,
    fields_ybar: Vec<GridField>,
    fields_zbar: Vec<GridField>,
    log_scale: Vec<f64>,
    warnings: Vec<NegativityWarning>,
    key: RunKey,
}

/// Posterior mean and variance. `negative_variance` is set when the
/// variance came out below zero; the value is reported as computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub negative_variance: bool,
}

impl FilterRun {
    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn grid(&self) -> &SpaceGrid {
        self.fields_ybar[0].grid()
    }

    pub fn fields_ybar(&self) -> &[GridField] {
        &self.fields_ybar
    }

    pub fn fields_zbar(&self) -> &[GridField] {
        &self.fields_zbar
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.log_scale
    }

    pub fn warnings(&self) -> &[NegativityWarning] {
        &self.warnings
    }

    pub fn key(&self) -> RunKey {
        self.key
    }

    /// The same run with every density multiplied by `factor > 0`. Only the
    /// log scale changes, so normalized quantities are untouched.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(FilterError::InvalidArgument(format!(
                "scale factor {factor}"
            )));
        }
        let shift = factor.ln();
        let mut out = self.clone();
        out.log_scale.iter_mut().for_each(|s| *s += shift);
        Ok(out)
    }

    fn slice(&self, n: usize) -> Result<&GridField> {
        self.fields_ybar.get(n).ok_or(FilterError::IndexOutOfRange {
            index: n,
            max: self.fields_ybar.len() - 1,
        })
    }

    /// `<Y~_n, 1> exp(log_scale_n)`.
    pub fn mass(&self, n: usize) -> Result<f64> {
        let f = self.slice(n)?;
        let ones = vec![1.0; f.values().len()];
        Ok(weighted_sum(f.grid(), f.values(), &ones) * f.grid().dx() * self.log_scale[n].exp())
    }

    /// Summary CSV: `t, post_mean, post_var, mass, min_density`, one row per step.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,post_mean,post_var,mass,min_density")?;
        for n in 0..self.fields_ybar.len() {
            let m = posterior_moments(self, n)?;
            let min = self.fields_ybar[n].min() * self.log_scale[n].exp();
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt17(self.time_grid.time(n)),
                fmt17(m.mean),
                fmt17(m.variance),
                fmt17(self.mass(n)?),
                fmt17(min)
            )?;
        }
        Ok(())
    }

    /// Density CSV for slice `n`: `x, value, log_scale`.
    pub fn write_density_csv<W: Write>(&self, n: usize, mut out: W) -> Result<()> {
        let f = self.slice(n)?;
        writeln!(out, "x,value,log_scale")?;
        let s = fmt17(self.log_scale[n]);
        for (j, v) in f.values().iter().enumerate() {
            writeln!(out, "{},{},{}", fmt17(f.grid().node(j)), fmt17(*v), s)?;
        }
        Ok(())
    }
}

/// [`solve_filter_with`] using the default options.
pub fn solve_filter(
    model: &FilteringModel,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    obs: &PathBundle,
    rule: &QuadratureRule,
) -> Result<FilterRun> {
    solve_filter_with(model, grid, tgrid, obs, rule, FilterOptions::default())
}

/// Steps `Y~_0 = p0` forward:
///
/// ```text
/// Z~_n     = sigma_n dY~_n/dx
/// Y~_{n+1} = E~[Y~_n] - E~[b'_n Y~_n] dt + (E~[h Y~_n] - (rho~_n / sigma_n) E~[Z~_n]) dV_n
/// ```
///
/// where `E~` averages over `x - b_n(x) dt + sigma_n sqrt(dt) xi`.
pub fn solve_filter_with(
    model: &FilteringModel,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    obs: &PathBundle,
    rule: &QuadratureRule,
    options: FilterOptions,
) -> Result<FilterRun> {
    model.ensure_valid(grid)?;
    check_path(tgrid, obs)?;
    let n_steps = tgrid.n_steps();
    let dt = tgrid.dt();
    let sqrt_dt = dt.sqrt();
    let dv = obs.increments();
    let nodes = grid.nodes();
    let policy = BoundaryPolicy::Zero;

    let mut ys: Vec<GridField> = Vec::with_capacity(n_steps + 1);
    let mut zs: Vec<GridField> = Vec::with_capacity(n_steps + 1);
    let mut log_scale = Vec::with_capacity(n_steps + 1);
    let mut warnings = Vec::new();

    let mut current = model.prior().tabulate_shape(grid);
    let mut scale = model.prior().weight().ln();
    check_negativity(&current, 0, &mut warnings);

    for (n, &dv_n) in dv.iter().enumerate() {
        let t = tgrid.time(n);
        let sigma = model.sigma(t)?;
        let coupling = model.rho_tilde(t) / sigma;
        let z = current.derivative().scaled(sigma);
        let yv = current.values();
        let zv = z.values();
        let spread = sigma * sqrt_dt;

        let mut next = Vec::with_capacity(grid.len());
        for &x in &nodes {
            let center = x - model.drift(t, x) * dt;
            let (mut ey, mut eby, mut ehy, mut ez) = (0.0, 0.0, 0.0, 0.0);
            for (xi, w) in rule.nodes().iter().zip(rule.weights()) {
                let y = center + spread * xi;
                let s = Stencil::at(grid, y, policy);
                let val = s.apply(yv);
                ey += w * val;
                eby += w * model.drift_prime(t, y) * val;
                ehy += w * model.obs(y) * val;
                ez += w * s.apply(zv);
            }
            next.push(ey - eby * dt + (ehy - coupling * ez) * dv_n);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::BlowUp { step: n + 1 });
        }
        log_scale.push(scale);
        if options.rescale {
            let peak = next.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if peak > 0.0 && !(RESCALE_LOW..=RESCALE_HIGH).contains(&peak) {
                // powers of two keep the rescaling exact
                let e = peak.log2().round() as i32;
                let factor = 2f64.powi(-e);
                next.iter_mut().for_each(|v| *v *= factor);
                scale += f64::from(e) * std::f64::consts::LN_2;
            }
        }
        let next = GridField::from_parts_unchecked(*grid, next, policy);
        check_negativity(&next, n + 1, &mut warnings);
        ys.push(std::mem::replace(&mut current, next));
        zs.push(z);
    }
    let sigma_end = model.sigma(tgrid.horizon())?;
    zs.push(current.derivative().scaled(sigma_end));
    ys.push(current);
    log_scale.push(scale);

    Ok(FilterRun {
        time_grid: *tgrid,
        fields_ybar: ys,
        fields_zbar: zs,
        log_scale,
        warnings,
        key: RunKey::new(tgrid, dv),
    })
}

fn check_negativity(f: &GridField, index: usize, warnings: &mut Vec<NegativityWarning>) {
    let (min, max) = (f.min(), f.max());
    if min < -NEGATIVITY_RATIO * max {
        warnings.push(NegativityWarning { index, min, max });
    }
}

/// Normalized posterior expectation `<Y~_n, phi> / <Y~_n, 1>`.
pub fn estimate(run: &FilterRun, n: usize, phi: impl Fn(f64) -> f64) -> Result<f64> {
    let f = run.slice(n)?;
    ratio(f, n, &phi)
}

fn ratio(f: &GridField, n: usize, phi: &impl Fn(f64) -> f64) -> Result<f64> {
    let grid = f.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for (j, y) in f.values().iter().enumerate() {
        let w = grid.trapezoid_weight(j) * y;
        num += w * phi(grid.node(j));
        den += w;
    }
    if !(den > 0.0) {
        return Err(FilterError::ZeroMass {
            index: n,
            mass: den,
        });
    }
    Ok(num / den)
}

/// Posterior mean and variance at step `n`.
pub fn posterior_moments(run: &FilterRun, n: usize) -> Result<Moments> {
    let f = run.slice(n)?;
    let mean = ratio(f, n, &|x| x)?;
    let second = ratio(f, n, &|x| x * x)?;
    let variance = second - mean * mean;
    Ok(Moments {
        mean,
        variance,
        negative_variance: variance < 0.0,
    })
}

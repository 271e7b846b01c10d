//! Backward doubly stochastic solver for the Feynman–Kac representation
//!
//! ```text
//! dX_t = b_t(X_t) dt + sigma_t dW_t
//! -dY_t = -Z_t dW_t + (h(X_t) Y_t + (rho~_t / sigma_t) Z_t) d<-V_t,   Y_T = phi(X_T)
//! ```
//!
//! stepped from `T` down to `0` on a spatial grid with `Z = sigma dY/dx`.
//! `Y_0(x)` equals the conditional expectation of `phi(U_T) Q_T` given the
//! observations and `U_0 = x`.

use std::io::Write;

use crate::error::{FilterError, Result};
use crate::gridquad::{BoundaryPolicy, GridField, QuadratureRule, SpaceGrid, Stencil};
use crate::io::fmt17;
use crate::model::{FilteringModel, TimeGrid};
use crate::randpath::PathBundle;

/// Identifies the inputs a run was computed from so that two runs can be
/// checked for compatibility before they are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    pub n_steps: usize,
    pub dt_bits: u64,
    pub increments_hash: u64,
}

impl RunKey {
    pub(crate) fn new(tgrid: &TimeGrid, dv: &[f64]) -> Self {
        // FNV-1a over the raw increment bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for d in dv {
            for byte in d.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        Self {
            n_steps: tgrid.n_steps(),
            dt_bits: tgrid.dt().to_bits(),
            increments_hash: h,
        }
    }
}

pub(crate) fn check_path(tgrid: &TimeGrid, obs: &PathBundle) -> Result<()> {
    let pg = obs.time_grid();
    if pg.n_steps() != tgrid.n_steps() || (pg.dt() - tgrid.dt()).abs() > 1e-12 * tgrid.dt() {
        return Err(FilterError::PathMismatch {
            path_steps: pg.n_steps(),
            path_dt: pg.dt(),
            grid_steps: tgrid.n_steps(),
            grid_dt: tgrid.dt(),
        });
    }
    Ok(())
}

/// Solution of the backward system; `fields_y()[n]` is `Y_n`.
#[derive(Debug, Clone)]
pub struct FkRun {
    time_grid: TimeGrid,
    fields_y: Vec<GridField>,
    fields_z: Vec<GridField>,
    key: RunKey,
}

impl FkRun {
    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn grid(&self) -> &SpaceGrid {
        self.fields_y[0].grid()
    }

    pub fn fields_y(&self) -> &[GridField] {
        &self.fields_y
    }

    pub fn fields_z(&self) -> &[GridField] {
        &self.fields_z
    }

    pub fn key(&self) -> RunKey {
        self.key
    }

    /// `Y_n(x)` by interpolation.
    pub fn value_at(&self, n: usize, x: f64) -> Result<f64> {
        let f = self.fields_y.get(n).ok_or(FilterError::IndexOutOfRange {
            index: n,
            max: self.fields_y.len() - 1,
        })?;
        Ok(f.interpolate(x))
    }

    /// CSV with columns `x, Y` for slice `n`.
    pub fn write_slice_csv<W: Write>(&self, n: usize, mut out: W) -> Result<()> {
        let f = self.fields_y.get(n).ok_or(FilterError::IndexOutOfRange {
            index: n,
            max: self.fields_y.len() - 1,
        })?;
        writeln!(out, "x,Y")?;
        for (j, v) in f.values().iter().enumerate() {
            writeln!(out, "{},{}", fmt17(f.grid().node(j)), fmt17(*v))?;
        }
        Ok(())
    }
}

/// Steps `Y_N = phi` back to `Y_0`:
///
/// ```text
/// Z_{n+1} = sigma_{n+1} dY_{n+1}/dx
/// Y_n(x)  = E[Y_{n+1}] + (E[h Y_{n+1}] + (rho~_{n+1} / sigma_{n+1}) E[Z_{n+1}]) dV_n
/// ```
///
/// where `E` averages over one Euler step `x + b_n(x) dt + sigma_n sqrt(dt) xi`.
pub fn solve_backward(
    model: &FilteringModel,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    obs: &PathBundle,
    phi: impl Fn(f64) -> f64,
    rule: &QuadratureRule,
) -> Result<FkRun> {
    model.ensure_valid(grid)?;
    check_path(tgrid, obs)?;
    let n_steps = tgrid.n_steps();
    let dt = tgrid.dt();
    let sqrt_dt = dt.sqrt();
    let dv = obs.increments();
    let nodes = grid.nodes();
    let policy = BoundaryPolicy::Clamp;

    let terminal = GridField::from_fn(*grid, policy, phi)
        .map_err(|_| FilterError::BlowUp { step: n_steps })?;
    let mut ys: Vec<GridField> = Vec::with_capacity(n_steps + 1);
    let mut zs: Vec<GridField> = Vec::with_capacity(n_steps + 1);
    ys.push(terminal);

    for n in (0..n_steps).rev() {
        let t0 = tgrid.time(n);
        let t1 = tgrid.time(n + 1);
        let sigma0 = model.sigma(t0)?;
        let sigma1 = model.sigma(t1)?;
        let coupling = model.rho_tilde(t1) / sigma1;
        let y_next = ys.last().unwrap();
        let z_next = y_next.derivative().scaled(sigma1);
        let yv = y_next.values();
        let zv = z_next.values();
        let spread = sigma0 * sqrt_dt;

        let mut out = Vec::with_capacity(grid.len());
        for &x in &nodes {
            let center = x + model.drift(t0, x) * dt;
            let (mut ey, mut ehy, mut ez) = (0.0, 0.0, 0.0);
            for (xi, w) in rule.nodes().iter().zip(rule.weights()) {
                let y = center + spread * xi;
                let s = Stencil::at(grid, y, policy);
                let val = s.apply(yv);
                ey += w * val;
                ehy += w * model.obs(y) * val;
                ez += w * s.apply(zv);
            }
            out.push(ey + (ehy + coupling * ez) * dv[n]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::BlowUp { step: n });
        }
        zs.push(z_next);
        ys.push(GridField::from_parts_unchecked(*grid, out, policy));
    }
    // Z_0 completes the sequence
    let sigma_start = model.sigma(0.0)?;
    zs.push(ys.last().unwrap().derivative().scaled(sigma_start));
    ys.reverse();
    zs.reverse();
    Ok(FkRun {
        time_grid: *tgrid,
        fields_y: ys,
        fields_z: zs,
        key: RunKey::new(tgrid, dv),
    })
}

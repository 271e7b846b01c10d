//! Consistency checks between the backward and forward solvers and the
//! Monte Carlo oracle.

use std::io::Write;

use crate::error::{FilterError, Result};
use crate::fksolver::{solve_backward, FkRun};
use crate::gridquad::{inner_product, QuadratureRule, SpaceGrid};
use crate::io::fmt17;
use crate::model::{FilteringModel, TimeGrid};
use crate::oracles::{unnormalized_ks, Start};
use crate::randpath::PathBundle;
use crate::zakaifilter::FilterRun;

const DEGENERATE_PAIRING: f64 = 1e-12;

/// The pairing `R_n = <Y_n, Y~_n> exp(log_scale_n)`, which is constant in
/// continuous time.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrace {
    pub times: Vec<f64>,
    pub pairing: Vec<f64>,
    /// `max_n |R_n - R_0| / |R_0|`, or `None` when `|R_0| <= 1e-12`.
    pub max_relative_drift: Option<f64>,
}

impl AdjointTrace {
    pub fn is_degenerate(&self) -> bool {
        self.max_relative_drift.is_none()
    }

    /// Trace CSV: `t, R, relative_drift`. The drift column is empty when the
    /// trace is degenerate.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,R,relative_drift")?;
        let r0 = self.pairing[0];
        for (t, r) in self.times.iter().zip(&self.pairing) {
            let drift = if self.is_degenerate() {
                String::new()
            } else {
                fmt17((r - r0).abs() / r0.abs())
            };
            writeln!(out, "{},{},{}", fmt17(*t), fmt17(*r), drift)?;
        }
        Ok(())
    }
}

/// Pairs a backward run with a forward run computed from the same grid and
/// observation increments.
pub fn adjoint_trace(fk: &FkRun, filt: &FilterRun) -> Result<AdjointTrace> {
    if fk.grid() != filt.grid() {
        return Err(FilterError::GridMismatch);
    }
    if fk.key() != filt.key() {
        return Err(FilterError::RunMismatch(
            "time grids or observation increments differ".into(),
        ));
    }
    let mut pairing = Vec::with_capacity(fk.fields_y().len());
    for (n, (y, ybar)) in fk.fields_y().iter().zip(filt.fields_ybar()).enumerate() {
        pairing.push(inner_product(y, ybar)? * filt.log_scale()[n].exp());
    }
    let r0 = pairing[0];
    let max_relative_drift = if r0.abs() > DEGENERATE_PAIRING {
        Some(
            pairing
                .iter()
                .map(|r| (r - r0).abs() / r0.abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok(AdjointTrace {
        times: fk.time_grid().times(),
        pairing,
        max_relative_drift,
    })
}

/// Grid value `Y_0(x0)` against the point-start Monte Carlo estimate of
/// `E[phi(U_T) Q_T | U_0 = x0, F^V_T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeynmanKacReport {
    pub grid_value: f64,
    pub oracle: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_check(
    model: &FilteringModel,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    obs: &PathBundle,
    phi: impl Fn(f64) -> f64 + Sync,
    rule: &QuadratureRule,
    x0: f64,
    n_particles: usize,
    seed: u64,
) -> Result<FeynmanKacReport> {
    if !(x0 > grid.x_min() && x0 < grid.x_max()) {
        return Err(FilterError::InvalidArgument(format!(
            "x0 = {x0} is not interior to [{}, {}]",
            grid.x_min(),
            grid.x_max()
        )));
    }
    let run = solve_backward(model, grid, tgrid, obs, &phi, rule)?;
    let grid_value = run.value_at(0, x0)?;
    let est = unnormalized_ks(model, grid, obs, &phi, n_particles, seed, Start::Point(x0))?;
    Ok(FeynmanKacReport {
        grid_value,
        oracle: est.value,
        std_error: est.std_error,
        z_score: z_score(grid_value, est.value, est.std_error),
    })
}

/// `(a - b) / se`; with a zero standard error, 0 when the sides agree to
/// 1e-8 and infinite otherwise.
pub fn z_score(a: f64, b: f64, se: f64) -> f64 {
    let diff = a - b;
    if se > 0.0 {
        diff / se
    } else if diff.abs() < 1e-8 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridquad::gauss_nodes;
    use crate::model::zoo;
    use crate::randpath::simulate;
    use crate::zakaifilter::solve_filter;

    fn pair(
        model: &FilteringModel,
        n_steps: usize,
        seed: u64,
        phi: impl Fn(f64) -> f64,
    ) -> AdjointTrace {
        let grid = SpaceGrid::auto(model, 401).unwrap();
        let tg = TimeGrid::new(model.horizon(), n_steps).unwrap();
        let obs = simulate(model, &tg, &grid, seed).unwrap();
        let rule = gauss_nodes(8).unwrap();
        let fk = solve_backward(model, &grid, &tg, &obs, phi, &rule).unwrap();
        let filt = solve_filter(model, &grid, &tg, &obs, &rule).unwrap();
        adjoint_trace(&fk, &filt).unwrap()
    }

    #[test]
    fn mass_conservation_special_case() {
        let m = zoo::by_name("heat").unwrap();
        let tr = pair(&m, 500, 1, |_| 1.0);
        assert!(
            tr.max_relative_drift.unwrap() <= 2e-3,
            "{:?}",
            tr.max_relative_drift
        );
    }

    #[test]
    fn zero_terminal_is_degenerate() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let tr = pair(&m, 50, 2, |_| 0.0);
        assert!(tr.is_degenerate());
        assert!(tr.pairing.iter().all(|r| *r == 0.0));
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(','));
    }

    #[test]
    fn trace_endpoints_are_the_pairings_with_data() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let grid = SpaceGrid::auto(&m, 201).unwrap();
        let tg = TimeGrid::new(m.horizon(), 100).unwrap();
        let obs = simulate(&m, &tg, &grid, 3).unwrap();
        let rule = gauss_nodes(8).unwrap();
        let fk = solve_backward(&m, &grid, &tg, &obs, f64::tanh, &rule).unwrap();
        let filt = solve_filter(&m, &grid, &tg, &obs, &rule).unwrap();
        let tr = adjoint_trace(&fk, &filt).unwrap();
        let p0 = m.prior().tabulate(&grid);
        assert_eq!(
            tr.pairing[0],
            inner_product(&p0, &fk.fields_y()[0]).unwrap()
        );
        let last = filt.fields_ybar().last().unwrap();
        let phi = crate::gridquad::GridField::from_fn(
            grid,
            crate::gridquad::BoundaryPolicy::Clamp,
            f64::tanh,
        )
        .unwrap();
        let rn = inner_product(last, &phi).unwrap() * filt.log_scale()[100].exp();
        assert_eq!(*tr.pairing.last().unwrap(), rn);
        assert!(tr.max_relative_drift.unwrap() < 0.05);
    }

    #[test]
    fn traces_depend_on_the_path() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let a = pair(&m, 100, 4, f64::tanh);
        let b = pair(&m, 100, 5, f64::tanh);
        assert_ne!(a.pairing, b.pairing);
        assert!(a.max_relative_drift.unwrap() < 0.05);
        assert!(b.max_relative_drift.unwrap() < 0.05);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let grid = SpaceGrid::auto(&m, 101).unwrap();
        let tg = TimeGrid::new(m.horizon(), 20).unwrap();
        let rule = gauss_nodes(4).unwrap();
        let o1 = simulate(&m, &tg, &grid, 1).unwrap();
        let o2 = simulate(&m, &tg, &grid, 2).unwrap();
        let fk = solve_backward(&m, &grid, &tg, &o1, f64::tanh, &rule).unwrap();
        let filt = solve_filter(&m, &grid, &tg, &o2, &rule).unwrap();
        assert!(matches!(
            adjoint_trace(&fk, &filt),
            Err(FilterError::RunMismatch(_))
        ));
        let other_grid = SpaceGrid::auto(&m, 103).unwrap();
        let filt = solve_filter(&m, &other_grid, &tg, &o1, &rule).unwrap();
        assert!(matches!(
            adjoint_trace(&fk, &filt),
            Err(FilterError::GridMismatch)
        ));
    }

    #[test]
    fn martingale_case_agrees() {
        let m = zoo::by_name("heat").unwrap();
        let grid = SpaceGrid::new(-8.0, 8.0, 401).unwrap();
        let tg = TimeGrid::new(m.horizon(), 200).unwrap();
        let obs = simulate(&m, &tg, &grid, 6).unwrap();
        let rule = gauss_nodes(8).unwrap();
        let r = feynman_kac_check(&m, &grid, &tg, &obs, |x| x, &rule, 0.4, 20_000, 7).unwrap();
        assert!((r.grid_value - 0.4).abs() < 1e-8);
        assert!(r.z_score.abs() <= 3.0, "{r:?}");
        let r = feynman_kac_check(&m, &grid, &tg, &obs, |_| 1.0, &rule, 0.4, 1_000, 7).unwrap();
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.z_score, 0.0);
    }

    #[test]
    fn exterior_start_is_rejected() {
        let m = zoo::by_name("heat").unwrap();
        let grid = SpaceGrid::new(-1.0, 1.0, 101).unwrap();
        let tg = TimeGrid::new(m.horizon(), 10).unwrap();
        let obs = simulate(&m, &tg, &grid, 1).unwrap();
        let r = feynman_kac_check(
            &m,
            &grid,
            &tg,
            &obs,
            |x| x,
            &gauss_nodes(4).unwrap(),
            1.0,
            1000,
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn z_score_conventions() {
        assert_eq!(z_score(1.0, 1.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.0, 0.0), f64::INFINITY);
        assert_eq!(z_score(0.0, 1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(z_score(2.0, 1.0, 0.5), 2.0);
    }
}

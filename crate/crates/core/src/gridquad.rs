//! Uniform spatial grids and the numerical kernel shared by both solvers:
//! Catmull–Rom interpolation, grid differentiation, trapezoid inner products
//! and one-step Gaussian conditional expectations evaluated by Gauss–Hermite
//! quadrature.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{FilterError, Result};
use crate::io::fmt17;
use crate::model::FilteringModel;

/// Default node count of an automatically sized grid.
pub const DEFAULT_NODES: usize = 401;
/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_QUAD_NODES: usize = 8;

/// Uniform grid `x_j = x_min + j * dx`, `j = 0..m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    m: usize,
    dx: f64,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, m: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(FilterError::InvalidSpaceGrid(format!(
                "need finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if m < 8 {
            return Err(FilterError::InvalidSpaceGrid(format!(
                "need at least 8 nodes, got {m}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            m,
            dx: (x_max - x_min) / (m - 1) as f64,
        })
    }

    /// Grid covering `center ± 8 (sd(p0) + sigma_max sqrt(T))`.
    pub fn auto(model: &FilteringModel, m: usize) -> Result<Self> {
        let center = model.prior().center();
        let sd = model.prior().std_dev();
        let sigma_max = (0..=100)
            .map(|i| model.sigma_unchecked(model.horizon() * i as f64 / 100.0))
            .fold(0.0_f64, f64::max);
        let mut half = 8.0 * (sd + sigma_max * model.horizon().sqrt());
        if !(half > 0.0) {
            half = 1.0;
        }
        Self::new(center - half, center + half, m)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.node(j)).collect()
    }

    /// Trapezoid weight of node `j` in units of `dx`.
    #[inline]
    pub(crate) fn trapezoid_weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.m {
            0.5
        } else {
            1.0
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

/// How a field is continued outside `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPolicy {
    /// Vanishes outside the grid (densities).
    Zero,
    /// Takes the nearest boundary node value (value functions).
    Clamp,
}

/// Interpolation weights for one evaluation point. Indexes four consecutive
/// nodes starting at `base`; ghost nodes at the grid ends are folded in by
/// linear extrapolation.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stencil {
    Zero,
    Node(usize),
    Cubic { base: usize, w: [f64; 4] },
}

impl Stencil {
    pub(crate) fn at(grid: &SpaceGrid, x: f64, policy: BoundaryPolicy) -> Stencil {
        let m = grid.m;
        if x < grid.x_min || x > grid.x_max || x.is_nan() {
            return match policy {
                BoundaryPolicy::Zero => Stencil::Zero,
                BoundaryPolicy::Clamp => {
                    if x < grid.x_min {
                        Stencil::Node(0)
                    } else {
                        Stencil::Node(m - 1)
                    }
                }
            };
        }
        let u = (x - grid.x_min) / grid.dx;
        let nearest = u.round();
        if (u - nearest).abs() < 1e-9 {
            return Stencil::Node((nearest as usize).min(m - 1));
        }
        let j = (u.floor() as usize).min(m - 2);
        let t = u - j as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let wm = 0.5 * (-t3 + 2.0 * t2 - t);
        let w0 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
        let w1 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
        let w2 = 0.5 * (t3 - t2);
        if j == 0 {
            // f_{-1} = 2 f_0 - f_1
            Stencil::Cubic {
                base: 0,
                w: [w0 + 2.0 * wm, w1 - wm, w2, 0.0],
            }
        } else if j + 2 == m {
            // f_m = 2 f_{m-1} - f_{m-2}
            Stencil::Cubic {
                base: m - 4,
                w: [0.0, wm, w0 - w2, w1 + 2.0 * w2],
            }
        } else {
            Stencil::Cubic {
                base: j - 1,
                w: [wm, w0, w1, w2],
            }
        }
    }

    #[inline]
    pub(crate) fn apply(&self, values: &[f64]) -> f64 {
        match *self {
            Stencil::Zero => 0.0,
            Stencil::Node(j) => values[j],
            Stencil::Cubic { base, w } => {
                w[0] * values[base]
                    + w[1] * values[base + 1]
                    + w[2] * values[base + 2]
                    + w[3] * values[base + 3]
            }
        }
    }
}

/// Values of a scalar function on a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: SpaceGrid,
    values: Vec<f64>,
    policy: BoundaryPolicy,
}

impl GridField {
    pub fn new(grid: SpaceGrid, values: Vec<f64>, policy: BoundaryPolicy) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FilterError::InvalidArgument(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FilterError::NonFinite { index, value });
        }
        Ok(Self {
            grid,
            values,
            policy,
        })
    }

    /// Samples `f` at every node. Fails if `f` returns a non-finite value.
    pub fn from_fn(
        grid: SpaceGrid,
        policy: BoundaryPolicy,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let values = (0..grid.len()).map(|j| f(grid.node(j))).collect();
        Self::new(grid, values, policy)
    }

    pub(crate) fn from_parts_unchecked(
        grid: SpaceGrid,
        values: Vec<f64>,
        policy: BoundaryPolicy,
    ) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid,
            values,
            policy,
        }
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn policy(&self) -> BoundaryPolicy {
        self.policy
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cubic Catmull–Rom interpolation; outside the grid the boundary policy applies.
    pub fn interpolate(&self, x: f64) -> f64 {
        Stencil::at(&self.grid, x, self.policy).apply(&self.values)
    }

    /// Central differences in the interior, second-order one-sided at the ends.
    pub fn derivative(&self) -> GridField {
        let v = &self.values;
        let m = v.len();
        let inv2 = 0.5 / self.grid.dx;
        let mut d = vec![0.0; m];
        d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv2;
        d[m - 1] = (3.0 * v[m - 1] - 4.0 * v[m - 2] + v[m - 3]) * inv2;
        for j in 1..m - 1 {
            d[j] = (v[j + 1] - v[j - 1]) * inv2;
        }
        GridField::from_parts_unchecked(self.grid, d, self.policy)
    }

    /// Pointwise product with `scale` applied to every value.
    pub fn scaled(&self, scale: f64) -> GridField {
        GridField::from_parts_unchecked(
            self.grid,
            self.values.iter().map(|v| v * scale).collect(),
            self.policy,
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt17(self.grid.node(j)), fmt17(*v))?;
        }
        Ok(())
    }
}

/// Trapezoid rule on the common grid of `f` and `g`.
pub fn inner_product(f: &GridField, g: &GridField) -> Result<f64> {
    if f.grid != g.grid {
        return Err(FilterError::GridMismatch);
    }
    Ok(weighted_sum(&f.grid, &f.values, &g.values) * f.grid.dx)
}

/// `sum_j' a_j b_j` with half weights at the ends (no `dx` factor).
pub(crate) fn weighted_sum(grid: &SpaceGrid, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        s += grid.trapezoid_weight(j) * x * y;
    }
    s
}

/// Gauss–Hermite rule for the standard normal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(mean + sd * xi)]` for standard normal `xi`.
    pub fn expect(&self, mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(xi, w)| w * f(mean + sd * xi))
            .sum()
    }
}

/// Gauss–Hermite nodes and weights transformed to the standard normal
/// measure; exact for polynomials of degree `<= 2k - 1`.
pub fn gauss_nodes(k: usize) -> Result<QuadratureRule> {
    if !(1..=64).contains(&k) {
        return Err(FilterError::QuadratureRange(k));
    }
    // Newton iteration on orthonormal physicists' Hermite polynomials.
    let n = k;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == n / 2 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let total: f64 = w.iter().sum();
    let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v / total).collect();
    nodes.reverse();
    weights.reverse();
    Ok(QuadratureRule { nodes, weights })
}

/// `E[f(X)]` with `X = x + b dt + sigma sqrt(dt) xi` (one forward Euler step).
pub fn cond_exp_forward(
    field: &GridField,
    x: f64,
    b_val: f64,
    sigma_val: f64,
    dt: f64,
    rule: &QuadratureRule,
) -> f64 {
    rule.expect(x + b_val * dt, sigma_val * dt.sqrt(), |y| {
        field.interpolate(y)
    })
}

/// `E[f(X)]` with `X = x - b dt + sigma sqrt(dt) xi` (one step of the
/// time-reversed flow driven by a backward Itô integral).
pub fn cond_exp_backward(
    field: &GridField,
    x: f64,
    b_val: f64,
    sigma_val: f64,
    dt: f64,
    rule: &QuadratureRule,
) -> f64 {
    rule.expect(x - b_val * dt, sigma_val * dt.sqrt(), |y| {
        field.interpolate(y)
    })
}

/// Piecewise-linear inverse CDF of a nonnegative density tabulated on a grid.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    grid: SpaceGrid,
    cumulative: Vec<f64>,
}

impl InverseCdf {
    pub fn new(grid: SpaceGrid, density: &[f64]) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(density.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for j in 1..density.len() {
            let a = density[j - 1].max(0.0);
            let b = density[j].max(0.0);
            acc += 0.5 * (a + b) * grid.dx();
            cumulative.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(FilterError::ZeroMass {
                index: 0,
                mass: acc,
            });
        }
        Ok(Self { grid, cumulative })
    }

    /// Maps `u` in `(0, 1)` to a state.
    pub fn sample(&self, u: f64) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let target = u * total;
        let j = self.cumulative.partition_point(|c| *c <= target);
        let j = j.clamp(1, self.cumulative.len() - 1);
        let lo = self.cumulative[j - 1];
        let hi = self.cumulative[j];
        let frac = if hi > lo {
            (target - lo) / (hi - lo)
        } else {
            0.5
        };
        self.grid.node(j - 1) + frac.clamp(0.0, 1.0) * self.grid.dx()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(m: usize) -> SpaceGrid {
        SpaceGrid::new(0.0, 1.0, m).unwrap()
    }

    #[test]
    fn grid_rejects_bad_bounds() {
        assert!(SpaceGrid::new(1.0, 1.0, 10).is_err());
        assert!(SpaceGrid::new(0.0, 1.0, 7).is_err());
        assert!(SpaceGrid::new(f64::NAN, 1.0, 10).is_err());
    }

    #[test]
    fn field_rejects_nan() {
        let g = unit_grid(8);
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(
            GridField::new(g, v, BoundaryPolicy::Zero),
            Err(FilterError::NonFinite { index: 3, .. })
        ));
    }

    #[test]
    fn interpolation_is_exact_on_nodes() {
        let g = SpaceGrid::new(-2.0, 3.0, 41).unwrap();
        let f = GridField::from_fn(g, BoundaryPolicy::Zero, |x| (3.0 * x).sin() + x * x).unwrap();
        for j in 0..g.len() {
            assert_eq!(f.interpolate(g.node(j)), f.values()[j]);
        }
    }

    #[test]
    fn interpolation_reproduces_linears() {
        let g = unit_grid(11);
        let f = GridField::from_fn(g, BoundaryPolicy::Zero, |x| 2.0 * x + 1.0).unwrap();
        assert_abs_diff_eq!(f.interpolate(0.37), 1.74, epsilon = 1e-12);
        // first and last cells use ghost nodes
        assert_abs_diff_eq!(f.interpolate(0.03), 1.06, epsilon = 1e-12);
        assert_abs_diff_eq!(f.interpolate(0.97), 2.94, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_reproduces_quadratics_in_the_interior() {
        let g = unit_grid(21);
        let f = GridField::from_fn(g, BoundaryPolicy::Zero, |x| x * x - x).unwrap();
        for &x in &[0.11, 0.5123, 0.77] {
            assert_abs_diff_eq!(f.interpolate(x), x * x - x, epsilon = 1e-13);
        }
    }

    #[test]
    fn boundary_policies() {
        let g = unit_grid(11);
        let z = GridField::from_fn(g, BoundaryPolicy::Zero, |x| x + 5.0).unwrap();
        assert_eq!(z.interpolate(2.0), 0.0);
        assert_eq!(z.interpolate(-0.5), 0.0);
        let c = GridField::from_fn(g, BoundaryPolicy::Clamp, |x| x + 5.0).unwrap();
        assert_eq!(c.interpolate(2.0), c.values()[10]);
        assert_eq!(c.interpolate(-0.5), 5.0);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = unit_grid(16);
        let f = GridField::from_fn(g, BoundaryPolicy::Clamp, |_| 3.5).unwrap();
        assert!(f.derivative().values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn derivative_exact_for_quadratics() {
        let g = unit_grid(101);
        let f = GridField::from_fn(g, BoundaryPolicy::Zero, |x| x * x).unwrap();
        let d = f.derivative();
        assert_abs_diff_eq!(d.values()[50], 1.0, epsilon = 1e-10);
        // one-sided stencils are also second order
        assert_abs_diff_eq!(d.values()[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(d.values()[100], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn derivative_of_sine_within_taylor_bound() {
        let g = SpaceGrid::new(0.0, PI, 201).unwrap();
        let f = GridField::from_fn(g, BoundaryPolicy::Zero, f64::sin).unwrap();
        let d = f.derivative();
        let dx = g.dx();
        let bound = dx * dx / 6.0 * 1.01;
        // The bound is the central-difference remainder max|f'''| dx^2 / 6.
        for j in 1..g.len() - 1 {
            assert!((d.values()[j] - g.node(j).cos()).abs() <= bound);
        }
    }

    #[test]
    fn inner_products() {
        let g = unit_grid(17);
        let one = GridField::from_fn(g, BoundaryPolicy::Zero, |_| 1.0).unwrap();
        let lin = GridField::from_fn(g, BoundaryPolicy::Zero, |x| x).unwrap();
        assert_eq!(inner_product(&one, &one).unwrap(), 1.0);
        assert_abs_diff_eq!(inner_product(&one, &lin).unwrap(), 0.5, epsilon = 1e-15);

        let gs = SpaceGrid::new(0.0, PI, 201).unwrap();
        let s = GridField::from_fn(gs, BoundaryPolicy::Zero, f64::sin).unwrap();
        assert_abs_diff_eq!(inner_product(&s, &s).unwrap(), PI / 2.0, epsilon = 1e-4);

        let other = GridField::from_fn(unit_grid(18), BoundaryPolicy::Zero, |_| 1.0).unwrap();
        assert!(matches!(
            inner_product(&one, &other),
            Err(FilterError::GridMismatch)
        ));
    }

    #[test]
    fn gauss_rules_small_cases() {
        let r1 = gauss_nodes(1).unwrap();
        assert_eq!(r1.nodes(), &[0.0]);
        assert_abs_diff_eq!(r1.weights()[0], 1.0, epsilon = 1e-15);

        // The 2-point rule matching moments 1, 0, 1 has nodes +-1 and weights 1/2.
        let r2 = gauss_nodes(2).unwrap();
        assert_abs_diff_eq!(r2.nodes()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r2.nodes()[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r2.weights()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r2.weights()[1], 0.5, epsilon = 1e-14);

        let r5 = gauss_nodes(5).unwrap();
        let m4: f64 = r5
            .nodes()
            .iter()
            .zip(r5.weights())
            .map(|(x, w)| w * x.powi(4))
            .sum();
        assert_abs_diff_eq!(m4, 3.0, epsilon = 1e-10);

        assert!(matches!(
            gauss_nodes(0),
            Err(FilterError::QuadratureRange(0))
        ));
        assert!(matches!(
            gauss_nodes(65),
            Err(FilterError::QuadratureRange(65))
        ));
    }

    #[test]
    fn gauss_rules_moment_invariants() {
        for k in 1..=64 {
            let r = gauss_nodes(k).unwrap();
            let s0: f64 = r.weights().iter().sum();
            let s1: f64 = r.nodes().iter().zip(r.weights()).map(|(x, w)| w * x).sum();
            let s2: f64 = r
                .nodes()
                .iter()
                .zip(r.weights())
                .map(|(x, w)| w * x * x)
                .sum();
            assert!((s0 - 1.0).abs() < 1e-12, "k={k} sum {s0}");
            assert!(s1.abs() < 1e-12, "k={k} mean {s1}");
            if k >= 2 {
                assert!((s2 - 1.0).abs() < 1e-10, "k={k} var {s2}");
            }
        }
    }

    /// `E[(mu + s xi)^p]` by binomial expansion against the normal moments
    /// `E[xi^{2q}] = (2q-1)!!`.
    fn normal_monomial_moment(mu: f64, s: f64, p: u32) -> f64 {
        let mut total = 0.0;
        for i in 0..=p {
            if i % 2 == 1 {
                continue;
            }
            let binom = (0..i).fold(1.0, |acc, r| acc * (p - r) as f64 / (r + 1) as f64);
            let dfact = (1..i).step_by(2).fold(1.0, |acc, r| acc * r as f64);
            total += binom * mu.powi((p - i) as i32) * s.powi(i as i32) * dfact;
        }
        total
    }

    #[test]
    fn quadrature_exactness_against_closed_form_moments() {
        for k in [1usize, 2, 3, 5, 8, 12] {
            let r = gauss_nodes(k).unwrap();
            for p in 0..(2 * k as u32) {
                let (x, b, sig, dt) = (0.3, -0.7, 1.3, 0.04);
                let fwd = r.expect(x + b * dt, sig * dt.sqrt(), |y| y.powi(p as i32));
                let exact = normal_monomial_moment(x + b * dt, sig * dt.sqrt(), p);
                assert!(
                    (fwd - exact).abs() < 1e-9 * exact.abs().max(1.0),
                    "k={k} p={p}"
                );
            }
        }
    }

    #[test]
    fn conditional_expectations() {
        let g = SpaceGrid::new(-3.0, 3.0, 121).unwrap();
        let rule = gauss_nodes(8).unwrap();
        let lin = GridField::from_fn(g, BoundaryPolicy::Clamp, |x| x).unwrap();
        let quad = GridField::from_fn(g, BoundaryPolicy::Clamp, |x| x * x).unwrap();
        let wavy = GridField::from_fn(g, BoundaryPolicy::Clamp, |x| x.sin()).unwrap();

        assert_eq!(
            cond_exp_forward(&wavy, 0.2, 1.5, 0.0, 0.1, &rule),
            wavy.interpolate(0.2 + 0.15)
        );
        assert_eq!(
            cond_exp_backward(&wavy, 0.2, 1.5, 0.0, 0.1, &rule),
            wavy.interpolate(0.2 - 0.15)
        );
        assert_abs_diff_eq!(
            cond_exp_forward(&lin, 0.0, 1.0, 1.0, 0.1, &rule),
            0.1,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cond_exp_backward(&lin, 0.0, 1.0, 1.0, 0.1, &rule),
            -0.1,
            epsilon = 1e-12
        );
        let f = cond_exp_forward(&quad, 0.0, 0.0, 1.0, 0.04, &rule);
        assert_abs_diff_eq!(f, 0.04, epsilon = 1e-10);
        let b = cond_exp_backward(&quad, 0.0, 0.0, 1.0, 0.04, &rule);
        assert_abs_diff_eq!(f, b, epsilon = 1e-15);
    }

    #[test]
    fn inverse_cdf_of_uniform_density() {
        let g = unit_grid(11);
        let table = InverseCdf::new(g, &[1.0; 11]).unwrap();
        assert_abs_diff_eq!(table.sample(0.25), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(table.sample(0.9), 0.9, epsilon = 1e-12);
        assert!(InverseCdf::new(g, &[0.0; 11]).is_err());
    }
}

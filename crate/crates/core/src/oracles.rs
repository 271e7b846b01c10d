//! Reference solutions: the Kalman–Bucy filter for linear Gaussian models and
//! a Kallianpur–Striebel importance sampler for everything else.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{FilterError, Result};
use crate::gridquad::SpaceGrid;
use crate::io::fmt17;
use crate::model::{FilteringModel, TimeGrid};
use crate::randpath::{initial_sampler, PathBundle};

/// Particle `i` draws from ChaCha8 stream `PARTICLE_STREAM_BASE + i` of the seed.
const PARTICLE_STREAM_BASE: u64 = 1 << 32;
const MIN_PARTICLES: usize = 100;
const DEGENERATE_ESS_RATIO: f64 = 0.01;

/// Conditional mean and variance of a linear Gaussian filter on the
/// observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBucyPath {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl KalmanBucyPath {
    /// Summary CSV in the same column layout as the grid filter; `mass` is 1
    /// and `min_density` is 0.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,post_mean,post_var,mass,min_density")?;
        for ((t, m), p) in self.times.iter().zip(&self.mean).zip(&self.variance) {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt17(*t),
                fmt17(*m),
                fmt17(*p),
                fmt17(1.0),
                fmt17(0.0)
            )?;
        }
        Ok(())
    }
}

/// Kalman–Bucy filter for `dU = aU dt + rho dW`, `dV = cU dt + dB`.
///
/// The Riccati equation `P' = 2aP + rho^2 - c^2 P^2` is integrated with RK4
/// and the mean with the exact exponential of its linear part over each step:
/// `m <- e^{(a - c^2 P) dt} m + P c dV`, with `P` at the step midpoint.
pub fn kalman_bucy(a: f64, c: f64, rho: f64, m0: f64, p0: f64, obs: &PathBundle) -> KalmanBucyPath {
    let tg = obs.time_grid();
    let dt = tg.dt();
    let riccati = |p: f64| 2.0 * a * p + rho * rho - c * c * p * p;
    let n = tg.n_steps();
    let mut mean = Vec::with_capacity(n + 1);
    let mut variance = Vec::with_capacity(n + 1);
    mean.push(m0);
    variance.push(p0);
    let (mut m, mut p) = (m0, p0);
    for dv in obs.increments() {
        let k1 = riccati(p);
        let k2 = riccati(p + 0.5 * dt * k1);
        let k3 = riccati(p + 0.5 * dt * k2);
        let k4 = riccati(p + dt * k3);
        let p_next = p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let p_mid = p + 0.5 * dt * k2;
        let decay = ((a - c * c * p_mid) * dt).exp();
        m = decay * m + p_mid * c * dv;
        p = p_next;
        mean.push(m);
        variance.push(p);
    }
    KalmanBucyPath {
        times: tg.times(),
        mean,
        variance,
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_particles: usize,
    pub effective_sample_size: f64,
    /// Set when the effective sample size fell below 1% of the particles.
    pub degenerate_weights: bool,
}

/// Where the particles start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    /// Draw `U_0` from the model prior (tabulated on the grid for sampling).
    Prior,
    /// Start every particle at `x0`.
    Point(f64),
}

struct Particle {
    phi: f64,
    log_w: f64,
}

/// Simulates particles under the reference measure, where `V` is a Brownian
/// driver and `dB = dV - h dt`:
///
/// ```text
/// dU = (b - rho~ h) dt + rho dW + rho~ dV
/// log w = sum h(U_n) dV_n - 1/2 h(U_n)^2 dt
/// ```
fn run_particles(
    model: &FilteringModel,
    grid: &SpaceGrid,
    obs: &PathBundle,
    phi: &(impl Fn(f64) -> f64 + Sync),
    n_particles: usize,
    seed: u64,
    start: Start,
) -> Result<Vec<Particle>> {
    if n_particles < MIN_PARTICLES {
        return Err(FilterError::InvalidArgument(format!(
            "at least {MIN_PARTICLES} particles required, got {n_particles}"
        )));
    }
    let tg: &TimeGrid = obs.time_grid();
    let dt = tg.dt();
    let sqrt_dt = dt.sqrt();
    let dv = obs.increments();
    let n_steps = tg.n_steps();
    let coeffs: Vec<(f64, f64, f64)> = (0..n_steps)
        .map(|k| {
            let t = tg.time(k);
            (t, model.rho(t), model.rho_tilde(t))
        })
        .collect();
    let sampler = match start {
        Start::Prior => Some(initial_sampler(model, grid)?),
        Start::Point(_) => None,
    };
    let particles = (0..n_particles as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(PARTICLE_STREAM_BASE + i);
            let mut u = match (&sampler, start) {
                (Some(s), _) => s.draw(rng.random_range(f64::EPSILON..1.0)),
                (None, Start::Point(x)) => x,
                (None, Start::Prior) => unreachable!(),
            };
            let mut log_w = 0.0;
            for (k, &(t, rho, rho_tilde)) in coeffs.iter().enumerate() {
                let h = model.obs(u);
                log_w += h * dv[k] - 0.5 * h * h * dt;
                let xi: f64 = rng.sample(StandardNormal);
                let dw = xi * sqrt_dt;
                u += (model.drift(t, u) - rho_tilde * h) * dt + rho * dw + rho_tilde * dv[k];
            }
            Particle { phi: phi(u), log_w }
        })
        .collect();
    Ok(particles)
}

/// Weights `exp(log_w - shift)` with the largest log-weight as shift, plus the shift.
fn normalized_weights(ps: &[Particle]) -> (Vec<f64>, f64) {
    let shift = ps.iter().map(|p| p.log_w).fold(f64::NEG_INFINITY, f64::max);
    (ps.iter().map(|p| (p.log_w - shift).exp()).collect(), shift)
}

fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    (s * s / s2).min(w.len() as f64)
}

/// Normalized estimate `sum w phi(U_T) / sum w` with a delta-method standard error.
pub fn ks_monte_carlo(
    model: &FilteringModel,
    grid: &SpaceGrid,
    obs: &PathBundle,
    phi: impl Fn(f64) -> f64 + Sync,
    n_particles: usize,
    seed: u64,
    start: Start,
) -> Result<KSEstimate> {
    let ps = run_particles(model, grid, obs, &phi, n_particles, seed, start)?;
    let (w, _) = normalized_weights(&ps);
    let sw: f64 = w.iter().sum();
    let value = w.iter().zip(&ps).map(|(w, p)| w * p.phi).sum::<f64>() / sw;
    let n = ps.len() as f64;
    // Var(ratio) ~ sum w_i^2 (phi_i - value)^2 / (sum w)^2
    let num: f64 = w
        .iter()
        .zip(&ps)
        .map(|(w, p)| (w * (p.phi - value)).powi(2))
        .sum();
    let std_error = (num / (sw * sw) * n / (n - 1.0)).sqrt();
    let e = ess(&w);
    Ok(KSEstimate {
        value,
        std_error,
        n_particles: ps.len(),
        effective_sample_size: e,
        degenerate_weights: e < DEGENERATE_ESS_RATIO * n,
    })
}

/// Unnormalized estimate `sum w phi(U_T) / n` of `E~[phi(U_T) Q_T | F^V_T]`,
/// with standard error `std / sqrt(n)`.
pub fn unnormalized_ks(
    model: &FilteringModel,
    grid: &SpaceGrid,
    obs: &PathBundle,
    phi: impl Fn(f64) -> f64 + Sync,
    n_particles: usize,
    seed: u64,
    start: Start,
) -> Result<KSEstimate> {
    let ps = run_particles(model, grid, obs, &phi, n_particles, seed, start)?;
    let (w, shift) = normalized_weights(&ps);
    let n = ps.len() as f64;
    let terms: Vec<f64> = w.iter().zip(&ps).map(|(w, p)| w * p.phi).collect();
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scale = shift.exp();
    let e = ess(&w);
    Ok(KSEstimate {
        value: mean * scale,
        std_error: (var / n).sqrt() * scale,
        n_particles: ps.len(),
        effective_sample_size: e,
        degenerate_weights: e < DEGENERATE_ESS_RATIO * n,
    })
}

/// Particles per reduction chunk; chunk results are combined in index order
/// so sums do not depend on the thread count.
const CHUNK: usize = 1024;

/// Weighted particle moments at every observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct KSSummary {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Average weight, an estimate of the unnormalized total mass.
    pub mass: Vec<f64>,
    pub effective_sample_size: Vec<f64>,
}

impl KSSummary {
    /// Summary CSV in the grid filter layout; `min_density` is 0.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,post_mean,post_var,mass,min_density")?;
        for n in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt17(self.times[n]),
                fmt17(self.mean[n]),
                fmt17(self.variance[n]),
                fmt17(self.mass[n]),
                fmt17(0.0)
            )?;
        }
        Ok(())
    }
}

/// Runs the particle system of [`ks_monte_carlo`] from the prior and records
/// the normalized mean and variance of the state at every time index.
pub fn ks_summary(
    model: &FilteringModel,
    grid: &SpaceGrid,
    obs: &PathBundle,
    n_particles: usize,
    seed: u64,
) -> Result<KSSummary> {
    if n_particles < MIN_PARTICLES {
        return Err(FilterError::InvalidArgument(format!(
            "at least {MIN_PARTICLES} particles required, got {n_particles}"
        )));
    }
    let tg = obs.time_grid();
    let dt = tg.dt();
    let sqrt_dt = dt.sqrt();
    let dv = obs.increments();
    let len = tg.n_steps() + 1;
    let sampler = initial_sampler(model, grid)?;
    // per time index: sum w, sum w x, sum w x^2, sum w^2
    let chunks: Vec<Vec<[f64; 4]>> = (0..n_particles.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![[0.0; 4]; len];
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n_particles) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(PARTICLE_STREAM_BASE + i as u64);
                let mut u = sampler.draw(rng.random_range(f64::EPSILON..1.0));
                let mut log_w: f64 = 0.0;
                for (k, slot) in acc.iter_mut().enumerate() {
                    let w = log_w.exp();
                    slot[0] += w;
                    slot[1] += w * u;
                    slot[2] += w * u * u;
                    slot[3] += w * w;
                    if k + 1 == len {
                        break;
                    }
                    let t = tg.time(k);
                    let h = model.obs(u);
                    log_w += h * dv[k] - 0.5 * h * h * dt;
                    let xi: f64 = rng.sample(StandardNormal);
                    u += (model.drift(t, u) - model.rho_tilde(t) * h) * dt
                        + model.rho(t) * xi * sqrt_dt
                        + model.rho_tilde(t) * dv[k];
                }
            }
            acc
        })
        .collect();
    let mut total = vec![[0.0; 4]; len];
    for chunk in &chunks {
        for (t, c) in total.iter_mut().zip(chunk) {
            for q in 0..4 {
                t[q] += c[q];
            }
        }
    }
    let n = n_particles as f64;
    let mut out = KSSummary {
        times: tg.times(),
        mean: Vec::with_capacity(len),
        variance: Vec::with_capacity(len),
        mass: Vec::with_capacity(len),
        effective_sample_size: Vec::with_capacity(len),
    };
    for [sw, sx, sxx, sww] in total {
        let mean = sx / sw;
        out.mean.push(mean);
        out.variance.push(sxx / sw - mean * mean);
        out.mass.push(sw / n);
        out.effective_sample_size.push((sw * sw / sww).min(n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zoo, Prior};
    use crate::randpath::simulate;

    fn path(model: &FilteringModel, n: usize, seed: u64) -> (SpaceGrid, PathBundle) {
        let grid = SpaceGrid::auto(model, 401).unwrap();
        let tg = TimeGrid::new(model.horizon(), n).unwrap();
        let obs = simulate(model, &tg, &grid, seed).unwrap();
        (grid, obs)
    }

    fn empty_path(horizon: f64, n: usize) -> PathBundle {
        PathBundle::from_increments(TimeGrid::new(horizon, n).unwrap(), vec![0.0; n]).unwrap()
    }

    #[test]
    fn kalman_bucy_unobserved_matches_closed_form() {
        let (a, rho, m0, p0, t) = (-0.7, 0.9, 1.3, 0.4, 1.0);
        let kb = kalman_bucy(a, 0.0, rho, m0, p0, &empty_path(t, 10_000));
        let mean = m0 * (a * t).exp();
        let p = p0 * (2.0 * a * t).exp() + rho * rho * ((2.0 * a * t).exp() - 1.0) / (2.0 * a);
        assert!((kb.mean.last().unwrap() - mean).abs() < 1e-6);
        assert!((kb.variance.last().unwrap() - p).abs() < 1e-6);
    }

    #[test]
    fn kalman_bucy_steady_state() {
        let kb = kalman_bucy(-1.0, 1.0, 1.0, 0.0, 1.0, &empty_path(20.0, 200_000));
        assert!((kb.variance.last().unwrap() - (2f64.sqrt() - 1.0)).abs() <= 1e-4);
    }

    #[test]
    fn kalman_bucy_pure_observation() {
        let p0 = 2.0;
        let kb = kalman_bucy(0.0, 1.0, 0.0, 0.0, p0, &empty_path(1.0, 10_000));
        for (t, p) in kb.times.iter().zip(&kb.variance) {
            assert!((p - p0 / (1.0 + p0 * t)).abs() < 1e-6);
        }
    }

    #[test]
    fn riccati_ignores_the_observations() {
        let m = zoo::by_name("linear-kb").unwrap();
        let (_, o1) = path(&m, 200, 1);
        let (_, o2) = path(&m, 200, 2);
        let k1 = kalman_bucy(-1.0, 1.0, 0.5, 0.0, 0.25, &o1);
        let k2 = kalman_bucy(-1.0, 1.0, 0.5, 0.0, 0.25, &o2);
        assert_eq!(k1.variance, k2.variance);
        assert_ne!(k1.mean, k2.mean);
        assert!(k1.variance.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn unobserved_weights_are_trivial() {
        let m = zoo::linear(
            "ou",
            zoo::LinearParams {
                c: 0.0,
                ..zoo::LINEAR_KB
            },
        );
        let (grid, obs) = path(&m, 200, 3);
        let est = ks_monte_carlo(&m, &grid, &obs, |x| x, 20_000, 4, Start::Prior).unwrap();
        assert_eq!(est.effective_sample_size, 20_000.0);
        assert!(!est.degenerate_weights);
        // mean of the prior is 0 and stays 0
        assert!(est.value.abs() <= 3.0 * est.std_error, "{est:?}");
        let un = unnormalized_ks(&m, &grid, &obs, |x| x, 20_000, 4, Start::Prior).unwrap();
        assert_eq!(un.value.to_bits(), est.value.to_bits());
        let one = unnormalized_ks(&m, &grid, &obs, |_| 1.0, 20_000, 4, Start::Prior).unwrap();
        assert_eq!(one.value, 1.0);
        assert_eq!(one.std_error, 0.0);
    }

    #[test]
    fn unobserved_mean_matches_linear_sde() {
        let m = zoo::linear(
            "ou",
            zoo::LinearParams {
                c: 0.0,
                prior_mean: 1.0,
                ..zoo::LINEAR_KB
            },
        );
        let (grid, obs) = path(&m, 400, 5);
        let est = ks_monte_carlo(&m, &grid, &obs, |x| x, 50_000, 6, Start::Prior).unwrap();
        let exact = (-1.0f64).exp();
        // Euler bias at dt = 2.5e-3 is far below the Monte Carlo error
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn noiseless_point_start_is_deterministic() {
        let m = FilteringModel::builder("flow", 1.0)
            .drift(|_, x| -x, |_, _| -1.0)
            .rho(|_| 0.0)
            .observation(|x| x, |_| 1.0, |_| 0.0)
            .prior(Prior::point_mass(2.0))
            .build();
        let grid = SpaceGrid::new(-5.0, 5.0, 101).unwrap();
        let obs = simulate(&m, &TimeGrid::new(1.0, 100).unwrap(), &grid, 7).unwrap();
        let est = ks_monte_carlo(&m, &grid, &obs, |x| x, 500, 8, Start::Point(2.0)).unwrap();
        let u_t = 2.0 * 0.99f64.powi(100);
        assert!((est.value - u_t).abs() < 1e-12);
        assert!(est.std_error < 1e-12);
    }

    #[test]
    fn linear_model_agrees_with_kalman_bucy() {
        let m = zoo::by_name("linear-kb").unwrap();
        let (grid, obs) = path(&m, 1000, 9);
        let est = ks_monte_carlo(&m, &grid, &obs, |x| x, 100_000, 10, Start::Prior).unwrap();
        let kb = kalman_bucy(-1.0, 1.0, 0.5, 0.0, 0.25, &obs);
        let target = *kb.mean.last().unwrap();
        assert!(
            (est.value - target).abs() <= 3.0 * est.std_error,
            "{est:?} vs {target}"
        );
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let (grid, obs) = path(&m, 100, 11);
        let a = unnormalized_ks(&m, &grid, &obs, f64::tanh, 1000, 1, Start::Prior).unwrap();
        let b = unnormalized_ks(&m, &grid, &obs, f64::tanh, 1000, 1, Start::Prior).unwrap();
        let c = unnormalized_ks(&m, &grid, &obs, f64::tanh, 1000, 2, Start::Prior).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.value, c.value);
        assert!(a.effective_sample_size <= 1000.0 && a.std_error >= 0.0);
    }

    #[test]
    fn summary_matches_the_terminal_estimate() {
        let m = zoo::by_name("linear-corr").unwrap();
        let (grid, obs) = path(&m, 100, 13);
        let summary = ks_summary(&m, &grid, &obs, 3000, 14).unwrap();
        let last = ks_monte_carlo(&m, &grid, &obs, |x| x, 3000, 14, Start::Prior).unwrap();
        assert!((summary.mean[100] - last.value).abs() < 1e-10);
        assert_eq!(summary.mass[0], 1.0);
        assert_eq!(summary.effective_sample_size[0], 3000.0);
        assert_eq!(summary.times.len(), 101);
        let mut buf = Vec::new();
        summary.write_summary_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 102);
    }

    #[test]
    fn too_few_particles() {
        let m = zoo::by_name("heat").unwrap();
        let (grid, obs) = path(&m, 10, 1);
        assert!(ks_monte_carlo(&m, &grid, &obs, |x| x, 50, 1, Start::Prior).is_err());
    }

    #[test]
    fn standard_error_is_calibrated_across_seeds() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let (grid, obs) = path(&m, 100, 12);
        let reference =
            ks_monte_carlo(&m, &grid, &obs, f64::tanh, 400_000, 999, Start::Prior).unwrap();
        let inside = (0..20)
            .filter(|s| {
                let e =
                    ks_monte_carlo(&m, &grid, &obs, f64::tanh, 5_000, *s, Start::Prior).unwrap();
                (e.value - reference.value).abs() <= 3.0 * e.std_error
            })
            .count();
        assert!(inside >= 18, "{inside}/20");
    }
}

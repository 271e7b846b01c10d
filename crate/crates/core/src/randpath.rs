//! Seeded simulation of the signal/observation system.
//!
//! Normal draws are addressed by `(seed, stream_id, index)`: the seed keys a
//! ChaCha8 generator, the stream id selects its stream and the index selects
//! the word position, so any draw can be reproduced without replaying the
//! ones before it.

use std::io::{BufRead, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FilterError, Result};
use crate::gridquad::{InverseCdf, SpaceGrid};
use crate::io::{fmt17, parse_field, parse_optional};
use crate::model::{FilteringModel, PriorShape, TimeGrid};

pub const STREAM_W: u64 = 0;
pub const STREAM_B: u64 = 1;
pub const STREAM_INITIAL: u64 = 2;

/// Standard normal variates from one `(seed, stream)` pair.
///
/// Draw `2p` and `2p + 1` are the Box–Muller pair built from the two 64-bit
/// words at pair position `p`.
#[derive(Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng, spare: None }
    }

    /// Stream positioned so that the next draw has the given index.
    pub fn at(seed: u64, stream_id: u64, index: u64) -> Self {
        let mut s = Self::new(seed, stream_id);
        // two u64 (four 32-bit words) per Box–Muller pair
        s.rng.set_word_pos(4 * u128::from(index / 2));
        if index % 2 == 1 {
            s.next_normal();
        }
        s
    }

    /// Uniform on the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// `n` independent `Normal(0, dt)` draws from stream `stream_id`.
pub fn brownian_increments(n: usize, dt: f64, seed: u64, stream_id: u64) -> Vec<f64> {
    let sd = dt.sqrt();
    let mut s = NormalStream::new(seed, stream_id);
    (0..n).map(|_| sd * s.next_normal()).collect()
}

/// Truth and observation paths on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    time_grid: TimeGrid,
    truth_u: Vec<f64>,
    obs_v: Vec<f64>,
    dv: Vec<f64>,
    dw: Vec<f64>,
    db: Vec<f64>,
    seed: u64,
}

impl PathBundle {
    /// Bundle with only an observation path (no known truth). `dv` holds the
    /// increments `V_{n+1} - V_n`.
    pub fn from_increments(time_grid: TimeGrid, dv: Vec<f64>) -> Result<Self> {
        let n = time_grid.n_steps();
        if dv.len() != n {
            return Err(FilterError::InvalidArgument(format!(
                "{} increments for {n} steps",
                dv.len()
            )));
        }
        let mut obs_v = Vec::with_capacity(n + 1);
        obs_v.push(0.0);
        for d in &dv {
            obs_v.push(obs_v.last().unwrap() + d);
        }
        Ok(Self {
            time_grid,
            truth_u: vec![f64::NAN; n + 1],
            obs_v,
            dv,
            dw: vec![f64::NAN; n],
            db: vec![f64::NAN; n],
            seed: 0,
        })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth_u
    }

    pub fn obs(&self) -> &[f64] {
        &self.obs_v
    }

    /// Observation increments `Delta V_n`, `n = 0..N`.
    pub fn increments(&self) -> &[f64] {
        &self.dv
    }

    pub fn dw(&self) -> &[f64] {
        &self.dw
    }

    pub fn db(&self) -> &[f64] {
        &self.db
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Copy with `Delta V_n` replaced; later `V` values shift accordingly.
    pub fn with_increment(&self, n: usize, value: f64) -> Result<Self> {
        if n >= self.dv.len() {
            return Err(FilterError::IndexOutOfRange {
                index: n,
                max: self.dv.len().saturating_sub(1),
            });
        }
        let mut out = self.clone();
        out.dv[n] = value;
        for k in n..out.dv.len() {
            out.obs_v[k + 1] = out.obs_v[k] + out.dv[k];
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,U,V,dW,dB")?;
        let n = self.time_grid.n_steps();
        for k in 0..=n {
            let t = fmt17(self.time_grid.time(k));
            let u = fmt17(self.truth_u[k]);
            let v = fmt17(self.obs_v[k]);
            if k < n {
                writeln!(
                    out,
                    "{t},{u},{v},{},{}",
                    fmt17(self.dw[k]),
                    fmt17(self.db[k])
                )?;
            } else {
                writeln!(out, "{t},{u},{v},,")?;
            }
        }
        Ok(())
    }

    /// Reads the format produced by [`PathBundle::write_csv`]. Increments are
    /// recomputed as differences of `V`.
    pub fn read_csv<R: BufRead>(input: R, seed: u64) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "t,U,V,dW,dB" {
                    return Err(FilterError::Csv(format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(FilterError::Csv(format!(
                    "line {}: expected 5 columns",
                    i + 1
                )));
            }
            rows.push((
                parse_field(cols[0], i + 1)?,
                parse_field(cols[1], i + 1)?,
                parse_field(cols[2], i + 1)?,
                parse_optional(cols[3], i + 1)?,
                parse_optional(cols[4], i + 1)?,
            ));
        }
        if rows.len() < 3 {
            return Err(FilterError::Csv("need at least 3 rows".into()));
        }
        let n = rows.len() - 1;
        let time_grid = TimeGrid::new(rows[n].0, n)?;
        let obs_v: Vec<f64> = rows.iter().map(|r| r.2).collect();
        Ok(Self {
            time_grid,
            truth_u: rows.iter().map(|r| r.1).collect(),
            dv: obs_v.windows(2).map(|w| w[1] - w[0]).collect(),
            obs_v,
            dw: rows[..n].iter().map(|r| r.3.unwrap_or(f64::NAN)).collect(),
            db: rows[..n].iter().map(|r| r.4.unwrap_or(f64::NAN)).collect(),
            seed,
        })
    }
}

/// Draws `U_0` from the prior: point masses exactly, densities by the
/// piecewise-linear inverse CDF of their tabulation on `grid`.
pub(crate) fn initial_sampler(model: &FilteringModel, grid: &SpaceGrid) -> Result<InitialSampler> {
    match model.prior().shape() {
        PriorShape::PointMass(x) => Ok(InitialSampler::Fixed(*x)),
        _ => {
            let shape = model.prior().tabulate_shape(grid);
            Ok(InitialSampler::Table(InverseCdf::new(
                *grid,
                shape.values(),
            )?))
        }
    }
}

pub(crate) enum InitialSampler {
    Fixed(f64),
    Table(InverseCdf),
}

impl InitialSampler {
    pub(crate) fn draw(&self, u: f64) -> f64 {
        match self {
            InitialSampler::Fixed(x) => *x,
            InitialSampler::Table(t) => t.sample(u),
        }
    }
}

/// Euler–Maruyama simulation of the truth and observation paths.
pub fn simulate(
    model: &FilteringModel,
    tgrid: &TimeGrid,
    sgrid: &SpaceGrid,
    seed: u64,
) -> Result<PathBundle> {
    let blocking: Vec<_> = model
        .validate(sgrid)
        .into_iter()
        .filter(|v| v.blocks_simulation())
        .collect();
    if !blocking.is_empty() {
        return Err(FilterError::InvalidModel(blocking));
    }
    let n = tgrid.n_steps();
    let dt = tgrid.dt();
    let dw = brownian_increments(n, dt, seed, STREAM_W);
    let db = brownian_increments(n, dt, seed, STREAM_B);
    let u0 =
        initial_sampler(model, sgrid)?.draw(NormalStream::new(seed, STREAM_INITIAL).next_uniform());

    let mut truth_u = Vec::with_capacity(n + 1);
    let mut obs_v = Vec::with_capacity(n + 1);
    let mut dv = Vec::with_capacity(n);
    truth_u.push(u0);
    obs_v.push(0.0);
    for k in 0..n {
        let t = tgrid.time(k);
        let u = truth_u[k];
        let inc = model.obs(u) * dt + db[k];
        dv.push(inc);
        obs_v.push(obs_v[k] + inc);
        truth_u
            .push(u + model.drift(t, u) * dt + model.rho(t) * dw[k] + model.rho_tilde(t) * db[k]);
    }
    Ok(PathBundle {
        time_grid: *tgrid,
        truth_u,
        obs_v,
        dv,
        dw,
        db,
        seed,
    })
}

/// Merges every `factor` consecutive steps: increments are summed, the truth
/// and observation paths are subsampled.
pub fn resample_observation(bundle: &PathBundle, factor: usize) -> Result<PathBundle> {
    let time_grid = bundle.time_grid.coarsen(factor)?;
    let sum_chunks = |v: &[f64]| -> Vec<f64> { v.chunks(factor).map(|c| c.iter().sum()).collect() };
    Ok(PathBundle {
        time_grid,
        truth_u: bundle.truth_u.iter().step_by(factor).copied().collect(),
        obs_v: bundle.obs_v.iter().step_by(factor).copied().collect(),
        dv: sum_chunks(&bundle.dv),
        dw: sum_chunks(&bundle.dw),
        db: sum_chunks(&bundle.db),
        seed: bundle.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zoo, Prior};

    fn sgrid() -> SpaceGrid {
        SpaceGrid::new(-6.0, 6.0, 241).unwrap()
    }

    #[test]
    fn increments_are_deterministic() {
        let a = brownian_increments(8, 0.1, 7, 0);
        let b = brownian_increments(8, 0.1, 7, 0);
        assert_eq!(a, b);
        assert_ne!(a, brownian_increments(8, 0.1, 7, 1));
        assert_ne!(a, brownian_increments(8, 0.1, 8, 0));
    }

    #[test]
    fn indexed_access_matches_sequential() {
        let mut seq = NormalStream::new(42, 3);
        let draws: Vec<f64> = (0..9).map(|_| seq.next_normal()).collect();
        for (i, d) in draws.iter().enumerate() {
            assert_eq!(
                NormalStream::at(42, 3, i as u64).next_normal(),
                *d,
                "index {i}"
            );
        }
    }

    #[test]
    fn increment_variance_matches_dt() {
        let n = 1_000_000;
        let dt = 0.01;
        let x = brownian_increments(n, dt, 11, 0);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd of the sample variance of n normals is sqrt(2/n) * dt
        assert!(
            (var - dt).abs() <= 3.0 * (2.0 / n as f64).sqrt() * dt,
            "var {var}"
        );
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 100_000;
        let a = brownian_increments(n, 1.0, 5, 0);
        let b = brownian_increments(n, 1.0, 5, 1);
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() <= 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn noiseless_system_stays_put() {
        let m = crate::model::FilteringModel::builder("still", 1.0)
            .rho(|_| 0.0)
            .observation(|x| x, |_| 1.0, |_| 0.0)
            .prior(Prior::point_mass(1.0))
            .build();
        let tg = TimeGrid::new(1.0, 50).unwrap();
        let p = simulate(&m, &tg, &sgrid(), 3).unwrap();
        assert!(p.truth().iter().all(|u| *u == 1.0));
        for k in 0..50 {
            assert_eq!(p.increments()[k], 1.0 * tg.dt() + p.db()[k]);
        }
    }

    #[test]
    fn unobserved_observation_is_brownian() {
        let m = zoo::by_name("heat").unwrap().with_horizon(1.0);
        let tg = TimeGrid::new(1.0, 20).unwrap();
        let seeds = 2000;
        let mean = (0..seeds)
            .map(|s| {
                *simulate(&m, &tg, &sgrid(), s)
                    .unwrap()
                    .obs()
                    .last()
                    .unwrap()
            })
            .sum::<f64>()
            / seeds as f64;
        assert!(
            mean.abs() <= 3.0 * (1.0 / seeds as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn linear_sde_mean() {
        let (a, u0, t) = (-0.8, 1.5, 1.0);
        let m = crate::model::FilteringModel::builder("ou", t)
            .drift(move |_, x| a * x, move |_, _| a)
            .rho(|_| 0.6)
            .prior(Prior::point_mass(u0))
            .build();
        let tg = TimeGrid::new(t, 200).unwrap();
        let seeds = 2000u64;
        let ends: Vec<f64> = (0..seeds)
            .map(|s| {
                *simulate(&m, &tg, &sgrid(), s)
                    .unwrap()
                    .truth()
                    .last()
                    .unwrap()
            })
            .collect();
        let mean = ends.iter().sum::<f64>() / seeds as f64;
        let var = ends.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
        let se = (var / seeds as f64).sqrt();
        // Euler bias (1 + a dt)^N - e^{aT} is O(dt) and far below the standard error.
        assert!((mean - u0 * (a * t).exp()).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn bundle_is_reproducible_and_consistent() {
        let m = zoo::by_name("nonlinear-tanh").unwrap();
        let tg = TimeGrid::new(m.horizon(), 100).unwrap();
        let a = simulate(&m, &tg, &sgrid(), 9).unwrap();
        let b = simulate(&m, &tg, &sgrid(), 9).unwrap();
        assert_eq!(a, b);
        let mut v = 0.0;
        for k in 0..100 {
            v += m.obs(a.truth()[k]) * tg.dt() + a.db()[k];
            assert_eq!(v.to_bits(), a.obs()[k + 1].to_bits());
        }
    }

    #[test]
    fn coarsening() {
        let tg = TimeGrid::new(0.2, 2).unwrap();
        let p = PathBundle::from_increments(tg, vec![0.1, 0.2]).unwrap();
        let same = resample_observation(&p, 1).unwrap();
        assert_eq!(same.obs(), p.obs());
        assert_eq!(same.increments(), p.increments());
        let c = resample_observation(&p, 2).unwrap();
        assert_eq!(c.obs(), &[0.0, p.obs()[2]]);
        assert!((c.obs()[1] - 0.3).abs() < 1e-15);
        assert_eq!(c.increments(), &[0.1 + 0.2]);

        let tg = TimeGrid::new(0.4, 4).unwrap();
        let p = PathBundle::from_increments(tg, vec![0.1, 0.2, -0.05, 0.3]).unwrap();
        let c = resample_observation(&p, 2).unwrap();
        assert_eq!(c.obs(), &[0.0, p.obs()[2], p.obs()[4]]);
        assert!((c.obs()[1] - 0.3).abs() < 1e-15);
        assert!(matches!(
            resample_observation(&p, 3),
            Err(FilterError::NotDivisible {
                factor: 3,
                n_steps: 4
            })
        ));
    }

    #[test]
    fn coarsened_quadratic_variation_matches_horizon() {
        let m = zoo::by_name("heat").unwrap().with_horizon(1.0);
        let tg = TimeGrid::new(1.0, 64).unwrap();
        let qv: Vec<f64> = (0..1000)
            .map(|s| {
                let p = resample_observation(&simulate(&m, &tg, &sgrid(), s).unwrap(), 4).unwrap();
                p.increments().iter().map(|d| d * d).sum()
            })
            .collect();
        let mean = qv.iter().sum::<f64>() / qv.len() as f64;
        let var = qv.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (qv.len() - 1) as f64;
        let se = (var / qv.len() as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "qv {mean} se {se}");
    }

    #[test]
    fn csv_round_trip() {
        let m = zoo::by_name("linear-kb").unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let p = simulate(&m, &tg, &sgrid(), 1).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = PathBundle::read_csv(&buf[..], 1).unwrap();
        assert_eq!(q.truth(), p.truth());
        assert_eq!(q.obs(), p.obs());
        assert_eq!(q.dw(), p.dw());
        assert_eq!(q.time_grid().n_steps(), 10);
    }
}

//! Subcommand pipelines.
//!
//! Every seed runs its own sequential pipeline; seeds run in parallel and
//! their outputs are buffered, then written in seed order together with the
//! manifest and, for `compare`, one merged report.
//!
//! Output files (all CSV values carry 17 significant digits):
//!
//! | file | columns |
//! |------|---------|
//! | `path_seed{s}.csv` | `t,U,V,dW,dB` |
//! | `fk_seed{s}_n{n}.csv` | `x,Y` |
//! | `filter_seed{s}.csv`, `ks_seed{s}.csv`, `kb_seed{s}.csv` | `t,post_mean,post_var,mass,min_density` |
//! | `density_seed{s}_n{n}.csv` | `x,value,log_scale` |
//! | `trace_seed{s}.csv` | `t,R,relative_drift` |
//! | `report.json` | per-seed metrics and gate verdicts |

use std::fs;
use std::path::Path;

use bdsde_filter::diagnostics::z_score;
use bdsde_filter::*;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Experiment;
use crate::error::CliError;
use crate::manifest::Manifest;

/// Offset between a path seed and the seed of its Monte Carlo oracle.
pub const MC_SEED_OFFSET: u64 = 1000;
pub const ADJOINT_DRIFT_GATE: f64 = 0.05;
pub const Z_GATE: f64 = 3.0;
pub const SEED_FRACTION_GATE: f64 = 0.9;
pub const KB_RMSE_GATE: f64 = 0.02;
pub const KB_VARIANCE_GATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fk,
    Filter,
    Oracle,
    Adjoint,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fk => "fk",
            Command::Filter => "filter",
            Command::Oracle => "oracle",
            Command::Adjoint => "adjoint",
            Command::Compare => "compare",
        }
    }

    fn needs_grid_solver(self) -> bool {
        !matches!(self, Command::Simulate | Command::Oracle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZCheck {
    pub grid_value: f64,
    pub oracle: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KbCheck {
    pub mean_rmse: f64,
    pub max_variance_rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub adjoint_drift: Option<f64>,
    pub feynman_kac: Option<ZCheck>,
    pub unnormalized: Option<ZCheck>,
    pub kalman_bucy: Option<KbCheck>,
    pub ks_effective_sample_size: Option<f64>,
    pub ks_degenerate_weights: Option<bool>,
    pub negativity_warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub model: String,
    pub n_steps: usize,
    pub dt: f64,
    pub rmse_vs_kb: Option<f64>,
    pub seeds: Vec<SeedReport>,
    pub gates: Vec<Gate>,
    pub passed: bool,
}

struct SeedOutput {
    files: Vec<(String, Vec<u8>)>,
    report: SeedReport,
}

fn csv(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Runs `cmd`, writes its outputs and returns the report for `compare`.
pub fn run(cmd: Command, exp: &Experiment) -> std::result::Result<Option<Report>, CliError> {
    if cmd.needs_grid_solver() {
        exp.require_grid_solvable()?;
    }
    let outputs: Vec<SeedOutput> = exp
        .config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cmd, exp, seed))
        .collect::<std::result::Result<_, _>>()?;

    let dir = &exp.config.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut manifest = Manifest::load_or_new(dir)?;
    for out in &outputs {
        for (name, bytes) in &out.files {
            write_file(dir, name, bytes, &mut manifest)?;
        }
    }
    let report = (cmd == Command::Compare).then(|| build_report(exp, &outputs));
    if let Some(report) = &report {
        let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
        bytes.push(b'\n');
        write_file(dir, "report.json", &bytes, &mut manifest)?;
    }
    let echo = serde_json::to_value(&exp.config).expect("config serializes");
    manifest.commands.insert(cmd.name().to_string(), echo);
    manifest.save(dir)?;
    for out in &outputs {
        print_seed_line(cmd, &out.report);
    }
    Ok(report)
}

fn write_file(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    manifest: &mut Manifest,
) -> std::result::Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    manifest.record(name, bytes);
    Ok(())
}

fn print_seed_line(cmd: Command, r: &SeedReport) {
    let mut parts = vec![format!("seed {}", r.seed)];
    if let Some(d) = r.adjoint_drift {
        parts.push(format!("adjoint drift {d:.3e}"));
    }
    if let Some(z) = r.feynman_kac {
        parts.push(format!("feynman-kac z {:.2}", z.z_score));
    }
    if let Some(z) = r.unnormalized {
        parts.push(format!("unnormalized z {:.2}", z.z_score));
    }
    if let Some(kb) = r.kalman_bucy {
        parts.push(format!("kb rmse {:.3e}", kb.mean_rmse));
    }
    if r.negativity_warnings > 0 {
        parts.push(format!("{} negativity warnings", r.negativity_warnings));
    }
    println!("{}: {}", cmd.name(), parts.join(", "));
}

fn run_seed(
    cmd: Command,
    exp: &Experiment,
    seed: u64,
) -> std::result::Result<SeedOutput, CliError> {
    let cfg = &exp.config;
    let (m, grid, tg, rule, phi) = (&exp.model, &exp.grid, &exp.time_grid, &exp.rule, exp.phi);
    let n = tg.n_steps();
    let obs = simulate(m, tg, grid, seed)?;
    let mut files = vec![(format!("path_seed{seed}.csv"), csv(|b| obs.write_csv(b))?)];
    let mut report = SeedReport {
        seed,
        ..SeedReport::default()
    };
    let slices = if cfg.slices.is_empty() {
        vec![0, n]
    } else {
        cfg.slices.clone()
    };

    match cmd {
        Command::Simulate => {}
        Command::Fk => {
            let fk = solve_backward(m, grid, tg, &obs, phi, rule)?;
            for &k in &slices {
                files.push((
                    format!("fk_seed{seed}_n{k}.csv"),
                    csv(|b| fk.write_slice_csv(k, b))?,
                ));
            }
        }
        Command::Filter => {
            let run = solve_filter(m, grid, tg, &obs, rule)?;
            report.negativity_warnings = run.warnings().len();
            files.push((
                format!("filter_seed{seed}.csv"),
                csv(|b| run.write_summary_csv(b))?,
            ));
            for &k in &slices {
                files.push((
                    format!("density_seed{seed}_n{k}.csv"),
                    csv(|b| run.write_density_csv(k, b))?,
                ));
            }
        }
        Command::Oracle => {
            if cfg.run_kalman_bucy {
                if let Some((a, c, rho, m0, p0)) = exp.kalman_bucy_params() {
                    let kb = kalman_bucy(a, c, rho, m0, p0, &obs);
                    files.push((
                        format!("kb_seed{seed}.csv"),
                        csv(|b| kb.write_summary_csv(b))?,
                    ));
                }
            }
            if cfg.run_ks {
                let ks = ks_summary(m, grid, &obs, cfg.n_particles, seed + MC_SEED_OFFSET)?;
                files.push((
                    format!("ks_seed{seed}.csv"),
                    csv(|b| ks.write_summary_csv(b))?,
                ));
            }
        }
        Command::Adjoint => {
            let fk = solve_backward(m, grid, tg, &obs, phi, rule)?;
            let run = solve_filter(m, grid, tg, &obs, rule)?;
            report.negativity_warnings = run.warnings().len();
            let trace = adjoint_trace(&fk, &run)?;
            report.adjoint_drift = trace.max_relative_drift;
            files.push((
                format!("trace_seed{seed}.csv"),
                csv(|b| trace.write_csv(b))?,
            ));
        }
        Command::Compare => compare_seed(exp, seed, &obs, &mut files, &mut report)?,
    }
    Ok(SeedOutput { files, report })
}

fn compare_seed(
    exp: &Experiment,
    seed: u64,
    obs: &PathBundle,
    files: &mut Vec<(String, Vec<u8>)>,
    report: &mut SeedReport,
) -> std::result::Result<(), CliError> {
    let cfg = &exp.config;
    let (m, grid, tg, rule, phi) = (&exp.model, &exp.grid, &exp.time_grid, &exp.rule, exp.phi);
    let n = tg.n_steps();
    let mc_seed = seed + MC_SEED_OFFSET;

    let filter = if cfg.run_filter {
        let run = solve_filter(m, grid, tg, obs, rule)?;
        report.negativity_warnings = run.warnings().len();
        files.push((
            format!("filter_seed{seed}.csv"),
            csv(|b| run.write_summary_csv(b))?,
        ));
        Some(run)
    } else {
        None
    };
    let fk = if cfg.run_feynman_kac || (cfg.run_adjoint && filter.is_some()) {
        Some(solve_backward(m, grid, tg, obs, phi, rule)?)
    } else {
        None
    };

    if let (true, Some(fk), Some(run)) = (cfg.run_adjoint, &fk, &filter) {
        let trace = adjoint_trace(fk, run)?;
        report.adjoint_drift = trace.max_relative_drift;
        files.push((
            format!("trace_seed{seed}.csv"),
            csv(|b| trace.write_csv(b))?,
        ));
    }
    if let (true, Some(fk)) = (cfg.run_feynman_kac, &fk) {
        let grid_value = fk.value_at(0, exp.x0)?;
        let est = unnormalized_ks(
            m,
            grid,
            obs,
            phi,
            cfg.n_particles,
            mc_seed,
            Start::Point(exp.x0),
        )?;
        report.feynman_kac = Some(ZCheck {
            grid_value,
            oracle: est.value,
            std_error: est.std_error,
            z_score: z_score(grid_value, est.value, est.std_error),
        });
    }
    if cfg.run_ks {
        let est = unnormalized_ks(m, grid, obs, phi, cfg.n_particles, mc_seed, Start::Prior)?;
        report.ks_effective_sample_size = Some(est.effective_sample_size);
        report.ks_degenerate_weights = Some(est.degenerate_weights);
        if let Some(run) = &filter {
            let phi_field = GridField::from_fn(*grid, BoundaryPolicy::Zero, phi)?;
            let grid_value =
                inner_product(&run.fields_ybar()[n], &phi_field)? * run.log_scale()[n].exp();
            report.unnormalized = Some(ZCheck {
                grid_value,
                oracle: est.value,
                std_error: est.std_error,
                z_score: z_score(grid_value, est.value, est.std_error),
            });
        }
    }
    if let (true, Some((a, c, rho, m0, p0)), Some(run)) =
        (cfg.run_kalman_bucy, exp.kalman_bucy_params(), &filter)
    {
        let kb = kalman_bucy(a, c, rho, m0, p0, obs);
        files.push((
            format!("kb_seed{seed}.csv"),
            csv(|b| kb.write_summary_csv(b))?,
        ));
        let mut sq = 0.0;
        let mut var_err: f64 = 0.0;
        for k in 0..=n {
            let mom = posterior_moments(run, k)?;
            sq += (mom.mean - kb.mean[k]).powi(2);
            if kb.variance[k] > 0.0 {
                var_err = var_err.max((mom.variance / kb.variance[k] - 1.0).abs());
            }
        }
        report.kalman_bucy = Some(KbCheck {
            mean_rmse: (sq / (n + 1) as f64).sqrt(),
            max_variance_rel_error: var_err,
        });
    }
    Ok(())
}

fn fraction_gate(name: &'static str, z: &[f64]) -> Gate {
    let inside = z.iter().filter(|z| z.abs() <= Z_GATE).count();
    let needed = (SEED_FRACTION_GATE * z.len() as f64).ceil() as usize;
    Gate {
        name,
        passed: inside >= needed,
        detail: format!(
            "|z| <= {Z_GATE} in {inside}/{} seeds, need {needed}",
            z.len()
        ),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn build_report(exp: &Experiment, outputs: &[SeedOutput]) -> Report {
    let seeds: Vec<SeedReport> = outputs.iter().map(|o| o.report.clone()).collect();
    let mut gates = Vec::new();

    let drifts: Vec<f64> = seeds.iter().filter_map(|s| s.adjoint_drift).collect();
    if !drifts.is_empty() {
        let worst = drifts.iter().copied().fold(0.0, f64::max);
        gates.push(Gate {
            name: "adjoint",
            passed: worst <= ADJOINT_DRIFT_GATE,
            detail: format!("largest relative drift {worst:.3e}, limit {ADJOINT_DRIFT_GATE}"),
        });
    }
    let fk: Vec<f64> = seeds
        .iter()
        .filter_map(|s| s.feynman_kac.map(|c| c.z_score))
        .collect();
    if !fk.is_empty() {
        gates.push(fraction_gate("feynman-kac", &fk));
    }
    let un: Vec<f64> = seeds
        .iter()
        .filter_map(|s| s.unnormalized.map(|c| c.z_score))
        .collect();
    if !un.is_empty() {
        gates.push(fraction_gate("unnormalized-identity", &un));
    }
    let kb: Vec<KbCheck> = seeds.iter().filter_map(|s| s.kalman_bucy).collect();
    let rmse_vs_kb =
        (!kb.is_empty()).then(|| mean(&kb.iter().map(|k| k.mean_rmse).collect::<Vec<_>>()));
    if let Some(rmse) = rmse_vs_kb {
        let var = mean(
            &kb.iter()
                .map(|k| k.max_variance_rel_error)
                .collect::<Vec<_>>(),
        );
        gates.push(Gate {
            name: "kb-mean-rmse",
            passed: rmse <= KB_RMSE_GATE,
            detail: format!("seed-averaged rmse {rmse:.3e}, limit {KB_RMSE_GATE}"),
        });
        gates.push(Gate {
            name: "kb-variance",
            passed: var <= KB_VARIANCE_GATE,
            detail: format!(
                "seed-averaged worst relative error {var:.3e}, limit {KB_VARIANCE_GATE}"
            ),
        });
    }
    if exp.config.run_ks && exp.model.is_unobserved(&exp.grid) {
        let n = exp.config.n_particles as f64;
        let trivial = seeds
            .iter()
            .filter(|s| {
                s.ks_effective_sample_size == Some(n) && s.ks_degenerate_weights == Some(false)
            })
            .count();
        gates.push(Gate {
            name: "trivial-weights",
            passed: trivial == seeds.len(),
            detail: format!("all weights equal in {trivial}/{} seeds", seeds.len()),
        });
    }
    let passed = gates.iter().all(|g| g.passed);
    Report {
        model: exp.config.model.clone(),
        n_steps: exp.time_grid.n_steps(),
        dt: exp.time_grid.dt(),
        rmse_vs_kb,
        seeds,
        gates,
        passed,
    }
}

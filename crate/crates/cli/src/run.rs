//! Experiment dispatch and result persistence.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pamkit_core::asymptotics::{lambda_bounds, lyapunov_mc_estimate, LyapunovSpec};
use pamkit_core::chaos::{chaos_term_bound, second_moment_chaos, ChaosTermSpec};
use pamkit_core::covariance::{validate, NoiseParams};
use pamkit_core::functional::{moment_ladder, Formula, InteractionSpec, McConfig, PathKernel};
use pamkit_core::paths::{PathEnsemble, PathKind, TimeGrid};
use pamkit_core::variational::{maximize, SolverConfig, VariationalResult};
use pamkit_core::Execution;

use crate::config::{Experiment, RunConfig, VariationalConfig};
use crate::envelope::{ChaosResults, Envelope, IndicesResults, LyapunovResults, Results, Timing};
use crate::error::CliError;
use crate::plotdata::emit_plotdata;
use crate::selftest::run_selftest;

fn solve(noise: &NoiseParams, v: &VariationalConfig, seed: u64) -> Result<VariationalResult, CliError> {
    let solver = SolverConfig {
        slices: v.slices,
        box_l: v.box_l,
        mx: v.mx,
        starts: v.starts,
        max_iter: v.max_iter,
        tol: v.tol,
        exec: Execution::Parallel,
    };
    Ok(maximize(noise.alpha0, &noise.spatial, v.eps, &solver, seed)?)
}

/// Runs the configured experiment. The config must have passed
/// [`RunConfig::validate`].
pub fn run(cfg: &RunConfig) -> Result<Results, CliError> {
    let noise = cfg.noise.build()?;
    let seed = cfg.seed;
    let solver_block = || cfg.variational.clone().unwrap_or_default();
    let results = match cfg.experiment {
        Experiment::Moment => {
            let m = cfg.moment.as_ref().expect("block filled");
            let kernel = PathKernel::smoothed(&noise.spatial, m.eps_ladder[0])?;
            let mut spec = InteractionSpec::new(m.n, m.t, noise.alpha0, kernel, m.initial)?;
            if let Some(x) = &m.x {
                spec = spec.with_offsets(vec![x.clone(); m.n])?;
            }
            let mc = McConfig {
                samples: m.samples,
                grid_m: m.grid_m,
                shards: cfg.shards,
                exec: Execution::Parallel,
                exponent_cap: m.exponent_cap,
            };
            Results::Moment(moment_ladder(&spec, &noise.spatial, &m.eps_ladder, m.formula, &mc, seed)?)
        }
        Experiment::Chaos => {
            let c = cfg.chaos.as_ref().expect("block filled");
            let mut spec = ChaosTermSpec::new(c.t, noise.alpha0, noise.spatial.clone(), c.eps, c.initial)?;
            if let Some(x) = &c.x {
                spec.x = x.clone();
            }
            spec.samples = c.samples;
            spec.shards = cfg.shards;
            let series = second_moment_chaos(&spec, c.truncation, seed)?;
            let mut bound_spec = spec.clone();
            bound_spec.eps = c.bound_eps;
            let bounds = c
                .bound_orders
                .iter()
                .map(|&n| chaos_term_bound(&bound_spec, n, seed))
                .collect::<Result<Vec<_>, _>>()?;
            Results::Chaos(ChaosResults { series, bounds })
        }
        Experiment::Variational => Results::Variational(Box::new(solve(&noise, &solver_block(), seed)?)),
        Experiment::Lyapunov => {
            let l = cfg.lyapunov.as_ref().expect("block filled");
            let e = if l.solve_e { Some(solve(&noise, &solver_block(), seed)?.e) } else { l.e };
            let spec = LyapunovSpec {
                n: l.n,
                alpha0: noise.alpha0,
                family: noise.spatial.clone(),
                t_ladder: l.t_ladder.clone(),
                eps_ladder: l.eps_ladder.clone(),
                e,
            };
            let mc = McConfig {
                samples: l.samples,
                grid_m: l.grid_m,
                shards: cfg.shards,
                exec: Execution::Parallel,
                exponent_cap: l.exponent_cap,
            };
            Results::Lyapunov(LyapunovResults {
                e,
                estimate: lyapunov_mc_estimate(&spec, &mc, seed)?,
            })
        }
        Experiment::Indices => {
            let i = cfg.indices.as_ref().expect("block filled");
            let alpha = noise
                .alpha()
                .ok_or_else(|| CliError::config("indices need a homogeneous spatial covariance"))?;
            let (e, e_source, solver_converged) = match i.e {
                Some(e) => (e, "given", None),
                None => {
                    let r = solve(&noise, &solver_block(), seed)?;
                    (r.e, "solver", Some(r.converged))
                }
            };
            let report = lambda_bounds(i.n, noise.alpha0, alpha, e, i.beta, noise.spatial.is_nonnegative_kernel())?;
            Results::Indices(IndicesResults {
                report,
                e_source: e_source.into(),
                solver_converged,
            })
        }
        Experiment::Validate => Results::Validate(validate(&noise, seed)),
        Experiment::Selftest => {
            let s = cfg.selftest.clone().unwrap_or_default();
            Results::Selftest(run_selftest(&s, seed, cfg.shards)?)
        }
    };
    Ok(results)
}

/// Validates, runs and wraps the results in an envelope.
pub fn execute(cfg: &RunConfig) -> Result<Envelope, CliError> {
    cfg.validate()?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let results = run(cfg)?;
    Ok(Envelope {
        build_id: crate::BUILD_ID.into(),
        experiment: cfg.experiment,
        config: cfg.clone(),
        results,
        timing: Timing {
            started_unix: started,
            wall_seconds: clock.elapsed().as_secs_f64(),
        },
    })
}

/// Files written by [`write_outputs`].
#[derive(Debug, Default)]
pub struct Written {
    pub json: Option<PathBuf>,
    pub csv: Vec<PathBuf>,
    pub dump: Option<PathBuf>,
}

/// Writes the envelope (stdout when no JSON path is configured), the plot
/// data and the optional path dump.
pub fn write_outputs(cfg: &RunConfig, env: &Envelope) -> Result<Written, CliError> {
    let mut written = Written::default();
    let text = env.to_json()?;
    match &cfg.output.json {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text)?;
            written.json = Some(path.clone());
        }
        None => print!("{text}"),
    }
    if let Some(dir) = &cfg.output.csv_dir {
        written.csv = emit_plotdata(&env.results, dir)?;
    }
    if let (Some(path), Some(m)) = (&cfg.output.dump_paths, &cfg.moment) {
        let grid = TimeGrid::new(m.t, m.grid_m)?;
        let kind = match m.formula {
            Formula::Bm => PathKind::Motion,
            Formula::Bridge | Formula::PinnedBridge => PathKind::Bridge,
        };
        let ens = PathEnsemble::generate(grid, cfg.noise.ell, kind, m.dump_count, cfg.seed, Execution::Parallel);
        ens.write_dump(BufWriter::new(File::create(path)?))?;
        written.dump = Some(path.clone());
    }
    Ok(written)
}

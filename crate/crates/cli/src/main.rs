use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pamkit::config::{Experiment, FamilyConfig, RunConfig};
use pamkit::envelope::Results;
use pamkit::error::CliError;
use pamkit::run::{execute, write_outputs};
use pamkit_core::functional::Formula;

#[derive(Parser)]
#[command(name = "pamkit", version = pamkit::BUILD_ID, about = "Moment experiments for the parabolic Anderson model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyName {
    Riesz,
    #[value(name = "rough_fractional")]
    RoughFractional,
    #[value(name = "white_1d")]
    White1d,
    Constant,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulaName {
    Bridge,
    Bm,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration; defaults are used when absent.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shards: Option<usize>,
    /// Result envelope path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Directory for plot-data CSV files.
    #[arg(long, value_name = "DIR")]
    csv: Option<PathBuf>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long, value_enum)]
    family: Option<FamilyName>,
    /// Riesz exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Hurst parameter of rough fractional noise.
    #[arg(long)]
    hurst: Option<f64>,
    /// Value of a constant covariance.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Feynman-Kac moment estimate, optionally over an eps ladder.
    Moment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        grid_m: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        eps_ladder: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        formula: Option<FormulaName>,
        /// Binary dump of a path ensemble.
        #[arg(long, value_name = "PATH")]
        dump_paths: Option<PathBuf>,
        #[arg(long)]
        dump_count: Option<usize>,
    },
    /// Truncated chaos series of the second moment.
    Chaos {
        #[command(flatten)]
        common: Common,
        /// Truncation order.
        #[arg(long = "N")]
        truncation: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        bound_orders: Option<Vec<usize>>,
    },
    /// Variational quantity E by projected gradient ascent.
    Variational {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Monte Carlo growth of log-moments over a t-ladder.
    Lyapunov {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        t_ladder: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        eps_ladder: Option<Vec<f64>>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        grid_m: Option<usize>,
        /// Variational value for the upper constant.
        #[arg(long = "E", conflicts_with = "solve_e")]
        e: Option<f64>,
        /// Compute E with the variational solver.
        #[arg(long = "solve-E")]
        solve_e: bool,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Exponential growth indices from E.
    Indices {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "E", conflicts_with = "solve_e")]
        e: Option<f64>,
        #[arg(long = "solve-E")]
        solve_e: bool,
        #[arg(long)]
        beta: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Checks Dalang's condition, (H.1), (H.2) and (S) for the noise.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form constant-kernel suite.
    Selftest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        chaos_samples: Option<u64>,
    },
}

#[derive(Args, Debug, Default)]
struct SolverArgs {
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long = "box-L")]
    box_l: Option<f64>,
    #[arg(long)]
    mx: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load(experiment: Experiment, common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::defaults(experiment),
    };
    if cfg.experiment != experiment {
        return Err(CliError::config(format!(
            "config file describes a {} run, not {experiment}",
            cfg.experiment
        )));
    }
    set(&mut cfg.seed, common.seed);
    set(&mut cfg.shards, common.shards);
    if common.out.is_some() {
        cfg.output.json = common.out.clone();
    }
    if common.csv.is_some() {
        cfg.output.csv_dir = common.csv.clone();
    }
    set(&mut cfg.noise.ell, common.ell);
    set(&mut cfg.noise.alpha0, common.alpha0);
    let family = &mut cfg.noise.family;
    if let Some(name) = common.family {
        let missing = |flag: &str| CliError::config(format!("--family needs --{flag}"));
        *family = match (name, &*family) {
            (FamilyName::Riesz, _) if common.alpha.is_some() => FamilyConfig::Riesz { alpha: common.alpha.unwrap() },
            (FamilyName::Riesz, FamilyConfig::Riesz { alpha }) => FamilyConfig::Riesz { alpha: *alpha },
            (FamilyName::Riesz, _) => return Err(missing("alpha")),
            (FamilyName::RoughFractional, _) if common.hurst.is_some() => FamilyConfig::RoughFractional {
                hurst: common.hurst.unwrap(),
            },
            (FamilyName::RoughFractional, FamilyConfig::RoughFractional { hurst }) => {
                FamilyConfig::RoughFractional { hurst: *hurst }
            }
            (FamilyName::RoughFractional, _) => return Err(missing("hurst")),
            (FamilyName::White1d, _) => FamilyConfig::White1d,
            (FamilyName::Constant, _) if common.c.is_some() => FamilyConfig::Constant { c: common.c.unwrap() },
            (FamilyName::Constant, FamilyConfig::Constant { c }) => FamilyConfig::Constant { c: *c },
            (FamilyName::Constant, _) => return Err(missing("c")),
        };
    }
    match family {
        FamilyConfig::Riesz { alpha } => set(alpha, common.alpha),
        FamilyConfig::RoughFractional { hurst } => set(hurst, common.hurst),
        FamilyConfig::Constant { c } => set(c, common.c),
        _ => {}
    }
    let stray = match family {
        FamilyConfig::Riesz { .. } => common.hurst.is_some() || common.c.is_some(),
        FamilyConfig::RoughFractional { .. } => common.alpha.is_some() || common.c.is_some(),
        FamilyConfig::Constant { .. } => common.alpha.is_some() || common.hurst.is_some(),
        _ => common.alpha.is_some() || common.hurst.is_some() || common.c.is_some(),
    };
    if stray {
        return Err(CliError::config("family parameter flag does not match the selected family"));
    }
    Ok(cfg)
}

fn apply_solver(cfg: &mut RunConfig, s: &SolverArgs) {
    let v = cfg.variational.get_or_insert_with(Default::default);
    set(&mut v.eps, s.eps);
    set(&mut v.slices, s.slices);
    set(&mut v.box_l, s.box_l);
    set(&mut v.mx, s.mx);
    set(&mut v.starts, s.starts);
    set(&mut v.max_iter, s.max_iter);
    set(&mut v.tol, s.tol);
}

fn solver_given(s: &SolverArgs) -> bool {
    s.eps.is_some()
        || s.slices.is_some()
        || s.box_l.is_some()
        || s.mx.is_some()
        || s.starts.is_some()
        || s.max_iter.is_some()
        || s.tol.is_some()
}

fn build(command: Command) -> Result<RunConfig, CliError> {
    let cfg = match command {
        Command::Moment {
            common,
            n,
            t,
            samples,
            grid_m,
            eps_ladder,
            formula,
            dump_paths,
            dump_count,
        } => {
            let mut cfg = load(Experiment::Moment, &common)?;
            let m = cfg.moment.as_mut().expect("block filled");
            set(&mut m.n, n);
            set(&mut m.t, t);
            set(&mut m.samples, samples);
            set(&mut m.grid_m, grid_m);
            set(&mut m.eps_ladder, eps_ladder);
            set(&mut m.dump_count, dump_count);
            if let Some(f) = formula {
                m.formula = match f {
                    FormulaName::Bridge => Formula::Bridge,
                    FormulaName::Bm => Formula::Bm,
                };
            }
            if dump_paths.is_some() {
                cfg.output.dump_paths = dump_paths;
            }
            cfg
        }
        Command::Chaos {
            common,
            truncation,
            t,
            x,
            eps,
            samples,
            bound_orders,
        } => {
            let mut cfg = load(Experiment::Chaos, &common)?;
            let c = cfg.chaos.as_mut().expect("block filled");
            set(&mut c.truncation, truncation);
            set(&mut c.t, t);
            if x.is_some() {
                c.x = x;
            }
            set(&mut c.eps, eps);
            set(&mut c.samples, samples);
            set(&mut c.bound_orders, bound_orders);
            cfg
        }
        Command::Variational { common, solver } => {
            let mut cfg = load(Experiment::Variational, &common)?;
            apply_solver(&mut cfg, &solver);
            cfg
        }
        Command::Lyapunov {
            common,
            n,
            t_ladder,
            eps_ladder,
            samples,
            grid_m,
            e,
            solve_e,
            solver,
        } => {
            let mut cfg = load(Experiment::Lyapunov, &common)?;
            let l = cfg.lyapunov.as_mut().expect("block filled");
            set(&mut l.n, n);
            set(&mut l.t_ladder, t_ladder);
            set(&mut l.eps_ladder, eps_ladder);
            set(&mut l.samples, samples);
            set(&mut l.grid_m, grid_m);
            if e.is_some() {
                l.e = e;
                l.solve_e = false;
            }
            if solve_e {
                l.solve_e = true;
                l.e = None;
            }
            if solver_given(&solver) {
                apply_solver(&mut cfg, &solver);
            }
            cfg
        }
        Command::Indices {
            common,
            n,
            e,
            solve_e,
            beta,
            solver,
        } => {
            let mut cfg = load(Experiment::Indices, &common)?;
            let i = cfg.indices.as_mut().expect("block filled");
            set(&mut i.n, n);
            if e.is_some() {
                i.e = e;
                i.solve_e = false;
            }
            if solve_e {
                i.solve_e = true;
                i.e = None;
            }
            if beta.is_some() {
                i.beta = beta;
            }
            if solver_given(&solver) {
                apply_solver(&mut cfg, &solver);
            }
            cfg
        }
        Command::Validate { common } => load(Experiment::Validate, &common)?,
        Command::Selftest { common, chaos_samples } => {
            let mut cfg = load(Experiment::Selftest, &common)?;
            let s = cfg.selftest.as_mut().expect("block filled");
            set(&mut s.chaos_samples, chaos_samples);
            cfg
        }
    };
    Ok(cfg)
}

fn threads_from_env() -> Result<(), CliError> {
    match std::env::var("PAMKIT_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("PAMKIT_THREADS must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(CliError::config("PAMKIT_THREADS must be at least 1"));
            }
            pamkit_core::exec::configure_threads(n);
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    threads_from_env()?;
    let cfg = build(cli.command)?;
    let env = execute(&cfg)?;
    let written = write_outputs(&cfg, &env)?;
    for path in written.json.iter().chain(&written.csv).chain(&written.dump) {
        eprintln!("wrote {}", path.display());
    }
    if let Results::Selftest(report) = &env.results {
        if !report.all_passed() {
            let names: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            return Err(CliError::Numerical(format!("selftest failures: {}", names.join(", "))));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::to_string(&e.record()).unwrap_or_else(|_| e.to_string());
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

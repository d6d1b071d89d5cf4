//! Run configuration: JSON schema, defaults and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use pamkit_core::covariance::{CustomDensity, NoiseParams, PowerGaussTerm, SpectralFamily};
use pamkit_core::functional::{Formula, InitialDatum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Moment,
    Chaos,
    Variational,
    Lyapunov,
    Indices,
    Validate,
    Selftest,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Moment => "moment",
            Experiment::Chaos => "chaos",
            Experiment::Variational => "variational",
            Experiment::Lyapunov => "lyapunov",
            Experiment::Indices => "indices",
            Experiment::Validate => "validate",
            Experiment::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Spatial family as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    Riesz {
        alpha: f64,
    },
    RoughFractional {
        hurst: f64,
    },
    #[serde(rename = "white_1d")]
    White1d,
    Constant {
        c: f64,
    },
    CustomRadial {
        terms: Vec<PowerGaussTerm>,
        #[serde(default)]
        homogeneity: Option<f64>,
    },
}

impl FamilyConfig {
    pub fn build(&self, ell: usize) -> Result<SpectralFamily, CliError> {
        let fam = match self {
            FamilyConfig::Riesz { alpha } => SpectralFamily::riesz(ell, *alpha)?,
            FamilyConfig::RoughFractional { hurst } => {
                require_ell_one(ell, "rough_fractional")?;
                SpectralFamily::rough_fractional(*hurst)?
            }
            FamilyConfig::White1d => {
                require_ell_one(ell, "white_1d")?;
                SpectralFamily::white_1d()
            }
            FamilyConfig::Constant { c } => SpectralFamily::constant(ell, *c)?,
            FamilyConfig::CustomRadial { terms, homogeneity } => {
                let mut density = CustomDensity::from_terms(terms.clone())?;
                density.homogeneity = *homogeneity;
                SpectralFamily::custom(ell, density)?
            }
        };
        Ok(fam)
    }
}

fn require_ell_one(ell: usize, name: &str) -> Result<(), CliError> {
    if ell != 1 {
        return Err(CliError::config(format!("{name} noise needs ell = 1, got {ell}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub ell: usize,
    pub alpha0: f64,
    pub family: FamilyConfig,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            ell: 1,
            alpha0: 0.5,
            family: FamilyConfig::Riesz { alpha: 0.5 },
        }
    }
}

impl NoiseConfig {
    pub fn build(&self) -> Result<NoiseParams, CliError> {
        let fam = self.family.build(self.ell)?;
        Ok(NoiseParams::new(self.alpha0, fam)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentConfig {
    pub n: usize,
    pub t: f64,
    /// Common starting point of all particles.
    pub x: Option<Vec<f64>>,
    pub samples: u64,
    pub grid_m: usize,
    pub eps_ladder: Vec<f64>,
    pub formula: Formula,
    pub initial: InitialDatum,
    pub exponent_cap: f64,
    /// Paths written by `--dump-paths`.
    pub dump_count: usize,
}

impl Default for MomentConfig {
    fn default() -> Self {
        MomentConfig {
            n: 2,
            t: 1.0,
            x: None,
            samples: 10_000,
            grid_m: 32,
            eps_ladder: vec![0.25],
            formula: Formula::Bridge,
            initial: InitialDatum::ConstantOne,
            exponent_cap: pamkit_core::functional::DEFAULT_EXPONENT_CAP,
            dump_count: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosConfig {
    pub truncation: usize,
    pub t: f64,
    pub x: Option<Vec<f64>>,
    pub eps: f64,
    pub samples: u64,
    pub initial: InitialDatum,
    /// Orders whose bound-route terms are also reported.
    pub bound_orders: Vec<usize>,
    pub bound_eps: f64,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig {
            truncation: 5,
            t: 0.5,
            x: None,
            eps: 0.5,
            samples: 20_000,
            initial: InitialDatum::ConstantOne,
            bound_orders: Vec::new(),
            bound_eps: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationalConfig {
    pub eps: f64,
    pub slices: usize,
    pub box_l: f64,
    pub mx: usize,
    pub starts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        let d = pamkit_core::variational::SolverConfig::default();
        VariationalConfig {
            eps: 0.0,
            slices: d.slices,
            box_l: d.box_l,
            mx: d.mx,
            starts: d.starts,
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    pub n: usize,
    pub t_ladder: Vec<f64>,
    pub eps_ladder: Vec<f64>,
    pub samples: u64,
    pub grid_m: usize,
    pub exponent_cap: f64,
    /// Variational value for the analytic upper constant.
    pub e: Option<f64>,
    /// Run the variational solver to obtain `e`.
    pub solve_e: bool,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            n: 2,
            t_ladder: vec![0.5, 1.0, 2.0, 4.0],
            eps_ladder: vec![0.04, 0.02, 0.01],
            samples: 20_000,
            grid_m: 32,
            exponent_cap: pamkit_core::functional::DEFAULT_EXPONENT_CAP,
            e: None,
            solve_e: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndicesConfig {
    pub n: usize,
    pub e: Option<f64>,
    pub solve_e: bool,
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestConfig {
    pub chaos_samples: u64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig { chaos_samples: 20_000 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Result envelope; stdout when absent.
    pub json: Option<PathBuf>,
    /// Directory for plot-data CSV files.
    pub csv_dir: Option<PathBuf>,
    /// Binary path dump (moment runs only).
    pub dump_paths: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

fn default_shards() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<MomentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chaos: Option<ChaosConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variational: Option<VariationalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<IndicesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selftest: Option<SelftestConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Defaults for `experiment`, with its block filled in.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = RunConfig {
            experiment,
            noise: NoiseConfig::default(),
            seed: default_seed(),
            shards: default_shards(),
            moment: None,
            chaos: None,
            variational: None,
            lyapunov: None,
            indices: None,
            selftest: None,
            output: OutputConfig::default(),
        };
        cfg.fill_block();
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))?;
        cfg.fill_block();
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Creates the block of the selected experiment when it is missing.
    fn fill_block(&mut self) {
        match self.experiment {
            Experiment::Moment => {
                self.moment.get_or_insert_with(Default::default);
            }
            Experiment::Chaos => {
                self.chaos.get_or_insert_with(Default::default);
            }
            Experiment::Variational => {
                self.variational.get_or_insert_with(Default::default);
            }
            Experiment::Lyapunov => {
                self.lyapunov.get_or_insert_with(Default::default);
            }
            Experiment::Indices => {
                self.indices.get_or_insert_with(|| IndicesConfig {
                    n: 2,
                    ..Default::default()
                });
            }
            Experiment::Selftest => {
                self.selftest.get_or_insert_with(Default::default);
            }
            Experiment::Validate => {}
        }
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.shards == 0 {
            return Err(CliError::config("shards must be at least 1"));
        }
        if self.output.dump_paths.is_some() && self.experiment != Experiment::Moment {
            return Err(CliError::config("path dumps are only available for moment runs"));
        }
        let noise = self.noise.build()?;
        let ell = noise.ell;
        let check_point = |x: &Option<Vec<f64>>| -> Result<(), CliError> {
            match x {
                Some(x) if x.len() != ell => Err(CliError::config(format!(
                    "starting point has dimension {}, noise has ell = {ell}",
                    x.len()
                ))),
                _ => Ok(()),
            }
        };
        let positive = |v: f64, what: &str| -> Result<(), CliError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::config(format!("{what} must be positive, got {v}")))
            }
        };
        match self.experiment {
            Experiment::Moment => {
                let m = self.moment.as_ref().expect("block filled");
                if m.n == 0 || m.samples == 0 || m.grid_m == 0 {
                    return Err(CliError::config("moment needs n, samples and grid_m >= 1"));
                }
                positive(m.t, "t")?;
                check_point(&m.x)?;
                if m.eps_ladder.is_empty() {
                    return Err(CliError::config("eps_ladder needs at least one rung"));
                }
                for &e in &m.eps_ladder {
                    positive(e, "eps")?;
                }
                positive(m.exponent_cap, "exponent_cap")?;
                m.initial.validate()?;
            }
            Experiment::Chaos => {
                let c = self.chaos.as_ref().expect("block filled");
                if c.truncation == 0 || c.truncation > pamkit_core::chaos::MAX_SERIES_ORDER {
                    return Err(CliError::config(format!(
                        "truncation must lie in 1..={}",
                        pamkit_core::chaos::MAX_SERIES_ORDER
                    )));
                }
                positive(c.t, "t")?;
                positive(c.eps, "eps")?;
                check_point(&c.x)?;
                if c.samples == 0 {
                    return Err(CliError::config("samples must be at least 1"));
                }
                if c.bound_orders.iter().any(|&n| n == 0) {
                    return Err(CliError::config("bound orders start at 1"));
                }
                if !(c.bound_eps >= 0.0) {
                    return Err(CliError::config("bound_eps must be nonnegative"));
                }
                c.initial.validate()?;
            }
            Experiment::Variational => {
                let v = self.variational.as_ref().expect("block filled");
                check_solver(v)?;
            }
            Experiment::Lyapunov => {
                let l = self.lyapunov.as_ref().expect("block filled");
                if l.n < 2 {
                    return Err(CliError::config("lyapunov needs n >= 2"));
                }
                if l.t_ladder.len() < 4 {
                    return Err(CliError::config("t_ladder needs at least 4 points"));
                }
                for &t in &l.t_ladder {
                    positive(t, "t_ladder entry")?;
                }
                if l.eps_ladder.is_empty() {
                    return Err(CliError::config("eps_ladder needs at least one rung"));
                }
                for &e in &l.eps_ladder {
                    positive(e, "eps")?;
                }
                if l.samples == 0 || l.grid_m == 0 {
                    return Err(CliError::config("samples and grid_m must be at least 1"));
                }
                if l.e.is_some() && l.solve_e {
                    return Err(CliError::config("give either e or solve_e, not both"));
                }
                if noise.alpha().is_none() {
                    return Err(CliError::config("lyapunov needs a homogeneous spatial covariance"));
                }
            }
            Experiment::Indices => {
                let i = self.indices.as_ref().expect("block filled");
                if i.n == 0 {
                    return Err(CliError::config("n must be at least 1"));
                }
                match (i.e, i.solve_e) {
                    (Some(_), true) => return Err(CliError::config("give either e or solve_e, not both")),
                    (None, false) => return Err(CliError::config("indices needs e or solve_e")),
                    (Some(e), false) if !(e >= 0.0 && e.is_finite()) => {
                        return Err(CliError::config(format!("e must be finite and nonnegative, got {e}")))
                    }
                    _ => {}
                }
                if let Some(beta) = i.beta {
                    positive(beta, "beta")?;
                }
                if noise.alpha().is_none() {
                    return Err(CliError::config("indices need a homogeneous spatial covariance"));
                }
            }
            Experiment::Validate | Experiment::Selftest => {}
        }
        Ok(())
    }
}

fn check_solver(v: &VariationalConfig) -> Result<(), CliError> {
    if v.slices < 2 || v.mx < 4 || v.max_iter == 0 {
        return Err(CliError::config("solver needs slices >= 2, mx >= 4 and max_iter >= 1"));
    }
    if !(v.box_l > 0.0 && v.tol > 0.0 && v.eps >= 0.0) {
        return Err(CliError::config("solver needs box_l > 0, tol > 0 and eps >= 0"));
    }
    Ok(())
}

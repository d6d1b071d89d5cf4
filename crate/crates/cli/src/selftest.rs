//! Closed-form constant-kernel suite.

use pamkit_core::asymptotics::{lower_prefactor, phi_beta};
use pamkit_core::chaos::{second_moment_chaos, ChaosTermSpec};
use pamkit_core::covariance::SpectralFamily;
use pamkit_core::functional::{
    mean_q_oracle, moment_fk_bm, moment_fk_bridge, time_weight_matrix, InitialDatum, InteractionSpec, McConfig,
    PathKernel,
};
use pamkit_core::paths::TimeGrid;
use pamkit_core::variational::{energy, eta0_l1, finiteness_bound, ProfileGrid};
use serde::Serialize;

use crate::config::SelftestConfig;
use crate::error::CliError;

const T: f64 = 1.0;
const ALPHA0: f64 = 0.5;
const C: f64 = 1.0;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    /// Allowed `|value - expected|`.
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    fn abs(&mut self, name: &str, value: f64, expected: f64, tolerance: f64) {
        let pass = (value - expected).abs() <= tolerance;
        self.checks.push(Check {
            name: name.into(),
            value,
            expected,
            tolerance,
            pass,
        });
    }

    fn rel(&mut self, name: &str, value: f64, expected: f64, rel: f64) {
        self.abs(name, value, expected, rel * expected.abs());
    }
}

/// Total of `|s - r|^{-alpha0}` over `[0,t]^2`.
fn weight_total(t: f64, alpha0: f64) -> f64 {
    2.0 * t.powf(2.0 - alpha0) / ((1.0 - alpha0) * (2.0 - alpha0))
}

pub fn run_selftest(cfg: &SelftestConfig, seed: u64, shards: usize) -> Result<SelftestReport, CliError> {
    let mut s = Suite { checks: Vec::new() };
    let mass = weight_total(T, ALPHA0);

    for m in [16, 256] {
        let w = time_weight_matrix(&TimeGrid::new(T, m)?, ALPHA0)?;
        s.rel(&format!("weight_mass_m{m}"), w.total(), mass, 1e-12);
    }
    let m = 8;
    let w = time_weight_matrix(&TimeGrid::new(T, m)?, 0.0)?;
    let cell = (T / m as f64).powi(2);
    let worst = w
        .to_dense()
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max((v - cell).abs()));
    s.abs("weight_alpha0_zero_cells", worst, 0.0, 1e-15);

    let constant = SpectralFamily::constant(1, C)?;
    let kernel = PathKernel::smoothed(&constant, 0.1)?;
    let mc = McConfig {
        samples: 256,
        shards,
        ..McConfig::default()
    };
    let pair = InteractionSpec::new(2, T, ALPHA0, kernel.clone(), InitialDatum::ConstantOne)?;
    let expected = (C * mass).exp();
    s.rel("moment_bridge_n2", moment_fk_bridge(&pair, &mc, seed)?.mean, expected, 1e-9);
    s.rel("moment_bm_n2", moment_fk_bm(&pair, &mc, seed)?.mean, expected, 1e-9);
    let triple = InteractionSpec::new(3, T, ALPHA0, kernel, InitialDatum::ConstantOne)?;
    s.rel("moment_bridge_n3", moment_fk_bridge(&triple, &mc, seed)?.mean, (3.0 * C * mass).exp(), 1e-9);

    let riesz = SpectralFamily::riesz(1, 0.5)?;
    let single = InteractionSpec::new(1, T, ALPHA0, PathKernel::smoothed(&riesz, 0.25)?, InitialDatum::ConstantOne)?;
    s.rel("moment_single_particle", moment_fk_bridge(&single, &mc, seed)?.mean, 1.0, 1e-12);

    let kappa = 0.5;
    let decay = InteractionSpec::new(
        1,
        T,
        ALPHA0,
        PathKernel::smoothed(&constant, 0.1)?,
        InitialDatum::GaussianDecay { kappa },
    )?;
    let est = moment_fk_bm(
        &decay,
        &McConfig {
            samples: 20_000,
            ..mc
        },
        seed,
    )?;
    s.abs(
        "heat_average_gaussian_decay",
        est.mean,
        (1.0 + 2.0 * kappa * T).powf(-0.5),
        5.0 * est.stderr,
    );

    s.rel("mean_q_oracle_constant", mean_q_oracle(T, ALPHA0, &constant, 0.1)?, C * mass, 1e-6);

    let mut spec = ChaosTermSpec::new(T, ALPHA0, constant.clone(), 0.1, InitialDatum::ConstantOne)?;
    spec.samples = cfg.chaos_samples;
    spec.shards = shards;
    let series = second_moment_chaos(&spec, 4, seed)?;
    let mut factorial = 1.0;
    for term in &series.terms {
        factorial *= term.n.max(1) as f64;
        let exact = (C * mass).powi(term.n as i32) / factorial;
        s.abs(
            &format!("chaos_term_{}", term.n),
            term.value,
            exact,
            5.0 * term.stderr + 1e-12 * exact,
        );
    }

    s.rel(
        "finiteness_bound_constant",
        finiteness_bound(ALPHA0, &constant)?,
        eta0_l1(ALPHA0) * C,
        1e-9,
    );
    let mut profile = ProfileGrid::from_fn(4, 1, 8.0, 63, |_, x| (-x[0] * x[0] / 2.0).exp())?;
    profile.normalize()?;
    s.rel(
        "variational_constant_interaction",
        energy(&profile, ALPHA0, &constant, 0.0)?.interaction,
        C * mass,
        1e-12,
    );
    s.abs("phi_closed_form", phi_beta(1.0, 1.0, 1.5)?, 0.25, 1e-10);
    s.abs("lower_prefactor_a1", lower_prefactor(1.0), 0.5, 1e-12);

    let failed = s.checks.iter().filter(|c| !c.pass).count();
    Ok(SelftestReport {
        passed: s.checks.len() - failed,
        failed,
        checks: s.checks,
    })
}

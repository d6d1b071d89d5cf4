//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are still run and reported; they do
//! not fail the process. Any other failure does.

use std::process::Command;
use std::time::Instant;

use pamkit::envelope::strip_timing;
use pamkit_core::asymptotics::{
    g_beta, g_beta_inverse, growth_exponents, lambda_bounds, lower_prefactor, lyapunov_mc_estimate, phi_beta,
    LyapunovSpec,
};
use pamkit_core::chaos::{second_moment_chaos, ChaosTermSpec};
use pamkit_core::covariance::SpectralFamily;
use pamkit_core::exec::{map_indexed, shard_range, Moments};
use pamkit_core::functional::{
    mean_q_oracle, moment_fk_bm, moment_fk_bridge, qt_evaluate, time_weight_matrix, InitialDatum, InteractionSpec,
    McConfig, PathKernel,
};
use pamkit_core::paths::{bridge_cov, density_reweight, sample_bm, sample_bridge, SeedSpec, TimeGrid};
use pamkit_core::variational::{finiteness_bound, maximize, ProfileGrid, SolverConfig, VariationalProblem};
use pamkit_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240611;
const SHARDS: usize = 16;
/// Stream domain of the samplers written for this suite.
const SUITE_DOMAIN: u16 = 200;

/// Criteria whose failure is understood and documented in the README.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    10,
    "the bound is a t -> infinity limsup approached from above; Jensen's inequality \
     log E exp Q >= E Q already puts t^-a log E exp Q above the constant for t <= 1",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within_budget(start: Instant, seconds: f64) -> (bool, String) {
    let used = start.elapsed().as_secs_f64();
    (used < seconds, format!("{used:.2}s of {seconds}s"))
}

fn riesz_half() -> SpectralFamily {
    SpectralFamily::riesz(1, 0.5).expect("valid riesz family")
}

fn mc(samples: u64) -> McConfig {
    McConfig {
        samples,
        shards: SHARDS,
        ..McConfig::default()
    }
}

fn overlap95(a: (f64, f64), b: (f64, f64)) -> bool {
    let (la, ha) = (a.0 - 1.96 * a.1, a.0 + 1.96 * a.1);
    let (lb, hb) = (b.0 - 1.96 * b.1, b.0 + 1.96 * b.1);
    la <= hb && lb <= ha
}

/// Shard-parallel accumulation of per-sample values.
fn sharded<F>(samples: u64, f: F) -> Vec<Moments>
where
    F: Fn(u64, &mut Vec<Moments>) + Sync + Send,
{
    let parts = map_indexed(Execution::Parallel, SHARDS, |s| {
        let (lo, hi) = shard_range(samples, SHARDS, s);
        let mut acc = Vec::new();
        for i in lo..hi {
            f(i, &mut acc);
        }
        acc
    });
    let width = parts.iter().map(Vec::len).max().unwrap_or(0);
    (0..width)
        .map(|k| Moments::merge_all(parts.iter().filter_map(|p| p.get(k))))
        .collect()
}

fn push_at(acc: &mut Vec<Moments>, k: usize, x: f64) {
    if acc.len() <= k {
        acc.resize(k + 1, Moments::default());
    }
    acc[k].push(x);
}

fn c01_constant_closed_form() -> Result<Outcome, String> {
    let start = Instant::now();
    let fam = SpectralFamily::constant(1, 1.0).map_err(err)?;
    let spec = InteractionSpec::new(
        2,
        1.0,
        0.5,
        PathKernel::smoothed(&fam, 0.1).map_err(err)?,
        InitialDatum::ConstantOne,
    )
    .map_err(err)?;
    let est = moment_fk_bridge(&spec, &mc(1000), SEED).map_err(err)?;
    let exact = (8.0f64 / 3.0).exp();
    let rel = (est.mean / exact - 1.0).abs();
    let (fast, budget) = within_budget(start, 1.0);
    Ok(Outcome {
        pass: rel < 5e-3 && fast,
        detail: format!("moment {:.6} vs e^(8/3) = {exact:.6}, rel err {rel:.2e}, {budget}", est.mean),
    })
}

fn c02_bridge_vs_motion() -> Result<Outcome, String> {
    let start = Instant::now();
    let spec = InteractionSpec::new(
        2,
        1.0,
        0.5,
        PathKernel::smoothed(&riesz_half(), 0.25).map_err(err)?,
        InitialDatum::ConstantOne,
    )
    .map_err(err)?;
    let bridge = moment_fk_bridge(&spec, &mc(100_000), SEED).map_err(err)?;
    let motion = moment_fk_bm(&spec, &mc(100_000), SEED).map_err(err)?;
    let ok = overlap95((bridge.mean, bridge.stderr), (motion.mean, motion.stderr));
    let (fast, budget) = within_budget(start, 120.0);
    Ok(Outcome {
        pass: ok && fast,
        detail: format!(
            "bridge {:.4} +- {:.4}, motion {:.4} +- {:.4}, 95% intervals overlap: {ok}, {budget}",
            bridge.mean, bridge.stderr, motion.mean, motion.stderr
        ),
    })
}

fn c03_mean_field_oracle() -> Result<Outcome, String> {
    let start = Instant::now();
    let (t, alpha0, eps, m) = (1.0, 0.5, 0.25, 32);
    let fam = riesz_half();
    let kernel = PathKernel::smoothed(&fam, eps).map_err(err)?;
    let w = time_weight_matrix(&TimeGrid::new(t, m).map_err(err)?, alpha0).map_err(err)?;
    let fine = TimeGrid::new(t, 2 * m).map_err(err)?;
    let samples = 100_000;
    let stats = sharded(samples, |i, acc| {
        let paths = [
            sample_bridge(&fine, 1, SeedSpec::for_sample(SEED, SUITE_DOMAIN, 2 * i)),
            sample_bridge(&fine, 1, SeedSpec::for_sample(SEED, SUITE_DOMAIN, 2 * i + 1)),
        ];
        let q = qt_evaluate(&paths, &kernel, &w, &[]).expect("bounded kernel");
        push_at(acc, 0, q);
    });
    let oracle = mean_q_oracle(t, alpha0, &fam, eps).map_err(err)?;
    let (mean, se) = (stats[0].mean(), stats[0].stderr());
    let z = (mean - oracle).abs() / se;
    let (fast, budget) = within_budget(start, 60.0);
    Ok(Outcome {
        pass: z <= 3.0 && fast,
        detail: format!("MC mean Q {mean:.5} +- {se:.5}, oracle {oracle:.5}, |z| = {z:.2}, {budget}"),
    })
}

fn c04_chaos_vs_fk() -> Result<Outcome, String> {
    let start = Instant::now();
    let (t, eps) = (0.5, 0.5);
    let fam = riesz_half();
    let mut spec = ChaosTermSpec::new(t, 0.5, fam.clone(), eps, InitialDatum::ConstantOne).map_err(err)?;
    spec.samples = 200_000;
    spec.shards = SHARDS;
    let series = second_moment_chaos(&spec, 5, SEED).map_err(err)?;
    let fk_spec = InteractionSpec::new(
        2,
        t,
        0.5,
        PathKernel::smoothed(&fam, eps).map_err(err)?,
        InitialDatum::ConstantOne,
    )
    .map_err(err)?;
    let fk = moment_fk_bridge(&fk_spec, &mc(200_000), SEED).map_err(err)?;
    let monotone = series.terms.windows(2).all(|w| w[1].partial_sum >= w[0].partial_sum);
    let complete = series.stopped_at.is_none() && series.terms.len() == 6;
    // the truncated sum sits below the full series by at most the tail bound
    let mc_band = 1.96 * (series.stderr.powi(2) + fk.stderr.powi(2)).sqrt();
    let gap = fk.mean - series.sum;
    let agree = gap >= -mc_band && gap <= series.tail_bound + mc_band;
    let (fast, budget) = within_budget(start, 300.0);
    Ok(Outcome {
        pass: monotone && complete && agree && fast,
        detail: format!(
            "chaos N=5 {:.5} +- {:.5} (tail <= {:.4}), FK {:.5} +- {:.5}, gap {gap:.5} in [-{mc_band:.4}, {:.4}], \
             monotone partial sums: {monotone}, {budget}",
            series.sum,
            series.stderr,
            series.tail_bound,
            fk.mean,
            fk.stderr,
            series.tail_bound + mc_band
        ),
    })
}

fn c05_bridge_covariance() -> Result<Outcome, String> {
    let start = Instant::now();
    let (t, m) = (2.0, 10);
    let grid = TimeGrid::new(t, m).map_err(err)?;
    let nodes = [1, 3, 5, 7, 9];
    let samples = 1_000_000;
    let stats = sharded(samples, |i, acc| {
        let p = sample_bridge(&grid, 1, SeedSpec::for_sample(SEED, SUITE_DOMAIN + 1, i));
        for (a, &u) in nodes.iter().enumerate() {
            for (b, &v) in nodes.iter().enumerate() {
                push_at(acc, a * nodes.len() + b, p.values[u] * p.values[v]);
            }
        }
    });
    let mut worst = 0.0f64;
    for (a, &u) in nodes.iter().enumerate() {
        for (b, &v) in nodes.iter().enumerate() {
            let exact = bridge_cov(grid.node(u), grid.node(v), t).map_err(err)?;
            let s = &stats[a * nodes.len() + b];
            worst = worst.max((s.mean() - exact).abs() / s.stderr());
        }
    }
    let (fast, budget) = within_budget(start, 60.0);
    Ok(Outcome {
        pass: worst <= 5.0 && fast,
        detail: format!("25 entries, largest deviation {worst:.2} standard errors, {budget}"),
    })
}

fn c06_density_identity() -> Result<Outcome, String> {
    let (t, lambda, m) = (1.0, 0.5, 64);
    let full = TimeGrid::new(t, m).map_err(err)?;
    let half = TimeGrid::new(lambda * t, m / 2).map_err(err)?;
    let origin = [0.0];
    let samples = 1_000_000;
    let stats = sharded(samples, |i, acc| {
        let bridge = sample_bridge(&full, 1, SeedSpec::for_sample(SEED, SUITE_DOMAIN + 2, i));
        let inside = bridge.values[..=m / 2].iter().all(|v| v.abs() <= 1.0);
        push_at(acc, 0, if inside { 1.0 } else { 0.0 });
        let motion = sample_bm(&half, 1, SeedSpec::for_sample(SEED, SUITE_DOMAIN + 3, i));
        let weight = if motion.sup_norm() <= 1.0 {
            density_reweight(lambda, t, &origin, &origin, &motion).expect("valid lambda")
        } else {
            0.0
        };
        push_at(acc, 1, weight);
    });
    let (b, w) = (&stats[0], &stats[1]);
    let ok = overlap95((b.mean(), b.stderr()), (w.mean(), w.stderr()));
    Ok(Outcome {
        pass: ok,
        detail: format!(
            "bridge side {:.5} +- {:.5}, reweighted motion side {:.5} +- {:.5}, overlap: {ok}",
            b.mean(),
            b.stderr(),
            w.mean(),
            w.stderr()
        ),
    })
}

fn c07_gradient_check() -> Result<Outcome, String> {
    let families = [
        ("riesz", riesz_half()),
        ("rough_fractional", SpectralFamily::rough_fractional(0.4).map_err(err)?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let mut trials = 0;
    for (_, fam) in &families {
        for eps in [0.0, 0.1] {
            let shape = ProfileGrid::zeros(6, 1, 3.0, 24).map_err(err)?;
            let problem = VariationalProblem::new(&shape, 0.5, fam, eps).map_err(err)?;
            for _ in 0..3 {
                let mut g = ProfileGrid::from_fn(6, 1, 3.0, 24, |_, x| {
                    (-0.5 * x[0] * x[0]).exp() * (0.5 + rng.random::<f64>())
                })
                .map_err(err)?;
                g.normalize().map_err(err)?;
                let mut grad = vec![0.0; g.values.len()];
                problem.evaluate(&g.values, Some(&mut grad));
                for _ in 0..4 {
                    let dir: Vec<f64> = (0..g.values.len()).map(|_| rng.random::<f64>() - 0.5).collect();
                    let analytic: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
                    let h = 1e-5;
                    let shifted = |sign: f64| -> f64 {
                        let v: Vec<f64> = g.values.iter().zip(&dir).map(|(v, d)| v + sign * h * d).collect();
                        problem.evaluate(&v, None).total
                    };
                    let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
                    worst = worst.max((fd - analytic).abs() / analytic.abs());
                    trials += 1;
                }
            }
        }
    }
    Ok(Outcome {
        pass: worst <= 1e-5,
        detail: format!("{trials} directional derivatives over riesz and rough_fractional, worst relative error {worst:.2e}"),
    })
}

fn solver() -> SolverConfig {
    SolverConfig::default()
}

fn c08_scaling_identity() -> Result<Outcome, String> {
    let start = Instant::now();
    let fam = riesz_half();
    let base = maximize(0.5, &fam, 0.0, &solver(), SEED).map_err(err)?;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for theta in [0.5f64, 2.0] {
        let scaled = maximize(0.5, &fam.scaled(theta), 0.0, &solver(), SEED).map_err(err)?;
        let ratio = scaled.e / base.e;
        let target = theta.powf(2.0 / 1.5);
        let rel = (ratio / target - 1.0).abs();
        worst = worst.max(rel);
        parts.push(format!("theta {theta}: ratio {ratio:.5} vs {target:.5}"));
    }
    let (fast, budget) = within_budget(start, 600.0);
    Ok(Outcome {
        pass: worst <= 0.02 && fast,
        detail: format!("E = {:.4}; {}; worst rel err {worst:.2e}, {budget}", base.e, parts.join(", ")),
    })
}

fn c09_finiteness_bound() -> Result<Outcome, String> {
    let mut sweep: Vec<(String, f64, SpectralFamily, SolverConfig)> = Vec::new();
    for alpha0 in [0.25, 0.5] {
        for alpha in [0.25, 0.5, 0.75] {
            sweep.push((format!("riesz l=1 a={alpha}"), alpha0, SpectralFamily::riesz(1, alpha).map_err(err)?, solver()));
        }
        for hurst in [0.3, 0.4, 0.5] {
            sweep.push((
                format!("rough_fractional H={hurst}"),
                alpha0,
                SpectralFamily::rough_fractional(hurst).map_err(err)?,
                solver(),
            ));
        }
        sweep.push(("constant c=1".into(), alpha0, SpectralFamily::constant(1, 1.0).map_err(err)?, solver()));
        let small = SolverConfig {
            slices: 4,
            box_l: 4.0,
            mx: 16,
            starts: 2,
            ..solver()
        };
        sweep.push(("riesz l=2 a=1".into(), alpha0, SpectralFamily::riesz(2, 1.0).map_err(err)?, small));
    }
    let mut failures = Vec::new();
    let mut tightest = f64::INFINITY;
    for (name, alpha0, fam, cfg) in &sweep {
        let e = maximize(*alpha0, fam, 0.0, cfg, SEED).map_err(err)?.e;
        let bound = finiteness_bound(*alpha0, fam).map_err(err)?;
        tightest = tightest.min(bound - e);
        if e > bound {
            failures.push(format!("{name} alpha0={alpha0}: E {e:.4} > bound {bound:.4}"));
        }
    }
    Ok(Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} families, smallest margin bound - E = {tightest:.4}", sweep.len())
        } else {
            failures.join("; ")
        },
    })
}

fn c10_lyapunov_one_sided() -> Result<Outcome, String> {
    let fam = riesz_half();
    let e = maximize(0.5, &fam, 0.0, &solver(), SEED).map_err(err)?.e;
    let spec = LyapunovSpec {
        n: 2,
        alpha0: 0.5,
        family: fam.clone(),
        t_ladder: vec![0.5, 1.0, 2.0, 4.0],
        eps_ladder: vec![0.04, 0.02, 0.01],
        e: Some(e),
    };
    let est = lyapunov_mc_estimate(&spec, &mc(10_000), SEED).map_err(err)?;
    let upper = est.upper_constant.ok_or("missing upper constant")?;
    let points: Vec<String> = est
        .points
        .iter()
        .map(|p| {
            let verdict = if p.normalized <= upper + 3.0 * p.normalized_stderr { "ok" } else { "above" };
            format!("t={} {:.3}+-{:.3} {verdict}", p.t, p.normalized, p.normalized_stderr)
        })
        .collect();
    let pass = est.points.iter().all(|p| p.normalized <= upper + 3.0 * p.normalized_stderr);
    // Jensen: log E exp Q >= E Q, computed without sampling
    let (a, _) = growth_exponents(0.5, 0.5).map_err(err)?;
    let mut jensen = Vec::new();
    for &t in &spec.t_ladder {
        let floor = t.powf(-a) * mean_q_oracle(t, 0.5, &fam, 0.01).map_err(err)?;
        jensen.push(format!("t={t} {floor:.3}"));
    }
    Ok(Outcome {
        pass,
        detail: format!(
            "upper constant 2(1/2)^(4/3)E = {upper:.3} (E = {e:.4}); MC: {}; Jensen floor t^-a E Q: {}",
            points.join(", "),
            jensen.join(", ")
        ),
    })
}

fn c11_phi_and_g() -> Result<Outcome, String> {
    let phi = phi_beta(1.0, 1.0, 1.5).map_err(err)?;
    let closed = (phi - 0.25).abs();
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut points = 0;
    for &beta in &[0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0] {
        for k in 0..=18 {
            let b = 1.05 + 0.05 * k as f64;
            for j in 0..=12 {
                let x = 10f64.powf(-3.0 + 0.5 * j as f64);
                let p = phi_beta(x, beta, b).map_err(err)?;
                let res = (beta * b * p.powf(b - 1.0) - (x - p)).abs();
                worst_abs = worst_abs.max(res);
                worst_rel = worst_rel.max(res / x);
                points += 1;
            }
        }
    }
    let mut round_trip = 0.0f64;
    for &beta in &[0.5, 1.0, 10.0] {
        for &b in &[1.2, 1.5, 1.8] {
            for &lambda in &[0.1, 1.0, 10.0] {
                let back = g_beta_inverse(g_beta(lambda, beta, b).map_err(err)?, beta, b).map_err(err)?;
                round_trip = round_trip.max((back / lambda - 1.0).abs());
            }
        }
    }
    Ok(Outcome {
        pass: closed <= 1e-10 && worst_rel < 1e-12 && round_trip <= 1e-8,
        detail: format!(
            "phi_1(1) - 0.25 = {closed:.1e}; residual over {points} points: max relative {worst_rel:.1e}, \
             max absolute {worst_abs:.1e}; g round trip {round_trip:.1e}"
        ),
    })
}

fn c12_indices() -> Result<Outcome, String> {
    let mut violations = 0;
    let mut cases = 0;
    for n in 2..=6 {
        for i in 1..20 {
            let alpha = 0.1 * i as f64;
            for j in 1..10 {
                let alpha0 = 0.1 * j as f64;
                let r = lambda_bounds(n, alpha0, alpha, 1.0, Some(1.0), Some(true)).map_err(err)?;
                let lower = r.lambda_lower.ok_or("lower bound withheld")?;
                if lower > r.lambda_upper_compact {
                    violations += 1;
                }
                cases += 1;
            }
        }
    }
    let (a, _) = growth_exponents(1.0 - 1e-9, 0.5).map_err(err)?;
    let pref = (lower_prefactor(a) - 0.5).abs();
    let (_, b) = growth_exponents(0.5, 0.5).map_err(err)?;
    let g = g_beta(1.0, 1e3, b).map_err(err)?;
    let g_rel = (g / 0.5 - 1.0).abs();
    Ok(Outcome {
        pass: violations == 0 && pref <= 1e-6 && g_rel <= 0.01,
        detail: format!(
            "{violations} ordering violations in {cases} cases; |prefactor(a={a:.9}) - 1/2| = {pref:.1e}; \
             g_beta(1) at beta=1e3, b={b}: {g:.5} ({:.2}% from 1/2)",
            100.0 * g_rel
        ),
    })
}

fn run_selftest(dir: &std::path::Path) -> Result<String, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_pamkit"))
        .args(["selftest", "--seed", "7", "--out", "envelope.json"])
        .current_dir(dir)
        .status()
        .map_err(err)?;
    if !status.success() {
        return Err(format!("selftest exited with {status}"));
    }
    std::fs::read_to_string(dir.join("envelope.json")).map_err(err)
}

fn c13_reproducibility() -> Result<Outcome, String> {
    let first = tempfile::tempdir().map_err(err)?;
    let second = tempfile::tempdir().map_err(err)?;
    let a = strip_timing(&run_selftest(first.path())?).map_err(err)?;
    let b = strip_timing(&run_selftest(second.path())?).map_err(err)?;
    let same = a == b;
    Ok(Outcome {
        pass: same,
        detail: format!("two selftest envelopes of {} bytes, identical without timing: {same}", a.len()),
    })
}

fn main() {
    let criteria: [(&str, Check); 13] = [
        ("constant-kernel closed form", c01_constant_closed_form),
        ("bridge vs motion formula", c02_bridge_vs_motion),
        ("mean-field oracle", c03_mean_field_oracle),
        ("chaos series vs Feynman-Kac", c04_chaos_vs_fk),
        ("bridge sampler covariance", c05_bridge_covariance),
        ("bridge density identity", c06_density_identity),
        ("variational gradient check", c07_gradient_check),
        ("variational scaling identity", c08_scaling_identity),
        ("finiteness bound dominates", c09_finiteness_bound),
        ("Lyapunov one-sided check", c10_lyapunov_one_sided),
        ("phi_beta and g_beta", c11_phi_and_g),
        ("growth index ordering and limits", c12_indices),
        ("selftest reproducibility", c13_reproducibility),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.trim_start_matches("c").parse().ok())
        .collect();
    let mut unexpected = Vec::new();
    let mut passed = 0;
    let mut ran = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_FAILURES.iter().find(|(c, _)| *c == id);
        let tag = match (outcome.pass, known) {
            (true, _) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => "FAIL",
        };
        println!("criterion {id:>2} {tag}: {name}: {} [{secs:.1}s]", outcome.detail);
        if outcome.pass {
            passed += 1;
        } else if let Some((_, why)) = known {
            println!("             known failure: {why}");
        } else {
            unexpected.push(id);
        }
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

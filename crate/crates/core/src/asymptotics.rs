//! Lyapunov upper bounds, Monte Carlo growth rates and exponential growth
//! indices.
//!
//! Under the scaling condition the `n`-th moment grows like `exp(c t^a)` with
//! `a = (4 - alpha - 2 alpha0)/(2 - alpha)`, and moments at `|x| = lambda t^{(a+1)/2}`
//! change from growth to decay at the growth indices. The variational value
//! `E` is always an input here and is never recomputed.

use serde::{Deserialize, Serialize};

use crate::covariance::SpectralFamily;
use crate::error::{PamError, Result};
use crate::exec::try_map_indexed;
use crate::functional::{moment_ladder, Formula, InitialDatum, InteractionSpec, McConfig, PathKernel};

fn check_exponents(alpha0: f64, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha0) {
        return Err(PamError::domain(format!("alpha0 = {alpha0} outside [0, 1)")));
    }
    if !(0.0..2.0).contains(&alpha) {
        return Err(PamError::domain(format!("alpha = {alpha} outside [0, 2)")));
    }
    Ok(())
}

/// `a = (4 - alpha - 2 alpha0)/(2 - alpha)` and `b = 2a/(a+1)`; `alpha = 0` is
/// accepted for constant-kernel checks.
pub fn growth_exponents(alpha0: f64, alpha: f64) -> Result<(f64, f64)> {
    check_exponents(alpha0, alpha)?;
    let a = (4.0 - alpha - 2.0 * alpha0) / (2.0 - alpha);
    Ok((a, 2.0 * a / (a + 1.0)))
}

fn check_n_e(n: usize, e: f64) -> Result<()> {
    if n < 2 {
        return Err(PamError::domain(format!("moment order n = {n} must be at least 2")));
    }
    if !(e >= 0.0 && e.is_finite()) {
        return Err(PamError::domain(format!("variational value E = {e} must be finite and nonnegative")));
    }
    Ok(())
}

/// `((n-1)/2)^{2/(2-alpha)} E`.
fn lambda_scale(n: usize, alpha: f64, e: f64) -> f64 {
    ((n as f64 - 1.0) / 2.0).powf(2.0 / (2.0 - alpha)) * e
}

/// `n ((n-1)/2)^{2/(2-alpha)} E`.
pub fn lyapunov_upper(n: usize, alpha0: f64, alpha: f64, e: f64) -> Result<f64> {
    check_exponents(alpha0, alpha)?;
    check_n_e(n, e)?;
    Ok(n as f64 * lambda_scale(n, alpha, e))
}

fn check_beta_b(beta: f64, b: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PamError::domain(format!("beta = {beta} must be positive")));
    }
    if !(b > 1.0 && b < 2.0) {
        return Err(PamError::domain(format!("b = {b} outside (1, 2)")));
    }
    Ok(())
}

/// Root of `beta b phi^{b-1} = x - phi` on `(0, x)`.
pub fn phi_beta(x: f64, beta: f64, b: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(PamError::domain(format!("phi_beta needs x > 0, got {x}")));
    }
    check_beta_b(beta, b)?;
    let f = |p: f64| beta * b * p.powf(b - 1.0) + p - x;
    let k = 1.0 / (b - 1.0);
    // dropping phi on the right gives an upper bracket, feeding it back a lower one
    let mut hi = x.min((x / (beta * b)).powf(k));
    let mut lo = if hi < x { ((x - hi) / (beta * b)).powf(k) } else { 0.0 };
    for _ in 0..400 {
        let mid = if lo > 0.0 && hi > 2.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let phi = if f(hi).abs() < f(lo).abs() || lo == 0.0 { hi } else { lo };
    let residual = f(phi).abs();
    if !(residual < 1e-12 * x) {
        return Err(PamError::numerical(
            format!("phi_beta residual {residual:.3e} at x = {x}, beta = {beta}, b = {b}"),
            residual / x,
        ));
    }
    Ok(phi)
}

/// `psi_beta(w) = beta^2 b^2 w^{2b-2} / 2 + beta w^b`.
pub fn psi_beta(w: f64, beta: f64, b: f64) -> f64 {
    0.5 * beta * beta * b * b * w.powf(2.0 * b - 2.0) + beta * w.powf(b)
}

/// `g_beta(lambda) = psi_beta(phi_beta(lambda))`.
pub fn g_beta(lambda: f64, beta: f64, b: f64) -> Result<f64> {
    Ok(psi_beta(phi_beta(lambda, beta, b)?, beta, b))
}

/// Inverse of the increasing map [`g_beta`], by bisection.
pub fn g_beta_inverse(y: f64, beta: f64, b: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(PamError::domain(format!("g_beta_inverse needs y > 0, got {y}")));
    }
    check_beta_b(beta, b)?;
    // g_beta(lambda) <= lambda^2 / 2 + beta lambda^b, and -> lambda^2/2 as beta grows
    let mut hi = (2.0 * y).sqrt().max(f64::MIN_POSITIVE);
    while g_beta(hi, beta, b)? < y {
        hi *= 2.0;
    }
    let mut lo = hi;
    while g_beta(lo, beta, b)? > y {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_beta(mid, beta, b)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (glo, ghi) = (g_beta(lo, beta, b)?, g_beta(hi, beta, b)?);
    let lambda = if (ghi - y).abs() < (y - glo).abs() { hi } else { lo };
    let rel = (g_beta(lambda, beta, b)? / y - 1.0).abs();
    if !(rel <= 1e-10) {
        return Err(PamError::numerical(format!("g_beta inverse settled at relative error {rel:.3e}"), rel));
    }
    Ok(lambda)
}

/// `a^{a/2} (a+1)^{-(a+1)/2}`, the ratio of the lower index to `sqrt(2 Lambda)`.
pub fn lower_prefactor(a: f64) -> f64 {
    a.powf(a / 2.0) * (a + 1.0).powf(-(a + 1.0) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthIndexReport {
    pub n: usize,
    pub alpha0: f64,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    /// Variational value used as input.
    pub e: f64,
    pub beta: Option<f64>,
    /// `((n-1)/2)^{2/(2-alpha)} E`.
    pub lambda_scale: f64,
    /// `g_beta^{-1}(Lambda)` for initial data decaying like `exp(-beta |x|^b)`.
    pub lambda_upper: Option<f64>,
    /// `sqrt(2 Lambda)`, for compactly supported initial data.
    pub lambda_upper_compact: f64,
    pub lambda_lower: Option<f64>,
    /// Why `lambda_lower` is absent.
    pub lower_note: Option<String>,
}

/// Growth-index bounds from a variational value `E`.
///
/// The lower bound is proved for nonnegative covariance functions only;
/// pass `nonnegative_kernel = false` (or `None` when unknown) to withhold it.
pub fn lambda_bounds(
    n: usize,
    alpha0: f64,
    alpha: f64,
    e: f64,
    beta: Option<f64>,
    nonnegative_kernel: Option<bool>,
) -> Result<GrowthIndexReport> {
    check_n_e(n, e)?;
    let (a, b) = growth_exponents(alpha0, alpha)?;
    let scale = lambda_scale(n, alpha, e);
    let compact = (2.0 * scale).sqrt();
    let lambda_upper = match beta {
        Some(beta) if scale > 0.0 => Some(g_beta_inverse(scale, beta, b)?),
        Some(beta) => {
            check_beta_b(beta, b)?;
            Some(0.0)
        }
        None => None,
    };
    let (lambda_lower, lower_note) = match nonnegative_kernel {
        Some(true) => (Some(lower_prefactor(a) * compact), None),
        Some(false) => (
            None,
            Some("the lower bound needs a nonnegative covariance function; this family only has a nonnegative spectral measure".into()),
        ),
        None => (
            None,
            Some("the lower bound needs a nonnegative covariance function, which could not be decided for this family".into()),
        ),
    };
    Ok(GrowthIndexReport {
        n,
        alpha0,
        alpha,
        a,
        b,
        e,
        beta,
        lambda_scale: scale,
        lambda_upper,
        lambda_upper_compact: compact,
        lambda_lower,
        lower_note,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPoint {
    pub t: f64,
    /// Smallest smoothing parameter used; `E exp Q_eps <= E exp Q`.
    pub eps: f64,
    pub log_moment: f64,
    pub log_stderr: f64,
    /// `t^{-a} log E exp Q_t`.
    pub normalized: f64,
    pub normalized_stderr: f64,
    pub max_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub n: usize,
    pub a: f64,
    pub points: Vec<LyapunovPoint>,
    /// Weighted least squares fit `log m(t) = slope t^a + intercept`.
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub upper_constant: Option<f64>,
    /// Every normalised point within `upper_constant + 3 sigma`.
    pub within_upper: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct LyapunovSpec {
    pub n: usize,
    pub alpha0: f64,
    pub family: SpectralFamily,
    pub t_ladder: Vec<f64>,
    pub eps_ladder: Vec<f64>,
    /// Variational value for the analytic upper constant.
    pub e: Option<f64>,
}

fn weighted_line(x: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64, f64) {
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / s.max(1e-12 * scale).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    (slope, intercept, (sw / det).sqrt())
}

/// `log E exp Q_t` over pinned bridges on a ladder of horizons, with a
/// regression of the log-moments against `t^a`.
///
/// Each horizon uses the smoothed kernels of `eps_ladder` and keeps the
/// finest rung, a lower estimate of the unsmoothed moment; the comparison
/// with the analytic constant is therefore one-sided.
pub fn lyapunov_mc_estimate(spec: &LyapunovSpec, mc: &McConfig, seed: u64) -> Result<LyapunovEstimate> {
    if spec.t_ladder.len() < 4 {
        return Err(PamError::config("the t-ladder needs at least 4 points"));
    }
    if spec.t_ladder.iter().any(|t| !(*t > 0.0)) {
        return Err(PamError::config("t-ladder entries must be positive"));
    }
    if spec.n == 0 {
        return Err(PamError::config("moment order must be positive"));
    }
    let alpha = spec
        .family
        .homogeneity()
        .ok_or_else(|| PamError::config("the t^a normalisation needs a homogeneous covariance"))?;
    let (a, _) = growth_exponents(spec.alpha0, alpha)?;
    let upper_constant = match spec.e {
        Some(e) if spec.n >= 2 => Some(lyapunov_upper(spec.n, spec.alpha0, alpha, e)?),
        _ => None,
    };
    let eps_min = spec.eps_ladder.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(eps_min > 0.0) {
        return Err(PamError::config("the eps ladder needs positive entries"));
    }
    // ladder points are independent jobs; the shards inside each one run sequentially
    let inner = McConfig {
        exec: crate::exec::Execution::Sequential,
        ..*mc
    };
    let points = try_map_indexed(mc.exec, spec.t_ladder.len(), |k| {
        let t = spec.t_ladder[k];
        if spec.n == 1 {
            return Ok(LyapunovPoint {
                t,
                eps: eps_min,
                log_moment: 0.0,
                log_stderr: 0.0,
                normalized: 0.0,
                normalized_stderr: 0.0,
                max_exponent: 0.0,
            });
        }
        let kernel = PathKernel::smoothed(&spec.family, eps_min)?;
        let base = InteractionSpec::new(spec.n, t, spec.alpha0, kernel, InitialDatum::ConstantOne)?;
        let est = moment_ladder(&base, &spec.family, &spec.eps_ladder, Formula::PinnedBridge, &inner, seed)?;
        let log_moment = est.mean.ln();
        let log_stderr = est.stderr / est.mean;
        let ta = t.powf(a);
        Ok(LyapunovPoint {
            t,
            eps: eps_min,
            log_moment,
            log_stderr,
            normalized: log_moment / ta,
            normalized_stderr: log_stderr / ta,
            max_exponent: est.max_exponent,
        })
    })?;
    let x: Vec<f64> = points.iter().map(|p| p.t.powf(a)).collect();
    let y: Vec<f64> = points.iter().map(|p| p.log_moment).collect();
    let s: Vec<f64> = points.iter().map(|p| p.log_stderr).collect();
    let (slope, intercept, slope_stderr) = weighted_line(&x, &y, &s);
    let within_upper = upper_constant.map(|c| points.iter().all(|p| p.normalized <= c + 3.0 * p.normalized_stderr));
    Ok(LyapunovEstimate {
        n: spec.n,
        a,
        points,
        slope,
        slope_stderr,
        intercept,
        upper_constant,
        within_upper,
    })
}

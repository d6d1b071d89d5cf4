//! Wiener chaos kernels and the chaos expansion of the second moment.
//!
//! For `u_0 = 1` or a Gaussian `u_0`, the `n`-th chaos term of `E u(t,x)^2`
//! is
//!
//! ```text
//! (1/n!) int_{[0,t]^{2n}} prod_j |s_j - r_j|^{-alpha0}
//!     (2 pi)^{-n ell} int prod_j mu_eps(d xi_j) Re F(s, xi) conj F(r, xi) ds dr,
//! F(s, xi) = E[ u_0(x + W(t)) exp(i sum_j xi_j . W(t - s_j)) ],
//! ```
//!
//! with `W` a Brownian motion (the phase `e^{i xi.x}` cancels). Splitting
//! `W` into a bridge plus its endpoint gives the closed forms used below.
//! The `(s_j, r_j)` pairs are drawn exactly from the normalised weight
//! `|s - r|^{-alpha0}` and the `xi_j` from `mu_eps`, so each sample is
//! bounded by one in absolute value.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{FamilyKind, SpectralFamily, SpectralSampler};
use crate::error::{PamError, Result};
use crate::exec::{shard_range, try_map_indexed, Execution, Moments};
use crate::functional::{weight_mass, InitialDatum};
use crate::paths::{domain, SeedSpec};

/// Highest chaos order of the series route.
pub const MAX_SERIES_ORDER: usize = 8;

/// `p_t(x) = (2 pi t)^{-ell/2} exp(-|x|^2 / 2t)`.
pub fn heat_kernel(t: f64, x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (2.0 * PI * t).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * t)).exp()
}

/// `(1/n!) p_{t-s_n}(x - y_n) ... p_{s_2-s_1}(y_2 - y_1) p_{s_1}(y_1 - z)` for
/// ordered times `0 < s_1 < ... < s_n < t`; `y` holds `y_1, ..., y_n`
/// back to back.
pub fn gn_eval(s: &[f64], y: &[f64], t: f64, z: &[f64], x: &[f64]) -> Result<f64> {
    let n = s.len();
    let ell = x.len();
    if z.len() != ell || y.len() != n * ell {
        return Err(PamError::domain("gn_eval: dimension mismatch"));
    }
    let mut prev_t = 0.0;
    for &sj in s {
        if !(sj > prev_t) {
            return Err(PamError::domain("gn_eval needs 0 < s_1 < ... < s_n"));
        }
        prev_t = sj;
    }
    if !(t > prev_t) {
        return Err(PamError::domain("gn_eval needs s_n < t"));
    }
    let mut diff = vec![0.0; ell];
    let mut value = 1.0;
    let mut prev_y = z;
    let mut prev_s = 0.0;
    for j in 0..n {
        let yj = &y[j * ell..(j + 1) * ell];
        for c in 0..ell {
            diff[c] = yj[c] - prev_y[c];
        }
        value *= heat_kernel(s[j] - prev_s, &diff);
        prev_y = yj;
        prev_s = s[j];
    }
    for c in 0..ell {
        diff[c] = x[c] - prev_y[c];
    }
    value *= heat_kernel(t - prev_s, &diff);
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    Ok(value / fact)
}

/// Inputs shared by the chaos routes.
#[derive(Clone, Debug)]
pub struct ChaosTermSpec {
    pub t: f64,
    pub x: Vec<f64>,
    pub alpha0: f64,
    pub family: SpectralFamily,
    /// Gaussian damping of the spectral measure; the series route needs
    /// `eps > 0`, the bound route also accepts 0 for homogeneous families.
    pub eps: f64,
    pub initial: InitialDatum,
    pub samples: u64,
    pub shards: usize,
    pub exec: Execution,
    /// Constant `C` of the bound route; defaults to `||gamma_0||_{L^1[-t,t]}`.
    pub bound_constant: Option<f64>,
}

impl ChaosTermSpec {
    pub fn new(t: f64, alpha0: f64, family: SpectralFamily, eps: f64, initial: InitialDatum) -> Result<Self> {
        if !(t > 0.0) {
            return Err(PamError::config("chaos terms need t > 0"));
        }
        if !(0.0..1.0).contains(&alpha0) {
            return Err(PamError::config(format!("alpha0 = {alpha0} outside [0, 1)")));
        }
        if !(eps >= 0.0) {
            return Err(PamError::config("eps must be nonnegative"));
        }
        initial.validate()?;
        if !crate::covariance::dalang_check(&family).passes() {
            return Err(PamError::config("family fails Dalang's condition"));
        }
        let ell = family.ell();
        Ok(ChaosTermSpec {
            t,
            x: vec![0.0; ell],
            alpha0,
            family,
            eps,
            initial,
            samples: 20_000,
            shards: 16,
            exec: Execution::Parallel,
            bound_constant: None,
        })
    }

    pub fn ell(&self) -> usize {
        self.family.ell()
    }

    pub fn default_bound_constant(&self) -> f64 {
        2.0 * self.t.powf(1.0 - self.alpha0) / (1.0 - self.alpha0)
    }

    fn heat_average_sq(&self) -> Result<f64> {
        Ok(self.initial.heat_average(self.t, &self.x)?.powi(2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosTerm {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub partial_sum: f64,
    pub reliable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosSeries {
    pub terms: Vec<ChaosTerm>,
    /// `sum_{n <= N}` of the computed terms.
    pub sum: f64,
    /// Monte Carlo error of `sum`.
    pub stderr: f64,
    /// Rigorous bound on the omitted terms `n > N`.
    pub tail_bound: f64,
    /// Set when a term was unreliable and the series was cut there.
    pub stopped_at: Option<usize>,
}

/// Draws `(s, r)` from the density proportional to `|s - r|^{-alpha0}` on `[0,t]^2`.
fn sample_time_pair<R: Rng + ?Sized>(rng: &mut R, t: f64, alpha0: f64) -> (f64, f64) {
    // |s - r| has density proportional to u^{-alpha0} (t - u)
    let u = loop {
        let v: f64 = rng.random();
        let u = t * v.powf(1.0 / (1.0 - alpha0));
        let accept: f64 = rng.random();
        if accept * t < t - u {
            break u;
        }
    };
    let lo = rng.random::<f64>() * (t - u);
    if rng.random::<bool>() {
        (lo, lo + u)
    } else {
        (lo + u, lo)
    }
}

/// `exp(-xi^T V xi / 2)` factor and the endpoint coefficient
/// `a = sum_j xi_j (1 - s_j / t)` for one time set.
fn bridge_quadratic(s: &[f64], xi: &[f64], ell: usize, t: f64, a: &mut [f64]) -> f64 {
    let n = s.len();
    let mut quad = 0.0;
    for j in 0..n {
        for k in 0..n {
            let dot: f64 = (0..ell).map(|c| xi[j * ell + c] * xi[k * ell + c]).sum();
            quad += dot * (s[j].min(s[k]) - s[j] * s[k] / t);
        }
    }
    a.fill(0.0);
    for j in 0..n {
        for c in 0..ell {
            a[c] += xi[j * ell + c] * (1.0 - s[j] / t);
        }
    }
    quad
}

/// `E[u_0(x + G) e^{i a.G}]` for `G ~ N(0, t I)`.
fn endpoint_factor(initial: &InitialDatum, t: f64, x: &[f64], a: &[f64]) -> Complex64 {
    match *initial {
        InitialDatum::GaussianDecay { kappa } => {
            // per coordinate: (2 pi t)^{-1/2} sqrt(pi/A) exp(B^2 / 4A - kappa x^2)
            let big_a = 0.5 / t + kappa;
            let pref = (2.0 * PI * t).powf(-0.5) * (PI / big_a).sqrt();
            let mut out = Complex64::new(1.0, 0.0);
            for c in 0..x.len() {
                let b = Complex64::new(-2.0 * kappa * x[c], a[c]);
                out *= pref * (b * b / (4.0 * big_a) - kappa * x[c] * x[c]).exp();
            }
            out
        }
        _ => {
            let a2: f64 = a.iter().map(|v| v * v).sum();
            Complex64::new((-0.5 * t * a2).exp(), 0.0)
        }
    }
}

fn chaos_series_term(spec: &ChaosTermSpec, n: usize, sampler: &SpectralSampler, seed: u64) -> Result<(f64, f64)> {
    let ell = spec.ell();
    let t = spec.t;
    let shards = spec.shards.max(1);
    let parts = try_map_indexed(spec.exec, shards, |shard| {
        let (lo, hi) = shard_range(spec.samples, shards, shard);
        let mut mom = Moments::default();
        let mut s = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut xi = vec![0.0; n * ell];
        let mut a_s = vec![0.0; ell];
        let mut a_r = vec![0.0; ell];
        for i in lo..hi {
            let mut rng = SeedSpec::for_sample(seed, domain::CHAOS_SERIES + n as u16, i).rng();
            for j in 0..n {
                let (sj, rj) = sample_time_pair(&mut rng, t, spec.alpha0);
                s[j] = sj;
                r[j] = rj;
                sampler.sample(&mut rng, &mut xi[j * ell..(j + 1) * ell]);
            }
            let qs = bridge_quadratic(&s, &xi, ell, t, &mut a_s);
            let qr = bridge_quadratic(&r, &xi, ell, t, &mut a_r);
            let fs = endpoint_factor(&spec.initial, t, &spec.x, &a_s);
            let fr = endpoint_factor(&spec.initial, t, &spec.x, &a_r);
            let value = (-0.5 * (qs + qr)).exp() * (fs * fr.conj()).re;
            mom.push(value);
        }
        Ok(mom)
    })?;
    let mom = Moments::merge_all(parts.iter());
    let x = weight_mass(t, spec.alpha0) * spec.family.gaussian_mass(spec.eps);
    let scale = (1..=n).fold(1.0, |acc, k| acc * x / k as f64);
    Ok((scale * mom.mean(), scale * mom.stderr()))
}

/// Partial sums `sum_{n <= N} n! ||f_n(., t, x)||^2` by Monte Carlo.
pub fn second_moment_chaos(spec: &ChaosTermSpec, truncation: usize, seed: u64) -> Result<ChaosSeries> {
    if truncation > MAX_SERIES_ORDER {
        return Err(PamError::config(format!(
            "series route is capped at N = {MAX_SERIES_ORDER}, got {truncation}"
        )));
    }
    if !(spec.eps > 0.0) {
        return Err(PamError::config("the chaos series needs a bounded kernel (eps > 0)"));
    }
    if let InitialDatum::BallIndicator { .. } = spec.initial {
        return Err(PamError::config("the chaos series supports u_0 = 1 or a Gaussian u_0"));
    }
    if spec.samples < 2 {
        return Err(PamError::config("at least two Monte Carlo samples are needed"));
    }
    let sampler = SpectralSampler::new(&spec.family, spec.eps)?;
    let zeroth = spec.heat_average_sq()?;
    let computed = try_map_indexed(spec.exec, truncation, |k| chaos_series_term(spec, k + 1, &sampler, seed))?;
    let mut terms = vec![ChaosTerm {
        n: 0,
        value: zeroth,
        stderr: 0.0,
        partial_sum: zeroth,
        reliable: true,
    }];
    let mut sum = zeroth;
    let mut var = 0.0;
    let mut stopped_at = None;
    for (k, &(value, stderr)) in computed.iter().enumerate() {
        let reliable = stderr <= value.abs();
        sum += value;
        var += stderr * stderr;
        terms.push(ChaosTerm {
            n: k + 1,
            value,
            stderr,
            partial_sum: sum,
            reliable,
        });
        if !reliable {
            stopped_at = Some(k + 1);
            break;
        }
    }
    let last = terms.last().map_or(0, |t| t.n);
    let x = weight_mass(spec.t, spec.alpha0) * spec.family.gaussian_mass(spec.eps);
    let mut head = 0.0;
    let mut term = 1.0;
    for k in 0..=last {
        if k > 0 {
            term *= x / k as f64;
        }
        head += term;
    }
    let tail_bound = (x.exp() - head).max(0.0);
    Ok(ChaosSeries {
        terms,
        sum,
        stderr: var.sqrt(),
        tail_bound,
        stopped_at,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub constant: f64,
}

/// Smallest eigenvalue of a small symmetric matrix by cyclic Jacobi sweeps.
fn min_eigenvalue(mut a: Vec<f64>, n: usize) -> f64 {
    for _ in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let tt = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let tt = if theta == 0.0 { 1.0 } else { tt };
                let c = 1.0 / (tt * tt + 1.0).sqrt();
                let s = tt * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).fold(f64::INFINITY, f64::min)
}

/// Diagnostic (not certified) bound on the `n`-th chaos term:
/// `C^n |p_t * u_0(x)|^2 int_{simplex} (2 pi)^{-n ell} int exp(-Var(sum_j xi_j . B_{0,t}(s_j))) mu_eps(d xi) ds`.
///
/// Times are drawn uniformly on the ordered simplex. Frequencies are drawn
/// from `e^{-lambda |xi|^2} mu` with `lambda = eps + 0.999 lambda_min(V_s)`,
/// which keeps the importance weights bounded; with `eps = 0` this needs a
/// homogeneous (or atomic) spectral law. A numerically indefinite bridge
/// covariance is clamped at zero.
pub fn chaos_term_bound(spec: &ChaosTermSpec, n: usize, seed: u64) -> Result<BoundTerm> {
    let constant = spec.bound_constant.unwrap_or_else(|| spec.default_bound_constant());
    if !(constant > 0.0) {
        return Err(PamError::config("bound constant must be positive"));
    }
    let p2 = spec.heat_average_sq()?;
    if n == 0 {
        return Ok(BoundTerm {
            n,
            value: p2,
            stderr: 0.0,
            constant,
        });
    }
    let ell = spec.ell();
    let t = spec.t;
    let homogeneous = matches!(
        spec.family.kind(),
        FamilyKind::Riesz { .. } | FamilyKind::RoughFractional { .. } | FamilyKind::White1d | FamilyKind::Constant
    );
    let base = if homogeneous {
        SpectralSampler::new(&spec.family, 1.0)?
    } else if spec.eps > 0.0 {
        SpectralSampler::new(&spec.family, spec.eps)?
    } else {
        return Err(PamError::config(
            "the bound route at eps = 0 needs a homogeneous spectral law",
        ));
    };
    let two_pi_l = (2.0 * PI).powi(ell as i32);
    let shards = spec.shards.max(1);
    let parts = try_map_indexed(spec.exec, shards, |shard| {
        let (lo, hi) = shard_range(spec.samples, shards, shard);
        let mut mom = Moments::default();
        let mut s = vec![0.0; n];
        let mut xi = vec![0.0; n * ell];
        let mut cov = vec![0.0; n * n];
        let mut a = vec![0.0; ell];
        for i in lo..hi {
            let mut rng = SeedSpec::for_sample(seed, domain::CHAOS_BOUND + n as u16, i).rng();
            for v in s.iter_mut() {
                *v = rng.random::<f64>() * t;
            }
            s.sort_by(|x, y| x.total_cmp(y));
            for j in 0..n {
                for k in 0..n {
                    cov[j * n + k] = s[j].min(s[k]) - s[j] * s[k] / t;
                }
            }
            let lambda_min = min_eigenvalue(cov.clone(), n).max(0.0);
            let sampler = if homogeneous {
                let lambda = spec.eps + 0.999 * lambda_min;
                if lambda <= 0.0 {
                    // a degenerate time set carries no mass for a density
                    // but the full atom for the constant family
                    if matches!(spec.family.kind(), FamilyKind::Constant) {
                        mom.push((spec.family.atom_mass() / two_pi_l).powi(n as i32));
                    } else {
                        mom.push(0.0);
                    }
                    continue;
                }
                base.with_delta(lambda)?
            } else {
                base.clone()
            };
            for j in 0..n {
                sampler.sample(&mut rng, &mut xi[j * ell..(j + 1) * ell]);
            }
            let quad = bridge_quadratic(&s, &xi, ell, t, &mut a).max(0.0);
            let xi2: f64 = xi.iter().map(|v| v * v).sum();
            let damping = sampler.delta() - spec.eps;
            let w = (sampler.total_mass() / two_pi_l).powi(n as i32) * (-quad + damping * xi2).exp();
            mom.push(w);
        }
        Ok(mom)
    })?;
    let mom = Moments::merge_all(parts.iter());
    let volume = (1..=n).fold(1.0, |acc, k| acc * t / k as f64);
    let scale = constant.powi(n as i32) * p2 * volume;
    Ok(BoundTerm {
        n,
        value: scale * mom.mean(),
        stderr: scale * mom.stderr(),
        constant,
    })
}

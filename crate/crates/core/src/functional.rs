//! The interaction functional `Q_t` and Feynman-Kac moment estimators.
//!
//! `Q_t = sum_{j<k} int_{[0,t]^2} gamma(X^j(s) - X^k(r)) |s - r|^{-alpha0} ds dr`
//! is discretised by product integration: the singular time weight is
//! integrated exactly over each cell pair ([`TimeWeightMatrix`]) and the
//! paths are frozen at the cell midpoints. Paths are therefore sampled on a
//! grid twice as fine as the weight grid, so the midpoints are nodes.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::covariance::{FamilyKind, SmoothedKernel, SpectralFamily};
use crate::error::{PamError, Result};
use crate::exec::{shard_range, try_map_indexed, Execution, Moments};
use crate::paths::{domain, fill_motion, pin_to_bridge, PathSample, SeedSpec, TimeGrid};
use crate::quad;

/// Largest exponent `Q` accepted before a sample batch is aborted.
pub const DEFAULT_EXPONENT_CAP: f64 = 700.0;

/// Exact cell integrals of `|s - r|^{-alpha0}` on a uniform grid. The matrix
/// is Toeplitz, so only the band `W[i][i + d]` is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWeightMatrix {
    pub grid: TimeGrid,
    pub alpha0: f64,
    band: Vec<f64>,
}

/// `int_0^t int_0^t |s - r|^{-alpha0} ds dr = 2 t^{2-alpha0} / ((1-alpha0)(2-alpha0))`.
pub fn weight_mass(t: f64, alpha0: f64) -> f64 {
    2.0 * t.powf(2.0 - alpha0) / ((1.0 - alpha0) * (2.0 - alpha0))
}

/// Integral of `|s - r|^{-alpha0}` over `[0,1] x [d, d+1]` for unit cells.
///
/// With `F(x) = |x|^p / (p (p-1))`, `p = 2 - alpha0`, the value is the second
/// difference `F(d+1) - 2F(d) + F(d-1)`. For `d >= 2` the difference is
/// summed as the binomial series `d^p 2 sum_k C(p, 2k) d^{-2k} / (p(p-1))`,
/// which avoids the cancellation of the direct form.
fn unit_cell_weight(d: usize, alpha0: f64) -> f64 {
    let p = 2.0 - alpha0;
    let norm = p * (p - 1.0);
    match d {
        0 => 2.0 / norm,
        1 => (2f64.powf(p) - 2.0) / norm,
        _ => {
            let x = d as f64;
            let inv2 = 1.0 / (x * x);
            // C(p, 2k) / (p (p-1)), starting at k = 1
            let mut c = 0.5;
            let mut pow = inv2;
            let mut sum = 0.0;
            for k in 1..200 {
                let term = c * pow;
                sum += term;
                if term.abs() <= 1e-17 * sum.abs() {
                    break;
                }
                let j = 2 * k as i32 + 1;
                c *= (p - (j - 1) as f64) * (p - j as f64) / ((j * (j + 1)) as f64);
                pow *= inv2;
            }
            2.0 * x.powf(p) * sum
        }
    }
}

pub fn time_weight_matrix(grid: &TimeGrid, alpha0: f64) -> Result<TimeWeightMatrix> {
    if !(0.0..1.0).contains(&alpha0) {
        return Err(PamError::domain(format!(
            "|s-r|^(-alpha0) is not locally integrable for alpha0 = {alpha0}"
        )));
    }
    let scale = grid.dt().powf(2.0 - alpha0);
    let band = (0..grid.m).map(|d| scale * unit_cell_weight(d, alpha0)).collect();
    Ok(TimeWeightMatrix {
        grid: *grid,
        alpha0,
        band,
    })
}

impl TimeWeightMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.band[i.abs_diff(j)]
    }

    /// `W[i][i + d]` for `d = 0..m`.
    pub fn band(&self) -> &[f64] {
        &self.band
    }

    pub fn size(&self) -> usize {
        self.grid.m
    }

    pub fn total(&self) -> f64 {
        let m = self.grid.m;
        self.band
            .iter()
            .enumerate()
            .map(|(d, w)| if d == 0 { m as f64 * w } else { 2.0 * (m - d) as f64 * w })
            .sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.grid.m;
        (0..m).map(|i| (0..m).map(|j| self.get(i, j)).collect()).collect()
    }

    /// `x^T W y`.
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> f64 {
        let m = self.grid.m;
        let mut acc = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += self.band[i.abs_diff(j)] * y[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// `W x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let m = self.grid.m;
        for i in 0..m {
            out[i] = (0..m).map(|j| self.band[i.abs_diff(j)] * x[j]).sum();
        }
    }
}

/// Spatial covariance evaluated along paths.
#[derive(Clone, Debug)]
pub enum PathKernel {
    Smoothed(SmoothedKernel),
    /// `min(|x|^{-alpha}, clip)`; without a clip value a hit of the
    /// singularity is an error.
    ClippedRiesz { ell: usize, alpha: f64, clip: Option<f64> },
}

impl PathKernel {
    pub fn smoothed(family: &SpectralFamily, eps: f64) -> Result<Self> {
        if let FamilyKind::White1d = family.kind() {
            return Err(PamError::config(
                "white noise in space cannot be sampled along paths; use the spectral routes",
            ));
        }
        Ok(PathKernel::Smoothed(SmoothedKernel::new(family, eps, None)?))
    }

    pub fn ell(&self) -> usize {
        match self {
            PathKernel::Smoothed(k) => k.family().ell(),
            PathKernel::ClippedRiesz { ell, .. } => *ell,
        }
    }

    pub fn eps(&self) -> Option<f64> {
        match self {
            PathKernel::Smoothed(k) => Some(k.eps()),
            PathKernel::ClippedRiesz { .. } => None,
        }
    }

    /// Value if the kernel is constant.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            PathKernel::Smoothed(k) if matches!(k.family().kind(), FamilyKind::Constant) => {
                Some(k.family().c_norm())
            }
            _ => None,
        }
    }
}

/// Initial condition `u_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    ConstantOne,
    BallIndicator { radius: f64 },
    GaussianDecay { kappa: f64 },
}

impl InitialDatum {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialDatum::ConstantOne => Ok(()),
            InitialDatum::BallIndicator { radius } if radius > 0.0 => Ok(()),
            InitialDatum::GaussianDecay { kappa } if kappa > 0.0 => Ok(()),
            other => Err(PamError::config(format!("invalid initial datum {other:?}"))),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            InitialDatum::ConstantOne => 1.0,
            InitialDatum::BallIndicator { radius } => {
                if r2 <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            InitialDatum::GaussianDecay { kappa } => (-kappa * r2).exp(),
        }
    }

    /// `p_t * u_0 (x)`.
    pub fn heat_average(&self, t: f64, x: &[f64]) -> Result<f64> {
        let ell = x.len();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            InitialDatum::ConstantOne => Ok(1.0),
            InitialDatum::GaussianDecay { kappa } => {
                let d = 1.0 + 2.0 * kappa * t;
                Ok(d.powf(-(ell as f64) / 2.0) * (-kappa * r2 / d).exp())
            }
            InitialDatum::BallIndicator { radius } => ball_probability(ell, t, r2.sqrt(), radius),
        }
    }
}

/// `P(|x + sqrt(t) Z| <= radius)` for a standard Gaussian `Z` in `R^ell`.
fn ball_probability(ell: usize, t: f64, x: f64, radius: f64) -> Result<f64> {
    let sd = t.sqrt();
    match ell {
        1 => Ok(0.5 * (erf((radius - x) / (sd * 2f64.sqrt())) - erf((-radius - x) / (sd * 2f64.sqrt())))),
        2 | 3 => {
            // radial density of |x + sqrt(t) Z| with the angular factor scaled by e^{-z}
            let damped_avg = |z: f64| -> f64 {
                if ell == 3 {
                    if z < 1e-8 {
                        1.0 - z
                    } else {
                        -(-2.0 * z).exp_m1() / (2.0 * z)
                    }
                } else {
                    quad::gl32().integrate(|th| (z * (th.cos() - 1.0)).exp(), 0.0, PI) / PI
                }
            };
            let l = ell as f64;
            let pref = quad::sphere_area(ell) * (2.0 * PI * t).powf(-l / 2.0);
            let f = |rho: f64| {
                pref * rho.powi(ell as i32 - 1) * (-(rho - x).powi(2) / (2.0 * t)).exp() * damped_avg(rho * x / t)
            };
            let panels = 16;
            let h = radius / panels as f64;
            let mut acc = 0.0;
            for i in 0..panels {
                acc += quad::gl32().integrate(f, i as f64 * h, (i + 1) as f64 * h);
            }
            Ok(acc.min(1.0))
        }
        _ => Err(PamError::config(format!("ball indicator unsupported in dimension {ell}"))),
    }
}

/// Everything an FK moment estimate needs apart from the sample budget.
#[derive(Clone, Debug)]
pub struct InteractionSpec {
    pub n: usize,
    pub t: f64,
    pub alpha0: f64,
    pub kernel: PathKernel,
    /// Offsets `x^1, ..., x^n`.
    pub offsets: Vec<Vec<f64>>,
    pub initial: InitialDatum,
}

impl InteractionSpec {
    /// `n` particles, all offsets at the origin.
    pub fn new(n: usize, t: f64, alpha0: f64, kernel: PathKernel, initial: InitialDatum) -> Result<Self> {
        if n == 0 {
            return Err(PamError::config("moment order n must be at least 1"));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(PamError::config(format!("time horizon must be positive, got {t}")));
        }
        if !(0.0..1.0).contains(&alpha0) {
            return Err(PamError::config(format!("alpha0 = {alpha0} outside [0, 1)")));
        }
        initial.validate()?;
        let ell = kernel.ell();
        Ok(InteractionSpec {
            n,
            t,
            alpha0,
            kernel,
            offsets: vec![vec![0.0; ell]; n],
            initial,
        })
    }

    pub fn with_offsets(mut self, offsets: Vec<Vec<f64>>) -> Result<Self> {
        let ell = self.ell();
        if offsets.len() != self.n || offsets.iter().any(|x| x.len() != ell) {
            return Err(PamError::config(format!(
                "expected {} offsets of dimension {ell}",
                self.n
            )));
        }
        self.offsets = offsets;
        Ok(self)
    }

    pub fn ell(&self) -> usize {
        self.kernel.ell()
    }
}

/// Per-particle affine shift `x^j + (s/t) y^j` of the path argument.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleShift {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Kernel evaluation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelStats {
    pub evaluations: u64,
    pub clip_hits: u64,
}

/// Reusable buffers for one worker.
struct Workspace {
    positions: Vec<f64>,
    path: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize, ell: usize) -> Self {
        Workspace {
            positions: vec![0.0; n * m * ell],
            path: vec![0.0; (2 * m + 1) * ell],
        }
    }
}

/// `sum_{j<k} sum_{a,b} K(P^j_a - P^k_b) W[a][b]` over cell positions laid
/// out particle-major, then cell, then coordinate.
fn pair_sum(positions: &[f64], n: usize, ell: usize, kernel: &PathKernel, w: &TimeWeightMatrix, stats: &mut KernelStats) -> Result<f64> {
    let m = w.size();
    let band = w.band();
    if let Some(c) = kernel.constant_value() {
        stats.evaluations += (n * (n - 1) / 2 * m * m) as u64;
        return Ok((n * (n - 1) / 2) as f64 * c * w.total());
    }
    let mut total = 0.0;
    for j in 0..n {
        let pj = &positions[j * m * ell..(j + 1) * m * ell];
        for k in j + 1..n {
            let pk = &positions[k * m * ell..(k + 1) * m * ell];
            total += match kernel {
                PathKernel::Smoothed(kern) => {
                    let mut acc = 0.0;
                    for a in 0..m {
                        let xa = &pj[a * ell..(a + 1) * ell];
                        let mut row = 0.0;
                        for b in 0..m {
                            let xb = &pk[b * ell..(b + 1) * ell];
                            let mut r2 = 0.0;
                            for c in 0..ell {
                                let d = xa[c] - xb[c];
                                r2 += d * d;
                            }
                            row += kern.eval_r2(r2) * band[a.abs_diff(b)];
                        }
                        acc += row;
                    }
                    acc
                }
                PathKernel::ClippedRiesz { alpha, clip, .. } => {
                    let mut acc = 0.0;
                    for a in 0..m {
                        let xa = &pj[a * ell..(a + 1) * ell];
                        for b in 0..m {
                            let xb = &pk[b * ell..(b + 1) * ell];
                            let r2: f64 = (0..ell).map(|c| (xa[c] - xb[c]).powi(2)).sum();
                            let raw = if r2 > 0.0 { r2.powf(-alpha / 2.0) } else { f64::INFINITY };
                            let v = match clip {
                                Some(cap) if raw > *cap => {
                                    stats.clip_hits += 1;
                                    *cap
                                }
                                None if !raw.is_finite() => {
                                    return Err(PamError::numerical(
                                        "unclipped Riesz kernel evaluated at the origin",
                                        f64::INFINITY,
                                    ));
                                }
                                _ => raw,
                            };
                            acc += v * band[a.abs_diff(b)];
                        }
                    }
                    acc
                }
            };
        }
    }
    stats.evaluations += (n * (n - 1) / 2 * m * m) as u64;
    Ok(total)
}

/// Writes the cell positions `X(mid_a) + x + (mid_a / t) y` of one path.
///
/// A path with `2m` cells contributes its odd nodes (the midpoints of the
/// `m` weight cells); a path with `m` cells contributes endpoint averages.
fn cell_positions(path: &[f64], path_m: usize, w: &TimeWeightMatrix, ell: usize, shift: Option<&ParticleShift>, out: &mut [f64]) -> Result<()> {
    let m = w.size();
    let t = w.grid.t;
    for a in 0..m {
        let mid = w.grid.midpoint(a);
        for c in 0..ell {
            let base = if path_m == 2 * m {
                path[(2 * a + 1) * ell + c]
            } else if path_m == m {
                0.5 * (path[a * ell + c] + path[(a + 1) * ell + c])
            } else {
                return Err(PamError::domain(format!(
                    "paths with {path_m} cells do not match a weight grid of {m} cells"
                )));
            };
            let sh = shift.map_or(0.0, |s| s.x[c] + (mid / t) * s.y[c]);
            out[a * ell + c] = base + sh;
        }
    }
    Ok(())
}

/// Evaluates `Q` on `n` sampled paths.
///
/// The paths must live on the horizon of `w` with either `2m` cells (cell
/// values taken at the midpoints) or `m` cells (endpoint averages). `shifts`
/// is either empty or holds one [`ParticleShift`] per path.
pub fn qt_evaluate(paths: &[PathSample], kernel: &PathKernel, w: &TimeWeightMatrix, shifts: &[ParticleShift]) -> Result<f64> {
    qt_evaluate_with_stats(paths, kernel, w, shifts).map(|(q, _)| q)
}

pub fn qt_evaluate_with_stats(
    paths: &[PathSample],
    kernel: &PathKernel,
    w: &TimeWeightMatrix,
    shifts: &[ParticleShift],
) -> Result<(f64, KernelStats)> {
    let n = paths.len();
    let mut stats = KernelStats::default();
    if n < 2 {
        return Ok((0.0, stats));
    }
    let ell = kernel.ell();
    if !shifts.is_empty() && shifts.len() != n {
        return Err(PamError::domain("one shift per path is required"));
    }
    let m = w.size();
    let mut positions = vec![0.0; n * m * ell];
    for (j, p) in paths.iter().enumerate() {
        if p.ell != ell || (p.grid.t - w.grid.t).abs() > 1e-12 * w.grid.t {
            return Err(PamError::domain("paths do not share the grid of the weight matrix"));
        }
        cell_positions(&p.values, p.grid.m, w, ell, shifts.get(j), &mut positions[j * m * ell..(j + 1) * m * ell])?;
    }
    let q = pair_sum(&positions, n, ell, kernel, w, &mut stats)?;
    Ok((q, stats))
}

/// Which Feynman-Kac representation to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// Brownian bridges with Gaussian endpoint displacements.
    Bridge,
    /// Independent Brownian motions.
    Bm,
    /// Brownian bridges pinned at zero, without initial-datum weight.
    PinnedBridge,
}

/// Monte Carlo budget and scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: u64,
    /// Cells of the time-weight grid.
    pub grid_m: usize,
    pub shards: usize,
    pub exec: Execution,
    pub exponent_cap: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 10_000,
            grid_m: 32,
            shards: 16,
            exec: Execution::Parallel,
            exponent_cap: DEFAULT_EXPONENT_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub eps: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: f64,
    pub uncertainty: f64,
    /// Fitted power of `eps` in `m(eps) = m_0 + A eps^p`, when the fit worked.
    pub power: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub formula: Formula,
    pub n: usize,
    pub t: f64,
    pub eps: Option<f64>,
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: SeedSpec,
    pub shards: usize,
    pub grid_m: usize,
    /// Fraction of samples with a nonzero initial-datum weight.
    pub acceptance: f64,
    pub clip_hit_rate: Option<f64>,
    /// Largest exponent `Q` met.
    pub max_exponent: f64,
    pub eps_ladder: Vec<LadderRung>,
    pub extrapolated: Option<Extrapolation>,
}

impl MomentEstimate {
    /// Normal 95% interval.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr)
    }
}

#[derive(Clone, Copy, Default)]
struct ShardTally {
    moments: Moments,
    accepted: u64,
    max_exponent: f64,
    stats: KernelStats,
}

fn fill_gaussian<R: Rng + ?Sized>(rng: &mut R, sd: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sd * z;
    }
}

/// One FK sample; returns the weight and the exponent.
fn fk_sample(spec: &InteractionSpec, formula: Formula, w: &TimeWeightMatrix, seed: SeedSpec, ws: &mut Workspace, stats: &mut KernelStats) -> Result<Option<(f64, f64)>> {
    let mut rng = seed.rng();
    let n = spec.n;
    let ell = spec.ell();
    let m = w.size();
    let fine = TimeGrid { t: spec.t, m: 2 * m };
    let mut weight = 1.0;
    let mut y = vec![0.0; ell];
    let mut shift = ParticleShift {
        x: vec![0.0; ell],
        y: vec![0.0; ell],
    };
    let mut ends = Vec::with_capacity(n * ell);
    if formula == Formula::Bridge {
        for j in 0..n {
            fill_gaussian(&mut rng, spec.t.sqrt(), &mut y);
            let arg: Vec<f64> = (0..ell).map(|c| spec.offsets[j][c] + y[c]).collect();
            weight *= spec.initial.eval(&arg);
            ends.extend_from_slice(&y);
        }
        if weight == 0.0 {
            return Ok(None);
        }
    }
    for j in 0..n {
        fill_motion(&fine, ell, &mut rng, &mut ws.path);
        shift.x.copy_from_slice(&spec.offsets[j]);
        match formula {
            Formula::Bridge => {
                pin_to_bridge(&fine, ell, &mut ws.path);
                shift.y.copy_from_slice(&ends[j * ell..(j + 1) * ell]);
            }
            Formula::PinnedBridge => {
                pin_to_bridge(&fine, ell, &mut ws.path);
                shift.y.fill(0.0);
            }
            Formula::Bm => {
                let end = &ws.path[2 * m * ell..];
                let arg: Vec<f64> = (0..ell).map(|c| spec.offsets[j][c] + end[c]).collect();
                weight *= spec.initial.eval(&arg);
                shift.y.fill(0.0);
            }
        }
        cell_positions(&ws.path, 2 * m, w, ell, Some(&shift), &mut ws.positions[j * m * ell..(j + 1) * m * ell])?;
    }
    if weight == 0.0 {
        return Ok(None);
    }
    let q = pair_sum(&ws.positions, n, ell, &spec.kernel, w, stats)?;
    Ok(Some((weight, q)))
}

fn moment_fk(spec: &InteractionSpec, formula: Formula, mc: &McConfig, seed: u64) -> Result<MomentEstimate> {
    if mc.samples < 2 {
        return Err(PamError::config("at least two Monte Carlo samples are needed"));
    }
    if mc.grid_m == 0 {
        return Err(PamError::config("grid_m must be positive"));
    }
    let grid = TimeGrid::new(spec.t, mc.grid_m)?;
    let w = time_weight_matrix(&grid, spec.alpha0)?;
    let shards = mc.shards.max(1);
    let dom = match formula {
        Formula::Bridge => domain::FK_BRIDGE,
        Formula::Bm => domain::FK_MOTION,
        Formula::PinnedBridge => domain::LYAPUNOV,
    };
    let tallies = try_map_indexed(mc.exec, shards, |shard| {
        let (lo, hi) = shard_range(mc.samples, shards, shard);
        let mut ws = Workspace::new(spec.n, mc.grid_m, spec.ell());
        let mut tally = ShardTally::default();
        for i in lo..hi {
            let s = SeedSpec::for_sample(seed, dom, i);
            match fk_sample(spec, formula, &w, s, &mut ws, &mut tally.stats)? {
                None => tally.moments.push(0.0),
                Some((weight, q)) => {
                    if q > mc.exponent_cap {
                        return Err(PamError::HeavyTail {
                            exponent: q,
                            cap: mc.exponent_cap,
                            sample: i,
                        });
                    }
                    tally.accepted += 1;
                    tally.max_exponent = tally.max_exponent.max(q);
                    tally.moments.push(weight * q.exp());
                }
            }
        }
        Ok(tally)
    })?;
    let moments = Moments::merge_all(tallies.iter().map(|t| &t.moments));
    let accepted: u64 = tallies.iter().map(|t| t.accepted).sum();
    let max_exponent = tallies.iter().map(|t| t.max_exponent).fold(0.0, f64::max);
    let evals: u64 = tallies.iter().map(|t| t.stats.evaluations).sum();
    let hits: u64 = tallies.iter().map(|t| t.stats.clip_hits).sum();
    let clip_hit_rate = match spec.kernel {
        PathKernel::ClippedRiesz { .. } => Some(if evals > 0 { hits as f64 / evals as f64 } else { 0.0 }),
        PathKernel::Smoothed(_) => None,
    };
    Ok(MomentEstimate {
        formula,
        n: spec.n,
        t: spec.t,
        eps: spec.kernel.eps(),
        mean: moments.mean(),
        stderr: moments.stderr(),
        samples: moments.count,
        seed: SeedSpec::for_sample(seed, dom, 0),
        shards,
        grid_m: mc.grid_m,
        acceptance: accepted as f64 / moments.count as f64,
        clip_hit_rate,
        max_exponent,
        eps_ladder: Vec::new(),
        extrapolated: None,
    })
}

/// Bridge form: `y^j ~ N(0, t I)` weighted by `prod u_0(x^j + y^j)`, bridges
/// shifted by `x^j + (s/t) y^j`.
pub fn moment_fk_bridge(spec: &InteractionSpec, mc: &McConfig, seed: u64) -> Result<MomentEstimate> {
    moment_fk(spec, Formula::Bridge, mc, seed)
}

/// Motion form: `prod u_0(B^j(t) + x^j) exp(Q)` over independent motions.
pub fn moment_fk_bm(spec: &InteractionSpec, mc: &McConfig, seed: u64) -> Result<MomentEstimate> {
    moment_fk(spec, Formula::Bm, mc, seed)
}

/// `E exp Q_t` over bridges pinned at zero (the functional whose growth
/// defines the Lyapunov exponents of Brownian bridges). Offsets still apply.
pub fn moment_fk_pinned_bridge(spec: &InteractionSpec, mc: &McConfig, seed: u64) -> Result<MomentEstimate> {
    moment_fk(spec, Formula::PinnedBridge, mc, seed)
}

/// Runs one estimate per `eps` (sorted to decreasing order) with common
/// random numbers. The returned estimate is the finest rung, with the ladder
/// attached and extrapolated when it has at least three rungs.
pub fn moment_ladder(
    base: &InteractionSpec,
    family: &SpectralFamily,
    eps_ladder: &[f64],
    formula: Formula,
    mc: &McConfig,
    seed: u64,
) -> Result<MomentEstimate> {
    if eps_ladder.is_empty() {
        return Err(PamError::config("empty eps ladder"));
    }
    let mut eps: Vec<f64> = eps_ladder.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut rungs = Vec::with_capacity(eps.len());
    let mut last = None;
    for &e in &eps {
        let mut spec = base.clone();
        spec.kernel = PathKernel::smoothed(family, e)?;
        let est = moment_fk(&spec, formula, mc, seed)?;
        rungs.push(LadderRung {
            eps: e,
            mean: est.mean,
            stderr: est.stderr,
        });
        last = Some(est);
    }
    let mut out = last.expect("nonempty ladder");
    out.extrapolated = if rungs.len() >= 3 { Some(eps_extrapolate(&rungs)?) } else { None };
    out.eps_ladder = rungs;
    Ok(out)
}

/// `eps -> 0` intercept of a ladder from the power model
/// `m(eps) = m_0 + A eps^p` through the three finest rungs.
pub fn eps_extrapolate(ladder: &[LadderRung]) -> Result<Extrapolation> {
    if ladder.len() < 3 {
        return Err(PamError::config(format!(
            "extrapolation needs at least 3 rungs, got {}",
            ladder.len()
        )));
    }
    if ladder.windows(2).any(|w| !(w[0].eps > w[1].eps && w[1].eps > 0.0)) {
        return Err(PamError::config("ladder must be sorted by strictly decreasing positive eps"));
    }
    let k = ladder.len();
    let (r1, r2, r3) = (ladder[k - 3], ladder[k - 2], ladder[k - 1]);
    let q1 = r2.eps / r1.eps;
    let q2 = r3.eps / r2.eps;
    if (q1 - q2).abs() > 1e-6 * q1 {
        return Err(PamError::config("the finest three rungs must decay geometrically"));
    }
    let d1 = r2.mean - r1.mean;
    let d2 = r3.mean - r2.mean;
    let noise = 2.0 * (r1.stderr.powi(2) + 2.0 * r2.stderr.powi(2) + r3.stderr.powi(2)).sqrt();
    let mc_finest = r3.stderr;
    if d1 == 0.0 && d2 == 0.0 {
        return Ok(Extrapolation {
            value: r3.mean,
            uncertainty: mc_finest,
            power: None,
            warning: None,
        });
    }
    let ratio = d2 / d1;
    if d1.abs() <= noise || !(ratio > 0.0 && ratio < 1.0) {
        let warning = if d1.abs() <= noise {
            "ladder differences are within Monte Carlo noise; finest rung reported".to_string()
        } else {
            format!("ladder is not monotone with decaying increments (ratio {ratio:.3}); finest rung reported")
        };
        return Ok(Extrapolation {
            value: r3.mean,
            uncertainty: (d2.powi(2) + mc_finest.powi(2)).sqrt(),
            power: None,
            warning: Some(warning),
        });
    }
    let power = ratio.ln() / q2.ln();
    let correction = d2 * ratio / (1.0 - ratio);
    let value = r3.mean + correction;
    // linear propagation of the rung errors through value(m1, m2, m3)
    let f = |m1: f64, m2: f64, m3: f64| {
        let (a, b) = (m2 - m1, m3 - m2);
        let r = b / a;
        m3 + b * r / (1.0 - r)
    };
    let h = |s: f64| 1e-3 * s.max(1e-12);
    let g1 = (f(r1.mean + h(r1.stderr), r2.mean, r3.mean) - value) / h(r1.stderr);
    let g2 = (f(r1.mean, r2.mean + h(r2.stderr), r3.mean) - value) / h(r2.stderr);
    let g3 = (f(r1.mean, r2.mean, r3.mean + h(r3.stderr)) - value) / h(r3.stderr);
    let mc = ((g1 * r1.stderr).powi(2) + (g2 * r2.stderr).powi(2) + (g3 * r3.stderr).powi(2)).sqrt();
    Ok(Extrapolation {
        value,
        uncertainty: (correction.powi(2) + mc.powi(2)).sqrt(),
        power: Some(power),
        warning: None,
    })
}

/// `gamma_delta(0)` for families where it has a closed scaling law.
fn gaussian_mass_curve(family: &SpectralFamily) -> Box<dyn Fn(f64) -> f64 + Send + Sync + '_> {
    match family.kind() {
        FamilyKind::Constant => {
            let c = family.c_norm();
            Box::new(move |_| c)
        }
        FamilyKind::Riesz { .. } | FamilyKind::RoughFractional { .. } | FamilyKind::White1d => {
            let alpha = family.homogeneity().expect("homogeneous family");
            let g1 = family.gaussian_mass(1.0);
            Box::new(move |d: f64| g1 * d.powf(-alpha / 2.0))
        }
        FamilyKind::CustomRadial(_) => Box::new(move |d: f64| family.gaussian_mass(d)),
    }
}

fn mean_q_quadrature(t: f64, alpha0: f64, eps: f64, g: &dyn Fn(f64) -> f64, pieces: usize) -> f64 {
    let inner_rule = quad::gl32();
    let inner = |u: f64| -> f64 {
        let len = t - u;
        if len <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for p in 0..pieces {
            let a = len * p as f64 / pieces as f64;
            let b = len * (p + 1) as f64 / pieces as f64;
            acc += inner_rule.integrate(
                |r| {
                    let s = r + u;
                    let v = s * (t - s) / t + r * (t - r) / t;
                    g(eps + 0.5 * v)
                },
                a,
                b,
            );
        }
        acc
    };
    2.0 * quad::integrate_from_zero(|u| u.powf(-alpha0) * inner(u), t, -alpha0, pieces)
}

/// `E Q_t` for two independent bridges by deterministic quadrature of
/// `int int gamma_{eps + v(s,r)/2}(0) |s - r|^{-alpha0} ds dr`, where
/// `v(s,r) = s(t-s)/t + r(t-r)/t` is the per-coordinate variance of
/// `B^1(s) - B^2(r)`. Two resolutions must agree to `1e-6` relative.
pub fn mean_q_oracle(t: f64, alpha0: f64, family: &SpectralFamily, eps: f64) -> Result<f64> {
    if !(t > 0.0) || !(eps > 0.0) {
        return Err(PamError::config("mean_q_oracle needs t > 0 and eps > 0"));
    }
    if !(0.0..1.0).contains(&alpha0) {
        return Err(PamError::config(format!("alpha0 = {alpha0} outside [0, 1)")));
    }
    if !crate::covariance::dalang_check(family).passes() {
        return Err(PamError::config("family fails Dalang's condition"));
    }
    if let FamilyKind::Constant = family.kind() {
        return Ok(family.c_norm() * weight_mass(t, alpha0));
    }
    let g = gaussian_mass_curve(family);
    let coarse = mean_q_quadrature(t, alpha0, eps, &*g, 4);
    let fine = mean_q_quadrature(t, alpha0, eps, &*g, 8);
    let achieved = (coarse - fine).abs() / fine.abs().max(1e-300);
    if achieved > 1e-6 {
        return Err(PamError::numerical("mean_q_oracle quadrature did not settle", achieved));
    }
    Ok(fine)
}

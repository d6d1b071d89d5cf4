//! Seeded Brownian motions and Brownian bridges on uniform time grids.
//!
//! Every sample owns its generator: a ChaCha8 stream addressed by the master
//! seed and a 64-bit stream id built from a job domain and the sample index
//! (see [`SeedSpec::for_sample`]). Ensembles are therefore identical whatever
//! the shard count or the scheduling order.

use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PamError, Result};
use crate::exec::{map_indexed, Execution};

/// Stream domains of the Monte Carlo jobs in the crate.
pub mod domain {
    pub const ENSEMBLE: u16 = 1;
    pub const FK_BRIDGE: u16 = 2;
    pub const FK_MOTION: u16 = 3;
    pub const DENSITY_BRIDGE: u16 = 4;
    pub const DENSITY_MOTION: u16 = 5;
    pub const CHAOS_SERIES: u16 = 16;
    pub const CHAOS_BOUND: u16 = 48;
    pub const GN_CHECK: u16 = 80;
    pub const VARIATIONAL: u16 = 96;
    pub const LYAPUNOV: u16 = 112;
}

/// Uniform grid `s_i = i t / m`, `i = 0..=m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t: f64,
    pub m: usize,
}

impl TimeGrid {
    pub fn new(t: f64, m: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(PamError::config(format!("time horizon must be positive, got {t}")));
        }
        if m == 0 {
            return Err(PamError::config("time grid needs at least one cell"));
        }
        Ok(TimeGrid { t, m })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t / self.m as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i == self.m {
            self.t
        } else {
            i as f64 * self.dt()
        }
    }

    #[inline]
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dt()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.m).map(|i| self.node(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Motion,
    Bridge,
}

/// One trajectory: `m + 1` points of `R^ell`, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub ell: usize,
    pub kind: PathKind,
    pub values: Vec<f64>,
}

impl PathSample {
    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.ell..(i + 1) * self.ell]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.point(self.grid.m)
    }

    /// `max_i |B(s_i)|` over the grid nodes.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.grid.m)
            .map(|i| self.point(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Master seed plus stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub stream: u64,
}

impl SeedSpec {
    pub fn new(master: u64, stream: u64) -> Self {
        SeedSpec { master, stream }
    }

    /// Stream `domain << 48 | index` of the master seed.
    pub fn for_sample(master: u64, domain: u16, index: u64) -> Self {
        debug_assert!(index < 1 << 48);
        SeedSpec {
            master,
            stream: (u64::from(domain) << 48) | index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// Fills `out` (length `(m+1) ell`) with a Brownian motion started at 0.
pub fn fill_motion<R: rand::Rng + ?Sized>(grid: &TimeGrid, ell: usize, rng: &mut R, out: &mut [f64]) {
    debug_assert_eq!(out.len(), (grid.m + 1) * ell);
    let sd = grid.dt().sqrt();
    out[..ell].fill(0.0);
    for i in 1..=grid.m {
        for c in 0..ell {
            let z: f64 = StandardNormal.sample(rng);
            out[i * ell + c] = out[(i - 1) * ell + c] + sd * z;
        }
    }
}

/// Turns a motion into the bridge `B(s) - (s/t) B(t)` in place.
pub fn pin_to_bridge(grid: &TimeGrid, ell: usize, values: &mut [f64]) {
    let m = grid.m;
    for c in 0..ell {
        let end = values[m * ell + c];
        for i in 1..m {
            values[i * ell + c] -= (i as f64 / m as f64) * end;
        }
        values[m * ell + c] = 0.0;
    }
}

pub fn sample_bm(grid: &TimeGrid, ell: usize, seed: SeedSpec) -> PathSample {
    let mut values = vec![0.0; (grid.m + 1) * ell];
    fill_motion(grid, ell, &mut seed.rng(), &mut values);
    PathSample {
        grid: *grid,
        ell,
        kind: PathKind::Motion,
        values,
    }
}

/// Bridge from 0 to 0 derived from one motion drawn on the same stream.
pub fn sample_bridge(grid: &TimeGrid, ell: usize, seed: SeedSpec) -> PathSample {
    let mut p = sample_bm(grid, ell, seed);
    pin_to_bridge(grid, ell, &mut p.values);
    p.kind = PathKind::Bridge;
    p
}

/// Per-coordinate bridge covariance `min(s, r) - s r / t`.
pub fn bridge_cov(s: f64, r: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) || !(0.0..=t).contains(&s) || !(0.0..=t).contains(&r) {
        return Err(PamError::domain(format!(
            "bridge covariance needs 0 <= s, r <= t (s = {s}, r = {r}, t = {t})"
        )));
    }
    Ok(s.min(r) - s * r / t)
}

/// Density of the bridge from `x` to `y` on `[0, lambda t]` with respect to
/// Brownian motion started at `x`, evaluated on `motion_segment`, whose
/// grid must end at `lambda t`.
pub fn density_reweight(lambda: f64, t: f64, x: &[f64], y: &[f64], motion_segment: &PathSample) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(PamError::domain(format!("lambda = {lambda} must lie in (0, 1)")));
    }
    let ell = x.len();
    if y.len() != ell || motion_segment.ell != ell {
        return Err(PamError::domain("dimension mismatch in density_reweight"));
    }
    let horizon = lambda * t;
    if (motion_segment.grid.t - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(PamError::domain(format!(
            "motion segment ends at {} but lambda t = {horizon}",
            motion_segment.grid.t
        )));
    }
    let b = motion_segment.endpoint();
    let mut far = 0.0;
    let mut near = 0.0;
    for c in 0..ell {
        let d = y[c] - x[c];
        far += (d - b[c]).powi(2);
        near += d * d;
    }
    let expo = -far / (2.0 * t * (1.0 - lambda)) + near / (2.0 * t);
    Ok((1.0 - lambda).powf(-(ell as f64) / 2.0) * expo.exp())
}

/// A seeded batch of trajectories.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub ell: usize,
    pub kind: PathKind,
    pub seed: u64,
    pub paths: Vec<PathSample>,
}

impl PathEnsemble {
    pub fn generate(grid: TimeGrid, ell: usize, kind: PathKind, count: usize, seed: u64, exec: Execution) -> Self {
        let paths = map_indexed(exec, count, |i| {
            let spec = SeedSpec::for_sample(seed, domain::ENSEMBLE, i as u64);
            match kind {
                PathKind::Motion => sample_bm(&grid, ell, spec),
                PathKind::Bridge => sample_bridge(&grid, ell, spec),
            }
        });
        PathEnsemble {
            grid,
            ell,
            kind,
            seed,
            paths,
        }
    }

    /// Binary dump: little-endian header `t: f64, m: u64, ell: u64,
    /// count: u64, seed: u64`, then all path values as `f64`, path-major.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.grid.t.to_le_bytes())?;
        w.write_all(&(self.grid.m as u64).to_le_bytes())?;
        w.write_all(&(self.ell as u64).to_le_bytes())?;
        w.write_all(&(self.paths.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for p in &self.paths {
            for v in &p.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Reads a dump written by [`PathEnsemble::write_dump`]; the path kind is
    /// not stored and must be supplied.
    pub fn read_dump<R: Read>(mut r: R, kind: PathKind) -> io::Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> io::Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let t = f64::from_le_bytes(next(&mut r)?);
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let ell = u64::from_le_bytes(next(&mut r)?) as usize;
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let grid = TimeGrid::new(t, m).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let mut paths = Vec::with_capacity(count);
        for _ in 0..count {
            let mut values = Vec::with_capacity((m + 1) * ell);
            for _ in 0..(m + 1) * ell {
                values.push(f64::from_le_bytes(next(&mut r)?));
            }
            paths.push(PathSample { grid, ell, kind, values });
        }
        Ok(PathEnsemble {
            grid,
            ell,
            kind,
            seed,
            paths,
        })
    }
}

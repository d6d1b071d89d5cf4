//! Checks of Dalang's condition, condition (H.1) and the scaling condition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::family::{FamilyKind, SpectralFamily};
use crate::covariance::NoiseParams;
use crate::error::{PamError, Result};
use crate::quad::{dyadic_windows, Convergence};

/// Largest `kappa_0` accepted for clause (a) of (H.1).
pub const KAPPA_MAX: f64 = 1e3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DalangReport {
    pub verdict: Convergence,
    /// `analytic` or `numeric`.
    pub method: String,
    /// Value (or last partial value) of `int mu(d xi) / (1 + |xi|^2)`.
    pub integral: Option<f64>,
    pub diagnostic: String,
}

impl DalangReport {
    pub fn passes(&self) -> bool {
        self.verdict == Convergence::Finite
    }
}

/// Dalang's condition `int mu(d xi)/(1+|xi|^2) < inf`.
///
/// Built-in families are decided analytically; custom densities are
/// integrated numerically over dyadic windows.
pub fn dalang_check(family: &SpectralFamily) -> DalangReport {
    match family.kind() {
        FamilyKind::Riesz { alpha } => DalangReport {
            verdict: if *alpha < 2.0 { Convergence::Finite } else { Convergence::Divergent },
            method: "analytic".into(),
            integral: None,
            diagnostic: format!("|xi|^(alpha-ell)/(1+|xi|^2) is integrable iff 0 < alpha < 2 (alpha = {alpha})"),
        },
        FamilyKind::RoughFractional { hurst } => DalangReport {
            verdict: Convergence::Finite,
            method: "analytic".into(),
            integral: None,
            diagnostic: format!("|xi|^(1-2H)/(1+xi^2) is integrable for H = {hurst} > 0"),
        },
        FamilyKind::White1d => DalangReport {
            verdict: Convergence::Finite,
            method: "analytic".into(),
            integral: Some(std::f64::consts::PI),
            diagnostic: "int dxi/(1+xi^2) = pi".into(),
        },
        FamilyKind::Constant => DalangReport {
            verdict: Convergence::Finite,
            method: "analytic".into(),
            integral: Some(family.atom_mass()),
            diagnostic: "finite atom at the origin".into(),
        },
        FamilyKind::CustomRadial(_) => dalang_numeric(family),
    }
}

/// Numerical Dalang integral, available for every family.
pub fn dalang_numeric(family: &SpectralFamily) -> DalangReport {
    let f = |k: f64| family.shell_density(k) / (1.0 + k * k);
    let head = dyadic_windows(f, 1.0, false);
    let tail = dyadic_windows(f, 1.0, true);
    let integral = family.atom_mass() + head.value + tail.value;
    let verdict = match (head.verdict, tail.verdict) {
        (Convergence::Finite, Convergence::Finite) => Convergence::Finite,
        (Convergence::Divergent, _) | (_, Convergence::Divergent) => Convergence::Divergent,
        _ => Convergence::Indeterminate,
    };
    let diagnostic = match verdict {
        Convergence::Finite => "dyadic window masses decay geometrically at 0 and infinity".to_string(),
        Convergence::Divergent => format!(
            "window masses stop decaying (near 0: {:?}, near infinity: {:?}); partial integral {:.6e}",
            head.verdict, tail.verdict, integral
        ),
        Convergence::Indeterminate => format!(
            "inconclusive after {} + {} windows; partial integral {:.6e}",
            head.partials.len(),
            tail.partials.len(),
            integral
        ),
    };
    DalangReport {
        verdict,
        method: "numeric".into(),
        integral: Some(integral),
        diagnostic,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct H1Report {
    /// Smallest `kappa_0` consistent with every sampled pair.
    pub kappa0: f64,
    pub clause_a: bool,
    /// `int f^2(xi)/(1+xi^2) d xi` or its last partial value.
    pub integral_b: f64,
    pub verdict_b: Convergence,
    pub clause_b: bool,
    pub pairs_checked: usize,
}

impl H1Report {
    pub fn passes(&self) -> bool {
        self.clause_a && self.clause_b
    }
}

/// Checks condition (H.1) for a one-dimensional spectral density `f`.
///
/// Clause (a) is probed on a lattice of signed dyadic and uniform points plus
/// seeded random pairs; clause (b) is integrated over dyadic windows on both
/// half lines.
pub fn h1_check<F: Fn(f64) -> f64>(f: F, seed: u64) -> H1Report {
    let mut lattice: Vec<f64> = vec![0.0];
    for j in -12..=12 {
        let v = 2f64.powi(j);
        lattice.push(v);
        lattice.push(-v);
    }
    for j in 1..=40 {
        let v = 0.5 * j as f64;
        lattice.push(v);
        lattice.push(-v);
    }
    let mut kappa0: f64 = 0.0;
    let mut pairs = 0usize;
    let mut probe = |a: f64, b: f64| {
        let den = f(a) + f(b);
        let num = f(a + b);
        pairs += 1;
        if den > 0.0 {
            kappa0 = kappa0.max(num / den);
        } else if num > 0.0 {
            kappa0 = f64::INFINITY;
        }
    };
    for &a in &lattice {
        for &b in &lattice {
            probe(a, b);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20_000 {
        let a = 10f64.powf(rng.random_range(-6.0..4.0)) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let b = 10f64.powf(rng.random_range(-6.0..4.0)) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        probe(a, b);
    }
    let g = |x: f64| (f(x).powi(2) + f(-x).powi(2)) / (1.0 + x * x);
    let head = dyadic_windows(g, 1.0, false);
    let tail = dyadic_windows(g, 1.0, true);
    let verdict_b = match (head.verdict, tail.verdict) {
        (Convergence::Finite, Convergence::Finite) => Convergence::Finite,
        (Convergence::Divergent, _) | (_, Convergence::Divergent) => Convergence::Divergent,
        _ => Convergence::Indeterminate,
    };
    H1Report {
        kappa0,
        clause_a: kappa0.is_finite() && kappa0 <= KAPPA_MAX,
        integral_b: head.value + tail.value,
        verdict_b,
        clause_b: verdict_b == Convergence::Finite,
        pairs_checked: pairs,
    }
}

/// (H.1) for a family; only absolutely continuous families in `ell = 1` qualify.
pub fn h1_check_family(family: &SpectralFamily, seed: u64) -> Result<H1Report> {
    if family.ell() != 1 {
        return Err(PamError::domain("condition (H.1) is only defined for ell = 1"));
    }
    if !family.has_density() {
        return Err(PamError::domain("condition (H.1) needs an absolutely continuous spectral measure"));
    }
    Ok(h1_check(|x| family.radial_density(x.abs()), seed))
}

/// Diagnostic record emitted by the `validate` experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub family: String,
    pub ell: usize,
    pub alpha0: f64,
    pub alpha: Option<f64>,
    pub dalang: DalangReport,
    pub h1: Option<H1Report>,
    /// Nonnegative covariance function with Dalang's condition.
    pub h2: Option<bool>,
    pub condition_s: bool,
    pub exponents: Option<(f64, f64)>,
}

pub fn validate(noise: &NoiseParams, seed: u64) -> ValidationReport {
    let fam = &noise.spatial;
    let dalang = dalang_check(fam);
    let h1 = h1_check_family(fam, seed).ok();
    let h2 = fam.is_nonnegative_kernel().map(|nn| nn && dalang.passes());
    let condition_s = noise.condition_s();
    let exponents = if condition_s {
        noise
            .alpha()
            .and_then(|a| crate::covariance::scaling_exponents(noise.alpha0, a).ok())
    } else {
        None
    };
    ValidationReport {
        family: fam.name().into(),
        ell: noise.ell,
        alpha0: noise.alpha0,
        alpha: noise.alpha(),
        dalang,
        h1,
        h2,
        condition_s,
        exponents,
    }
}

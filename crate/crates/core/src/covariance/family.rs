//! Radial spectral families and the integrals of their spectral measures.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{PamError, Result};
use crate::quad::{self, angular_average, sphere_area};

/// One term `coef * k^power * exp(-gauss * k^2)` of a custom radial density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGaussTerm {
    pub coef: f64,
    pub power: f64,
    #[serde(default)]
    pub gauss: f64,
}

/// A user supplied radial spectral density `rho(|xi|)`.
#[derive(Clone)]
pub struct CustomDensity {
    pub label: String,
    density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Homogeneity degree alpha of the covariance if condition (S) holds.
    pub homogeneity: Option<f64>,
    /// Exponent p of `rho(k)` as k -> 0, used to cluster quadrature nodes.
    pub near_zero_power: f64,
    /// Set when the density came from [`PowerGaussTerm`]s.
    pub terms: Option<Vec<PowerGaussTerm>>,
}

impl CustomDensity {
    pub fn from_fn<F>(label: impl Into<String>, f: F, homogeneity: Option<f64>, near_zero_power: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        CustomDensity {
            label: label.into(),
            density: Arc::new(f),
            homogeneity,
            near_zero_power,
            terms: None,
        }
    }

    pub fn from_terms(terms: Vec<PowerGaussTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(PamError::config("custom density needs at least one term"));
        }
        if terms.iter().any(|t| t.coef < 0.0 || t.gauss < 0.0 || !t.power.is_finite()) {
            return Err(PamError::config(
                "custom density terms need coef >= 0, gauss >= 0 and finite powers",
            ));
        }
        let near_zero_power = terms
            .iter()
            .filter(|t| t.coef > 0.0)
            .map(|t| t.power)
            .fold(f64::INFINITY, f64::min);
        let owned = terms.clone();
        let f = move |k: f64| {
            owned
                .iter()
                .map(|t| t.coef * k.powf(t.power) * (-t.gauss * k * k).exp())
                .sum()
        };
        Ok(CustomDensity {
            label: "power_gauss".into(),
            density: Arc::new(f),
            homogeneity: None,
            near_zero_power: if near_zero_power.is_finite() { near_zero_power } else { 0.0 },
            terms: Some(terms),
        })
    }

    #[inline]
    pub fn eval(&self, k: f64) -> f64 {
        (self.density)(k)
    }
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("label", &self.label)
            .field("homogeneity", &self.homogeneity)
            .field("near_zero_power", &self.near_zero_power)
            .field("terms", &self.terms)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum FamilyKind {
    /// `gamma(x) = |x|^{-alpha}`.
    Riesz { alpha: f64 },
    /// Spectral density `c_H |xi|^{1-2H}` in dimension one.
    RoughFractional { hurst: f64 },
    /// `gamma = delta_0` in dimension one.
    White1d,
    /// `gamma = c`, a spectral atom at the origin.
    Constant,
    CustomRadial(CustomDensity),
}

/// Spatial covariance given through its spectral measure `mu`, with
/// `gamma(x) = (2 pi)^{-ell} int e^{i xi.x} mu(d xi)`.
///
/// `c_norm` multiplies the base density of the family (for [`FamilyKind::Constant`]
/// it is the constant value of the covariance). Scaling a family by theta
/// multiplies `c_norm` by theta.
#[derive(Clone, Debug)]
pub struct SpectralFamily {
    ell: usize,
    kind: FamilyKind,
    c_norm: f64,
}

/// Normalisation of `|xi|^{alpha-ell}` making its inverse transform `|x|^{-alpha}`.
pub fn riesz_constant(ell: usize, alpha: f64) -> f64 {
    let l = ell as f64;
    PI.powf(l / 2.0) * 2f64.powf(l - alpha) * gamma((l - alpha) / 2.0) / gamma(alpha / 2.0)
}

/// `c_H = Gamma(2H + 1) sin(pi H)`.
pub fn fractional_constant(hurst: f64) -> f64 {
    gamma(2.0 * hurst + 1.0) * (PI * hurst).sin()
}

fn check_ell(ell: usize) -> Result<()> {
    if !(1..=3).contains(&ell) {
        return Err(PamError::config(format!(
            "spatial dimension {ell} unsupported (radial transforms are implemented for ell = 1, 2, 3)"
        )));
    }
    Ok(())
}

impl SpectralFamily {
    pub fn riesz(ell: usize, alpha: f64) -> Result<Self> {
        check_ell(ell)?;
        let cap = 2f64.min(ell as f64);
        if !(alpha > 0.0 && alpha < cap) {
            return Err(PamError::config(format!(
                "riesz exponent alpha = {alpha} must satisfy 0 < alpha < min(2, ell) = {cap}"
            )));
        }
        Ok(SpectralFamily {
            ell,
            kind: FamilyKind::Riesz { alpha },
            c_norm: riesz_constant(ell, alpha),
        })
    }

    pub fn rough_fractional(hurst: f64) -> Result<Self> {
        if !(hurst > 0.25 && hurst <= 0.5) {
            return Err(PamError::config(format!(
                "rough fractional noise needs H in (1/4, 1/2], got {hurst}"
            )));
        }
        Ok(SpectralFamily {
            ell: 1,
            kind: FamilyKind::RoughFractional { hurst },
            c_norm: fractional_constant(hurst),
        })
    }

    pub fn white_1d() -> Self {
        SpectralFamily {
            ell: 1,
            kind: FamilyKind::White1d,
            c_norm: 1.0,
        }
    }

    pub fn constant(ell: usize, c: f64) -> Result<Self> {
        check_ell(ell)?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(PamError::config(format!("constant covariance needs c > 0, got {c}")));
        }
        Ok(SpectralFamily {
            ell,
            kind: FamilyKind::Constant,
            c_norm: c,
        })
    }

    pub fn custom(ell: usize, density: CustomDensity) -> Result<Self> {
        check_ell(ell)?;
        if density.near_zero_power + ell as f64 <= 0.0 {
            return Err(PamError::config(format!(
                "custom density ~ k^{} is not locally integrable in dimension {ell}",
                density.near_zero_power
            )));
        }
        Ok(SpectralFamily {
            ell,
            kind: FamilyKind::CustomRadial(density),
            c_norm: 1.0,
        })
    }

    /// The family with spectral measure multiplied by `theta`.
    pub fn scaled(&self, theta: f64) -> Self {
        let mut out = self.clone();
        out.c_norm *= theta;
        out
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Riesz { .. } => "riesz",
            FamilyKind::RoughFractional { .. } => "rough_fractional",
            FamilyKind::White1d => "white_1d",
            FamilyKind::Constant => "constant",
            FamilyKind::CustomRadial(_) => "custom_radial",
        }
    }

    /// Homogeneity degree alpha with `gamma(cx) = c^{-alpha} gamma(x)`.
    pub fn homogeneity(&self) -> Option<f64> {
        match &self.kind {
            FamilyKind::Riesz { alpha } => Some(*alpha),
            FamilyKind::RoughFractional { hurst } => Some(2.0 - 2.0 * hurst),
            FamilyKind::White1d => Some(1.0),
            FamilyKind::Constant => Some(0.0),
            FamilyKind::CustomRadial(d) => d.homogeneity,
        }
    }

    /// Whether the covariance is a nonnegative (generalised) function, the
    /// setting of condition (H.2). `None` when this cannot be decided.
    pub fn is_nonnegative_kernel(&self) -> Option<bool> {
        match &self.kind {
            FamilyKind::Riesz { .. } | FamilyKind::White1d | FamilyKind::Constant => Some(true),
            FamilyKind::RoughFractional { hurst } => Some(*hurst >= 0.5),
            FamilyKind::CustomRadial(_) => None,
        }
    }

    /// Mass of the atom at the origin (only the constant family has one).
    pub fn atom_mass(&self) -> f64 {
        match self.kind {
            FamilyKind::Constant => (2.0 * PI).powi(self.ell as i32) * self.c_norm,
            _ => 0.0,
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self.kind, FamilyKind::Constant)
    }

    /// Spectral density at radius `k = |xi|` (zero for the atom family).
    #[inline]
    pub fn radial_density(&self, k: f64) -> f64 {
        match &self.kind {
            FamilyKind::Riesz { alpha } => self.c_norm * k.powf(alpha - self.ell as f64),
            FamilyKind::RoughFractional { hurst } => self.c_norm * k.powf(1.0 - 2.0 * hurst),
            FamilyKind::White1d => self.c_norm,
            FamilyKind::Constant => 0.0,
            FamilyKind::CustomRadial(d) => self.c_norm * d.eval(k),
        }
    }

    /// Exponent p with `rho(k) k^{ell-1} ~ k^p` as `k -> 0`.
    pub fn radial_power(&self) -> f64 {
        let l = self.ell as f64;
        match &self.kind {
            FamilyKind::Riesz { alpha } => alpha - 1.0,
            FamilyKind::RoughFractional { hurst } => 1.0 - 2.0 * hurst,
            FamilyKind::White1d => 0.0,
            FamilyKind::Constant => 0.0,
            FamilyKind::CustomRadial(d) => d.near_zero_power + l - 1.0,
        }
    }

    /// `rho(k) * |S^{ell-1}| * k^{ell-1}`: the radial density of the measure.
    #[inline]
    pub fn shell_density(&self, k: f64) -> f64 {
        if k <= 0.0 {
            return 0.0;
        }
        self.radial_density(k) * sphere_area(self.ell) * k.powi(self.ell as i32 - 1)
    }

    /// `int_0^inf shell(k) e^{-delta k^2} h(k) dk` for smooth `h`.
    ///
    /// `oscillation` is the frequency of `h` in k (used to size panels).
    pub(crate) fn damped_radial_integral<H: Fn(f64) -> f64>(
        &self,
        delta: f64,
        oscillation: f64,
        h: H,
    ) -> f64 {
        if !self.has_density() {
            return 0.0;
        }
        let cut = (50.0 / delta).sqrt();
        let p = self.radial_power();
        let sa = sphere_area(self.ell);
        let l = self.ell as i32;
        let f = |k: f64| {
            if k <= 0.0 {
                return 0.0;
            }
            self.radial_density(k) * sa * k.powi(l - 1) * (-delta * k * k).exp() * h(k)
        };
        let k0 = (0.05 * cut).min(1.0 / (1.0 + oscillation));
        let head = quad::integrate_from_zero(f, k0, p, 2);
        let width = if oscillation > 0.0 {
            (0.5 * PI / oscillation).min(cut / 32.0)
        } else {
            cut / 32.0
        };
        head + quad::integrate_graded(f, k0, cut, width)
    }

    /// `(2 pi)^{-ell} int e^{-eps|xi|^2} e^{i xi.x} mu(d xi)` at `|x| = r` by
    /// radial quadrature.
    pub(crate) fn gamma_eps_radial(&self, r: f64, eps: f64) -> f64 {
        let ell = self.ell;
        let cont = self.damped_radial_integral(eps, r, |k| angular_average(ell, k * r));
        (self.atom_mass() + cont) / (2.0 * PI).powi(ell as i32)
    }

    /// `gamma_delta(0) = (2 pi)^{-ell} int e^{-delta |xi|^2} mu(d xi)`.
    pub fn gaussian_mass(&self, delta: f64) -> f64 {
        let cont = self.damped_radial_integral(delta, 0.0, |_| 1.0);
        (self.atom_mass() + cont) / (2.0 * PI).powi(self.ell as i32)
    }

    /// `int_{|xi| < radius} e^{-eps|xi|^2} mu(d xi)` (atom included).
    pub fn mass_below(&self, radius: f64, eps: f64) -> f64 {
        let mut acc = self.atom_mass();
        if self.has_density() && radius > 0.0 {
            let f = |k: f64| self.shell_density(k) * (-eps * k * k).exp();
            acc += quad::integrate_from_zero(f, radius, self.radial_power(), 8);
        }
        acc
    }

    /// `int_{|xi| > radius} e^{-eps|xi|^2} mu(d xi) / |xi|^2`.
    pub fn tail_over_square(&self, radius: f64, eps: f64) -> quad::WindowIntegral {
        let f = |k: f64| self.shell_density(k) * (-eps * k * k).exp() / (k * k);
        quad::dyadic_windows(f, radius, true)
    }
}

/// Draws `xi` from the probability measure proportional to
/// `e^{-delta |xi|^2} mu(d xi)`.
#[derive(Clone, Debug)]
pub struct SpectralSampler {
    ell: usize,
    delta: f64,
    /// `int e^{-delta |xi|^2} mu(d xi)`.
    total_mass: f64,
    radial: RadialLaw,
}

#[derive(Clone, Debug)]
enum RadialLaw {
    Atom,
    /// `|xi|^2 ~ Gamma(shape, 1/delta)`.
    SquaredGamma { shape: f64, law: Gamma<f64> },
    /// Inverse CDF on a grid of radii.
    Tabulated { radii: Vec<f64>, cdf: Vec<f64> },
}

impl SpectralSampler {
    pub fn new(family: &SpectralFamily, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(PamError::domain("spectral sampling needs a Gaussian damping delta > 0"));
        }
        let ell = family.ell();
        let total_mass = family.gaussian_mass(delta) * (2.0 * PI).powi(ell as i32);
        let radial = match family.kind() {
            FamilyKind::Constant => RadialLaw::Atom,
            FamilyKind::Riesz { .. } | FamilyKind::RoughFractional { .. } | FamilyKind::White1d => {
                let shape = (family.radial_power() + 1.0) / 2.0;
                let law = Gamma::new(shape, 1.0 / delta)
                    .map_err(|e| PamError::config(format!("radial gamma law: {e}")))?;
                RadialLaw::SquaredGamma { shape, law }
            }
            FamilyKind::CustomRadial(_) => {
                let cut = (50.0 / delta).sqrt();
                let q = quad::grading_exponent(family.radial_power());
                let cells = 4096;
                let rule = quad::gl16();
                let mut radii = Vec::with_capacity(cells + 1);
                let mut cdf = Vec::with_capacity(cells + 1);
                radii.push(0.0);
                cdf.push(0.0);
                let mut acc = 0.0;
                for i in 0..cells {
                    let v0 = i as f64 / cells as f64;
                    let v1 = (i + 1) as f64 / cells as f64;
                    acc += rule.integrate(
                        |v| {
                            if v <= 0.0 {
                                return 0.0;
                            }
                            let k = cut * v.powf(q);
                            family.shell_density(k) * (-delta * k * k).exp() * cut * q * v.powf(q - 1.0)
                        },
                        v0,
                        v1,
                    );
                    radii.push(cut * v1.powf(q));
                    cdf.push(acc);
                }
                if !(acc > 0.0 && acc.is_finite()) {
                    return Err(PamError::numerical("custom spectral mass is not positive and finite", acc));
                }
                for c in cdf.iter_mut() {
                    *c /= acc;
                }
                RadialLaw::Tabulated { radii, cdf }
            }
        };
        Ok(SpectralSampler {
            ell,
            delta,
            total_mass,
            radial,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// The sampler for another damping `delta`, available without new
    /// quadrature when the radial law is an atom or a squared gamma law
    /// (homogeneous densities, whose mass scales like `delta^{-shape}`).
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(PamError::domain("spectral sampling needs a Gaussian damping delta > 0"));
        }
        let (radial, total_mass) = match &self.radial {
            RadialLaw::Atom => (RadialLaw::Atom, self.total_mass),
            RadialLaw::SquaredGamma { shape, .. } => {
                let law = Gamma::new(*shape, 1.0 / delta)
                    .map_err(|e| PamError::config(format!("radial gamma law: {e}")))?;
                (
                    RadialLaw::SquaredGamma { shape: *shape, law },
                    self.total_mass * (self.delta / delta).powf(*shape),
                )
            }
            RadialLaw::Tabulated { .. } => {
                return Err(PamError::config("tabulated spectral laws cannot be rescaled"));
            }
        };
        Ok(SpectralSampler {
            ell: self.ell,
            delta,
            total_mass,
            radial,
        })
    }

    /// Writes one draw into `xi` (length `ell`).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, xi: &mut [f64]) {
        let k = match &self.radial {
            RadialLaw::Atom => {
                xi.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            RadialLaw::SquaredGamma { law, .. } => law.sample(rng).sqrt(),
            RadialLaw::Tabulated { radii, cdf } => {
                let u: f64 = rng.random();
                let idx = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[idx - 1], cdf[idx]);
                let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                radii[idx - 1] + w * (radii[idx] - radii[idx - 1])
            }
        };
        if self.ell == 1 {
            xi[0] = if rng.random::<bool>() { k } else { -k };
            return;
        }
        let mut norm = 0.0;
        for v in xi.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = z;
            norm += z * z;
        }
        let scale = k / norm.sqrt();
        xi.iter_mut().for_each(|v| *v *= scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fractional_constant_at_half_is_one() {
        assert!((fractional_constant(0.5) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn riesz_gaussian_mass_matches_closed_form() {
        // gamma_delta(0) = E|sqrt(2 delta) Z|^{-alpha}
        //                = (4 delta)^{-alpha/2} Gamma((ell-alpha)/2) / Gamma(ell/2)
        for &(ell, alpha) in &[(1usize, 0.5), (2, 1.0), (3, 1.5), (2, 1.9)] {
            let fam = SpectralFamily::riesz(ell, alpha).unwrap();
            for &delta in &[0.05, 0.5, 2.0] {
                let exact = (4.0 * delta as f64).powf(-alpha / 2.0) * gamma((ell as f64 - alpha) / 2.0)
                    / gamma(ell as f64 / 2.0);
                let got = fam.gaussian_mass(delta);
                assert!((got / exact - 1.0).abs() < 1e-10, "ell={ell} alpha={alpha} delta={delta} {got} {exact}");
            }
        }
    }

    #[test]
    fn constant_family_is_a_pure_atom() {
        let fam = SpectralFamily::constant(2, 3.0).unwrap();
        assert_eq!(fam.gaussian_mass(0.1), 3.0);
        assert_eq!(fam.gamma_eps_radial(5.0, 0.1), 3.0);
        assert_eq!(fam.mass_below(1.0, 0.0), 3.0 * (2.0 * PI).powi(2));
    }

    #[test]
    fn scaling_multiplies_the_measure() {
        let fam = SpectralFamily::riesz(1, 0.5).unwrap();
        let g1 = fam.gaussian_mass(0.3);
        let g2 = fam.scaled(2.5).gaussian_mass(0.3);
        assert!((g2 / g1 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn riesz_masses_have_closed_forms() {
        let alpha = 0.5;
        let fam = SpectralFamily::riesz(1, alpha).unwrap();
        let c = riesz_constant(1, alpha);
        let r = 3.0;
        let below = fam.mass_below(r, 0.0);
        assert!((below - 2.0 * c * r.powf(alpha) / alpha).abs() < 1e-10 * below);
        let tail = fam.tail_over_square(r, 0.0);
        let exact = 2.0 * c * r.powf(alpha - 2.0) / (2.0 - alpha);
        assert!((tail.value - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn sampler_second_moment() {
        // E|xi|^2 under e^{-delta k^2} k^{alpha-1} dk is (alpha/2)/delta
        let fam = SpectralFamily::riesz(1, 0.5).unwrap();
        let s = SpectralSampler::new(&fam, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xi = [0.0];
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            s.sample(&mut rng, &mut xi);
            acc += xi[0] * xi[0];
        }
        let mean = acc / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn tabulated_sampler_matches_gamma_law() {
        // custom density equal to the riesz density must give the same law
        let alpha = 0.8;
        let c = riesz_constant(1, alpha);
        let dens = CustomDensity::from_terms(vec![PowerGaussTerm {
            coef: c,
            power: alpha - 1.0,
            gauss: 0.0,
        }])
        .unwrap();
        let fam = SpectralFamily::custom(1, dens).unwrap();
        let s = SpectralSampler::new(&fam, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut xi = [0.0];
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            s.sample(&mut rng, &mut xi);
            acc += xi[0] * xi[0];
        }
        assert!((acc / n as f64 - alpha / 2.0).abs() < 0.01);
        let riesz = SpectralFamily::riesz(1, alpha).unwrap();
        assert!((s.total_mass() / SpectralSampler::new(&riesz, 1.0).unwrap().total_mass() - 1.0).abs() < 1e-8);
    }
}

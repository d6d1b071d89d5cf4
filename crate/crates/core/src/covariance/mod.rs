//! Temporal and spatial covariance families.
//!
//! The temporal covariance is `gamma_0(t) = |t|^{-alpha_0}`. Spatial
//! covariances are described by a radial spectral measure `mu` (see
//! [`SpectralFamily`]); the Gaussian-damped kernels `gamma_eps` are built
//! from it by radial quadrature and tabulated in [`SmoothedKernel`].

mod family;
mod smoothed;
mod validate;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

pub use family::{
    fractional_constant, riesz_constant, CustomDensity, FamilyKind, PowerGaussTerm, SpectralFamily,
    SpectralSampler,
};
pub use smoothed::{SmoothedKernel, TABLE_TOLERANCE};
pub use validate::{
    dalang_check, dalang_numeric, h1_check, h1_check_family, validate, DalangReport, H1Report,
    ValidationReport, KAPPA_MAX,
};

use crate::error::{PamError, Result};

/// The noise: spatial dimension, temporal exponent and spatial family.
#[derive(Clone, Debug)]
pub struct NoiseParams {
    pub ell: usize,
    pub alpha0: f64,
    pub spatial: SpectralFamily,
}

impl NoiseParams {
    /// Accepts `alpha0 in [0, 1)`; `alpha0 = 0` is a degenerate test case
    /// outside the scaling condition.
    pub fn new(alpha0: f64, spatial: SpectralFamily) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha0) {
            return Err(PamError::config(format!(
                "temporal exponent alpha0 = {alpha0} must lie in [0, 1)"
            )));
        }
        let dalang = dalang_check(&spatial);
        if !dalang.passes() {
            return Err(PamError::config(format!("Dalang's condition fails: {}", dalang.diagnostic)));
        }
        Ok(NoiseParams {
            ell: spatial.ell(),
            alpha0,
            spatial,
        })
    }

    /// Spatial homogeneity exponent, when the family has one.
    pub fn alpha(&self) -> Option<f64> {
        self.spatial.homogeneity()
    }

    /// Condition (S): `alpha0 in (0,1)` and `alpha in (0,2)`.
    pub fn condition_s(&self) -> bool {
        let a0_ok = self.alpha0 > 0.0 && self.alpha0 < 1.0;
        a0_ok && matches!(self.alpha(), Some(a) if a > 0.0 && a < 2.0)
    }

    pub fn temporal(&self) -> TemporalKernel {
        TemporalKernel { alpha0: self.alpha0 }
    }
}

/// `gamma_0(t) = |t|^{-alpha0}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernel {
    pub alpha0: f64,
}

impl TemporalKernel {
    pub fn new(alpha0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha0) {
            return Err(PamError::domain(format!(
                "|t|^(-alpha0) is not locally integrable for alpha0 = {alpha0}"
            )));
        }
        Ok(TemporalKernel { alpha0 })
    }

    pub fn eval(&self, t: f64) -> f64 {
        t.abs().powf(-self.alpha0)
    }

    /// `int_{-a}^{a} |t|^{-alpha0} dt`.
    pub fn l1_norm(&self, a: f64) -> f64 {
        2.0 * a.powf(1.0 - self.alpha0) / (1.0 - self.alpha0)
    }

    /// Constant `c` with `psi * psi = gamma_0` for `psi(s) = c |s|^{-(1+alpha0)/2}`.
    pub fn convolution_root_constant(&self) -> Result<f64> {
        if !(self.alpha0 > 0.0) {
            return Err(PamError::domain("gamma_0 = 1 is not a convolution square"));
        }
        // int_R |s|^{a-1} |1-s|^{a-1} ds = B(a,a) + 2 B(a, 1-2a), a = (1-alpha0)/2
        let a = 0.5 * (1.0 - self.alpha0);
        let integral = beta(a, a) + 2.0 * beta(a, 1.0 - 2.0 * a);
        Ok(integral.powf(-0.5))
    }
}

/// `|x|^{-alpha}`, with `+inf` at the origin.
pub fn riesz_gamma(x: &[f64], alpha: f64) -> Result<f64> {
    let ell = x.len();
    if !(alpha > 0.0 && alpha < 2f64.min(ell as f64)) {
        return Err(PamError::config(format!(
            "riesz exponent {alpha} outside (0, min(2, {ell}))"
        )));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(r2.powf(-alpha / 2.0))
}

/// Rough fractional spectral density `c_H |xi|^{1-2H}`.
pub fn fractional_density(xi: f64, hurst: f64) -> Result<f64> {
    if !(hurst > 0.25 && hurst <= 0.5) {
        return Err(PamError::config(format!(
            "H = {hurst} outside (1/4, 1/2]"
        )));
    }
    Ok(fractional_constant(hurst) * xi.abs().powf(1.0 - 2.0 * hurst))
}

/// `gamma_eps(x)` by direct radial quadrature, with an accuracy check that
/// repeats the quadrature on a finer panel layout.
pub fn gamma_eps_eval(x: &[f64], eps: f64, family: &SpectralFamily) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(PamError::domain("gamma_eps needs eps > 0"));
    }
    if x.len() != family.ell() {
        return Err(PamError::domain(format!(
            "point has dimension {} but the family lives in dimension {}",
            x.len(),
            family.ell()
        )));
    }
    if !dalang_check(family).passes() {
        return Err(PamError::config("family fails Dalang's condition"));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let coarse = family.gamma_eps_radial(r, eps);
    // finer panels: evaluate as if the oscillation were twice as fast
    let ell = family.ell();
    let fine = (family.atom_mass()
        + family.damped_radial_integral(eps, 2.0 * r + 1.0, |k| crate::quad::angular_average(ell, k * r)))
        / (2.0 * PI).powi(ell as i32);
    let scale = family.gaussian_mass(eps).abs().max(1e-300);
    let achieved = (coarse - fine).abs() / scale;
    if achieved > 1e-9 {
        return Err(PamError::numerical("gamma_eps quadrature did not settle", achieved));
    }
    Ok(fine)
}

/// Exponents `a = (4 - alpha - 2 alpha0)/(2 - alpha)` and `b = 2a/(a+1)`.
pub fn scaling_exponents(alpha0: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(PamError::config(format!("alpha0 = {alpha0} outside (0, 1)")));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(PamError::config(format!("alpha = {alpha} outside (0, 2)")));
    }
    let a = (4.0 - alpha - 2.0 * alpha0) / (2.0 - alpha);
    let b = 2.0 * a / (a + 1.0);
    // a = 2 exactly when alpha = 2 alpha0, and a > 2 beyond; b < 2 always
    debug_assert!(a > 1.0 && b > 1.0 && b < 2.0);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riesz_gamma_examples() {
        assert_eq!(riesz_gamma(&[1.0], 0.5).unwrap(), 1.0);
        assert_eq!(riesz_gamma(&[0.0, 0.0], 1.0).unwrap(), f64::INFINITY);
        let x = [0.3, -0.7];
        let g = riesz_gamma(&x, 1.2).unwrap();
        let g2 = riesz_gamma(&[0.6, -1.4], 1.2).unwrap();
        assert!((g2 - 2f64.powf(-1.2) * g).abs() < 1e-14);
        assert!(riesz_gamma(&[1.0], 1.0).is_err());
    }

    #[test]
    fn fractional_density_examples() {
        for xi in [-3.0, 0.1, 7.0] {
            assert!((fractional_density(xi, 0.5).unwrap() - 1.0).abs() < 1e-14);
        }
        assert!(fractional_density(1.0, 0.25).is_err());
    }

    #[test]
    fn exponents_examples() {
        let (a, b) = scaling_exponents(0.5, 1.0).unwrap();
        assert!((a - 2.0).abs() < 1e-15 && (b - 4.0 / 3.0).abs() < 1e-15);
        let (a, b) = scaling_exponents(0.25, 0.5).unwrap();
        assert!((a - 2.0).abs() < 1e-15 && (b - 4.0 / 3.0).abs() < 1e-15);
        let (a, _) = scaling_exponents(1.0 - 1e-9, 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-8);
        assert!(scaling_exponents(1.0, 1.0).is_err());
        assert!(scaling_exponents(0.5, 2.0).is_err());
    }

    #[test]
    fn temporal_kernel_norms() {
        let k = TemporalKernel::new(0.5).unwrap();
        assert!((k.l1_norm(1.0) - 4.0).abs() < 1e-15);
        assert!(TemporalKernel::new(1.0).is_err());
    }

    #[test]
    fn convolution_root_reproduces_the_kernel() {
        // (psi * psi)(1) = 1 checked by quadrature with the singularities split out
        let k = TemporalKernel::new(0.5).unwrap();
        let c = k.convolution_root_constant().unwrap();
        let b = 0.75;
        let psi = |s: f64| c * s.abs().powf(-b);
        let f = |s: f64| psi(s) * psi(1.0 - s);
        // [0, 1] split at 1/2, then the two half lines folded onto (0, 1]
        let mid = 2.0 * crate::quad::integrate_from_zero(f, 0.5, -b, 4);
        let near = crate::quad::integrate_from_zero(|u| f(-u), 1.0, -b, 4);
        let far = crate::quad::integrate_from_zero(|v| f(-1.0 / v) / (v * v), 1.0, 2.0 * b - 2.0, 4);
        let total = mid + 2.0 * (near + far);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn noise_params_flags() {
        let n = NoiseParams::new(0.5, SpectralFamily::riesz(1, 0.5).unwrap()).unwrap();
        assert!(n.condition_s());
        let n0 = NoiseParams::new(0.0, SpectralFamily::riesz(1, 0.5).unwrap()).unwrap();
        assert!(!n0.condition_s());
        assert!(NoiseParams::new(1.0, SpectralFamily::white_1d()).is_err());
    }
}

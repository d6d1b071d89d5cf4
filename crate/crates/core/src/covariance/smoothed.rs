//! Tabulated Gaussian-damped covariances `gamma_eps`.

use crate::covariance::family::{FamilyKind, SpectralFamily};
use crate::error::{PamError, Result};

/// Grid cells per `sqrt(eps)`; four-point Lagrange interpolation on this
/// grid keeps the interpolation error near `1e-7 gamma_eps(0)`.
const CELLS_PER_SCALE: f64 = 16.0;

const SERIES_TERMS: usize = 10;

/// Interpolation tolerance of a table, relative to `gamma_eps(0)`.
pub const TABLE_TOLERANCE: f64 = 1e-6;

/// `gamma_eps(x) = (2 pi)^{-ell} int e^{-eps |xi|^2} e^{i xi.x} mu(d xi)`,
/// tabulated on a uniform radial grid and interpolated with cubic Lagrange
/// polynomials. Beyond the table an asymptotic tail model takes over.
#[derive(Clone, Debug)]
pub struct SmoothedKernel {
    family: SpectralFamily,
    eps: f64,
    repr: Repr,
}

#[derive(Clone, Debug)]
enum Repr {
    Constant(f64),
    Table(RadialTable),
}

#[derive(Clone, Debug)]
struct RadialTable {
    h: f64,
    inv_h: f64,
    r_max: f64,
    /// `values[i]` holds `gamma_eps((i - 1) h)`; index 0 is the mirror point.
    values: Vec<f64>,
    tail: Tail,
}

#[derive(Clone, Copy, Debug)]
enum Tail {
    /// `a r^{-alpha} (1 + b / r^2)`.
    PowerLaw { a: f64, b: f64, alpha: f64 },
    /// Heat-semigroup expansion `a r^{-alpha} sum_k c_k (eps / r^2)^k` of a
    /// smoothed homogeneous kernel.
    Homogeneous { a: f64, alpha: f64, eps: f64, coefs: [f64; SERIES_TERMS] },
    Zero,
}

impl SmoothedKernel {
    /// Builds the table out to `r_max` (default `40 sqrt(eps) + 16`).
    pub fn new(family: &SpectralFamily, eps: f64, r_max: Option<f64>) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(PamError::config(format!("smoothing parameter eps must be positive, got {eps}")));
        }
        if let FamilyKind::Constant = family.kind() {
            return Ok(SmoothedKernel {
                family: family.clone(),
                eps,
                repr: Repr::Constant(family.c_norm()),
            });
        }
        let scale = eps.sqrt();
        let r_max = r_max.unwrap_or(40.0 * scale + 16.0);
        if !(r_max > 4.0 * scale) {
            return Err(PamError::config(format!(
                "table radius {r_max} too small for eps = {eps}"
            )));
        }
        let h = scale / CELLS_PER_SCALE;
        let n = (r_max / h).ceil() as usize + 1;
        let r_max = (n - 1) as f64 * h;
        let mut values = Vec::with_capacity(n + 3);
        for i in 0..n + 3 {
            let r = ((i as f64) - 1.0).abs() * h;
            values.push(family.gamma_eps_radial(r, eps));
        }
        let at = |r: f64| family.gamma_eps_radial(r, eps);
        let peak = values[1].abs().max(1e-300);
        let tail = match family.homogeneity() {
            Some(alpha) if alpha > 0.0 && !matches!(family.kind(), FamilyKind::White1d) => {
                homogeneous_tail(family.ell(), alpha, eps, r_max, at)
            }
            _ => {
                let v_end = at(r_max);
                if v_end.abs() <= 1e-12 * peak {
                    Tail::Zero
                } else {
                    let ra = 0.75 * r_max;
                    let va = at(ra);
                    if va * v_end > 0.0 {
                        let alpha = (va / v_end).ln() / (r_max / ra).ln();
                        Tail::PowerLaw {
                            a: v_end * r_max.powf(alpha),
                            b: 0.0,
                            alpha,
                        }
                    } else {
                        Tail::Zero
                    }
                }
            }
        };
        Ok(SmoothedKernel {
            family: family.clone(),
            eps,
            repr: Repr::Table(RadialTable {
                h,
                inv_h: 1.0 / h,
                r_max,
                values,
                tail,
            }),
        })
    }

    pub fn family(&self) -> &SpectralFamily {
        &self.family
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Largest tabulated radius (infinite for the constant family).
    pub fn r_max(&self) -> f64 {
        match &self.repr {
            Repr::Constant(_) => f64::INFINITY,
            Repr::Table(t) => t.r_max,
        }
    }

    /// Tabulation grid spacing, if any.
    pub fn spacing(&self) -> Option<f64> {
        match &self.repr {
            Repr::Constant(_) => None,
            Repr::Table(t) => Some(t.h),
        }
    }

    #[inline]
    pub fn eval_r(&self, r: f64) -> f64 {
        match &self.repr {
            Repr::Constant(c) => *c,
            Repr::Table(t) => t.eval(r),
        }
    }

    #[inline]
    pub fn eval_r2(&self, r2: f64) -> f64 {
        match &self.repr {
            Repr::Constant(c) => *c,
            Repr::Table(t) => t.eval(r2.sqrt()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_r2(x.iter().map(|v| v * v).sum())
    }

    /// Direct quadrature of the same quantity, bypassing the table.
    pub fn eval_direct(&self, r: f64) -> f64 {
        self.family.gamma_eps_radial(r, self.eps)
    }
}

/// `e^{eps Delta} r^{-alpha}` expanded with `Delta r^{-b} = b (b - ell + 2) r^{-b-2}`;
/// the amplitude is matched to the quadrature value at `r_max`.
fn homogeneous_tail(ell: usize, alpha: f64, eps: f64, r_max: f64, at: impl Fn(f64) -> f64) -> Tail {
    let l = ell as f64;
    let mut coefs = [0.0; SERIES_TERMS];
    coefs[0] = 1.0;
    for k in 1..SERIES_TERMS {
        let b = alpha + 2.0 * (k - 1) as f64;
        coefs[k] = coefs[k - 1] * b * (b - l + 2.0) / k as f64;
    }
    let unit = Tail::Homogeneous { a: 1.0, alpha, eps, coefs };
    let shape = unit.eval(r_max);
    let value = at(r_max);
    if shape == 0.0 || value.abs() <= 1e-14 * shape.abs() {
        return Tail::Zero;
    }
    Tail::Homogeneous { a: value / shape, alpha, eps, coefs }
}

impl Tail {
    fn eval(&self, r: f64) -> f64 {
        match *self {
            Tail::PowerLaw { a, b, alpha } => a * r.powf(-alpha) * (1.0 + b / (r * r)),
            Tail::Homogeneous { a, alpha, eps, ref coefs } => {
                // asymptotic series: stop at the smallest term
                let x = eps / (r * r);
                let mut sum = 0.0;
                let mut pow = 1.0;
                let mut last = f64::INFINITY;
                for &c in coefs {
                    let term = c * pow;
                    if term.abs() > last {
                        break;
                    }
                    sum += term;
                    last = term.abs();
                    pow *= x;
                }
                a * r.powf(-alpha) * sum
            }
            Tail::Zero => 0.0,
        }
    }
}

impl RadialTable {
    #[inline]
    fn eval(&self, r: f64) -> f64 {
        if r >= self.r_max {
            return self.tail.eval(r);
        }
        let u = r * self.inv_h + 1.0;
        let i = (u as usize).max(1);
        let t = u - i as f64;
        let v = &self.values[i - 1..i + 3];
        // cubic Lagrange through nodes -1, 0, 1, 2
        let c0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let c1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let c2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let c3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        c0 * v[0] + c1 * v[1] + c2 * v[2] + c3 * v[3]
    }
}

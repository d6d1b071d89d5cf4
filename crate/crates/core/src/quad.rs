//! Quadrature building blocks: Gauss-Legendre panels, algebraic endpoint
//! clustering, dyadic tail windows with divergence detection, and the
//! angular averages of plane waves needed by radial Fourier transforms.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub struct GlRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GlRule {
    /// Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p0 = 1.0;
                let mut p1 = 0.0;
                for j in 0..n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p2) / (j + 1) as f64;
                }
                dp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
                let dx = p0 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GlRule { nodes, weights }
    }

    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

pub fn gl16() -> &'static GlRule {
    static RULE: OnceLock<GlRule> = OnceLock::new();
    RULE.get_or_init(|| GlRule::new(16))
}

pub fn gl32() -> &'static GlRule {
    static RULE: OnceLock<GlRule> = OnceLock::new();
    RULE.get_or_init(|| GlRule::new(32))
}

/// Exponent `q` of the substitution `k = v^q` for an integrand `~ k^p` at zero:
/// the transformed integrand behaves like `v^{q(p+1)-1} = v^3`, smooth enough
/// for Gauss-Legendre even when `p` is fractional.
pub fn grading_exponent(p: f64) -> f64 {
    (4.0 / (p + 1.0)).clamp(1.0, 40.0)
}

/// Integrates `f` over `[0, b]` where `f(k) ~ k^p` near zero (`p > -1`).
///
/// The substitution `k = b v^q` (see [`grading_exponent`]) turns the power
/// singularity into a smooth integrand. The interval is further split into
/// `pieces` equal parts in `v`.
pub fn integrate_from_zero<F: FnMut(f64) -> f64>(mut f: F, b: f64, p: f64, pieces: usize) -> f64 {
    let q = grading_exponent(p);
    let rule = gl32();
    let pieces = pieces.max(1);
    let mut acc = 0.0;
    for i in 0..pieces {
        let v0 = i as f64 / pieces as f64;
        let v1 = (i + 1) as f64 / pieces as f64;
        acc += rule.integrate(
            |v| {
                if v <= 0.0 {
                    return 0.0;
                }
                let k = b * v.powf(q);
                f(k) * b * q * v.powf(q - 1.0)
            },
            v0,
            v1,
        );
    }
    acc
}

/// Composite Gauss-Legendre over `[a, b]`, `a > 0`, with panels that grow
/// geometrically from `a` and never exceed `max_width`.
pub fn integrate_graded<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, max_width: f64) -> f64 {
    let rule = gl16();
    let mut acc = 0.0;
    let mut x = a;
    while x < b {
        let w = x.min(max_width).max(1e-300);
        let x1 = (x + w).min(b);
        acc += rule.integrate(&mut f, x, x1);
        x = x1;
    }
    acc
}

/// Outcome of an integral whose convergence is not known a priori.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Finite,
    Divergent,
    Indeterminate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowIntegral {
    pub value: f64,
    pub verdict: Convergence,
    /// Partial sums after each dyadic window.
    pub partials: Vec<f64>,
}

/// Sums a nonnegative integrand over dyadic windows `[s 2^j, s 2^{j+1}]`
/// (`outward = true`) or `[s 2^{-j-1}, s 2^{-j}]` (`outward = false`).
///
/// Window masses of an algebraically behaved integrand form an asymptotically
/// geometric sequence; a ratio that settles at or above one signals
/// divergence, a ratio below one gets a geometric tail correction.
pub fn dyadic_windows<F: FnMut(f64) -> f64>(mut f: F, start: f64, outward: bool) -> WindowIntegral {
    const MAX_WINDOWS: usize = 160;
    const MIN_WINDOWS: usize = 12;
    let rule = gl32();
    let mut sum = 0.0;
    let mut partials = Vec::new();
    let mut windows: Vec<f64> = Vec::new();
    for j in 0..MAX_WINDOWS {
        let (a, b) = if outward {
            (start * 2f64.powi(j as i32), start * 2f64.powi(j as i32 + 1))
        } else {
            (start * 2f64.powi(-(j as i32) - 1), start * 2f64.powi(-(j as i32)))
        };
        // split each window in four to keep GL32 well inside its accuracy
        let mut w = 0.0;
        for i in 0..4 {
            let x0 = a + (b - a) * i as f64 / 4.0;
            let x1 = a + (b - a) * (i + 1) as f64 / 4.0;
            w += rule.integrate(&mut f, x0, x1);
        }
        sum += w;
        partials.push(sum);
        windows.push(w);
        if !sum.is_finite() {
            return WindowIntegral {
                value: sum,
                verdict: Convergence::Divergent,
                partials,
            };
        }
        if j + 1 < MIN_WINDOWS {
            continue;
        }
        let n = windows.len();
        let (w1, w2, w3) = (windows[n - 3], windows[n - 2], windows[n - 1]);
        if w3 == 0.0 && w2 == 0.0 {
            return WindowIntegral {
                value: sum,
                verdict: Convergence::Finite,
                partials,
            };
        }
        if w2 <= 0.0 || w1 <= 0.0 {
            continue;
        }
        let r1 = w2 / w1;
        let r2 = w3 / w2;
        if r1 >= 0.999 && r2 >= 0.999 && n >= 24 {
            return WindowIntegral {
                value: sum,
                verdict: Convergence::Divergent,
                partials,
            };
        }
        if r2 < 0.99 && (r2 - r1).abs() < 0.05 * r2.max(1e-3) {
            let tail = w3 * r2 / (1.0 - r2);
            let settled = n >= 40 && (r2 - r1).abs() < 1e-4 * r2;
            if tail <= 1e-13 * sum.abs() || settled {
                let value = sum + tail;
                partials.push(value);
                return WindowIntegral {
                    value,
                    verdict: Convergence::Finite,
                    partials,
                };
            }
        }
    }
    let n = windows.len();
    let r = windows[n - 1] / windows[n - 2];
    let verdict = if r >= 0.999 {
        Convergence::Divergent
    } else {
        Convergence::Indeterminate
    };
    WindowIntegral {
        value: sum,
        verdict,
        partials,
    }
}

/// Bessel function of the first kind of order zero.
pub fn bessel_j0(z: f64) -> f64 {
    let z = z.abs();
    if z < 25.0 {
        // trapezoid rule on a periodic analytic integrand converges geometrically
        let n = (z as usize) + 32;
        let mut acc = 0.0;
        for i in 0..n {
            let theta = PI * (i as f64 + 0.5) / n as f64;
            acc += (z * theta.sin()).cos();
        }
        acc / n as f64
    } else {
        // Hankel asymptotic expansion
        let mut p = 1.0;
        let mut q = -1.0 / (8.0 * z);
        let mut term_p = 1.0;
        let mut term_q = -1.0 / (8.0 * z);
        let mu = 0.0;
        for k in 1..20 {
            let k2 = 2 * k;
            term_p *= -(mu - ((2 * k2 - 3) * (2 * k2 - 3)) as f64)
                * (mu - ((2 * k2 - 1) * (2 * k2 - 1)) as f64)
                / ((k2 - 1) as f64 * k2 as f64 * 64.0 * z * z);
            term_q *= -(mu - ((2 * k2 - 1) * (2 * k2 - 1)) as f64)
                * (mu - ((2 * k2 + 1) * (2 * k2 + 1)) as f64)
                / (k2 as f64 * (k2 + 1) as f64 * 64.0 * z * z);
            p += term_p;
            q += term_q;
            if term_p.abs() < 1e-17 && term_q.abs() < 1e-17 {
                break;
            }
        }
        let chi = z - PI / 4.0;
        (2.0 / (PI * z)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Average of `exp(i xi.x)` over directions of `xi`, as a function of
/// `z = |xi||x|`, for dimensions 1 to 3.
#[inline]
pub fn angular_average(ell: usize, z: f64) -> f64 {
    match ell {
        1 => z.cos(),
        2 => bessel_j0(z),
        _ => {
            if z.abs() < 1e-4 {
                1.0 - z * z / 6.0
            } else {
                z.sin() / z
            }
        }
    }
}

/// Surface area of the unit sphere in R^ell.
pub fn sphere_area(ell: usize) -> f64 {
    let h = ell as f64 / 2.0;
    2.0 * PI.powf(h) / statrs::function::gamma::gamma(h)
}

//! Scalar special functions used by the copula kernels and the margins.
//!
//! The normal distribution and log-gamma come from `statrs`. The regularized
//! incomplete beta function and its inverse are implemented here because the
//! beta quantile sits inside the likelihood hot loop: the shape-dependent
//! `ln B(a, b)` is computed once per margin and the inverse must converge to
//! machine precision so that numerically differenced likelihoods stay smooth.

use statrs::function::beta::ln_beta;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal cdf.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile. Returns `-inf`/`inf` at 0 and 1.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(expit(x))` without cancellation.
#[inline]
pub fn ln_expit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `ln C(n, k)` via log-gamma.
#[inline]
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    let (n, k) = (n as f64, k as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Stable `ln Σ exp(x_i)`; `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    h
}

/// Beta distribution with cached `ln B(a, b)`.
#[derive(Debug, Clone, Copy)]
pub struct BetaDist {
    a: f64,
    b: f64,
    ln_b: f64,
}

impl BetaDist {
    pub fn new(a: f64, b: f64) -> Self {
        debug_assert!(a > 0.0 && b > 0.0);
        Self { a, b, ln_b: ln_beta(a, b) }
    }

    pub fn shapes(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Regularized incomplete beta `I_x(a, b)` and its complement, each
    /// computed from the branch that avoids cancellation.
    pub fn cdf_pair(&self, x: f64) -> (f64, f64) {
        if x <= 0.0 {
            return (0.0, 1.0);
        }
        if x >= 1.0 {
            return (1.0, 0.0);
        }
        let (a, b) = (self.a, self.b);
        let front = (a * x.ln() + b * (-x).ln_1p() - self.ln_b).exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            let lower = front * beta_cf(a, b, x) / a;
            (lower, 1.0 - lower)
        } else {
            let upper = front * beta_cf(b, a, 1.0 - x) / b;
            (1.0 - upper, upper)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_pair(x).0
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_b
    }

    /// Quantile returned as `(x, 1 - x)`; the complement is carried separately
    /// so that `ln(1 - x)` keeps full precision in the upper tail.
    pub fn quantile_pair(&self, p: f64) -> (f64, f64) {
        if p <= 0.0 {
            return (0.0, 1.0);
        }
        if p >= 1.0 {
            return (1.0, 0.0);
        }
        if p <= 0.5 {
            lower_quantile(p, self.a, self.b, self.ln_b)
        } else {
            let (y, x) = lower_quantile(1.0 - p, self.b, self.a, self.ln_b);
            (x, y)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_pair(p).0
    }
}

/// Initial approximation to the lower `p` quantile of Beta(a, b)
/// (Majumder–Bhattacharjee, AS 109).
fn initial_guess(p: f64, a: f64, b: f64, ln_b: f64) -> f64 {
    let r = (-2.0 * p.ln()).sqrt();
    let y = r - (2.30753 + 0.27061 * r) / (1.0 + (0.99229 + 0.04481 * r) * r);
    let x = if a > 1.0 && b > 1.0 {
        let r = (y * y - 3.0) / 6.0;
        let s = 1.0 / (2.0 * a - 1.0);
        let t = 1.0 / (2.0 * b - 1.0);
        let h = 2.0 / (s + t);
        let w = y * (h + r).sqrt() / h - (t - s) * (r + 5.0 / 6.0 - 2.0 / (3.0 * h));
        a / (a + b * (2.0 * w).exp())
    } else {
        let r = 2.0 * b;
        let t = 1.0 / (9.0 * b);
        let t = r * (1.0 - t + y * t.sqrt()).powi(3);
        if t <= 0.0 {
            1.0 - (((-p).ln_1p() + b.ln() + ln_b) / b).exp()
        } else {
            let t = (4.0 * a + r - 2.0) / t;
            if t <= 1.0 {
                (((p * a).ln() + ln_b) / a).exp()
            } else {
                1.0 - 2.0 / (t + 1.0)
            }
        }
    };
    if x.is_finite() && x > 0.0 && x < 1.0 {
        x
    } else {
        0.5
    }
}

/// Solves `I_x(a, b) = p` for `p <= 0.5` by Halley/Newton steps inside a
/// shrinking bracket, bisecting whenever a step leaves the bracket.
fn lower_quantile(p: f64, a: f64, b: f64, ln_b: f64) -> (f64, f64) {
    let dist = BetaDist { a, b, ln_b };
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x = initial_guess(p, a, b, ln_b);
    for _ in 0..200 {
        let f = dist.cdf(x) - p;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = dist.ln_pdf(x).exp();
        let mut next = f64::NAN;
        if dens.is_finite() && dens > 0.0 {
            let newton = f / dens;
            let curv = (a - 1.0) / x - (b - 1.0) / (1.0 - x);
            let denom = 1.0 - 0.5 * newton * curv;
            let step = if denom.is_finite() && denom > 0.5 && denom < 2.0 {
                newton / denom
            } else {
                newton
            };
            next = x - step;
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let moved = (next - x).abs();
        x = next;
        if moved <= 4.0 * f64::EPSILON * x || hi - lo <= 4.0 * f64::EPSILON * x {
            break;
        }
    }
    (x, 1.0 - x)
}

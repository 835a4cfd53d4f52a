//! Bivariate copula building blocks.
//!
//! Every family exposes the conditional cdf `C(w | u) = ∂C(u, w)/∂u`, its
//! inverse in `w`, the density, and the Kendall tau ↔ parameter maps. The
//! first argument of a pair copula is always the conditioning variable.
//!
//! Rotations of the Clayton copula follow the usual convention:
//!
//! * 180°: `C(u, v) = u + v - 1 + C₀(1 - u, 1 - v)` (upper tail dependence)
//! * 90°:  `C(u, v) = v - C₀(1 - u, v)` (dependence between large `u` and small `v`)
//! * 270°: `C(u, v) = u - C₀(u, 1 - v)` (dependence between small `u` and large `v`)
//!
//! All rotated variants take `θ > 0`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, Error, Result};
use crate::quadrature::legendre_nodes;
use crate::special::{norm_cdf, norm_quantile};
#[cfg(test)]
use crate::special::norm_pdf;

/// Below this magnitude the Frank copula is evaluated as the independence copula.
pub const FRANK_INDEPENDENCE_THRESHOLD: f64 = 1e-5;

/// Clamp applied to kernel inputs on the likelihood path.
pub(crate) const LIKELIHOOD_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Bvn,
    Frank,
    Clayton0,
    Clayton90,
    Clayton180,
    Clayton270,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 7] = [
        CopulaFamily::Independence,
        CopulaFamily::Bvn,
        CopulaFamily::Frank,
        CopulaFamily::Clayton0,
        CopulaFamily::Clayton90,
        CopulaFamily::Clayton180,
        CopulaFamily::Clayton270,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Bvn => "bvn",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton0 => "clayton0",
            CopulaFamily::Clayton90 => "clayton90",
            CopulaFamily::Clayton180 => "clayton180",
            CopulaFamily::Clayton270 => "clayton270",
        }
    }

    pub fn is_parametric(self) -> bool {
        self != CopulaFamily::Independence
    }

    /// Open interval of admissible Kendall taus, `None` for independence.
    pub fn tau_interval(self) -> Option<(f64, f64)> {
        match self {
            CopulaFamily::Independence => None,
            CopulaFamily::Bvn | CopulaFamily::Frank => Some((-1.0, 1.0)),
            CopulaFamily::Clayton0 | CopulaFamily::Clayton180 => Some((0.0, 1.0)),
            CopulaFamily::Clayton90 | CopulaFamily::Clayton270 => Some((-1.0, 0.0)),
        }
    }

    fn is_clayton(self) -> bool {
        matches!(
            self,
            CopulaFamily::Clayton0
                | CopulaFamily::Clayton90
                | CopulaFamily::Clayton180
                | CopulaFamily::Clayton270
        )
    }

    fn check_theta(self, theta: f64) -> Result<()> {
        let ok = match self {
            CopulaFamily::Independence => true,
            CopulaFamily::Bvn => (-1.0..=1.0).contains(&theta),
            CopulaFamily::Frank => theta.is_finite() && theta != 0.0,
            _ => theta.is_finite() && theta > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ParameterRange { family: self.name().to_string(), value: theta })
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let fam = match key.as_str() {
            "independence" | "indep" | "i" => CopulaFamily::Independence,
            "bvn" | "normal" | "gaussian" => CopulaFamily::Bvn,
            "frank" => CopulaFamily::Frank,
            "clayton" | "clayton0" => CopulaFamily::Clayton0,
            "clayton90" => CopulaFamily::Clayton90,
            "clayton180" => CopulaFamily::Clayton180,
            "clayton270" => CopulaFamily::Clayton270,
            _ => return Err(Error::InvalidInput(format!("unknown copula family '{s}'"))),
        };
        Ok(fam)
    }
}

/// A bivariate copula with its natural parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    pub theta: f64,
}

impl CopulaSpec {
    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self> {
        family.check_theta(theta)?;
        let theta = if family.is_parametric() { theta } else { 0.0 };
        Ok(Self { family, theta })
    }

    pub fn independence() -> Self {
        Self { family: CopulaFamily::Independence, theta: 0.0 }
    }

    /// Builds a copula from Kendall's tau. `tau = 0` is accepted for BVN
    /// (`θ = 0`) and Frank (independence); Clayton rotations need a tau of
    /// the sign their rotation admits.
    pub fn from_tau(family: CopulaFamily, tau: f64) -> Result<Self> {
        match family {
            CopulaFamily::Independence => Ok(Self::independence()),
            CopulaFamily::Bvn | CopulaFamily::Frank if tau == 0.0 => {
                if family == CopulaFamily::Bvn {
                    Ok(Self { family, theta: 0.0 })
                } else {
                    Ok(Self::independence())
                }
            }
            _ => Ok(Self { family, theta: tau_to_theta(family, tau)? }),
        }
    }

    pub fn tau(&self) -> f64 {
        match self.family {
            CopulaFamily::Independence => 0.0,
            CopulaFamily::Bvn if self.theta == 0.0 => 0.0,
            _ => theta_to_tau(self.family, self.theta).unwrap_or(f64::NAN),
        }
    }

    fn effective(&self) -> Kernel {
        match self.family {
            CopulaFamily::Independence => Kernel::Independence,
            CopulaFamily::Bvn => Kernel::Gaussian(self.theta),
            CopulaFamily::Frank if self.theta.abs() < FRANK_INDEPENDENCE_THRESHOLD => {
                Kernel::Independence
            }
            CopulaFamily::Frank => Kernel::Frank(self.theta),
            CopulaFamily::Clayton0 => Kernel::Clayton(Rotation::R0, self.theta),
            CopulaFamily::Clayton90 => Kernel::Clayton(Rotation::R90, self.theta),
            CopulaFamily::Clayton180 => Kernel::Clayton(Rotation::R180, self.theta),
            CopulaFamily::Clayton270 => Kernel::Clayton(Rotation::R270, self.theta),
        }
    }

    fn validate(&self) -> Result<()> {
        self.family.check_theta(self.theta)
    }

    /// Conditional cdf `C(w | u)`.
    pub fn ccdf(&self, w: f64, u: f64) -> Result<f64> {
        self.validate()?;
        check_open_unit("w", w)?;
        check_open_unit("u", u)?;
        Ok(self.effective().ccdf(w, u))
    }

    /// Inverse conditional cdf: the `w` with `C(w | u) = v`.
    pub fn ccdf_inv(&self, v: f64, u: f64) -> Result<f64> {
        self.validate()?;
        check_open_unit("v", v)?;
        check_open_unit("u", u)?;
        Ok(self.effective().ccdf_inv(v, u))
    }

    /// Copula density `c(u, v)`.
    pub fn density(&self, u: f64, v: f64) -> Result<f64> {
        self.validate()?;
        check_open_unit("u", u)?;
        check_open_unit("v", v)?;
        if self.family == CopulaFamily::Bvn && self.theta.abs() == 1.0 {
            return Err(Error::ParameterRange {
                family: "bvn (density is singular)".to_string(),
                value: self.theta,
            });
        }
        Ok(self.effective().density(u, v))
    }

    /// Likelihood-path inverse: inputs clamped away from the boundary and no
    /// validation (the caller built the spec from a checked tau).
    #[inline]
    pub(crate) fn ccdf_inv_clamped(&self, v: f64, u: f64) -> f64 {
        let v = v.clamp(LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP);
        let u = u.clamp(LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP);
        self.effective().ccdf_inv(v, u)
    }
}

#[derive(Debug, Clone, Copy)]
enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

#[derive(Debug, Clone, Copy)]
enum Kernel {
    Independence,
    Gaussian(f64),
    Frank(f64),
    Clayton(Rotation, f64),
}

impl Kernel {
    fn ccdf(self, w: f64, u: f64) -> f64 {
        match self {
            Kernel::Independence => w,
            Kernel::Gaussian(rho) => {
                if rho.abs() == 1.0 {
                    let target = if rho > 0.0 { u } else { 1.0 - u };
                    return if w < target {
                        0.0
                    } else if w > target {
                        1.0
                    } else {
                        0.5
                    };
                }
                let z = (norm_quantile(w) - rho * norm_quantile(u)) / (1.0 - rho * rho).sqrt();
                norm_cdf(z)
            }
            Kernel::Frank(theta) => {
                let a = (-theta * u).exp_m1();
                let b = (-theta * w).exp_m1();
                let c = (-theta).exp_m1();
                (a + 1.0) * b / (c + a * b)
            }
            Kernel::Clayton(rot, theta) => match rot {
                Rotation::R0 => clayton_ccdf(w, u, theta),
                Rotation::R90 => clayton_ccdf(w, 1.0 - u, theta),
                Rotation::R180 => 1.0 - clayton_ccdf(1.0 - w, 1.0 - u, theta),
                Rotation::R270 => 1.0 - clayton_ccdf(1.0 - w, u, theta),
            },
        }
    }

    fn ccdf_inv(self, v: f64, u: f64) -> f64 {
        match self {
            Kernel::Independence => v,
            Kernel::Gaussian(rho) => {
                norm_cdf((1.0 - rho * rho).sqrt() * norm_quantile(v) + rho * norm_quantile(u))
            }
            Kernel::Frank(theta) => {
                let c = (-theta).exp_m1();
                let a = (-theta * u).exp();
                let d = (1.0 / v - 1.0) * a + 1.0;
                -(c / d).ln_1p() / theta
            }
            Kernel::Clayton(rot, theta) => match rot {
                Rotation::R0 => clayton_ccdf_inv(v, u, theta),
                Rotation::R90 => clayton_ccdf_inv(v, 1.0 - u, theta),
                Rotation::R180 => 1.0 - clayton_ccdf_inv(1.0 - v, 1.0 - u, theta),
                Rotation::R270 => 1.0 - clayton_ccdf_inv(1.0 - v, u, theta),
            },
        }
    }

    fn density(self, u: f64, v: f64) -> f64 {
        match self {
            Kernel::Independence => 1.0,
            Kernel::Gaussian(rho) => {
                let x = norm_quantile(u);
                let y = norm_quantile(v);
                let r2 = 1.0 - rho * rho;
                (-(rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)).exp() / r2.sqrt()
            }
            Kernel::Frank(theta) => {
                let a = (-theta * u).exp_m1();
                let b = (-theta * v).exp_m1();
                let c = (-theta).exp_m1();
                let den = c + a * b;
                -theta * c * (-theta * (u + v)).exp() / (den * den)
            }
            Kernel::Clayton(rot, theta) => match rot {
                Rotation::R0 => clayton_density(u, v, theta),
                Rotation::R90 => clayton_density(1.0 - u, v, theta),
                Rotation::R180 => clayton_density(1.0 - u, 1.0 - v, theta),
                Rotation::R270 => clayton_density(u, 1.0 - v, theta),
            },
        }
    }
}

/// `ln(u^{-θ} + w^{-θ} - 1)` without overflow.
fn clayton_ln_sum(u: f64, w: f64, theta: f64) -> f64 {
    let a = -theta * u.ln();
    let b = -theta * w.ln();
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
}

fn clayton_ccdf(w: f64, u: f64, theta: f64) -> f64 {
    let ls = clayton_ln_sum(u, w, theta);
    ((-theta - 1.0) * u.ln() + (-1.0 / theta - 1.0) * ls).exp()
}

fn clayton_ccdf_inv(v: f64, u: f64, theta: f64) -> f64 {
    // {(v^{-θ/(1+θ)} - 1) u^{-θ} + 1}^{-1/θ}
    let e = (-theta / (1.0 + theta) * v.ln()).exp_m1();
    let lt = e.ln() - theta * u.ln();
    let ln_t = if lt > 0.0 { lt + (-lt).exp().ln_1p() } else { lt.exp().ln_1p() };
    (-ln_t / theta).exp()
}

fn clayton_density(u: f64, v: f64, theta: f64) -> f64 {
    let ls = clayton_ln_sum(u, v, theta);
    ((1.0 + theta).ln() + (-theta - 1.0) * (u.ln() + v.ln()) + (-2.0 - 1.0 / theta) * ls).exp()
}

fn debye_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_nodes(50))
}

/// `∫₀^θ t / (eᵗ - 1) dt` by composite 50-point Gauss–Legendre on panels of
/// width at most 5.
pub fn debye_integral(theta: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    let (nodes, weights) = debye_rule();
    let panels = (theta.abs() / 5.0).ceil().max(1.0) as usize;
    let width = theta / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = k as f64 * width;
        let half = 0.5 * width;
        let mid = a + half;
        let mut s = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let t = mid + half * x;
            s += w * t / t.exp_m1();
        }
        total += s * half;
    }
    total
}

fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-2 {
        let t2 = theta * theta;
        return theta / 9.0 - theta * t2 / 900.0 + theta * t2 * t2 / 52920.0;
    }
    1.0 - 4.0 / theta + 4.0 / (theta * theta) * debye_integral(theta)
}

/// Positive-tau Frank inversion by Illinois false position on a doubled bracket.
fn frank_theta_positive(tau: f64) -> f64 {
    let mut hi = 1.0;
    while frank_tau(hi) < tau {
        hi *= 2.0;
        if hi > 1e6 {
            return hi;
        }
    }
    let mut lo = 0.0;
    let (mut flo, mut fhi) = (-tau, frank_tau(hi) - tau);
    let mut side = 0i8;
    let mut x = hi;
    for _ in 0..200 {
        x = (lo * fhi - hi * flo) / (fhi - flo);
        let fx = frank_tau(x) - tau;
        if fx == 0.0 || (hi - lo) < 1e-15 * x.abs().max(1e-300) {
            break;
        }
        if fx.signum() == fhi.signum() {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        }
        if fx.abs() < 1e-15 {
            break;
        }
    }
    x
}

/// Natural parameter for a Kendall tau.
pub fn tau_to_theta(family: CopulaFamily, tau: f64) -> Result<f64> {
    let err = || Error::TauRange { family: family.name().to_string(), tau };
    match family.tau_interval() {
        None => {
            if tau == 0.0 {
                Ok(0.0)
            } else {
                Err(err())
            }
        }
        Some((lo, hi)) => {
            if !(tau > lo && tau < hi) || tau == 0.0 {
                return Err(err());
            }
            Ok(match family {
                CopulaFamily::Bvn => (std::f64::consts::FRAC_PI_2 * tau).sin(),
                CopulaFamily::Frank => {
                    if tau > 0.0 {
                        frank_theta_positive(tau)
                    } else {
                        -frank_theta_positive(-tau)
                    }
                }
                _ => 2.0 * tau.abs() / (1.0 - tau.abs()),
            })
        }
    }
}

/// Kendall tau of a family at its natural parameter.
pub fn theta_to_tau(family: CopulaFamily, theta: f64) -> Result<f64> {
    family.check_theta(theta)?;
    Ok(match family {
        CopulaFamily::Independence => 0.0,
        CopulaFamily::Bvn => std::f64::consts::FRAC_2_PI * theta.asin(),
        CopulaFamily::Frank => frank_tau(theta),
        f if f.is_clayton() => {
            let t = theta / (theta + 2.0);
            match f {
                CopulaFamily::Clayton90 | CopulaFamily::Clayton270 => -t,
                _ => t,
            }
        }
        _ => unreachable!(),
    })
}

#[cfg(test)]
fn bvn_density_at(x: f64, y: f64, rho: f64) -> f64 {
    // joint standard bivariate normal density divided by the margins
    let r2 = 1.0 - rho * rho;
    let joint = (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * r2)).exp()
        / (2.0 * std::f64::consts::PI * r2.sqrt());
    joint / (norm_pdf(x) * norm_pdf(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(f: CopulaFamily, theta: f64) -> CopulaSpec {
        CopulaSpec::new(f, theta).unwrap()
    }

    #[test]
    fn independence_examples() {
        let i = CopulaSpec::independence();
        assert_eq!(i.ccdf_inv(0.3, 0.7).unwrap(), 0.3);
        assert_eq!(i.ccdf(0.4, 0.9).unwrap(), 0.4);
        assert_eq!(i.density(0.2, 0.8).unwrap(), 1.0);
    }

    #[test]
    fn bvn_examples() {
        assert_relative_eq!(spec(CopulaFamily::Bvn, 0.0).ccdf_inv(0.3, 0.7).unwrap(), 0.3, epsilon = 1e-15);
        for &t in &[-0.9, -0.3, 0.0, 0.4, 0.95] {
            assert_relative_eq!(spec(CopulaFamily::Bvn, t).ccdf(0.5, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        }
        assert_relative_eq!(spec(CopulaFamily::Bvn, 0.6).density(0.5, 0.5).unwrap(), 1.25, epsilon = 1e-14);
    }

    #[test]
    fn bvn_density_matches_mixed_partial_of_cdf() {
        // c(u,v) = ∂/∂v C(v|u): central difference of the conditional cdf.
        let s = spec(CopulaFamily::Bvn, 0.6);
        let (u, v, h) = (0.5, 0.5, 1e-5);
        let fd = (s.ccdf(v + h, u).unwrap() - s.ccdf(v - h, u).unwrap()) / (2.0 * h);
        assert_relative_eq!(fd, 1.25, max_relative = 1e-8);
        let z = norm_quantile(0.3);
        let w = norm_quantile(0.8);
        assert_relative_eq!(
            s.density(0.3, 0.8).unwrap(),
            bvn_density_at(z, w, 0.6),
            max_relative = 1e-12
        );
    }

    #[test]
    fn clayton_printed_value() {
        let s = spec(CopulaFamily::Clayton0, 2.0);
        let w = s.ccdf_inv(0.5, 0.5).unwrap();
        // independent check: bisection on the conditional cdf
        let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s.ccdf(mid, 0.5).unwrap() < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(w, 0.5 * (lo + hi), epsilon = 1e-12);
        // closed form ((0.5^(-2/3) - 1) * 4 + 1)^(-1/2)
        let closed = ((0.5f64.powf(-2.0 / 3.0) - 1.0) * 4.0 + 1.0).powf(-0.5);
        assert_relative_eq!(w, closed, epsilon = 1e-14);
        assert!((w - 0.5464).abs() < 5e-5, "w = {w}");
        assert_relative_eq!(s.ccdf(w, 0.5).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn frank_tiny_theta_is_independence() {
        let s = spec(CopulaFamily::Frank, 1e-7);
        assert_eq!(s.density(0.1, 0.9).unwrap(), 1.0);
        assert_eq!(s.ccdf_inv(0.3, 0.2).unwrap(), 0.3);
        let s = spec(CopulaFamily::Frank, 2e-5);
        assert_relative_eq!(s.density(0.1, 0.9).unwrap(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn tau_conversions() {
        assert_relative_eq!(tau_to_theta(CopulaFamily::Bvn, 1.0 / 3.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(tau_to_theta(CopulaFamily::Clayton0, 0.5).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(theta_to_tau(CopulaFamily::Bvn, 1.0).unwrap(), 1.0);
        assert_relative_eq!(theta_to_tau(CopulaFamily::Clayton90, 2.0).unwrap(), -0.5);
        let th = tau_to_theta(CopulaFamily::Frank, 0.5).unwrap();
        assert!((th - 5.736).abs() < 1e-3, "{th}");
        assert!((theta_to_tau(CopulaFamily::Frank, 5.736).unwrap() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn tau_range_errors() {
        assert!(tau_to_theta(CopulaFamily::Clayton0, -0.2).is_err());
        assert!(tau_to_theta(CopulaFamily::Clayton90, 0.2).is_err());
        assert!(tau_to_theta(CopulaFamily::Bvn, 1.0).is_err());
        assert!(tau_to_theta(CopulaFamily::Frank, -1.0).is_err());
        assert!(tau_to_theta(CopulaFamily::Frank, 0.0).is_err());
        assert!(theta_to_tau(CopulaFamily::Clayton180, -1.0).is_err());
    }

    #[test]
    fn boundary_inputs_rejected() {
        let s = spec(CopulaFamily::Frank, 3.0);
        assert!(s.ccdf_inv(0.0, 0.5).is_err());
        assert!(s.ccdf_inv(0.5, 1.0).is_err());
        assert!(s.ccdf(1.0, 0.5).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Bvn, 1.5).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Clayton0, 0.0).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Frank, 0.0).is_err());
    }

    #[test]
    fn frank_debye_against_series() {
        // ∫₀^θ t/(eᵗ-1) dt = θ - θ²/4 + θ³/36 - θ⁵/3600 + ... for small θ
        let th = 0.3_f64;
        let series = th - th * th / 4.0 + th.powi(3) / 36.0 - th.powi(5) / 3600.0 + th.powi(7) / 211_680.0
            - th.powi(9) / 10_886_400.0;
        assert_relative_eq!(debye_integral(th), series, max_relative = 1e-12);
        // large-θ limit approaches π²/6
        assert!((debye_integral(60.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn clayton_extreme_arguments_are_finite() {
        let s = spec(CopulaFamily::Clayton0, 38.0);
        for &(v, u) in &[(1e-12, 1e-12), (1.0 - 1e-12, 1e-12), (0.5, 1.0 - 1e-12), (1e-12, 0.999)] {
            let w = s.ccdf_inv(v, u).unwrap();
            assert!(w.is_finite() && (0.0..=1.0).contains(&w), "{v} {u} {w}");
        }
    }
}

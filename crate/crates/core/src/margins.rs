//! Random-effects margins and the binomial within-study model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, Error, Result};
use crate::special::{expit, ln_choose, ln_expit, logit, norm_quantile, BetaDist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginKind {
    /// Normal random effect on the logit scale, dispersion σ.
    #[serde(rename = "normal")]
    NormalLogit,
    /// Beta random effect on the proportion scale, dispersion γ = 1/(α+β+1).
    Beta,
}

impl MarginKind {
    pub fn name(self) -> &'static str {
        match self {
            MarginKind::NormalLogit => "normal",
            MarginKind::Beta => "beta",
        }
    }

    /// Symbol used for the dispersion parameter in reports.
    pub fn disp_symbol(self) -> &'static str {
        match self {
            MarginKind::NormalLogit => "sigma",
            MarginKind::Beta => "gamma",
        }
    }
}

impl fmt::Display for MarginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MarginKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "normallogit" | "logit" => Ok(MarginKind::NormalLogit),
            "beta" => Ok(MarginKind::Beta),
            _ => Err(Error::InvalidInput(format!("unknown margin kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub kind: MarginKind,
    pub pi: f64,
    pub disp: f64,
}

impl MarginSpec {
    pub fn new(kind: MarginKind, pi: f64, disp: f64) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Margin(format!("mean {pi} must lie in (0, 1)")));
        }
        let ok = match kind {
            MarginKind::NormalLogit => disp > 0.0 && disp.is_finite(),
            MarginKind::Beta => disp > 0.0 && disp < 1.0,
        };
        if !ok {
            return Err(Error::Margin(format!("dispersion {disp} invalid for {kind} margin")));
        }
        Ok(Self { kind, pi, disp })
    }

    /// Latent proportion at uniform level `u`.
    pub fn latent_quantile(&self, u: f64) -> Result<f64> {
        check_open_unit("u", u)?;
        let q = PreparedMargin::new(self);
        Ok(q.quantile_pair(u).0)
    }

    pub(crate) fn prepare(&self) -> PreparedMargin {
        PreparedMargin::new(self)
    }
}

/// A margin with its shape constants computed once, for repeated quantiles.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PreparedMargin {
    Normal { mu: f64, sigma: f64 },
    Beta(BetaDist),
}

impl PreparedMargin {
    fn new(m: &MarginSpec) -> Self {
        match m.kind {
            MarginKind::NormalLogit => PreparedMargin::Normal { mu: logit(m.pi), sigma: m.disp },
            MarginKind::Beta => {
                let (a, b) = beta_shapes_unchecked(m.pi, m.disp);
                PreparedMargin::Beta(BetaDist::new(a, b))
            }
        }
    }

    /// `(x, 1 - x)` at level `u`.
    pub(crate) fn quantile_pair(&self, u: f64) -> (f64, f64) {
        match *self {
            PreparedMargin::Normal { mu, sigma } => {
                let z = mu + sigma * norm_quantile(u);
                (expit(z), expit(-z))
            }
            PreparedMargin::Beta(d) => d.quantile_pair(u),
        }
    }

    /// `(ln x, ln(1 - x))` at level `u`.
    #[inline]
    pub(crate) fn log_pair(&self, u: f64) -> (f64, f64) {
        match *self {
            PreparedMargin::Normal { mu, sigma } => {
                let z = mu + sigma * norm_quantile(u);
                (ln_expit(z), ln_expit(-z))
            }
            PreparedMargin::Beta(d) => {
                let (x, cx) = d.quantile_pair(u);
                (x.ln(), cx.ln())
            }
        }
    }
}

/// One study's counts: true positives out of the diseased, true negatives
/// out of the non-diseased, and diseased out of the study size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudyRecord {
    pub y1: u64,
    pub n1: u64,
    pub y2: u64,
    pub n2: u64,
    pub y3: u64,
    pub n3: u64,
}

impl StudyRecord {
    pub fn new(y1: u64, n1: u64, y2: u64, n2: u64, y3: u64, n3: u64) -> Result<Self> {
        let s = Self { y1, n1, y2, n2, y3, n3 };
        s.validate()?;
        Ok(s)
    }

    /// From the 2×2 table counts.
    pub fn from_2x2(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let n1 = tp + fn_;
        let n2 = tn + fp;
        Self { y1: tp, n1, y2: tn, n2, y3: n1, n3: n1 + n2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y1 > self.n1 || self.y2 > self.n2 || self.y3 > self.n3 {
            return Err(Error::Study(format!("count exceeds its denominator in {self:?}")));
        }
        if self.y3 != self.n1 || self.n3 != self.n1 + self.n2 {
            return Err(Error::Study(format!(
                "diseased count must equal n1 and study size n1 + n2 in {self:?}"
            )));
        }
        Ok(())
    }

    /// `(y, n)` for coordinate `j` (0 = sensitivity, 1 = specificity, 2 = prevalence).
    pub fn pair(&self, j: usize) -> (u64, u64) {
        match j {
            0 => (self.y1, self.n1),
            1 => (self.y2, self.n2),
            2 => (self.y3, self.n3),
            _ => panic!("coordinate index {j} out of range"),
        }
    }

    /// 2×2 counts `(tp, fp, fn, tn)`.
    pub fn to_2x2(&self) -> (u64, u64, u64, u64) {
        (self.y1, self.n2 - self.y2, self.n1 - self.y1, self.y2)
    }
}

/// `ln g(y; n, p)` with `0⁰ = 1`.
pub fn binom_log_pmf(y: u64, n: u64, p: f64) -> f64 {
    debug_assert!(y <= n);
    let lc = ln_choose(n, y);
    lc + binom_kernel(y, n, p.ln(), (-p).ln_1p())
}

/// `y ln p + (n - y) ln(1 - p)` with zero-count terms dropped.
#[inline]
pub(crate) fn binom_kernel(y: u64, n: u64, ln_p: f64, ln_q: f64) -> f64 {
    let mut s = 0.0;
    if y > 0 {
        s += y as f64 * ln_p;
    }
    if n > y {
        s += (n - y) as f64 * ln_q;
    }
    s
}

fn beta_shapes_unchecked(pi: f64, gamma: f64) -> (f64, f64) {
    let k = 1.0 / gamma - 1.0;
    (pi * k, (1.0 - pi) * k)
}

/// Shapes `(α, β)` of the Beta(π, γ) law.
pub fn beta_shapes(pi: f64, gamma: f64) -> Result<(f64, f64)> {
    check_open_unit("pi", pi)?;
    check_open_unit("gamma", gamma)?;
    Ok(beta_shapes_unchecked(pi, gamma))
}

/// Inverse of [`beta_shapes`]: `(π, γ)` from `(α, β)`.
pub fn beta_mean_disp(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Margin(format!("beta shapes must be positive, got ({alpha}, {beta})")));
    }
    Ok((alpha / (alpha + beta), 1.0 / (alpha + beta + 1.0)))
}

//! Model structure, parameter vectors and the unconstrained parametrization
//! used by the optimizer.
//!
//! Packed layout: `[logit π₁, logit π₂, logit π₃, d₁, d₂, d₃, z_a, z_b, z_cond]`
//! where `d = ln σ` (normal margins) or `logit γ` (beta margins) and the `z`
//! entries are present only for parametric edges. A tau on the open interval
//! `(lo, hi)` maps to `z = atanh(2 (τ - lo) / (hi - lo) - 1)`, so the midpoint
//! of the interval packs to zero (τ = -0.5 for the 90°/270° Clayton copulas).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaSpec};
use crate::error::{Error, Result};
use crate::margins::{MarginKind, MarginSpec};
use crate::special::{expit, logit};
use crate::vine::{Permutation, VineModelSpec};

/// Which copula families sit on which edges, plus the margin kind.
/// Ordering (derived) is the deterministic tie-break used when ranking models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VineStructure {
    pub perm: Permutation,
    pub margin: MarginKind,
    /// Families for `[edge_a, edge_b, edge_cond]`.
    pub families: [CopulaFamily; 3],
}

impl VineStructure {
    pub fn new(perm: Permutation, margin: MarginKind, families: [CopulaFamily; 3]) -> Self {
        Self { perm, margin, families }
    }

    /// Same family on the two level-1 edges and, unless truncated, on the
    /// conditional edge.
    pub fn uniform(perm: Permutation, margin: MarginKind, family: CopulaFamily, truncate: bool) -> Self {
        let cond = if truncate { CopulaFamily::Independence } else { family };
        Self { perm, margin, families: [family, family, cond] }
    }

    /// The trivariate GLMM: BVN blocks with normal margins, all three edges.
    pub fn glmm(perm: Permutation) -> Self {
        Self::uniform(perm, MarginKind::NormalLogit, CopulaFamily::Bvn, false)
    }

    pub fn is_truncated(&self) -> bool {
        self.families[2] == CopulaFamily::Independence
    }

    pub fn n_taus(&self) -> usize {
        self.families.iter().filter(|f| f.is_parametric()).count()
    }

    pub fn n_params(&self) -> usize {
        6 + self.n_taus()
    }

    pub fn label(&self) -> String {
        format!(
            "{} margins, [{}, {}, {}], {}",
            self.margin,
            self.families[0],
            self.families[1],
            self.families[2],
            self.perm
        )
    }

    /// Natural-scale parameter names in packed order, e.g. `pi1`, `gamma3`, `tau_23|1`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=3).map(|j| format!("pi{j}")).collect();
        names.extend((1..=3).map(|j| format!("{}{j}", self.margin.disp_symbol())));
        let labels = self.perm.edge_labels();
        for (f, l) in self.families.iter().zip(labels) {
            if f.is_parametric() {
                names.push(format!("tau_{l}"));
            }
        }
        names
    }

    pub fn instantiate(&self, p: &ParamVector) -> Result<VineModelSpec> {
        p.check_against(self)?;
        let mut edges = [CopulaSpec::independence(); 3];
        for (k, fam) in self.families.iter().enumerate() {
            if fam.is_parametric() {
                edges[k] = CopulaSpec::from_tau(*fam, p.tau[k].unwrap_or(0.0))?;
            }
        }
        let m = |j: usize| MarginSpec::new(self.margin, p.pi[j], p.disp[j]);
        Ok(VineModelSpec {
            perm: self.perm,
            edge_a: edges[0],
            edge_b: edges[1],
            edge_cond: edges[2],
            margins: [m(0)?, m(1)?, m(2)?],
        })
    }
}

impl fmt::Display for VineStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Meta-analytic means, dispersions and Kendall taus (one slot per edge,
/// `None` for independence edges).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub pi: [f64; 3],
    pub disp: [f64; 3],
    pub tau: [Option<f64>; 3],
}

impl ParamVector {
    /// Natural-scale values in packed order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pi.to_vec();
        v.extend_from_slice(&self.disp);
        v.extend(self.tau.iter().flatten());
        v
    }

    fn check_against(&self, s: &VineStructure) -> Result<()> {
        for (k, fam) in s.families.iter().enumerate() {
            match (fam.tau_interval(), self.tau[k]) {
                (None, None) => {}
                (None, Some(_)) => {
                    return Err(Error::InvalidInput(format!(
                        "edge {k} is an independence edge but carries a tau"
                    )))
                }
                (Some(_), None) => {
                    return Err(Error::InvalidInput(format!("edge {k} ({fam}) is missing its tau")))
                }
                (Some((lo, hi)), Some(t)) => {
                    let ok = t > lo && t < hi;
                    if !ok {
                        return Err(Error::TauRange { family: fam.name().to_string(), tau: t });
                    }
                }
            }
        }
        Ok(())
    }
}

fn pack_disp(kind: MarginKind, d: f64) -> Result<f64> {
    match kind {
        MarginKind::NormalLogit if d > 0.0 => Ok(d.ln()),
        MarginKind::Beta if d > 0.0 && d < 1.0 => Ok(logit(d)),
        _ => Err(Error::Margin(format!("dispersion {d} invalid for {kind} margin"))),
    }
}

fn unpack_disp(kind: MarginKind, z: f64) -> f64 {
    match kind {
        MarginKind::NormalLogit => z.exp(),
        MarginKind::Beta => expit(z),
    }
}

fn pack_tau(fam: CopulaFamily, tau: f64) -> Result<f64> {
    let (lo, hi) = fam
        .tau_interval()
        .ok_or_else(|| Error::InvalidInput("independence edge has no tau".into()))?;
    if !(tau > lo && tau < hi) {
        return Err(Error::TauRange { family: fam.name().to_string(), tau });
    }
    Ok((2.0 * (tau - lo) / (hi - lo) - 1.0).atanh())
}

fn unpack_tau(fam: CopulaFamily, z: f64) -> f64 {
    let (lo, hi) = fam.tau_interval().expect("parametric edge");
    lo + 0.5 * (hi - lo) * (1.0 + z.tanh())
}

/// Natural parameters to the unconstrained vector.
pub fn pack(p: &ParamVector, s: &VineStructure) -> Result<Vec<f64>> {
    p.check_against(s)?;
    let mut z = Vec::with_capacity(s.n_params());
    for &pi in &p.pi {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Margin(format!("mean {pi} must lie in (0, 1)")));
        }
        z.push(logit(pi));
    }
    for &d in &p.disp {
        z.push(pack_disp(s.margin, d)?);
    }
    for (k, fam) in s.families.iter().enumerate() {
        if let Some(t) = p.tau[k] {
            z.push(pack_tau(*fam, t)?);
        }
    }
    Ok(z)
}

/// Inverse of [`pack`].
pub fn unpack(z: &[f64], s: &VineStructure) -> Result<ParamVector> {
    if z.len() != s.n_params() {
        return Err(Error::InvalidInput(format!(
            "packed vector has length {}, structure needs {}",
            z.len(),
            s.n_params()
        )));
    }
    let pi = [expit(z[0]), expit(z[1]), expit(z[2])];
    let disp = [
        unpack_disp(s.margin, z[3]),
        unpack_disp(s.margin, z[4]),
        unpack_disp(s.margin, z[5]),
    ];
    let mut tau = [None; 3];
    let mut next = 6;
    for (k, fam) in s.families.iter().enumerate() {
        if fam.is_parametric() {
            tau[k] = Some(unpack_tau(*fam, z[next]));
            next += 1;
        }
    }
    Ok(ParamVector { pi, disp, tau })
}

/// Derivatives of each natural parameter with respect to its packed
/// coordinate (the map is diagonal), for delta-method standard errors.
pub fn unpack_jacobian_diag(z: &[f64], s: &VineStructure) -> Vec<f64> {
    let mut d = Vec::with_capacity(z.len());
    for &zi in &z[..3] {
        let p = expit(zi);
        d.push(p * (1.0 - p));
    }
    for &zi in &z[3..6] {
        d.push(match s.margin {
            MarginKind::NormalLogit => zi.exp(),
            MarginKind::Beta => {
                let g = expit(zi);
                g * (1.0 - g)
            }
        });
    }
    let mut next = 6;
    for fam in &s.families {
        if let Some((lo, hi)) = fam.tau_interval() {
            let t = z[next].tanh();
            d.push(0.5 * (hi - lo) * (1.0 - t * t));
            next += 1;
        }
    }
    d
}

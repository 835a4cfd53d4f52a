//! Maximum likelihood fitting, model comparison and the model-space sweep.

use std::fmt;
use std::str::FromStr;

use nalgebra::Cholesky;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::error::{Error, Result};
use crate::likelihood::{sorted_sum, LikelihoodEvaluator};
use crate::margins::{MarginKind, StudyRecord};
use crate::optim::{minimize, numeric_hessian, BfgsOptions};
use crate::params::{pack, unpack, unpack_jacobian_diag, ParamVector, VineStructure};
use crate::quadrature::{gauss_legendre_01, DEFAULT_NQ};
use crate::special::{expit, logit, SQRT_2};
use crate::vine::Permutation;

/// |τ̂| above this fraction of the unit bound is flagged as a boundary estimate.
pub const BOUNDARY_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub nq: usize,
    /// Gradient max-norm tolerance in packed coordinates.
    pub tol: f64,
    /// Relative change in the negative log-likelihood.
    pub ftol: f64,
    pub max_iter: usize,
    /// Explicit starting points; when empty, moment-based starts are used.
    #[serde(default)]
    pub starts: Vec<ParamVector>,
    /// Maximum number of moment-based starts.
    pub n_starts: usize,
    /// Skip the Hessian and standard errors.
    #[serde(default)]
    pub skip_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            nq: DEFAULT_NQ,
            tol: 1e-5,
            ftol: 1e-8,
            max_iter: 500,
            starts: Vec::new(),
            n_starts: 3,
            skip_se: false,
        }
    }
}

/// Standard errors on the natural scale; `None` where unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSe {
    pub pi: [Option<f64>; 3],
    pub disp: [Option<f64>; 3],
    pub tau: [Option<f64>; 3],
}

impl ParamSe {
    fn unavailable() -> Self {
        Self { pi: [None; 3], disp: [None; 3], tau: [None; 3] }
    }

    pub fn is_available(&self) -> bool {
        self.pi.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub structure: VineStructure,
    pub estimates: ParamVector,
    pub se: ParamSe,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub boundary_flags: [bool; 3],
    pub iterations: usize,
    /// Per-study log-likelihood contributions at the estimates.
    pub study_loglik: Vec<f64>,
    pub gradient_max: f64,
    pub message: String,
}

impl FitResult {
    pub fn any_boundary(&self) -> bool {
        self.boundary_flags.iter().any(|&b| b)
    }
}

/// `-2 loglik + 2 k`.
pub fn aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

/// Univariate moment estimates for the margins, then one start per tau
/// candidate. Candidates are {-0.5, 0, 0.5}, with 0 replaced by ±0.2 and
/// wrong-sign values dropped for the sign-restricted Clayton rotations.
pub fn default_starts(data: &[StudyRecord], s: &VineStructure, max_starts: usize) -> Vec<ParamVector> {
    let mut pi = [0.5; 3];
    let mut disp = [0.5; 3];
    for j in 0..3 {
        let rows: Vec<(f64, f64)> = data
            .iter()
            .map(|r| r.pair(j))
            .map(|(y, n)| ((y as f64 + 0.5) / (n as f64 + 1.0), n as f64 + 1.0))
            .collect();
        let props: Vec<f64> = rows.iter().map(|r| r.0).collect();
        match s.margin {
            MarginKind::NormalLogit => {
                let lg: Vec<f64> = props.iter().map(|&p| logit(p)).collect();
                let (m, v) = mean_var(&lg);
                let noise = rows.iter().map(|&(p, n)| 1.0 / (n * p * (1.0 - p))).sum::<f64>() / rows.len() as f64;
                pi[j] = expit(m).clamp(0.02, 0.98);
                disp[j] = (v - noise).max(0.01).sqrt().clamp(0.1, 3.0);
            }
            MarginKind::Beta => {
                let (m, v) = mean_var(&props);
                let noise = rows.iter().map(|&(p, n)| p * (1.0 - p) / n).sum::<f64>() / rows.len() as f64;
                let m = m.clamp(0.02, 0.98);
                pi[j] = m;
                disp[j] = ((v - noise) / (m * (1.0 - m))).clamp(0.01, 0.5);
            }
        }
    }
    let candidates = |fam: CopulaFamily| -> Vec<f64> {
        match fam.tau_interval() {
            None => vec![],
            Some((lo, hi)) => {
                let zero = if lo >= 0.0 {
                    0.2
                } else if hi <= 0.0 {
                    -0.2
                } else {
                    0.0
                };
                let mut c: Vec<f64> =
                    [-0.5, zero, 0.5].into_iter().filter(|t| *t > lo && *t < hi).collect();
                c.dedup();
                c
            }
        }
    };
    let lists: Vec<Vec<f64>> = s.families.iter().map(|f| candidates(*f)).collect();
    let n = lists.iter().map(Vec::len).max().unwrap_or(0).max(1).min(max_starts.max(1));
    (0..n)
        .map(|k| {
            let mut tau = [None; 3];
            for (e, l) in lists.iter().enumerate() {
                if !l.is_empty() {
                    tau[e] = Some(l[k % l.len()]);
                }
            }
            ParamVector { pi, disp, tau }
        })
        .collect()
}

/// Fits a structure to data by quasi-Newton maximum likelihood.
pub fn fit(data: &[StudyRecord], s: &VineStructure, options: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot fit an empty dataset".into()));
    }
    let grid = gauss_legendre_01(options.nq)?;
    let mut ev = LikelihoodEvaluator::new(data, &grid)?;
    let starts = if options.starts.is_empty() {
        default_starts(data, s, options.n_starts)
    } else {
        options.starts.clone()
    };
    let bfgs = BfgsOptions { gtol: options.tol, ftol: options.ftol, max_iter: options.max_iter, ..Default::default() };

    let mut objective = |z: &[f64]| -> f64 {
        let Ok(p) = unpack(z, s) else { return f64::INFINITY };
        let Ok(spec) = s.instantiate(&p) else { return f64::INFINITY };
        let v = ev.nll(&spec);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best: Option<crate::optim::BfgsOutcome> = None;
    let mut start_errors = Vec::new();
    for start in &starts {
        let z0 = match pack(start, s) {
            Ok(z) => z,
            Err(e) => {
                start_errors.push(e.to_string());
                continue;
            }
        };
        let out = minimize(&mut objective, &z0, &bfgs);
        if !out.fx.is_finite() {
            start_errors.push(out.message.clone());
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => out.fx < b.fx,
        };
        if better {
            best = Some(out);
        }
    }
    let Some(best) = best else {
        return Err(Error::Numerical(format!(
            "no start produced a finite likelihood: {}",
            start_errors.join("; ")
        )));
    };

    let se = if options.skip_se {
        ParamSe::unavailable()
    } else {
        let hess = numeric_hessian(&mut objective, &best.x);
        standard_errors(&hess, &best.x, s)
    };

    let estimates = unpack(&best.x, s)?;
    let spec = s.instantiate(&estimates)?;
    let study_loglik = ev.study_log_liks(&spec);
    let loglik = sorted_sum(&study_loglik);

    let mut boundary_flags = [false; 3];
    for (k, t) in estimates.tau.iter().enumerate() {
        if let Some(t) = t {
            boundary_flags[k] = t.abs() > BOUNDARY_FRACTION;
        }
    }
    let gradient_max = best.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let n_params = s.n_params();
    Ok(FitResult {
        structure: *s,
        estimates,
        se,
        loglik,
        aic: aic(loglik, n_params),
        n_params,
        converged: best.converged,
        boundary_flags,
        iterations: best.iterations,
        study_loglik,
        gradient_max,
        message: best.message,
    })
}

fn standard_errors(hess: &nalgebra::DMatrix<f64>, z: &[f64], s: &VineStructure) -> ParamSe {
    if hess.iter().any(|v| !v.is_finite()) {
        return ParamSe::unavailable();
    }
    let Some(chol) = Cholesky::new(hess.clone()) else {
        return ParamSe::unavailable();
    };
    let cov = chol.inverse();
    let jac = unpack_jacobian_diag(z, s);
    let se: Vec<f64> = (0..z.len()).map(|i| jac[i].abs() * cov[(i, i)].max(0.0).sqrt()).collect();
    let mut out = ParamSe::unavailable();
    for j in 0..3 {
        out.pi[j] = Some(se[j]);
        out.disp[j] = Some(se[3 + j]);
    }
    let mut next = 6;
    for (k, f) in s.families.iter().enumerate() {
        if f.is_parametric() {
            out.tau[k] = Some(se[next]);
            next += 1;
        }
    }
    out
}

/// Vuong's non-nested test of model 2 against model 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VuongResult {
    pub n: usize,
    /// Mean per-study log-likelihood difference (model 2 − model 1),
    /// penalized when the adjusted version was requested.
    pub d_bar: f64,
    pub s: f64,
    pub adjusted: bool,
    /// `None` when the differences have zero spread.
    pub z0: Option<f64>,
    pub p_value: Option<f64>,
}

/// Two-sided standard normal tail probability.
pub fn two_sided_p(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / SQRT_2)
}

/// Vuong statistic from per-study log-likelihoods and parameter counts.
pub fn vuong(ll1: &[f64], k1: usize, ll2: &[f64], k2: usize, adjusted: bool) -> Result<VuongResult> {
    if ll1.len() != ll2.len() {
        return Err(Error::InvalidInput(format!(
            "Vuong test needs the same studies: {} vs {}",
            ll1.len(),
            ll2.len()
        )));
    }
    let n = ll1.len();
    if n < 2 {
        return Err(Error::InvalidInput("Vuong test needs at least two studies".into()));
    }
    let d: Vec<f64> = ll2.iter().zip(ll1).map(|(b, a)| b - a).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let s = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let d_bar = if adjusted { mean - (k2 as f64 - k1 as f64) / nf } else { mean };
    let z0 = if s > 0.0 && s.is_finite() { Some(nf.sqrt() * d_bar / s) } else { None };
    Ok(VuongResult { n, d_bar, s, adjusted, z0, p_value: z0.map(two_sided_p) })
}

/// Vuong test between two fits on the same data (model 2 against model 1).
pub fn vuong_fits(model1: &FitResult, model2: &FitResult, adjusted: bool) -> Result<VuongResult> {
    vuong(&model1.study_loglik, model1.n_params, &model2.study_loglik, model2.n_params, adjusted)
}

/// A family choice for the sweep: one family on every fitted edge, or a
/// Clayton rotation pair where each edge takes the negative-dependence
/// rotation or the positive one, whichever fits best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FamilyChoice {
    Single(CopulaFamily),
    ClaytonPair { negative: CopulaFamily, positive: CopulaFamily },
}

impl FamilyChoice {
    pub fn label(&self) -> String {
        match self {
            FamilyChoice::Single(f) => f.name().to_string(),
            FamilyChoice::ClaytonPair { negative, positive } => {
                let deg = |f: &CopulaFamily| f.name().trim_start_matches("clayton").to_string();
                format!("clayton{}/{}", deg(negative), deg(positive))
            }
        }
    }

    /// Candidate structures for one permutation and margin.
    pub fn structures(&self, perm: Permutation, margin: MarginKind, truncate: bool) -> Vec<VineStructure> {
        match *self {
            FamilyChoice::Single(f) => vec![VineStructure::uniform(perm, margin, f, truncate)],
            FamilyChoice::ClaytonPair { negative, positive } => {
                let edges = if truncate { 2 } else { 3 };
                (0..1usize << edges)
                    .map(|mask| {
                        let pick = |e: usize| if mask >> e & 1 == 1 { positive } else { negative };
                        let cond = if truncate { CopulaFamily::Independence } else { pick(2) };
                        VineStructure::new(perm, margin, [pick(0), pick(1), cond])
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for FamilyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for FamilyChoice {
    type Err = Error;

    /// `bvn`, `frank`, `clayton90`, ... or a rotation pair such as `clayton90/0`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if let Some((a, b)) = t.split_once('/') {
            let fam = |x: &str| -> Result<CopulaFamily> {
                let x = x.trim_start_matches("clayton");
                format!("clayton{x}").parse()
            };
            let (a, b) = (fam(a)?, fam(b)?);
            let neg = |f: CopulaFamily| matches!(f, CopulaFamily::Clayton90 | CopulaFamily::Clayton270);
            let pos = |f: CopulaFamily| matches!(f, CopulaFamily::Clayton0 | CopulaFamily::Clayton180);
            return match (neg(a), pos(b), neg(b), pos(a)) {
                (true, true, _, _) => Ok(FamilyChoice::ClaytonPair { negative: a, positive: b }),
                (_, _, true, true) => Ok(FamilyChoice::ClaytonPair { negative: b, positive: a }),
                _ => Err(Error::InvalidInput(format!(
                    "rotation pair '{s}' needs one of 90/270 and one of 0/180"
                ))),
            };
        }
        Ok(FamilyChoice::Single(t.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub choice: FamilyChoice,
    pub structure: VineStructure,
    pub fit: std::result::Result<FitResult, String>,
}

impl SweepEntry {
    fn rank_key(&self) -> (u8, f64, usize) {
        match &self.fit {
            Ok(f) if f.aic.is_finite() => (0, f.aic, f.n_params),
            _ => (1, 0.0, 0),
        }
    }
}

/// Fits one family choice; rotation pairs keep the best-likelihood pattern.
fn fit_choice(
    data: &[StudyRecord],
    choice: FamilyChoice,
    perm: Permutation,
    margin: MarginKind,
    truncate: bool,
    options: &FitOptions,
) -> SweepEntry {
    let candidates = choice.structures(perm, margin, truncate);
    let mut best: Option<SweepEntry> = None;
    for s in candidates {
        let entry = SweepEntry { choice, structure: s, fit: fit(data, &s, options).map_err(|e| e.to_string()) };
        let replace = match (&best, &entry.fit) {
            (None, _) => true,
            (Some(b), Ok(f)) => match &b.fit {
                Ok(bf) => f.loglik > bf.loglik,
                Err(_) => true,
            },
            (Some(_), Err(_)) => false,
        };
        if replace {
            best = Some(entry);
        }
    }
    best.expect("at least one candidate structure")
}

/// Fits every combination of family choice, margin and permutation and
/// ranks by AIC (ascending), then fewer parameters, then structure order.
/// Failed fits are kept, with their error message, at the end.
pub fn sweep(
    data: &[StudyRecord],
    families: &[FamilyChoice],
    margins: &[MarginKind],
    permutations: &[Permutation],
    truncate: bool,
    options: &FitOptions,
) -> Result<Vec<SweepEntry>> {
    if families.is_empty() || margins.is_empty() || permutations.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one family, margin and permutation".into()));
    }
    let mut jobs = Vec::new();
    for &perm in permutations {
        for &margin in margins {
            for &choice in families {
                jobs.push((choice, perm, margin));
            }
        }
    }
    let mut entries: Vec<SweepEntry> = jobs
        .par_iter()
        .map(|&(choice, perm, margin)| fit_choice(data, choice, perm, margin, truncate, options))
        .collect();
    entries.sort_by(|a, b| {
        let (ka, kb) = (a.rank_key(), b.rank_key());
        ka.0.cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
            .then(a.structure.cmp(&b.structure))
            .then(a.choice.cmp(&b.choice))
    });
    Ok(entries)
}

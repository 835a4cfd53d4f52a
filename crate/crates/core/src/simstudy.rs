//! Simulation of meta-analytic datasets from a known vine model and the
//! replicate harness reporting bias, SD, RMSE and average theoretical SD.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::error::{Error, Result};
use crate::inference::{fit, FitOptions, FitResult};
use crate::margins::{MarginKind, StudyRecord};
use crate::params::{ParamVector, VineStructure};
use crate::rng::StreamRng;
use crate::vine::{simulate_vine_with, Permutation};

/// Study sizes `lag + Gamma(shape, rate)`, rounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeDist {
    pub shape: f64,
    pub rate: f64,
    pub lag: f64,
}

impl Default for SizeDist {
    fn default() -> Self {
        Self { shape: 1.2, rate: 0.01, lag: 30.0 }
    }
}

impl SizeDist {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0 && self.lag >= 0.0 && self.lag.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "study size distribution needs shape > 0, rate > 0, lag >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.lag + self.shape / self.rate
    }
}

/// One study size. `f64::round` rounds half away from zero.
pub fn draw_study_size(rng: &mut StreamRng, size: &SizeDist) -> u64 {
    (size.lag + rng.gamma(size.shape, size.rate)).round() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n_studies: usize,
    pub true_structure: VineStructure,
    pub true_params: ParamVector,
    pub replications: usize,
    pub fit_structures: Vec<VineStructure>,
    pub seed: u64,
    pub size_dist: SizeDist,
    pub fit_options: FitOptions,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if self.n_studies == 0 {
            return Err(Error::InvalidInput("n_studies must be at least 1".into()));
        }
        if self.fit_structures.is_empty() {
            return Err(Error::InvalidInput("at least one fit structure is required".into()));
        }
        self.size_dist.validate()?;
        self.true_structure.instantiate(&self.true_params)?;
        Ok(())
    }

    /// Parses a scenario file (TOML). See [`ScenarioFile`] for the layout.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("scenario: {e}")))?;
        file.into_scenario()
    }
}

/// A model structure as written in a scenario file. `perm` is the root
/// variable (1, 2 or 3) or a label like `{12,13,23|1}`; `families` lists the
/// edge families `[a, b, cond]`, or two entries for a truncated vine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureEntry {
    pub margin: MarginKind,
    pub perm: String,
    pub families: Vec<CopulaFamily>,
}

impl StructureEntry {
    pub fn to_structure(&self) -> Result<VineStructure> {
        let perm: Permutation = self.perm.parse()?;
        let fam = match self.families.as_slice() {
            [a, b] => [*a, *b, CopulaFamily::Independence],
            [a, b, c] => [*a, *b, *c],
            _ => {
                return Err(Error::InvalidInput(format!(
                    "families needs 2 or 3 entries, got {}",
                    self.families.len()
                )))
            }
        };
        Ok(VineStructure::new(perm, self.margin, fam))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    pub margin: MarginKind,
    pub perm: String,
    pub families: Vec<CopulaFamily>,
    pub pi: [f64; 3],
    pub disp: [f64; 3],
    /// Taus of the parametric edges, in edge order.
    pub tau: Vec<f64>,
}

fn default_nq() -> usize {
    crate::quadrature::DEFAULT_NQ
}

fn default_starts() -> usize {
    3
}

/// Scenario file layout.
///
/// ```toml
/// n_studies = 20
/// replications = 500
/// seed = 7
///
/// [size_dist]
/// shape = 1.2
/// rate = 0.01
/// lag = 30
///
/// [truth]
/// margin = "beta"
/// perm = "1"
/// families = ["clayton90", "clayton90"]
/// pi = [0.8, 0.7, 0.4]
/// disp = [0.1, 0.1, 0.05]
/// tau = [-0.5, -0.3]
///
/// [[fit]]
/// margin = "beta"
/// perm = "1"
/// families = ["clayton90", "clayton90"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub n_studies: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub size_dist: SizeDist,
    pub truth: TruthEntry,
    /// Defaults to the true structure.
    #[serde(default)]
    pub fit: Vec<StructureEntry>,
    #[serde(default = "default_nq")]
    pub nq: usize,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<SimScenario> {
        let t = &self.truth;
        let true_structure =
            StructureEntry { margin: t.margin, perm: t.perm.clone(), families: t.families.clone() }.to_structure()?;
        let mut tau = [None; 3];
        let mut given = self.truth.tau.iter();
        for (k, f) in true_structure.families.iter().enumerate() {
            if f.is_parametric() {
                tau[k] = Some(*given.next().ok_or_else(|| {
                    Error::InvalidInput("truth.tau has fewer entries than parametric edges".into())
                })?);
            }
        }
        if given.next().is_some() {
            return Err(Error::InvalidInput("truth.tau has more entries than parametric edges".into()));
        }
        let fit_structures = if self.fit.is_empty() {
            vec![true_structure]
        } else {
            self.fit.iter().map(StructureEntry::to_structure).collect::<Result<_>>()?
        };
        let fit_options = FitOptions { nq: self.nq, n_starts: self.n_starts, ..FitOptions::default() };
        let sc = SimScenario {
            n_studies: self.n_studies,
            true_structure,
            true_params: ParamVector { pi: self.truth.pi, disp: self.truth.disp, tau },
            replications: self.replications,
            fit_structures,
            seed: self.seed,
            size_dist: self.size_dist,
            fit_options,
        };
        sc.validate()?;
        Ok(sc)
    }
}

/// Round half away from zero to a count.
fn round_count(x: f64) -> u64 {
    x.round() as u64
}

/// One simulated dataset; replicate `r` reads random stream `r` of the seed.
pub fn generate_dataset(scenario: &SimScenario, replicate: usize) -> Result<Vec<StudyRecord>> {
    let spec = scenario.true_structure.instantiate(&scenario.true_params)?;
    scenario.size_dist.validate()?;
    let margins = spec.margins.map(|m| m.prepare());
    let mut rng = StreamRng::new(scenario.seed, replicate as u64);
    let mut out = Vec::with_capacity(scenario.n_studies);
    for _ in 0..scenario.n_studies {
        let n = draw_study_size(&mut rng, &scenario.size_dist);
        let u = simulate_vine_with(1, &spec, &mut rng)[0];
        let x: Vec<f64> = (0..3).map(|j| margins[j].quantile_pair(u[j]).0).collect();
        out.push(split_study(n, x[0], x[1], x[2]));
    }
    Ok(out)
}

/// Counts for a study of size `n` with latent sensitivity `x1`, specificity
/// `x2` and prevalence `x3`.
pub fn split_study(n: u64, x1: f64, x2: f64, x3: f64) -> StudyRecord {
    let n1 = round_count(n as f64 * x3).min(n);
    let n2 = n - n1;
    let y1 = round_count(n1 as f64 * x1).min(n1);
    let y2 = round_count(n2 as f64 * x2).min(n2);
    StudyRecord { y1, n1, y2, n2, y3: n1, n3: n }
}

/// Summary of one parameter over the usable replicates, on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub name: String,
    /// `None` when the true model has no matching parameter.
    pub truth: Option<f64>,
    pub mean: f64,
    pub bias: Option<f64>,
    /// Spread around the replicate mean (divisor B); unavailable for B = 1.
    pub sd: Option<f64>,
    pub rmse: Option<f64>,
    /// Square root of the average delta-method variance.
    pub sqrt_mean_var: Option<f64>,
}

impl SimCell {
    /// Table values: every metric multiplied by 100.
    pub fn scaled(&self) -> SimCell {
        let s = |v: Option<f64>| v.map(|x| x * 100.0);
        SimCell {
            name: self.name.clone(),
            truth: self.truth,
            mean: self.mean,
            bias: s(self.bias),
            sd: s(self.sd),
            rmse: s(self.rmse),
            sqrt_mean_var: s(self.sqrt_mean_var),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFitSummary {
    pub structure: VineStructure,
    /// Replicates that converged and enter the metrics.
    pub used: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub cells: Vec<SimCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_studies: usize,
    pub replications: usize,
    pub seed: u64,
    pub fits: Vec<SimFitSummary>,
}

/// Natural-scale values of a parameter vector in the packed order of `s`,
/// plus the matching standard errors.
fn estimates_and_se(f: &FitResult) -> (Vec<f64>, Vec<Option<f64>>) {
    let mut se = f.se.pi.to_vec();
    se.extend_from_slice(&f.se.disp);
    for (k, fam) in f.structure.families.iter().enumerate() {
        if fam.is_parametric() {
            se.push(f.se.tau[k]);
        }
    }
    (f.estimates.to_vec(), se)
}

/// True values aligned with the parameters of a fitted structure. Margin
/// parameters match when the margin kind matches; taus match by edge label.
fn aligned_truth(scenario: &SimScenario, s: &VineStructure) -> Vec<Option<f64>> {
    let t = &scenario.true_structure;
    let p = &scenario.true_params;
    let same_margin = t.margin == s.margin;
    let mut out: Vec<Option<f64>> = p.pi.iter().map(|v| Some(*v)).collect();
    out.extend(p.disp.iter().map(|v| same_margin.then_some(*v)));
    let true_labels = t.perm.edge_labels();
    let fit_labels = s.perm.edge_labels();
    for (k, fam) in s.families.iter().enumerate() {
        if !fam.is_parametric() {
            continue;
        }
        let truth = true_labels
            .iter()
            .position(|l| *l == fit_labels[k])
            .map(|i| p.tau[i].unwrap_or(0.0));
        out.push(truth);
    }
    out
}

fn summarize(
    names: &[String],
    truth: &[Option<f64>],
    rows: &[(Vec<f64>, Vec<Option<f64>>)],
) -> Vec<SimCell> {
    let b = rows.len() as f64;
    (0..names.len())
        .map(|i| {
            let vals: Vec<f64> = rows.iter().map(|r| r.0[i]).collect();
            let mean = vals.iter().sum::<f64>() / b;
            let sd = (rows.len() > 1).then(|| (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b).sqrt());
            let bias = truth[i].map(|t| mean - t);
            let rmse = truth[i].map(|t| (vals.iter().map(|v| (v - t).powi(2)).sum::<f64>() / b).sqrt());
            let vars: Vec<f64> = rows.iter().filter_map(|r| r.1[i]).map(|s| s * s).collect();
            let sqrt_mean_var = (vars.len() == rows.len() && !vars.is_empty())
                .then(|| (vars.iter().sum::<f64>() / vars.len() as f64).sqrt());
            SimCell { name: names[i].clone(), truth: truth[i], mean, bias, sd, rmse, sqrt_mean_var }
        })
        .collect()
}

/// Runs every replicate, fits every structure and summarizes the converged
/// fits. Replicates are independent and merged in index order, so the report
/// does not depend on thread scheduling.
pub fn run_study(scenario: &SimScenario) -> Result<SimReport> {
    scenario.validate()?;
    let outcomes: Vec<Vec<std::result::Result<FitResult, String>>> = (0..scenario.replications)
        .into_par_iter()
        .map(|r| match generate_dataset(scenario, r) {
            Ok(data) => scenario
                .fit_structures
                .iter()
                .map(|s| fit(&data, s, &scenario.fit_options).map_err(|e| e.to_string()))
                .collect(),
            Err(e) => vec![Err(e.to_string()); scenario.fit_structures.len()],
        })
        .collect();

    let mut fits = Vec::new();
    for (k, s) in scenario.fit_structures.iter().enumerate() {
        let mut rows = Vec::new();
        let (mut not_converged, mut failed) = (0, 0);
        for rep in &outcomes {
            match &rep[k] {
                Ok(f) if f.converged => rows.push(estimates_and_se(f)),
                Ok(_) => not_converged += 1,
                Err(_) => failed += 1,
            }
        }
        if rows.is_empty() {
            return Err(Error::Numerical(format!(
                "no replicate converged for {s} ({not_converged} not converged, {failed} failed)"
            )));
        }
        let truth = aligned_truth(scenario, s);
        fits.push(SimFitSummary {
            structure: *s,
            used: rows.len(),
            not_converged,
            failed,
            cells: summarize(&s.param_names(), &truth, &rows),
        });
    }
    Ok(SimReport {
        n_studies: scenario.n_studies,
        replications: scenario.replications,
        seed: scenario.seed,
        fits,
    })
}

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use trivine::inference::{two_sided_p, FitOptions};
use trivine::io::{format_report, format_sim_report, simulate, Baseline, RunConfig};
use trivine::{CopulaFamily, FamilyChoice, MarginKind, Permutation, StudyRecord, VineStructure};

fn err(e: trivine::Error) -> PyErr {
    match e {
        trivine::Error::Numerical(_) | trivine::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = trivine::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn records(tables: Vec<(u64, u64, u64, u64)>) -> Vec<StudyRecord> {
    tables.into_iter().map(|(tp, fp, fn_, tn)| StudyRecord::from_2x2(tp, fp, fn_, tn)).collect()
}

/// Bivariate copula with a Kendall tau or natural parameter.
#[pyclass(name = "Copula", frozen)]
struct PyCopula {
    inner: trivine::CopulaSpec,
}

#[pymethods]
impl PyCopula {
    #[new]
    fn new(family: &str, theta: f64) -> PyResult<Self> {
        let family: CopulaFamily = parse(family)?;
        Ok(Self { inner: trivine::CopulaSpec::new(family, theta).map_err(err)? })
    }

    #[staticmethod]
    fn from_tau(family: &str, tau: f64) -> PyResult<Self> {
        let family: CopulaFamily = parse(family)?;
        Ok(Self { inner: trivine::CopulaSpec::from_tau(family, tau).map_err(err)? })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    /// Conditional cdf of the second argument given the first.
    fn ccdf(&self, w: f64, u: f64) -> PyResult<f64> {
        self.inner.ccdf(w, u).map_err(err)
    }

    fn ccdf_inv(&self, v: f64, u: f64) -> PyResult<f64> {
        self.inner.ccdf_inv(v, u).map_err(err)
    }

    fn density(&self, u: f64, v: f64) -> PyResult<f64> {
        self.inner.density(u, v).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Copula('{}', theta={})", self.inner.family.name(), self.inner.theta)
    }
}

#[pyclass(name = "FitResult", frozen)]
struct PyFitResult {
    inner: trivine::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn loglik(&self) -> f64 {
        self.inner.loglik
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn structure(&self) -> String {
        self.inner.structure.label()
    }

    #[getter]
    fn param_names(&self) -> Vec<String> {
        self.inner.structure.param_names()
    }

    #[getter]
    fn estimates(&self) -> Vec<f64> {
        self.inner.estimates.to_vec()
    }

    /// Standard errors in the order of `param_names`; `None` when unavailable.
    #[getter]
    fn standard_errors(&self) -> Vec<Option<f64>> {
        let se = &self.inner.se;
        let mut out: Vec<Option<f64>> = se.pi.to_vec();
        out.extend_from_slice(&se.disp);
        for (k, f) in self.inner.structure.families.iter().enumerate() {
            if f.is_parametric() {
                out.push(se.tau[k]);
            }
        }
        out
    }

    #[getter]
    fn study_loglik(&self) -> Vec<f64> {
        self.inner.study_loglik.clone()
    }

    #[getter]
    fn boundary_flags(&self) -> [bool; 3] {
        self.inner.boundary_flags
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("FitResult({}, loglik={:.4}, converged={})", self.inner.structure, self.inner.loglik, self.inner.converged)
    }
}

/// Fits one model to 2x2 tables `(tp, fp, fn, tn)`. `families` lists the
/// edge families; two entries give the truncated vine.
#[pyfunction]
#[pyo3(signature = (tables, families, margin = "normal", perm = "1", nq = 15))]
fn fit(
    py: Python<'_>,
    tables: Vec<(u64, u64, u64, u64)>,
    families: Vec<String>,
    margin: &str,
    perm: &str,
    nq: usize,
) -> PyResult<PyFitResult> {
    let margin: MarginKind = parse(margin)?;
    let perm: Permutation = parse(perm)?;
    let fams: Vec<CopulaFamily> = families.iter().map(|f| parse(f)).collect::<PyResult<_>>()?;
    let fams = match fams.as_slice() {
        [a, b] => [*a, *b, CopulaFamily::Independence],
        [a, b, c] => [*a, *b, *c],
        _ => return Err(PyValueError::new_err("families needs 2 or 3 entries")),
    };
    let s = VineStructure::new(perm, margin, fams);
    let data = records(tables);
    let options = FitOptions { nq, ..FitOptions::default() };
    let res = py.detach(|| trivine::fit(&data, &s, &options)).map_err(err)?;
    Ok(PyFitResult { inner: res })
}

/// Fits every family/margin/permutation combination; returns
/// `(family, fit or None, error or None)` in rank order.
#[pyfunction]
#[pyo3(signature = (tables, families, margins, perms = None, truncate = false, nq = 15))]
fn sweep(
    py: Python<'_>,
    tables: Vec<(u64, u64, u64, u64)>,
    families: Vec<String>,
    margins: Vec<String>,
    perms: Option<Vec<String>>,
    truncate: bool,
    nq: usize,
) -> PyResult<Vec<(String, Option<PyFitResult>, Option<String>)>> {
    let families: Vec<FamilyChoice> = families.iter().map(|f| parse(f)).collect::<PyResult<_>>()?;
    let margins: Vec<MarginKind> = margins.iter().map(|m| parse(m)).collect::<PyResult<_>>()?;
    let perms: Vec<Permutation> = match perms {
        None => trivine::enumerate_permutations(),
        Some(p) => p.iter().map(|x| parse(x)).collect::<PyResult<_>>()?,
    };
    let data = records(tables);
    let options = FitOptions { nq, ..FitOptions::default() };
    let entries = py
        .detach(|| trivine::sweep(&data, &families, &margins, &perms, truncate, &options))
        .map_err(err)?;
    Ok(entries
        .into_iter()
        .map(|e| match e.fit {
            Ok(f) => (e.choice.label(), Some(PyFitResult { inner: f }), None),
            Err(m) => (e.choice.label(), None, Some(m)),
        })
        .collect())
}

/// Vuong test of model 2 against model 1: `(d_bar, s, z0, p)`, with `z0`
/// and `p` set to `None` when the differences have no spread.
#[pyfunction]
#[pyo3(signature = (model1, model2, adjusted = false))]
fn vuong(model1: &PyFitResult, model2: &PyFitResult, adjusted: bool) -> PyResult<(f64, f64, Option<f64>, Option<f64>)> {
    let v = trivine::inference::vuong_fits(&model1.inner, &model2.inner, adjusted).map_err(err)?;
    Ok((v.d_bar, v.s, v.z0, v.p_value))
}

#[pyfunction]
fn normal_two_sided_p(z: f64) -> f64 {
    two_sided_p(z)
}

#[pyfunction]
fn tau_to_theta(family: &str, tau: f64) -> PyResult<f64> {
    trivine::tau_to_theta(parse(family)?, tau).map_err(err)
}

#[pyfunction]
fn theta_to_tau(family: &str, theta: f64) -> PyResult<f64> {
    trivine::theta_to_tau(parse(family)?, theta).map_err(err)
}

/// Gauss-Legendre nodes and weights on (0, 1).
#[pyfunction]
fn gauss_legendre(nq: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = trivine::gauss_legendre_01(nq).map_err(err)?;
    Ok((g.nodes, g.weights))
}

/// Reads a study table: `[(study_id, tp, fp, fn, tn), ...]`.
#[pyfunction]
fn read_input(path: &str) -> PyResult<Vec<(String, u64, u64, u64, u64)>> {
    let t = trivine::read_input(std::path::Path::new(path)).map_err(err)?;
    Ok(t.study_ids
        .into_iter()
        .zip(t.records)
        .map(|(id, r)| {
            let (tp, fp, fn_, tn) = r.to_2x2();
            (id, tp, fp, fn_, tn)
        })
        .collect())
}

/// One simulated dataset of 2x2 tables from a TOML scenario.
#[pyfunction]
#[pyo3(signature = (scenario, replicate = 0))]
fn simulate_dataset(scenario: &str, replicate: usize) -> PyResult<Vec<(u64, u64, u64, u64)>> {
    let sc = trivine::SimScenario::from_toml_str(scenario).map_err(err)?;
    let data = trivine::generate_dataset(&sc, replicate).map_err(err)?;
    Ok(data.iter().map(StudyRecord::to_2x2).collect())
}

/// Runs a TOML scenario; returns `(json_document, text_report)`.
#[pyfunction]
#[pyo3(signature = (scenario, seed, replications = None))]
fn run_simulation(py: Python<'_>, scenario: &str, seed: u64, replications: Option<usize>) -> PyResult<(String, String)> {
    let mut sc = trivine::SimScenario::from_toml_str(scenario).map_err(err)?;
    sc.seed = seed;
    if let Some(b) = replications {
        sc.replications = b;
    }
    let doc = py.detach(|| simulate(&sc)).map_err(err)?;
    Ok((doc.to_json().map_err(err)?, format_sim_report(&doc)))
}

/// Runs the command-line workflow on a CSV file; returns `(json, text)`.
#[pyfunction]
#[pyo3(signature = (data, families, margins, perms = None, truncate = false, nq = 15, baseline = "glmm"))]
fn run(
    py: Python<'_>,
    data: &str,
    families: Vec<String>,
    margins: Vec<String>,
    perms: Option<Vec<String>>,
    truncate: bool,
    nq: usize,
    baseline: &str,
) -> PyResult<(String, String)> {
    let mut cfg = RunConfig::new(data.into());
    cfg.families = families.iter().map(|f| parse(f)).collect::<PyResult<_>>()?;
    cfg.margins = margins.iter().map(|m| parse(m)).collect::<PyResult<_>>()?;
    if let Some(p) = perms {
        cfg.permutations = p.iter().map(|x| parse(x)).collect::<PyResult<_>>()?;
    }
    cfg.truncate = truncate;
    cfg.nq = nq;
    cfg.baseline = parse::<Baseline>(baseline)?;
    let (doc, _) = py.detach(|| trivine::run(&cfg)).map_err(err)?;
    Ok((doc.to_json().map_err(err)?, format_report(&doc, false)))
}

#[pymodule]
fn trivine_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCopula>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(vuong, m)?)?;
    m.add_function(wrap_pyfunction!(normal_two_sided_p, m)?)?;
    m.add_function(wrap_pyfunction!(tau_to_theta, m)?)?;
    m.add_function(wrap_pyfunction!(theta_to_tau, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_legendre, m)?)?;
    m.add_function(wrap_pyfunction!(read_input, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

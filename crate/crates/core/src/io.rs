//! Study tables, run configuration, result documents and text reports.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::error::{Error, Result};
use crate::inference::{aic, sweep, vuong_fits, FamilyChoice, FitOptions, FitResult, SweepEntry, VuongResult};
use crate::margins::{MarginKind, StudyRecord};
use crate::params::VineStructure;
use crate::simstudy::{run_study, SimReport, SimScenario};
use crate::vine::{enumerate_permutations, Permutation};

pub const SCHEMA: &str = "trivine.result";
pub const SCHEMA_VERSION: u32 = 1;

const COLUMNS: [&str; 5] = ["study_id", "tp", "fp", "fn", "tn"];

/// Rows of a study table in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTable {
    pub study_ids: Vec<String>,
    pub records: Vec<StudyRecord>,
    /// Non-fatal problems such as repeated study ids.
    pub warnings: Vec<String>,
}

fn parse_count(field: &str, column: &str, line: usize) -> Result<u64> {
    let t = field.trim();
    if let Ok(v) = t.parse::<i64>() {
        if v < 0 {
            return Err(Error::Parse { line, message: format!("negative count {v} in column '{column}'") });
        }
        return Ok(v as u64);
    }
    t.parse::<u64>()
        .map_err(|_| Error::Parse { line, message: format!("column '{column}': '{t}' is not a count") })
}

/// Parses a CSV study table with header `study_id,tp,fp,fn,tn`
/// (any case, any column order, extra columns ignored).
pub fn parse_input(text: &str) -> Result<InputTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let lower: Vec<String> = headers.iter().map(|h| h.trim_start_matches('\u{feff}').to_ascii_lowercase()).collect();
    let mut idx = [0usize; 5];
    for (k, col) in COLUMNS.iter().enumerate() {
        idx[k] = lower
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column '{col}'") })?;
    }
    let mut table = InputTable { study_ids: Vec::new(), records: Vec::new(), warnings: Vec::new() };
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        let id = get(0).to_string();
        let mut c = [0u64; 4];
        for k in 0..4 {
            c[k] = parse_count(get(k + 1), COLUMNS[k + 1], line)?;
        }
        if !seen.insert(id.clone()) {
            let w = format!("line {line}: duplicate study_id '{id}'");
            log::warn!("{w}");
            table.warnings.push(w);
        }
        table.study_ids.push(id);
        table.records.push(StudyRecord::from_2x2(c[0], c[1], c[2], c[3]));
    }
    Ok(table)
}

pub fn read_input(path: &Path) -> Result<InputTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_input(&text)
}

/// Canonical CSV text for a study table.
pub fn format_input(ids: &[String], records: &[StudyRecord]) -> Result<String> {
    if ids.len() != records.len() {
        return Err(Error::InvalidInput("study ids and records differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(COLUMNS).map_err(io)?;
    for (id, r) in ids.iter().zip(records) {
        let (tp, fp, fn_, tn) = r.to_2x2();
        w.write_record([id.clone(), tp.to_string(), fp.to_string(), fn_.to_string(), tn.to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn write_input(path: &Path, ids: &[String], records: &[StudyRecord]) -> Result<()> {
    fs::write(path, format_input(ids, records)?)?;
    Ok(())
}

/// Comparison model for the Vuong tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    None,
    /// A family and margin; permutation and truncation follow each model.
    Model { family: FamilyChoice, margin: MarginKind },
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Model { family: FamilyChoice::Single(CopulaFamily::Bvn), margin: MarginKind::NormalLogit }
    }
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    /// `none`, `glmm`, or `family:margin` such as `bvn:normal`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "none" => Ok(Baseline::None),
            "glmm" => Ok(Baseline::default()),
            _ => {
                let (f, m) = t
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidInput(format!("baseline '{s}' must be none, glmm or family:margin")))?;
                Ok(Baseline::Model { family: f.parse()?, margin: m.parse()? })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub margins: Vec<MarginKind>,
    pub families: Vec<FamilyChoice>,
    pub permutations: Vec<Permutation>,
    pub truncate: bool,
    pub nq: usize,
    pub seed: Option<u64>,
    pub baseline: Baseline,
    /// Result document path; the text report goes next to it with `.txt`.
    pub output: Option<PathBuf>,
    /// Rank by log-likelihood instead of AIC in the text report.
    #[serde(default)]
    pub rank_by_loglik: bool,
}

impl RunConfig {
    pub fn new(data: PathBuf) -> Self {
        Self {
            data,
            margins: vec![MarginKind::NormalLogit],
            families: vec![FamilyChoice::Single(CopulaFamily::Bvn)],
            permutations: enumerate_permutations(),
            truncate: false,
            nq: crate::quadrature::DEFAULT_NQ,
            seed: None,
            baseline: Baseline::default(),
            output: None,
            rank_by_loglik: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nq < 5 {
            return Err(Error::InvalidInput(format!("nq must be at least 5, got {}", self.nq)));
        }
        if self.margins.is_empty() || self.families.is_empty() || self.permutations.is_empty() {
            return Err(Error::InvalidInput("margins, families and permutations must be nonempty".into()));
        }
        Ok(())
    }

    pub fn model_count(&self) -> usize {
        self.margins.len() * self.families.len() * self.permutations.len()
    }
}

/// Vuong comparison of one model (model 2) against the baseline (model 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VuongBlock {
    pub baseline: VineStructure,
    pub plain: VuongResult,
    pub adjusted: VuongResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub rank: usize,
    pub choice: String,
    pub structure: VineStructure,
    pub param_names: Vec<String>,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
    pub vuong: Option<VuongBlock>,
    /// Set when a tau estimate is near the edge of its range.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: String,
    pub version: u32,
    pub n_studies: usize,
    pub study_ids: Vec<String>,
    pub nq: usize,
    pub seed: Option<u64>,
    pub truncate: bool,
    pub results: Vec<ResultEntry>,
    pub warnings: Vec<String>,
}

impl ResultDocument {
    /// Each stored AIC must equal `-2 loglik + 2 n_params` recomputed from
    /// the document itself.
    pub fn check_consistency(&self) -> Result<()> {
        for e in &self.results {
            if let Some(f) = &e.fit {
                let want = aic(f.loglik, f.n_params);
                if (f.aic - want).abs() > 1e-9 * want.abs().max(1.0) || f.n_params != e.structure.n_params() {
                    return Err(Error::Numerical(format!(
                        "inconsistent AIC for {}: stored {} recomputed {}",
                        e.structure, f.aic, want
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.check_consistency()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

fn baseline_structure(b: &Baseline, s: &VineStructure) -> Option<(FamilyChoice, VineStructure)> {
    match b {
        Baseline::None => None,
        Baseline::Model { family, margin } => {
            let cands = family.structures(s.perm, *margin, s.is_truncated());
            Some((*family, cands[0]))
        }
    }
}

/// Runs the fits described by a configuration on an already loaded table.
pub fn run_on(config: &RunConfig, table: &InputTable) -> Result<ResultDocument> {
    config.validate()?;
    if table.records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "at least 2 studies are needed, got {}",
            table.records.len()
        )));
    }
    let options = FitOptions { nq: config.nq, ..FitOptions::default() };
    let data = &table.records;
    let mut entries = sweep(data, &config.families, &config.margins, &config.permutations, config.truncate, &options)?;
    if config.rank_by_loglik {
        entries.sort_by(|a, b| {
            let ll = |e: &SweepEntry| e.fit.as_ref().map(|f| -f.loglik).unwrap_or(f64::INFINITY);
            ll(a).total_cmp(&ll(b)).then(a.structure.cmp(&b.structure))
        });
    }

    // baselines: reuse a fitted entry when the sweep contains it
    let mut extra: Vec<SweepEntry> = Vec::new();
    let mut baseline_fit = |fam: FamilyChoice, s: VineStructure| -> Option<FitResult> {
        let found = entries.iter().chain(extra.iter()).find(|e| e.choice == fam && e.structure.perm == s.perm
            && e.structure.margin == s.margin && e.structure.is_truncated() == s.is_truncated());
        if let Some(e) = found {
            return e.fit.as_ref().ok().cloned();
        }
        let entry = sweep(data, &[fam], &[s.margin], &[s.perm], s.is_truncated(), &options)
            .ok()?
            .remove(0);
        let out = entry.fit.as_ref().ok().cloned();
        extra.push(entry);
        out
    };
    let mut baselines = Vec::new();
    for e in &entries {
        let b = baseline_structure(&config.baseline, &e.structure)
            .filter(|(fam, s)| !(*fam == e.choice && s.margin == e.structure.margin))
            .and_then(|(fam, s)| baseline_fit(fam, s));
        baselines.push(b);
    }

    let mut results = Vec::new();
    for (rank, (e, base)) in entries.iter().zip(baselines).enumerate() {
        let (fit, error) = match &e.fit {
            Ok(f) => (Some(f.clone()), None),
            Err(m) => (None, Some(m.clone())),
        };
        let vuong = match (&fit, base) {
            (Some(f), Some(b)) => {
                let plain = vuong_fits(&b, f, false)?;
                let adjusted = vuong_fits(&b, f, true)?;
                Some(VuongBlock { baseline: b.structure, plain, adjusted })
            }
            _ => None,
        };
        let note = fit.as_ref().filter(|f| f.any_boundary()).map(|f| {
            let edges: Vec<String> = f
                .boundary_flags
                .iter()
                .zip(e.structure.perm.edge_labels())
                .filter(|(b, _)| **b)
                .map(|(_, l)| l)
                .collect();
            let hint = if f.boundary_flags[2] { "; consider the truncated vine" } else { "" };
            format!("tau near the boundary on edge {}{hint}", edges.join(", "))
        });
        results.push(ResultEntry {
            rank: rank + 1,
            choice: e.choice.label(),
            structure: e.structure,
            param_names: e.structure.param_names(),
            fit,
            error,
            vuong,
            note,
        });
    }
    let doc = ResultDocument {
        schema: SCHEMA.into(),
        version: SCHEMA_VERSION,
        n_studies: data.len(),
        study_ids: table.study_ids.clone(),
        nq: config.nq,
        seed: config.seed,
        truncate: config.truncate,
        results,
        warnings: table.warnings.clone(),
    };
    doc.check_consistency()?;
    Ok(doc)
}

/// Result document and text report for a configuration; writes both when
/// an output path is set.
pub fn run(config: &RunConfig) -> Result<(ResultDocument, String)> {
    config.validate()?;
    let table = read_input(&config.data)?;
    let doc = run_on(config, &table)?;
    let text = format_report(&doc, config.rank_by_loglik);
    if let Some(path) = &config.output {
        fs::write(path, doc.to_json()?)?;
        fs::write(path.with_extension("txt"), &text)?;
    }
    Ok((doc, text))
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new digit (e.g. 9.999995)
        let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
        if digits.trim_start_matches('0').len() > 6 && decimals > 0 {
            let d = decimals - 1;
            return format!("{x:.d$}");
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_else(|| "NA".into())
}

fn table_text(header: &[String], rows: &[Vec<String>]) -> String {
    let ncol = header.len();
    let mut width = vec![0; ncol];
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (k, c) in r.iter().enumerate() {
            width[k] = width[k].max(c.chars().count());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let mut line = String::new();
        for (k, c) in r.iter().enumerate() {
            let pad = width[k] - c.chars().count();
            if k == 0 {
                line.push_str(c);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(c);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Aligned text report: parameters as rows, models as columns (four per
/// block), then log-likelihood, AIC and the Vuong statistics.
pub fn format_report(doc: &ResultDocument, rank_by_loglik: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "studies: {}  nq: {}  ranked by {}", doc.n_studies, doc.nq, if rank_by_loglik { "log-likelihood" } else { "AIC" });
    for w in &doc.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    for chunk in doc.results.chunks(4) {
        out.push('\n');
        let mut header = vec![String::new()];
        let mut names: Vec<String> = Vec::new();
        for e in chunk {
            header.push(format!("#{} {} {}", e.rank, e.choice, e.structure.margin));
            for n in &e.param_names {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        let group = |n: &String| ["pi", "sigma", "gamma", "tau"].iter().position(|g| n.starts_with(g)).unwrap_or(4);
        names.sort_by_key(group);
        let mut rows = Vec::new();
        let mut perm_row = vec!["vine".to_string()];
        perm_row.extend(chunk.iter().map(|e| e.structure.perm.label()));
        rows.push(perm_row);
        for n in &names {
            let mut est = vec![n.clone()];
            let mut se = vec![String::new()];
            for e in chunk {
                let pos = e.param_names.iter().position(|m| m == n);
                match (pos, &e.fit) {
                    (Some(i), Some(f)) => {
                        est.push(sig6(f.estimates.to_vec()[i]));
                        se.push(format!("({})", opt6(se_at(f, i))));
                    }
                    _ => {
                        est.push(String::new());
                        se.push(String::new());
                    }
                }
            }
            rows.push(est);
            rows.push(se);
        }
        let stat = |label: &str, g: &dyn Fn(&ResultEntry) -> String| {
            let mut r = vec![label.to_string()];
            r.extend(chunk.iter().map(g));
            r
        };
        rows.push(stat("loglik", &|e| e.fit.as_ref().map(|f| sig6(f.loglik)).unwrap_or_else(|| "failed".into())));
        rows.push(stat("AIC", &|e| e.fit.as_ref().map(|f| sig6(f.aic)).unwrap_or_default()));
        rows.push(stat("converged", &|e| e.fit.as_ref().map(|f| f.converged.to_string()).unwrap_or_default()));
        if chunk.iter().any(|e| e.vuong.is_some()) {
            let v = |g: fn(&VuongBlock) -> String| move |e: &ResultEntry| e.vuong.as_ref().map(g).unwrap_or_default();
            rows.push(stat("Vuong z0", &v(|b| opt6(b.plain.z0))));
            rows.push(stat("p-value", &v(|b| opt6(b.plain.p_value))));
            rows.push(stat("adj. z0", &v(|b| opt6(b.adjusted.z0))));
            rows.push(stat("adj. p-value", &v(|b| opt6(b.adjusted.p_value))));
        }
        out.push_str(&table_text(&header, &rows));
        for e in chunk {
            if let Some(n) = &e.note {
                let _ = writeln!(out, "#{}: {n}", e.rank);
            }
            if let Some(m) = &e.error {
                let _ = writeln!(out, "#{}: fit failed: {m}", e.rank);
            }
        }
    }
    out
}

fn se_at(f: &FitResult, i: usize) -> Option<f64> {
    let mut se = f.se.pi.to_vec();
    se.extend_from_slice(&f.se.disp);
    for (k, fam) in f.structure.families.iter().enumerate() {
        if fam.is_parametric() {
            se.push(f.se.tau[k]);
        }
    }
    se.get(i).copied().flatten()
}

/// Simulation result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDocument {
    pub schema: String,
    pub version: u32,
    pub scenario: SimScenario,
    pub report: SimReport,
    /// The same report with every metric multiplied by 100.
    pub scaled: SimReport,
}

impl SimDocument {
    pub fn new(scenario: SimScenario, report: SimReport) -> Self {
        let mut scaled = report.clone();
        for f in &mut scaled.fits {
            for c in &mut f.cells {
                *c = c.scaled();
            }
        }
        Self { schema: "trivine.simulation".into(), version: SCHEMA_VERSION, scenario, report, scaled }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

pub fn simulate(scenario: &SimScenario) -> Result<SimDocument> {
    let report = run_study(scenario)?;
    Ok(SimDocument::new(scenario.clone(), report))
}

pub fn format_sim_report(doc: &SimDocument) -> String {
    let mut out = String::new();
    let r = &doc.scaled;
    let _ = writeln!(out, "N = {}  B = {}  seed = {}  (metrics x 100)", r.n_studies, r.replications, r.seed);
    for f in &r.fits {
        let _ = writeln!(
            out,
            "\n{}\nused {}  not converged {}  failed {}",
            f.structure, f.used, f.not_converged, f.failed
        );
        let header: Vec<String> =
            ["param", "truth", "mean", "bias", "SD", "RMSE", "sqrt(mean V)"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = f
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    opt6(c.truth),
                    sig6(c.mean),
                    opt6(c.bias),
                    opt6(c.sd),
                    opt6(c.rmse),
                    opt6(c.sqrt_mean_var),
                ]
            })
            .collect();
        out.push_str(&table_text(&header, &rows));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_conversion() {
        let t = parse_input("study_id,tp,fp,fn,tn\nA,5,2,3,10\n").unwrap();
        assert_eq!(t.records[0], StudyRecord { y1: 5, n1: 8, y2: 10, n2: 12, y3: 8, n3: 20 });
        assert_eq!(t.study_ids, vec!["A"]);
    }

    #[test]
    fn zeros_and_case_and_crlf() {
        let t = parse_input("Study_ID,TP,FP,FN,TN\r\nz,0,0,0,0\r\nb,1,2,3,4\r\n").unwrap();
        assert_eq!(t.records[0], StudyRecord { y1: 0, n1: 0, y2: 0, n2: 0, y3: 0, n3: 0 });
        assert_eq!(t.records.len(), 2);
    }

    #[test]
    fn missing_column_named() {
        let e = parse_input("study_id,tp,fp,tn\nA,1,2,3\n").unwrap_err();
        assert!(e.to_string().contains("'fn'"), "{e}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_input("study_id,tp,fp,fn,tn\nA,1,2,3,4\nB,1,-2,3,4\n").unwrap_err();
        assert_eq!(e, Error::Parse { line: 3, message: "negative count -2 in column 'fp'".into() });
        let e = parse_input("study_id,tp,fp,fn,tn\nA,1,x,3,4\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_ids_warn() {
        let t = parse_input("study_id,tp,fp,fn,tn\nA,1,2,3,4\nA,1,2,3,4\n").unwrap();
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(t.records.len(), 2);
    }

    #[test]
    fn canonical_round_trip() {
        let text = "study_id,tp,fp,fn,tn\nA,5,2,3,10\nB,0,0,0,0\n";
        let t = parse_input(text).unwrap();
        let again = format_input(&t.study_ids, &t.records).unwrap();
        assert_eq!(again, text);
    }

    #[test]
    fn six_digits() {
        assert_eq!(sig6(188.48), "188.480");
        assert_eq!(sig6(-0.0012345678), "-0.00123457");
        assert_eq!(sig6(0.5), "0.500000");
        assert_eq!(sig6(9.9999996), "10.0000");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
    }

    #[test]
    fn baseline_parsing() {
        assert_eq!("glmm".parse::<Baseline>().unwrap(), Baseline::default());
        assert_eq!("none".parse::<Baseline>().unwrap(), Baseline::None);
        assert_eq!(
            "frank:beta".parse::<Baseline>().unwrap(),
            Baseline::Model { family: FamilyChoice::Single(CopulaFamily::Frank), margin: MarginKind::Beta }
        );
        assert!("frank".parse::<Baseline>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::new("x.csv".into());
        c.nq = 4;
        assert!(c.validate().is_err());
        c.nq = 15;
        c.margins.clear();
        assert!(c.validate().is_err());
    }
}

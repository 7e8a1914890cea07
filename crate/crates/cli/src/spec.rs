//! Problem specification files.
//!
//! A spec is one JSON document. Everything is validated before any work
//! starts, and every problem found is reported together.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use gbd_core::analysis::TauRule;
use gbd_core::model::second_order_terms;
use gbd_core::search::SearchConfig;
use gbd_core::strata::{split_plot, staggered_level, strip_plot};
use gbd_core::{fit_scaling, candidate_set, Factor, ModelSpec, StratumStructure, Term, TermKind, VarianceRatios};

pub const DEFAULT_T_TOTAL: usize = 100_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    factors: Vec<RawFactor>,
    structure: RawStructure,
    model: RawModel,
    #[serde(default)]
    scenarios: Vec<RawScenario>,
    eta: Option<Vec<f64>>,
    #[serde(default)]
    tau: Option<RawTau>,
    #[serde(default)]
    search: RawSearch,
    #[serde(default)]
    outputs: RawOutputs,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFactor {
    name: String,
    stratum: usize,
    levels: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawStructure {
    CompletelyRandomized { runs: usize },
    SplitPlot { whole_plots: usize, runs_per_plot: usize },
    StripPlot { incidence: Vec<RawRow> },
    StaggeredLevel { class1_plots: usize, plot_size: usize },
    /// 1-based unit labels, one list per non-run stratum.
    Explicit { runs: usize, strata: Vec<Vec<usize>> },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRow {
    /// "11110000"
    Text(String),
    Cells(Vec<u8>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTerms {
    One(String),
    Many(Vec<String>),
}

impl Default for RawTerms {
    fn default() -> Self {
        RawTerms::Many(Vec::new())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    primary: RawTerms,
    #[serde(default)]
    potential: RawTerms,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    label: String,
    primary: Option<RawTerms>,
    #[serde(default)]
    potential: RawTerms,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawTau {
    Value(f64),
    Word(String),
    PerSigmaY { per_sigma_y: f64 },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    t_total: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputs {
    dir: Option<PathBuf>,
}

/// How τ is set, as written in the spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSetting {
    Auto,
    Fixed(f64),
    PerSigmaY(f64),
}

impl TauSetting {
    pub fn rule(self) -> TauRule {
        match self {
            TauSetting::Auto => TauRule::PerSigmaY(3.0),
            TauSetting::Fixed(t) => TauRule::Fixed(t),
            TauSetting::PerSigmaY(r) => TauRule::PerSigmaY(r),
        }
    }
}

/// A validated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub factors: Vec<Factor>,
    pub structure: StratumStructure,
    pub model: ModelSpec,
    /// Never empty; defaults to the main model alone.
    pub scenarios: Vec<(String, ModelSpec)>,
    pub eta: VarianceRatios,
    pub tau: TauSetting,
    pub search: SearchConfig,
    pub out_dir: Option<PathBuf>,
}

impl Problem {
    pub fn tau(&self) -> f64 {
        self.tau.rule().tau(&self.eta)
    }

    pub fn term_labels(&self, terms: &[Term]) -> Vec<String> {
        terms.iter().map(|t| t.label(&self.factors)).collect()
    }
}

/// One spec problem, with the line it was traced to when possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecErrors {
    pub path: PathBuf,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for SpecErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            match d.line {
                Some(l) => write!(f, "{}:{}: {}", self.path.display(), l, d.message)?,
                None => write!(f, "{}: {}", self.path.display(), d.message)?,
            }
        }
        Ok(())
    }
}

impl std::error::Error for SpecErrors {}

struct Collector<'a> {
    text: &'a str,
    found: Vec<Diagnostic>,
}

impl Collector<'_> {
    /// Records `message` at the first line containing `needle`.
    fn at(&mut self, needle: &str, message: impl Into<String>) {
        let line = self
            .text
            .lines()
            .position(|l| l.contains(needle))
            .map(|i| i + 1);
        self.found.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn key(&mut self, key: &str, message: impl Into<String>) {
        self.at(&format!("\"{key}\""), message);
    }
}

pub fn load(path: &Path) -> Result<Problem, SpecErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| SpecErrors {
        path: path.to_path_buf(),
        diagnostics: vec![Diagnostic {
            line: None,
            message: format!("cannot read spec: {e}"),
        }],
    })?;
    parse(&text).map_err(|diagnostics| SpecErrors {
        path: path.to_path_buf(),
        diagnostics,
    })
}

pub fn parse(text: &str) -> Result<Problem, Vec<Diagnostic>> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| {
        vec![Diagnostic {
            line: Some(e.line()).filter(|&l| l > 0),
            message: e.to_string(),
        }]
    })?;
    let mut c = Collector { text, found: Vec::new() };

    let structure = match build_structure(&raw.structure) {
        Ok(s) => Some(s),
        Err(msg) => {
            c.key("structure", msg);
            None
        }
    };

    let mut factors = Vec::new();
    let mut names = HashSet::new();
    for rf in &raw.factors {
        let quoted = format!("\"{}\"", rf.name);
        if !names.insert(rf.name.clone()) {
            c.at(&quoted, format!("factor `{}` is declared more than once", rf.name));
            continue;
        }
        match Factor::new(rf.name.clone(), rf.stratum, rf.levels.clone()) {
            Ok(f) => {
                if let Some(s) = &structure {
                    if f.stratum() > s.g() {
                        c.at(
                            &quoted,
                            format!(
                                "factor `{}` is in stratum {} but the structure has {} strata",
                                f.name(),
                                f.stratum(),
                                s.g()
                            ),
                        );
                    }
                }
                factors.push(f);
            }
            Err(e) => c.at(&quoted, e.to_string()),
        }
    }
    if raw.factors.is_empty() {
        c.key("factors", "at least one factor is required");
    }
    let factors_ok = factors.len() == raw.factors.len();

    let mut model = None;
    if factors_ok {
        model = build_model(&mut c, "model", &raw.model.primary, &raw.model.potential, &factors);
    }
    let mut scenarios = Vec::new();
    let mut labels = HashSet::new();
    for s in &raw.scenarios {
        if !labels.insert(s.label.clone()) {
            c.at(&format!("\"{}\"", s.label), format!("scenario `{}` is declared more than once", s.label));
        }
        if !factors_ok {
            continue;
        }
        let primary = s.primary.as_ref().unwrap_or(&raw.model.primary);
        let needle = format!("\"{}\"", s.label);
        if let Some(m) = build_model(&mut c, &needle, primary, &s.potential, &factors) {
            scenarios.push((s.label.clone(), m));
        }
    }

    let eta = match (&structure, &raw.eta) {
        (Some(s), Some(e)) if e.len() != s.g() => {
            c.key("eta", format!("eta has {} entries but the structure has {} strata", e.len(), s.g()));
            None
        }
        (_, Some(e)) => match VarianceRatios::new(e.clone()) {
            Ok(v) => Some(v),
            Err(err) => {
                c.key("eta", err.to_string());
                None
            }
        },
        (Some(s), None) => Some(VarianceRatios::unit(s.g())),
        (None, None) => None,
    };

    let tau = match raw.tau {
        None => Some(TauSetting::Auto),
        Some(RawTau::Word(w)) if w == "auto" => Some(TauSetting::Auto),
        Some(RawTau::Word(w)) => {
            c.key("tau", format!("tau must be a number, \"auto\" or {{\"per_sigma_y\": x}}, got \"{w}\""));
            None
        }
        Some(RawTau::Value(t)) if t.is_finite() && t > 0.0 => Some(TauSetting::Fixed(t)),
        Some(RawTau::PerSigmaY { per_sigma_y: r }) if r.is_finite() && r > 0.0 => Some(TauSetting::PerSigmaY(r)),
        Some(_) => {
            c.key("tau", "tau must be positive");
            None
        }
    };

    let search = SearchConfig {
        t_total: raw.search.t_total.unwrap_or(DEFAULT_T_TOTAL),
        seed: raw.search.seed.unwrap_or(0),
        workers: raw.search.workers.unwrap_or(1),
    };
    if search.t_total == 0 {
        c.key("t_total", "t_total must be at least 1");
    }
    if search.workers == 0 {
        c.key("workers", "workers must be at least 1");
    }

    // scaling needs nonzero-range potential columns over the candidates
    if factors_ok {
        let cand = candidate_set(&factors);
        let all = model.iter().map(|m| ("model".to_string(), m)).chain(scenarios.iter().map(|(l, m)| (l.clone(), m)));
        for (label, m) in all {
            if let Err(e) = fit_scaling(&cand, m) {
                let needle = if label == "model" { "\"model\"".to_string() } else { format!("\"{label}\"") };
                c.at(&needle, format!("{label}: {e}"));
            }
        }
    }

    if !c.found.is_empty() {
        return Err(c.found);
    }
    let (Some(structure), Some(model), Some(eta), Some(tau)) = (structure, model, eta, tau) else {
        unreachable!("every missing piece records a diagnostic");
    };
    if scenarios.is_empty() {
        scenarios.push(("model".to_string(), model.clone()));
    }
    Ok(Problem {
        factors,
        structure,
        model,
        scenarios,
        eta,
        tau,
        search,
        out_dir: raw.outputs.dir,
    })
}

fn build_structure(raw: &RawStructure) -> Result<StratumStructure, String> {
    let r = match raw {
        RawStructure::CompletelyRandomized { runs } => StratumStructure::completely_randomized(*runs),
        RawStructure::SplitPlot { whole_plots, runs_per_plot } => split_plot(*whole_plots, *runs_per_plot),
        RawStructure::StaggeredLevel { class1_plots, plot_size } => staggered_level(*class1_plots, *plot_size),
        RawStructure::StripPlot { incidence } => {
            let mut rows = Vec::with_capacity(incidence.len());
            for (i, row) in incidence.iter().enumerate() {
                let cells: Result<Vec<bool>, String> = match row {
                    RawRow::Text(t) => t
                        .chars()
                        .filter(|ch| !ch.is_whitespace())
                        .map(|ch| match ch {
                            '1' | 'x' | 'X' => Ok(true),
                            '0' | '.' | '-' => Ok(false),
                            other => Err(format!("incidence row {}: unexpected character `{other}`", i + 1)),
                        })
                        .collect(),
                    RawRow::Cells(v) => v
                        .iter()
                        .map(|&b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(format!("incidence row {}: cells must be 0 or 1, got {other}", i + 1)),
                        })
                        .collect(),
                };
                rows.push(cells?);
            }
            strip_plot(&rows)
        }
        RawStructure::Explicit { runs, strata } => {
            let mut blocking = Vec::with_capacity(strata.len());
            for (l, labels) in strata.iter().enumerate() {
                if labels.contains(&0) {
                    return Err(format!("stratum {}: unit labels are 1-based", l + 1));
                }
                blocking.push(labels.iter().map(|&u| u - 1).collect());
            }
            StratumStructure::new(*runs, blocking)
        }
    };
    r.map_err(|e| e.to_string())
}

fn expand_terms(raw: &RawTerms, factors: &[Factor]) -> Result<Vec<Term>, Vec<(String, String)>> {
    let items: Vec<&str> = match raw {
        RawTerms::One(s) => vec![s.as_str()],
        RawTerms::Many(v) => v.iter().map(String::as_str).collect(),
    };
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for item in items {
        if let Some(kind) = TermKind::from_name(item) {
            out.extend(second_order_terms(factors.len(), kind));
            continue;
        }
        match Term::parse(item, factors) {
            Ok(t) => out.push(t),
            Err(e) => errors.push((item.to_string(), e.to_string())),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn build_model(
    c: &mut Collector<'_>,
    needle: &str,
    primary: &RawTerms,
    potential: &RawTerms,
    factors: &[Factor],
) -> Option<ModelSpec> {
    let mut parsed = Vec::new();
    for (which, raw) in [("primary", primary), ("potential", potential)] {
        match expand_terms(raw, factors) {
            Ok(t) => parsed.push(t),
            Err(errs) => {
                for (item, msg) in errs {
                    c.at(&format!("\"{item}\""), format!("{which} term `{item}`: {msg}"));
                }
            }
        }
    }
    let [pri, pot]: [Vec<Term>; 2] = parsed.try_into().ok()?;
    match ModelSpec::new(pri, pot) {
        Ok(m) => Some(m),
        Err(e) => {
            c.at(needle, e.to_string());
            None
        }
    }
}

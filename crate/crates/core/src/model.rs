//! Factors, model terms and designs.
//!
//! Factors live on the coded `[-1, 1]` scale. A [`Term`] is a product of
//! factor powers (exponent at most 2); the empty product is the intercept.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::strata::StratumStructure;

const LEVEL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("factor `{name}`: {reason}")]
    InvalidFactor { name: String, reason: String },
    #[error("invalid term: {0}")]
    InvalidTerm(String),
    #[error("term refers to factor index {index} but only {count} factors are declared")]
    UnknownFactor { index: usize, count: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// A design violation, with 0-based run/unit indices.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("design is {rows}x{cols}, expected {n} runs and {m} factors")]
    Shape {
        rows: usize,
        cols: usize,
        n: usize,
        m: usize,
    },
    #[error("run {} factor `{factor}`: {value} is not a declared level", run + 1)]
    UndeclaredLevel {
        run: usize,
        factor: String,
        value: f64,
    },
    #[error(
        "run {} factor `{factor}`: value {value} differs from {expected} elsewhere in unit {} of stratum {stratum}",
        run + 1,
        unit + 1
    )]
    NotConstant {
        run: usize,
        factor: String,
        stratum: usize,
        unit: usize,
        value: f64,
        expected: f64,
    },
    #[error("factor `{factor}` is assigned to stratum {stratum} but the structure has {g} strata")]
    StratumOutOfRange {
        factor: String,
        stratum: usize,
        g: usize,
    },
}

/// A coded factor, assigned to one stratum (1-based, stratum 1 is the
/// top of the randomization hierarchy).
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    name: String,
    stratum: usize,
    levels: Vec<f64>,
}

impl Factor {
    pub fn new(name: impl Into<String>, stratum: usize, levels: Vec<f64>) -> Result<Self, ModelError> {
        let name = name.into();
        let bad = |reason: &str| ModelError::InvalidFactor {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if name.is_empty() {
            return Err(bad("empty name"));
        }
        if stratum == 0 {
            return Err(bad("strata are numbered from 1"));
        }
        if levels.len() < 2 {
            return Err(bad("needs at least two levels"));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(bad("levels must be finite"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("levels must be strictly increasing"));
        }
        if levels[0] != -1.0 || levels[levels.len() - 1] != 1.0 {
            return Err(bad("coded levels must run from -1 to 1"));
        }
        Ok(Factor { name, stratum, levels })
    }

    /// Two-level factor at `{-1, 1}`.
    pub fn two_level(name: impl Into<String>, stratum: usize) -> Self {
        Factor::new(name, stratum, vec![-1.0, 1.0]).expect("valid levels")
    }

    /// Three-level factor at `{-1, 0, 1}`.
    pub fn three_level(name: impl Into<String>, stratum: usize) -> Self {
        Factor::new(name, stratum, vec![-1.0, 0.0, 1.0]).expect("valid levels")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stratum(&self) -> usize {
        self.stratum
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn has_level(&self, v: f64) -> bool {
        self.levels.iter().any(|&l| (l - v).abs() <= LEVEL_TOLERANCE)
    }
}

/// A monomial in the factors. Powers are sorted by factor index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    powers: Vec<(usize, u32)>,
}

impl Term {
    pub fn new(mut powers: Vec<(usize, u32)>) -> Result<Self, ModelError> {
        powers.sort_by_key(|&(f, _)| f);
        if powers.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(ModelError::InvalidTerm("repeated factor within a term".into()));
        }
        if let Some(&(f, e)) = powers.iter().find(|&&(_, e)| e == 0 || e > 2) {
            return Err(ModelError::InvalidTerm(format!(
                "factor {f} has exponent {e}; supported exponents are 1 and 2"
            )));
        }
        Ok(Term { powers })
    }

    pub fn intercept() -> Self {
        Term { powers: Vec::new() }
    }

    pub fn main(f: usize) -> Self {
        Term { powers: vec![(f, 1)] }
    }

    pub fn interaction(a: usize, b: usize) -> Self {
        Term::new(vec![(a, 1), (b, 1)]).expect("distinct factors")
    }

    pub fn square(f: usize) -> Self {
        Term { powers: vec![(f, 2)] }
    }

    pub fn powers(&self) -> &[(usize, u32)] {
        &self.powers
    }

    pub fn is_intercept(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|&(_, e)| e).sum()
    }

    pub fn max_factor(&self) -> Option<usize> {
        self.powers.last().map(|&(f, _)| f)
    }

    #[inline]
    pub fn evaluate(&self, row: &[f64]) -> f64 {
        let mut v = 1.0;
        for &(f, e) in &self.powers {
            let x = row[f];
            v *= if e == 2 { x * x } else { x };
        }
        v
    }

    /// Human-readable label such as `A`, `A*B`, `A^2` or `1`.
    pub fn label(&self, factors: &[Factor]) -> String {
        if self.is_intercept() {
            return "1".into();
        }
        self.powers
            .iter()
            .map(|&(f, e)| {
                let name = factors.get(f).map_or_else(|| format!("x{}", f + 1), |x| x.name.clone());
                if e == 2 {
                    format!("{name}^2")
                } else {
                    name
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    }

    /// Parses `1`, `A`, `A*B`, `A^2` or `A*A` against the given factor names.
    pub fn parse(text: &str, factors: &[Factor]) -> Result<Self, ModelError> {
        let text = text.trim();
        if text == "1" {
            return Ok(Term::intercept());
        }
        let mut powers: Vec<(usize, u32)> = Vec::new();
        for piece in text.split('*') {
            let piece = piece.trim();
            let (name, exp) = match piece.split_once('^') {
                Some((n, e)) => {
                    let e: u32 = e
                        .trim()
                        .parse()
                        .map_err(|_| ModelError::InvalidTerm(format!("bad exponent in `{text}`")))?;
                    (n.trim(), e)
                }
                None => (piece, 1),
            };
            let idx = factors
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| ModelError::InvalidTerm(format!("unknown factor `{name}` in `{text}`")))?;
            match powers.iter_mut().find(|(f, _)| *f == idx) {
                Some(p) => p.1 += exp,
                None => powers.push((idx, exp)),
            }
        }
        Term::new(powers).map_err(|e| match e {
            ModelError::InvalidTerm(msg) => ModelError::InvalidTerm(format!("`{text}`: {msg}")),
            other => other,
        })
    }

    /// Canonical order: intercept, main effects, interactions, squares,
    /// each group by factor index.
    fn canonical_key(&self) -> (u8, Vec<usize>) {
        let group = match (self.powers.len(), self.degree()) {
            (0, _) => 0,
            (1, 1) => 1,
            (1, _) => 3,
            _ => 2,
        };
        (group, self.powers.iter().map(|&(f, _)| f).collect())
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical_key()
            .cmp(&other.canonical_key())
            .then_with(|| self.powers.cmp(&other.powers))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label(&[]))
    }
}

/// Named term families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    /// Intercept followed by all main effects.
    MainEffects,
    Squares,
    Interactions,
    SquaresAndInteractions,
    /// Intercept, main effects, interactions and squares.
    FullSecondOrder,
}

impl TermKind {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "main_effects" | "first_order" => TermKind::MainEffects,
            "squares" => TermKind::Squares,
            "interactions" => TermKind::Interactions,
            "squares_and_interactions" => TermKind::SquaresAndInteractions,
            "full_second_order" => TermKind::FullSecondOrder,
            _ => return None,
        })
    }
}

/// Canonical term list of the given kind over `m` factors.
pub fn second_order_terms(m: usize, kind: TermKind) -> Vec<Term> {
    let mains = || (0..m).map(Term::main);
    let squares = || (0..m).map(Term::square);
    let interactions = || (0..m).flat_map(move |a| (a + 1..m).map(move |b| Term::interaction(a, b)));
    match kind {
        TermKind::MainEffects => std::iter::once(Term::intercept()).chain(mains()).collect(),
        TermKind::Squares => squares().collect(),
        TermKind::Interactions => interactions().collect(),
        TermKind::SquaresAndInteractions => interactions().chain(squares()).collect(),
        TermKind::FullSecondOrder => std::iter::once(Term::intercept())
            .chain(mains())
            .chain(interactions())
            .chain(squares())
            .collect(),
    }
}

/// Primary terms (always fitted) and potential terms (given a proper prior).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    primary: Vec<Term>,
    potential: Vec<Term>,
}

impl ModelSpec {
    pub fn new(primary: Vec<Term>, potential: Vec<Term>) -> Result<Self, ModelError> {
        if !primary.iter().any(Term::is_intercept) {
            return Err(ModelError::InvalidModel("primary terms must include the intercept".into()));
        }
        let mut seen = HashSet::new();
        for t in primary.iter().chain(&potential) {
            if !seen.insert(t) {
                return Err(ModelError::InvalidModel(format!(
                    "term {t} appears more than once across primary and potential terms"
                )));
            }
        }
        Ok(ModelSpec { primary, potential })
    }

    pub fn primary(&self) -> &[Term] {
        &self.primary
    }

    pub fn potential(&self) -> &[Term] {
        &self.potential
    }

    pub fn p(&self) -> usize {
        self.primary.len()
    }

    pub fn q(&self) -> usize {
        self.potential.len()
    }

    pub fn r(&self) -> usize {
        self.p() + self.q()
    }

    /// The same primary terms with no potential terms.
    pub fn primary_only(&self) -> ModelSpec {
        ModelSpec {
            primary: self.primary.clone(),
            potential: Vec::new(),
        }
    }

    /// Checks every factor index against `m` declared factors.
    pub fn check_factors(&self, m: usize) -> Result<(), ModelError> {
        for t in self.primary.iter().chain(&self.potential) {
            if let Some(f) = t.max_factor().filter(|&f| f >= m) {
                return Err(ModelError::UnknownFactor { index: f, count: m });
            }
        }
        Ok(())
    }
}

/// `n × |terms|` model matrix of `settings`.
pub fn model_matrix(settings: &Matrix, terms: &[Term]) -> Result<Matrix, ModelError> {
    let m = settings.cols();
    for t in terms {
        if let Some(f) = t.max_factor().filter(|&f| f >= m) {
            return Err(ModelError::UnknownFactor { index: f, count: m });
        }
    }
    Ok(Matrix::from_fn(settings.rows(), terms.len(), |i, j| {
        terms[j].evaluate(settings.row(i))
    }))
}

/// Prior precision pattern: zero block of side `p`, identity block of side `q`.
pub fn build_k(p: usize, q: usize) -> Matrix {
    let mut diag = vec![0.0; p];
    diag.resize(p + q, 1.0);
    Matrix::from_diagonal(&diag)
}

/// An `n × m` table of factor settings, one run per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    settings: Matrix,
}

impl Design {
    pub fn new(settings: Matrix) -> Self {
        Design { settings }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, crate::linalg::LinalgError> {
        Ok(Design {
            settings: Matrix::from_rows(rows)?,
        })
    }

    pub fn n(&self) -> usize {
        self.settings.rows()
    }

    pub fn m(&self) -> usize {
        self.settings.cols()
    }

    pub fn settings(&self) -> &Matrix {
        &self.settings
    }

    pub fn settings_mut(&mut self) -> &mut Matrix {
        &mut self.settings
    }

    pub fn into_settings(self) -> Matrix {
        self.settings
    }

    pub fn model_matrix(&self, terms: &[Term]) -> Result<Matrix, ModelError> {
        model_matrix(&self.settings, terms)
    }

    /// Checks declared levels and within-unit constantness of every factor
    /// in its stratum.
    pub fn validate(&self, factors: &[Factor], structure: &StratumStructure) -> Result<(), DesignError> {
        let (n, m) = (structure.n(), factors.len());
        if self.n() != n || self.m() != m {
            return Err(DesignError::Shape {
                rows: self.n(),
                cols: self.m(),
                n,
                m,
            });
        }
        for (j, f) in factors.iter().enumerate() {
            if f.stratum > structure.g() {
                return Err(DesignError::StratumOutOfRange {
                    factor: f.name.clone(),
                    stratum: f.stratum,
                    g: structure.g(),
                });
            }
            for i in 0..n {
                let v = self.settings[(i, j)];
                if !f.has_level(v) {
                    return Err(DesignError::UndeclaredLevel {
                        run: i,
                        factor: f.name.clone(),
                        value: v,
                    });
                }
            }
            for (unit, runs) in structure.units(f.stratum).iter().enumerate() {
                let expected = self.settings[(runs[0], j)];
                if let Some(&run) = runs.iter().find(|&&r| self.settings[(r, j)] != expected) {
                    return Err(DesignError::NotConstant {
                        run,
                        factor: f.name.clone(),
                        stratum: f.stratum,
                        unit,
                        value: self.settings[(run, j)],
                        expected,
                    });
                }
            }
        }
        Ok(())
    }

    /// Lexicographic order of the row-major settings.
    pub fn lex_cmp(&self, other: &Design) -> Ordering {
        self.settings
            .as_slice()
            .iter()
            .zip(other.settings.as_slice())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.settings.as_slice().len().cmp(&other.settings.as_slice().len()))
    }

    /// Design whose run `i` is run `perm[i]` of `self`.
    pub fn permute_runs(&self, perm: &[usize]) -> Design {
        Design {
            settings: Matrix::from_fn(perm.len(), self.m(), |i, j| self.settings[(perm[i], j)]),
        }
    }

    /// Set of distinct values used by factor `j`.
    pub fn levels_used(&self, j: usize) -> Vec<f64> {
        let mut v = self.settings.column(j);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

//! Randomization structures.
//!
//! A structure with `g` strata assigns every run to one unit per stratum.
//! Stratum `g` is always the run stratum (each run is its own unit). Units
//! are 0-based here; file formats use 1-based labels.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrataError {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("invalid variance ratios: {0}")]
    InvalidRatios(String),
    #[error("stratum {stratum} out of range 1..={g}")]
    StratumOutOfRange { stratum: usize, g: usize },
    #[error("{found} variance ratios given for a {g}-stratum structure")]
    RatioCountMismatch { found: usize, g: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumStructure {
    unit_of_run: Vec<Vec<usize>>,
    // runs of each unit, ascending
    units: Vec<Vec<Vec<usize>>>,
}

impl StratumStructure {
    /// Builds a structure from the non-run strata; the run stratum is
    /// appended. Each inner vector maps run index to a 0-based unit label.
    pub fn new(n: usize, blocking: Vec<Vec<usize>>) -> Result<Self, StrataError> {
        if n == 0 {
            return Err(StrataError::InvalidStructure("no runs".into()));
        }
        let mut unit_of_run = blocking;
        for (l, map) in unit_of_run.iter().enumerate() {
            if map.len() != n {
                return Err(StrataError::InvalidStructure(format!(
                    "stratum {} assigns {} runs, expected {n}",
                    l + 1,
                    map.len()
                )));
            }
            let b = map.iter().max().map_or(0, |m| m + 1);
            let mut seen = vec![false; b];
            for &u in map {
                seen[u] = true;
            }
            if let Some(u) = seen.iter().position(|s| !s) {
                return Err(StrataError::InvalidStructure(format!(
                    "stratum {} has no run in unit {}",
                    l + 1,
                    u + 1
                )));
            }
        }
        unit_of_run.push((0..n).collect());
        let units = unit_of_run
            .iter()
            .map(|map| {
                let b = map.iter().max().map_or(0, |m| m + 1);
                let mut runs = vec![Vec::new(); b];
                for (i, &u) in map.iter().enumerate() {
                    runs[u].push(i);
                }
                runs
            })
            .collect();
        Ok(StratumStructure { unit_of_run, units })
    }

    /// Single-stratum (completely randomized) structure.
    pub fn completely_randomized(n: usize) -> Result<Self, StrataError> {
        StratumStructure::new(n, Vec::new())
    }

    pub fn g(&self) -> usize {
        self.unit_of_run.len()
    }

    pub fn n(&self) -> usize {
        self.unit_of_run[0].len()
    }

    fn check(&self, stratum: usize) -> Result<usize, StrataError> {
        if stratum == 0 || stratum > self.g() {
            Err(StrataError::StratumOutOfRange { stratum, g: self.g() })
        } else {
            Ok(stratum - 1)
        }
    }

    /// Number of units `b_l` in stratum `l` (1-based).
    pub fn unit_count(&self, stratum: usize) -> usize {
        self.units[stratum - 1].len()
    }

    /// Unit of each run in stratum `l` (1-based stratum, 0-based units).
    pub fn unit_of_run(&self, stratum: usize) -> &[usize] {
        &self.unit_of_run[stratum - 1]
    }

    /// Runs of each unit in stratum `l` (1-based).
    pub fn units(&self, stratum: usize) -> &[Vec<usize>] {
        &self.units[stratum - 1]
    }

    /// `n × b_l` 0/1 indicator matrix `U_l`.
    pub fn indicator_matrix(&self, stratum: usize) -> Result<Matrix, StrataError> {
        let l = self.check(stratum)?;
        let map = &self.unit_of_run[l];
        let b = self.units[l].len();
        let mut u = Matrix::zeros(map.len(), b);
        for (i, &unit) in map.iter().enumerate() {
            u[(i, unit)] = 1.0;
        }
        Ok(u)
    }

    /// Relabels runs so that run `i` of the result is run `perm[i]` of `self`.
    pub fn permute_runs(&self, perm: &[usize]) -> Result<Self, StrataError> {
        let n = self.n();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(StrataError::InvalidStructure("not a permutation of the runs".into()));
        }
        let blocking = self.unit_of_run[..self.g() - 1]
            .iter()
            .map(|map| perm.iter().map(|&p| map[p]).collect())
            .collect();
        StratumStructure::new(n, blocking)
    }
}

/// Variance ratios `η_l = σ_l² / σ_g²`, with `η_g = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRatios {
    eta: Vec<f64>,
}

impl VarianceRatios {
    pub fn new(eta: Vec<f64>) -> Result<Self, StrataError> {
        if eta.is_empty() {
            return Err(StrataError::InvalidRatios("empty".into()));
        }
        if let Some(v) = eta.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(StrataError::InvalidRatios(format!("{v} is not a positive number")));
        }
        if eta[eta.len() - 1] != 1.0 {
            return Err(StrataError::InvalidRatios(
                "the run stratum ratio must be exactly 1".into(),
            ));
        }
        Ok(VarianceRatios { eta })
    }

    /// Ratios for the non-run strata; the trailing 1 is appended.
    pub fn with_upper(upper: &[f64]) -> Result<Self, StrataError> {
        let mut eta = upper.to_vec();
        eta.push(1.0);
        VarianceRatios::new(eta)
    }

    /// All ratios equal to one.
    pub fn unit(g: usize) -> Self {
        VarianceRatios { eta: vec![1.0; g] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.eta
    }

    pub fn g(&self) -> usize {
        self.eta.len()
    }

    /// Response standard deviation with `σ_g = 1`: `sqrt(Σ η_l)`.
    pub fn sigma_y(&self) -> f64 {
        self.eta.iter().sum::<f64>().sqrt()
    }
}

/// `Σ = Σ_l η_l U_l U_lᵀ` with `σ_g² = 1`.
pub fn build_sigma(s: &StratumStructure, eta: &VarianceRatios) -> Result<Matrix, StrataError> {
    if eta.g() != s.g() {
        return Err(StrataError::RatioCountMismatch {
            found: eta.g(),
            g: s.g(),
        });
    }
    let n = s.n();
    let mut sigma = Matrix::zeros(n, n);
    for (l, &e) in eta.as_slice().iter().enumerate() {
        for runs in &s.units[l] {
            for &i in runs {
                for &j in runs {
                    sigma[(i, j)] += e;
                }
            }
        }
    }
    Ok(sigma)
}

/// Two strata: `whole_plots` contiguous whole plots of `runs_per_plot` runs.
pub fn split_plot(whole_plots: usize, runs_per_plot: usize) -> Result<StratumStructure, StrataError> {
    if whole_plots == 0 || runs_per_plot == 0 {
        return Err(StrataError::InvalidStructure(
            "split-plot needs at least one whole plot and one run per plot".into(),
        ));
    }
    let n = whole_plots * runs_per_plot;
    StratumStructure::new(n, vec![(0..n).map(|i| i / runs_per_plot).collect()])
}

/// Three strata from a row × column incidence table. Runs are the checked
/// cells in row-major order; stratum 1 is the row, stratum 2 the column.
pub fn strip_plot<R: AsRef<[bool]>>(incidence: &[R]) -> Result<StratumStructure, StrataError> {
    let rows = incidence.len();
    let cols = incidence.first().map_or(0, |r| r.as_ref().len());
    if rows == 0 || cols == 0 {
        return Err(StrataError::InvalidStructure("empty incidence table".into()));
    }
    let mut row_of = Vec::new();
    let mut col_of = Vec::new();
    let mut col_used = vec![false; cols];
    for (i, r) in incidence.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != cols {
            return Err(StrataError::InvalidStructure(format!(
                "incidence row {} has {} cells, expected {cols}",
                i + 1,
                r.len()
            )));
        }
        if !r.iter().any(|&c| c) {
            return Err(StrataError::InvalidStructure(format!("incidence row {} is empty", i + 1)));
        }
        for (j, &c) in r.iter().enumerate() {
            if c {
                row_of.push(i);
                col_of.push(j);
                col_used[j] = true;
            }
        }
    }
    if let Some(j) = col_used.iter().position(|u| !u) {
        return Err(StrataError::InvalidStructure(format!("incidence column {} is empty", j + 1)));
    }
    StratumStructure::new(row_of.len(), vec![row_of, col_of])
}

/// Three strata: class-I plots of `plot_size` runs, and class-II plots of
/// the same size shifted by half a plot, with half-size plots at both ends.
pub fn staggered_level(class1_plots: usize, plot_size: usize) -> Result<StratumStructure, StrataError> {
    if plot_size == 0 || !plot_size.is_multiple_of(2) {
        return Err(StrataError::InvalidStructure(format!(
            "staggered-level plot size must be even and positive, got {plot_size}"
        )));
    }
    if class1_plots < 2 {
        return Err(StrataError::InvalidStructure(
            "staggered-level structure needs at least two class-I plots".into(),
        ));
    }
    let n = class1_plots * plot_size;
    let half = plot_size / 2;
    StratumStructure::new(
        n,
        vec![
            (0..n).map(|i| i / plot_size).collect(),
            (0..n).map(|i| (i + half) / plot_size).collect(),
        ],
    )
}

//! Post-design comparisons: efficiency tables, coefficient variances of
//! projective submodels, overall-variance curves and η sweeps.
//!
//! Submodel variances are plain GLS quantities on raw model columns with
//! `σ_g² = 1`; the Bayesian scaling plays no part here.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::criterion::{efficiency, CriterionConfig, Evaluator, WORST};
use crate::error::{Error, Result};
use crate::linalg::{spd_factorize, Matrix, SpdFactorization};
use crate::model::{model_matrix, Design, Factor, ModelSpec, Term};
use crate::strata::{build_sigma, StratumStructure, VarianceRatios};

/// Submodels whose information has a smaller reciprocal condition number
/// are reported as not estimable.
pub const RCOND_THRESHOLD: f64 = 1e-8;

/// Largest number of submodels evaluated per `k` before sampling.
pub const SUBMODEL_CAP: usize = 200_000;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyTable {
    pub scenarios: Vec<String>,
    pub designs: Vec<String>,
    /// `log_d[s][a]`, [`WORST`] for singular designs.
    pub log_d: Vec<Vec<f64>>,
    /// `values[s][a] = exp(log_d[s][a] − max_b log_d[s][b])`.
    pub values: Vec<Vec<f64>>,
}

impl EfficiencyTable {
    /// Index of the first design with the highest value under scenario `s`.
    pub fn best_design(&self, s: usize) -> usize {
        let row = &self.log_d[s];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Efficiency of every design under every scenario. Scenarios without
/// potential terms are scored by the D criterion, the rest by GBD.
pub fn efficiency_table(
    designs: &[(String, Design)],
    scenarios: &[(String, ModelSpec)],
    factors: &[Factor],
    structure: &StratumStructure,
    eta: &VarianceRatios,
    tau: f64,
) -> Result<EfficiencyTable> {
    for (_, d) in designs {
        d.validate(factors, structure)?;
    }
    let mut log_d = Vec::with_capacity(scenarios.len());
    let mut values = Vec::with_capacity(scenarios.len());
    for (label, model) in scenarios {
        let cfg = CriterionConfig::with_candidate_scaling(
            factors.to_vec(),
            model.clone(),
            structure.clone(),
            eta.clone(),
            tau,
        )?;
        let mut ev = Evaluator::new(&cfg);
        let row: Vec<f64> = designs.iter().map(|(_, d)| ev.log_d(d.settings())).collect();
        let best = row.iter().copied().fold(WORST, f64::max);
        if best == WORST {
            return Err(Error::AllSingular { scenario: label.clone() });
        }
        values.push(row.iter().map(|&v| efficiency(v, best)).collect());
        log_d.push(row);
    }
    Ok(EfficiencyTable {
        scenarios: scenarios.iter().map(|(l, _)| l.clone()).collect(),
        designs: designs.iter().map(|(l, _)| l.clone()).collect(),
        log_d,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub submodel: Vec<Term>,
    pub estimable: bool,
    /// Diagonal of `(XᵀΣ⁻¹X)⁻¹`, in submodel order; `None` when not estimable.
    pub variances: Option<Vec<f64>>,
}

/// Inverse of an SPD information matrix, or `None` when it is singular or
/// worse conditioned than [`RCOND_THRESHOLD`].
pub fn estimable_inverse(info: &Matrix) -> Option<Matrix> {
    let inv = spd_factorize(info).ok()?.inverse();
    let denom = info.norm_one() * inv.norm_one();
    if denom.is_finite() && denom > 0.0 && 1.0 / denom > RCOND_THRESHOLD {
        Some(inv)
    } else {
        None
    }
}

fn sigma_factor(structure: &StratumStructure, eta: &VarianceRatios) -> Result<SpdFactorization> {
    Ok(spd_factorize(&build_sigma(structure, eta)?)?)
}

/// GLS coefficient variances of the submodel `primary ∪ extra`.
pub fn submodel_variances(
    design: &Design,
    structure: &StratumStructure,
    eta: &VarianceRatios,
    primary: &[Term],
    extra: &[Term],
) -> Result<VarianceReport> {
    let terms: Vec<Term> = primary.iter().chain(extra).cloned().collect();
    let x = model_matrix(design.settings(), &terms)?;
    let info = crate::linalg::gram(&x, &sigma_factor(structure, eta)?)?;
    let variances = estimable_inverse(&info).map(|inv| inv.diagonal());
    Ok(VarianceReport {
        submodel: terms,
        estimable: variances.is_some(),
        variances,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    /// Mean over estimable submodels of the summed primary variances.
    pub primary_overall: Option<f64>,
    /// Mean over estimable submodels of the summed variances of the `k`
    /// added terms.
    pub potential_overall: Option<f64>,
    pub n_estimable: usize,
    pub n_models: usize,
    pub sampled: bool,
}

/// Submodel enumeration limits for [`overall_variance_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub cap: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            cap: SUBMODEL_CAP,
            seed: 0,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// All k-subsets of `0..n` in lexicographic order, flattened.
fn all_subsets(n: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.extend_from_slice(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn sampled_subsets(n: usize, k: usize, count: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(count * k);
    for _ in 0..count {
        let mut s = sample(&mut rng, n, k).into_vec();
        s.sort_unstable();
        out.extend_from_slice(&s);
    }
    out
}

/// For each `k` in `ks`, averages coefficient variances over the estimable
/// submodels made of `primary` plus `k` terms of `pool`.
pub fn overall_variance_curve(
    design: &Design,
    structure: &StratumStructure,
    eta: &VarianceRatios,
    primary: &[Term],
    pool: &[Term],
    ks: &[usize],
    sampling: Sampling,
) -> Result<Vec<CurvePoint>> {
    if let Some(&k) = ks.iter().find(|&&k| k > pool.len()) {
        return Err(Error::Invalid(format!(
            "k = {k} exceeds the {} available terms",
            pool.len()
        )));
    }
    let p = primary.len();
    let terms: Vec<Term> = primary.iter().chain(pool).cloned().collect();
    let x = model_matrix(design.settings(), &terms)?;
    let full = crate::linalg::gram(&x, &sigma_factor(structure, eta)?)?;

    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let total = binomial(pool.len(), k);
        let sampled = total > sampling.cap as u128;
        let subsets = if k == 0 {
            Vec::new()
        } else if sampled {
            sampled_subsets(pool.len(), k, sampling.cap, sampling.seed, k as u64)
        } else {
            all_subsets(pool.len(), k)
        };
        let n_models = if sampled { sampling.cap } else { total as usize };

        let eval = |s: &[usize]| -> Option<(f64, f64)> {
            let idx: Vec<usize> = (0..p).chain(s.iter().map(|&j| p + j)).collect();
            let inv = estimable_inverse(&full.principal_submatrix(&idx))?;
            let d = inv.diagonal();
            Some((d[..p].iter().sum(), d[p..].iter().sum()))
        };
        // fixed-size chunks reduced in order so the sums do not depend on
        // the thread count
        let partial: Vec<(f64, f64, usize)> = if k == 0 {
            vec![eval(&[]).map_or((0.0, 0.0, 0), |(a, b)| (a, b, 1))]
        } else {
            subsets
                .par_chunks(CHUNK * k)
                .map(|chunk| {
                    chunk.chunks(k).filter_map(eval).fold((0.0, 0.0, 0), |acc, (a, b)| {
                        (acc.0 + a, acc.1 + b, acc.2 + 1)
                    })
                })
                .collect()
        };
        let (sp, sq, n) = partial
            .iter()
            .fold((0.0, 0.0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
        let mean = |s: f64| (n > 0).then(|| s / n as f64);
        points.push(CurvePoint {
            k,
            primary_overall: mean(sp),
            potential_overall: mean(sq),
            n_estimable: n,
            n_models,
            sampled,
        });
    }
    Ok(points)
}

/// How τ is chosen at each sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    Fixed(f64),
    /// `τ = ratio · σ_y` with `σ_y² = Σ η`.
    PerSigmaY(f64),
}

impl TauRule {
    pub fn tau(&self, eta: &VarianceRatios) -> f64 {
        match *self {
            TauRule::Fixed(t) => t,
            TauRule::PerSigmaY(ratio) => ratio * eta.sigma_y(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub eta: VarianceRatios,
    pub tau: f64,
    pub table: EfficiencyTable,
    /// Best design per scenario.
    pub best: Vec<usize>,
}

/// Every combination of `values` for the `g − 1` non-run strata.
pub fn eta_grid(values: &[f64], g: usize) -> Result<Vec<VarianceRatios>> {
    let upper = g.saturating_sub(1);
    let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..upper {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    combos
        .iter()
        .map(|c| VarianceRatios::with_upper(c).map_err(Error::from))
        .collect()
}

/// Recomputes the efficiency table at each grid point.
pub fn sensitivity_sweep(
    designs: &[(String, Design)],
    scenarios: &[(String, ModelSpec)],
    factors: &[Factor],
    structure: &StratumStructure,
    grid: &[VarianceRatios],
    tau: TauRule,
) -> Result<Vec<SweepPoint>> {
    grid.iter()
        .map(|eta| {
            let t = tau.tau(eta);
            let table = efficiency_table(designs, scenarios, factors, structure, eta, t)?;
            let best = (0..scenarios.len()).map(|s| table.best_design(s)).collect();
            Ok(SweepPoint {
                eta: eta.clone(),
                tau: t,
                table,
                best,
            })
        })
        .collect()
}

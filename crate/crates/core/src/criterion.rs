//! The D and generalized Bayesian D criteria.
//!
//! Potential-term columns are first centered against the primary terms and
//! scaled to unit range over a candidate set ([`fit_scaling`]). A design is
//! then scored by
//!
//! ```text
//! log d = (1/r) · ln det(XᵀΣ⁻¹X + K/τ²)
//! ```
//!
//! where `X = [X_pri | Z]`, `K` is zero on the primary block and the
//! identity on the potential block, and `Σ` is the multistratum covariance
//! with `σ_g² = 1`. Larger is better. Singular information maps to [`WORST`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, spd_factorize, LinalgError, Matrix, SpdFactorization};
use crate::model::{model_matrix, Design, Factor, ModelSpec, Term};
use crate::strata::{build_sigma, StratumStructure, VarianceRatios};

/// Criterion value of a design with singular information.
pub const WORST: f64 = f64::NEG_INFINITY;

/// Largest candidate set used for scaling before subsampling.
pub const CANDIDATE_CAP: usize = 100_000;

/// Seed of the candidate-set subsample.
pub const CANDIDATE_SEED: u64 = 0x9bd_5ca1e;

const ZERO_RANGE: f64 = 1e-10;

/// Centering coefficients and ranges that turn `X_pot` into `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMap {
    primary: Vec<Term>,
    potential: Vec<Term>,
    alpha: Matrix,
    ranges: Vec<f64>,
    candidate_summary: String,
}

impl ScalingMap {
    /// `p × q` regression of potential on primary columns.
    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn candidate_summary(&self) -> &str {
        &self.candidate_summary
    }

    pub fn fits(&self, model: &ModelSpec) -> bool {
        self.primary == model.primary() && self.potential == model.potential()
    }
}

/// Candidate points for scaling: the full factorial over declared levels,
/// or a seeded stratified subsample of [`CANDIDATE_CAP`] points when the
/// factorial is larger.
pub fn candidate_set(factors: &[Factor]) -> Design {
    let radices: Vec<usize> = factors.iter().map(|f| f.levels().len()).collect();
    let total = radices
        .iter()
        .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128));
    let m = factors.len();
    let decode = |mut idx: u128, row: &mut [f64]| {
        for j in (0..m).rev() {
            let r = radices[j] as u128;
            row[j] = factors[j].levels()[(idx % r) as usize];
            idx /= r;
        }
    };
    match total {
        Some(t) if t <= CANDIDATE_CAP as u128 => {
            let mut s = Matrix::zeros(t as usize, m);
            for i in 0..t as usize {
                decode(i as u128, s.row_mut(i));
            }
            Design::new(s)
        }
        Some(t) => {
            let mut rng = ChaCha8Rng::seed_from_u64(CANDIDATE_SEED);
            let cap = CANDIDATE_CAP as u128;
            let mut s = Matrix::zeros(CANDIDATE_CAP, m);
            for k in 0..CANDIDATE_CAP {
                let lo = k as u128 * t / cap;
                let hi = (k as u128 + 1) * t / cap;
                decode(rng.gen_range(lo..hi), s.row_mut(k));
            }
            Design::new(s)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(CANDIDATE_SEED);
            let s = Matrix::from_fn(CANDIDATE_CAP, m, |_, j| {
                let lv = factors[j].levels();
                lv[rng.gen_range(0..lv.len())]
            });
            Design::new(s)
        }
    }
}

/// Fits the centering and scaling of potential terms over `candidates`.
pub fn fit_scaling(candidates: &Design, model: &ModelSpec) -> Result<ScalingMap> {
    let x_pri = candidates.model_matrix(model.primary())?;
    let x_pot = candidates.model_matrix(model.potential())?;
    let (p, q) = (model.p(), model.q());
    let gram = x_pri.crossprod();
    let f = spd_factorize(&gram).map_err(|e| match e {
        LinalgError::Singular { .. } => Error::RankDeficientCandidates,
        other => other.into(),
    })?;
    let alpha = if q == 0 {
        Matrix::zeros(p, 0)
    } else {
        f.solve(&x_pri.transpose().matmul(&x_pot))?
    };
    let w = x_pot.sub(&x_pri.matmul(&alpha));
    let mut ranges = Vec::with_capacity(q);
    for c in 0..q {
        let col = w.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if !(range > ZERO_RANGE) {
            return Err(Error::ZeroRange {
                index: c,
                term: model.potential()[c].clone(),
            });
        }
        ranges.push(range);
    }
    Ok(ScalingMap {
        primary: model.primary().to_vec(),
        potential: model.potential().to_vec(),
        alpha,
        ranges,
        candidate_summary: format!("{} candidate points", candidates.n()),
    })
}

/// `X = [X_pri | Z]` with `Z = (X_pot − X_pri·α) / range`.
pub fn apply_scaling(settings: &Matrix, model: &ModelSpec, map: &ScalingMap) -> Result<Matrix> {
    if !map.fits(model) {
        return Err(Error::ScalingMismatch);
    }
    let x_pri = model_matrix(settings, model.primary())?;
    if model.q() == 0 {
        return Ok(x_pri);
    }
    let x_pot = model_matrix(settings, model.potential())?;
    let mut z = x_pot.sub(&x_pri.matmul(&map.alpha));
    for i in 0..z.rows() {
        for (v, r) in z.row_mut(i).iter_mut().zip(&map.ranges) {
            *v /= r;
        }
    }
    Ok(x_pri.hstack(&z))
}

/// Everything needed to score designs for one problem. Immutable once built.
#[derive(Debug, Clone)]
pub struct CriterionConfig {
    factors: Vec<Factor>,
    model: ModelSpec,
    structure: StratumStructure,
    eta: VarianceRatios,
    tau: f64,
    scaling: ScalingMap,
    sigma: SpdFactorization,
    // L⁻¹ for Σ = L·Lᵀ; None when Σ = I.
    whitener: Option<Matrix>,
}

impl CriterionConfig {
    pub fn new(
        factors: Vec<Factor>,
        model: ModelSpec,
        structure: StratumStructure,
        eta: VarianceRatios,
        tau: f64,
        scaling: ScalingMap,
    ) -> Result<Self> {
        model.check_factors(factors.len())?;
        for f in &factors {
            if f.stratum() > structure.g() {
                return Err(crate::model::DesignError::StratumOutOfRange {
                    factor: f.name().to_string(),
                    stratum: f.stratum(),
                    g: structure.g(),
                }
                .into());
            }
        }
        if !scaling.fits(&model) {
            return Err(Error::ScalingMismatch);
        }
        if model.q() > 0 && !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidTau(tau));
        }
        let sigma_m = build_sigma(&structure, &eta)?;
        let sigma = spd_factorize(&sigma_m)?;
        let whitener = if sigma_m == Matrix::identity(structure.n()) {
            None
        } else {
            Some(sigma.inverse_factor())
        };
        Ok(CriterionConfig {
            factors,
            model,
            structure,
            eta,
            tau,
            scaling,
            sigma,
            whitener,
        })
    }

    /// Builds the config with scaling fitted over [`candidate_set`].
    pub fn with_candidate_scaling(
        factors: Vec<Factor>,
        model: ModelSpec,
        structure: StratumStructure,
        eta: VarianceRatios,
        tau: f64,
    ) -> Result<Self> {
        let scaling = fit_scaling(&candidate_set(&factors), &model)?;
        CriterionConfig::new(factors, model, structure, eta, tau, scaling)
    }

    /// Same problem with different variance ratios.
    pub fn with_eta(&self, eta: VarianceRatios) -> Result<Self> {
        CriterionConfig::new(
            self.factors.clone(),
            self.model.clone(),
            self.structure.clone(),
            eta,
            self.tau,
            self.scaling.clone(),
        )
    }

    /// Same problem with a different τ.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        if self.model.q() > 0 && !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidTau(tau));
        }
        let mut c = self.clone();
        c.tau = tau;
        Ok(c)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn structure(&self) -> &StratumStructure {
        &self.structure
    }

    pub fn eta(&self) -> &VarianceRatios {
        &self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scaling(&self) -> &ScalingMap {
        &self.scaling
    }

    /// Cholesky factorization of Σ.
    pub fn sigma(&self) -> &SpdFactorization {
        &self.sigma
    }

    /// Scaled model matrix `[X_pri | Z]` of a design.
    pub fn scaled_model_matrix(&self, design: &Design) -> Result<Matrix> {
        apply_scaling(design.settings(), &self.model, &self.scaling)
    }

    /// `XᵀΣ⁻¹X + K/τ²`.
    pub fn information_matrix(&self, design: &Design) -> Result<Matrix> {
        let x = self.scaled_model_matrix(design)?;
        let mut m = crate::linalg::gram(&x, &self.sigma)?;
        let p = self.model.p();
        for j in p..self.model.r() {
            m[(j, j)] += 1.0 / (self.tau * self.tau);
        }
        Ok(m)
    }
}

/// Reusable scratch space for repeated criterion evaluations.
pub struct Evaluator<'a> {
    cfg: &'a CriterionConfig,
    primary_only: bool,
    x: Matrix,
    w: Matrix,
    info: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    /// GBD evaluator (D when the model has no potential terms).
    pub fn new(cfg: &'a CriterionConfig) -> Self {
        Evaluator::build(cfg, false)
    }

    /// D evaluator on the primary terms only.
    pub fn primary_only(cfg: &'a CriterionConfig) -> Self {
        Evaluator::build(cfg, true)
    }

    fn build(cfg: &'a CriterionConfig, primary_only: bool) -> Self {
        let n = cfg.structure.n();
        let r = if primary_only { cfg.model.p() } else { cfg.model.r() };
        Evaluator {
            cfg,
            primary_only,
            x: Matrix::zeros(n, r),
            w: Matrix::zeros(n, r),
            info: vec![0.0; r * r],
        }
    }

    pub fn config(&self) -> &'a CriterionConfig {
        self.cfg
    }

    /// `log d` of the design given by `settings`, or [`WORST`].
    pub fn log_d(&mut self, settings: &Matrix) -> f64 {
        let cfg = self.cfg;
        let model = &cfg.model;
        let p = model.p();
        let r = self.x.cols();
        let q = r - p;
        let n = settings.rows();
        debug_assert_eq!(n, self.x.rows());

        for i in 0..n {
            let srow = settings.row(i);
            let xrow = self.x.row_mut(i);
            for (t, term) in model.primary().iter().enumerate() {
                xrow[t] = term.evaluate(srow);
            }
            for c in 0..q {
                let mut v = model.potential()[c].evaluate(srow);
                for k in 0..p {
                    v -= xrow[k] * cfg.scaling.alpha[(k, c)];
                }
                xrow[p + c] = v / cfg.scaling.ranges[c];
            }
        }

        let a = match &cfg.whitener {
            Some(wh) => {
                let w = self.w.as_mut_slice();
                w.fill(0.0);
                let x = self.x.as_slice();
                for i in 0..n {
                    let whrow = wh.row(i);
                    let out = &mut w[i * r..(i + 1) * r];
                    for (k, &c) in whrow[..=i].iter().enumerate() {
                        if c == 0.0 {
                            continue;
                        }
                        for (o, &xv) in out.iter_mut().zip(&x[k * r..(k + 1) * r]) {
                            *o += c * xv;
                        }
                    }
                }
                &self.w
            }
            None => &self.x,
        };

        // lower triangle of AᵀA
        let info = &mut self.info;
        info.fill(0.0);
        for i in 0..n {
            let row = a.row(i);
            for j in 0..r {
                let v = row[j];
                if v == 0.0 {
                    continue;
                }
                let dst = &mut info[j * r..j * r + j + 1];
                for (d, &u) in dst.iter_mut().zip(&row[..=j]) {
                    *d += v * u;
                }
            }
        }
        if !self.primary_only && q > 0 {
            let prior = 1.0 / (cfg.tau * cfg.tau);
            for j in p..r {
                info[j * r + j] += prior;
            }
        }
        match cholesky_in_place(info, r) {
            Ok(ld) => ld / r as f64,
            Err(_) => WORST,
        }
    }
}

/// GBD log-criterion `(1/r)·ln det(XᵀΣ⁻¹X + K/τ²)` of a design.
pub fn gbd_value(design: &Design, cfg: &CriterionConfig) -> f64 {
    Evaluator::new(cfg).log_d(design.settings())
}

/// D log-criterion `(1/p)·ln det(X_priᵀΣ⁻¹X_pri)`; potential terms ignored.
pub fn d_value(design: &Design, cfg: &CriterionConfig) -> f64 {
    Evaluator::primary_only(cfg).log_d(design.settings())
}

/// Log-criterion of an explicit model matrix whose first `p` columns are
/// primary. `tau` is unused when `x` has no potential columns.
pub fn log_criterion(x: &Matrix, sigma: &SpdFactorization, p: usize, tau: f64) -> Result<f64> {
    let mut m = crate::linalg::gram(x, sigma)?;
    let r = x.cols();
    for j in p..r {
        m[(j, j)] += 1.0 / (tau * tau);
    }
    Ok(match spd_factorize(&m) {
        Ok(f) => f.log_det() / r as f64,
        Err(LinalgError::Singular { .. }) => WORST,
        Err(e) => return Err(e.into()),
    })
}

/// Ratio of r-th-root determinants, `exp(log_a − log_best)`.
pub fn efficiency(log_d: f64, best_log_d: f64) -> f64 {
    if log_d == WORST {
        0.0
    } else {
        (log_d - best_log_d).exp()
    }
}

/// Posterior mean and covariance of all `r` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub b: Vec<f64>,
    pub s: Matrix,
}

/// `b = (XᵀΣ⁻¹X + K/τ²)⁻¹XᵀΣ⁻¹y`, `S = (XᵀΣ⁻¹X + K/τ²)⁻¹`.
pub fn posterior_moments(design: &Design, cfg: &CriterionConfig, y: &[f64]) -> Result<PosteriorMoments> {
    let x = cfg.scaled_model_matrix(design)?;
    posterior_from_matrix(&x, &cfg.sigma, cfg.model.p(), cfg.tau, y)
}

/// [`posterior_moments`] for an explicit model matrix whose first `p`
/// columns are primary.
pub fn posterior_from_matrix(
    x: &Matrix,
    sigma: &SpdFactorization,
    p: usize,
    tau: f64,
    y: &[f64],
) -> Result<PosteriorMoments> {
    if y.len() != x.rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: format!("{} responses", x.rows()),
            found: format!("{} responses", y.len()),
        }
        .into());
    }
    let mut info = crate::linalg::gram(x, sigma)?;
    for j in p..x.cols() {
        info[(j, j)] += 1.0 / (tau * tau);
    }
    let f = spd_factorize(&info).map_err(|e| match e {
        LinalgError::Singular { .. } => Error::SingularInformation,
        other => other.into(),
    })?;
    // XᵀΣ⁻¹y
    let sy = sigma.solve_vec(y)?;
    let xt_sy: Vec<f64> = (0..x.cols())
        .map(|j| (0..x.rows()).map(|i| x[(i, j)] * sy[i]).sum())
        .collect();
    Ok(PosteriorMoments {
        b: f.solve_vec(&xt_sy)?,
        s: f.inverse(),
    })
}

/// `3·σ_y` with `σ_y² = Σ η_l`.
pub fn recommend_tau(eta: &VarianceRatios) -> f64 {
    3.0 * eta.sigma_y()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{second_order_terms, TermKind};
    use crate::strata::{split_plot, StratumStructure};
    use approx::assert_relative_eq;

    fn one_factor_grid() -> Design {
        Design::from_rows(&[[-1.0], [0.0], [1.0]]).unwrap()
    }

    fn quad_model() -> ModelSpec {
        ModelSpec::new(vec![Term::intercept(), Term::main(0)], vec![Term::square(0)]).unwrap()
    }

    #[test]
    fn scaling_on_three_point_grid() {
        let map = fit_scaling(&one_factor_grid(), &quad_model()).unwrap();
        assert_relative_eq!(map.alpha()[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(map.alpha()[(1, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(map.ranges()[0], 1.0, epsilon = 1e-14);
        let x = apply_scaling(one_factor_grid().settings(), &quad_model(), &map).unwrap();
        let z = x.column(2);
        for (got, want) in z.iter().zip([1.0 / 3.0, -2.0 / 3.0, 1.0 / 3.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }
        let centre = Design::from_rows(&[[0.0]]).unwrap();
        let x = apply_scaling(centre.settings(), &quad_model(), &map).unwrap();
        assert_relative_eq!(x[(0, 2)], -2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn scaling_on_two_squared_factorial() {
        let cand = Design::from_rows(&[[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]).unwrap();
        let model = ModelSpec::new(
            second_order_terms(2, TermKind::MainEffects),
            vec![Term::interaction(0, 1)],
        )
        .unwrap();
        let map = fit_scaling(&cand, &model).unwrap();
        assert!(map.alpha().max_abs() < 1e-14);
        assert_relative_eq!(map.ranges()[0], 2.0);
        let x = apply_scaling(cand.settings(), &model, &map).unwrap();
        for i in 0..4 {
            let s = cand.settings().row(i);
            assert_relative_eq!(x[(i, 3)], s[0] * s[1] / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_range_square_on_two_levels() {
        let cand = Design::from_rows(&[[-1.0], [1.0]]).unwrap();
        match fit_scaling(&cand, &quad_model()) {
            Err(Error::ZeroRange { index: 0, term }) => assert_eq!(term, Term::square(0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_candidates() {
        let cand = Design::from_rows(&[[1.0], [1.0]]).unwrap();
        let model = ModelSpec::new(vec![Term::intercept(), Term::main(0)], vec![]).unwrap();
        assert!(matches!(fit_scaling(&cand, &model), Err(Error::RankDeficientCandidates)));
    }

    #[test]
    fn scaling_without_potential_terms_is_identity() {
        let model = ModelSpec::new(vec![Term::intercept(), Term::main(0)], vec![]).unwrap();
        let map = fit_scaling(&one_factor_grid(), &model).unwrap();
        let x = apply_scaling(one_factor_grid().settings(), &model, &map).unwrap();
        assert_eq!(x, one_factor_grid().model_matrix(model.primary()).unwrap());
        assert!(matches!(
            apply_scaling(one_factor_grid().settings(), &quad_model(), &map),
            Err(Error::ScalingMismatch)
        ));
    }

    #[test]
    fn candidate_set_is_full_factorial() {
        let fs = vec![Factor::three_level("A", 1), Factor::two_level("B", 1)];
        let c = candidate_set(&fs);
        assert_eq!(c.n(), 6);
        assert_eq!(c.settings().row(0), &[-1.0, -1.0]);
        assert_eq!(c.settings().row(5), &[1.0, 1.0]);
    }

    #[test]
    fn candidate_set_subsamples_large_factorials() {
        let fs: Vec<_> = (0..12).map(|i| Factor::three_level(format!("F{i}"), 1)).collect();
        let c = candidate_set(&fs);
        assert_eq!(c.n(), CANDIDATE_CAP);
        assert_eq!(c, candidate_set(&fs));
        for j in 0..12 {
            assert_eq!(c.levels_used(j), vec![-1.0, 0.0, 1.0]);
        }
    }

    fn single_stratum_cfg(model: ModelSpec, n: usize, tau: f64) -> CriterionConfig {
        let m = 1 + model.primary().iter().chain(model.potential()).filter_map(Term::max_factor).max().unwrap_or(0);
        let factors: Vec<_> = (0..m).map(|i| Factor::three_level(format!("x{i}"), 1)).collect();
        CriterionConfig::with_candidate_scaling(
            factors,
            model,
            StratumStructure::completely_randomized(n).unwrap(),
            VarianceRatios::unit(1),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn gbd_of_orthogonal_two_run_design() {
        let model = ModelSpec::new(vec![Term::intercept(), Term::main(0)], vec![]).unwrap();
        let cfg = single_stratum_cfg(model, 2, 1.0);
        let d = Design::from_rows(&[[-1.0], [1.0]]).unwrap();
        // XᵀX = 2I
        assert_relative_eq!(gbd_value(&d, &cfg), 2f64.ln(), epsilon = 1e-14);

        let x = Matrix::identity(2);
        let sigma = spd_factorize(&Matrix::identity(2)).unwrap();
        assert_eq!(log_criterion(&x, &sigma, 2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn one_run_intercept_plus_potential_by_hand() {
        let sigma = spd_factorize(&Matrix::identity(1)).unwrap();
        for &(z, tau) in &[(0.3, 2.0f64), (-0.7, 0.5), (1.0 / 3.0, 10.0)] {
            let x = Matrix::from_rows(&[[1.0, z]]).unwrap();
            // det [[1, z], [z, z² + 1/τ²]] = 1/τ²
            let want = 0.5 * (1.0 / (tau * tau)).ln();
            assert_relative_eq!(log_criterion(&x, &sigma, 1, tau).unwrap(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn d_value_of_two_squared_factorial() {
        let model = ModelSpec::new(second_order_terms(2, TermKind::MainEffects), vec![]).unwrap();
        let cfg = single_stratum_cfg(model, 4, 1.0);
        let d = Design::from_rows(&[[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]).unwrap();
        assert_relative_eq!(d_value(&d, &cfg), 4f64.ln(), epsilon = 1e-14);
        let dup = Design::from_rows(&[[1.0, 1.0], [1.0, 1.0], [-1.0, -1.0], [-1.0, -1.0]]).unwrap();
        assert_eq!(d_value(&dup, &cfg), WORST);
    }

    #[test]
    fn evaluator_matches_dense_route() {
        let fs: Vec<_> = (0..3).map(|i| Factor::three_level(format!("x{i}"), if i == 0 { 1 } else { 2 })).collect();
        let model = ModelSpec::new(
            second_order_terms(3, TermKind::MainEffects),
            second_order_terms(3, TermKind::SquaresAndInteractions),
        )
        .unwrap();
        let cfg = CriterionConfig::with_candidate_scaling(
            fs,
            model,
            split_plot(3, 3).unwrap(),
            VarianceRatios::with_upper(&[2.5]).unwrap(),
            3.0,
        )
        .unwrap();
        let d = Design::from_rows(&[
            [1.0, 1.0, -1.0],
            [1.0, 0.0, 1.0],
            [1.0, -1.0, 0.0],
            [0.0, 1.0, 1.0],
            [0.0, -1.0, -1.0],
            [0.0, 0.0, 0.0],
            [-1.0, 1.0, 0.0],
            [-1.0, -1.0, 1.0],
            [-1.0, 0.0, -1.0],
        ])
        .unwrap();
        let fast = gbd_value(&d, &cfg);
        let dense = spd_factorize(&cfg.information_matrix(&d).unwrap()).unwrap().log_det() / 10.0;
        assert_relative_eq!(fast, dense, epsilon = 1e-12);
        let x = cfg.scaled_model_matrix(&d).unwrap();
        assert_relative_eq!(log_criterion(&x, cfg.sigma(), 4, 3.0).unwrap(), fast, epsilon = 1e-12);
    }

    #[test]
    fn posterior_collapses_to_least_squares() {
        let model = ModelSpec::new(vec![Term::intercept(), Term::main(0)], vec![]).unwrap();
        let cfg = single_stratum_cfg(model, 2, 1.0);
        let d = Design::from_rows(&[[-1.0], [1.0]]).unwrap();
        let post = posterior_moments(&d, &cfg, &[1.0, 5.0]).unwrap();
        // X = [[1,-1],[1,1]], b = X⁻¹y
        assert_relative_eq!(post.b[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(post.b[1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(post.s[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(post.s[(0, 1)], 0.0, epsilon = 1e-14);
        assert!(posterior_moments(&d, &cfg, &[1.0]).is_err());
    }

    #[test]
    fn posterior_singular_information() {
        let model = ModelSpec::new(vec![Term::intercept(), Term::main(0)], vec![]).unwrap();
        let cfg = single_stratum_cfg(model, 2, 1.0);
        let d = Design::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(posterior_moments(&d, &cfg, &[1.0, 2.0]), Err(Error::SingularInformation));
    }

    #[test]
    fn recommended_tau() {
        assert_eq!(recommend_tau(&VarianceRatios::new(vec![10.0, 1.0]).unwrap()), 3.0 * 11f64.sqrt());
        assert_eq!(recommend_tau(&VarianceRatios::new(vec![10.0, 10.0, 1.0]).unwrap()), 3.0 * 21f64.sqrt());
        assert_eq!(recommend_tau(&VarianceRatios::unit(1)), 3.0);
    }

    #[test]
    fn config_rejects_bad_inputs() {
        let fs = vec![Factor::three_level("A", 3)];
        let model = quad_model();
        let r = CriterionConfig::with_candidate_scaling(
            fs,
            model.clone(),
            split_plot(2, 2).unwrap(),
            VarianceRatios::unit(2),
            1.0,
        );
        assert!(matches!(r, Err(Error::Design(_))));

        let fs = vec![Factor::three_level("A", 1)];
        let r = CriterionConfig::with_candidate_scaling(
            fs,
            model,
            split_plot(2, 2).unwrap(),
            VarianceRatios::unit(2),
            0.0,
        );
        assert_eq!(r.unwrap_err(), Error::InvalidTau(0.0));
    }
}

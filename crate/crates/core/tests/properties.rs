mod common;

use proptest::prelude::*;

use gbd_core::analysis::{efficiency_table, submodel_variances};
use gbd_core::linalg::{solve_spd, spd_factorize};
use gbd_core::model::{build_k, model_matrix, second_order_terms, TermKind};
use gbd_core::search::{optimize, random_start, SearchConfig};
use gbd_core::strata::{build_sigma, split_plot};
use gbd_core::{gbd_value, CriterionConfig, Design, Factor, Matrix, ModelSpec, StratumStructure, Term, VarianceRatios};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v).unwrap())
}

fn spd(n: usize) -> impl Strategy<Value = Matrix> {
    (matrix(n + 2, n), 1e-3f64..1.0).prop_map(move |(a, eps)| {
        let mut m = a.crossprod();
        for i in 0..n {
            m[(i, i)] += eps;
        }
        m
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

/// Structure over `n` runs with up to two blocking strata.
fn structure(n: usize) -> impl Strategy<Value = StratumStructure> {
    let labels = (1usize..=n.min(4)).prop_flat_map(move |b| {
        permutation(n).prop_map(move |p| p.into_iter().map(|i| i % b).collect::<Vec<_>>())
    });
    prop::collection::vec(labels, 0..=2).prop_map(move |bl| StratumStructure::new(n, bl).unwrap())
}

fn two_level_design(n: usize, m: usize) -> impl Strategy<Value = Design> {
    prop::collection::vec(prop::bool::ANY, n * m).prop_map(move |b| {
        Design::new(Matrix::from_fn(n, m, |i, j| if b[i * m + j] { 1.0 } else { -1.0 }))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factorization_round_trip(m in (1usize..=12).prop_flat_map(spd)) {
        let f = spd_factorize(&m).unwrap();
        let err = f.reconstruct().max_abs_diff(&m);
        prop_assert!(err <= 1e-8 * m.max_abs().max(1.0));
    }

    #[test]
    fn scaled_identity_log_det(n in 1usize..=30, c in 1e-3f64..1e3) {
        let f = spd_factorize(&Matrix::identity(n).scale(c)).unwrap();
        prop_assert!((f.log_det() - n as f64 * c.ln()).abs() <= 1e-10 * (1.0 + (n as f64 * c.ln()).abs()));
    }

    #[test]
    fn solve_recovers_rhs((m, b) in (1usize..=50).prop_flat_map(|n| (spd(n), matrix(n, 2)))) {
        let x = solve_spd(&spd_factorize(&m).unwrap(), &b).unwrap();
        let back = m.matmul(&x);
        prop_assert!(back.max_abs_diff(&b) <= 1e-8 * b.max_abs().max(1.0) * m.max_abs().max(1.0));
    }

    #[test]
    fn main_effect_columns_are_signs(d in (1usize..=10, 1usize..=5).prop_flat_map(|(n, m)| two_level_design(n, m))) {
        let x = model_matrix(d.settings(), &second_order_terms(d.m(), TermKind::MainEffects)).unwrap();
        for i in 0..x.rows() {
            prop_assert_eq!(x[(i, 0)], 1.0);
            for j in 1..x.cols() {
                prop_assert!(x[(i, j)] == 1.0 || x[(i, j)] == -1.0);
            }
        }
    }

    #[test]
    fn model_matrix_follows_row_permutation(
        (d, perm) in (2usize..=10).prop_flat_map(|n| (two_level_design(n, 3), permutation(n)))
    ) {
        let terms = second_order_terms(3, TermKind::FullSecondOrder);
        let x = d.model_matrix(&terms).unwrap();
        let px = d.permute_runs(&perm).model_matrix(&terms).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(px.row(i), x.row(p));
        }
    }

    #[test]
    fn k_is_idempotent(p in 0usize..6, q in 0usize..6) {
        let k = build_k(p, q);
        prop_assert_eq!(k.matmul(&k), k);
    }

    #[test]
    fn indicator_products_mark_shared_units(s in (1usize..=12).prop_flat_map(structure)) {
        for l in 1..=s.g() {
            let u = s.indicator_matrix(l).unwrap();
            for i in 0..u.rows() {
                prop_assert_eq!(u.row(i).iter().sum::<f64>(), 1.0);
            }
            let uu = u.matmul(&u.transpose());
            let map = s.unit_of_run(l);
            for i in 0..s.n() {
                for j in 0..s.n() {
                    prop_assert_eq!(uu[(i, j)], if map[i] == map[j] { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn sigma_is_spd_and_vanishes_to_identity(
        s in (1usize..=12).prop_flat_map(structure),
        level in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let up = vec![level; s.g() - 1];
        prop_assert!(spd_factorize(&build_sigma(&s, &VarianceRatios::with_upper(&up).unwrap()).unwrap()).is_ok());
        let tiny = VarianceRatios::with_upper(&vec![1e-12; s.g() - 1]).unwrap();
        prop_assert!(build_sigma(&s, &tiny).unwrap().max_abs_diff(&Matrix::identity(s.n())) < 1e-10);
    }
}

fn split_plot_cfg(eta: f64, tau: f64) -> CriterionConfig {
    CriterionConfig::with_candidate_scaling(
        vec![Factor::three_level("w", 1), Factor::three_level("s1", 2), Factor::three_level("s2", 2)],
        ModelSpec::new(
            second_order_terms(3, TermKind::MainEffects),
            second_order_terms(3, TermKind::SquaresAndInteractions),
        )
        .unwrap(),
        split_plot(3, 3).unwrap(),
        VarianceRatios::with_upper(&[eta]).unwrap(),
        tau,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gbd_is_invariant_to_run_relabelling(
        seed in any::<u64>(),
        perm in permutation(9),
        eta in 0.1f64..10.0,
        tau in 0.5f64..10.0,
    ) {
        let cfg = split_plot_cfg(eta, tau);
        let d = random_start(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let pcfg = CriterionConfig::new(
            cfg.factors().to_vec(),
            cfg.model().clone(),
            cfg.structure().permute_runs(&perm).unwrap(),
            cfg.eta().clone(),
            tau,
            cfg.scaling().clone(),
        )
        .unwrap();
        let (a, b) = (gbd_value(&d, &cfg), gbd_value(&d.permute_runs(&perm), &pcfg));
        prop_assert!(a == b || (a - b).abs() <= 1e-10);
    }

    #[test]
    fn random_starts_are_valid(seed in any::<u64>()) {
        let cfg = split_plot_cfg(1.0, 3.0);
        let d = random_start(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(d.validate(cfg.factors(), cfg.structure()).is_ok());
    }

    #[test]
    fn search_is_deterministic(seed in any::<u64>(), workers in 2usize..=4) {
        let cfg = split_plot_cfg(2.0, 5.0);
        let a = optimize(&cfg, &SearchConfig { t_total: 6, seed, workers: 1 }).unwrap();
        let b = optimize(&cfg, &SearchConfig { t_total: 6, seed, workers }).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.log_d - gbd_value(&a.design, &cfg)).abs() <= 1e-10);
    }

    #[test]
    fn efficiencies_ignore_a_common_shift(seeds in prop::collection::vec(any::<u64>(), 2..5)) {
        // a common factor on every d is a common shift of every log d
        let cfg = split_plot_cfg(1.0, 3.0);
        let designs: Vec<(String, Design)> = seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| (format!("d{i}"), random_start(&cfg, &mut ChaCha8Rng::seed_from_u64(s))))
            .collect();
        let scen = vec![("main".to_string(), cfg.model().primary_only())];
        let base = efficiency_table(&designs, &scen, cfg.factors(), cfg.structure(), &VarianceRatios::with_upper(&[1.0]).unwrap(), 3.0);
        let Ok(base) = base else { return Ok(()) };
        let scaled_rows: Vec<f64> = base.log_d[0].iter().map(|v| v + 0.7).collect();
        let best = scaled_rows.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, v) in scaled_rows.iter().enumerate() {
            let e = gbd_core::efficiency(*v, best);
            prop_assert!((e - base.values[0][a]).abs() <= 1e-12);
        }
    }

    #[test]
    fn variances_follow_term_order(seed in any::<u64>(), perm in permutation(6)) {
        let cfg = split_plot_cfg(1.5, 3.0);
        let d = random_start(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let terms: Vec<Term> = second_order_terms(3, TermKind::MainEffects)
            .into_iter()
            .chain([Term::interaction(0, 1), Term::square(1)])
            .collect();
        let shuffled: Vec<Term> = perm.iter().map(|&i| terms[i].clone()).collect();
        let eta = VarianceRatios::with_upper(&[1.5]).unwrap();
        let a = submodel_variances(&d, cfg.structure(), &eta, &terms, &[]).unwrap();
        let b = submodel_variances(&d, cfg.structure(), &eta, &shuffled, &[]).unwrap();
        prop_assert_eq!(a.estimable, b.estimable);
        if let (Some(va), Some(vb)) = (a.variances, b.variances) {
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((vb[i] - va[p]).abs() <= 1e-9 * va[p].max(1.0));
            }
        }
    }

    #[test]
    fn adding_terms_never_lowers_variances(seed in any::<u64>(), eta in 0.1f64..10.0) {
        let cfg = split_plot_cfg(eta, 3.0);
        let d = random_start(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let ratios = VarianceRatios::with_upper(&[eta]).unwrap();
        let pri = second_order_terms(3, TermKind::MainEffects);
        let small = submodel_variances(&d, cfg.structure(), &ratios, &pri, &[Term::interaction(1, 2)]).unwrap();
        let large = submodel_variances(
            &d,
            cfg.structure(),
            &ratios,
            &pri,
            &[Term::interaction(1, 2), Term::square(2), Term::interaction(0, 2)],
        )
        .unwrap();
        if let (Some(vs), Some(vl)) = (small.variances, large.variances) {
            for (a, b) in vs.iter().zip(&vl) {
                prop_assert!(*a <= *b + 1e-10);
            }
        }
    }
}

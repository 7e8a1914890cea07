#![allow(dead_code)]

use std::path::PathBuf;

use gbd_core::model::second_order_terms;
use gbd_core::strata::{split_plot, staggered_level, strip_plot};
use gbd_core::{Design, Factor, Matrix, ModelSpec, StratumStructure, TermKind};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Reads a bundled design CSV (header row of factor names).
pub fn load_design(name: &str) -> Design {
    let path = data_dir().join("designs").join(format!("{name}.csv"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect();
    Design::from_rows(&rows).unwrap()
}

pub struct Problem {
    pub factors: Vec<Factor>,
    pub structure: StratumStructure,
}

/// Three whole plots of three runs; A is the whole-plot factor.
pub fn split_plot_problem() -> Problem {
    Problem {
        factors: vec![
            Factor::three_level("A", 1),
            Factor::three_level("B", 2),
            Factor::three_level("C", 2),
            Factor::three_level("D", 2),
        ],
        structure: split_plot(3, 3).unwrap(),
    }
}

pub fn split_plot_scenarios() -> Vec<(String, ModelSpec)> {
    let pri = second_order_terms(4, TermKind::MainEffects);
    [
        ("i", vec![]),
        ("ii", second_order_terms(4, TermKind::Squares)),
        ("iii", second_order_terms(4, TermKind::Interactions)),
        ("iv", second_order_terms(4, TermKind::SquaresAndInteractions)),
    ]
    .into_iter()
    .map(|(l, pot)| (l.to_string(), ModelSpec::new(pri.clone(), pot).unwrap()))
    .collect()
}

/// Row-column incidence of the 24-run strip-plot structure.
pub fn strip_incidence() -> Vec<Vec<bool>> {
    let rows = [
        [1, 1, 1, 1, 1, 1, 0, 0],
        [1, 1, 1, 1, 0, 0, 1, 1],
        [1, 1, 0, 0, 1, 1, 1, 1],
        [0, 0, 1, 1, 1, 1, 1, 1],
    ];
    rows.iter().map(|r| r.iter().map(|&c| c == 1).collect()).collect()
}

pub fn strip_plot_problem() -> Problem {
    let mut factors = vec![Factor::two_level("xR1", 1), Factor::two_level("xR2", 1)];
    factors.extend((1..=5).map(|i| Factor::two_level(format!("xC{i}"), 2)));
    Problem {
        factors,
        structure: strip_plot(&strip_incidence()).unwrap(),
    }
}

/// Five class-I plots of four runs, class-II plots shifted by two runs.
pub fn staggered_problem() -> Problem {
    Problem {
        factors: vec![
            Factor::three_level("w", 1),
            Factor::three_level("s", 2),
            Factor::three_level("t1", 3),
            Factor::three_level("t2", 3),
            Factor::three_level("t3", 3),
        ],
        structure: staggered_level(5, 4).unwrap(),
    }
}

pub fn staggered_model() -> ModelSpec {
    let mut pri = second_order_terms(5, TermKind::MainEffects);
    pri.extend(second_order_terms(5, TermKind::Interactions));
    ModelSpec::new(pri, second_order_terms(5, TermKind::Squares)).unwrap()
}

/// Log-determinant by Gaussian elimination with partial pivoting, or `None`
/// if the matrix is numerically singular (a pivot below `1e-10·max|m|`) or
/// has a negative determinant.
pub fn log_det_ge(m: &Matrix) -> Option<f64> {
    let n = m.rows();
    let tol = 1e-10 * m.max_abs();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut sign = 1.0;
    let mut acc = 0.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))?;
        if a[piv][c].abs() <= tol {
            return None;
        }
        if piv != c {
            a.swap(piv, c);
            sign = -sign;
        }
        let d = a[c][c];
        if d < 0.0 {
            sign = -sign;
        }
        acc += d.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / d;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    (sign > 0.0).then_some(acc)
}

/// Solves `m·X = rhs` by Gauss-Jordan elimination with partial pivoting.
pub fn solve_ge(m: &Matrix, rhs: &Matrix) -> Matrix {
    let n = m.rows();
    let k = rhs.cols();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| m.row(i).iter().chain(rhs.row(i)).copied().collect())
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(piv, c);
        let d = a[c][c];
        assert!(d != 0.0, "singular system");
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                if f != 0.0 {
                    for j in 0..n + k {
                        a[r][j] -= f * a[c][j];
                    }
                }
            }
        }
    }
    Matrix::from_fn(n, k, |i, j| a[i][n + j])
}

/// Every design that respects the structure, by mixed-radix counting over
/// (stratum unit, factor) coordinates.
pub fn all_valid_designs(factors: &[Factor], structure: &StratumStructure) -> Vec<Design> {
    let mut coords = Vec::new();
    for (j, f) in factors.iter().enumerate() {
        for runs in structure.units(f.stratum()) {
            coords.push((j, runs.clone()));
        }
    }
    let radix: Vec<usize> = coords.iter().map(|(j, _)| factors[*j].levels().len()).collect();
    let total: usize = radix.iter().product();
    assert!(total <= 4096, "{total} designs is too many to enumerate");
    (0..total)
        .map(|mut code| {
            let mut s = Matrix::zeros(structure.n(), factors.len());
            for ((j, runs), r) in coords.iter().zip(&radix) {
                let v = factors[*j].levels()[code % r];
                code /= r;
                for &i in runs {
                    s[(i, *j)] = v;
                }
            }
            Design::new(s)
        })
        .collect()
}

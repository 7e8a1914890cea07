//! Multi-start coordinate exchange.
//!
//! Each restart draws a random design that respects the stratum structure,
//! then sweeps every (stratum, unit, factor) coordinate, trying each declared
//! level on all runs of the unit and keeping strict improvements. Sweeps
//! repeat until one makes no change. The best design over all restarts wins.
//!
//! Restart `t` draws from its own ChaCha stream keyed by `(seed, t)`, so the
//! result does not depend on how restarts are spread over worker threads.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::criterion::{CriterionConfig, Evaluator, WORST};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::Design;

const RELATIVE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub t_total: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            t_total: 100_000,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub design: Design,
    pub log_d: f64,
    pub restarts_completed: usize,
    /// Entry `k` counts restarts that made exactly `k` improving passes.
    pub improving_passes_histogram: Vec<usize>,
    pub seed: u64,
    pub t_total: usize,
}

/// Snapshot handed to the progress hook after each restart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub restarts_completed: usize,
    pub t_total: usize,
    pub best_log_d: f64,
}

/// Outcome of a single restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub design: Design,
    pub log_d: f64,
    pub improving_passes: usize,
    /// `log_d` of the start followed by its value after every pass.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Coordinate {
    stratum: usize,
    unit: usize,
    factor: usize,
}

fn coordinates(cfg: &CriterionConfig) -> Vec<Coordinate> {
    let s = cfg.structure();
    let mut out = Vec::new();
    for stratum in 1..=s.g() {
        for unit in 0..s.unit_count(stratum) {
            for (factor, f) in cfg.factors().iter().enumerate() {
                if f.stratum() == stratum {
                    out.push(Coordinate { stratum, unit, factor });
                }
            }
        }
    }
    out
}

fn set_unit(settings: &mut Matrix, runs: &[usize], factor: usize, value: f64) {
    for &i in runs {
        settings[(i, factor)] = value;
    }
}

/// `candidate` beats `current` by more than the relative tolerance.
fn improves(candidate: f64, current: f64) -> bool {
    if current == WORST {
        return candidate > WORST;
    }
    candidate > current + RELATIVE_EPS * current.abs().max(1.0)
}

/// Larger `log_d` wins; ties go to the lexicographically smaller design.
fn better(a: (&Design, f64), b: (&Design, f64)) -> bool {
    match a.1.partial_cmp(&b.1) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.0.lex_cmp(b.0) == Ordering::Less,
    }
}

/// Random design with every unit of stratum `l` holding one uniformly drawn
/// level of each stratum-`l` factor.
pub fn random_start<R: Rng + ?Sized>(cfg: &CriterionConfig, rng: &mut R) -> Design {
    let s = cfg.structure();
    let mut settings = Matrix::zeros(s.n(), cfg.factors().len());
    for (j, f) in cfg.factors().iter().enumerate() {
        let levels = f.levels();
        for runs in s.units(f.stratum()) {
            let v = levels[rng.gen_range(0..levels.len())];
            set_unit(&mut settings, runs, j, v);
        }
    }
    Design::new(settings)
}

fn pass_in_place(
    ev: &mut Evaluator<'_>,
    coords: &[Coordinate],
    settings: &mut Matrix,
    d_cur: &mut f64,
) -> bool {
    let cfg = ev.config();
    let s = cfg.structure();
    let mut improved = false;
    for c in coords {
        let runs = &s.units(c.stratum)[c.unit];
        let current = settings[(runs[0], c.factor)];
        let mut keep = current;
        for &level in cfg.factors()[c.factor].levels() {
            if level == keep {
                continue;
            }
            set_unit(settings, runs, c.factor, level);
            let d = ev.log_d(settings);
            if improves(d, *d_cur) {
                *d_cur = d;
                keep = level;
                improved = true;
            }
        }
        set_unit(settings, runs, c.factor, keep);
        debug_assert!(Design::new(settings.clone()).validate(cfg.factors(), s).is_ok());
    }
    improved
}

/// One sweep over all coordinates. Returns the new design and whether any
/// exchange was accepted.
pub fn exchange_pass(design: &Design, cfg: &CriterionConfig) -> (Design, bool) {
    let mut ev = Evaluator::new(cfg);
    let mut settings = design.settings().clone();
    let mut d_cur = ev.log_d(&settings);
    let improved = pass_in_place(&mut ev, &coordinates(cfg), &mut settings, &mut d_cur);
    (Design::new(settings), improved)
}

/// Runs exchange passes from `start` until a pass makes no change.
pub fn climb(start: Design, cfg: &CriterionConfig) -> RestartOutcome {
    let mut ev = Evaluator::new(cfg);
    climb_with(&mut ev, &coordinates(cfg), start)
}

fn climb_with(ev: &mut Evaluator<'_>, coords: &[Coordinate], start: Design) -> RestartOutcome {
    let mut settings = start.into_settings();
    let mut d_cur = ev.log_d(&settings);
    let mut trace = vec![d_cur];
    let mut improving_passes = 0;
    while pass_in_place(ev, coords, &mut settings, &mut d_cur) {
        improving_passes += 1;
        trace.push(d_cur);
    }
    trace.push(d_cur);
    RestartOutcome {
        design: Design::new(settings),
        log_d: d_cur,
        improving_passes,
        trace,
    }
}

fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Restart number `index` (0-based) of a search seeded with `seed`.
pub fn run_restart(cfg: &CriterionConfig, seed: u64, index: usize) -> RestartOutcome {
    let start = random_start(cfg, &mut restart_rng(seed, index));
    climb(start, cfg)
}

#[derive(Debug, Clone)]
struct Best {
    design: Design,
    log_d: f64,
    histogram: Vec<usize>,
    count: usize,
}

impl Best {
    fn from_outcome(o: RestartOutcome) -> Self {
        let mut histogram = vec![0; o.improving_passes + 1];
        histogram[o.improving_passes] = 1;
        Best {
            design: o.design,
            log_d: o.log_d,
            histogram,
            count: 1,
        }
    }

    fn merge(self, other: Best) -> Best {
        let (mut keep, drop) = if better((&other.design, other.log_d), (&self.design, self.log_d)) {
            (other, self)
        } else {
            (self, other)
        };
        if keep.histogram.len() < drop.histogram.len() {
            keep.histogram.resize(drop.histogram.len(), 0);
        }
        for (a, b) in keep.histogram.iter_mut().zip(&drop.histogram) {
            *a += b;
        }
        keep.count += drop.count;
        keep
    }
}

/// Runs `t_total` restarts and returns the best design found.
pub fn optimize(cfg: &CriterionConfig, scfg: &SearchConfig) -> Result<SearchResult> {
    optimize_with_progress(cfg, scfg, None)
}

/// [`optimize`] with a hook called after every completed restart.
pub fn optimize_with_progress(
    cfg: &CriterionConfig,
    scfg: &SearchConfig,
    progress: Option<&(dyn Fn(Progress) + Sync)>,
) -> Result<SearchResult> {
    if scfg.t_total == 0 {
        return Err(Error::Invalid("t_total must be at least 1".into()));
    }
    if scfg.workers == 0 {
        return Err(Error::Invalid("workers must be at least 1".into()));
    }
    let coords = coordinates(cfg);
    let done = AtomicUsize::new(0);
    let best_seen = Mutex::new(WORST);
    let report = |log_d: f64| {
        if let Some(hook) = progress {
            let n = done.fetch_add(1, AtomicOrdering::Relaxed) + 1;
            let mut b = best_seen.lock().unwrap_or_else(|e| e.into_inner());
            if log_d > *b {
                *b = log_d;
            }
            hook(Progress {
                restarts_completed: n,
                t_total: scfg.t_total,
                best_log_d: *b,
            });
        }
    };
    let one = |ev: &mut Evaluator<'_>, t: usize| {
        let start = random_start(cfg, &mut restart_rng(scfg.seed, t));
        let o = climb_with(ev, &coords, start);
        report(o.log_d);
        Best::from_outcome(o)
    };

    let best = if scfg.workers == 1 {
        let mut ev = Evaluator::new(cfg);
        (0..scfg.t_total)
            .map(|t| one(&mut ev, t))
            .reduce(Best::merge)
            .expect("t_total >= 1")
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(scfg.workers)
            .build()
            .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(|| {
            (0..scfg.t_total)
                .into_par_iter()
                .map_init(|| Evaluator::new(cfg), |ev, t| one(ev, t))
                .reduce_with(Best::merge)
                .expect("t_total >= 1")
        })
    };
    Ok(SearchResult {
        design: best.design,
        log_d: best.log_d,
        restarts_completed: best.count,
        improving_passes_histogram: best.histogram,
        seed: scfg.seed,
        t_total: scfg.t_total,
    })
}

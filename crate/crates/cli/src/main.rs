//! `gbd`: search for and compare multistratum designs under the D and
//! generalized Bayesian D criteria.

mod io;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use gbd_core::analysis::{
    efficiency_table, eta_grid, overall_variance_curve, sensitivity_sweep, submodel_variances, Sampling, TauRule,
};
use gbd_core::search::{optimize_with_progress, Progress};
use gbd_core::{CriterionConfig, Design, Evaluator, Term, WORST};

use io::{design_csv, design_label, fmt_g, num, read_design, Format, Outputs, Table};
use spec::{Problem, SpecErrors};

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Spec(#[from] SpecErrors),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Singular(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Spec(_) | CliError::Input(_) => 2,
            CliError::Singular(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

impl From<gbd_core::Error> for CliError {
    fn from(e: gbd_core::Error) -> Self {
        match e {
            gbd_core::Error::AllSingular { .. } => CliError::Singular(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gbd", version, about = "Optimal multistratum designs under the generalized Bayesian D criterion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Problem specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; overrides `outputs.dir` in the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct WithDesigns {
    #[command(flatten)]
    common: Common,
    /// Design CSV; repeat for several designs.
    #[arg(long = "design", required = true)]
    designs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the coordinate-exchange search and write the best design.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Overrides `search.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `search.workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `search.t_total`.
        #[arg(long)]
        t_total: Option<usize>,
        /// Suppress progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Check designs against the spec and report their criterion values.
    Evaluate(WithDesigns),
    /// Efficiency of each design under each scenario.
    Compare(WithDesigns),
    /// Coefficient variances of submodels adding potential terms.
    Variances {
        #[command(flatten)]
        designs: WithDesigns,
        /// Largest number of potential terms added to the primary terms.
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Overall coefficient variances over submodels with k potential terms.
    Curve {
        #[command(flatten)]
        designs: WithDesigns,
        /// Largest k (default: min(5, number of potential terms)).
        #[arg(long)]
        k_max: Option<usize>,
        /// Seed for sampling submodels when there are too many.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Efficiency tables over a grid of variance ratios.
    Sensitivity {
        #[command(flatten)]
        designs: WithDesigns,
        /// Values tried for each non-run stratum's variance ratio.
        #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
        eta_grid: Vec<f64>,
        /// Sets tau to this multiple of sigma_y at every grid point.
        #[arg(long)]
        tau_ratio: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Optimize {
            common,
            seed,
            workers,
            t_total,
            quiet,
        } => cmd_optimize(&common, seed, workers, t_total, quiet),
        Command::Evaluate(d) => cmd_evaluate(&d),
        Command::Compare(d) => cmd_compare(&d),
        Command::Variances { designs, k_max } => cmd_variances(&designs, k_max),
        Command::Curve { designs, k_max, seed } => cmd_curve(&designs, k_max, seed),
        Command::Sensitivity {
            designs,
            eta_grid,
            tau_ratio,
        } => cmd_sensitivity(&designs, &eta_grid, tau_ratio),
    }
}

fn out_dir(common: &Common, problem: &Problem) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| problem.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn table_name(stem: &str, format: Format) -> String {
    match format {
        Format::Csv => format!("{stem}.csv"),
        Format::Json => format!("{stem}.json"),
    }
}

fn load_designs(paths: &[PathBuf], problem: &Problem) -> Result<Vec<(String, Design)>, CliError> {
    let mut out = Vec::with_capacity(paths.len());
    let mut errors = Vec::new();
    for p in paths {
        match read_design(p, &problem.factors, &problem.structure) {
            Ok(d) => out.push((design_label(p), d)),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Input(errors.join("\n")))
    }
}

fn criterion_name(problem: &Problem) -> &'static str {
    if problem.model.q() == 0 {
        "D"
    } else {
        "GBD"
    }
}

fn main_config(problem: &Problem) -> Result<CriterionConfig, CliError> {
    Ok(CriterionConfig::with_candidate_scaling(
        problem.factors.clone(),
        problem.model.clone(),
        problem.structure.clone(),
        problem.eta.clone(),
        problem.tau(),
    )?)
}

fn labels(problem: &Problem, terms: &[Term]) -> Value {
    Value::from(problem.term_labels(terms))
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        say!("wrote {}", p.display());
    }
}

fn cmd_optimize(
    common: &Common,
    seed: Option<u64>,
    workers: Option<usize>,
    t_total: Option<usize>,
    quiet: bool,
) -> Result<(), CliError> {
    let mut problem = spec::load(&common.spec)?;
    if let Some(s) = seed {
        problem.search.seed = s;
    }
    if let Some(w) = workers {
        problem.search.workers = w;
    }
    if let Some(t) = t_total {
        problem.search.t_total = t;
    }
    if problem.search.workers == 0 || problem.search.t_total == 0 {
        return Err(CliError::Input("--workers and --t-total must be at least 1".into()));
    }
    let cfg = main_config(&problem)?;
    let dir = out_dir(common, &problem);

    let step = (problem.search.t_total / 20).max(1);
    let hook = |p: Progress| {
        if p.restarts_completed.is_multiple_of(step) || p.restarts_completed == p.t_total {
            eprintln!(
                "restart {}/{}  best log d {}",
                p.restarts_completed,
                p.t_total,
                fmt_g(p.best_log_d)
            );
        }
    };
    let started = Instant::now();
    let res = optimize_with_progress(&cfg, &problem.search, if quiet { None } else { Some(&hook) })?;
    let elapsed = started.elapsed().as_secs_f64();
    if res.log_d == WORST {
        return Err(CliError::Singular(format!(
            "all {} restarts ended in singular designs",
            res.restarts_completed
        )));
    }

    let design_path = dir.join("design.csv");
    let result = json!({
        "criterion": criterion_name(&problem),
        "log_d": num(res.log_d),
        "d": num(res.log_d.exp()),
        "r": problem.model.r(),
        "p": problem.model.p(),
        "q": problem.model.q(),
        "tau": num(problem.tau()),
        "eta": problem.eta.as_slice().iter().map(|&e| num(e)).collect::<Vec<_>>(),
        "seed": res.seed,
        "t_total": res.t_total,
        "workers": problem.search.workers,
        "restarts_completed": res.restarts_completed,
        "improving_passes_histogram": res.improving_passes_histogram,
        "elapsed": num(elapsed),
        "primary_terms": labels(&problem, problem.model.primary()),
        "potential_terms": labels(&problem, problem.model.potential()),
        "design": design_path.display().to_string(),
    });
    let mut outputs = Outputs::default();
    outputs.add(design_path, design_csv(&res.design, &problem.factors));
    let mut text = serde_json::to_string_pretty(&result).expect("serializable");
    text.push('\n');
    outputs.add(dir.join("result.json"), text);
    say!(
        "{} log d = {}  d = {}  ({} restarts, seed {}, {:.1} s)",
        criterion_name(&problem),
        fmt_g(res.log_d),
        fmt_g(res.log_d.exp()),
        res.restarts_completed,
        res.seed,
        elapsed
    );
    report_written(&outputs.write()?);
    Ok(())
}

fn cmd_evaluate(args: &WithDesigns) -> Result<(), CliError> {
    let problem = spec::load(&args.common.spec)?;
    let designs = load_designs(&args.designs, &problem)?;
    let cfg = main_config(&problem)?;
    let mut ev = Evaluator::new(&cfg);
    let mut table = Table::new(
        ["design", "criterion", "log_d", "d", "tau", "valid"]
            .map(String::from)
            .to_vec(),
    );
    let mut all_singular = true;
    for (label, d) in &designs {
        let v = ev.log_d(d.settings());
        all_singular &= v == WORST;
        say!(
            "{label}: {} log d = {}  d = {}  valid",
            criterion_name(&problem),
            fmt_g(v),
            fmt_g(v.exp())
        );
        table.push(vec![
            Value::from(label.as_str()),
            Value::from(criterion_name(&problem)),
            num(v),
            num(v.exp()),
            num(problem.tau()),
            Value::from("ok"),
        ]);
    }
    if all_singular {
        return Err(CliError::Singular("every design has singular information".into()));
    }
    let mut outputs = Outputs::default();
    outputs.add(
        out_dir(&args.common, &problem).join(table_name("evaluation", args.common.format)),
        table.render(args.common.format),
    );
    report_written(&outputs.write()?);
    Ok(())
}

fn cmd_compare(args: &WithDesigns) -> Result<(), CliError> {
    let problem = spec::load(&args.common.spec)?;
    let designs = load_designs(&args.designs, &problem)?;
    let t = efficiency_table(
        &designs,
        &problem.scenarios,
        &problem.factors,
        &problem.structure,
        &problem.eta,
        problem.tau(),
    )?;
    let mut header = vec!["scenario".to_string(), "criterion".to_string()];
    header.extend(t.designs.iter().cloned());
    let mut table = Table::new(header);
    for (s, (label, model)) in problem.scenarios.iter().enumerate() {
        let crit = if model.q() == 0 { "D" } else { "GBD" };
        let mut row = vec![Value::from(label.as_str()), Value::from(crit)];
        row.extend(t.values[s].iter().map(|&v| num(v)));
        say!(
            "{label:>12} ({crit}): {}",
            t.values[s].iter().map(|&v| format!("{v:.3}")).collect::<Vec<_>>().join("  ")
        );
        table.push(row);
    }
    let mut outputs = Outputs::default();
    outputs.add(
        out_dir(&args.common, &problem).join(table_name("efficiency", args.common.format)),
        table.render(args.common.format),
    );
    report_written(&outputs.write()?);
    Ok(())
}

/// Every subset of `0..q` with 1..=k_max elements, by size then
/// lexicographically.
fn subsets(q: usize, k_max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 1..=k_max.min(q) {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let Some(i) = (0..k).rev().find(|&i| idx[i] < q - k + i) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

const MAX_SUBMODELS: usize = 100_000;

fn cmd_variances(args: &WithDesigns, k_max: Option<usize>) -> Result<(), CliError> {
    let problem = spec::load(&args.common.spec)?;
    let designs = load_designs(&args.designs, &problem)?;
    let pri = problem.model.primary();
    let pot = problem.model.potential();
    let models = subsets(pot.len(), k_max.unwrap_or(pot.len()));
    if models.len() * designs.len() > MAX_SUBMODELS {
        return Err(CliError::Input(format!(
            "{} submodels requested; lower --k-max",
            models.len() * designs.len()
        )));
    }
    let all_terms: Vec<Term> = pri.iter().chain(pot).cloned().collect();
    let mut header: Vec<String> = ["design", "model", "extra_terms", "estimable"].map(String::from).to_vec();
    header.extend(problem.term_labels(&all_terms).into_iter().map(|l| format!("var({l})")));
    let mut table = Table::new(header);
    for (label, d) in &designs {
        for (no, m) in models.iter().enumerate() {
            let extra: Vec<Term> = m.iter().map(|&i| pot[i].clone()).collect();
            let rep = submodel_variances(d, &problem.structure, &problem.eta, pri, &extra)?;
            let mut row = vec![
                Value::from(label.as_str()),
                Value::from(no + 1),
                Value::from(problem.term_labels(&extra).join(";")),
                Value::from(rep.estimable),
            ];
            let mut cells = vec![Value::Null; all_terms.len()];
            if let Some(v) = &rep.variances {
                for (t, var) in rep.submodel.iter().zip(v) {
                    let col = all_terms.iter().position(|a| a == t).expect("submodel term");
                    cells[col] = num(*var);
                }
                let shown: Vec<String> = v[pri.len()..].iter().map(|&x| format!("{x:.3}")).collect();
                say!("{label} model {}: {}", no + 1, shown.join(", "));
            } else {
                say!("{label} model {}: not estimable", no + 1);
            }
            row.extend(cells);
            table.push(row);
        }
    }
    let mut outputs = Outputs::default();
    outputs.add(
        out_dir(&args.common, &problem).join(table_name("variances", args.common.format)),
        table.render(args.common.format),
    );
    report_written(&outputs.write()?);
    Ok(())
}

fn cmd_curve(args: &WithDesigns, k_max: Option<usize>, seed: Option<u64>) -> Result<(), CliError> {
    let problem = spec::load(&args.common.spec)?;
    let designs = load_designs(&args.designs, &problem)?;
    let pool = problem.model.potential();
    let k_max = k_max.unwrap_or(pool.len().min(5));
    if k_max > pool.len() {
        return Err(CliError::Input(format!(
            "--k-max {k_max} exceeds the {} potential terms",
            pool.len()
        )));
    }
    let ks: Vec<usize> = (0..=k_max).collect();
    let sampling = Sampling {
        seed: seed.unwrap_or(problem.search.seed),
        ..Sampling::default()
    };
    let mut table = Table::new(
        [
            "design",
            "k",
            "primary_overall",
            "potential_overall",
            "n_estimable",
            "n_models",
            "sampled",
        ]
        .map(String::from)
        .to_vec(),
    );
    for (label, d) in &designs {
        let pts = overall_variance_curve(
            d,
            &problem.structure,
            &problem.eta,
            problem.model.primary(),
            pool,
            &ks,
            sampling,
        )?;
        for pt in pts {
            say!(
                "{label} k={}: primary {}  potential {}  ({}/{} estimable{})",
                pt.k,
                pt.primary_overall.map_or("-".into(), fmt_g),
                pt.potential_overall.map_or("-".into(), fmt_g),
                pt.n_estimable,
                pt.n_models,
                if pt.sampled { ", sampled" } else { "" }
            );
            table.push(vec![
                Value::from(label.as_str()),
                Value::from(pt.k),
                pt.primary_overall.map_or(Value::Null, num),
                pt.potential_overall.map_or(Value::Null, num),
                Value::from(pt.n_estimable),
                Value::from(pt.n_models),
                Value::from(pt.sampled),
            ]);
        }
    }
    let mut outputs = Outputs::default();
    outputs.add(
        out_dir(&args.common, &problem).join(table_name("curve", args.common.format)),
        table.render(args.common.format),
    );
    report_written(&outputs.write()?);
    Ok(())
}

fn cmd_sensitivity(args: &WithDesigns, values: &[f64], tau_ratio: Option<f64>) -> Result<(), CliError> {
    let problem = spec::load(&args.common.spec)?;
    let designs = load_designs(&args.designs, &problem)?;
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CliError::Input("--eta-grid values must be positive".into()));
    }
    let rule = match tau_ratio {
        Some(r) if r.is_finite() && r > 0.0 => TauRule::PerSigmaY(r),
        Some(r) => return Err(CliError::Input(format!("--tau-ratio must be positive, got {r}"))),
        None => problem.tau.rule(),
    };
    let grid = eta_grid(values, problem.structure.g())?;
    let sweep = sensitivity_sweep(
        &designs,
        &problem.scenarios,
        &problem.factors,
        &problem.structure,
        &grid,
        rule,
    )?;
    let g = problem.structure.g();
    let mut header: Vec<String> = (1..g).map(|l| format!("eta_{l}")).collect();
    header.extend(["tau", "scenario", "best_design"].map(String::from));
    header.extend(designs.iter().map(|(l, _)| l.clone()));
    let mut table = Table::new(header);
    for pt in &sweep {
        for (s, (label, _)) in problem.scenarios.iter().enumerate() {
            let mut row: Vec<Value> = pt.eta.as_slice()[..g - 1].iter().map(|&e| num(e)).collect();
            row.push(num(pt.tau));
            row.push(Value::from(label.as_str()));
            row.push(Value::from(designs[pt.best[s]].0.as_str()));
            row.extend(pt.table.values[s].iter().map(|&v| num(v)));
            say!(
                "eta {:?} tau {} {label}: best {}",
                &pt.eta.as_slice()[..g - 1],
                fmt_g(pt.tau),
                designs[pt.best[s]].0
            );
            table.push(row);
        }
    }
    let mut outputs = Outputs::default();
    outputs.add(
        out_dir(&args.common, &problem).join(table_name("sensitivity", args.common.format)),
        table.render(args.common.format),
    );
    report_written(&outputs.write()?);
    Ok(())
}

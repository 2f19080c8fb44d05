//! Command-line frontend: problem selection, parameter control, and the
//! solve / study / check / tables commands with CSV and markdown output.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fracdiff::estimates::{
    lemma_sweep, monitor_dirichlet_estimate, monitor_robin_estimate, EstimateError,
};
use fracdiff::mesh::Grid;
use fracdiff::solver::{march, BoundaryCondition, Sigma, SolverConfig, SolverError};
use fracdiff::verify::{
    coupled_study, lookup, max_error_at_final, paper_table_deviations, reproduce_tables,
    solution_table, temporal_study, ManufacturedProblem, StudyParam, VerifyError,
};

#[derive(Parser)]
#[command(
    name = "fracdiff",
    version,
    about = "Variable-order time-fractional diffusion: solve, verify, and check"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// March one registry problem and report the final-time solution
    Solve(SolveArgs),
    /// Run a refinement study and report observed convergence orders
    Study(StudyArgs),
    /// Solve, then check the a priori energy estimate at every step
    CheckEstimates(CheckEstimatesArgs),
    /// Run the randomized margin sweeps for the pointwise inequalities
    CheckLemmas(CheckLemmasArgs),
    /// Reproduce the three reference tables and compare against the
    /// published values
    Tables(TablesArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Spatial cell count
    #[arg(long = "N")]
    n: Option<usize>,
    /// Time step count
    #[arg(long)]
    j0: Option<usize>,
    /// Spatial step as a fraction or decimal, e.g. 1/10
    #[arg(long)]
    h: Option<String>,
    /// Time step as a fraction or decimal, e.g. 1/100
    #[arg(long)]
    tau: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BcKind {
    Dirichlet,
    Robin,
}

#[derive(Args)]
struct SolveArgs {
    /// Registry problem name
    #[arg(long)]
    problem: String,
    #[command(flatten)]
    grid: GridArgs,
    /// Weight: "auto" for the stability threshold, or a value in [0, 1]
    #[arg(long, default_value = "auto", value_parser = parse_sigma)]
    sigma: Sigma,
    /// Boundary-condition kind; implied by the problem, accepted as a
    /// cross-check
    #[arg(long)]
    bc: Option<BcKind>,
    /// Solution CSV path (columns x,numerical,exact,error)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyMode {
    Temporal,
    Coupled,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, value_enum)]
    mode: StudyMode,
    /// Fixed spatial step for a temporal study
    #[arg(long)]
    h: Option<String>,
    /// Decreasing time steps for a temporal study, e.g. 1/256,1/1024
    #[arg(long, value_delimiter = ',')]
    taus: Vec<String>,
    /// Decreasing spatial steps for a coupled study (tau = h^2)
    #[arg(long, value_delimiter = ',')]
    hs: Vec<String>,
    #[arg(long, default_value = "auto", value_parser = parse_sigma)]
    sigma: Sigma,
    /// Study CSV path (columns h,tau,max_error,order)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckEstimatesArgs {
    #[arg(long)]
    problem: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "auto", value_parser = parse_sigma)]
    sigma: Sigma,
    #[arg(long)]
    bc: Option<BcKind>,
    /// Estimate report CSV path (columns level,lhs,rhs,margin)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckLemmasArgs {
    /// Randomized trials per inequality
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Seed of the trial stream
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct TablesArgs {
    /// Directory for table1.csv, table2.csv, table3.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Check(String),
    Numerical(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Check(_) => 1,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Check(m) | Failure::Numerical(m) => m,
        }
    }
}

fn parse_sigma(raw: &str) -> Result<Sigma, String> {
    if raw == "auto" {
        return Ok(Sigma::Auto);
    }
    let value: f64 = raw
        .parse()
        .map_err(|_| format!("expected 'auto' or a number, got '{raw}'"))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(format!("sigma must lie in [0, 1], got {value}"));
    }
    Ok(Sigma::Fixed(value))
}

/// Parses "1/4096" or a plain decimal into a positive step size.
fn parse_fraction(raw: &str) -> Result<f64, Failure> {
    let bad = || Failure::Usage(format!("'{raw}' is not a positive fraction like 1/100"));
    let value = if let Some((num, den)) = raw.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|_| bad())?;
        let den: f64 = den.trim().parse().map_err(|_| bad())?;
        num / den
    } else {
        raw.trim().parse().map_err(|_| bad())?
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(bad());
    }
    Ok(value)
}

/// Converts a step size into the count of cells it implies on `[0, extent]`.
fn step_to_count(step: f64, extent: f64, what: &str) -> Result<usize, Failure> {
    let count = (extent / step).round();
    if count < 1.0 || (count * step - extent).abs() > 1e-9 * extent {
        return Err(Failure::Usage(format!(
            "{what} = {step} does not divide the extent {extent} evenly"
        )));
    }
    Ok(count as usize)
}

impl GridArgs {
    fn resolve(&self, l: f64, t_final: f64) -> Result<Grid, Failure> {
        let grid = match (&self.n, &self.j0, &self.h, &self.tau) {
            (Some(n), Some(j0), None, None) => Grid::new(*n, *j0, l, t_final),
            (None, None, Some(h), Some(tau)) => {
                let n = step_to_count(parse_fraction(h)?, l, "--h")?;
                let j0 = step_to_count(parse_fraction(tau)?, t_final, "--tau")?;
                Grid::new(n, j0, l, t_final)
            }
            _ => {
                return Err(Failure::Usage(
                    "give exactly one grid pair: --N with --j0, or --h with --tau".into(),
                ))
            }
        };
        grid.map_err(|e| Failure::Usage(format!("invalid grid: {e}")))
    }
}

fn load_problem(name: &str, bc: Option<BcKind>) -> Result<ManufacturedProblem, Failure> {
    let problem = lookup(name).map_err(|e| match e {
        VerifyError::UnknownProblem(_) => Failure::Usage(e.to_string()),
        other => Failure::Numerical(format!("registry: {other}")),
    })?;
    if let Some(kind) = bc {
        let implied = problem.spec.bc.is_robin();
        let requested = matches!(kind, BcKind::Robin);
        if implied != requested {
            return Err(Failure::Usage(format!(
                "problem '{name}' has {} boundary data, but --bc asked for {}",
                problem.spec.bc.kind(),
                if requested { "robin" } else { "dirichlet" }
            )));
        }
    }
    Ok(problem)
}

fn solver_failure(stage: &str, e: SolverError) -> Failure {
    match e {
        SolverError::SigmaOutOfRange(_) | SolverError::ThresholdDomain(_) => {
            Failure::Usage(e.to_string())
        }
        other => Failure::Numerical(format!("{stage}: {other}")),
    }
}

fn verify_failure(stage: &str, e: VerifyError) -> Failure {
    match e {
        VerifyError::UnknownProblem(_) | VerifyError::InvalidStudy { .. } => {
            Failure::Usage(e.to_string())
        }
        VerifyError::Solver(inner) => solver_failure(stage, inner),
        other => Failure::Numerical(format!("{stage}: {other}")),
    }
}

fn estimate_failure(e: EstimateError) -> Failure {
    match e {
        EstimateError::Frac(inner) => Failure::Numerical(format!("estimate monitor: {inner}")),
        EstimateError::Solver(inner) => solver_failure("estimate monitor", inner),
        usage => Failure::Usage(usage.to_string()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn run_solve(args: &SolveArgs) -> Result<(), Failure> {
    let problem = load_problem(&args.problem, args.bc)?;
    let grid = args.grid.resolve(problem.spec.l, problem.spec.t_final)?;
    let config = SolverConfig::new(grid, args.sigma);
    let history = march(&problem.spec, &config).map_err(|e| solver_failure("solve", e))?;
    let table = solution_table(&history, &*problem.exact);
    if let Some(path) = &args.out {
        write_file(path, &table.to_csv())?;
        println!("wrote {}", path.display());
    }
    println!(
        "{} at N={} j0={}: max error at t = {} is {:.7e}",
        problem.name,
        grid.n(),
        grid.j0(),
        grid.t_final(),
        max_error_at_final(&history, &*problem.exact)
    );
    Ok(())
}

fn run_study(args: &StudyArgs) -> Result<(), Failure> {
    let problem = load_problem(&args.problem, None)?;
    let (table, param) = match args.mode {
        StudyMode::Temporal => {
            if !args.hs.is_empty() {
                return Err(Failure::Usage("--hs belongs to --mode coupled".into()));
            }
            let h = args.h.as_ref().ok_or_else(|| {
                Failure::Usage("a temporal study needs --h and --taus".into())
            })?;
            if args.taus.is_empty() {
                return Err(Failure::Usage("a temporal study needs --taus".into()));
            }
            let n = step_to_count(parse_fraction(h)?, problem.spec.l, "--h")?;
            let mut j0s = Vec::with_capacity(args.taus.len());
            for tau in &args.taus {
                j0s.push(step_to_count(
                    parse_fraction(tau)?,
                    problem.spec.t_final,
                    "--taus",
                )?);
            }
            let table = temporal_study(&problem, n, &j0s, args.sigma)
                .map_err(|e| verify_failure("temporal study", e))?;
            (table, StudyParam::TimeStep)
        }
        StudyMode::Coupled => {
            if args.h.is_some() || !args.taus.is_empty() {
                return Err(Failure::Usage(
                    "a coupled study takes --hs only (tau = h^2)".into(),
                ));
            }
            if args.hs.is_empty() {
                return Err(Failure::Usage("a coupled study needs --hs".into()));
            }
            let mut ns = Vec::with_capacity(args.hs.len());
            for h in &args.hs {
                ns.push(step_to_count(parse_fraction(h)?, problem.spec.l, "--hs")?);
            }
            let table = coupled_study(&problem, &ns, args.sigma)
                .map_err(|e| verify_failure("coupled study", e))?;
            (table, StudyParam::SpaceStep)
        }
    };
    if let Some(path) = &args.out {
        write_file(path, &table.to_csv())?;
        println!("wrote {}", path.display());
    }
    print!("{}", table.to_markdown(param));
    Ok(())
}

fn run_check_estimates(args: &CheckEstimatesArgs) -> Result<(), Failure> {
    let problem = load_problem(&args.problem, args.bc)?;
    let grid = args.grid.resolve(problem.spec.l, problem.spec.t_final)?;
    let config = SolverConfig::new(grid, args.sigma);
    let history = march(&problem.spec, &config).map_err(|e| solver_failure("solve", e))?;
    let report = match problem.spec.bc {
        BoundaryCondition::Dirichlet { .. } => {
            monitor_dirichlet_estimate(&history, &problem.spec, &config)
        }
        BoundaryCondition::Robin { .. } => {
            monitor_robin_estimate(&history, &problem.spec, &config)
        }
    }
    .map_err(estimate_failure)?;
    if let Some(path) = &args.out {
        write_file(path, &report.to_csv())?;
        println!("wrote {}", path.display());
    }
    println!(
        "{} estimate over {} steps: worst margin {:.6e}",
        problem.spec.bc.kind(),
        report.records.len(),
        report.worst_margin()
    );
    if report.pass {
        println!("estimate check: PASS");
        Ok(())
    } else {
        Err(Failure::Check("estimate margins went negative".into()))
    }
}

fn run_check_lemmas(args: &CheckLemmasArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(Failure::Usage("--trials must be positive".into()));
    }
    let report = lemma_sweep(args.trials, args.seed);
    println!(
        "{} trials (seed {}): {} failures, worst normalized margin {:.6e}",
        report.trials, args.seed, report.failures, report.worst_normalized_margin
    );
    if report.pass() {
        println!("lemma check: PASS");
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{} margin(s) fell below tolerance",
            report.failures
        )))
    }
}

fn run_tables(args: &TablesArgs) -> Result<(), Failure> {
    let tables = reproduce_tables().map_err(|e| verify_failure("table reproduction", e))?;
    println!("Table 1 (t = 1, h = 1/10, tau = 1/100):");
    print!("{}", tables.table1.to_markdown());
    println!("\nTable 2 (h = 1/500):");
    print!("{}", tables.table2.to_markdown(StudyParam::TimeStep));
    println!("\nTable 3 (h^2 = tau):");
    print!("{}", tables.table3.to_markdown(StudyParam::SpaceStep));
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        write_file(&dir.join("table1.csv"), &tables.table1.to_csv())?;
        write_file(&dir.join("table2.csv"), &tables.table2.to_csv())?;
        write_file(&dir.join("table3.csv"), &tables.table3.to_csv())?;
        println!("\nwrote CSVs to {}", dir.display());
    }
    let deviations = paper_table_deviations(&tables);
    if deviations.is_empty() {
        println!("\ntable reproduction: PASS");
        Ok(())
    } else {
        for d in &deviations {
            eprintln!("deviation: {d}");
        }
        Err(Failure::Check(format!(
            "{} value(s) outside the published tolerances",
            deviations.len()
        )))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Study(args) => run_study(args),
        Command::CheckEstimates(args) => run_check_estimates(args),
        Command::CheckLemmas(args) => run_check_lemmas(args),
        Command::Tables(args) => run_tables(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.exit_code())
        }
    }
}

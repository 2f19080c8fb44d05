//! Manufactured-solution registry, error measurement, convergence
//! studies, and reproduction of the reference error tables.

use thiserror::Error;

use crate::fracops;
use crate::mesh::{Grid, MeshError, SolutionHistory};
use crate::solver::{
    coeff1, coeff2, march, BoundaryCondition, ProblemSpec, Sigma, SolverConfig, SolverError,
    SpaceTimeFn,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no manufactured problem named '{0}' in the registry")]
    UnknownProblem(String),
    #[error("manufactured problem '{name}' is inconsistent: {detail}")]
    Inconsistent { name: String, detail: String },
    #[error("study parameters must refine strictly: {detail}")]
    InvalidStudy { detail: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// A problem paired with its exact solution (and the solution's spatial
/// derivative, needed to express and check Robin data).
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub name: String,
    pub spec: ProblemSpec,
    pub exact: SpaceTimeFn,
    pub exact_x: SpaceTimeFn,
}

impl std::fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

const CONSISTENCY_TOL: f64 = 1e-12;
const CONSISTENCY_SAMPLES: usize = 40;

impl ManufacturedProblem {
    /// Builds the pair and verifies on a sample grid that `exact`
    /// actually satisfies the initial and boundary data of `spec`.
    pub fn new(
        name: impl Into<String>,
        spec: ProblemSpec,
        exact: SpaceTimeFn,
        exact_x: SpaceTimeFn,
    ) -> Result<Self, VerifyError> {
        let name = name.into();
        let problem = ManufacturedProblem {
            name,
            spec,
            exact,
            exact_x,
        };
        problem.check_consistency()?;
        Ok(problem)
    }

    fn check_consistency(&self) -> Result<(), VerifyError> {
        let fail = |detail: String| VerifyError::Inconsistent {
            name: self.name.clone(),
            detail,
        };
        let l = self.spec.l;
        let t_final = self.spec.t_final;
        for i in 0..=CONSISTENCY_SAMPLES {
            let x = l * i as f64 / CONSISTENCY_SAMPLES as f64;
            let want = (self.spec.u0)(x);
            let got = (self.exact)(x, 0.0);
            if (got - want).abs() > CONSISTENCY_TOL * (1.0 + want.abs()) {
                return Err(fail(format!(
                    "exact(x, 0) = {got} but u0({x}) = {want}"
                )));
            }
        }
        for j in 0..=CONSISTENCY_SAMPLES {
            let t = t_final * j as f64 / CONSISTENCY_SAMPLES as f64;
            match &self.spec.bc {
                BoundaryCondition::Dirichlet { mu1, mu2 } => {
                    let (left, right) = ((self.exact)(0.0, t), (self.exact)(l, t));
                    if (left - mu1(t)).abs() > CONSISTENCY_TOL * (1.0 + left.abs()) {
                        return Err(fail(format!("exact(0, {t}) = {left} != mu1 = {}", mu1(t))));
                    }
                    if (right - mu2(t)).abs() > CONSISTENCY_TOL * (1.0 + right.abs()) {
                        return Err(fail(format!("exact(l, {t}) = {right} != mu2 = {}", mu2(t))));
                    }
                }
                BoundaryCondition::Robin {
                    beta1,
                    beta2,
                    mu1,
                    mu2,
                } => {
                    let flux_left = (self.spec.k)(0.0, t) * (self.exact_x)(0.0, t);
                    let want_left = beta1(t) * (self.exact)(0.0, t) - mu1(t);
                    if (flux_left - want_left).abs() > CONSISTENCY_TOL * (1.0 + want_left.abs()) {
                        return Err(fail(format!(
                            "left flux {flux_left} != beta1 u - mu1 = {want_left} at t = {t}"
                        )));
                    }
                    let flux_right = -(self.spec.k)(l, t) * (self.exact_x)(l, t);
                    let want_right = beta2(t) * (self.exact)(l, t) - mu2(t);
                    if (flux_right - want_right).abs() > CONSISTENCY_TOL * (1.0 + want_right.abs())
                    {
                        return Err(fail(format!(
                            "right flux {flux_right} != beta2 u - mu2 = {want_right} at t = {t}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn variable_order(x: f64) -> f64 {
    (5.0 + 4.0 * (6.0 * x).sin()) / 10.0
}

/// `(x^3 + x + 1)(3x^4 + 2x + 1)`, the spatial factor of the reference
/// problem's exact solution.
fn poly_profile(x: f64) -> f64 {
    (x * x * x + x + 1.0) * (3.0 * x * x * x * x + 2.0 * x + 1.0)
}

fn poly_profile_dx(x: f64) -> f64 {
    (3.0 * x * x + 1.0) * (3.0 * x * x * x * x + 2.0 * x + 1.0)
        + (x * x * x + x + 1.0) * (12.0 * x * x * x + 2.0)
}

fn cubic_time(t: f64) -> f64 {
    t * t * t + 3.0 * t * t + 1.0
}

/// Caputo derivative of `t^3 + 3t^2 + 1` of order `a`.
fn cubic_time_caputo(a: f64, t: f64) -> f64 {
    6.0 * t.powf(3.0 - a) / fracops::gamma(4.0 - a).expect("4 - alpha lies in (3, 4)")
        + 6.0 * t.powf(2.0 - a) / fracops::gamma(3.0 - a).expect("3 - alpha lies in (2, 3)")
}

fn paper36() -> Result<ManufacturedProblem, VerifyError> {
    let spec = ProblemSpec {
        k: coeff2(|x, t| (5.0 + t.cos()) / poly_profile_dx(x)),
        q: coeff2(|x, t| (1.0 + t.sin()) / poly_profile(x)),
        f: coeff2(|x, t| {
            poly_profile(x) * cubic_time_caputo(variable_order(x), t)
                + (1.0 + t.sin()) * cubic_time(t)
        }),
        alpha: coeff1(variable_order),
        u0: coeff1(poly_profile),
        bc: BoundaryCondition::Dirichlet {
            mu1: coeff1(cubic_time),
            mu2: coeff1(|t| 18.0 * cubic_time(t)),
        },
        l: 1.0,
        t_final: 1.0,
    };
    ManufacturedProblem::new(
        "paper36",
        spec,
        coeff2(|x, t| poly_profile(x) * cubic_time(t)),
        coeff2(|x, t| poly_profile_dx(x) * cubic_time(t)),
    )
}

fn sine_exact(x: f64, t: f64) -> f64 {
    (std::f64::consts::PI * x).sin() * (t * t * t + 1.0)
}

fn sine_exact_x(x: f64, t: f64) -> f64 {
    std::f64::consts::PI * (std::f64::consts::PI * x).cos() * (t * t * t + 1.0)
}

fn sine_source(x: f64, t: f64) -> f64 {
    let a = variable_order(x);
    let pi = std::f64::consts::PI;
    (pi * x).sin()
        * (6.0 * t.powf(3.0 - a) / fracops::gamma(4.0 - a).expect("4 - alpha lies in (3, 4)")
            + pi * pi * (t * t * t + 1.0))
}

fn sine_spec(bc: BoundaryCondition) -> ProblemSpec {
    ProblemSpec {
        k: coeff2(|_, _| 1.0),
        q: coeff2(|_, _| 0.0),
        f: coeff2(sine_source),
        alpha: coeff1(variable_order),
        u0: coeff1(|x| (std::f64::consts::PI * x).sin()),
        bc,
        l: 1.0,
        t_final: 1.0,
    }
}

fn sine_dirichlet() -> Result<ManufacturedProblem, VerifyError> {
    let bc = BoundaryCondition::Dirichlet {
        mu1: coeff1(|_| 0.0),
        mu2: coeff1(|_| 0.0),
    };
    ManufacturedProblem::new(
        "sine-dirichlet",
        sine_spec(bc),
        coeff2(sine_exact),
        coeff2(sine_exact_x),
    )
}

fn sine_robin() -> Result<ManufacturedProblem, VerifyError> {
    // from the flux condition with u_x(0,t) = pi (t^3+1) and
    // u_x(1,t) = -pi (t^3+1): mu1 = mu2 = -pi (t^3+1)
    let bc = BoundaryCondition::Robin {
        beta1: coeff1(|_| 1.0),
        beta2: coeff1(|_| 1.0),
        mu1: coeff1(|t| -std::f64::consts::PI * (t * t * t + 1.0)),
        mu2: coeff1(|t| -std::f64::consts::PI * (t * t * t + 1.0)),
    };
    ManufacturedProblem::new(
        "sine-robin",
        sine_spec(bc),
        coeff2(sine_exact),
        coeff2(sine_exact_x),
    )
}

fn zero_spec(bc: BoundaryCondition) -> ProblemSpec {
    ProblemSpec {
        k: coeff2(|_, _| 1.0),
        q: coeff2(|_, _| 0.0),
        f: coeff2(|_, _| 0.0),
        alpha: coeff1(|_| 0.5),
        u0: coeff1(|_| 0.0),
        bc,
        l: 1.0,
        t_final: 1.0,
    }
}

fn zero_dirichlet() -> Result<ManufacturedProblem, VerifyError> {
    let bc = BoundaryCondition::Dirichlet {
        mu1: coeff1(|_| 0.0),
        mu2: coeff1(|_| 0.0),
    };
    ManufacturedProblem::new(
        "zero-dirichlet",
        zero_spec(bc),
        coeff2(|_, _| 0.0),
        coeff2(|_, _| 0.0),
    )
}

fn zero_robin() -> Result<ManufacturedProblem, VerifyError> {
    let bc = BoundaryCondition::Robin {
        beta1: coeff1(|_| 1.0),
        beta2: coeff1(|_| 1.0),
        mu1: coeff1(|_| 0.0),
        mu2: coeff1(|_| 0.0),
    };
    ManufacturedProblem::new(
        "zero-robin",
        zero_spec(bc),
        coeff2(|_, _| 0.0),
        coeff2(|_, _| 0.0),
    )
}

/// All named manufactured problems.
pub fn registry() -> Vec<ManufacturedProblem> {
    [
        paper36(),
        sine_dirichlet(),
        sine_robin(),
        zero_dirichlet(),
        zero_robin(),
    ]
    .into_iter()
    .map(|p| p.expect("registry problems are consistent by construction"))
    .collect()
}

/// Fetches one registry problem by name.
pub fn lookup(name: &str) -> Result<ManufacturedProblem, VerifyError> {
    registry()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| VerifyError::UnknownProblem(name.to_string()))
}

/// Maximum absolute nodal error at the final time.
pub fn max_error_at_final(history: &SolutionHistory, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let grid = history.grid();
    let t = grid.t_final();
    history
        .last()
        .iter()
        .enumerate()
        .map(|(i, &y)| (y - exact(grid.x(i), t)).abs())
        .fold(0.0, f64::max)
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub tau: f64,
    pub max_error: f64,
    /// Absent on the first row and wherever an error vanished.
    pub order: Option<f64>,
}

/// Rows of a refinement study with observed orders.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

/// Which parameter a study refined (controls the printed layout).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyParam {
    SpaceStep,
    TimeStep,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,tau,max_error,order\n");
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:.16e}")).unwrap_or_default();
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{order}\n",
                r.h, r.tau, r.max_error
            ));
        }
        out
    }

    pub fn to_markdown(&self, param: StudyParam) -> String {
        let head = match param {
            StudyParam::SpaceStep => "h",
            StudyParam::TimeStep => "tau",
        };
        let mut out = format!("| {head} | Maximum error | Convergence order |\n|---|---|---|\n");
        for r in &self.rows {
            let value = match param {
                StudyParam::SpaceStep => r.h,
                StudyParam::TimeStep => r.tau,
            };
            let order = r.order.map(|o| format!("{o:.3}")).unwrap_or_default();
            out.push_str(&format!("| {value} | {:.7} | {order} |\n", r.max_error));
        }
        out
    }
}

/// Observed order between two refinement levels,
/// `log(e_prev / e_cur) / log(p_prev / p_cur)` over the refined parameter
/// `p` (tau or h). `None` when an error vanished, since the ratio formula
/// degenerates there. Built from ratios only, so consistent unit changes
/// of `p` cancel.
pub fn convergence_order(e_prev: f64, e_cur: f64, p_prev: f64, p_cur: f64) -> Option<f64> {
    if e_prev > 0.0 && e_cur > 0.0 {
        Some((e_prev / e_cur).ln() / (p_prev / p_cur).ln())
    } else {
        None
    }
}

/// One solve per time step in `j0s` at fixed spatial resolution `n`;
/// orders from consecutive error ratios against the tau ratio.
pub fn temporal_study(
    problem: &ManufacturedProblem,
    n: usize,
    j0s: &[usize],
    sigma: Sigma,
) -> Result<ConvergenceTable, VerifyError> {
    if j0s.is_empty() || j0s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VerifyError::InvalidStudy {
            detail: format!("time step counts must increase strictly, got {j0s:?}"),
        });
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(j0s.len());
    for &j0 in j0s {
        let grid = Grid::new(n, j0, problem.spec.l, problem.spec.t_final)?;
        let history = march(&problem.spec, &SolverConfig::new(grid, sigma))?;
        let max_error = max_error_at_final(&history, &*problem.exact);
        let order = rows
            .last()
            .and_then(|prev| convergence_order(prev.max_error, max_error, prev.tau, grid.tau()));
        rows.push(ConvergenceRow {
            h: grid.h(),
            tau: grid.tau(),
            max_error,
            order,
        });
    }
    Ok(ConvergenceTable { rows })
}

/// One solve per spatial resolution in `ns` with the coupling `tau = h^2`;
/// orders against the h ratio.
pub fn coupled_study(
    problem: &ManufacturedProblem,
    ns: &[usize],
    sigma: Sigma,
) -> Result<ConvergenceTable, VerifyError> {
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(VerifyError::InvalidStudy {
            detail: format!("cell counts must increase strictly, got {ns:?}"),
        });
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ns.len());
    for &n in ns {
        let l = problem.spec.l;
        let t_final = problem.spec.t_final;
        let h = l / n as f64;
        let j0 = (t_final / (h * h)).round() as usize;
        let grid = Grid::new(n, j0.max(1), l, t_final)?;
        let history = march(&problem.spec, &SolverConfig::new(grid, sigma))?;
        let max_error = max_error_at_final(&history, &*problem.exact);
        let order = rows
            .last()
            .and_then(|prev| convergence_order(prev.max_error, max_error, prev.h, grid.h()));
        rows.push(ConvergenceRow {
            h: grid.h(),
            tau: grid.tau(),
            max_error,
            order,
        });
    }
    Ok(ConvergenceTable { rows })
}

/// Final-time nodal comparison against an exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionRow {
    pub x: f64,
    pub numerical: f64,
    pub exact: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    pub rows: Vec<SolutionRow>,
}

impl SolutionTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,numerical,exact,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.x, r.numerical, r.exact, r.error
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| x | Numerical solution | Exact solution | Error |\n|---|---|---|---|\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "| {:.4} | {:.7} | {:.7} | {:.7} |\n",
                r.x, r.numerical, r.exact, r.error
            ));
        }
        out
    }

    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.error).fold(0.0, f64::max)
    }
}

/// Tabulates the final-time solution of a completed march against the
/// exact solution, node by node.
pub fn solution_table(
    history: &SolutionHistory,
    exact: impl Fn(f64, f64) -> f64,
) -> SolutionTable {
    let grid = history.grid();
    let t = grid.t_final();
    let rows = history
        .last()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let x = grid.x(i);
            let u = exact(x, t);
            SolutionRow {
                x,
                numerical: y,
                exact: u,
                error: (y - u).abs(),
            }
        })
        .collect();
    SolutionTable { rows }
}

/// The three reproduced reference tables.
#[derive(Debug, Clone)]
pub struct PaperTables {
    pub table1: SolutionTable,
    pub table2: ConvergenceTable,
    pub table3: ConvergenceTable,
}

/// The weight used for every reference run: the threshold of the
/// problem's continuous minimum order 1/10.
pub fn reference_sigma() -> f64 {
    1.0 / (3.0 - 2.0_f64.powf(0.9))
}

/// Reruns the three reference experiments: the nodal comparison at
/// `h = 1/10, tau = 1/100`, the temporal refinement at `h = 1/500`, and
/// the coupled refinement with `tau = h^2`.
pub fn reproduce_tables() -> Result<PaperTables, VerifyError> {
    let problem = lookup("paper36")?;
    let sigma = Sigma::Fixed(reference_sigma());

    let grid = Grid::new(10, 100, problem.spec.l, problem.spec.t_final)?;
    let history = march(&problem.spec, &SolverConfig::new(grid, sigma))?;
    let table1 = solution_table(&history, &*problem.exact);

    let table2 = temporal_study(&problem, 500, &[256, 1024, 4096], sigma)?;
    let table3 = coupled_study(&problem, &[40, 80, 160], sigma)?;

    Ok(PaperTables {
        table1,
        table2,
        table3,
    })
}

/// Published reference values the reproduction is compared against.
pub mod golden {
    pub const TABLE1_X: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    pub const TABLE1_NUMERICAL: [f64; 11] = [
        5.0000000, 6.6068921, 8.4813103, 10.7677569, 13.7191945, 17.7407866, 23.4561082,
        31.8041726, 44.1761384, 62.6016758, 90.0000000,
    ];
    pub const TABLE1_EXACT: [f64; 11] = [
        5.0000000, 6.6076515, 8.4849920, 10.7772305, 13.7381760, 17.7734375, 23.5063040,
        31.8738645, 44.2609280, 62.6793035, 90.0000000,
    ];
    pub const TABLE1_ERROR: [f64; 11] = [
        0.0000000, 0.0007594, 0.0036817, 0.0094736, 0.0189815, 0.0326509, 0.0501958, 0.0696919,
        0.0847896, 0.0776277, 0.0000000,
    ];
    pub const TABLE2_MAX_ERROR: [f64; 3] = [0.0344960, 0.0086690, 0.0021738];
    pub const TABLE2_ORDER: [f64; 2] = [0.996, 0.998];
    pub const TABLE3_MAX_ERROR: [f64; 3] = [0.0056275, 0.0014141, 0.0003542];
    pub const TABLE3_ORDER: [f64; 2] = [1.993, 1.997];

    /// Nodal errors of table 1 must match within this absolute tolerance.
    pub const TABLE1_ERROR_TOL: f64 = 1e-5;
    /// Exact-solution column of table 1, absolute.
    pub const TABLE1_EXACT_TOL: f64 = 1e-7;
    /// Maximum errors of tables 2-3, relative.
    pub const TABLE_MAX_ERROR_RTOL: f64 = 0.01;
    /// Convergence orders of tables 2-3, absolute.
    pub const TABLE_ORDER_TOL: f64 = 0.02;
}

/// Compares a reproduction against the published values; returns one
/// message per violated tolerance (empty means full agreement).
pub fn paper_table_deviations(tables: &PaperTables) -> Vec<String> {
    let mut failures = Vec::new();

    if tables.table1.rows.len() != 11 {
        failures.push(format!(
            "table 1 has {} rows, expected 11",
            tables.table1.rows.len()
        ));
        return failures;
    }
    for (i, row) in tables.table1.rows.iter().enumerate() {
        let want_error = golden::TABLE1_ERROR[i];
        if (row.error - want_error).abs() > golden::TABLE1_ERROR_TOL {
            failures.push(format!(
                "table 1 x={:.1}: error {:.7} vs published {want_error:.7}",
                row.x, row.error
            ));
        }
        let want_exact = golden::TABLE1_EXACT[i];
        if (row.exact - want_exact).abs() > golden::TABLE1_EXACT_TOL {
            failures.push(format!(
                "table 1 x={:.1}: exact {:.7} vs published {want_exact:.7}",
                row.x, row.exact
            ));
        }
    }

    let check_convergence =
        |failures: &mut Vec<String>, label: &str, table: &ConvergenceTable, errors: &[f64], orders: &[f64]| {
            if table.rows.len() != errors.len() {
                failures.push(format!(
                    "{label} has {} rows, expected {}",
                    table.rows.len(),
                    errors.len()
                ));
                return;
            }
            for (row, &want) in table.rows.iter().zip(errors) {
                if (row.max_error - want).abs() > golden::TABLE_MAX_ERROR_RTOL * want {
                    failures.push(format!(
                        "{label}: max error {:.7} vs published {want:.7}",
                        row.max_error
                    ));
                }
            }
            for (row, &want) in table.rows.iter().skip(1).zip(orders) {
                match row.order {
                    Some(order) if (order - want).abs() <= golden::TABLE_ORDER_TOL => {}
                    Some(order) => failures.push(format!(
                        "{label}: order {order:.3} vs published {want:.3}"
                    )),
                    None => failures.push(format!("{label}: missing order, expected {want:.3}")),
                }
            }
        };
    check_convergence(
        &mut failures,
        "table 2",
        &tables.table2,
        &golden::TABLE2_MAX_ERROR,
        &golden::TABLE2_ORDER,
    );
    check_convergence(
        &mut failures,
        "table 3",
        &tables.table3,
        &golden::TABLE3_MAX_ERROR,
        &golden::TABLE3_ORDER,
    );
    failures
}

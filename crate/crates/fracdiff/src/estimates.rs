//! Executable forms of the discrete inequalities behind the schemes'
//! stability: the two pointwise lemma inequalities, their sigma-convex
//! combination, and the full a priori energy estimates used as runtime
//! monitors on solver output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fracops::{self, discrete_caputo, l1_weights, FracError};
use crate::mesh::{backward_quotients, inner_open, SolutionHistory};
use crate::solver::{sigma_threshold, BoundaryCondition, ProblemSpec, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("sigma = {0} must lie in [0, 1]")]
    SigmaOutOfRange(f64),
    #[error("sigma = {sigma} is below the stability threshold {threshold}")]
    SigmaBelowThreshold { sigma: f64, threshold: f64 },
    #[error("the Dirichlet monitor needs homogeneous boundary data, got mu{index}({t}) = {value}")]
    InhomogeneousDirichlet { index: u8, t: f64, value: f64 },
    #[error("expected {expected} boundary data, found {found}")]
    BoundaryMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("history was built on a different grid than the solver config")]
    GridMismatch,
    #[error("history holds only {have} level(s); monitoring needs a computed step")]
    ShortHistory { have: usize },
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn margin_terms(
    y: &[f64],
    tau: f64,
    alpha: f64,
    j: usize,
) -> Result<(f64, f64, f64), EstimateError> {
    let delta = discrete_caputo(y, tau, alpha, j)?;
    let squared: Vec<f64> = y.iter().map(|v| v * v).collect();
    let delta_sq = discrete_caputo(&squared, tau, alpha, j)?;
    let weight = tau.powf(alpha) * fracops::gamma(2.0 - alpha)?;
    Ok((delta, delta_sq, weight))
}

fn margin_22_scaled(
    y: &[f64],
    tau: f64,
    alpha: f64,
    j: usize,
) -> Result<(f64, f64), EstimateError> {
    let (delta, delta_sq, weight) = margin_terms(y, tau, alpha, j)?;
    let t1 = y[j + 1] * delta;
    let t2 = 0.5 * delta_sq;
    let t3 = 0.5 * weight * delta * delta;
    let scale = t1.abs().max(t2.abs()).max(t3.abs()).max(1.0);
    Ok((t1 - t2 - t3, scale))
}

fn margin_23_scaled(
    y: &[f64],
    tau: f64,
    alpha: f64,
    j: usize,
) -> Result<(f64, f64), EstimateError> {
    let (delta, delta_sq, weight) = margin_terms(y, tau, alpha, j)?;
    let t1 = y[j] * delta;
    let t2 = 0.5 * delta_sq;
    let t3 = weight / (2.0 * (2.0 - 2.0_f64.powf(1.0 - alpha))) * delta * delta;
    let scale = t1.abs().max(t2.abs()).max(t3.abs()).max(1.0);
    Ok((t1 - t2 + t3, scale))
}

/// Margin of `y^{j+1} D^alpha(y) >= D^alpha(y^2)/2 + (tau^alpha Gamma(2-alpha)/2) (D^alpha y)^2`.
/// Nonnegative for every grid function up to rounding.
pub fn lemma2_margin_22(y: &[f64], tau: f64, alpha: f64, j: usize) -> Result<f64, EstimateError> {
    margin_22_scaled(y, tau, alpha, j).map(|(m, _)| m)
}

/// Margin of the companion inequality for `y^j`, whose quadratic term
/// enters with the opposite sign and the factor `1/(2 - 2^(1-alpha))`.
pub fn lemma2_margin_23(y: &[f64], tau: f64, alpha: f64, j: usize) -> Result<f64, EstimateError> {
    margin_23_scaled(y, tau, alpha, j).map(|(m, _)| m)
}

/// Margin of the sigma-weighted inequality, evaluated as the convex
/// combination `sigma * margin_22 + (1 - sigma) * margin_23` so the
/// endpoints agree with the lemma margins bit for bit.
pub fn corollary2_margin(
    y: &[f64],
    tau: f64,
    alpha: f64,
    sigma: f64,
    j: usize,
) -> Result<f64, EstimateError> {
    let (m, _) = corollary2_scaled(y, tau, alpha, sigma, j)?;
    Ok(m)
}

fn corollary2_scaled(
    y: &[f64],
    tau: f64,
    alpha: f64,
    sigma: f64,
    j: usize,
) -> Result<(f64, f64), EstimateError> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(EstimateError::SigmaOutOfRange(sigma));
    }
    let (m22, s22) = margin_22_scaled(y, tau, alpha, j)?;
    let (m23, s23) = margin_23_scaled(y, tau, alpha, j)?;
    Ok((sigma * m22 + (1.0 - sigma) * m23, s22.max(s23)))
}

/// Outcome of a randomized lemma/corollary sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaSweepReport {
    pub trials: usize,
    pub failures: usize,
    /// Smallest `margin / scale` seen across all inequalities and trials.
    pub worst_normalized_margin: f64,
}

impl LemmaSweepReport {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

/// Margin tolerance of the randomized sweeps, relative to the term scale.
pub const SWEEP_TOLERANCE: f64 = 1e-12;

/// Runs `trials` random draws of (sequence, alpha, tau, sigma) and checks
/// all three margins against `-SWEEP_TOLERANCE * scale`. Deterministic for
/// a fixed seed.
pub fn lemma_sweep(trials: usize, seed: u64) -> LemmaSweepReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let len = rng.random_range(2..=50usize);
        let j = len - 2;
        let tau = rng.random_range(0.01..2.0);
        let alpha = rng.random_range(0.01..0.99);
        let sigma = rng.random_range(0.0..=1.0);
        let y: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let checks = [
            margin_22_scaled(&y, tau, alpha, j).expect("sweep inputs are in range"),
            margin_23_scaled(&y, tau, alpha, j).expect("sweep inputs are in range"),
            corollary2_scaled(&y, tau, alpha, sigma, j).expect("sweep inputs are in range"),
        ];
        for (margin, scale) in checks {
            worst = worst.min(margin / scale);
            if margin < -SWEEP_TOLERANCE * scale {
                failures += 1;
            }
        }
    }
    LemmaSweepReport {
        trials,
        failures,
        worst_normalized_margin: worst,
    }
}

/// One evaluated step of an a priori estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub level: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// Per-step sides and margins of a discrete a priori estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub records: Vec<EstimateRecord>,
    pub pass: bool,
}

/// Margin tolerance of the monitors, relative to the larger side.
pub const MONITOR_TOLERANCE: f64 = 1e-10;

impl EstimateReport {
    fn from_records(records: Vec<EstimateRecord>) -> Self {
        let pass = records
            .iter()
            .all(|r| r.margin >= -MONITOR_TOLERANCE * r.lhs.abs().max(r.rhs.abs()).max(1.0));
        EstimateReport { records, pass }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,lhs,rhs,margin\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                r.level, r.lhs, r.rhs, r.margin
            ));
        }
        out
    }

    pub fn worst_margin(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

struct MonitorData {
    sigma: f64,
    steps: usize,
    alphas: Vec<f64>,
    gamma2: Vec<f64>,
    /// L1 weight rows per node, `b_i[m]` for `m = 0..steps-1`.
    bweights: Vec<Vec<f64>>,
    /// Sampled minimum of the diffusivity over the monitored steps.
    c1: f64,
}

fn prepare_monitor(
    history: &SolutionHistory,
    problem: &ProblemSpec,
    config: &SolverConfig,
) -> Result<MonitorData, EstimateError> {
    if history.grid() != &config.grid {
        return Err(EstimateError::GridMismatch);
    }
    if history.len() < 2 {
        return Err(EstimateError::ShortHistory {
            have: history.len(),
        });
    }
    let grid = config.grid;
    let steps = history.len() - 1;
    let sigma = config.resolve_sigma(problem)?;

    let mut alphas = Vec::with_capacity(grid.n() + 1);
    let mut alpha_min = f64::INFINITY;
    for i in 0..=grid.n() {
        let x = grid.x(i);
        let a = (problem.alpha)(x);
        if !(a > 0.0 && a < 1.0) {
            return Err(SolverError::AlphaOutOfRange { x, value: a }.into());
        }
        alpha_min = alpha_min.min(a);
        alphas.push(a);
    }
    let threshold = sigma_threshold(alpha_min)?;
    if sigma < threshold - 1e-12 {
        return Err(EstimateError::SigmaBelowThreshold { sigma, threshold });
    }

    let mut gamma2 = Vec::with_capacity(alphas.len());
    let mut bweights = Vec::with_capacity(alphas.len());
    for &a in &alphas {
        gamma2.push(fracops::gamma(2.0 - a)?);
        bweights.push(l1_weights(a, grid.tau(), steps - 1)?.values);
    }

    // c1: exhaustive minimum of k over the half-nodes and half-times the
    // scheme actually samples on the monitored steps.
    let mut c1 = f64::INFINITY;
    for j in 0..steps {
        let t_bar = grid.t_half(j);
        for i in 1..=grid.n() {
            let x = grid.x_half(i);
            let v = (problem.k)(x, t_bar);
            if !(v > 0.0) {
                return Err(SolverError::NonpositiveDiffusivity {
                    x,
                    t: t_bar,
                    value: v,
                }
                .into());
            }
            c1 = c1.min(v);
        }
    }

    Ok(MonitorData {
        sigma,
        steps,
        alphas,
        gamma2,
        bweights,
        c1,
    })
}

/// Weighted level `sigma * y^{j+1} + (1 - sigma) * y^j`.
fn weighted_level(history: &SolutionHistory, sigma: f64, j: usize) -> Vec<f64> {
    history
        .level(j + 1)
        .iter()
        .zip(history.level(j))
        .map(|(next, cur)| sigma * next + (1.0 - sigma) * cur)
        .collect()
}

fn halfopen_grad_norm_sq(level: &[f64], h: f64) -> f64 {
    let grad = backward_quotients(level, h);
    grad.iter().map(|g| g * g).sum::<f64>() * h
}

/// Checks the Dirichlet a priori estimate after every monitored step: the
/// memory-weighted solution term plus the accumulated gradient energy
/// stays below the source and initial-data terms. Requires homogeneous
/// boundary data and a weight at or above the stability threshold.
pub fn monitor_dirichlet_estimate(
    history: &SolutionHistory,
    problem: &ProblemSpec,
    config: &SolverConfig,
) -> Result<EstimateReport, EstimateError> {
    let (mu1, mu2) = match &problem.bc {
        BoundaryCondition::Dirichlet { mu1, mu2 } => (mu1.clone(), mu2.clone()),
        BoundaryCondition::Robin { .. } => {
            return Err(EstimateError::BoundaryMismatch {
                expected: "dirichlet",
                found: "robin",
            })
        }
    };
    let data = prepare_monitor(history, problem, config)?;
    let grid = *history.grid();
    for j in 0..=data.steps {
        let t = grid.t(j);
        for (index, mu) in [(1u8, &mu1), (2u8, &mu2)] {
            let value = mu(t);
            if value != 0.0 {
                return Err(EstimateError::InhomogeneousDirichlet { index, t, value });
            }
        }
    }

    let n = grid.n();
    let h = grid.h();
    let tau = grid.tau();
    let l = grid.l();
    let u0 = history.level(0);

    let mut grad_cum = 0.0;
    let mut phi_cum = 0.0;
    let mut records = Vec::with_capacity(data.steps);
    for j in 0..data.steps {
        let weighted = weighted_level(history, data.sigma, j);
        grad_cum += halfopen_grad_norm_sq(&weighted, h) * tau;

        let t_bar = grid.t_half(j);
        let phi: Vec<f64> = (0..=n).map(|i| (problem.f)(grid.x(i), t_bar)).collect();
        phi_cum += inner_open(&phi, &phi, h).expect("matching lengths") * tau;

        // open-product time term: sum_i h / Gamma(2-alpha_i) *
        //   sum_{j'=0}^{j} b_i[j-j'] (y_i^{j'+1})^2
        let mut time_term = 0.0;
        let mut init_term = 0.0;
        let t_next = grid.t(j + 1);
        for i in 1..n {
            let mut node = 0.0;
            for jp in 0..=j {
                let y = history.level(jp + 1)[i];
                node += data.bweights[i][j - jp] * y * y;
            }
            time_term += h * node / data.gamma2[i];
            init_term += h * t_next.powf(1.0 - data.alphas[i]) / data.gamma2[i] * u0[i] * u0[i];
        }

        let lhs = time_term + data.c1 * grad_cum;
        let rhs = l * l / (2.0 * data.c1) * phi_cum + init_term;
        records.push(EstimateRecord {
            level: j,
            lhs,
            rhs,
            margin: rhs - lhs,
        });
    }
    Ok(EstimateReport::from_records(records))
}

/// Checks the Robin a priori estimate: closed-half products on the memory
/// and initial terms, boundary traces of the weighted levels on the left,
/// and the augmented boundary data on the right with the constants
/// `gamma = min(c1, beta0)` and `delta = max(1 + l, l^2)`.
pub fn monitor_robin_estimate(
    history: &SolutionHistory,
    problem: &ProblemSpec,
    config: &SolverConfig,
) -> Result<EstimateReport, EstimateError> {
    let (beta1, beta2, mu1, mu2) = match &problem.bc {
        BoundaryCondition::Robin {
            beta1,
            beta2,
            mu1,
            mu2,
        } => (beta1.clone(), beta2.clone(), mu1.clone(), mu2.clone()),
        BoundaryCondition::Dirichlet { .. } => {
            return Err(EstimateError::BoundaryMismatch {
                expected: "robin",
                found: "dirichlet",
            })
        }
    };
    let data = prepare_monitor(history, problem, config)?;
    let grid = *history.grid();
    let n = grid.n();
    let h = grid.h();
    let tau = grid.tau();
    let l = grid.l();
    let u0 = history.level(0);

    let mut beta0 = f64::INFINITY;
    for j in 0..data.steps {
        let t_bar = grid.t_half(j);
        for (index, beta) in [(1u8, &beta1), (2u8, &beta2)] {
            let value = beta(t_bar);
            if !(value > 0.0) {
                return Err(SolverError::NonpositiveRobinCoefficient {
                    index,
                    t: t_bar,
                    value,
                }
                .into());
            }
            beta0 = beta0.min(value);
        }
    }
    let gamma_const = data.c1.min(beta0);
    let delta_const = (1.0 + l).max(l * l);

    // closed-half node weights: h interior, h/2 at both ends
    let node_weight = |i: usize| if i == 0 || i == n { 0.5 * h } else { h };

    let mut energy_cum = 0.0;
    let mut data_cum = 0.0;
    let mut records = Vec::with_capacity(data.steps);
    for j in 0..data.steps {
        let weighted = weighted_level(history, data.sigma, j);
        energy_cum += (halfopen_grad_norm_sq(&weighted, h)
            + weighted[0] * weighted[0]
            + weighted[n] * weighted[n])
            * tau;

        let t_bar = grid.t_half(j);
        let phi: Vec<f64> = (0..=n).map(|i| (problem.f)(grid.x(i), t_bar)).collect();
        let mu1_tilde = mu1(t_bar) + 0.5 * h * phi[0];
        let mu2_tilde = mu2(t_bar) + 0.5 * h * phi[n];
        data_cum += (mu1_tilde * mu1_tilde
            + mu2_tilde * mu2_tilde
            + inner_open(&phi, &phi, h).expect("matching lengths"))
            * tau;

        let mut time_term = 0.0;
        let mut init_term = 0.0;
        let t_next = grid.t(j + 1);
        for i in 0..=n {
            let w = node_weight(i);
            let mut node = 0.0;
            for jp in 0..=j {
                let y = history.level(jp + 1)[i];
                node += data.bweights[i][j - jp] * y * y;
            }
            time_term += w * node / data.gamma2[i];
            init_term += w * t_next.powf(1.0 - data.alphas[i]) / data.gamma2[i] * u0[i] * u0[i];
        }

        let lhs = time_term + gamma_const * energy_cum;
        let rhs = delta_const / gamma_const * data_cum + init_term;
        records.push(EstimateRecord {
            level: j,
            lhs,
            rhs,
            margin: rhs - lhs,
        });
    }
    Ok(EstimateReport::from_records(records))
}

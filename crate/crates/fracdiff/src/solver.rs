//! The sigma-weighted implicit time-stepping schemes.
//!
//! One time step of either scheme solves a tridiagonal system over the
//! unknown level `y^{j+1}`. Interior rows discretize
//! `D^alpha(x_i) y = Lambda(sigma y^{j+1} + (1-sigma) y^j) + phi` with
//! `Lambda y = (a y_xbar)_x - d y`, coefficients sampled at
//! `a_i = k(x_{i-1/2}, t_{j+1/2})`, `d_i = q(x_i, t_{j+1/2})`,
//! `phi_i = f(x_i, t_{j+1/2})`. Dirichlet runs pin the boundary rows to the
//! prescribed values; Robin runs fold the flux condition into half-cell
//! boundary rows. The nonlocal memory term is a per-node dot product over
//! all earlier difference quotients, evaluated from precomputed power
//! tables and a node-contiguous history buffer.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fracops::{self, FracError};
use crate::mesh::{Grid, MeshError, SolutionHistory};

/// Coefficient of space and time, `(x, t) -> value`.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Coefficient of one variable (a spatial profile or a time signal).
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Wraps a plain closure as a shared space-time coefficient.
pub fn coeff2(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> SpaceTimeFn {
    Arc::new(f)
}

/// Wraps a plain closure as a shared one-variable coefficient.
pub fn coeff1(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("order alpha({x}) = {value} must lie in (0, 1)")]
    AlphaOutOfRange { x: f64, value: f64 },
    #[error("diffusivity k({x}, {t}) = {value} must be positive")]
    NonpositiveDiffusivity { x: f64, t: f64, value: f64 },
    #[error("reaction q({x}, {t}) = {value} must be nonnegative")]
    NegativeReaction { x: f64, t: f64, value: f64 },
    #[error("Robin coefficient beta{index}({t}) = {value} must be positive")]
    NonpositiveRobinCoefficient { index: u8, t: f64, value: f64 },
    #[error("sigma = {0} must lie in [0, 1]")]
    SigmaOutOfRange(f64),
    #[error("sigma threshold needs 0 < alpha_min <= 1, got {0}")]
    ThresholdDomain(f64),
    #[error("expected {expected} boundary data, found {found}")]
    BoundaryMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("history holds {have} levels but the step needs levels 0..={need}")]
    ShortHistory { have: usize, need: usize },
    #[error("step index {j} out of range for a grid with {j0} time steps")]
    StepOutOfRange { j: usize, j0: usize },
    #[error("history was built on a different grid than the solver config")]
    GridMismatch,
    #[error("near-zero pivot {pivot:e} in row {row} of the tridiagonal solve")]
    SingularSystem { row: usize, pivot: f64 },
    #[error(
        "band arrays must share one length, got lower {lower}, diag {diag}, \
         upper {upper}, rhs {rhs}"
    )]
    BandLengthMismatch {
        lower: usize,
        diag: usize,
        upper: usize,
        rhs: usize,
    },
    #[error("time level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<SolverError>,
    },
    #[error("self-check failed at level {level}: residual {residual:e} exceeds {bound:e}")]
    SelfCheckFailed {
        level: usize,
        residual: f64,
        bound: f64,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Frac(#[from] FracError),
}

impl SolverError {
    fn at_level(level: usize, source: SolverError) -> SolverError {
        SolverError::AtLevel {
            level,
            source: Box::new(source),
        }
    }
}

/// Boundary data of the continuous problem.
#[derive(Clone)]
pub enum BoundaryCondition {
    /// `u(0, t) = mu1(t)`, `u(l, t) = mu2(t)`.
    Dirichlet { mu1: ScalarFn, mu2: ScalarFn },
    /// `k(0,t) u_x(0,t) = beta1(t) u(0,t) - mu1(t)` and
    /// `-k(l,t) u_x(l,t) = beta2(t) u(l,t) - mu2(t)`.
    Robin {
        beta1: ScalarFn,
        beta2: ScalarFn,
        mu1: ScalarFn,
        mu2: ScalarFn,
    },
}

impl BoundaryCondition {
    pub fn kind(&self) -> &'static str {
        match self {
            BoundaryCondition::Dirichlet { .. } => "dirichlet",
            BoundaryCondition::Robin { .. } => "robin",
        }
    }

    pub fn is_robin(&self) -> bool {
        matches!(self, BoundaryCondition::Robin { .. })
    }
}

impl std::fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.kind())
    }
}

/// The full continuous problem: coefficients, order profile, initial and
/// boundary data, and the domain extent.
#[derive(Clone)]
pub struct ProblemSpec {
    pub k: SpaceTimeFn,
    pub q: SpaceTimeFn,
    pub f: SpaceTimeFn,
    pub alpha: ScalarFn,
    pub u0: ScalarFn,
    pub bc: BoundaryCondition,
    pub l: f64,
    pub t_final: f64,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("bc", &self.bc)
            .field("l", &self.l)
            .field("t_final", &self.t_final)
            .finish_non_exhaustive()
    }
}

/// Weight of the implicit/explicit blend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// `1 / (3 - 2^(1 - min_i alpha(x_i)))` from the grid samples.
    Auto,
    Fixed(f64),
}

/// Scheme configuration: the grid and the weight.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub grid: Grid,
    pub sigma: Sigma,
}

impl SolverConfig {
    pub fn new(grid: Grid, sigma: Sigma) -> Self {
        SolverConfig { grid, sigma }
    }

    /// The weight actually used by a march: the fixed value (validated to
    /// lie in `[0, 1]`) or the stability threshold of the sampled minimum
    /// order.
    pub fn resolve_sigma(&self, problem: &ProblemSpec) -> Result<f64, SolverError> {
        match self.sigma {
            Sigma::Fixed(s) => {
                if !(0.0..=1.0).contains(&s) {
                    return Err(SolverError::SigmaOutOfRange(s));
                }
                Ok(s)
            }
            Sigma::Auto => {
                let mut alpha_min = f64::INFINITY;
                for i in 0..=self.grid.n() {
                    let x = self.grid.x(i);
                    let a = (problem.alpha)(x);
                    if !(a > 0.0 && a < 1.0) {
                        return Err(SolverError::AlphaOutOfRange { x, value: a });
                    }
                    alpha_min = alpha_min.min(a);
                }
                sigma_threshold(alpha_min)
            }
        }
    }
}

/// Smallest weight for which the scheme is absolutely stable:
/// `1 / (3 - 2^(1 - alpha_min))`. Degenerates to the classical `1/2` at
/// `alpha_min = 1` and tends to 1 as `alpha_min -> 0`.
pub fn sigma_threshold(alpha_min: f64) -> Result<f64, SolverError> {
    if !(alpha_min > 0.0 && alpha_min <= 1.0) {
        return Err(SolverError::ThresholdDomain(alpha_min));
    }
    Ok(1.0 / (3.0 - 2.0_f64.powf(1.0 - alpha_min)))
}

/// One per-step linear system: three bands and the right-hand side, all of
/// length `n`. `lower[0]` and `upper[n-1]` are unused and stay zero for
/// scheme-assembled systems.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    fn check_bands(&self) -> Result<(), SolverError> {
        let n = self.diag.len();
        if n == 0 || self.lower.len() != n || self.upper.len() != n || self.rhs.len() != n {
            return Err(SolverError::BandLengthMismatch {
                lower: self.lower.len(),
                diag: n,
                upper: self.upper.len(),
                rhs: self.rhs.len(),
            });
        }
        Ok(())
    }

    /// True when `|diag_i| > |lower_i| + |upper_i|` in every row.
    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        let n = self.diag.len();
        (0..n).all(|i| {
            let lo = if i > 0 { self.lower[i].abs() } else { 0.0 };
            let up = if i + 1 < n { self.upper[i].abs() } else { 0.0 };
            self.diag[i].abs() > lo + up
        })
    }

    /// Row `i` of `A x`.
    fn apply_row(&self, x: &[f64], i: usize) -> f64 {
        let mut acc = self.diag[i] * x[i];
        if i > 0 {
            acc += self.lower[i] * x[i - 1];
        }
        if i + 1 < x.len() {
            acc += self.upper[i] * x[i + 1];
        }
        acc
    }

    /// `(||A x - b||_inf, max(||b||_inf, ||A x||_inf))` for self-checks.
    pub fn residual_inf(&self, x: &[f64]) -> (f64, f64) {
        let mut res = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..self.diag.len() {
            let ax = self.apply_row(x, i);
            res = res.max((ax - self.rhs[i]).abs());
            scale = scale.max(ax.abs()).max(self.rhs[i].abs());
        }
        (res, scale)
    }
}

/// Thomas elimination. Stable for the strictly diagonally dominant systems
/// the schemes produce; rejects near-singular pivots.
pub fn thomas_solve(sys: &TridiagonalSystem) -> Result<Vec<f64>, SolverError> {
    sys.check_bands()?;
    let n = sys.n();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];

    let pivot_ok = |pivot: f64, row: usize| -> Result<(), SolverError> {
        let scale = sys.diag[row].abs() + sys.lower[row].abs() + sys.upper[row].abs();
        if !pivot.is_finite() || pivot.abs() <= 1e-14 * scale || pivot == 0.0 {
            return Err(SolverError::SingularSystem { row, pivot });
        }
        Ok(())
    };

    let mut denom = sys.diag[0];
    pivot_ok(denom, 0)?;
    if n > 1 {
        c[0] = sys.upper[0] / denom;
    }
    x[0] = sys.rhs[0] / denom;
    for i in 1..n {
        denom = sys.diag[i] - sys.lower[i] * c[i - 1];
        pivot_ok(denom, i)?;
        if i + 1 < n {
            c[i] = sys.upper[i] / denom;
        }
        x[i] = (sys.rhs[i] - sys.lower[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Fixed-order chunked dot product. The 8-lane accumulation keeps the
/// summation order independent of anything but the slice contents, and
/// lets the compiler vectorize the history sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for lane in 0..8 {
            acc[lane] += ca[lane] * cb[lane];
        }
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Steps per history block. At each block boundary the accumulated
/// contribution of all older quotients to the next `HISTORY_BLOCK` steps
/// is recomputed in one pass, so every weight and quotient is fetched
/// from memory once per block instead of once per step. The per-step
/// work inside a block is then a dot product over at most
/// `HISTORY_BLOCK - 1` recent quotients.
const HISTORY_BLOCK: usize = 64;

/// Quotient entries per cache tile of the block refill; 4 KiB tiles keep
/// the sliding weight window and the quotients resident in L1.
const HISTORY_TILE: usize = 512;

/// Node-contiguous store of the difference quotients `y^{s+1} - y^s`
/// (kept in reverse time order so history sums pair forward-contiguous
/// slices) plus the per-block prefix accumulators.
///
/// The memory sum is the causal convolution `H_i(j) = sum_s w_i[j-s] dy_i[s]`.
/// Evaluating it term by term at every step streams O(j) memory per node
/// per step and turns the march memory-bound; the block refill brings the
/// traffic down to O(j / HISTORY_BLOCK) amortized while keeping a fixed
/// summation order, so results stay bit-deterministic.
struct HistoryEngine {
    dy: Vec<f64>,
    /// `acc[i * HISTORY_BLOCK + jb]`: contribution of all quotients before
    /// the current block to the step `block_start + jb` sum of node `i`.
    acc: Vec<f64>,
    j0: usize,
    filled: usize,
}

impl HistoryEngine {
    fn new(n: usize, j0: usize) -> Self {
        HistoryEngine {
            dy: vec![0.0; (n + 1) * j0],
            acc: vec![0.0; (n + 1) * HISTORY_BLOCK],
            j0,
            filled: 0,
        }
    }

    fn push(&mut self, prev: &[f64], next: &[f64]) {
        let slot = self.j0 - 1 - self.filled;
        for (i, (p, q)) in prev.iter().zip(next).enumerate() {
            self.dy[i * self.j0 + slot] = q - p;
        }
        self.filled += 1;
    }

    /// Refills the block accumulators at block start `j`: for each node,
    /// `acc[jb] = sum_{s < j} w[jb + j - s] dy[s]`, which in the reversed
    /// layout is a forward dot of the quotient tail against the weight row
    /// shifted by `jb + 1`. Tiled so the weight window stays in cache
    /// across the `jb` loop; nodes run in parallel.
    fn refill(&mut self, weights: &[f64], j: usize, block_len: usize) {
        debug_assert_eq!(self.filled, j);
        debug_assert_eq!(j % HISTORY_BLOCK, 0);
        let j0 = self.j0;
        let dy = &self.dy;
        self.acc
            .par_chunks_mut(HISTORY_BLOCK)
            .enumerate()
            .for_each(|(i, acc_row)| {
                acc_row.fill(0.0);
                let dy_tail = &dy[i * j0 + (j0 - j)..(i + 1) * j0];
                let w_row = &weights[i * j0..(i + 1) * j0];
                let mut tile_start = 0;
                while tile_start < j {
                    let tile_end = (tile_start + HISTORY_TILE).min(j);
                    let dy_tile = &dy_tail[tile_start..tile_end];
                    for (jb, acc) in acc_row.iter_mut().enumerate().take(block_len) {
                        let w_seg = &w_row[jb + 1 + tile_start..jb + 1 + tile_end];
                        *acc += dot(w_seg, dy_tile);
                    }
                    tile_start = tile_end;
                }
            });
    }

    /// History load for step `j` into `out`: the block accumulator plus a
    /// short dot over the quotients produced inside the current block.
    fn load(&mut self, weights: &[f64], rho: &[f64], j: usize, out: &mut [f64]) {
        debug_assert_eq!(self.filled, j);
        let jb = j % HISTORY_BLOCK;
        if jb == 0 {
            let block_len = HISTORY_BLOCK.min(self.j0 - j);
            self.refill(weights, j, block_len);
        }
        let j0 = self.j0;
        let block_start = j - jb;
        for (i, o) in out.iter_mut().enumerate() {
            // quotients from steps block_start..j, newest first
            let recent = &self.dy[i * j0 + (j0 - j)..i * j0 + (j0 - block_start)];
            let w_seg = &weights[i * j0 + 1..i * j0 + 1 + jb];
            *o = rho[i] * (self.acc[i * HISTORY_BLOCK + jb] + dot(w_seg, recent));
        }
    }
}

/// Precomputed per-node scheme data: orders, the `tau^-alpha/Gamma`
/// factors, and the power-difference tables for the memory weights.
struct Stepper<'a> {
    problem: &'a ProblemSpec,
    grid: Grid,
    sigma: f64,
    rho: Vec<f64>,
    /// `(m+1)^(1-alpha_i) - m^(1-alpha_i)` for `m = 0..j0`, node-major.
    weights: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a ProblemSpec, grid: Grid, sigma: f64) -> Result<Self, SolverError> {
        let n = grid.n();
        let j0 = grid.j0();
        let tau = grid.tau();
        let mut rho = Vec::with_capacity(n + 1);
        let mut weights = vec![0.0; (n + 1) * j0];
        for i in 0..=n {
            let x = grid.x(i);
            let a = (problem.alpha)(x);
            if !(a > 0.0 && a < 1.0) {
                return Err(SolverError::AlphaOutOfRange { x, value: a });
            }
            let e = 1.0 - a;
            rho.push(tau.powf(-a) / fracops::gamma(2.0 - a)?);
            let row = &mut weights[i * j0..(i + 1) * j0];
            let mut prev = 0.0;
            for (m, w) in row.iter_mut().enumerate() {
                let next = ((m + 1) as f64).powf(e);
                *w = next - prev;
                prev = next;
            }
        }
        Ok(Stepper {
            problem,
            grid,
            sigma,
            rho,
            weights,
        })
    }

    /// Same load computed straight from stored solution levels, through
    /// the same fixed-order reduction as the accelerated path.
    fn history_load_from(&self, history: &SolutionHistory, j: usize, out: &mut [f64]) {
        let j0 = self.grid.j0();
        let mut dy = vec![0.0; j];
        for (i, o) in out.iter_mut().enumerate() {
            for (m, slot) in dy.iter_mut().enumerate() {
                // newest quotient first, matching DyBuffer::tail
                *slot = history.level(j - m)[i] - history.level(j - m - 1)[i];
            }
            *o = self.rho[i] * dot(&self.weights[i * j0 + 1..i * j0 + 1 + j], &dy);
        }
    }

    /// Builds the step-`j` system over the unknown level `j+1` given the
    /// current level and the per-node history loads.
    fn assemble(
        &self,
        yj: &[f64],
        load: &[f64],
        j: usize,
    ) -> Result<TridiagonalSystem, SolverError> {
        let n = self.grid.n();
        let h = self.grid.h();
        let h2 = h * h;
        let sigma = self.sigma;
        let t_bar = self.grid.t_half(j);
        let t_next = self.grid.t(j + 1);

        // a_i = k(x_{i-1/2}, t_bar), i = 1..=N
        let mut a = vec![0.0; n + 1];
        for (i, ai) in a.iter_mut().enumerate().skip(1) {
            let x = self.grid.x_half(i);
            let v = (self.problem.k)(x, t_bar);
            if !(v > 0.0) {
                return Err(SolverError::NonpositiveDiffusivity {
                    x,
                    t: t_bar,
                    value: v,
                });
            }
            *ai = v;
        }

        let sample_q = |x: f64| -> Result<f64, SolverError> {
            let v = (self.problem.q)(x, t_bar);
            if !(v >= 0.0) {
                return Err(SolverError::NegativeReaction {
                    x,
                    t: t_bar,
                    value: v,
                });
            }
            Ok(v)
        };

        let mut lower = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut upper = vec![0.0; n + 1];
        let mut rhs = vec![0.0; n + 1];

        for i in 1..n {
            let x = self.grid.x(i);
            let d = sample_q(x)?;
            let phi = (self.problem.f)(x, t_bar);
            let lambda_j = (a[i + 1] * (yj[i + 1] - yj[i]) - a[i] * (yj[i] - yj[i - 1])) / h2
                - d * yj[i];
            lower[i] = -sigma * a[i] / h2;
            upper[i] = -sigma * a[i + 1] / h2;
            diag[i] = self.rho[i] + sigma * ((a[i] + a[i + 1]) / h2 + d);
            rhs[i] = self.rho[i] * yj[i] - load[i] + (1.0 - sigma) * lambda_j + phi;
        }

        match &self.problem.bc {
            BoundaryCondition::Dirichlet { mu1, mu2 } => {
                diag[0] = 1.0;
                rhs[0] = mu1(t_next);
                diag[n] = 1.0;
                rhs[n] = mu2(t_next);
            }
            BoundaryCondition::Robin {
                beta1,
                beta2,
                mu1,
                mu2,
            } => {
                let check_beta = |v: f64, index: u8| -> Result<f64, SolverError> {
                    if !(v > 0.0) {
                        return Err(SolverError::NonpositiveRobinCoefficient {
                            index,
                            t: t_bar,
                            value: v,
                        });
                    }
                    Ok(v)
                };
                let d0 = sample_q(self.grid.x(0))?;
                let dn = sample_q(self.grid.x(n))?;
                let f0 = (self.problem.f)(self.grid.x(0), t_bar);
                let fnn = (self.problem.f)(self.grid.x(n), t_bar);
                let bt1 = check_beta(beta1(t_bar), 1)? + 0.5 * h * d0;
                let bt2 = check_beta(beta2(t_bar), 2)? + 0.5 * h * dn;
                let mt1 = mu1(t_bar) + 0.5 * h * f0;
                let mt2 = mu2(t_bar) + 0.5 * h * fnn;

                // half-cell flux balance at x = 0:
                // Lambda y = (a_1 y_x - bt1 y) / (0.5 h), phi_0 = 2 mt1 / h
                let lambda0_j = 2.0 * a[1] * (yj[1] - yj[0]) / h2 - 2.0 * bt1 * yj[0] / h;
                diag[0] = self.rho[0] + sigma * (2.0 * a[1] / h2 + 2.0 * bt1 / h);
                upper[0] = -sigma * 2.0 * a[1] / h2;
                rhs[0] = self.rho[0] * yj[0] - load[0] + (1.0 - sigma) * lambda0_j + 2.0 * mt1 / h;

                // mirrored at x = l, with the outward flux sign:
                // Lambda y = (-a_N y_xbar - bt2 y) / (0.5 h), phi_N = 2 mt2 / h
                let lambdan_j = -2.0 * a[n] * (yj[n] - yj[n - 1]) / h2 - 2.0 * bt2 * yj[n] / h;
                diag[n] = self.rho[n] + sigma * (2.0 * a[n] / h2 + 2.0 * bt2 / h);
                lower[n] = -sigma * 2.0 * a[n] / h2;
                rhs[n] = self.rho[n] * yj[n] - load[n] + (1.0 - sigma) * lambdan_j + 2.0 * mt2 / h;
            }
        }

        Ok(TridiagonalSystem {
            lower,
            diag,
            upper,
            rhs,
        })
    }
}

fn check_step_inputs(
    config: &SolverConfig,
    history: &SolutionHistory,
    j: usize,
) -> Result<(), SolverError> {
    if history.grid() != &config.grid {
        return Err(SolverError::GridMismatch);
    }
    if j >= config.grid.j0() {
        return Err(SolverError::StepOutOfRange {
            j,
            j0: config.grid.j0(),
        });
    }
    if history.len() < j + 1 {
        return Err(SolverError::ShortHistory {
            have: history.len(),
            need: j,
        });
    }
    Ok(())
}

fn assemble_step(
    problem: &ProblemSpec,
    config: &SolverConfig,
    history: &SolutionHistory,
    j: usize,
) -> Result<TridiagonalSystem, SolverError> {
    check_step_inputs(config, history, j)?;
    let sigma = config.resolve_sigma(problem)?;
    let stepper = Stepper::new(problem, config.grid, sigma)?;
    let mut load = vec![0.0; config.grid.n() + 1];
    stepper.history_load_from(history, j, &mut load);
    stepper.assemble(history.level(j), &load, j)
}

/// Assembles the step-`j` Dirichlet system over the unknowns
/// `y^{j+1}_0..y^{j+1}_N` from stored levels `0..=j`.
pub fn assemble_dirichlet_step(
    problem: &ProblemSpec,
    config: &SolverConfig,
    history: &SolutionHistory,
    j: usize,
) -> Result<TridiagonalSystem, SolverError> {
    if problem.bc.is_robin() {
        return Err(SolverError::BoundaryMismatch {
            expected: "dirichlet",
            found: "robin",
        });
    }
    assemble_step(problem, config, history, j)
}

/// Assembles the step-`j` Robin system; rows `1..N-1` match the Dirichlet
/// assembly and the boundary rows carry the half-cell flux balance.
pub fn assemble_robin_step(
    problem: &ProblemSpec,
    config: &SolverConfig,
    history: &SolutionHistory,
    j: usize,
) -> Result<TridiagonalSystem, SolverError> {
    if !problem.bc.is_robin() {
        return Err(SolverError::BoundaryMismatch {
            expected: "robin",
            found: "dirichlet",
        });
    }
    assemble_step(problem, config, history, j)
}

// Relative bound for the per-step linear-system self-check.
const SELF_CHECK_REL: f64 = 1e-11;

/// Runs the full march: level 0 is the sampled initial condition, levels
/// `1..=j0` come from assemble + Thomas solve, and every solved system is
/// re-checked against its right-hand side.
pub fn march(problem: &ProblemSpec, config: &SolverConfig) -> Result<SolutionHistory, SolverError> {
    let grid = config.grid;
    let sigma = config.resolve_sigma(problem)?;
    let stepper = Stepper::new(problem, grid, sigma)?;
    let initial: Vec<f64> = (0..=grid.n()).map(|i| (problem.u0)(grid.x(i))).collect();
    let mut history = SolutionHistory::new(grid, initial)?;
    let mut engine = HistoryEngine::new(grid.n(), grid.j0());
    let mut load = vec![0.0; grid.n() + 1];

    for j in 0..grid.j0() {
        let level = j + 1;
        engine.load(&stepper.weights, &stepper.rho, j, &mut load);
        let sys = stepper
            .assemble(history.level(j), &load, j)
            .map_err(|e| SolverError::at_level(level, e))?;
        debug_assert!(sys.is_strictly_diagonally_dominant());
        let next = thomas_solve(&sys).map_err(|e| SolverError::at_level(level, e))?;
        let (residual, scale) = sys.residual_inf(&next);
        let bound = SELF_CHECK_REL * scale;
        if !residual.is_finite() || residual > bound {
            return Err(SolverError::SelfCheckFailed {
                level,
                residual,
                bound,
            });
        }
        engine.push(history.level(j), &next);
        history.push_level(next)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dirichlet_zero() -> BoundaryCondition {
        BoundaryCondition::Dirichlet {
            mu1: coeff1(|_| 0.0),
            mu2: coeff1(|_| 0.0),
        }
    }

    fn zero_problem() -> ProblemSpec {
        ProblemSpec {
            k: coeff2(|_, _| 1.0),
            q: coeff2(|_, _| 0.0),
            f: coeff2(|_, _| 0.0),
            alpha: coeff1(|_| 0.5),
            u0: coeff1(|_| 0.0),
            bc: dirichlet_zero(),
            l: 1.0,
            t_final: 1.0,
        }
    }

    #[test]
    fn sigma_threshold_values() {
        assert!((sigma_threshold(1.0).unwrap() - 0.5).abs() <= 1e-15);
        let want = 1.0 / (3.0 - 2.0_f64.powf(0.9));
        assert!((sigma_threshold(0.1).unwrap() - want).abs() <= 1e-15);
        assert!((want - 0.8818855).abs() <= 1e-7);
        assert!((sigma_threshold(1e-12).unwrap() - 1.0).abs() <= 1e-9);
        assert!(sigma_threshold(0.0).is_err());
        assert!(sigma_threshold(1.5).is_err());
    }

    #[test]
    fn thomas_identity_and_hand_case() {
        let sys = TridiagonalSystem {
            lower: vec![0.0; 4],
            diag: vec![1.0; 4],
            upper: vec![0.0; 4],
            rhs: vec![3.0, -1.0, 0.5, 2.0],
        };
        assert_eq!(thomas_solve(&sys).unwrap(), sys.rhs);

        // [[2, 1], [1, 2]] x = (3, 3) -> x = (1, 1)
        let sys = TridiagonalSystem {
            lower: vec![0.0, 1.0],
            diag: vec![2.0, 2.0],
            upper: vec![1.0, 0.0],
            rhs: vec![3.0, 3.0],
        };
        let x = thomas_solve(&sys).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-15);
        assert!((x[1] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn thomas_rejects_singular() {
        let sys = TridiagonalSystem {
            lower: vec![0.0, 0.0],
            diag: vec![0.0, 1.0],
            upper: vec![0.0, 0.0],
            rhs: vec![1.0, 1.0],
        };
        assert!(matches!(
            thomas_solve(&sys),
            Err(SolverError::SingularSystem { row: 0, .. })
        ));
        let sys = TridiagonalSystem {
            lower: vec![0.0],
            diag: vec![2.0],
            upper: vec![0.0],
            rhs: vec![1.0, 1.0],
        };
        assert!(matches!(
            thomas_solve(&sys),
            Err(SolverError::BandLengthMismatch { .. })
        ));
    }

    /// Dense Gaussian elimination with partial pivoting, as an
    /// independent oracle for the banded solver.
    fn dense_solve(sys: &TridiagonalSystem) -> Vec<f64> {
        let n = sys.n();
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            a[i][i] = sys.diag[i];
            if i > 0 {
                a[i][i - 1] = sys.lower[i];
            }
            if i + 1 < n {
                a[i][i + 1] = sys.upper[i];
            }
            a[i][n] = sys.rhs[i];
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
                .unwrap();
            a.swap(col, pivot_row);
            for row in col + 1..n {
                let factor = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut acc = a[row][n];
            for k in row + 1..n {
                acc -= a[row][k] * x[k];
            }
            x[row] = acc / a[row][row];
        }
        x
    }

    #[test]
    fn thomas_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let n = rng.random_range(1..=200);
            let mut lower = vec![0.0_f64; n];
            let mut diag = vec![0.0_f64; n];
            let mut upper = vec![0.0_f64; n];
            let mut rhs = vec![0.0_f64; n];
            for i in 0..n {
                if i > 0 {
                    lower[i] = rng.random_range(-1.0..1.0);
                }
                if i + 1 < n {
                    upper[i] = rng.random_range(-1.0..1.0);
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                diag[i] = sign * (lower[i].abs() + upper[i].abs() + rng.random_range(0.5..3.0));
                rhs[i] = rng.random_range(-10.0..10.0);
            }
            let sys = TridiagonalSystem {
                lower,
                diag,
                upper,
                rhs,
            };
            assert!(sys.is_strictly_diagonally_dominant());
            let x = thomas_solve(&sys).unwrap();
            let y = dense_solve(&sys);
            for (xi, yi) in x.iter().zip(&y) {
                let scale = xi.abs().max(yi.abs()).max(1.0);
                assert!((xi - yi).abs() <= 1e-12 * scale, "n={n}: {xi} vs {yi}");
            }
        }
    }

    #[test]
    fn zero_problem_stays_zero() {
        let grid = Grid::new(8, 12, 1.0, 1.0).unwrap();
        let history = march(&zero_problem(), &SolverConfig::new(grid, Sigma::Auto)).unwrap();
        assert_eq!(history.len(), 13);
        for j in 0..history.len() {
            assert!(history.level(j).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn smallest_grid_marches() {
        let grid = Grid::new(2, 1, 1.0, 1.0).unwrap();
        let problem = ProblemSpec {
            f: coeff2(|_, _| 1.0),
            u0: coeff1(|x| x * (1.0 - x)),
            ..zero_problem()
        };
        let history = march(&problem, &SolverConfig::new(grid, Sigma::Fixed(1.0))).unwrap();
        assert_eq!(history.len(), 2);
        assert!(history.last()[1].is_finite());
    }

    #[test]
    fn dirichlet_preserves_constants() {
        // boundary + initial data c, f = q * c: the constant solves the
        // scheme exactly at every level.
        let c = 2.75;
        let grid = Grid::new(9, 17, 2.0, 1.5).unwrap();
        let problem = ProblemSpec {
            k: coeff2(|x, t| 1.0 + x + 0.5 * t),
            q: coeff2(|x, t| 0.25 + x * t),
            f: coeff2(move |x, t| (0.25 + x * t) * c),
            alpha: coeff1(|x| 0.2 + 0.5 * x / 2.0),
            u0: coeff1(move |_| c),
            bc: BoundaryCondition::Dirichlet {
                mu1: coeff1(move |_| c),
                mu2: coeff1(move |_| c),
            },
            l: 2.0,
            t_final: 1.5,
        };
        let history = march(&problem, &SolverConfig::new(grid, Sigma::Auto)).unwrap();
        for j in 0..history.len() {
            for &v in history.level(j) {
                assert!((v - c).abs() <= 1e-12 * c, "level {j}: {v}");
            }
        }
    }

    #[test]
    fn robin_preserves_constants() {
        let c = -1.5;
        let grid = Grid::new(11, 23, 1.0, 1.0).unwrap();
        let problem = ProblemSpec {
            k: coeff2(|x, t| 1.0 + 0.3 * x + 0.1 * t),
            q: coeff2(|_, _| 0.0),
            f: coeff2(|_, _| 0.0),
            alpha: coeff1(|x| 0.3 + 0.4 * x),
            u0: coeff1(move |_| c),
            bc: BoundaryCondition::Robin {
                beta1: coeff1(|_| 1.0),
                beta2: coeff1(|_| 1.0),
                mu1: coeff1(move |_| c),
                mu2: coeff1(move |_| c),
            },
            l: 1.0,
            t_final: 1.0,
        };
        let history = march(&problem, &SolverConfig::new(grid, Sigma::Auto)).unwrap();
        for j in 0..history.len() {
            for &v in history.level(j) {
                assert!((v - c).abs() <= 1e-12 * c.abs(), "level {j}: {v}");
            }
        }
    }

    #[test]
    fn assembled_rows_strictly_dominant_any_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let n = rng.random_range(2..20);
            let j0 = rng.random_range(1..8);
            let grid = Grid::new(n, j0, 1.0, 1.0).unwrap();
            let kc = rng.random_range(0.1..5.0);
            let qc = rng.random_range(0.0..3.0);
            let robin = rng.random_bool(0.5);
            let bc = if robin {
                BoundaryCondition::Robin {
                    beta1: coeff1(|_| 0.7),
                    beta2: coeff1(|_| 2.0),
                    mu1: coeff1(|t| t),
                    mu2: coeff1(|_| 1.0),
                }
            } else {
                BoundaryCondition::Dirichlet {
                    mu1: coeff1(|t| t),
                    mu2: coeff1(|_| 1.0),
                }
            };
            let problem = ProblemSpec {
                k: coeff2(move |x, t| kc * (1.0 + x * t)),
                q: coeff2(move |x, _| qc * (1.0 + x)),
                f: coeff2(|x, t| x - t),
                alpha: coeff1(|x| 0.05 + 0.9 * x),
                u0: coeff1(|x| x * x),
                bc,
                l: 1.0,
                t_final: 1.0,
            };
            let sigma = Sigma::Fixed(rng.random_range(0.0..=1.0));
            let config = SolverConfig::new(grid, sigma);
            let history = march(&problem, &config).unwrap();
            for j in 0..j0 {
                let sys = assemble_step(&problem, &config, &history, j).unwrap();
                assert!(sys.is_strictly_diagonally_dominant(), "n={n} j={j}");
            }
        }
    }

    #[test]
    fn public_assembly_checks_preconditions() {
        let grid = Grid::new(4, 3, 1.0, 1.0).unwrap();
        let config = SolverConfig::new(grid, Sigma::Auto);
        let problem = zero_problem();
        let history = march(&problem, &config).unwrap();

        assert!(matches!(
            assemble_robin_step(&problem, &config, &history, 0),
            Err(SolverError::BoundaryMismatch { .. })
        ));
        assert!(matches!(
            assemble_dirichlet_step(&problem, &config, &history, 3),
            Err(SolverError::StepOutOfRange { .. })
        ));
        let short = SolutionHistory::new(grid, vec![0.0; 5]).unwrap();
        assert!(matches!(
            assemble_dirichlet_step(&problem, &config, &short, 2),
            Err(SolverError::ShortHistory { .. })
        ));
        let other = Grid::new(5, 3, 1.0, 1.0).unwrap();
        let wrong = SolutionHistory::new(other, vec![0.0; 6]).unwrap();
        assert!(matches!(
            assemble_dirichlet_step(&problem, &config, &wrong, 0),
            Err(SolverError::GridMismatch)
        ));
    }

    #[test]
    fn bad_coefficients_name_offending_point() {
        let grid = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let config = SolverConfig::new(grid, Sigma::Auto);

        let bad_k = ProblemSpec {
            k: coeff2(|x, _| 1.0 - 2.0 * x),
            ..zero_problem()
        };
        match march(&bad_k, &config).unwrap_err() {
            SolverError::AtLevel { level: 1, source } => {
                assert!(matches!(
                    *source,
                    SolverError::NonpositiveDiffusivity { .. }
                ));
            }
            other => panic!("unexpected error {other:?}"),
        }

        let bad_q = ProblemSpec {
            q: coeff2(|_, t| 0.5 - t),
            ..zero_problem()
        };
        // q(x, t_bar) turns negative once t_bar > 0.5; 16 steps of 1/16
        // put that at t_bar = 0.53125, i.e. while solving level 9.
        let grid = Grid::new(4, 16, 1.0, 1.0).unwrap();
        match march(&bad_q, &SolverConfig::new(grid, Sigma::Auto)).unwrap_err() {
            SolverError::AtLevel { level, source } => {
                assert_eq!(level, 9);
                assert!(matches!(*source, SolverError::NegativeReaction { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }

        let bad_alpha = ProblemSpec {
            alpha: coeff1(|x| 0.5 + x),
            ..zero_problem()
        };
        let grid = Grid::new(4, 4, 1.0, 1.0).unwrap();
        assert!(matches!(
            march(&bad_alpha, &SolverConfig::new(grid, Sigma::Auto)),
            Err(SolverError::AlphaOutOfRange { .. })
        ));

        let bad_beta = ProblemSpec {
            bc: BoundaryCondition::Robin {
                beta1: coeff1(|_| 0.0),
                beta2: coeff1(|_| 1.0),
                mu1: coeff1(|_| 0.0),
                mu2: coeff1(|_| 0.0),
            },
            ..zero_problem()
        };
        match march(&bad_beta, &SolverConfig::new(grid, Sigma::Auto)).unwrap_err() {
            SolverError::AtLevel { level: 1, source } => {
                assert!(matches!(
                    *source,
                    SolverError::NonpositiveRobinCoefficient { index: 1, .. }
                ));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sigma_validation() {
        let grid = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let problem = zero_problem();
        let config = SolverConfig::new(grid, Sigma::Fixed(1.25));
        assert!(matches!(
            march(&problem, &config),
            Err(SolverError::SigmaOutOfRange(_))
        ));
        // auto sigma for constant alpha = 0.5 equals the threshold
        let config = SolverConfig::new(grid, Sigma::Auto);
        let resolved = config.resolve_sigma(&problem).unwrap();
        assert_eq!(resolved, sigma_threshold(0.5).unwrap());
    }

    #[test]
    fn accelerated_history_matches_direct_path() {
        // march uses the reversed-buffer dot product; re-assembling from
        // the stored levels must give the same systems it solved.
        let grid = Grid::new(6, 9, 1.0, 1.0).unwrap();
        let problem = ProblemSpec {
            k: coeff2(|x, t| 1.0 + x * x + t),
            q: coeff2(|x, t| x + t),
            f: coeff2(|x, t| (3.0 * x).sin() + t * t),
            alpha: coeff1(|x| 0.15 + 0.7 * x),
            u0: coeff1(|x| x * (1.0 - x)),
            bc: BoundaryCondition::Dirichlet {
                mu1: coeff1(|t| t * t),
                mu2: coeff1(|t| 1.0 - t),
            },
            l: 1.0,
            t_final: 1.0,
        };
        let config = SolverConfig::new(grid, Sigma::Auto);
        let history = march(&problem, &config).unwrap();
        for j in 0..grid.j0() {
            let sys = assemble_dirichlet_step(&problem, &config, &history, j).unwrap();
            let (residual, scale) = sys.residual_inf(history.level(j + 1));
            assert!(
                residual <= 1e-11 * scale.max(1e-300),
                "level {}: residual {residual:e}",
                j + 1
            );
        }
    }
}

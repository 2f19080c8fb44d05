//! Uniform space-time grids, grid functions, difference quotients, and the
//! three discrete inner products the schemes and estimates use.
//!
//! Spatial functions are plain `&[f64]` node arrays of length `N + 1` with
//! node `i` at `x_i = i * h`; time levels live at `t_j = j * tau`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("grid needs at least 2 spatial cells, got N = {0}")]
    TooFewCells(usize),
    #[error("grid needs at least 1 time step, got j0 = {0}")]
    TooFewSteps(usize),
    #[error("domain extent must be positive and finite, got l = {l}, T = {t_final}")]
    BadExtent { l: f64, t_final: f64 },
    #[error("node index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("node arrays must match: {left} vs {right} values")]
    LengthMismatch { left: usize, right: usize },
}

/// Uniform mesh over `[0, l] x [0, T]` with `N` spatial cells and `j0`
/// time steps. Built from the counts so `h = l / N` and `tau = T / j0`
/// are consistent by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    j0: usize,
    h: f64,
    tau: f64,
    l: f64,
    t_final: f64,
}

impl Grid {
    pub fn new(n: usize, j0: usize, l: f64, t_final: f64) -> Result<Self, MeshError> {
        if n < 2 {
            return Err(MeshError::TooFewCells(n));
        }
        if j0 < 1 {
            return Err(MeshError::TooFewSteps(j0));
        }
        if !(l > 0.0 && l.is_finite() && t_final > 0.0 && t_final.is_finite()) {
            return Err(MeshError::BadExtent { l, t_final });
        }
        Ok(Grid {
            n,
            j0,
            h: l / n as f64,
            tau: t_final / j0 as f64,
            l,
            t_final,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j0(&self) -> usize {
        self.j0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Node coordinate `x_i = i * h`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    /// Half-node coordinate `x_{i-1/2}` where the scheme samples `k`.
    pub fn x_half(&self, i: usize) -> f64 {
        (i as f64 - 0.5) * self.h
    }

    /// Time level `t_j = j * tau`.
    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.tau
    }

    /// Half time level `t_{j+1/2}` where the scheme samples coefficients.
    pub fn t_half(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.tau
    }
}

/// All computed time levels of a grid solution. Level `j` is the node
/// array at `t_j`; level 0 is the sampled initial condition.
#[derive(Debug, Clone)]
pub struct SolutionHistory {
    grid: Grid,
    levels: Vec<Vec<f64>>,
}

impl SolutionHistory {
    pub fn new(grid: Grid, initial: Vec<f64>) -> Result<Self, MeshError> {
        if initial.len() != grid.n() + 1 {
            return Err(MeshError::LengthMismatch {
                left: initial.len(),
                right: grid.n() + 1,
            });
        }
        Ok(SolutionHistory {
            grid,
            levels: vec![initial],
        })
    }

    pub fn push_level(&mut self, level: Vec<f64>) -> Result<(), MeshError> {
        if level.len() != self.grid.n() + 1 {
            return Err(MeshError::LengthMismatch {
                left: level.len(),
                right: self.grid.n() + 1,
            });
        }
        self.levels.push(level);
        Ok(())
    }

    /// Number of stored levels (initial condition included).
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j]
    }

    pub fn last(&self) -> &[f64] {
        self.levels.last().expect("history always holds level 0")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Forward difference quotient `(y[i+1] - y[i]) / h` at node `i`.
pub fn forward_diff(y: &[f64], h: f64, i: usize) -> Result<f64, MeshError> {
    if i + 1 >= y.len() {
        return Err(MeshError::IndexOutOfRange {
            index: i,
            max: y.len().saturating_sub(2),
        });
    }
    Ok((y[i + 1] - y[i]) / h)
}

/// Backward difference quotients at nodes `1..=N` as one array of length
/// `N`: entry `i - 1` holds `(y[i] - y[i-1]) / h`. The scheme's assembly
/// and the gradient norms consume whole rows, so this is the bulk form.
pub fn backward_quotients(y: &[f64], h: f64) -> Vec<f64> {
    y.windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

fn check_same_len(y: &[f64], v: &[f64]) -> Result<(), MeshError> {
    if y.len() != v.len() {
        return Err(MeshError::LengthMismatch {
            left: y.len(),
            right: v.len(),
        });
    }
    Ok(())
}

/// Open inner product `(y, v) = sum_{i=1}^{N-1} y_i v_i h`.
pub fn inner_open(y: &[f64], v: &[f64], h: f64) -> Result<f64, MeshError> {
    check_same_len(y, v)?;
    let n = y.len() - 1;
    let mut acc = 0.0;
    for i in 1..n {
        acc += y[i] * v[i];
    }
    Ok(acc * h)
}

/// Half-open inner product `(y, v] = sum_{i=1}^{N} y_i v_i h`.
pub fn inner_halfopen(y: &[f64], v: &[f64], h: f64) -> Result<f64, MeshError> {
    check_same_len(y, v)?;
    let mut acc = 0.0;
    for i in 1..y.len() {
        acc += y[i] * v[i];
    }
    Ok(acc * h)
}

/// Closed inner product with half-weighted ends:
/// `[y, v] = sum_{i=1}^{N-1} y_i v_i h + 0.5 h (y_0 v_0 + y_N v_N)`.
pub fn inner_closed_half(y: &[f64], v: &[f64], h: f64) -> Result<f64, MeshError> {
    check_same_len(y, v)?;
    let n = y.len() - 1;
    let mut acc = 0.5 * y[0] * v[0];
    for i in 1..n {
        acc += y[i] * v[i];
    }
    acc += 0.5 * y[n] * v[n];
    Ok(acc * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_derives_consistent_steps() {
        let g = Grid::new(10, 100, 1.0, 1.0).unwrap();
        assert!((g.h() * g.n() as f64 - g.l()).abs() <= 1e-14 * g.l());
        assert!((g.tau() * g.j0() as f64 - g.t_final()).abs() <= 1e-14 * g.t_final());
        assert_eq!(g.x(0), 0.0);
        assert!((g.x(10) - 1.0).abs() <= 1e-14);
        assert!((g.t_half(0) - 0.005).abs() <= 1e-17);
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(matches!(Grid::new(1, 5, 1.0, 1.0), Err(MeshError::TooFewCells(1))));
        assert!(matches!(Grid::new(4, 0, 1.0, 1.0), Err(MeshError::TooFewSteps(0))));
        assert!(Grid::new(4, 5, 0.0, 1.0).is_err());
        assert!(Grid::new(4, 5, 1.0, -2.0).is_err());
    }

    #[test]
    fn history_checks_level_lengths() {
        let g = Grid::new(4, 2, 1.0, 1.0).unwrap();
        let mut hist = SolutionHistory::new(g, vec![0.0; 5]).unwrap();
        assert!(hist.push_level(vec![1.0; 5]).is_ok());
        assert!(hist.push_level(vec![1.0; 4]).is_err());
        assert_eq!(hist.len(), 2);
        assert_eq!(hist.last()[0], 1.0);
        assert!(SolutionHistory::new(g, vec![0.0; 4]).is_err());
    }

    #[test]
    fn forward_diff_values() {
        let h = 0.1;
        let constant = vec![2.0; 6];
        assert_eq!(forward_diff(&constant, h, 2).unwrap(), 0.0);
        let linear: Vec<f64> = (0..6).map(|i| i as f64 * h).collect();
        for i in 0..5 {
            assert!((forward_diff(&linear, h, i).unwrap() - 1.0).abs() <= 1e-13);
        }
        // y = x^2, h = 0.1, i = 3 -> (0.16 - 0.09) / 0.1 = 0.7
        let quad: Vec<f64> = (0..6).map(|i| (i as f64 * h).powi(2)).collect();
        assert!((forward_diff(&quad, h, 3).unwrap() - 0.7).abs() <= 1e-13);
        assert!(forward_diff(&quad, h, 5).is_err());
    }

    #[test]
    fn inner_products_hand_values() {
        let h = 0.1;
        let ones = vec![1.0; 11];
        assert!((inner_open(&ones, &ones, h).unwrap() - 0.9).abs() <= 1e-14);
        assert!((inner_halfopen(&ones, &ones, h).unwrap() - 1.0).abs() <= 1e-14);
        assert!((inner_closed_half(&ones, &ones, h).unwrap() - 1.0).abs() <= 1e-14);

        // y = v = x_i on N = 4, h = 0.25: 0.25*(0.0625 + 0.25 + 0.5625)
        let xs: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        assert!((inner_open(&xs, &xs, 0.25).unwrap() - 0.21875).abs() <= 1e-14);

        let mut interior_zero = vec![0.0; 11];
        interior_zero[0] = 7.0;
        interior_zero[10] = -3.0;
        assert_eq!(inner_open(&interior_zero, &interior_zero, h).unwrap(), 0.0);

        assert!(inner_open(&ones, &xs, h).is_err());
    }

    #[test]
    fn inner_product_range_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let h = rng.random_range(0.01..1.0);
            let y: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let open = inner_open(&y, &v, h).unwrap();
            let half = inner_halfopen(&y, &v, h).unwrap();
            let closed = inner_closed_half(&y, &v, h).unwrap();
            let scale = open.abs().max(half.abs()).max(1.0);
            assert!((half - open - h * y[n] * v[n]).abs() <= 1e-12 * scale);
            assert!(
                (closed - open - 0.5 * h * (y[0] * v[0] + y[n] * v[n])).abs() <= 1e-12 * scale
            );
        }
    }

    #[test]
    fn inner_products_bilinear_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.random_range(2..30);
            let h = rng.random_range(0.01..1.0);
            let y: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a: f64 = rng.random_range(-2.0..2.0);
            let combo: Vec<f64> = y.iter().zip(&v).map(|(yi, vi)| a * yi + vi).collect();
            for inner in [inner_open, inner_halfopen, inner_closed_half] {
                let sym_l = inner(&y, &w, h).unwrap();
                let sym_r = inner(&w, &y, h).unwrap();
                assert_eq!(sym_l, sym_r);
                let lin = inner(&combo, &w, h).unwrap();
                let expect = a * inner(&y, &w, h).unwrap() + inner(&v, &w, h).unwrap();
                let scale = lin.abs().max(expect.abs()).max(1.0);
                assert!((lin - expect).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn discrete_friedrichs_inequality() {
        // For y with y_0 = y_N = 0: (y, y) <= (l^2 / 2) * (y_xbar, y_xbar]
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let n = rng.random_range(2..50);
            let h = rng.random_range(0.01..0.5);
            let l = h * n as f64;
            let mut y: Vec<f64> = (0..=n).map(|_| rng.random_range(-10.0..10.0)).collect();
            y[0] = 0.0;
            y[n] = 0.0;
            let norm_sq = inner_open(&y, &y, h).unwrap();
            let grad = backward_quotients(&y, h);
            let grad_sq: f64 = grad.iter().map(|g| g * g).sum::<f64>() * h;
            assert!(
                norm_sq <= 0.5 * l * l * grad_sq * (1.0 + 1e-12),
                "n={n} h={h}: {norm_sq} > {}",
                0.5 * l * l * grad_sq
            );
        }
    }

    #[test]
    fn boundary_aware_inequality() {
        // [y, y] <= l^2 * (y_xbar, y_xbar] + l * (y_0^2 + y_N^2)
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let n = rng.random_range(2..50);
            let h = rng.random_range(0.01..0.5);
            let l = h * n as f64;
            let y: Vec<f64> = (0..=n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let closed_sq = inner_closed_half(&y, &y, h).unwrap();
            let grad = backward_quotients(&y, h);
            let grad_sq: f64 = grad.iter().map(|g| g * g).sum::<f64>() * h;
            let bound = l * l * grad_sq + l * (y[0] * y[0] + y[n] * y[n]);
            assert!(
                closed_sq <= bound * (1.0 + 1e-12),
                "n={n} h={h}: {closed_sq} > {bound}"
            );
        }
    }
}

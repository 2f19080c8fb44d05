//! Scalar fractional-calculus kernels.
//!
//! Everything here works with the Caputo derivative of order `alpha` in
//! (0, 1): the gamma function it needs, the L1 weights
//! `b_m = tau^(1-alpha) * ((m+1)^(1-alpha) - m^(1-alpha))`, the discrete
//! operator built from them, product-integration quadrature for the
//! continuous operator, and residual checkers for the two continuous
//! identities relating `v * d^beta(w)` to `d^beta(v w)`.

use thiserror::Error;

/// Errors for the fractional-calculus kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FracError {
    #[error("gamma requires a positive argument, got x = {0}")]
    GammaDomain(f64),
    #[error("fractional order must lie in (0, 1), got {0}")]
    OrderOutOfRange(f64),
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("series holds {got} samples but level {level} needs at least {need}")]
    ShortSeries { level: usize, got: usize, need: usize },
    #[error("quadrature requires t > 0 and m >= 2, got t = {t}, m = {m}")]
    QuadratureDomain { t: f64, m: usize },
}

// Lanczos coefficients for g = 7 (the GSL set). In double precision this
// stays within ~7e-15 relative error on (0, 10], well under the 1e-13
// budget for the arguments 1-alpha .. 4-alpha that arise here.
const LANCZOS_COEFFS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

fn lanczos_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: gamma(x) = pi / (sin(pi x) * gamma(1 - x))
        return std::f64::consts::PI
            / ((std::f64::consts::PI * x).sin() * lanczos_gamma(1.0 - x));
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let w = z + 7.5;
    (2.0 * std::f64::consts::PI).sqrt() * w.powf(z + 0.5) * (-w).exp() * acc
}

/// Gamma function for positive arguments.
pub fn gamma(x: f64) -> Result<f64, FracError> {
    if !(x > 0.0) {
        return Err(FracError::GammaDomain(x));
    }
    Ok(lanczos_gamma(x))
}

fn check_order(alpha: f64) -> Result<(), FracError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FracError::OrderOutOfRange(alpha));
    }
    Ok(())
}

fn check_step(tau: f64) -> Result<(), FracError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(FracError::BadStep(tau));
    }
    Ok(())
}

/// L1 weights `b_m = tau^(1-alpha) * ((m+1)^(1-alpha) - m^(1-alpha))`.
///
/// `values[m]` multiplies the difference quotient at distance `m` levels
/// from the evaluation time. The sequence is positive, strictly
/// decreasing, and telescopes: `sum_{m=0}^{j} b_m = t_{j+1}^(1-alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Weights {
    pub alpha: f64,
    pub tau: f64,
    pub values: Vec<f64>,
}

/// Builds the L1 weight sequence for `m = 0..=j_max`.
pub fn l1_weights(alpha: f64, tau: f64, j_max: usize) -> Result<L1Weights, FracError> {
    check_order(alpha)?;
    check_step(tau)?;
    let e = 1.0 - alpha;
    let tau_pow = tau.powf(e);
    let mut values = Vec::with_capacity(j_max + 1);
    let mut prev = 0.0; // 0^(1-alpha)
    for m in 0..=j_max {
        let next = ((m + 1) as f64).powf(e);
        values.push(tau_pow * (next - prev));
        prev = next;
    }
    Ok(L1Weights { alpha, tau, values })
}

/// Discrete Caputo derivative of order `alpha` at level `j`:
/// `(1/Gamma(2-alpha)) * sum_{s=0}^{j} b_{j-s} * (y[s+1] - y[s]) / tau`,
/// where the samples live at `t_s = s * tau`.
pub fn discrete_caputo(y: &[f64], tau: f64, alpha: f64, j: usize) -> Result<f64, FracError> {
    check_order(alpha)?;
    check_step(tau)?;
    if y.len() < j + 2 {
        return Err(FracError::ShortSeries {
            level: j,
            got: y.len(),
            need: j + 2,
        });
    }
    let e = 1.0 - alpha;
    // b_{j-s}/tau = tau^{-alpha} * ((j-s+1)^(1-alpha) - (j-s)^(1-alpha))
    let mut acc = 0.0;
    let mut outer = ((j + 1) as f64).powf(e); // (j - s + 1)^(1-alpha) at s = 0
    for s in 0..=j {
        let inner = ((j - s) as f64).powf(e);
        acc += (outer - inner) * (y[s + 1] - y[s]);
        outer = inner;
    }
    Ok(acc * tau.powf(-alpha) / lanczos_gamma(2.0 - alpha))
}

/// Caputo derivative of a smooth function by product integration: `v` is
/// interpolated piecewise-linearly on a uniform mesh of `m` cells over
/// `[0, t]` and the singular kernel is integrated exactly against the
/// interpolant. Error is O(m^-(2-beta)).
pub fn caputo_quadrature(
    v: impl Fn(f64) -> f64,
    beta: f64,
    t: f64,
    m: usize,
) -> Result<f64, FracError> {
    check_order(beta)?;
    if !(t > 0.0) || m < 2 {
        return Err(FracError::QuadratureDomain { t, m });
    }
    let step = t / m as f64;
    let e = 1.0 - beta;
    let mut acc = 0.0;
    let mut outer = (m as f64).powf(e);
    let mut prev = v(0.0);
    for r in 0..m {
        let cur = v((r + 1) as f64 * step);
        let inner = ((m - r - 1) as f64).powf(e);
        acc += (outer - inner) * (cur - prev);
        outer = inner;
        prev = cur;
    }
    Ok(acc * step.powf(-beta) / lanczos_gamma(2.0 - beta))
}

/// Shared evaluation for the two continuous identities: returns the
/// pairing term `v(t) d^beta(w) + w(t) d^beta(v)`, the operator applied to
/// the product `d^beta(v w)`, and the double-integral remainder, each at
/// resolution `m`.
///
/// The remainder `(beta/Gamma(1-beta)) int_0^t (t-xi)^(beta-1) A(xi) B(xi) dxi`
/// pairs the inner kernel integrals `A`, `B` of `v` and `w`. For the
/// piecewise-linear interpolants the product-integration rule works with,
/// those inner integrals are exactly `a0 + a1 (t-xi)^(1-beta)` per cell,
/// so the whole cell integrand is a three-term power function of
/// `u = t - xi` and is integrated in closed form. Resampling `A B`
/// polynomially instead would hit the Hoelder corner of `A` at `xi = t`
/// and stall the refinement at first order.
fn identity_terms(
    v: &impl Fn(f64) -> f64,
    w: &impl Fn(f64) -> f64,
    beta: f64,
    t: f64,
    m: usize,
) -> Result<(f64, f64, f64), FracError> {
    let dv = caputo_quadrature(v, beta, t, m)?;
    let dw = caputo_quadrature(w, beta, t, m)?;
    let dvw = caputo_quadrature(|s| v(s) * w(s), beta, t, m)?;
    let pairing = v(t) * dw + w(t) * dv;

    let step = t / m as f64;
    let e = 1.0 - beta;
    let mut remainder = 0.0;
    let mut a_left = 0.0; // A(xi_r)
    let mut b_left = 0.0;
    let mut v_left = v(0.0);
    let mut w_left = w(0.0);
    let mut u_left = t;
    let mut u_left_e = t.powf(e); // u^(1-beta)
    let mut u_left_b = t.powf(beta); // u^beta
    for r in 0..m {
        let xi_right = (r + 1) as f64 * step;
        let u_right = t - xi_right;
        let u_right_e = u_right.powf(e);
        let u_right_b = u_right.powf(beta);
        let v_right = v(xi_right);
        let w_right = w(xi_right);

        // on this cell: A(xi) = a0 + a1 u^(1-beta), same for B
        let sv = (v_right - v_left) / step;
        let sw = (w_right - w_left) / step;
        let a1 = -sv / e;
        let b1 = -sw / e;
        let a0 = a_left + sv * u_left_e / e;
        let b0 = b_left + sw * u_left_e / e;

        // exact moments of beta u^(beta-1) against 1, u^(1-beta), u^(2-2beta)
        let i0 = u_left_b - u_right_b;
        let i1 = beta * (u_left - u_right);
        let i2 = beta / (1.0 + e) * (u_left_e * u_left - u_right_e * u_right);
        remainder += a0 * b0 * i0 + (a0 * b1 + a1 * b0) * i1 + a1 * b1 * i2;

        a_left += sv * (u_left_e - u_right_e) / e;
        b_left += sw * (u_left_e - u_right_e) / e;
        v_left = v_right;
        w_left = w_right;
        u_left = u_right;
        u_left_e = u_right_e;
        u_left_b = u_right_b;
    }
    remainder /= lanczos_gamma(1.0 - beta);

    Ok((pairing, dvw, remainder))
}

/// Absolute residual of the product-rule identity
/// `v d^beta(w) + w d^beta(v) = d^beta(v w) + remainder` at resolution `m`.
/// Decreases under refinement for smooth inputs.
pub fn product_rule_residual(
    v: impl Fn(f64) -> f64,
    w: impl Fn(f64) -> f64,
    beta: f64,
    t: f64,
    m: usize,
) -> Result<f64, FracError> {
    let (pairing, dvw, remainder) = identity_terms(&v, &w, beta, t, m)?;
    Ok((pairing - dvw - remainder).abs())
}

/// Absolute residual of the energy identity
/// `v d^beta(v) = (1/2) d^beta(v^2) + remainder/2` at resolution `m`.
pub fn energy_identity_residual(
    v: impl Fn(f64) -> f64,
    beta: f64,
    t: f64,
    m: usize,
) -> Result<f64, FracError> {
    let (pairing, dvv, remainder) = identity_terms(&v, &v, beta, t, m)?;
    Ok((0.5 * pairing - 0.5 * dvv - 0.5 * remainder).abs())
}

/// The quadratic remainder of the energy identity. It is a kernel-weighted
/// integral of a square, so the returned value is nonnegative by
/// construction.
pub fn energy_identity_remainder(
    v: impl Fn(f64) -> f64,
    beta: f64,
    t: f64,
    m: usize,
) -> Result<f64, FracError> {
    let (_, _, remainder) = identity_terms(&v, &v, beta, t, m)?;
    Ok(0.5 * remainder)
}

//! Manufactured-solution checks that cross module boundaries: every
//! registry problem must satisfy its own equation, and the solver must
//! converge on the sine problems at the scheme's stated orders.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fracdiff::fracops::caputo_quadrature;
use fracdiff::solver::Sigma;
use fracdiff::verify::{coupled_study, lookup, registry, temporal_study};

/// Continuous residual of the equation at one interior point: the Caputo
/// term evaluated by high-resolution product integration, the diffusion
/// term by central differencing of k * u_x from the closed-form
/// derivative.
fn equation_residual(problem: &fracdiff::ManufacturedProblem, x: f64, t: f64) -> f64 {
    let alpha = (problem.spec.alpha)(x);
    let exact = &problem.exact;
    let caputo = caputo_quadrature(|s| exact(x, s), alpha, t, 400_000).unwrap();

    let delta = 1e-5;
    let flux = |xi: f64| (problem.spec.k)(xi, t) * (problem.exact_x)(xi, t);
    let diffusion = (flux(x + delta) - flux(x - delta)) / (2.0 * delta);

    let reaction = (problem.spec.q)(x, t) * exact(x, t);
    let source = (problem.spec.f)(x, t);
    caputo - diffusion + reaction - source
}

#[test]
fn registry_problems_satisfy_their_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    for problem in registry() {
        for _ in 0..50 {
            let x = rng.random_range(0.02..0.98) * problem.spec.l;
            let t = rng.random_range(0.05..=1.0) * problem.spec.t_final;
            let residual = equation_residual(&problem, x, t);
            assert!(
                residual.abs() <= 1e-4,
                "{}: residual {residual:e} at (x={x}, t={t})",
                problem.name
            );
        }
    }
}

#[test]
fn sine_dirichlet_is_first_order_in_time() {
    let problem = lookup("sine-dirichlet").unwrap();
    let table = temporal_study(&problem, 500, &[256, 1024, 4096], Sigma::Auto).unwrap();
    for row in table.rows.iter().skip(1) {
        let order = row.order.expect("nonzero errors");
        assert!((0.9..=1.1).contains(&order), "temporal order {order}");
    }
}

#[test]
fn sine_dirichlet_is_second_order_coupled() {
    let problem = lookup("sine-dirichlet").unwrap();
    let table = coupled_study(&problem, &[20, 40, 80], Sigma::Auto).unwrap();
    for row in table.rows.iter().skip(1) {
        let order = row.order.expect("nonzero errors");
        assert!((1.8..=2.1).contains(&order), "coupled order {order}");
    }
}

#[test]
fn sine_robin_inherits_first_order_in_time() {
    // coarse steps at a fine spatial grid still show the O(tau) trend
    let problem = lookup("sine-robin").unwrap();
    let table = temporal_study(&problem, 2000, &[8, 16, 32], Sigma::Auto).unwrap();
    for row in table.rows.iter().skip(1) {
        let order = row.order.expect("nonzero errors");
        assert!((0.85..=1.1).contains(&order), "temporal order {order}");
    }
}

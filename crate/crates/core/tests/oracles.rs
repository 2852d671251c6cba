//! Analytic and numerical oracles for the PDE solver, the Feynman-Kac
//! estimator and the killed-path eigenvalue estimator.

use nalgebra::DMatrix;

use superlab::experiments::{killed_brownian_lambda, killed_brownian_lambda_at};
use superlab::fields::{make_bump, make_constant, make_gaussian_quadratic, VectorField};
use superlab::model::{estimate_lambda_c, LambdaEstimatorConfig, SuperdiffusionSpec};
use superlab::pde::{extinction_probability_csbp_at, solve_forward, Grid1D};
use superlab::semigroups::feynman_kac;
use superlab::sim::simulate_feller;

fn linear_spec(beta: f64) -> SuperdiffusionSpec {
    SuperdiffusionSpec {
        alpha: make_constant(1, 0.0),
        ..SuperdiffusionSpec::super_brownian(1, beta, 1.0)
    }
}

#[test]
fn linear_growth_factors_out() {
    // With alpha = 0, constant beta only multiplies the heat flow by e^{beta t}.
    let g = make_bump(1, 1.0, 1.0).unwrap();
    let grid = Grid1D::new(8.0, 0.02, 1e-3, 1.0);
    let heat = solve_forward(&linear_spec(0.0), &g, &grid).unwrap();
    let grown = solve_forward(&linear_spec(1.0), &g, &grid).unwrap();
    let e = 1f64.exp();
    for (a, b) in heat.final_u().iter().zip(grown.final_u()) {
        assert!((a * e - b).abs() <= 1e-3 * (1.0 + b), "{a} {b}");
    }
}

#[test]
fn comparison_principle() {
    let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
    let grid = Grid1D::new(6.0, 0.02, 1e-3, 2.0);
    let low = solve_forward(&sbm, &make_bump(1, 1.0, 0.5).unwrap(), &grid).unwrap();
    let high = solve_forward(&sbm, &make_bump(1, 1.5, 1.0).unwrap(), &grid).unwrap();
    assert!(low.final_u().iter().zip(high.final_u()).all(|(a, b)| a <= b));
}

#[test]
fn grid_refinement_converges() {
    let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
    let g = make_gaussian_quadratic(1, 0.5, -1.0).unwrap();
    let coarse = Grid1D::new(8.0, 0.04, 4e-3, 1.0);
    let sols: Vec<_> = [coarse.clone(), coarse.refined(), coarse.refined().refined()]
        .iter()
        .map(|grid| solve_forward(&sbm, &g, grid).unwrap())
        .collect();
    let diff = |a: &superlab::pde::PdeSolution, b: &superlab::pde::PdeSolution| {
        a.x.iter().zip(a.final_u()).map(|(x, u)| (u - b.interp(*x)).abs()).fold(0.0, f64::max)
    };
    let d1 = diff(&sols[0], &sols[1]);
    let d2 = diff(&sols[1], &sols[2]);
    assert!(d2 < 0.6 * d1, "successive differences {d1:e} then {d2:e}");
}

#[test]
fn feller_extinction_matches_csbp() {
    let (beta, alpha, z0, t) = (1.0, 0.5, 1.0, 3.0);
    let paths = 20_000;
    let z = simulate_feller(beta, alpha, z0, t, 1e-3, paths, 42).unwrap();
    let p = z.iter().filter(|v| **v == 0.0).count() as f64 / paths as f64;
    let exact = extinction_probability_csbp_at(beta, alpha, z0, t).unwrap();
    let se = (exact * (1.0 - exact) / paths as f64).sqrt();
    assert!((p - exact).abs() < 4.0 * se + 5e-3, "simulated {p}, exact {exact}");
}

#[test]
fn feynman_kac_agrees_with_linear_pde_under_ou_drift() {
    // Inward OU drift with a bounded, space-dependent growth rate.
    let spec = SuperdiffusionSpec {
        drift: VectorField::linear(1, -1.0),
        beta: make_gaussian_quadratic(1, 0.5, -1.0).unwrap(),
        alpha: make_constant(1, 0.0),
        ..SuperdiffusionSpec::super_brownian(1, 0.0, 1.0)
    };
    let g = make_bump(1, 1.5, 1.0).unwrap();
    let sol = solve_forward(&spec, &g, &Grid1D::new(8.0, 0.01, 1e-3, 1.0)).unwrap();
    for (i, x0) in [0.0, 0.5].into_iter().enumerate() {
        let fk = feynman_kac(&spec, &g, &[x0], 1.0, 40_000, 100 + i as u64, 1e-3).unwrap();
        let pde = sol.interp(x0);
        let rel = (fk.estimate - pde).abs() / pde;
        assert!(rel < 0.02, "x = {x0}: fk {} (se {}), pde {pde}", fk.estimate, fk.std_error);
    }
}

/// Largest eigenvalue of `(1/2) d²/dx² + beta` on `(-R, R)` with Dirichlet
/// conditions, from a dense second-order finite-difference matrix.
fn dense_grid_lambda(beta: f64, radius: f64, interior: usize) -> f64 {
    let h = 2.0 * radius / (interior + 1) as f64;
    let w = 0.5 / (h * h);
    let m = DMatrix::from_fn(interior, interior, |i, j| {
        if i == j {
            beta - 2.0 * w
        } else if i.abs_diff(j) == 1 {
            w
        } else {
            0.0
        }
    });
    m.symmetric_eigenvalues().max()
}

#[test]
fn killed_brownian_eigenvalue_matches_dense_grid() {
    for radius in [1.0, 3.0, 6.0] {
        let grid = dense_grid_lambda(1.0, radius, 400);
        let exact = killed_brownian_lambda(1.0, radius);
        assert!((grid - exact).abs() < 1e-5, "R = {radius}: grid {grid}, closed form {exact}");
    }
}

#[test]
fn lambda_estimator_matches_finite_time_series_and_grows_with_radius() {
    let spec = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
    let mut prev = f64::NEG_INFINITY;
    for radius in [1.0, 2.0] {
        let cfg = LambdaEstimatorConfig {
            dt: 2e-3,
            ..LambdaEstimatorConfig::new(vec![0.0], radius, 4.0, 40_000, 5)
        };
        let est = estimate_lambda_c(&spec, &cfg).unwrap();
        let exact = killed_brownian_lambda_at(1.0, radius, 0.0, 4.0);
        assert!(
            (est.estimate - exact).abs() < 4.0 * est.std_error + 2e-3,
            "R = {radius}: estimate {} (se {}), exact {exact}",
            est.estimate,
            est.std_error
        );
        assert!(est.estimate > prev);
        prev = est.estimate;
    }
}

//! Acceptance criteria A1–A12. Each test prints exactly one `PASS`/`FAIL`
//! line and then asserts it. The statistical runs read the shipped configs
//! in `configs/`, whose seeds are fixed.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use superlab::config::{parse_config, run, RunConfig};
use superlab::experiments::{operator_identity_check, ExperimentKind, ExperimentResult};
use superlab::fields::{make_bump, make_constant, make_gaussian_quadratic};
use superlab::model::{registry_example, ExampleId, SuperdiffusionSpec};
use superlab::pde::{domain_doubling_change, solve_forward, Grid1D};
use superlab::sim::make_offspring_law;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> RunConfig {
    parse_config(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn execute(cfg: &RunConfig) -> (ExperimentResult, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(cfg, Some(dir.path())).unwrap();
    let csv = std::fs::read(dir.path().join("results.csv")).unwrap();
    (outcome.result, csv)
}

fn report(id: &str, passed: bool, detail: String) {
    println!("{id} {}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{id} failed: {detail}");
}

fn flag_detail(res: &ExperimentResult, names: &[String]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        let f = res.flag(n).unwrap_or_else(|| panic!("missing flag {n}"));
        ok &= f.passed;
        parts.push(format!("[{}] {}", n, f.detail));
    }
    (ok, parts.join("; "))
}

fn martingale_run() -> &'static ExperimentResult {
    static RUN: OnceLock<ExperimentResult> = OnceLock::new();
    RUN.get_or_init(|| execute(&load("martingale_sbm.toml")).0)
}

#[test]
fn a01_martingale_mean() {
    let res = martingale_run();
    let names: Vec<String> = [1, 2, 4].iter().map(|t| format!("w_bar_mean_t{t}")).collect();
    let (ok, detail) = flag_detail(res, &names);
    report("A1", ok, detail);
}

#[test]
fn a02_variance_identity() {
    let res = martingale_run();
    let mut names: Vec<String> = [1, 2, 4].iter().map(|t| format!("w_bar_variance_t{t}")).collect();
    names.extend([1, 2, 4].iter().map(|t| format!("variance_oracle_agreement_t{t}")));
    let (ok, detail) = flag_detail(res, &names);
    report("A2", ok, detail);
}

#[test]
fn a03_extinction_probability() {
    let (res, _) = execute(&load("extinction_sbm.toml"));
    let (ok, detail) = flag_detail(&res, &["extinction_matches_csbp".into()]);
    report("A3", ok, detail);
}

#[test]
fn a04_lln() {
    let (res, _) = execute(&load("lln_sbm.toml"));
    let mut names: Vec<String> = [2, 4, 6].iter().map(|t| format!("ratio_mean_one_t{t}")).collect();
    names.push("discrepancy_decreasing".into());
    names.push("correlation_given_survival".into());
    let (ok, detail) = flag_detail(&res, &names);
    report("A4", ok, detail);
}

#[test]
fn a05_laplace_functional() {
    let (res, _) = execute(&load("laplace_sbm.toml"));
    let (ok, detail) = flag_detail(
        &res,
        &["laplace_within_3se_t1".into(), "laplace_within_5pct_t1".into()],
    );
    report("A5", ok, detail);
}

#[test]
fn a06_h_transform() {
    let (res, _) = execute(&load("h_transform_sou.toml"));
    let (mut ok, mut detail) = flag_detail(&res, &["reweighting_exact".into(), "operator_identity".into()]);
    // The operator identity on every registry model, not only the one simulated.
    let params = superlab::config::default_example_params;
    for id in ExampleId::ALL {
        let model = registry_example(id, &params(id)).unwrap();
        let (worst, checks) = operator_identity_check(&model, 7).unwrap();
        ok &= worst <= 1e-6;
        detail.push_str(&format!("; {}: {checks} operator checks, max rel diff {worst:e}", id.as_str()));
    }
    report("A6", ok, detail);
}

#[test]
fn a07_moving_window() {
    let (res, _) = execute(&load("moving_window_sbm_drift.toml"));
    let names: Vec<String> = [2, 4].iter().map(|t| format!("ratio_mean_one_t{t}")).collect();
    let (mut ok, mut detail) = flag_detail(&res, &names);

    // c = 0 through the moving-window pipeline reproduces the LLN pipeline
    // byte for byte (same config and seed; fewer replicates to keep it quick).
    let mut lln = load("lln_sbm.toml");
    lln.simulation.replicates = 40;
    lln.simulation.times = vec![2.0, 4.0];
    let mut moving = lln.clone();
    moving.experiment = ExperimentKind::MovingWindow;
    moving.observables.speed = 0.0;
    let (_, a) = execute(&lln);
    let (_, b) = execute(&moving);
    let identical = a == b;
    ok &= identical;
    detail.push_str(&format!("; c = 0 results.csv identical to lln pipeline: {identical} ({} bytes)", a.len()));
    report("A7", ok, detail);
}

#[test]
fn a08_spatial_spread() {
    let (res, _) = execute(&load("spread_sbm.toml"));
    let (ok, detail) = flag_detail(&res, &["exceedance_final".into()]);
    report("A8", ok, detail);
}

#[test]
fn a09_lambda_estimator() {
    let (res, _) = execute(&load("lambda_sbm.toml"));
    let (ok, detail) = flag_detail(&res, &["lambda_within_ci_R6".into()]);
    let finite = res.scalar("lambda_finite_t_R6").unwrap();
    let detail = format!("{detail}; finite-t value at t = 8 is {finite}");
    report("A9", ok, detail);
}

#[test]
fn a10_offspring_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let draws = 10_000;
    for _ in 0..draws {
        let beta: f64 = rng.random_range(0.0..2.0);
        let alpha: f64 = rng.random_range(0.05..2.0);
        let n: u32 = rng.random_range(50..=2000);
        let m = 1.0 + beta / n as f64;
        let law = make_offspring_law(m, 2.0 * alpha).unwrap();
        let k = law.k as f64;
        let mean = law.p1 + k * law.pk;
        let var = law.p1 + k * k * law.pk - mean * mean;
        let total = law.p0 + law.p1 + law.pk;
        worst = worst
            .max((mean - m).abs())
            .max((var - 2.0 * alpha).abs())
            .max((total - 1.0).abs());
        assert!(law.p0 >= 0.0 && law.p1 >= 0.0 && law.pk >= 0.0);
    }
    report(
        "A10",
        worst <= 1e-12,
        format!("{draws} draws of beta in [0,2), alpha in [0.05,2), n in [50,2000]: max moment error {worst:e}"),
    );
}

#[test]
fn a11_local_extinction() {
    let (res, _) = execute(&load("local_extinction_sbm.toml"));
    let (ok, detail) = flag_detail(&res, &["median_decreasing".into()]);
    report("A11", ok, detail);
}

#[test]
fn a12_pde_convergence() {
    // Heat equation: alpha = beta = 0, g = exp(-c x^2).
    let c = 0.5;
    let heat = SuperdiffusionSpec {
        beta: make_constant(1, 0.0),
        alpha: make_constant(1, 0.0),
        ..SuperdiffusionSpec::super_brownian(1, 0.0, 1.0)
    };
    let g = make_gaussian_quadratic(1, c, -1.0).unwrap();
    let grid = Grid1D::new(10.0, 0.01, 1e-3, 1.0);
    let sol = solve_forward(&heat, &g, &grid).unwrap();
    let t = 1.0;
    let s = 1.0 + 2.0 * c * t;
    let heat_err = sol
        .x
        .iter()
        .zip(sol.final_u())
        .map(|(x, u)| (u - (-c * x * x / s).exp() / s.sqrt()).abs())
        .fold(0.0, f64::max);

    // Domain doubling and nested boxes on the nonlinear equation.
    let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
    let bump = make_bump(1, 1.0, 0.5).unwrap();
    let doubling = domain_doubling_change(&sbm, &bump, &Grid1D::new(10.0, 0.01, 1e-3, 1.0)).unwrap();
    let mut monotone = true;
    let mut prev: Option<superlab::pde::PdeSolution> = None;
    for hw in [1.5, 3.0, 6.0] {
        let sol = solve_forward(&sbm, &bump, &Grid1D::new(hw, 0.01, 1e-3, 1.0)).unwrap();
        if let Some(p) = &prev {
            monotone &= p.x.iter().zip(p.final_u()).all(|(x, u)| sol.interp(*x) >= u - 1e-12);
        }
        prev = Some(sol);
    }
    report(
        "A12",
        heat_err <= 1e-3 && doubling < 1e-6 && monotone,
        format!("heat sup error {heat_err:e}; doubling change {doubling:e}; nested boxes monotone: {monotone}"),
    );
}

//! Property tests for invariants that hold for every parameter choice.

use proptest::prelude::*;

use superlab::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use superlab::fields::{fd_check, DiffusionMatrix, ScalarField};
use superlab::model::{registry_example, ExampleId, ExampleParams};
use superlab::sim::{make_offspring_law, make_offspring_law_floored, minimal_offspring_variance};
use superlab::stats::summarize;

fn descriptor() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-3.0..3.0f64).prop_map(|v| format!("const:{v}")),
        (-2.0..2.0f64).prop_map(|c| format!("explin:{c}:0")),
        (0.05..2.0f64, prop::bool::ANY).prop_map(|(c, s)| format!("gaussquad:{c}:{}", if s { 1 } else { -1 })),
        (0.05..2.0f64).prop_map(|c| format!("expnorm:{c}")),
        (0.2..3.0f64, 0.1..5.0f64).prop_map(|(r, h)| format!("bump:{r}:{h}")),
        (0.1..3.0f64, -1.0..1.0f64).prop_map(|(w, p)| format!("sin:{w}:{p}:0")),
    ];
    leaf.prop_recursive(2, 4, 2, |inner| (inner.clone(), inner).prop_map(|(a, b)| format!("mul({a};{b})")))
}

proptest! {
    #[test]
    fn descriptors_round_trip(d in descriptor(), x in -2.0..2.0f64) {
        let f = ScalarField::from_descriptor(&d, 1).unwrap();
        let g = ScalarField::from_descriptor(&f.descriptor(), 1).unwrap();
        prop_assert_eq!(&f, &g);
        prop_assert_eq!(f.eval(&[x]), g.eval(&[x]));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences(d in descriptor(), x in -2.5..2.5f64) {
        let f = ScalarField::from_descriptor(&d, 1).unwrap();
        // The bump is smooth but its derivatives blow up near the edge.
        let near_edge = f.support_radius().is_some_and(|r| (x.abs() - r).abs() < 0.2);
        prop_assume!(!near_edge);
        let report = fd_check(&f, &DiffusionMatrix::identity(1), &[vec![x]], 1e-4);
        prop_assert!(report.passed(), "{d} at {x}: {report:?}");
    }

    // Every variance above the integer floor is reachable on {0, 1, K} while
    // m <= 1.5; the simulator uses m = 1 + beta/n.
    #[test]
    fn offspring_law_matches_moments(m in 0.01..=1.5f64, extra in 0.0..4.0f64) {
        let v = minimal_offspring_variance(m) + extra;
        let law = make_offspring_law(m, v).unwrap();
        let k = law.k as f64;
        let mean = law.p1 + k * law.pk;
        let var = law.p1 + k * k * law.pk - mean * mean;
        prop_assert!(law.p0 >= 0.0 && law.p1 >= 0.0 && law.pk >= 0.0);
        prop_assert!((law.p0 + law.p1 + law.pk - 1.0).abs() < 1e-12);
        prop_assert!((mean - m).abs() < 1e-12);
        prop_assert!((var - v).abs() < 1e-10 * (1.0 + v));
    }

    #[test]
    fn floored_law_keeps_the_mean(m in 1.0..=1.5f64, v in 0.0..0.3f64) {
        let (law, floored) = make_offspring_law_floored(m, v).unwrap();
        let k = law.k as f64;
        let mean = law.p1 + k * law.pk;
        let var = law.p1 + k * k * law.pk - mean * mean;
        prop_assert!((mean - m).abs() < 1e-12);
        prop_assert_eq!(floored, v < minimal_offspring_variance(m));
        prop_assert!((var - v.max(minimal_offspring_variance(m))).abs() < 1e-10);
    }

    #[test]
    fn summary_is_shift_invariant(xs in prop::collection::vec(-10.0..10.0f64, 2..50), s in -5.0..5.0f64) {
        let a = summarize(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + s).collect();
        let b = summarize(&shifted).unwrap();
        prop_assert!((b.mean - a.mean - s).abs() < 1e-9);
        prop_assert!((b.variance - a.variance).abs() < 1e-8 * (1.0 + a.variance));
    }
}

#[test]
fn lln_ratio_is_homogeneous_in_the_test_function() {
    let model = registry_example(ExampleId::Sbm, &ExampleParams::sbm(1, 1.0, 0.5)).unwrap();
    let mut ratios = Vec::new();
    for height in [1.0, 10.0] {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Lln, model.clone(), vec![1.0, 2.0]).unwrap();
        cfg.sim.level = 40;
        cfg.replicates = 12;
        cfg.test_function = ScalarField::from_descriptor(&format!("bump:1:{height}"), 1).unwrap();
        let res = run_experiment(&cfg).unwrap();
        let r: Vec<f64> = res.records.iter().filter(|r| r.metric == "ratio").map(|r| r.value).collect();
        assert!(!r.is_empty());
        ratios.push(r);
    }
    for (a, b) in ratios[0].iter().zip(&ratios[1]) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

//! Monte Carlo estimate of the generalized principal eigenvalue on a ball.

use rayon::prelude::*;
use serde::Serialize;

use super::SuperdiffusionSpec;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sim::Motion;
use crate::stats::{mean, summarize};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaEstimatorConfig {
    pub x: Vec<f64>,
    /// Radius of the killing ball `B_R` (centred at the origin).
    pub radius: f64,
    pub t: f64,
    pub paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub batches: usize,
}

impl LambdaEstimatorConfig {
    pub fn new(x: Vec<f64>, radius: f64, t: f64, paths: usize, seed: u64) -> Self {
        LambdaEstimatorConfig {
            x,
            radius,
            t,
            paths,
            seed,
            dt: 0.01,
            batches: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaEstimate {
    /// `(1/t) log E^x[exp ∫β; τ > t]`; `−∞` if every path was killed.
    pub estimate: f64,
    pub std_error: f64,
    /// 95% interval.
    pub ci: (f64, f64),
    /// `E^x[exp ∫β; τ > t]`.
    pub functional: f64,
    /// Paths not killed at a grid point.
    pub survivors: usize,
    pub paths: usize,
    pub diagnostic: Option<String>,
}

/// Probability that a Brownian bridge with variance rate `s` over time `h`
/// between points at distances `d0, d1` from a flat barrier stays clear of it.
#[inline]
fn bridge_survival(d0: f64, d1: f64, s: f64, h: f64) -> f64 {
    if d0 <= 0.0 || d1 <= 0.0 {
        return 0.0;
    }
    1.0 - (-2.0 * d0 * d1 / (s * h)).exp()
}

/// Estimates `(1/t) log E^x[exp(∫₀ᵗ β(Y_s) ds); τ^{B_R} > t]` from killed
/// paths of the `L`-diffusion.
///
/// Exits between grid points are accounted for by weighting each step with
/// the Brownian-bridge probability of not crossing the boundary (two flat
/// barriers in `d = 1`, the tangent plane otherwise). The standard error
/// comes from batch means and the delta method.
pub fn estimate_lambda_c(spec: &SuperdiffusionSpec, cfg: &LambdaEstimatorConfig) -> Result<LambdaEstimate> {
    let d = spec.dim();
    if cfg.x.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: cfg.x.len(),
        });
    }
    if !(cfg.radius > 0.0) || !(cfg.t > 0.0) || cfg.paths == 0 || !(cfg.dt > 0.0) {
        return Err(Error::InvalidArgument(
            "estimate_lambda_c needs radius, t, dt and paths positive".into(),
        ));
    }
    let s = spec.diffusion.as_scaled_identity().unwrap_or_else(|| {
        let a = spec.diffusion.matrix();
        (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max)
    });
    let r = cfg.radius;
    let steps = ((cfg.t / cfg.dt).ceil() as usize).max(1);
    let h = cfg.t / steps as f64;
    let motion = Motion::new(spec, h);
    let batches = cfg.batches.clamp(1, cfg.paths);
    let inside = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>() < r * r && spec.domain.contains(y);

    let results: Vec<(f64, usize)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = cfg.paths / batches + usize::from(b < cfg.paths % batches);
            let mut rng = stream(cfg.seed, b as u64);
            let mut y = vec![0.0; d];
            let mut prev = vec![0.0; d];
            let (mut acc, mut survivors) = (0.0, 0usize);
            for _ in 0..count {
                y.copy_from_slice(&cfg.x);
                if !inside(&y) {
                    continue;
                }
                let mut beta_prev = spec.beta.eval(&y);
                let (mut integral, mut weight) = (0.0, 1.0);
                let mut alive = true;
                for _ in 0..steps {
                    prev.copy_from_slice(&y);
                    motion.step(&mut y, h, &mut rng);
                    if !inside(&y) {
                        alive = false;
                        break;
                    }
                    weight *= if d == 1 {
                        bridge_survival(r - prev[0], r - y[0], s, h) * bridge_survival(prev[0] + r, y[0] + r, s, h)
                    } else {
                        let n0 = prev.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let n1 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                        bridge_survival(r - n0, r - n1, s, h)
                    };
                    let beta_next = spec.beta.eval(&y);
                    integral += 0.5 * h * (beta_prev + beta_next);
                    beta_prev = beta_next;
                }
                if alive {
                    survivors += 1;
                    acc += weight * integral.exp();
                }
            }
            (acc / count as f64, survivors)
        })
        .collect();

    let means: Vec<f64> = results.iter().map(|r| r.0).collect();
    let survivors: usize = results.iter().map(|r| r.1).sum();
    let functional = mean(&means);
    if survivors == 0 || !(functional > 0.0) {
        return Ok(LambdaEstimate {
            estimate: f64::NEG_INFINITY,
            std_error: f64::NAN,
            ci: (f64::NEG_INFINITY, f64::NEG_INFINITY),
            functional: 0.0,
            survivors: 0,
            paths: cfg.paths,
            diagnostic: Some(
                Error::AllPathsKilled {
                    paths: cfg.paths,
                    t: cfg.t,
                }
                .to_string(),
            ),
        });
    }
    let se_functional = if batches >= 2 {
        summarize(&means)?.std_error
    } else {
        f64::INFINITY
    };
    let estimate = functional.ln() / cfg.t;
    let std_error = se_functional / functional / cfg.t;
    Ok(LambdaEstimate {
        estimate,
        std_error,
        ci: (estimate - 1.96 * std_error, estimate + 1.96 * std_error),
        functional,
        survivors,
        paths: cfg.paths,
        diagnostic: None,
    })
}

//! Expectation semigroups: exact Gaussian kernels, Feynman–Kac Monte Carlo,
//! and the scaling diagnostics built on them.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::model::{ExampleModel, RDensity, SuperdiffusionSpec};
use crate::quadrature::{gaussian_expectation, integrate_box};
use crate::rng::stream;
use crate::sim::Motion;
use crate::stats::{mean, summarize};

/// Relative tolerance of all kernel quadratures.
pub const QUAD_REL_TOL: f64 = 1e-8;

/// Gaussian transition kernels with `a = I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelId {
    /// Brownian motion: `N(x, tI)`.
    Heat,
    /// Brownian motion with drift `c e₁`: `N(x + ct e₁, tI)`.
    HeatDrift { c: f64 },
    /// Ornstein–Uhlenbeck with drift `−γx`: `N(x e^{−γt}, (1 − e^{−2γt})/(2γ) I)`.
    Ou { gamma: f64 },
}

impl KernelId {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelId::Heat => Ok(()),
            KernelId::HeatDrift { c } if c.is_finite() => Ok(()),
            KernelId::Ou { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid kernel parameters {other:?}"))),
        }
    }

    /// Mean and per-coordinate standard deviation of the law at time `t` from `x`.
    pub fn transition(&self, x: &[f64], t: f64) -> (Vec<f64>, f64) {
        match *self {
            KernelId::Heat => (x.to_vec(), t.sqrt()),
            KernelId::HeatDrift { c } => {
                let mut m = x.to_vec();
                m[0] += c * t;
                (m, t.sqrt())
            }
            KernelId::Ou { gamma } => {
                let e = (-gamma * t).exp();
                let var = -(-2.0 * gamma * t).exp_m1() / (2.0 * gamma);
                (x.iter().map(|v| v * e).collect(), var.sqrt())
            }
        }
    }
}

/// A kernel together with a constant mass creation `β`, i.e. the semigroup
/// `e^{βt} P_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Kernel {
    pub id: KernelId,
    pub beta: f64,
}

impl Kernel {
    pub fn new(id: KernelId) -> Self {
        Kernel { id, beta: 0.0 }
    }

    pub fn with_beta(id: KernelId, beta: f64) -> Self {
        Kernel { id, beta }
    }

    /// `e^{βt} E f(Y_t)` for `f` vanishing outside `support` (if given).
    pub fn apply_fn(
        &self,
        f: &dyn Fn(&[f64]) -> f64,
        support: Option<&[(f64, f64)]>,
        x: &[f64],
        t: f64,
    ) -> Result<f64> {
        self.id.validate()?;
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("expectation needs t > 0, got {t}")));
        }
        let (m, sd) = self.id.transition(x, t);
        Ok((self.beta * t).exp() * gaussian_expectation(f, &m, sd, support, QUAD_REL_TOL))
    }

    pub fn apply(&self, f: &ScalarField, x: &[f64], t: f64) -> Result<f64> {
        let support = support_box(f, 0.0);
        self.apply_fn(&|y| f.eval(y), support.as_deref(), x, t)
    }
}

/// `(P_t f)(x)` for the kernel `id`.
pub fn expectation(id: KernelId, f: &ScalarField, x: &[f64], t: f64) -> Result<f64> {
    Kernel::new(id).apply(f, x, t)
}

/// Support box of `f(· + shift e₁)`, if `f` is compactly supported.
fn support_box(f: &ScalarField, shift: f64) -> Option<Vec<(f64, f64)>> {
    let r = f.support_radius()?;
    let mut b = vec![(-r, r); f.dim()];
    b[0] = (-r - shift, r - shift);
    Some(b)
}

/// `E^{δ_x}⟨X_t, f⟩` for a registry model with an exact transformed kernel:
/// `e^{λt} h(x) 𝔖_t(f/h)(x)`.
pub fn model_expectation(model: &ExampleModel, f: &ScalarField, x: &[f64], t: f64) -> Result<f64> {
    model_expectation_moving(model, f, 0.0, x, t)
}

/// `E^{δ_x}⟨X_t, f^{(ct)}⟩` with `f^{(ct)}(y) = f(y₁ − ct, y₂, …)`.
pub fn model_expectation_moving(model: &ExampleModel, f: &ScalarField, c: f64, x: &[f64], t: f64) -> Result<f64> {
    let kernel = model
        .kernel
        .ok_or_else(|| Error::NoClosedForm(format!("no exact kernel for `{}`", model.id.as_str())))?;
    let shift = -c * t;
    let h = &model.transform.h;
    let shifted = |y: &[f64]| {
        let mut z = y.to_vec();
        z[0] += shift;
        f.eval(&z)
    };
    if t == 0.0 {
        return Ok(shifted(x));
    }
    let support = support_box(f, shift);
    let g = |y: &[f64]| {
        let v = shifted(y);
        if v == 0.0 {
            0.0
        } else {
            v / h.eval(y)
        }
    };
    let inner = Kernel::new(kernel).apply_fn(&g, support.as_deref(), x, t)?;
    Ok((model.lambda_c() * t).exp() * h.eval(x) * inner)
}

/// `E^{μ}⟨X_t, f^{(ct)}⟩` for a finite atomic `μ`.
pub fn model_expectation_measure(
    model: &ExampleModel,
    f: &ScalarField,
    c: f64,
    mu: &crate::sim::InitialMeasure,
    t: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for a in &mu.atoms {
        total += a.mass * model_expectation_moving(model, f, c, &a.position, t)?;
    }
    Ok(total)
}

/// Monte Carlo estimate with a batch-means standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FkEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// 95% interval.
    pub ci: (f64, f64),
    pub batches: usize,
    pub paths: usize,
}

const FK_BATCHES: usize = 32;

/// `E^x[exp(∫₀ᵗ β(Y_s) ds) f(Y_t); Y stays in D]` over discretized paths of
/// the `L`-diffusion with step `dt`, `∫β` by the trapezoidal rule.
pub fn feynman_kac(
    spec: &SuperdiffusionSpec,
    f: &ScalarField,
    x: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    dt: f64,
) -> Result<FkEstimate> {
    feynman_kac_fn(spec, &|y| f.eval(y), x, t, paths, seed, dt)
}

/// [`feynman_kac`] for a test function given as a closure.
pub fn feynman_kac_fn(
    spec: &SuperdiffusionSpec,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    dt: f64,
) -> Result<FkEstimate> {
    if paths == 0 {
        return Err(Error::InvalidArgument("feynman_kac needs at least one path".into()));
    }
    if !(t >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("need t >= 0 and dt > 0, got t = {t}, dt = {dt}")));
    }
    let batches = FK_BATCHES.min(paths);
    let steps = ((t / dt).ceil() as usize).max(1);
    let h = t / steps as f64;
    let motion = Motion::new(spec, h);
    let batch_means: Vec<f64> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = paths / batches + usize::from(b < paths % batches);
            let mut rng = stream(seed, b as u64);
            let mut y = vec![0.0; x.len()];
            let mut acc = 0.0;
            for _ in 0..count {
                y.copy_from_slice(x);
                let mut beta_prev = spec.beta.eval(&y);
                let mut integral = 0.0;
                let mut alive = spec.domain.contains(&y);
                for _ in 0..steps {
                    if !alive {
                        break;
                    }
                    alive = motion.advance(&mut y, h, &spec.domain, &mut rng);
                    let beta_next = spec.beta.eval(&y);
                    integral += 0.5 * h * (beta_prev + beta_next);
                    beta_prev = beta_next;
                }
                if alive {
                    acc += integral.exp() * f(&y);
                }
            }
            acc / count as f64
        })
        .collect();
    let estimate = mean(&batch_means);
    let std_error = if batches >= 2 {
        summarize(&batch_means)?.std_error
    } else {
        f64::INFINITY
    };
    Ok(FkEstimate {
        estimate,
        std_error,
        ci: (estimate - 1.96 * std_error, estimate + 1.96 * std_error),
        batches,
        paths,
    })
}

/// One row of the scaling table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub t: f64,
    pub x: Vec<f64>,
    /// `s_t·(S_t f)(x)/h(x)`.
    pub scaled: f64,
    pub deviation: f64,
}

/// Uniform spread-window check at one `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformRow {
    pub t: f64,
    pub zhat: f64,
    pub z: f64,
    /// `max |s_ẑ/h · S_ẑ f − ⟨f, r⟩|` over sampled `|x| ≤ z_t` on the first axis.
    pub sup_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub target: f64,
    pub rows: Vec<ScalingRow>,
    pub uniform: Vec<UniformRow>,
    /// `(point index, t)` where a deviation grew after the point's peak.
    pub monotone_violations: Vec<(usize, f64)>,
}

impl ScalingReport {
    pub fn monotone(&self) -> bool {
        self.monotone_violations.is_empty()
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "t,x,scaled,deviation")?;
        for r in &self.rows {
            let x: Vec<String> = r.x.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{},{},{:.16e},{:.16e}", r.t, x.join(";"), r.scaled, r.deviation)?;
        }
        Ok(())
    }
}

const UNIFORM_SAMPLES: usize = 21;

/// `s_t·𝔖_t(f/h)(x)`, i.e. `s_t·(S_t f)(x)/h(x)` with `S` the semigroup of `L + β − λ`.
fn scaled_value(model: &ExampleModel, kernel: KernelId, f: &ScalarField, x: &[f64], t: f64) -> Result<f64> {
    let h = &model.transform.h;
    let support = support_box(f, 0.0);
    let g = |y: &[f64]| {
        let v = f.eval(y);
        if v == 0.0 {
            0.0
        } else {
            v / h.eval(y)
        }
    };
    let p = Kernel::new(kernel).apply_fn(&g, support.as_deref(), x, t)?;
    Ok(model.scaling.s(t) * p)
}

/// `⟨f, r⟩` for a compactly supported `f`.
pub fn pair_with_r(model: &ExampleModel, f: &ScalarField) -> Result<f64> {
    let r = f
        .support_radius()
        .ok_or_else(|| Error::InvalidArgument(format!("`{}` is not compactly supported", f.descriptor())))?;
    if r == 0.0 {
        return Ok(0.0);
    }
    let bounds = vec![(-r, r); f.dim()];
    Ok(match &model.scaling.r {
        RDensity::Lebesgue(k) => k * integrate_box(&|y| f.eval(y), &bounds, 1e-10),
        RDensity::Density(rho) => integrate_box(&|y| f.eval(y) * rho.eval(y), &bounds, 1e-10),
    })
}

/// Tabulates the scaled semigroup against `⟨f, r⟩` and checks the uniform
/// version over the spread window `|x| ≤ z_t` at the shifted time `ẑ_t`.
pub fn scaling_check(model: &ExampleModel, f: &ScalarField, points: &[Vec<f64>], t_grid: &[f64]) -> Result<ScalingReport> {
    let kernel = model
        .kernel
        .ok_or_else(|| Error::NoClosedForm(format!("no exact kernel for `{}`", model.id.as_str())))?;
    let target = pair_with_r(model, f)?;
    let mut rows = Vec::new();
    for &t in t_grid {
        for x in points {
            let scaled = scaled_value(model, kernel, f, x, t)?;
            rows.push(ScalingRow {
                t,
                x: x.clone(),
                scaled,
                deviation: (scaled - target).abs(),
            });
        }
    }
    let mut monotone_violations = Vec::new();
    for (i, _) in points.iter().enumerate() {
        let devs: Vec<(f64, f64)> = rows
            .iter()
            .skip(i)
            .step_by(points.len())
            .map(|r| (r.t, r.deviation))
            .collect();
        let peak = devs
            .iter()
            .enumerate()
            .fold(0, |best, (k, d)| if d.1 > devs[best].1 { k } else { best });
        for w in devs[peak..].windows(2) {
            if w[1].1 > w[0].1 * (1.0 + 1e-9) + 1e-15 {
                monotone_violations.push((i, w[1].0));
            }
        }
    }
    let mut uniform = Vec::new();
    for &t in t_grid {
        let zhat = model.scaling.zhat(t);
        let z = model.scaling.z(t);
        let mut sup: f64 = 0.0;
        for k in 0..UNIFORM_SAMPLES {
            let u = -1.0 + 2.0 * k as f64 / (UNIFORM_SAMPLES - 1) as f64;
            let mut x = vec![0.0; model.dim()];
            x[0] = u * z;
            let v = scaled_value(model, kernel, f, &x, zhat)?;
            sup = sup.max((v - target).abs());
        }
        uniform.push(UniformRow {
            t,
            zhat,
            z,
            sup_deviation: sup,
        });
    }
    Ok(ScalingReport {
        target,
        rows,
        uniform,
        monotone_violations,
    })
}

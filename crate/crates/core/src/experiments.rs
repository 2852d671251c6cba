//! Replicated experiments and the statistics they report.
//!
//! Every experiment returns an [`ExperimentResult`]: per-time summaries of
//! named metrics, a few scalars, pass/fail flags, and the raw per-replicate
//! records (long format) that back them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FieldKind, ScalarField};
use crate::model::{
    conjugated_operator, estimate_lambda_c, ExampleId, ExampleModel, LambdaEstimate, LambdaEstimatorConfig,
};
use crate::pde::{extinction_probability_csbp, extinction_probability_csbp_at, laplace_functional_pde, Grid1D};
use crate::rng::{derive_seed, stream};
use crate::semigroups::{feynman_kac_fn, model_expectation_measure, pair_with_r, scaling_check};
use crate::sim::{
    feller_normalized_variance, pair, run_replicates, simulate_feller, transformed_pair, Functional, InitialMeasure, Motion, SimConfig, Trajectory,
};
use crate::stats::{correlation, median, proportion_se, summarize, StatSummary};

/// Replicate counts below this trigger an `insufficient-replicates` warning.
pub const MIN_SOUND_REPLICATES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Martingale,
    Lln,
    MovingWindow,
    Spread,
    Extinction,
    LocalExtinction,
    Laplace,
    Lambda,
    Conservativeness,
    HTransform,
    Scaling,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Martingale => "martingale",
            ExperimentKind::Lln => "lln",
            ExperimentKind::MovingWindow => "moving_window",
            ExperimentKind::Spread => "spread",
            ExperimentKind::Extinction => "extinction",
            ExperimentKind::LocalExtinction => "local_extinction",
            ExperimentKind::Laplace => "laplace",
            ExperimentKind::Lambda => "lambda",
            ExperimentKind::Conservativeness => "conservativeness",
            ExperimentKind::HTransform => "h_transform",
            ExperimentKind::Scaling => "scaling",
        }
    }
}

/// Settings of the eigenvalue estimator runs.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSettings {
    pub x: Vec<f64>,
    pub radii: Vec<f64>,
    pub t: f64,
    pub paths: usize,
    pub dt: f64,
}

/// Which motion the conservativeness diagnostic follows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionChoice {
    /// The `L₀^h`-diffusion of the transformed model.
    #[default]
    Transformed,
    /// The `L`-diffusion of the base model.
    Base,
}

/// Settings of the conservativeness diagnostic.
#[derive(Clone, Debug, PartialEq)]
pub struct ConservativenessSettings {
    pub motion: MotionChoice,
    pub horizon: f64,
    pub paths: usize,
    pub dt: f64,
    /// Half-width of the smallest exit box; boxes double `levels` times.
    pub box_size: f64,
    pub levels: usize,
}

/// Everything an experiment needs, with the model already built.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ExampleModel,
    pub mu: InitialMeasure,
    pub sim: SimConfig,
    pub replicates: usize,
    pub seed: u64,
    pub test_function: ScalarField,
    /// Moving-window speed `c`.
    pub speed: f64,
    pub epsilons: Vec<f64>,
    pub exceedance_threshold: f64,
    pub correlation_threshold: f64,
    /// Paths for Feynman–Kac denominators when no exact kernel exists.
    pub fk_paths: usize,
    pub pde: Grid1D,
    pub lambda: LambdaSettings,
    pub conservativeness: ConservativenessSettings,
    pub scaling_points: Vec<Vec<f64>>,
}

impl ExperimentConfig {
    /// Defaults around a model: `n = 200`, `R = 200`, `dt_max = 0.01`.
    pub fn new(kind: ExperimentKind, model: ExampleModel, times: Vec<f64>) -> Result<Self> {
        let d = model.dim();
        Ok(ExperimentConfig {
            kind,
            mu: InitialMeasure::dirac(vec![0.0; d], 1.0),
            sim: SimConfig::new(200, times.clone()),
            replicates: 200,
            seed: 1,
            test_function: crate::fields::make_bump(d, 1.0, 1.0)?,
            speed: 0.0,
            epsilons: vec![model.params.epsilon],
            exceedance_threshold: 0.05,
            correlation_threshold: 0.9,
            fk_paths: 20_000,
            pde: Grid1D::new(10.0, 0.01, 1e-3, times.last().copied().unwrap_or(1.0)),
            lambda: LambdaSettings {
                x: vec![0.0; d],
                radii: vec![6.0],
                t: 8.0,
                paths: 100_000,
                dt: 0.01,
            },
            conservativeness: ConservativenessSettings {
                motion: MotionChoice::Transformed,
                horizon: 5.0,
                paths: 2000,
                dt: 0.01,
                box_size: 2.0,
                levels: 6,
            },
            scaling_points: vec![vec![0.0; d]],
            model,
        })
    }
}

/// A named metric summarized over replicates at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricStat {
    pub t: f64,
    pub metric: String,
    #[serde(flatten)]
    pub summary: StatSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flag {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// One long-format row; `replicate` is `None` for aggregate rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub replicate: Option<usize>,
    pub t: f64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub model: String,
    pub stats: Vec<MetricStat>,
    pub scalars: Vec<(String, f64)>,
    pub flags: Vec<Flag>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub records: Vec<Record>,
}

impl ExperimentResult {
    fn new(kind: ExperimentKind, model: &ExampleModel) -> Self {
        ExperimentResult {
            kind,
            model: model.id.as_str().to_string(),
            stats: Vec::new(),
            scalars: Vec::new(),
            flags: Vec::new(),
            warnings: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.flags.iter().all(|f| f.passed)
    }

    pub fn first_failure(&self) -> Option<&Flag> {
        self.flags.iter().find(|f| !f.passed)
    }

    pub fn flag(&self, name: &str) -> Option<&Flag> {
        self.flags.iter().find(|f| f.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn stat(&self, metric: &str, t: f64) -> Option<&StatSummary> {
        self.stats
            .iter()
            .find(|s| s.metric == metric && s.t == t)
            .map(|s| &s.summary)
    }

    fn push_flag(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.flags.push(Flag {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.push((name.into(), value));
    }

    fn push_stat(&mut self, t: f64, metric: &str, samples: &[f64]) -> Result<StatSummary> {
        let summary = summarize(samples)?;
        self.stats.push(MetricStat {
            t,
            metric: metric.to_string(),
            summary: summary.clone(),
        });
        Ok(summary)
    }

    fn record(&mut self, replicate: Option<usize>, t: f64, metric: &str, value: f64) {
        self.records.push(Record {
            replicate,
            t,
            metric: metric.to_string(),
            value,
        });
    }

    /// Long-format CSV `replicate,t,metric,value`.
    pub fn write_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "replicate,t,metric,value")?;
        for r in &self.records {
            match r.replicate {
                Some(i) => write!(out, "{i},")?,
                None => write!(out, ",")?,
            }
            writeln!(out, "{:.16e},{},{:.16e}", r.t, r.metric, r.value)?;
        }
        Ok(())
    }
}

fn check_replicates(cfg: &ExperimentConfig, res: &mut ExperimentResult) -> Result<()> {
    if cfg.replicates < 2 {
        return Err(Error::Constraint(format!(
            "at least 2 replicates are required, got {}",
            cfg.replicates
        )));
    }
    if cfg.replicates < MIN_SOUND_REPLICATES {
        res.warnings.push(format!(
            "insufficient-replicates: R = {} < {MIN_SOUND_REPLICATES}; standard errors are unreliable",
            cfg.replicates
        ));
    }
    Ok(())
}

fn simulate_all(cfg: &ExperimentConfig, res: &mut ExperimentResult, functionals: &[Functional]) -> Result<Vec<Trajectory>> {
    let trajs = run_replicates(
        &cfg.model.base,
        &cfg.model.transform,
        &cfg.mu,
        &cfg.sim,
        functionals,
        cfg.seed,
        cfg.replicates,
    )?;
    if let Some(r) = trajs.iter().position(|t| t.exploded) {
        return Err(Error::Constraint(format!(
            "population-explosion: replicate {r} exceeded {} particles",
            cfg.sim.population_cap
        )));
    }
    let floored: u64 = trajs.iter().map(|t| t.floored_events).sum();
    if floored > 0 {
        let events: u64 = trajs.iter().map(|t| t.events).sum();
        res.warnings.push(format!(
            "variance-floor: {floored} of {events} branching events had 2*alpha(x) below the smallest \
             variance of an integer law with mean 1 + beta/n and used that minimum"
        ));
        res.push_scalar("floored_event_fraction", floored as f64 / events.max(1) as f64);
    }
    Ok(trajs)
}

fn mu_h(cfg: &ExperimentConfig) -> f64 {
    cfg.mu.pair(&cfg.model.transform.h)
}

/// Runs the experiment named by `cfg.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    match cfg.kind {
        ExperimentKind::Martingale => run_martingale(cfg),
        ExperimentKind::Lln => run_lln(cfg),
        ExperimentKind::MovingWindow => run_moving_window(cfg),
        ExperimentKind::Spread => run_spread(cfg),
        ExperimentKind::Extinction => run_extinction(cfg),
        ExperimentKind::LocalExtinction => run_local_extinction(cfg),
        ExperimentKind::Laplace => run_laplace(cfg),
        ExperimentKind::Lambda => run_lambda(cfg),
        ExperimentKind::Conservativeness => run_conservativeness_diagnostic(cfg),
        ExperimentKind::HTransform => run_h_transform(cfg),
        ExperimentKind::Scaling => run_scaling(cfg),
    }
}

/// Mean, variance and monotonicity of `W̄_t`.
pub fn run_martingale(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Martingale, &cfg.model);
    check_replicates(cfg, &mut res)?;
    let trajs = simulate_all(cfg, &mut res, &[])?;
    let target = mu_h(cfg);
    let mass = cfg.mu.total_mass();
    let mut means: Vec<(f64, StatSummary)> = Vec::new();
    for (k, &t) in cfg.sim.obs_times.iter().enumerate() {
        let mut w = Vec::with_capacity(trajs.len());
        let mut m = Vec::with_capacity(trajs.len());
        for (r, tr) in trajs.iter().enumerate() {
            let s = &tr.snapshots[k];
            res.record(Some(r), t, "total_mass", s.total_mass);
            res.record(Some(r), t, "w_bar", s.w_bar);
            res.record(Some(r), t, "support_radius", s.support_radius);
            w.push(s.w_bar);
            m.push(s.total_mass);
        }
        res.push_stat(t, "total_mass", &m)?;
        let sw = res.push_stat(t, "w_bar", &w)?;
        if t == 0.0 {
            let exact = w.iter().all(|v| (v - target).abs() <= 1e-12 * target.abs().max(1.0));
            res.push_flag("w_bar_initial_exact", exact, format!("W̄_0 = <mu, h> = {target}"));
        } else {
            res.push_flag(
                format!("w_bar_mean_t{t}"),
                sw.mean_within(target, 3.0),
                format!("mean {} vs {target}, 3 SE = {}", sw.mean, 3.0 * sw.std_error),
            );
        }
        if let (ExampleId::Sbm, Some(beta), Some(alpha)) = (cfg.model.id, cfg.model.constant_beta(), alpha_const(&cfg.model)) {
            if t > 0.0 {
                let v = feller_normalized_variance(beta, alpha, mass, t);
                let seed = derive_seed(cfg.seed, &format!("feller/{t}"));
                // Full-truncation Euler loses mass at the absorbing boundary; dt = 1e-3
                // keeps that bias well below one standard error.
                let z = simulate_feller(beta, alpha, mass, t, cfg.sim.dt_max.min(1e-3), cfg.fk_paths, seed)?;
                let scaled: Vec<f64> = z.iter().map(|v| v * (-beta * t).exp()).collect();
                let euler = summarize(&scaled)?;
                res.push_scalar(format!("variance_feller_euler_t{t}"), euler.variance);
                res.push_scalar(format!("variance_feller_euler_se_t{t}"), euler.variance_std_error);
                res.push_flag(
                    format!("variance_oracle_agreement_t{t}"),
                    (euler.variance - v).abs() <= 3.0 * euler.variance_std_error,
                    format!("Feller Euler variance {} vs closed form {v}", euler.variance),
                );
                res.push_scalar(format!("variance_oracle_t{t}"), v);
                res.push_flag(
                    format!("w_bar_variance_t{t}"),
                    (sw.variance - v).abs() <= 3.0 * sw.variance_std_error,
                    format!(
                        "variance {} vs (2 alpha |mu| / beta)(1 - e^(-beta t)) = {v}, 3 SE = {}",
                        sw.variance,
                        3.0 * sw.variance_std_error
                    ),
                );
            }
        }
        means.push((t, sw));
    }
    let mut monotone = true;
    for w in means.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        let slack = 2.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        monotone &= b.mean <= a.mean + slack;
    }
    res.push_flag("w_bar_mean_nonincreasing", monotone, "replicate mean of W̄_t nonincreasing within 2 SE");
    Ok(res)
}

fn alpha_const(model: &ExampleModel) -> Option<f64> {
    match model.base.alpha.kind() {
        FieldKind::Constant(a) => Some(*a),
        _ => None,
    }
}

/// Window statistics: `R_t`, `D_t` and the terminal correlation.
pub fn run_lln(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut c = cfg.clone();
    c.speed = 0.0;
    run_window(&c, ExperimentKind::Lln)
}

/// Moving-frame version of [`run_lln`] with speed `cfg.speed`.
pub fn run_moving_window(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.model.check_moving_window(cfg.speed)?;
    run_window(cfg, ExperimentKind::MovingWindow)
}

/// `E^μ⟨X_t, f^{(ct)}⟩`: exact kernel if available, else Feynman–Kac.
fn denominator(cfg: &ExperimentConfig, t: f64) -> Result<f64> {
    let f = &cfg.test_function;
    match model_expectation_measure(&cfg.model, f, cfg.speed, &cfg.mu, t) {
        Ok(v) => Ok(v),
        Err(Error::NoClosedForm(_)) => {
            let shift = -cfg.speed * t;
            let g = |y: &[f64]| {
                let mut z = y.to_vec();
                z[0] += shift;
                f.eval(&z)
            };
            let mut total = 0.0;
            for (i, a) in cfg.mu.atoms.iter().enumerate() {
                let seed = derive_seed(cfg.seed, &format!("denominator/{i}/{t}"));
                let est = feynman_kac_fn(&cfg.model.base, &g, &a.position, t, cfg.fk_paths, seed, cfg.sim.dt_max)?;
                total += a.mass * est.estimate;
            }
            Ok(total)
        }
        Err(e) => Err(e),
    }
}

fn run_window(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(kind, &cfg.model);
    check_replicates(cfg, &mut res)?;
    let functionals = [Functional::moving("local_mass", cfg.test_function.clone(), cfg.speed)];
    let trajs = simulate_all(cfg, &mut res, &functionals)?;
    let norm = mu_h(cfg);
    let lambda = cfg.model.lambda_c();
    let f_r = if cfg.speed == 0.0 {
        pair_with_r(&cfg.model, &cfg.test_function).ok()
    } else {
        None
    };
    let mut mean_d = Vec::new();
    let mut last: Option<(Vec<f64>, Vec<f64>, Vec<bool>)> = None;
    let mut first_w: Option<Vec<f64>> = None;
    for (k, &t) in cfg.sim.obs_times.iter().enumerate() {
        let den = denominator(cfg, t)?;
        if !(den > 0.0) {
            return Err(Error::Constraint(format!("E<X_t, f> = {den} at t = {t}; the ratio is undefined")));
        }
        res.push_scalar(format!("expectation_t{t}"), den);
        let (mut ratio, mut disc, mut w, mut alive) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (r, tr) in trajs.iter().enumerate() {
            let s = &tr.snapshots[k];
            let local = s.functionals[0];
            let rt = local / den;
            let dt = (rt - s.w_bar / norm).abs();
            res.record(Some(r), t, "total_mass", s.total_mass);
            res.record(Some(r), t, "w_bar", s.w_bar);
            res.record(Some(r), t, "local_mass", local);
            res.record(Some(r), t, "ratio", rt);
            res.record(Some(r), t, "discrepancy", dt);
            if cfg.speed == 0.0 {
                let scaled = cfg.model.scaling.s(t) * (-lambda * t).exp() * local;
                res.record(Some(r), t, "scaled_local_mass", scaled);
            }
            ratio.push(rt);
            disc.push(dt);
            w.push(s.w_bar);
            alive.push(s.particles > 0);
        }
        let sr = res.push_stat(t, "ratio", &ratio)?;
        let sd = res.push_stat(t, "discrepancy", &disc)?;
        res.push_stat(t, "w_bar", &w)?;
        res.push_flag(
            format!("ratio_mean_one_t{t}"),
            sr.mean_within(1.0, 3.0),
            format!("mean R_t {} vs 1, 3 SE = {}", sr.mean, 3.0 * sr.std_error),
        );
        mean_d.push(sd.mean);
        if first_w.is_none() {
            first_w = Some(w.clone());
        }
        last = Some((ratio, w, alive));
    }
    if let Some(fr) = f_r {
        res.push_scalar("f_r_pairing", fr);
    }
    if mean_d.len() >= 2 {
        let decreasing = mean_d.windows(2).all(|p| p[1] < p[0]);
        res.push_flag(
            "discrepancy_decreasing",
            decreasing,
            format!("mean D_t over the grid: {mean_d:?}"),
        );
    }
    if let Some((ratio, w, alive)) = last {
        let corr = correlation(&ratio, &w);
        res.push_scalar("corr_ratio_wbar_final", corr);
        let (rs, ws): (Vec<f64>, Vec<f64>) = ratio
            .iter()
            .zip(&w)
            .zip(&alive)
            .filter(|(_, a)| **a)
            .map(|((r, w), _)| (*r, *w))
            .unzip();
        let corr_s = if rs.len() >= 3 { correlation(&rs, &ws) } else { f64::NAN };
        res.push_scalar("corr_ratio_wbar_final_survival", corr_s);
        res.push_scalar("survivors_final", rs.len() as f64);
        if let Some(w0) = first_w {
            res.push_scalar("corr_ratio_final_wbar_first", correlation(&ratio, &w0));
        }
        res.push_flag(
            "correlation_given_survival",
            corr_s >= cfg.correlation_threshold,
            format!("corr(R_T, W̄_T | survival) = {corr_s}, threshold {}", cfg.correlation_threshold),
        );
    }
    Ok(res)
}

/// Fraction of replicates whose support leaves `B(0, (√(2β) + ε)t)`.
pub fn run_spread(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Spread, &cfg.model);
    check_replicates(cfg, &mut res)?;
    let beta = cfg.model.constant_beta().unwrap_or_else(|| cfg.model.lambda_c().max(0.0));
    let trajs = simulate_all(cfg, &mut res, &[])?;
    let reps = trajs.len() as f64;
    let mut eps = cfg.epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let times = &cfg.sim.obs_times;
    let mut table: Vec<Vec<f64>> = Vec::new();
    for &e in &eps {
        let mut row = Vec::new();
        for (k, &t) in times.iter().enumerate() {
            let z = ((2.0 * beta).sqrt() + e) * t;
            let count = trajs.iter().filter(|tr| tr.snapshots[k].support_radius > z).count();
            let p = count as f64 / reps;
            res.record(None, t, &format!("exceedance_eps{e}"), p);
            res.push_scalar(format!("exceedance_eps{e}_t{t}"), p);
            row.push(p);
        }
        table.push(row);
    }
    for (r, tr) in trajs.iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            res.record(Some(r), t, "support_radius", tr.snapshots[k].support_radius);
        }
    }
    if let (Some(&e), Some(&t)) = (cfg.epsilons.first(), times.last()) {
        let i = eps.iter().position(|v| *v == e).unwrap_or(0);
        let p = table[i][times.len() - 1];
        res.push_flag(
            "exceedance_final",
            p <= cfg.exceedance_threshold,
            format!(
                "fraction beyond (sqrt(2 beta) + {e}) t at t = {t}: {p} (SE {}), threshold {}",
                proportion_se(p, trajs.len()),
                cfg.exceedance_threshold
            ),
        );
    }
    let nested = table.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a <= b));
    res.push_flag("monotone_in_epsilon", nested, "smaller epsilon never lowers the exceedance fraction");
    let trend = table.iter().all(|row| row.windows(2).all(|w| w[1] <= w[0]));
    res.push_flag("exceedance_trend_decreasing", trend, "exceedance fractions nonincreasing in t for every epsilon");
    Ok(res)
}

/// Extinction frequency against the continuous-state branching oracle.
pub fn run_extinction(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Extinction, &cfg.model);
    check_replicates(cfg, &mut res)?;
    let t = *cfg
        .sim
        .obs_times
        .last()
        .ok_or_else(|| Error::Constraint("extinction needs an observation time".into()))?;
    let trajs = simulate_all(cfg, &mut res, &[])?;
    let mut ext = Vec::with_capacity(trajs.len());
    for (r, tr) in trajs.iter().enumerate() {
        let e = tr.extinct_by(t);
        res.record(Some(r), t, "extinct", if e { 1.0 } else { 0.0 });
        if let Some(s) = tr.extinct_at {
            res.record(Some(r), t, "extinction_time", s);
        }
        ext.push(if e { 1.0 } else { 0.0 });
    }
    let p = ext.iter().sum::<f64>() / ext.len() as f64;
    let se = proportion_se(p, ext.len());
    res.push_scalar("extinction_fraction", p);
    res.push_scalar("extinction_se", se);
    res.push_scalar(
        "stopped_at_cutoff",
        trajs.iter().filter(|t| t.stopped_early).count() as f64,
    );
    if let (Some(beta), Some(alpha)) = (cfg.model.constant_beta(), alpha_const(&cfg.model)) {
        let mass = cfg.mu.total_mass();
        let oracle = extinction_probability_csbp(beta, alpha, mass)?;
        res.push_scalar("extinction_oracle", oracle);
        res.push_scalar("extinction_oracle_at_t", extinction_probability_csbp_at(beta, alpha, mass, t)?);
        res.push_flag(
            "extinction_matches_csbp",
            (p - oracle).abs() <= 3.0 * se,
            format!("fraction {p} vs {oracle}, 3 SE = {}", 3.0 * se),
        );
    } else {
        res.warnings.push("no closed-form extinction probability for spatially varying coefficients".into());
    }
    Ok(res)
}

/// Local mass with `λ_c ≤ 0`: medians must fall while the mean stays at its
/// expectation.
pub fn run_local_extinction(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::LocalExtinction, &cfg.model);
    check_replicates(cfg, &mut res)?;
    if cfg.model.lambda_c() > 0.0 {
        res.warnings.push(format!(
            "lambda_c = {} > 0: local extinction is not expected",
            cfg.model.lambda_c()
        ));
    }
    let functionals = [Functional::new("local_mass", cfg.test_function.clone())];
    let trajs = simulate_all(cfg, &mut res, &functionals)?;
    let mut medians = Vec::new();
    for (k, &t) in cfg.sim.obs_times.iter().enumerate() {
        let v: Vec<f64> = trajs.iter().map(|tr| tr.snapshots[k].functionals[0]).collect();
        for (r, x) in v.iter().enumerate() {
            res.record(Some(r), t, "local_mass", *x);
        }
        let s = res.push_stat(t, "local_mass", &v)?;
        let med = median(&v);
        res.push_scalar(format!("median_t{t}"), med);
        medians.push(med);
        if t > 0.0 {
            let e = denominator(cfg, t)?;
            res.push_scalar(format!("expectation_t{t}"), e);
            res.push_flag(
                format!("mean_matches_expectation_t{t}"),
                s.mean_within(e, 3.0),
                format!("mean {} vs {e}, 3 SE = {}", s.mean, 3.0 * s.std_error),
            );
        }
    }
    // Once the median reaches zero it cannot fall further, so "decreasing"
    // means nonincreasing with a strict overall drop.
    let decreasing = medians.windows(2).all(|w| w[1] <= w[0])
        && medians.len() >= 2
        && medians[medians.len() - 1] < medians[0];
    res.push_flag("median_decreasing", decreasing, format!("medians {medians:?}"));
    Ok(res)
}

/// Monte Carlo `E exp(−⟨X_t, g⟩)` against the log-Laplace PDE.
pub fn run_laplace(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Laplace, &cfg.model);
    check_replicates(cfg, &mut res)?;
    let functionals = [Functional::new("g", cfg.test_function.clone())];
    let trajs = simulate_all(cfg, &mut res, &functionals)?;
    for (k, &t) in cfg.sim.obs_times.iter().enumerate() {
        let v: Vec<f64> = trajs.iter().map(|tr| (-tr.snapshots[k].functionals[0]).exp()).collect();
        for (r, x) in v.iter().enumerate() {
            res.record(Some(r), t, "laplace_sample", *x);
        }
        let s = res.push_stat(t, "laplace_sample", &v)?;
        let grid = Grid1D { t_end: t, ..cfg.pde.clone() };
        let pde = laplace_functional_pde(&cfg.model.base, &cfg.mu, &cfg.test_function, &grid)?;
        res.push_scalar(format!("pde_t{t}"), pde);
        res.push_scalar(format!("mc_t{t}"), s.mean);
        res.record(None, t, "laplace_pde", pde);
        res.push_flag(
            format!("laplace_within_3se_t{t}"),
            s.mean_within(pde, 3.0),
            format!("MC {} vs PDE {pde}, 3 SE = {}", s.mean, 3.0 * s.std_error),
        );
        let rel = (s.mean - pde).abs() / pde;
        res.push_flag(
            format!("laplace_within_5pct_t{t}"),
            rel <= 0.05,
            format!("relative difference {rel}"),
        );
    }
    Ok(res)
}

/// `β − π²/(8R²)`: principal eigenvalue of `½Δ + β` on `(−R, R)`.
pub fn killed_brownian_lambda(beta: f64, radius: f64) -> f64 {
    beta - std::f64::consts::PI.powi(2) / (8.0 * radius * radius)
}

/// `β + (1/t) ln P^x(τ_{(−R,R)} > t)` for Brownian motion, from the sine
/// series of the killed heat kernel. Tends to [`killed_brownian_lambda`] as
/// `t → ∞`, but only once `t ≫ R²`.
pub fn killed_brownian_lambda_at(beta: f64, radius: f64, x: f64, t: f64) -> f64 {
    use std::f64::consts::PI;
    let mut p = 0.0;
    for k in 0..2000 {
        let m = (2 * k + 1) as f64;
        let term = (-m * m * PI * PI * t / (8.0 * radius * radius)).exp();
        if term < 1e-18 {
            break;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        p += sign / m * (m * PI * x / (2.0 * radius)).cos() * term;
    }
    beta + (4.0 / PI * p).ln() / t
}

/// Eigenvalue estimates on growing balls.
pub fn run_lambda(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Lambda, &cfg.model);
    let l = &cfg.lambda;
    let spec = &cfg.model.base;
    let mut ests: Vec<(f64, LambdaEstimate)> = Vec::new();
    for (i, &r) in l.radii.iter().enumerate() {
        let est = estimate_lambda_c(
            spec,
            &LambdaEstimatorConfig {
                x: l.x.clone(),
                radius: r,
                t: l.t,
                paths: l.paths,
                seed: derive_seed(cfg.seed, &format!("lambda/{i}")),
                dt: l.dt,
                batches: 32,
            },
        )?;
        res.record(None, l.t, &format!("lambda_R{r}"), est.estimate);
        res.record(None, l.t, &format!("lambda_se_R{r}"), est.std_error);
        res.push_scalar(format!("lambda_R{r}"), est.estimate);
        res.push_scalar(format!("lambda_se_R{r}"), est.std_error);
        if let Some(d) = &est.diagnostic {
            res.warnings.push(format!("R = {r}: {d}"));
        }
        let brownian = spec.dim() == 1 && spec.drift.is_zero() && spec.diffusion.as_scaled_identity() == Some(1.0);
        if let (true, Some(beta)) = (brownian, cfg.model.constant_beta()) {
            let oracle = killed_brownian_lambda(beta, r);
            res.push_scalar(format!("lambda_oracle_R{r}"), oracle);
            let finite = killed_brownian_lambda_at(beta, r, l.x[0], l.t);
            res.push_scalar(format!("lambda_finite_t_R{r}"), finite);
            res.push_flag(
                format!("lambda_finite_t_within_ci_R{r}"),
                finite >= est.ci.0 && finite <= est.ci.1,
                format!("finite-t value beta + ln P(tau > t)/t = {finite}"),
            );
            res.push_flag(
                format!("lambda_within_ci_R{r}"),
                oracle >= est.ci.0 && oracle <= est.ci.1,
                format!(
                    "estimate {} with 95% CI [{}, {}] vs beta - pi^2/(8R^2) = {oracle}",
                    est.estimate, est.ci.0, est.ci.1
                ),
            );
            if beta == 0.0 {
                res.push_flag(format!("lambda_nonpositive_R{r}"), est.estimate <= 0.0, "killing only removes mass");
            }
        }
        ests.push((r, est));
    }
    if ests.len() >= 2 {
        let mut sorted = ests.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ok = sorted.windows(2).all(|w| {
            let slack = 2.0 * 1.96 * (w[0].1.std_error + w[1].1.std_error);
            w[1].1.estimate >= w[0].1.estimate - slack
        });
        res.push_flag("lambda_monotone_in_radius", ok, "estimates nondecreasing in R within twice the CI half-widths");
    }
    Ok(res)
}

/// Exit and explosion frequencies of the `L₀^h`-diffusion (or of the base
/// motion), without branching.
pub fn run_conservativeness_diagnostic(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Conservativeness, &cfg.model);
    let c = &cfg.conservativeness;
    let spec = match c.motion {
        MotionChoice::Transformed => &cfg.model.transformed,
        MotionChoice::Base => &cfg.model.base,
    };
    let start = cfg
        .mu
        .atoms
        .first()
        .map(|a| a.position.clone())
        .ok_or_else(|| Error::Constraint("initial measure is empty".into()))?;
    if !(c.horizon > 0.0) || c.paths == 0 || !(c.dt > 0.0) {
        return Err(Error::Constraint("conservativeness needs horizon, paths and dt positive".into()));
    }
    let steps = ((c.horizon / c.dt).ceil() as usize).max(4);
    let h = c.horizon / steps as f64;
    let motion = Motion::new(spec, h);
    let boxes: Vec<f64> = (0..c.levels).map(|k| c.box_size * 2f64.powi(k as i32)).collect();
    let checkpoints = [steps / 4, steps / 2, steps];
    // Per path: max sup-norm reached, radii at the checkpoints, exploded.
    let paths: Vec<(f64, [f64; 3], bool)> = (0..c.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(cfg.seed, p as u64);
            let mut y = start.clone();
            let mut sup: f64 = y.iter().fold(0.0, |m, v| m.max(v.abs()));
            let mut radii = [0.0; 3];
            let mut exploded = false;
            for s in 1..=steps {
                motion.step(&mut y, h, &mut rng);
                let n = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !n.is_finite() || n > 1e100 {
                    exploded = true;
                    break;
                }
                sup = sup.max(n);
                for (k, &cp) in checkpoints.iter().enumerate() {
                    if s == cp {
                        radii[k] = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    }
                }
            }
            (sup, radii, exploded)
        })
        .collect();
    let total = paths.len() as f64;
    let explosions = paths.iter().filter(|p| p.2).count() as f64 / total;
    res.push_scalar("explosion_frequency", explosions);
    res.record(None, c.horizon, "explosion_frequency", explosions);
    for b in &boxes {
        let exits = paths.iter().filter(|p| p.2 || p.0 >= *b).count() as f64 / total;
        res.push_scalar(format!("exit_frequency_box{b}"), exits);
        res.record(None, c.horizon, &format!("exit_frequency_box{b}"), exits);
    }
    let mut meds = [0.0; 3];
    for (k, cp) in checkpoints.iter().enumerate() {
        let r: Vec<f64> = paths.iter().filter(|p| !p.2).map(|p| p.1[k]).collect();
        meds[k] = if r.is_empty() { f64::NAN } else { median(&r) };
        let t = *cp as f64 * h;
        res.push_scalar(format!("median_radius_t{t}"), meds[k]);
        res.record(None, t, "median_radius", meds[k]);
    }
    // Diffusive spreading doubles the radius over [T/4, T]; exponential
    // outward drift multiplies it by e^{γ·3T/4}.
    let growth = meds[2] / meds[0];
    res.push_scalar("radius_growth_ratio", growth);
    let transient = growth > 4.0;
    res.push_scalar("transient", if transient { 1.0 } else { 0.0 });
    res.push_flag(
        "conservative",
        explosions == 0.0,
        if transient {
            format!("conservative but transient: no explosions, radius grew {growth}x over [T/4, T]")
        } else {
            "no explosions".to_string()
        },
    );
    Ok(res)
}

/// Pathwise reweighting identity and the conjugated-operator identity.
pub fn run_h_transform(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::HTransform, &cfg.model);
    check_replicates(cfg, &mut res)?;
    let mut c = cfg.clone();
    c.sim.keep_clouds = true;
    let trajs = simulate_all(&c, &mut res, &[])?;
    let tr = &cfg.model.transform;
    let f = &cfg.test_function;
    let hf = tr.h.mul(f);
    let mut worst: f64 = 0.0;
    for (r, traj) in trajs.iter().enumerate() {
        for cloud in &traj.clouds {
            let direct = transformed_pair(cloud, tr, f);
            let via = tr.time_weight(cloud.t) * pair(cloud, &hf);
            let rel = (direct - via).abs() / direct.abs().max(via.abs()).max(1e-300);
            let rel = if direct == via { 0.0 } else { rel };
            res.record(Some(r), cloud.t, "transformed_pairing", direct);
            res.record(Some(r), cloud.t, "reweighting_rel_diff", rel);
            worst = worst.max(rel);
        }
    }
    res.push_scalar("reweighting_max_rel_diff", worst);
    res.push_flag("reweighting_exact", worst <= 1e-12, format!("max relative difference {worst:e}"));

    let (op_worst, checked) = operator_identity_check(&cfg.model, cfg.seed)?;
    res.push_scalar("operator_max_rel_diff", op_worst);
    res.push_scalar("operator_checks", checked as f64);
    res.record(None, 0.0, "operator_max_rel_diff", op_worst);
    res.push_flag("operator_identity", op_worst <= 1e-6, format!("max relative difference {op_worst:e}"));
    Ok(res)
}

/// The fixed family of smooth test functions used by the operator check.
pub fn operator_test_functions(dim: usize) -> Vec<ScalarField> {
    let mut out = Vec::new();
    for k in 0..20 {
        let kf = k as f64;
        let axis = k % dim;
        let desc = match k % 5 {
            0 => format!("sin:{}:{}:{axis}", 0.5 + 0.3 * kf, 0.1 * kf),
            1 => format!("bump:{}:{}", 2.0 + 0.25 * kf, 1.0 + 0.1 * kf),
            2 => format!("gaussquad:{}:-1", 0.05 + 0.02 * kf),
            3 => format!("mul(sin:{}:0.3:{axis};explin:{}:{axis})", 1.0 + 0.1 * kf, -0.2 + 0.05 * kf),
            _ => format!("quad:{}:{}", 0.5 + 0.1 * kf, -0.05 * kf),
        };
        out.push(ScalarField::from_descriptor(&desc, dim).expect("fixed test family resolves"));
    }
    out
}

/// Max relative gap between `h^{-1}(L + β − λ)(hu)` and `(L + a∇h/h·∇)u`
/// over 20 test functions and 50 random points each.
pub fn operator_identity_check(model: &ExampleModel, seed: u64) -> Result<(f64, usize)> {
    use rand::Rng as _;
    let d = model.dim();
    let mut rng = stream(derive_seed(seed, "operator"), 0);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for u in operator_test_functions(d) {
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let lhs = conjugated_operator(&model.base, &model.transform, &u, &x);
            let rhs = model.transformed.generator(&u, &x);
            let scale = lhs.abs().max(rhs.abs()).max(1e-8);
            worst = worst.max((lhs - rhs).abs() / scale);
            count += 1;
        }
    }
    Ok((worst, count))
}

/// Scaled semigroup table and the growth conditions of the scaling triple.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut res = ExperimentResult::new(ExperimentKind::Scaling, &cfg.model);
    let rep = scaling_check(&cfg.model, &cfg.test_function, &cfg.scaling_points, &cfg.sim.obs_times)?;
    res.push_scalar("f_r_pairing", rep.target);
    for row in &rep.rows {
        res.record(None, row.t, "scaled", row.scaled);
        res.record(None, row.t, "deviation", row.deviation);
    }
    for u in &rep.uniform {
        res.record(None, u.t, "uniform_sup_deviation", u.sup_deviation);
        res.push_scalar(format!("uniform_sup_deviation_t{}", u.t), u.sup_deviation);
    }
    res.push_flag(
        "deviation_monotone",
        rep.monotone(),
        format!("violations at (point, t): {:?}", rep.monotone_violations),
    );
    res.push_flag(
        "growth_conditions",
        cfg.model.scaling.satisfies_growth_conditions(),
        "log s_t = O(log t) and s_{t+zhat_t}/s_{zhat_t} -> 1",
    );
    Ok(res)
}

//! Branching-particle approximation of a superdiffusion at level `n`.
//!
//! Particles carry mass `1/n`, live for Exp(mean `1/n`) times, move by the
//! `L`-diffusion and, at death, leave a `{0, 1, K}` number of offspring at the
//! death position with mean `1 + β(x)/n` and variance `2α(x)`.
//!
//! Time is cut into epochs (observation times plus a regular checkpoint grid).
//! Within an epoch each particle's family is followed depth first; clocks are
//! memoryless, so redrawing them at epoch boundaries changes nothing in law.

mod csbp;
mod motion;
mod offspring;

use std::io::Write;

use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use csbp::{feller_normalized_variance, simulate_feller};
pub use motion::{step_motion, Motion, MotionKind};
pub use offspring::{
    make_offspring_law, make_offspring_law_floored, minimal_offspring_variance, OffspringLaw, OFFSPRING_FAMILY,
    OFFSPRING_K_CAP,
};

use crate::error::{Error, Result};
use crate::fields::{FieldKind, ScalarField};
use crate::model::{HTransformSpec, SuperdiffusionSpec};
use crate::rng::{stream, Rng};

/// A point mass of the initial measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub position: Vec<f64>,
    pub mass: f64,
}

/// Finite atomic initial measure `μ = Σ m_i δ_{x_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialMeasure {
    pub atoms: Vec<Atom>,
}

impl InitialMeasure {
    pub fn dirac(position: Vec<f64>, mass: f64) -> Self {
        InitialMeasure {
            atoms: vec![Atom { position, mass }],
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.atoms.first().map(|a| a.position.len())
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// `⟨μ, f⟩`.
    pub fn pair(&self, f: &ScalarField) -> f64 {
        self.atoms.iter().map(|a| a.mass * f.eval(&a.position)).sum()
    }

    /// Initial particle positions at level `n`: `m·n` particles per atom.
    pub fn particles(&self, n: u32) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for a in &self.atoms {
            let count = a.mass * n as f64;
            let rounded = count.round();
            if !(a.mass >= 0.0) || (count - rounded).abs() > 1e-9 * count.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "atom mass {} is not a multiple of 1/n for n = {n}",
                    a.mass
                )));
            }
            for _ in 0..rounded as usize {
                out.extend_from_slice(&a.position);
            }
        }
        Ok(out)
    }
}

/// A test function observed at every snapshot, optionally in a frame moving
/// with speed `speed` along the first axis: `x ↦ f(x₁ + speed·t, x₂, …)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Functional {
    pub name: String,
    pub field: ScalarField,
    pub speed: f64,
}

impl Functional {
    pub fn new(name: &str, field: ScalarField) -> Self {
        Functional {
            name: name.to_string(),
            field,
            speed: 0.0,
        }
    }

    pub fn moving(name: &str, field: ScalarField, speed: f64) -> Self {
        Functional {
            speed,
            ..Functional::new(name, field)
        }
    }
}

/// Knobs of a single simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub level: u32,
    pub obs_times: Vec<f64>,
    pub dt_max: f64,
    pub population_cap: usize,
    /// Longest epoch between population checks.
    pub checkpoint_interval: f64,
    /// Stop once total mass reaches this value (the run then counts as
    /// surviving); meant for extinction experiments.
    pub survival_mass_cutoff: Option<f64>,
    /// Keep the full particle cloud at each observation time.
    pub keep_clouds: bool,
}

impl SimConfig {
    pub fn new(level: u32, obs_times: Vec<f64>) -> Self {
        SimConfig {
            level,
            obs_times,
            dt_max: 0.01,
            population_cap: 5_000_000,
            checkpoint_interval: 0.25,
            survival_mass_cutoff: None,
            keep_clouds: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.level == 0 {
            return Err(Error::InvalidArgument("level n must be at least 1".into()));
        }
        if !(self.dt_max > 0.0) || !(self.checkpoint_interval > 0.0) {
            return Err(Error::InvalidArgument("dt_max and checkpoint_interval must be positive".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.obs_times {
            if !(t >= 0.0) || !t.is_finite() || t <= prev {
                return Err(Error::InvalidArgument(format!(
                    "observation times must be finite, nonnegative and strictly increasing: {:?}",
                    self.obs_times
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Empirical measure `X_t = (1/n) Σ δ_{x_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub level: u32,
    pub t: f64,
    pub dim: usize,
    /// Positions, `dim` consecutive coordinates per particle.
    pub positions: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(level: u32, t: f64, dim: usize, positions: Vec<f64>) -> Self {
        ParticleCloud {
            level,
            t,
            dim,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn total_mass(&self) -> f64 {
        self.len() as f64 / self.level as f64
    }

    /// `max |x_i|`, zero for an empty cloud.
    pub fn support_radius(&self) -> f64 {
        self.iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// `⟨X, f⟩ = (1/n) Σ f(x_i)`.
pub fn pair(cloud: &ParticleCloud, f: &ScalarField) -> f64 {
    pair_fn(cloud, |x| f.eval(x))
}

pub fn pair_fn(cloud: &ParticleCloud, f: impl FnMut(&[f64]) -> f64) -> f64 {
    // `+ 0.0` turns the −0.0 of an empty sum into 0.0.
    (cloud.iter().map(f).sum::<f64>() + 0.0) / cloud.level as f64
}

/// `W̄_t = e^{−λt} (1/n) Σ h(x_i)`.
pub fn h_weighted_mass(cloud: &ParticleCloud, tr: &HTransformSpec) -> f64 {
    tr.time_weight(cloud.t) * pair(cloud, &tr.h)
}

/// `⟨X_t, f^{(ct)}⟩` with `f^{(ct)}(x) = f(x₁ − ct, x₂, …)`: the window rides
/// along `e₁` at speed `c`.
pub fn moving_pair(cloud: &ParticleCloud, f: &ScalarField, c: f64, t: f64) -> f64 {
    if c == 0.0 {
        return pair(cloud, f);
    }
    let shift = -c * t;
    let mut y = vec![0.0; cloud.dim];
    pair_fn(cloud, |x| {
        y.copy_from_slice(x);
        y[0] += shift;
        f.eval(&y)
    })
}

/// `⟨X^H_t, f⟩` for `X^H_t = H(·, t) X_t`: each particle reweighted by
/// `e^{−λt} h(x_i)`.
pub fn transformed_pair(cloud: &ParticleCloud, tr: &HTransformSpec, f: &ScalarField) -> f64 {
    let w = tr.time_weight(cloud.t);
    pair_fn(cloud, |x| w * tr.h.eval(x) * f.eval(x))
}

/// Per-observation summary of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub particles: usize,
    pub total_mass: f64,
    pub w_bar: f64,
    pub support_radius: f64,
    pub functionals: Vec<f64>,
}

/// One replicate of the particle system.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// One snapshot per observation time reached.
    pub snapshots: Vec<Snapshot>,
    /// The population cap was hit; snapshots stop there.
    pub exploded: bool,
    /// Time of the last death if the population died out.
    pub extinct_at: Option<f64>,
    /// The survival-mass cutoff was reached; later snapshots are missing.
    pub stopped_early: bool,
    /// Number of simulated branching events.
    pub events: u64,
    /// Events whose target variance `2α(x)` was below the integer minimum
    /// and was raised to it.
    pub floored_events: u64,
    /// Particle clouds at observation times, when requested.
    pub clouds: Vec<ParticleCloud>,
}

impl Trajectory {
    pub fn extinct_by(&self, t: f64) -> bool {
        self.extinct_at.is_some_and(|s| s <= t)
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.t == t)
    }
}

/// How offspring numbers are drawn.
enum Branching {
    /// Constant law: unit-offspring events change nothing and are skipped, so
    /// events arrive at rate `n(1 − p1)` and leave `0` or `K` children.
    Constant { rate: f64, p_zero: f64, k: u64 },
    /// Law recomputed at each death position.
    Spatial,
}

fn branching_for(spec: &SuperdiffusionSpec, n: f64) -> Result<Branching> {
    match (spec.beta.kind(), spec.alpha.kind()) {
        (FieldKind::Constant(b), FieldKind::Constant(a)) => {
            let law = make_offspring_law(1.0 + b / n, 2.0 * a)?;
            let active = law.p0 + law.pk;
            Ok(Branching::Constant {
                rate: n * active,
                p_zero: if active > 0.0 { law.p0 / active } else { 1.0 },
                k: law.k,
            })
        }
        _ => Ok(Branching::Spatial),
    }
}

fn epoch_ends(obs_times: &[f64], interval: f64) -> Vec<(f64, Option<usize>)> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for (i, &obs) in obs_times.iter().enumerate() {
        let gaps = ((obs - t) / interval).ceil().max(1.0) as usize;
        let w = (obs - t) / gaps as f64;
        for j in 1..gaps {
            out.push((t + w * j as f64, None));
        }
        out.push((obs, Some(i)));
        t = obs;
    }
    out
}

/// Simulates the level-`n` particle system of `spec` started from `mu`.
///
/// `tr` supplies the `(h, λ)` used for `W̄_t`. Transformed specs cannot be
/// simulated directly: the transformed process is a reweighting of base paths.
pub fn simulate(
    spec: &SuperdiffusionSpec,
    tr: &HTransformSpec,
    mu: &InitialMeasure,
    cfg: &SimConfig,
    functionals: &[Functional],
    rng: &mut Rng,
) -> Result<Trajectory> {
    cfg.validate()?;
    if spec.transformed_by.is_some() {
        return Err(Error::InvalidArgument(
            "simulate the base model; transformed functionals are reweightings of its paths".into(),
        ));
    }
    let d = spec.dim();
    if mu.dim().is_some_and(|m| m != d) {
        return Err(Error::Dimension {
            expected: d,
            got: mu.dim().unwrap_or(0),
        });
    }
    let n = cfg.level as f64;
    let motion = Motion::new(spec, cfg.dt_max);
    let branching = branching_for(spec, n)?;
    let mut current = mu.particles(cfg.level)?;
    current = current
        .chunks_exact(d)
        .filter(|x| spec.domain.contains(x))
        .flatten()
        .copied()
        .collect();

    let mut traj = Trajectory {
        snapshots: Vec::with_capacity(cfg.obs_times.len()),
        exploded: false,
        extinct_at: None,
        stopped_early: false,
        events: 0,
        floored_events: 0,
        clouds: Vec::new(),
    };
    if current.is_empty() {
        traj.extinct_at = Some(0.0);
    }

    let mut next: Vec<f64> = Vec::with_capacity(current.len());
    let mut stack_t: Vec<f64> = Vec::new();
    let mut stack_x: Vec<f64> = Vec::new();
    let mut x = vec![0.0; d];
    let mut t0 = 0.0;

    for (t1, obs) in epoch_ends(&cfg.obs_times, cfg.checkpoint_interval) {
        next.clear();
        let mut last_death = t0;
        'particles: for p in current.chunks_exact(d) {
            stack_t.push(t0);
            stack_x.extend_from_slice(p);
            while let Some(mut s) = stack_t.pop() {
                let base = stack_x.len() - d;
                x.copy_from_slice(&stack_x[base..]);
                stack_x.truncate(base);
                loop {
                    let rate = match branching {
                        Branching::Constant { rate, .. } => rate,
                        Branching::Spatial => n,
                    };
                    let e: f64 = rng.sample(Exp1);
                    let tau = if rate > 0.0 { e / rate } else { f64::INFINITY };
                    if s + tau >= t1 {
                        if motion.advance(&mut x, t1 - s, &spec.domain, rng) {
                            next.extend_from_slice(&x);
                        }
                        break;
                    }
                    if !motion.advance(&mut x, tau, &spec.domain, rng) {
                        break;
                    }
                    s += tau;
                    traj.events += 1;
                    let u: f64 = rng.random();
                    let k = match branching {
                        Branching::Constant { p_zero, k, .. } => {
                            if u < p_zero {
                                0
                            } else {
                                k
                            }
                        }
                        Branching::Spatial => {
                            let (law, floored) =
                                make_offspring_law_floored(1.0 + spec.beta.eval(&x) / n, 2.0 * spec.alpha.eval(&x))?;
                            traj.floored_events += u64::from(floored);
                            law.sample(u)
                        }
                    };
                    if k == 0 {
                        last_death = last_death.max(s);
                        break;
                    }
                    for _ in 1..k {
                        stack_t.push(s);
                        stack_x.extend_from_slice(&x);
                    }
                    if (next.len() + stack_x.len()) / d > cfg.population_cap {
                        traj.exploded = true;
                        break 'particles;
                    }
                }
            }
        }
        if traj.exploded {
            break;
        }
        std::mem::swap(&mut current, &mut next);
        t0 = t1;
        if current.is_empty() && traj.extinct_at.is_none() {
            traj.extinct_at = Some(last_death);
        }
        if let Some(i) = obs {
            let cloud = ParticleCloud::new(cfg.level, t1, d, current.clone());
            traj.snapshots.push(snapshot(&cloud, tr, functionals));
            if cfg.keep_clouds {
                traj.clouds.push(cloud);
            }
            debug_assert_eq!(traj.snapshots.len(), i + 1);
        }
        if let Some(cut) = cfg.survival_mass_cutoff {
            if current.len() as f64 / n >= cut {
                traj.stopped_early = true;
                break;
            }
        }
    }
    Ok(traj)
}

fn snapshot(cloud: &ParticleCloud, tr: &HTransformSpec, functionals: &[Functional]) -> Snapshot {
    Snapshot {
        t: cloud.t,
        particles: cloud.len(),
        total_mass: cloud.total_mass(),
        w_bar: h_weighted_mass(cloud, tr),
        support_radius: cloud.support_radius(),
        functionals: functionals
            .iter()
            .map(|f| moving_pair(cloud, &f.field, f.speed, cloud.t))
            .collect(),
    }
}

/// `reps` independent replicates; replicate `r` uses stream `(seed, r)`.
pub fn run_replicates(
    spec: &SuperdiffusionSpec,
    tr: &HTransformSpec,
    mu: &InitialMeasure,
    cfg: &SimConfig,
    functionals: &[Functional],
    seed: u64,
    reps: usize,
) -> Result<Vec<Trajectory>> {
    (0..reps)
        .into_par_iter()
        .map(|r| simulate(spec, tr, mu, cfg, functionals, &mut stream(seed, r as u64)))
        .collect()
}

/// CSV rows `replicate,t,total_mass,w_bar,support_radius,<functionals>`.
pub fn write_trajectories_csv(
    out: &mut dyn Write,
    trajectories: &[Trajectory],
    functionals: &[Functional],
) -> Result<()> {
    write!(out, "replicate,t,total_mass,w_bar,support_radius")?;
    for f in functionals {
        write!(out, ",{}", f.name)?;
    }
    writeln!(out)?;
    for (r, tr) in trajectories.iter().enumerate() {
        for s in &tr.snapshots {
            write!(
                out,
                "{r},{},{:.16e},{:.16e},{:.16e}",
                s.t, s.total_mass, s.w_bar, s.support_radius
            )?;
            for v in &s.functionals {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump, make_constant};
    use crate::stats::summarize;

    fn sbm(beta: f64, alpha: f64) -> (SuperdiffusionSpec, HTransformSpec) {
        (
            SuperdiffusionSpec::super_brownian(1, beta, alpha),
            HTransformSpec::new(make_constant(1, 1.0), beta),
        )
    }

    #[test]
    fn pairing_basics() {
        let cloud = ParticleCloud::new(1, 0.0, 1, vec![0.0, 1.0, 2.0]);
        let sq = crate::fields::make_quadratic(1, 0.0, 1.0);
        assert_eq!(pair(&cloud, &sq), 5.0);
        assert_eq!(pair(&cloud, &make_constant(1, 1.0)), cloud.total_mass());
        let far = ParticleCloud::new(1, 0.0, 1, vec![2.5, -3.0]);
        assert_eq!(pair(&far, &make_bump(1, 1.0, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn h_weighted_mass_single_particle() {
        let tr = HTransformSpec::new(crate::fields::make_exp_linear(1, 0.7, 0).unwrap(), 1.3);
        let cloud = ParticleCloud::new(1, 2.0, 1, vec![0.4]);
        let expect = (-1.3f64 * 2.0).exp() * (0.7f64 * 0.4).exp();
        assert!((h_weighted_mass(&cloud, &tr) - expect).abs() < 1e-15);
        let tr0 = HTransformSpec::new(make_constant(1, 1.0), 1.0);
        let c0 = ParticleCloud::new(4, 0.0, 1, vec![0.0, 1.0, 5.0]);
        assert_eq!(h_weighted_mass(&c0, &tr0), c0.total_mass());
    }

    #[test]
    fn moving_pair_frames() {
        let f = make_bump(1, 1.0, 1.0).unwrap();
        let (c, t) = (1.0, 2.0);
        let at_ct = ParticleCloud::new(1, t, 1, vec![c * t]);
        assert_eq!(moving_pair(&at_ct, &f, c, t), f.eval(&[0.0]));
        let at_minus = ParticleCloud::new(1, t, 1, vec![-c * t]);
        assert_eq!(moving_pair(&at_minus, &f, c, t), 0.0);
        let cloud = ParticleCloud::new(3, t, 1, vec![0.1, -0.5, 0.9]);
        assert_eq!(moving_pair(&cloud, &f, 0.0, t), pair(&cloud, &f));
    }

    #[test]
    fn initial_measure_levels() {
        let mu = InitialMeasure::dirac(vec![0.5], 1.0);
        assert_eq!(mu.particles(3).unwrap(), vec![0.5; 3]);
        assert!(InitialMeasure::dirac(vec![0.0], 0.5).particles(3).is_err());
    }

    #[test]
    fn critical_mass_is_conserved_in_mean() {
        let (spec, tr) = sbm(0.0, 0.5);
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let cfg = SimConfig::new(20, vec![2.0]);
        let trajs = run_replicates(&spec, &tr, &mu, &cfg, &[], 11, 500).unwrap();
        let masses: Vec<f64> = trajs.iter().map(|t| t.snapshots[0].total_mass).collect();
        let s = summarize(&masses).unwrap();
        assert!((s.mean - 1.0).abs() < 3.0 * s.std_error, "{s:?}");
    }

    #[test]
    fn first_event_is_exponential() {
        // Critical {0, 2} branching at n = 1: nothing happens before an Exp(1) time.
        let (spec, tr) = sbm(0.0, 0.5);
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let cfg = SimConfig::new(1, vec![0.3]);
        let trajs = run_replicates(&spec, &tr, &mu, &cfg, &[], 5, 20_000).unwrap();
        let quiet = trajs.iter().filter(|t| t.events == 0).count() as f64 / 20_000.0;
        let p = (-0.3f64).exp();
        assert!((quiet - p).abs() < 3.0 * (p * (1.0 - p) / 20_000.0).sqrt());
    }

    #[test]
    fn supercritical_mean_mass_grows() {
        let (spec, tr) = sbm(1.0, 0.5);
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let cfg = SimConfig::new(50, vec![0.5, 1.0]);
        let trajs = run_replicates(&spec, &tr, &mu, &cfg, &[], 3, 400).unwrap();
        for (i, t) in [0.5f64, 1.0].iter().enumerate() {
            let m: Vec<f64> = trajs.iter().map(|tr| tr.snapshots[i].total_mass).collect();
            let s = summarize(&m).unwrap();
            assert!((s.mean - t.exp()).abs() < 3.0 * s.std_error, "t={t}: {s:?}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (spec, tr) = sbm(1.0, 0.5);
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let f = [Functional::new("bump", make_bump(1, 1.0, 1.0).unwrap())];
        let cfg = SimConfig::new(20, vec![0.5, 1.0]);
        let a = run_replicates(&spec, &tr, &mu, &cfg, &f, 9, 8).unwrap();
        let b = run_replicates(&spec, &tr, &mu, &cfg, &f, 9, 8).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        write_trajectories_csv(&mut csv, &a, &f).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("replicate,t,total_mass,w_bar,support_radius,bump\n0,0.5,"));
    }

    #[test]
    fn population_cap_sets_flag() {
        let (spec, tr) = sbm(1.0, 0.5);
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let cfg = SimConfig {
            population_cap: 50,
            ..SimConfig::new(20, vec![5.0])
        };
        let t = simulate(&spec, &tr, &mu, &cfg, &[], &mut stream(1, 0)).unwrap();
        assert!(t.exploded);
        assert!(t.snapshots.is_empty());
    }

    #[test]
    fn spatial_law_matches_constant_law_in_mean() {
        // A constant β written as a quadratic with zero curvature takes the
        // per-event code path.
        let mut spec = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        spec.beta = ScalarField::new(
            1,
            FieldKind::Quadratic {
                k: 1.0,
                linear: vec![0.0],
                q: 0.0,
            },
        );
        let tr = HTransformSpec::new(make_constant(1, 1.0), 1.0);
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let cfg = SimConfig::new(20, vec![1.0]);
        let trajs = run_replicates(&spec, &tr, &mu, &cfg, &[], 4, 400).unwrap();
        let w: Vec<f64> = trajs.iter().map(|t| t.snapshots[0].w_bar).collect();
        let s = summarize(&w).unwrap();
        assert!((s.mean - 1.0).abs() < 3.0 * s.std_error, "{s:?}");
    }

    #[test]
    fn rejects_transformed_spec() {
        let (spec, tr) = sbm(1.0, 0.5);
        let t = crate::model::h_transform(&spec, &tr, &[vec![0.0]]).unwrap();
        let mu = InitialMeasure::dirac(vec![0.0], 1.0);
        let cfg = SimConfig::new(10, vec![1.0]);
        assert!(simulate(&t, &tr, &mu, &cfg, &[], &mut stream(0, 0)).is_err());
    }
}

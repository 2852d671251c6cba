//! TOML run configuration and the artifact-writing driver behind the CLI.
//!
//! A run reads one self-describing file, builds an [`ExperimentConfig`],
//! executes it and writes `results.csv`, `summary.json` and
//! `provenance.json` into the output directory. The provenance file echoes
//! the fully defaulted configuration, so any run can be reproduced from it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    run_experiment, ConservativenessSettings, ExperimentConfig, ExperimentKind, ExperimentResult, LambdaSettings,
    MotionChoice,
};
use crate::fields::{fd_check, ScalarField};
use crate::model::{registry_example, transform_residual, ExampleId, ExampleModel, ExampleParams};
use crate::pde::Grid1D;
use crate::sim::{Atom, InitialMeasure, SimConfig};

/// Schema id stamped into `summary.json` and `provenance.json`.
pub const SCHEMA: &str = "superlab.run/1";

fn d_seed() -> u64 {
    1
}
fn d_dim() -> usize {
    1
}
fn d_alpha() -> f64 {
    0.5
}
fn d_epsilon() -> f64 {
    0.5
}
fn d_n() -> u32 {
    200
}
fn d_replicates() -> usize {
    200
}
fn d_dt_max() -> f64 {
    0.01
}
fn d_cap() -> usize {
    5_000_000
}
fn d_checkpoint() -> f64 {
    0.25
}
fn d_times() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}
fn d_test_function() -> String {
    "bump:1:1".into()
}
fn d_epsilons() -> Vec<f64> {
    vec![0.5]
}
fn d_exceedance() -> f64 {
    0.05
}
fn d_correlation() -> f64 {
    0.9
}
fn d_fk_paths() -> usize {
    20_000
}
fn d_half_width() -> f64 {
    10.0
}
fn d_dx() -> f64 {
    0.01
}
fn d_pde_dt() -> f64 {
    1e-3
}
fn d_radii() -> Vec<f64> {
    vec![6.0]
}
fn d_lambda_t() -> f64 {
    8.0
}
fn d_lambda_paths() -> usize {
    100_000
}
fn d_horizon() -> f64 {
    5.0
}
fn d_cons_paths() -> usize {
    2000
}
fn d_box() -> f64 {
    2.0
}
fn d_levels() -> usize {
    6
}
fn d_out() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub id: ExampleId,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
}

impl ModelSection {
    pub fn params(&self) -> ExampleParams {
        ExampleParams {
            dim: self.dim,
            beta: self.beta,
            k: self.k,
            c: self.c,
            alpha: self.alpha,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "d_n")]
    pub n: u32,
    #[serde(default = "d_replicates")]
    pub replicates: usize,
    #[serde(default = "d_dt_max")]
    pub dt_max: f64,
    #[serde(default = "d_cap")]
    pub population_cap: usize,
    #[serde(default = "d_checkpoint")]
    pub checkpoint_interval: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival_mass_cutoff: Option<f64>,
    #[serde(default = "d_times")]
    pub times: Vec<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n: d_n(),
            replicates: d_replicates(),
            dt_max: d_dt_max(),
            population_cap: d_cap(),
            checkpoint_interval: d_checkpoint(),
            survival_mass_cutoff: None,
            times: d_times(),
        }
    }
}

/// `μ = Σ mass·δ_position`; empty means a unit mass at the origin.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSection {
    /// Field descriptor of the test function `f` (or `g` for Laplace runs).
    #[serde(default = "d_test_function")]
    pub test_function: String,
    #[serde(default)]
    pub speed: f64,
    #[serde(default = "d_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "d_exceedance")]
    pub exceedance_threshold: f64,
    #[serde(default = "d_correlation")]
    pub correlation_threshold: f64,
    #[serde(default = "d_fk_paths")]
    pub fk_paths: usize,
    /// Starting points of the scaled-semigroup table; empty means the origin.
    #[serde(default)]
    pub scaling_points: Vec<Vec<f64>>,
}

impl Default for ObservablesSection {
    fn default() -> Self {
        ObservablesSection {
            test_function: d_test_function(),
            speed: 0.0,
            epsilons: d_epsilons(),
            exceedance_threshold: d_exceedance(),
            correlation_threshold: d_correlation(),
            fk_paths: d_fk_paths(),
            scaling_points: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    #[serde(default = "d_half_width")]
    pub half_width: f64,
    #[serde(default = "d_dx")]
    pub dx: f64,
    #[serde(default = "d_pde_dt")]
    pub dt: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection {
            half_width: d_half_width(),
            dx: d_dx(),
            dt: d_pde_dt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    /// Start point; empty means the origin.
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default = "d_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "d_lambda_t")]
    pub t: f64,
    #[serde(default = "d_lambda_paths")]
    pub paths: usize,
    #[serde(default = "d_dt_max")]
    pub dt: f64,
}

impl Default for LambdaSection {
    fn default() -> Self {
        LambdaSection {
            x: Vec::new(),
            radii: d_radii(),
            t: d_lambda_t(),
            paths: d_lambda_paths(),
            dt: d_dt_max(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservativenessSection {
    #[serde(default)]
    pub motion: MotionChoice,
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default = "d_cons_paths")]
    pub paths: usize,
    #[serde(default = "d_dt_max")]
    pub dt: f64,
    #[serde(default = "d_box")]
    pub box_size: f64,
    #[serde(default = "d_levels")]
    pub levels: usize,
}

impl Default for ConservativenessSection {
    fn default() -> Self {
        ConservativenessSection {
            motion: MotionChoice::Transformed,
            horizon: d_horizon(),
            paths: d_cons_paths(),
            dt: d_dt_max(),
            box_size: d_box(),
            levels: d_levels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_out")]
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: d_out() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "d_seed")]
    pub seed: u64,
    pub model: ModelSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub observables: ObservablesSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub lambda: LambdaSection,
    #[serde(default)]
    pub conservativeness: ConservativenessSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses and validates TOML text. Origin placeholders are filled in so
    /// that the echoed config spells out every value.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let d = cfg.model.dim;
        if cfg.initial.atoms.is_empty() {
            cfg.initial.atoms.push(Atom {
                position: vec![0.0; d],
                mass: 1.0,
            });
        }
        if cfg.lambda.x.is_empty() {
            cfg.lambda.x = vec![0.0; d];
        }
        if cfg.observables.scaling_points.is_empty() {
            cfg.observables.scaling_points.push(vec![0.0; d]);
        }
        cfg.experiment_config()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds the model and checks every precondition before any work starts.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let model = registry_example(self.model.id, &self.model.params())?;
        let d = model.dim();
        let s = &self.simulation;
        if s.replicates < 2 {
            return Err(Error::Config(format!(
                "simulation.replicates must be at least 2, got {}",
                s.replicates
            )));
        }
        if s.times.is_empty() {
            return Err(Error::Config("simulation.times must not be empty".into()));
        }
        if s.times.windows(2).any(|w| !(w[1] > w[0])) || !(s.times[0] >= 0.0) {
            return Err(Error::Config(format!(
                "simulation.times must be nonnegative and strictly increasing, got {:?}",
                s.times
            )));
        }
        let dims_ok = self.initial.atoms.iter().all(|a| a.position.len() == d)
            && self.lambda.x.len() == d
            && self.observables.scaling_points.iter().all(|p| p.len() == d);
        if !dims_ok {
            return Err(Error::Config(format!("all points must have dimension {d}")));
        }
        let mu = InitialMeasure {
            atoms: self.initial.atoms.clone(),
        };
        mu.particles(s.n)?;
        let f = ScalarField::from_descriptor(&self.observables.test_function, d)?;
        let o = &self.observables;
        if o.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("observables.epsilons must be positive".into()));
        }
        if self.experiment == ExperimentKind::MovingWindow {
            model.check_moving_window(o.speed)?;
        } else if o.speed != 0.0 {
            return Err(Error::Config(format!(
                "observables.speed is only used by moving_window runs, got {}",
                o.speed
            )));
        }
        if self.experiment == ExperimentKind::Laplace && d != 1 {
            return Err(Error::Config("the log-Laplace PDE solver is one-dimensional".into()));
        }
        let mut sim = SimConfig::new(s.n, s.times.clone());
        sim.dt_max = s.dt_max;
        sim.population_cap = s.population_cap;
        sim.checkpoint_interval = s.checkpoint_interval;
        sim.survival_mass_cutoff = s.survival_mass_cutoff;
        let mut cfg = ExperimentConfig::new(self.experiment, model, s.times.clone())?;
        cfg.mu = mu;
        cfg.sim = sim;
        cfg.replicates = s.replicates;
        cfg.seed = self.seed;
        cfg.test_function = f;
        cfg.speed = o.speed;
        cfg.epsilons = o.epsilons.clone();
        cfg.exceedance_threshold = o.exceedance_threshold;
        cfg.correlation_threshold = o.correlation_threshold;
        cfg.fk_paths = o.fk_paths;
        cfg.scaling_points = o.scaling_points.clone();
        cfg.pde = Grid1D::new(self.pde.half_width, self.pde.dx, self.pde.dt, *s.times.last().unwrap());
        cfg.lambda = LambdaSettings {
            x: self.lambda.x.clone(),
            radii: self.lambda.radii.clone(),
            t: self.lambda.t,
            paths: self.lambda.paths,
            dt: self.lambda.dt,
        };
        let c = &self.conservativeness;
        cfg.conservativeness = ConservativenessSettings {
            motion: c.motion,
            horizon: c.horizon,
            paths: c.paths,
            dt: c.dt,
            box_size: c.box_size,
            levels: c.levels,
        };
        Ok(cfg)
    }
}

/// Reads and validates a config file; errors carry the file name and, for
/// syntax errors, the line.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    experiment: &'static str,
    seed: u64,
    all_passed: bool,
    first_failure: Option<&'a str>,
    config: &'a RunConfig,
    result: &'a ExperimentResult,
}

#[derive(Serialize)]
struct Provenance<'a> {
    schema: &'static str,
    version: &'static str,
    seed: u64,
    config_sha256: String,
    config_toml: &'a str,
}

/// What [`run`] produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub result: ExperimentResult,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.result.all_passed()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Executes the experiment and writes the three artifacts into `out_dir`
/// (or the configured directory).
pub fn run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let exp = cfg.experiment_config()?;
    let result = run_experiment(&exp)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&dir)?;

    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    fs::write(dir.join("results.csv"), csv)?;

    let summary = Summary {
        schema: SCHEMA,
        experiment: cfg.experiment.as_str(),
        seed: cfg.seed,
        all_passed: result.all_passed(),
        first_failure: result.first_failure().map(|f| f.name.as_str()),
        config: cfg,
        result: &result,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;

    let toml_text = cfg.to_toml()?;
    let prov = Provenance {
        schema: SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_sha256: sha256_hex(toml_text.as_bytes()),
        config_toml: &toml_text,
    };
    let json = serde_json::to_string_pretty(&prov).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("provenance.json"), json + "\n")?;

    Ok(RunOutcome { result, out_dir: dir })
}

/// Parameters used when a registry example is checked without a config.
pub fn default_example_params(id: ExampleId) -> ExampleParams {
    match id {
        ExampleId::Sbm => ExampleParams::sbm(1, 1.0, 0.5),
        ExampleId::SbmDrift => ExampleParams::sbm_with_c(1, 1.0, 1.0, 0.5),
        ExampleId::SbmOutward => ExampleParams::sbm_with_c(1, 1.0, 0.5, 0.5),
        ExampleId::SouInward => ExampleParams::sou(1, 1.0, 0.5, 0.5),
        ExampleId::SouOutward => ExampleParams::sou(1, 2.0, 0.5, 0.5),
    }
}

/// One line of the `check-fields` report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldCheck {
    pub model: &'static str,
    pub field: &'static str,
    pub descriptor: String,
    pub deviation: f64,
    pub passed: bool,
}

/// Finite-difference checks of `h`, `β`, `α` and the transformed `β`, plus
/// the harmonic residual `(L + β − λ)h / h`, on a grid of `|x| ≤ 3`.
pub fn check_fields(model: &ExampleModel, tol: f64) -> Vec<FieldCheck> {
    let d = model.dim();
    let pts: Vec<Vec<f64>> = (0..25)
        .map(|i| {
            let v = -3.0 + 0.25 * i as f64;
            (0..d).map(|k| if k == 0 { v } else { 0.5 * v }).collect()
        })
        .collect();
    let a = &model.base.diffusion;
    let id = model.id.as_str();
    let mut out = Vec::new();
    for (name, f) in [
        ("h", &model.transform.h),
        ("beta", &model.base.beta),
        ("alpha", &model.base.alpha),
        ("transformed_alpha", &model.transformed.alpha),
    ] {
        let r = fd_check(f, a, &pts, tol);
        out.push(FieldCheck {
            model: id,
            field: name,
            descriptor: f.descriptor(),
            deviation: r.max_grad_deviation.max(r.max_hess_trace_deviation),
            passed: r.passed(),
        });
    }
    let res = pts
        .iter()
        .map(|x| transform_residual(&model.base, &model.transform, x))
        .fold(0.0, f64::max);
    out.push(FieldCheck {
        model: id,
        field: "harmonic_residual",
        descriptor: format!("lambda = {}", model.lambda_c()),
        deviation: res,
        passed: res <= 1e-9,
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "experiment = \"lln\"\n[model]\nid = \"sbm\"\nbeta = 1.0\n";

    #[test]
    fn defaults_are_filled() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.simulation.n, 200);
        assert_eq!(cfg.simulation.replicates, 200);
        assert_eq!(cfg.simulation.dt_max, 0.01);
        assert_eq!(cfg.initial.atoms, vec![Atom { position: vec![0.0], mass: 1.0 }]);
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let err = RunConfig::from_toml("experiment = \"lln\"\n[model]\nid = \"sbm\"\nbeta = 1.0\nbogus = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 5"), "{msg}");
    }

    #[test]
    fn supercritical_speed_rejected() {
        let text = "experiment = \"moving_window\"\n[model]\nid = \"sbm_drift\"\nbeta = 1.0\nc = 1.5\n[observables]\nspeed = 1.5\n";
        let msg = RunConfig::from_toml(text).unwrap_err().to_string();
        assert!(msg.contains("c < sqrt(2*beta)"), "{msg}");
    }

    #[test]
    fn zero_alpha_rejected() {
        let text = "experiment = \"martingale\"\n[model]\nid = \"sbm\"\nbeta = 1.0\nalpha = 0.0\n";
        let msg = RunConfig::from_toml(text).unwrap_err().to_string();
        assert!(msg.contains("alpha must be positive"), "{msg}");
    }

    #[test]
    fn decreasing_times_rejected() {
        let text = format!("{MINIMAL}[simulation]\ntimes = [2.0, 1.0]\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

//! Pre-derived example models.
//!
//! Each entry pairs a base superdiffusion with an `(h, λ)` satisfying
//! `(L + β − λ)h = 0` exactly, so that `W̄_t = e^{−λt}⟨X_t, h⟩` is a
//! martingale and the transformed model has zero mass creation.
//!
//! | id            | base motion        | β                          | h                 | λ            |
//! |---------------|--------------------|----------------------------|-------------------|--------------|
//! | `sbm`         | `½Δ`               | `β`                        | `1`               | `β`          |
//! | `sbm_drift`   | `½Δ`               | `β`                        | `e^{c x₁}`        | `β + c²/2`   |
//! | `sbm_outward` | `½Δ`               | `β + c²/2 − ½Δh/h`         | `e^{c√(|x|²+1)}`  | `β + c²/2`   |
//! | `sou_inward`  | `½Δ − 2cx·∇`       | `K + 2c²|x|²`              | `e^{c|x|²}`       | `K + cd`     |
//! | `sou_outward` | `½Δ + 2cx·∇`       | `K + 2c²|x|²`              | `e^{−c|x|²}`      | `K − cd`     |
//!
//! The two Ornstein–Uhlenbeck models are built as spatial transforms of
//! super-Brownian motion with `h₀ = e^{∓c|x|²}`, and `h = 1/h₀` maps them back.

use serde::{Deserialize, Serialize};

use super::{h_transform, spatial_h_transform, Domain, HTransformSpec, RDensity, ScalingTriple, SuperdiffusionSpec};
use crate::error::{Error, Result};
use crate::fields::{make_constant, make_gaussian_quadratic, DiffusionMatrix, FieldKind, ScalarField, VectorField};
use crate::semigroups::KernelId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleId {
    Sbm,
    SbmDrift,
    SbmOutward,
    SouInward,
    SouOutward,
}

impl ExampleId {
    pub const ALL: [ExampleId; 5] = [
        ExampleId::Sbm,
        ExampleId::SbmDrift,
        ExampleId::SbmOutward,
        ExampleId::SouInward,
        ExampleId::SouOutward,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleId::Sbm => "sbm",
            ExampleId::SbmDrift => "sbm_drift",
            ExampleId::SbmOutward => "sbm_outward",
            ExampleId::SouInward => "sou_inward",
            ExampleId::SouOutward => "sou_outward",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ExampleId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownExample(s.to_string()))
    }
}

fn default_dim() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    0.5
}

/// Parameters of a registry example. `beta` is used by the super-Brownian
/// family, `k` by the Ornstein–Uhlenbeck family; `alpha` scales the intensity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Margin in the spread radius `z_t = (√(2β) + ε)t`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        ExampleParams {
            dim: 1,
            beta: None,
            k: None,
            c: None,
            alpha: default_alpha(),
            epsilon: default_epsilon(),
        }
    }
}

impl ExampleParams {
    pub fn sbm(dim: usize, beta: f64, alpha: f64) -> Self {
        ExampleParams {
            dim,
            beta: Some(beta),
            alpha,
            ..Default::default()
        }
    }

    pub fn sbm_with_c(dim: usize, beta: f64, c: f64, alpha: f64) -> Self {
        ExampleParams {
            c: Some(c),
            ..Self::sbm(dim, beta, alpha)
        }
    }

    pub fn sou(dim: usize, k: f64, c: f64, alpha: f64) -> Self {
        ExampleParams {
            dim,
            k: Some(k),
            c: Some(c),
            alpha,
            ..Default::default()
        }
    }
}

/// A fully wired registry model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleModel {
    pub id: ExampleId,
    pub params: ExampleParams,
    pub base: SuperdiffusionSpec,
    pub transform: HTransformSpec,
    /// `h_transform(base, transform)`.
    pub transformed: SuperdiffusionSpec,
    pub scaling: ScalingTriple,
    /// Exact Gaussian kernel of the transformed motion, when one exists.
    pub kernel: Option<KernelId>,
}

impl ExampleModel {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn lambda_c(&self) -> f64 {
        self.transform.lambda_c
    }

    /// Spatially constant `β`, when the base mass creation is constant.
    pub fn constant_beta(&self) -> Option<f64> {
        match self.base.beta.kind() {
            FieldKind::Constant(b) => Some(*b),
            _ => None,
        }
    }

    /// Rejects a moving-window speed `c` unless `c < √(2β)` and
    /// `α(x)·e^{c x₁}` is bounded.
    pub fn check_moving_window(&self, c: f64) -> Result<()> {
        let beta = self.constant_beta().ok_or_else(|| {
            Error::Constraint("moving-window experiments need a constant beta".into())
        })?;
        if !(c >= 0.0) {
            return Err(Error::Constraint(format!("moving speed must be nonnegative, got {c}")));
        }
        if !(c < (2.0 * beta).sqrt()) {
            return Err(Error::Constraint(format!(
                "c < sqrt(2*beta) violated: c = {c}, beta = {beta}"
            )));
        }
        let d = self.dim();
        let tilt = ScalarField::new(
            d,
            FieldKind::ExpLinear {
                scale: 1.0,
                c,
                axis: 0,
            },
        );
        let weighted = self.base.alpha.mul(&tilt);
        if !matches!(weighted.kind(), FieldKind::Constant(_)) {
            return Err(Error::Constraint(format!(
                "alpha(x)·exp(c·x_1) must be bounded for c = {c}; alpha = {}",
                self.base.alpha.descriptor()
            )));
        }
        Ok(())
    }
}

/// One row of the registry listing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleInfo {
    pub id: &'static str,
    pub title: &'static str,
    pub example: u8,
    pub constraints: &'static str,
    pub lambda_formula: &'static str,
    pub alpha_growth: &'static str,
    pub transformed_motion: &'static str,
}

pub fn list_examples() -> Vec<ExampleInfo> {
    vec![
        ExampleInfo {
            id: "sbm",
            title: "supercritical super-Brownian motion",
            example: 1,
            constraints: "beta > 0 (beta = 0 allowed for critical runs), alpha > 0",
            lambda_formula: "lambda_c = beta",
            alpha_growth: "O(1)",
            transformed_motion: "Brownian motion",
        },
        ExampleInfo {
            id: "sbm_drift",
            title: "super-Brownian motion with drift",
            example: 2,
            constraints: "beta > 0, c >= 0, alpha > 0; moving window needs c < sqrt(2*beta)",
            lambda_formula: "lambda_c = beta + c^2/2",
            alpha_growth: "O(e^{c x_1})",
            transformed_motion: "Brownian motion with drift c e_1",
        },
        ExampleInfo {
            id: "sbm_outward",
            title: "super-Brownian motion with outward drift",
            example: 3,
            constraints: "beta > 0, c > 0, alpha > 0",
            lambda_formula: "lambda_c = beta + c^2/2",
            alpha_growth: "O(e^{c|x|})",
            transformed_motion: "Brownian motion with drift c x/sqrt(|x|^2+1)",
        },
        ExampleInfo {
            id: "sou_inward",
            title: "supercritical super-Ornstein-Uhlenbeck process",
            example: 4,
            constraints: "c > 0, K > -c*d, alpha > 0",
            lambda_formula: "lambda_c = K + c*d",
            alpha_growth: "O(e^{-c|x|^2})",
            transformed_motion: "Brownian motion",
        },
        ExampleInfo {
            id: "sou_outward",
            title: "supercritical outward super-Ornstein-Uhlenbeck process",
            example: 5,
            constraints: "c > 0, K > c*d, alpha > 0",
            lambda_formula: "lambda_c = K - c*d",
            alpha_growth: "O(e^{c|x|^2})",
            transformed_motion: "Brownian motion",
        },
    ]
}

fn sample_points(dim: usize) -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    for i in 0..41 {
        let v = -5.0 + 0.25 * i as f64;
        let mut x = vec![0.0; dim];
        x[0] = v;
        pts.push(x.clone());
        let diag = vec![v / (dim as f64).sqrt(); dim];
        pts.push(diag);
    }
    pts
}

fn require(name: &str, value: Option<f64>) -> Result<f64> {
    match value {
        Some(v) if v.is_finite() => Ok(v),
        Some(v) => Err(Error::Constraint(format!("{name} must be finite, got {v}"))),
        None => Err(Error::Constraint(format!("parameter `{name}` is required"))),
    }
}

/// Builds the registry model `id` with the given parameters.
pub fn registry_example(id: ExampleId, params: &ExampleParams) -> Result<ExampleModel> {
    let d = params.dim;
    if d == 0 {
        return Err(Error::Constraint("dimension must be positive".into()));
    }
    if !(params.alpha > 0.0) || !params.alpha.is_finite() {
        return Err(Error::Constraint(format!(
            "alpha must be positive, got {}",
            params.alpha
        )));
    }
    if !(params.epsilon > 0.0) {
        return Err(Error::Constraint(format!(
            "epsilon must be positive, got {}",
            params.epsilon
        )));
    }
    let alpha0 = params.alpha;
    let pts = sample_points(d);
    let (base, transform, scaling, kernel) = match id {
        ExampleId::Sbm => {
            let beta = require("beta", params.beta)?;
            if beta < 0.0 {
                return Err(Error::Constraint(format!("beta must be >= 0, got {beta}")));
            }
            let base = SuperdiffusionSpec {
                label: "sbm".into(),
                ..SuperdiffusionSpec::super_brownian(d, beta, alpha0)
            };
            let tr = HTransformSpec::new(make_constant(d, 1.0), beta);
            let scaling = brownian_scaling(d, 0.0, beta, params.epsilon, RDensity::Lebesgue(1.0));
            (base, tr, scaling, Some(KernelId::Heat))
        }
        ExampleId::SbmDrift => {
            let beta = require("beta", params.beta)?;
            let c = require("c", params.c)?;
            if !(beta > 0.0) || c < 0.0 {
                return Err(Error::Constraint(format!(
                    "sbm_drift needs beta > 0 and c >= 0, got beta = {beta}, c = {c}"
                )));
            }
            let h = ScalarField::new(d, FieldKind::ExpLinear { scale: 1.0, c, axis: 0 });
            let alpha = ScalarField::new(
                d,
                FieldKind::ExpLinear {
                    scale: alpha0,
                    c: -c,
                    axis: 0,
                },
            )
            .mul(&make_constant(d, 1.0));
            let base = SuperdiffusionSpec {
                label: "sbm_drift".into(),
                alpha,
                ..SuperdiffusionSpec::super_brownian(d, beta, alpha0)
            };
            let tr = HTransformSpec::new(h.mul(&make_constant(d, 1.0)), beta + c * c / 2.0);
            let scaling = brownian_scaling(d, c * c / 2.0, beta, params.epsilon, RDensity::Lebesgue(1.0));
            let kernel = if c == 0.0 { KernelId::Heat } else { KernelId::HeatDrift { c } };
            (base, tr, scaling, Some(kernel))
        }
        ExampleId::SbmOutward => {
            let beta = require("beta", params.beta)?;
            let c = require("c", params.c)?;
            if !(beta > 0.0) || !(c > 0.0) {
                return Err(Error::Constraint(format!(
                    "sbm_outward needs beta > 0 and c > 0, got beta = {beta}, c = {c}"
                )));
            }
            let h = ScalarField::new(d, FieldKind::ExpNorm { scale: 1.0, c });
            let base = SuperdiffusionSpec {
                label: "sbm_outward".into(),
                diffusion: DiffusionMatrix::identity(d),
                drift: VectorField::zero(d),
                beta: ScalarField::new(d, FieldKind::ExpNormCreation { beta, c }),
                alpha: ScalarField::new(d, FieldKind::ExpNorm { scale: alpha0, c: -c }),
                domain: Domain::Whole,
                beta_upper_bound: Some(beta + c * c / 2.0),
                transformed_by: None,
            };
            let tr = HTransformSpec::new(h, beta + c * c / 2.0);
            let scaling = brownian_scaling(d, c * c / 2.0, beta, params.epsilon, RDensity::Lebesgue(1.0));
            (base, tr, scaling, None)
        }
        ExampleId::SouInward | ExampleId::SouOutward => {
            let k = require("k", params.k)?;
            let c = require("c", params.c)?;
            let inward = id == ExampleId::SouInward;
            let cd = c * d as f64;
            if !(c > 0.0) {
                return Err(Error::Constraint(format!("c must be positive, got {c}")));
            }
            if inward && !(k > -cd) {
                return Err(Error::Constraint(format!("sou_inward needs K > -c*d, got K = {k}, c*d = {cd}")));
            }
            if !inward && !(k > cd) {
                return Err(Error::Constraint(format!("sou_outward needs K > c*d, got K = {k}, c*d = {cd}")));
            }
            // h0 = e^{∓c|x|²} turns SBM(β0) into the SOU model; h = 1/h0 undoes it.
            let (sign, beta0, lambda) = if inward { (-1.0, k + cd, k + cd) } else { (1.0, k - cd, k - cd) };
            let sbm = SuperdiffusionSpec::super_brownian(d, beta0, alpha0);
            let h0 = make_gaussian_quadratic(d, c, sign)?;
            let mut base = spatial_h_transform(&sbm, &h0, &pts)?;
            base.label = id.as_str().into();
            let h = make_gaussian_quadratic(d, c, -sign)?;
            let tr = HTransformSpec::new(h.clone(), lambda);
            let r = RDensity::Density(make_gaussian_quadratic(d, c, sign)?);
            let scaling = brownian_scaling(d, 0.0, lambda.max(0.0), params.epsilon, r);
            (base, tr, scaling, Some(KernelId::Heat))
        }
    };
    let transformed = h_transform(&base, &transform, &pts)?;
    Ok(ExampleModel {
        id,
        params: params.clone(),
        base,
        transform,
        transformed,
        scaling,
        kernel,
    })
}

fn brownian_scaling(dim: usize, growth: f64, beta: f64, epsilon: f64, r: RDensity) -> ScalingTriple {
    ScalingTriple {
        dim,
        growth,
        speed: (2.0 * beta).sqrt() + epsilon,
        zhat_power: 3.0,
        r,
    }
}

/// The registry's `λ` for `id` with the given parameters.
pub fn lambda_c_closed_form(id: ExampleId, params: &ExampleParams) -> Result<f64> {
    Ok(registry_example(id, params)?.lambda_c())
}

//! Superdiffusion models, the H-transform and the example registry.

mod eigenvalue;
mod registry;
mod scaling;

pub use eigenvalue::{estimate_lambda_c, LambdaEstimate, LambdaEstimatorConfig};
pub use registry::{
    lambda_c_closed_form, list_examples, registry_example, ExampleId, ExampleInfo, ExampleModel,
    ExampleParams,
};
pub use scaling::{RDensity, ScalingTriple};

use crate::error::{Error, Result};
use crate::fields::{DiffusionMatrix, FieldKind, ScalarField, VectorField};

/// Spatial domain `D`: all of `ℝ^d`, or an open box whose complement kills.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Whole,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Domain {
    /// Symmetric box `(-r, r)^d`.
    pub fn centered_box(dim: usize, r: f64) -> Self {
        Domain::Box {
            lower: vec![-r; dim],
            upper: vec![r; dim],
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Whole => x.iter().all(|v| v.is_finite()),
            Domain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v > *lo && *v < *hi),
        }
    }
}

/// The pair `(h, λ)` defining `H(x, t) = e^{−λt} h(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HTransformSpec {
    pub h: ScalarField,
    pub lambda_c: f64,
}

impl HTransformSpec {
    pub fn new(h: ScalarField, lambda_c: f64) -> Self {
        HTransformSpec { h, lambda_c }
    }

    /// `h ≡ 1`, `λ = 0`: leaves every functional unchanged.
    pub fn identity(dim: usize) -> Self {
        HTransformSpec {
            h: crate::fields::make_constant(dim, 1.0),
            lambda_c: 0.0,
        }
    }

    /// Deterministic time weight `e^{−λt}`.
    #[inline]
    pub fn time_weight(&self, t: f64) -> f64 {
        (-self.lambda_c * t).exp()
    }

    /// `H(x, t)`.
    #[inline]
    pub fn weight(&self, x: &[f64], t: f64) -> f64 {
        self.time_weight(t) * self.h.eval(x)
    }
}

/// An `(L, β, α; D)`-superdiffusion with `L = ½∇·a∇ + b·∇`.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperdiffusionSpec {
    pub label: String,
    pub diffusion: DiffusionMatrix,
    pub drift: VectorField,
    pub beta: ScalarField,
    pub alpha: ScalarField,
    pub domain: Domain,
    /// Declared upper bound for `β`, checked by sampling.
    pub beta_upper_bound: Option<f64>,
    /// Set on specs produced by [`h_transform`]; the simulator then applies
    /// the carried time weight.
    pub transformed_by: Option<HTransformSpec>,
}

impl SuperdiffusionSpec {
    /// Brownian motion with constant mass creation and intensity on `ℝ^d`.
    pub fn super_brownian(dim: usize, beta: f64, alpha: f64) -> Self {
        SuperdiffusionSpec {
            label: format!("sbm(d={dim},beta={beta},alpha={alpha})"),
            diffusion: DiffusionMatrix::identity(dim),
            drift: VectorField::zero(dim),
            beta: crate::fields::make_constant(dim, beta),
            alpha: crate::fields::make_constant(dim, alpha),
            domain: Domain::Whole,
            beta_upper_bound: Some(beta),
            transformed_by: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.diffusion.dim()
    }

    /// `(Lu)(x) = ½ Σ a_ij ∂_ij u + b·∇u`.
    pub fn generator(&self, u: &ScalarField, x: &[f64]) -> f64 {
        let b = self.drift.eval(x);
        let g = u.grad(x);
        0.5 * u.hess_trace_a(x, &self.diffusion) + b.iter().zip(&g).map(|(p, q)| p * q).sum::<f64>()
    }

    /// Spatially constant `(β, α)` with Brownian-type motion, if applicable.
    pub fn constant_branching(&self) -> Option<(f64, f64)> {
        match (self.beta.kind(), self.alpha.kind()) {
            (FieldKind::Constant(b), FieldKind::Constant(a)) => Some((*b, *a)),
            _ => None,
        }
    }

    /// Checks `α > 0` and `β ≤ bound` on the sampled points.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<()> {
        for x in points {
            if x.len() != self.dim() {
                return Err(Error::Dimension {
                    expected: self.dim(),
                    got: x.len(),
                });
            }
            let a = self.alpha.eval(x);
            if !(a > 0.0) {
                return Err(Error::NonPositiveAlpha {
                    value: a,
                    point: x.clone(),
                });
            }
            if let Some(bound) = self.beta_upper_bound {
                let b = self.beta.eval(x);
                if b > bound * (1.0 + 1e-12) + 1e-12 {
                    return Err(Error::BetaAboveBound {
                        bound,
                        value: b,
                        point: x.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_positive_h(h: &ScalarField, points: &[Vec<f64>]) -> Result<()> {
    for x in points {
        let v = h.eval(x);
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveH {
                value: v,
                point: x.clone(),
            });
        }
    }
    Ok(())
}

/// The H-transformed model: drift `b + a∇h/h`, `β ≡ 0`, intensity `αh`.
///
/// The time factor `e^{−λt}` of the transformed intensity is not part of the
/// returned spec; the simulator realises `X^H_t = e^{−λt} h·X_t` by reweighting
/// base-process paths, so the spec only carries `(h, λ)`.
pub fn h_transform(
    spec: &SuperdiffusionSpec,
    tr: &HTransformSpec,
    sample_points: &[Vec<f64>],
) -> Result<SuperdiffusionSpec> {
    if !tr.lambda_c.is_finite() {
        return Err(Error::InvalidArgument("lambda_c must be finite".into()));
    }
    if tr.h.dim() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: tr.h.dim(),
        });
    }
    check_positive_h(&tr.h, sample_points)?;
    Ok(SuperdiffusionSpec {
        label: format!("{}^H[{};{}]", spec.label, tr.h.descriptor(), tr.lambda_c),
        diffusion: spec.diffusion.clone(),
        drift: spec.drift.with_log_gradient(&spec.diffusion, &tr.h),
        beta: crate::fields::make_constant(spec.dim(), 0.0),
        alpha: spec.alpha.mul(&tr.h),
        domain: spec.domain.clone(),
        beta_upper_bound: Some(0.0),
        transformed_by: Some(tr.clone()),
    })
}

/// Spatial `h`-transform (`H = h`, no time factor): drift `b + a∇h/h`,
/// mass creation `β + Lh/h`, intensity `αh`. Requires a closed form for `Lh/h`.
pub fn spatial_h_transform(
    spec: &SuperdiffusionSpec,
    h: &ScalarField,
    sample_points: &[Vec<f64>],
) -> Result<SuperdiffusionSpec> {
    check_positive_h(h, sample_points)?;
    let beta = inverse_beta_of_transform(spec, &HTransformSpec::new(h.clone(), 0.0))?;
    Ok(SuperdiffusionSpec {
        label: format!("{}^h[{}]", spec.label, h.descriptor()),
        diffusion: spec.diffusion.clone(),
        drift: spec.drift.with_log_gradient(&spec.diffusion, h),
        beta,
        alpha: spec.alpha.mul(h),
        domain: spec.domain.clone(),
        beta_upper_bound: None,
        transformed_by: None,
    })
}

/// `β + Lh/h − λ` as a closed-form field.
///
/// Closed forms exist when `a = sI`, the drift is affine with an isotropic
/// slope, `∇log h` is affine (constant, `explin`, `gaussquad` and products)
/// and `β` is constant or quadratic; everything else reports
/// [`Error::NoClosedForm`]. Use [`transform_residual`] for pointwise values.
pub fn inverse_beta_of_transform(spec: &SuperdiffusionSpec, tr: &HTransformSpec) -> Result<ScalarField> {
    let d = spec.dim();
    let s = spec
        .diffusion
        .as_scaled_identity()
        .ok_or_else(|| Error::NoClosedForm("diffusion matrix is not a multiple of I".into()))?;
    let (bo, bm) = spec
        .drift
        .as_affine()
        .ok_or_else(|| Error::NoClosedForm("drift is not affine".into()))?;
    let gamma = isotropic(d, bm).ok_or_else(|| Error::NoClosedForm("drift slope is not isotropic".into()))?;
    let (p, pm) = tr
        .h
        .log_gradient_affine()
        .ok_or_else(|| Error::NoClosedForm(format!("∇log h not affine for {}", tr.h.descriptor())))?;
    let kappa = isotropic(d, &pm).ok_or_else(|| Error::NoClosedForm("∇log h slope is not isotropic".into()))?;

    // ∇h/h = p + κx, so Hess h / h = κI + (p + κx)(p + κx)ᵀ and
    // Lh/h = ½s(dκ + |p + κx|²) + (o + γx)·(p + κx).
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let op: f64 = bo.iter().zip(&p).map(|(a, b)| a * b).sum();
    let mut k0 = 0.5 * s * (d as f64 * kappa + pp) + op - tr.lambda_c;
    let mut linear: Vec<f64> = (0..d)
        .map(|i| s * kappa * p[i] + kappa * bo[i] + gamma * p[i])
        .collect();
    let mut q = 0.5 * s * kappa * kappa + gamma * kappa;

    match spec.beta.kind() {
        FieldKind::Constant(b) => k0 += b,
        FieldKind::Quadratic {
            k,
            linear: l,
            q: qb,
        } => {
            k0 += k;
            for (li, lb) in linear.iter_mut().zip(l) {
                *li += lb;
            }
            q += qb;
        }
        _ => {
            return Err(Error::NoClosedForm(format!(
                "beta `{}` is neither constant nor quadratic",
                spec.beta.descriptor()
            )))
        }
    }
    let clean = |v: f64| if v.abs() < 1e-14 { 0.0 } else { v };
    k0 = clean(k0);
    q = clean(q);
    for l in linear.iter_mut() {
        *l = clean(*l);
    }
    if q == 0.0 && linear.iter().all(|l| *l == 0.0) {
        return Ok(crate::fields::make_constant(d, k0));
    }
    Ok(ScalarField::new(d, FieldKind::Quadratic { k: k0, linear, q }))
}

fn isotropic(d: usize, m: &[f64]) -> Option<f64> {
    let g = m[0];
    for i in 0..d {
        for j in 0..d {
            let expect = if i == j { g } else { 0.0 };
            if m[i * d + j] != expect {
                return None;
            }
        }
    }
    Some(g)
}

/// `|(L + β − λ)h|(x) / h(x)`, assembled from analytic derivatives.
pub fn transform_residual(spec: &SuperdiffusionSpec, tr: &HTransformSpec, x: &[f64]) -> f64 {
    let hv = tr.h.eval(x);
    ((spec.generator(&tr.h, x) + (spec.beta.eval(x) - tr.lambda_c) * hv) / hv).abs()
}

/// `h^{-1}(L + β − λ)(hu)` at `x`, differentiating the product `hu` analytically.
pub fn conjugated_operator(spec: &SuperdiffusionSpec, tr: &HTransformSpec, u: &ScalarField, x: &[f64]) -> f64 {
    let hu = tr.h.mul(u);
    let hv = tr.h.eval(x);
    (spec.generator(&hu, x) + (spec.beta.eval(x) - tr.lambda_c) * hu.eval(x)) / hv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_exp_linear, make_gaussian_quadratic};

    fn grid(d: usize) -> Vec<Vec<f64>> {
        (0..25).map(|i| vec![-3.0 + 0.25 * i as f64; d]).collect()
    }

    #[test]
    fn sbm_constant_h() {
        let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let tr = HTransformSpec::new(crate::fields::make_constant(1, 1.0), 1.0);
        let t = h_transform(&sbm, &tr, &grid(1)).unwrap();
        assert!(t.drift.is_zero());
        assert_eq!(t.beta, crate::fields::make_constant(1, 0.0));
        assert_eq!(t.alpha, crate::fields::make_constant(1, 0.5));
        assert!(t.transformed_by.is_some());
    }

    #[test]
    fn exp_linear_gives_unit_drift() {
        let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let tr = HTransformSpec::new(make_exp_linear(1, 1.0, 0).unwrap(), 1.5);
        let t = h_transform(&sbm, &tr, &grid(1)).unwrap();
        for x in [-2.0, 0.0, 3.0] {
            assert_eq!(t.drift.eval(&[x]), vec![1.0]);
        }
    }

    #[test]
    fn gaussian_h_gives_ou_drift() {
        let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let tr = HTransformSpec::new(make_gaussian_quadratic(1, 0.5, -1.0).unwrap(), 0.0);
        let t = h_transform(&sbm, &tr, &grid(1)).unwrap();
        assert_eq!(t.drift, VectorField::linear(1, -1.0));
    }

    #[test]
    fn rejects_non_positive_h() {
        let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let tr = HTransformSpec::new(ScalarField::from_descriptor("sin:1:0:0", 1).unwrap(), 0.0);
        match h_transform(&sbm, &tr, &grid(1)) {
            Err(Error::NonPositiveH { point, .. }) => assert_eq!(point.len(), 1),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn inverse_beta_constant_h() {
        let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let tr = HTransformSpec::new(crate::fields::make_constant(1, 1.0), 0.25);
        let b = inverse_beta_of_transform(&sbm, &tr).unwrap();
        assert_eq!(b, crate::fields::make_constant(1, 0.75));
    }

    #[test]
    fn inverse_beta_exp_linear_vanishes_at_three_halves() {
        let sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let h = make_exp_linear(1, 1.0, 0).unwrap();
        let b = inverse_beta_of_transform(&sbm, &HTransformSpec::new(h.clone(), 1.2)).unwrap();
        assert_eq!(b, crate::fields::make_constant(1, 1.5 - 1.2));
        let b = inverse_beta_of_transform(&sbm, &HTransformSpec::new(h, 1.5)).unwrap();
        assert_eq!(b, crate::fields::make_constant(1, 0.0));
    }

    #[test]
    fn inverse_beta_builds_ou_mass_creation() {
        // Spatial transform of SBM(β = K + c) by exp(−cx²) has β = K + 2c²x².
        let (k, c) = (1.0, 0.5);
        let sbm = SuperdiffusionSpec::super_brownian(1, k + c, 0.5);
        let h = make_gaussian_quadratic(1, c, -1.0).unwrap();
        let b = inverse_beta_of_transform(&sbm, &HTransformSpec::new(h, 0.0)).unwrap();
        assert_eq!(b, crate::fields::make_quadratic(1, k, 2.0 * c * c));
    }

    #[test]
    fn inverse_beta_matches_pointwise_residual() {
        let sou = SuperdiffusionSpec {
            drift: VectorField::linear(2, -0.8),
            beta: crate::fields::make_quadratic(2, 0.3, 0.7),
            ..SuperdiffusionSpec::super_brownian(2, 1.0, 1.0)
        };
        let h = ScalarField::from_descriptor("mul(gaussquad:0.4:1;explin:0.3:1)", 2).unwrap();
        let tr = HTransformSpec::new(h, 0.9);
        let closed = inverse_beta_of_transform(&sou, &tr).unwrap();
        for x in [[0.0, 0.0], [1.0, -0.5], [-2.0, 1.5]] {
            let direct = transform_residual(&sou, &tr, &x);
            assert!((closed.eval(&x).abs() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn validate_checks_alpha_and_beta_bound() {
        let mut sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        assert!(sbm.validate(&grid(1)).is_ok());
        sbm.alpha = crate::fields::make_constant(1, 0.0);
        assert!(matches!(sbm.validate(&grid(1)), Err(Error::NonPositiveAlpha { .. })));
        let mut sbm = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        sbm.beta = crate::fields::make_quadratic(1, 1.0, 1.0);
        assert!(matches!(sbm.validate(&grid(1)), Err(Error::BetaAboveBound { .. })));
    }

    #[test]
    fn box_domain_contains() {
        let d = Domain::centered_box(2, 1.0);
        assert!(d.contains(&[0.5, -0.5]));
        assert!(!d.contains(&[1.0, 0.0]));
        assert!(Domain::Whole.contains(&[1e300]));
        assert!(!Domain::Whole.contains(&[f64::NAN]));
    }
}

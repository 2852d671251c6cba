//! Smooth coefficient fields with analytic derivatives.
//!
//! Every [`ScalarField`] knows its value, gradient and Hessian in closed form,
//! which is what the H-transform machinery needs to assemble `Lh/h` and
//! `a∇h/h` without numerical differentiation. Finite differences only appear in
//! [`fd_check`], where they act as an independent oracle.
//!
//! Fields are addressed by descriptor strings so that configuration files can
//! name them:
//!
//! | descriptor              | field                                        |
//! |-------------------------|----------------------------------------------|
//! | `const:v`               | `v`                                          |
//! | `explin:c:axis[:s]`     | `s·exp(c·x_axis)`                            |
//! | `gaussquad:c:sign[:s]`  | `s·exp(sign·c·|x|²)`                         |
//! | `expnorm:c[:s]`         | `s·exp(c·sqrt(|x|²+1))`                      |
//! | `quad:k:q[:l1,..,ld]`   | `k + l·x + q·|x|²`                           |
//! | `expnormbeta:b:c`       | `b + c²/2 − ½Δh/h` for `h = expnorm:c`       |
//! | `bump:r:height`         | `height·Π exp(1 − 1/(1 − (x_i/r)²))`         |
//! | `sin:omega:phase:axis`  | `sin(omega·x_axis + phase)`                  |
//! | `mul(A;B)`              | pointwise product of two descriptors         |

use crate::error::{Error, Result};

/// Kind of a scalar field together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind {
    Constant(f64),
    ExpLinear { scale: f64, c: f64, axis: usize },
    /// `scale·exp(k|x|²)`, `k` signed.
    GaussQuadratic { scale: f64, k: f64 },
    ExpNorm { scale: f64, c: f64 },
    Quadratic { k: f64, linear: Vec<f64>, q: f64 },
    ExpNormCreation { beta: f64, c: f64 },
    Bump { radius: f64, height: f64 },
    Sine { omega: f64, phase: f64, axis: usize },
    Product(Box<ScalarField>, Box<ScalarField>),
}

/// A smooth function `ℝ^d → ℝ` with analytic first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    dim: usize,
    kind: FieldKind,
}

/// Constant field `value` on `ℝ^d`.
pub fn make_constant(dim: usize, value: f64) -> ScalarField {
    ScalarField::new(dim, FieldKind::Constant(value))
}

/// `h(x) = exp(c·x_axis)`.
pub fn make_exp_linear(dim: usize, c: f64, axis: usize) -> Result<ScalarField> {
    if axis >= dim {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for dimension {dim}"
        )));
    }
    Ok(ScalarField::new(
        dim,
        FieldKind::ExpLinear {
            scale: 1.0,
            c,
            axis,
        },
    ))
}

/// `h(x) = exp(sign·c·|x|²)` with `c > 0`.
pub fn make_gaussian_quadratic(dim: usize, c: f64, sign: f64) -> Result<ScalarField> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::InvalidArgument(format!("sign must be ±1, got {sign}")));
    }
    Ok(ScalarField::new(
        dim,
        FieldKind::GaussQuadratic {
            scale: 1.0,
            k: sign * c,
        },
    ))
}

/// Smooth stand-in for `exp(c|x|)`: `exp(c·sqrt(|x|²+1))`.
pub fn make_exp_norm(dim: usize, c: f64) -> ScalarField {
    ScalarField::new(dim, FieldKind::ExpNorm { scale: 1.0, c })
}

/// `k + q|x|²`.
pub fn make_quadratic(dim: usize, k: f64, q: f64) -> ScalarField {
    ScalarField::new(
        dim,
        FieldKind::Quadratic {
            k,
            linear: vec![0.0; dim],
            q,
        },
    )
}

/// Smooth compactly supported bump on `[-radius, radius]^d` peaking at `height`.
pub fn make_bump(dim: usize, radius: f64, height: f64) -> Result<ScalarField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bump radius must be positive, got {radius}"
        )));
    }
    Ok(ScalarField::new(dim, FieldKind::Bump { radius, height }))
}

#[inline]
fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// One-dimensional bump profile `exp(1 − 1/(1−u²))` and its first two derivatives.
#[inline]
fn bump_profile(u: f64) -> (f64, f64, f64) {
    let w = 1.0 - u * u;
    if w <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let p = (1.0 - 1.0 / w).exp();
    let g = -2.0 * u / (w * w);
    let g1 = -(2.0 + 6.0 * u * u) / (w * w * w);
    (p, p * g, p * (g * g + g1))
}

impl ScalarField {
    pub fn new(dim: usize, kind: FieldKind) -> Self {
        assert!(dim >= 1, "field dimension must be positive");
        ScalarField { dim, kind }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    /// Value of a radially symmetric kind as a function of `ρ = |x|²`,
    /// with first and second `ρ`-derivatives.
    fn radial(&self, rho: f64) -> Option<(f64, f64, f64)> {
        match self.kind {
            FieldKind::GaussQuadratic { scale, k } => {
                let f = scale * (k * rho).exp();
                Some((f, k * f, k * k * f))
            }
            FieldKind::ExpNorm { scale, c } => {
                let phi = (rho + 1.0).sqrt();
                let f = scale * (c * phi).exp();
                let f1 = f * c / (2.0 * phi);
                let f2 = f * (c * c / (4.0 * phi * phi) - c / (4.0 * phi * phi * phi));
                Some((f, f1, f2))
            }
            FieldKind::ExpNormCreation { beta, c } => {
                let d = self.dim as f64;
                let phi = (rho + 1.0).sqrt();
                let ip = 1.0 / phi;
                let g = beta + 0.5 * c * c * ip * ip
                    - 0.5 * c * ((d - 1.0) * ip + ip * ip * ip);
                let g1 = -c * c * ip.powi(3) + 0.5 * c * ((d - 1.0) * ip * ip + 3.0 * ip.powi(4));
                let g2 = 3.0 * c * c * ip.powi(4) - c * (d - 1.0) * ip.powi(3) - 6.0 * c * ip.powi(5);
                let f1 = g1 / (2.0 * phi);
                let f2 = g2 / (4.0 * phi * phi) - g1 / (4.0 * phi * phi * phi);
                Some((g, f1, f2))
            }
            _ => None,
        }
    }

    /// Field value at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            FieldKind::Constant(v) => *v,
            FieldKind::ExpLinear { scale, c, axis } => scale * (c * x[*axis]).exp(),
            FieldKind::GaussQuadratic { scale, k } => scale * (k * norm_sq(x)).exp(),
            FieldKind::Quadratic { k, linear, q } => {
                let lin: f64 = linear.iter().zip(x).map(|(l, v)| l * v).sum();
                k + lin + q * norm_sq(x)
            }
            FieldKind::ExpNorm { .. } | FieldKind::ExpNormCreation { .. } => {
                self.radial(norm_sq(x)).map(|r| r.0).unwrap_or(f64::NAN)
            }
            FieldKind::Bump { radius, height } => {
                let mut v = *height;
                for xi in x {
                    let (p, _, _) = bump_profile(xi / radius);
                    if p == 0.0 {
                        return 0.0;
                    }
                    v *= p;
                }
                v
            }
            FieldKind::Sine { omega, phase, axis } => (omega * x[*axis] + phase).sin(),
            FieldKind::Product(a, b) => a.eval(x) * b.eval(x),
        }
    }

    /// Gradient at `x`.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut g = vec![0.0; d];
        match &self.kind {
            FieldKind::Constant(_) => {}
            FieldKind::ExpLinear { scale, c, axis } => {
                g[*axis] = c * scale * (c * x[*axis]).exp();
            }
            FieldKind::Quadratic { linear, q, .. } => {
                for i in 0..d {
                    g[i] = linear[i] + 2.0 * q * x[i];
                }
            }
            FieldKind::GaussQuadratic { .. }
            | FieldKind::ExpNorm { .. }
            | FieldKind::ExpNormCreation { .. } => {
                let (_, f1, _) = self.radial(norm_sq(x)).expect("radial kind");
                for i in 0..d {
                    g[i] = 2.0 * f1 * x[i];
                }
            }
            FieldKind::Bump { radius, height } => {
                let parts: Vec<_> = x.iter().map(|xi| bump_profile(xi / radius)).collect();
                for i in 0..d {
                    let mut v = *height;
                    for (j, p) in parts.iter().enumerate() {
                        v *= if i == j { p.1 / radius } else { p.0 };
                    }
                    g[i] = v;
                }
            }
            FieldKind::Sine { omega, phase, axis } => {
                g[*axis] = omega * (omega * x[*axis] + phase).cos();
            }
            FieldKind::Product(a, b) => {
                let (fa, fb) = (a.eval(x), b.eval(x));
                let (ga, gb) = (a.grad(x), b.grad(x));
                for i in 0..d {
                    g[i] = fa * gb[i] + fb * ga[i];
                }
            }
        }
        g
    }

    /// Hessian at `x`, row-major `d×d`.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        match &self.kind {
            FieldKind::Constant(_) => {}
            FieldKind::ExpLinear { scale, c, axis } => {
                h[axis * d + axis] = c * c * scale * (c * x[*axis]).exp();
            }
            FieldKind::Quadratic { q, .. } => {
                for i in 0..d {
                    h[i * d + i] = 2.0 * q;
                }
            }
            FieldKind::GaussQuadratic { .. }
            | FieldKind::ExpNorm { .. }
            | FieldKind::ExpNormCreation { .. } => {
                let (_, f1, f2) = self.radial(norm_sq(x)).expect("radial kind");
                for i in 0..d {
                    for j in 0..d {
                        let diag = if i == j { 2.0 * f1 } else { 0.0 };
                        h[i * d + j] = diag + 4.0 * f2 * x[i] * x[j];
                    }
                }
            }
            FieldKind::Bump { radius, height } => {
                let parts: Vec<_> = x.iter().map(|xi| bump_profile(xi / radius)).collect();
                for i in 0..d {
                    for j in 0..d {
                        let mut v = *height;
                        for (k, p) in parts.iter().enumerate() {
                            v *= if i == j && k == i {
                                p.2 / (radius * radius)
                            } else if k == i || k == j {
                                p.1 / radius
                            } else {
                                p.0
                            };
                        }
                        h[i * d + j] = v;
                    }
                }
            }
            FieldKind::Sine { omega, phase, axis } => {
                h[axis * d + axis] = -omega * omega * (omega * x[*axis] + phase).sin();
            }
            FieldKind::Product(a, b) => {
                let (fa, fb) = (a.eval(x), b.eval(x));
                let (ga, gb) = (a.grad(x), b.grad(x));
                let (ha, hb) = (a.hessian(x), b.hessian(x));
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] = fa * hb[i * d + j]
                            + fb * ha[i * d + j]
                            + ga[i] * gb[j]
                            + gb[i] * ga[j];
                    }
                }
            }
        }
        h
    }

    /// `Σ_ij a_ij ∂_i∂_j f`, i.e. `∇·a∇f` for a constant diffusion matrix.
    pub fn hess_trace_a(&self, x: &[f64], a: &DiffusionMatrix) -> f64 {
        let h = self.hessian(x);
        h.iter().zip(a.matrix()).map(|(hij, aij)| hij * aij).sum()
    }

    /// Half-width of a box containing the support, if compact.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.kind {
            FieldKind::Bump { radius, .. } => Some(*radius),
            FieldKind::Constant(v) if *v == 0.0 => Some(0.0),
            FieldKind::Product(a, b) => match (a.support_radius(), b.support_radius()) {
                (Some(ra), Some(rb)) => Some(ra.min(rb)),
                (Some(r), None) | (None, Some(r)) => Some(r),
                (None, None) => None,
            },
            _ => None,
        }
    }

    /// `∇ log f` when it is an affine map `offset + slope·x`
    /// (`slope` row-major `d×d`).
    pub fn log_gradient_affine(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim;
        let mut offset = vec![0.0; d];
        let mut slope = vec![0.0; d * d];
        match &self.kind {
            FieldKind::Constant(v) if *v > 0.0 => {}
            FieldKind::ExpLinear { scale, c, axis } if *scale > 0.0 => offset[*axis] = *c,
            FieldKind::GaussQuadratic { scale, k } if *scale > 0.0 => {
                for i in 0..d {
                    slope[i * d + i] = 2.0 * k;
                }
            }
            FieldKind::Product(a, b) => {
                let (oa, sa) = a.log_gradient_affine()?;
                let (ob, sb) = b.log_gradient_affine()?;
                for i in 0..d {
                    offset[i] = oa[i] + ob[i];
                }
                for i in 0..d * d {
                    slope[i] = sa[i] + sb[i];
                }
            }
            _ => return None,
        }
        Some((offset, slope))
    }

    /// Pointwise product, collapsing exponential families where possible.
    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        assert_eq!(self.dim, other.dim, "dimension mismatch in product");
        let d = self.dim;
        use FieldKind::*;
        let kind = match (&self.kind, &other.kind) {
            (Constant(a), Constant(b)) => Constant(a * b),
            (Constant(s), k) | (k, Constant(s)) => match k {
                ExpLinear { scale, c, axis } => ExpLinear {
                    scale: scale * s,
                    c: *c,
                    axis: *axis,
                },
                GaussQuadratic { scale, k } => GaussQuadratic {
                    scale: scale * s,
                    k: *k,
                },
                ExpNorm { scale, c } => ExpNorm {
                    scale: scale * s,
                    c: *c,
                },
                _ if *s == 1.0 => {
                    return if matches!(self.kind, Constant(_)) {
                        other.clone()
                    } else {
                        self.clone()
                    }
                }
                _ => Product(Box::new(self.clone()), Box::new(other.clone())),
            },
            (
                ExpLinear {
                    scale: s1,
                    c: c1,
                    axis: a1,
                },
                ExpLinear {
                    scale: s2,
                    c: c2,
                    axis: a2,
                },
            ) if a1 == a2 => ExpLinear {
                scale: s1 * s2,
                c: c1 + c2,
                axis: *a1,
            },
            (GaussQuadratic { scale: s1, k: k1 }, GaussQuadratic { scale: s2, k: k2 }) => {
                GaussQuadratic {
                    scale: s1 * s2,
                    k: k1 + k2,
                }
            }
            (ExpNorm { scale: s1, c: c1 }, ExpNorm { scale: s2, c: c2 }) => ExpNorm {
                scale: s1 * s2,
                c: c1 + c2,
            },
            _ => Product(Box::new(self.clone()), Box::new(other.clone())),
        };
        ScalarField::new(d, kind).collapse()
    }

    /// Replace degenerate exponentials (zero rate) by constants.
    fn collapse(self) -> ScalarField {
        let kind = match self.kind {
            FieldKind::ExpLinear { scale, c, .. } if c == 0.0 => FieldKind::Constant(scale),
            FieldKind::GaussQuadratic { scale, k } if k == 0.0 => FieldKind::Constant(scale),
            FieldKind::ExpNorm { scale, c } if c == 0.0 => FieldKind::Constant(scale),
            kind => kind,
        };
        ScalarField { dim: self.dim, kind }
    }

    /// Stable string identifier; see the module docs for the grammar.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            FieldKind::Constant(v) => format!("const:{v}"),
            FieldKind::ExpLinear { scale, c, axis } => {
                if *scale == 1.0 {
                    format!("explin:{c}:{axis}")
                } else {
                    format!("explin:{c}:{axis}:{scale}")
                }
            }
            FieldKind::GaussQuadratic { scale, k } => {
                let sign = if *k < 0.0 { -1 } else { 1 };
                let c = k.abs();
                if *scale == 1.0 {
                    format!("gaussquad:{c}:{sign}")
                } else {
                    format!("gaussquad:{c}:{sign}:{scale}")
                }
            }
            FieldKind::ExpNorm { scale, c } => {
                if *scale == 1.0 {
                    format!("expnorm:{c}")
                } else {
                    format!("expnorm:{c}:{scale}")
                }
            }
            FieldKind::Quadratic { k, linear, q } => {
                if linear.iter().all(|l| *l == 0.0) {
                    format!("quad:{k}:{q}")
                } else {
                    let l: Vec<String> = linear.iter().map(|v| v.to_string()).collect();
                    format!("quad:{k}:{q}:{}", l.join(","))
                }
            }
            FieldKind::ExpNormCreation { beta, c } => format!("expnormbeta:{beta}:{c}"),
            FieldKind::Bump { radius, height } => format!("bump:{radius}:{height}"),
            FieldKind::Sine { omega, phase, axis } => format!("sin:{omega}:{phase}:{axis}"),
            FieldKind::Product(a, b) => format!("mul({};{})", a.descriptor(), b.descriptor()),
        }
    }

    /// Resolve a descriptor on `ℝ^dim`.
    pub fn from_descriptor(descriptor: &str, dim: usize) -> Result<ScalarField> {
        let bad = |reason: &str| Error::Descriptor {
            descriptor: descriptor.to_string(),
            reason: reason.to_string(),
        };
        if dim == 0 {
            return Err(bad("dimension must be positive"));
        }
        let s = descriptor.trim();
        if let Some(inner) = s.strip_prefix("mul(").and_then(|r| r.strip_suffix(')')) {
            let mut depth = 0usize;
            let mut split = None;
            for (i, ch) in inner.char_indices() {
                match ch {
                    '(' => depth += 1,
                    ')' => depth = depth.checked_sub(1).ok_or_else(|| bad("unbalanced ')'"))?,
                    ';' if depth == 0 => {
                        split = Some(i);
                        break;
                    }
                    _ => {}
                }
            }
            let i = split.ok_or_else(|| bad("mul needs two ';'-separated factors"))?;
            let a = ScalarField::from_descriptor(&inner[..i], dim)?;
            let b = ScalarField::from_descriptor(&inner[i + 1..], dim)?;
            return Ok(ScalarField::new(dim, FieldKind::Product(Box::new(a), Box::new(b))));
        }

        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            let p = parts.get(i).ok_or_else(|| bad("missing parameter"))?;
            let v: f64 = p.parse().map_err(|_| bad(&format!("`{p}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("parameters must be finite"))
            }
        };
        let axis = |i: usize| -> Result<usize> {
            let p = parts.get(i).ok_or_else(|| bad("missing axis"))?;
            let a: usize = p.parse().map_err(|_| bad(&format!("`{p}` is not an axis")))?;
            if a < dim {
                Ok(a)
            } else {
                Err(bad("axis out of range"))
            }
        };
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if parts.len() < lo || parts.len() > hi {
                Err(bad("wrong number of parameters"))
            } else {
                Ok(())
            }
        };
        let optional = |i: usize, default: f64| -> Result<f64> {
            if parts.len() > i {
                num(i)
            } else {
                Ok(default)
            }
        };
        let kind = match parts[0] {
            "const" => {
                arity(2, 2)?;
                FieldKind::Constant(num(1)?)
            }
            "explin" => {
                arity(3, 4)?;
                FieldKind::ExpLinear {
                    c: num(1)?,
                    axis: axis(2)?,
                    scale: optional(3, 1.0)?,
                }
            }
            "gaussquad" => {
                arity(3, 4)?;
                let c = num(1)?;
                let sign = num(2)?;
                if !(c > 0.0) || (sign != 1.0 && sign != -1.0) {
                    return Err(bad("need c > 0 and sign ±1"));
                }
                FieldKind::GaussQuadratic {
                    k: sign * c,
                    scale: optional(3, 1.0)?,
                }
            }
            "expnorm" => {
                arity(2, 3)?;
                FieldKind::ExpNorm {
                    c: num(1)?,
                    scale: optional(2, 1.0)?,
                }
            }
            "quad" => {
                arity(3, 4)?;
                let linear = match parts.get(3) {
                    Some(l) => {
                        let v: std::result::Result<Vec<f64>, _> =
                            l.split(',').map(|t| t.parse::<f64>()).collect();
                        let v = v.map_err(|_| bad("bad linear coefficients"))?;
                        if v.len() != dim {
                            return Err(bad("linear part must have one entry per dimension"));
                        }
                        v
                    }
                    None => vec![0.0; dim],
                };
                FieldKind::Quadratic {
                    k: num(1)?,
                    q: num(2)?,
                    linear,
                }
            }
            "expnormbeta" => {
                arity(3, 3)?;
                FieldKind::ExpNormCreation {
                    beta: num(1)?,
                    c: num(2)?,
                }
            }
            "bump" => {
                arity(3, 3)?;
                let radius = num(1)?;
                if !(radius > 0.0) {
                    return Err(bad("bump radius must be positive"));
                }
                FieldKind::Bump {
                    radius,
                    height: num(2)?,
                }
            }
            "sin" => {
                arity(4, 4)?;
                FieldKind::Sine {
                    omega: num(1)?,
                    phase: num(2)?,
                    axis: axis(3)?,
                }
            }
            other => return Err(bad(&format!("unknown field kind `{other}`"))),
        };
        Ok(ScalarField::new(dim, kind))
    }
}

/// Constant symmetric positive-definite diffusion matrix `a` with its
/// lower-triangular square root.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionMatrix {
    dim: usize,
    a: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiffusionMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0).expect("identity is SPD")
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Result<Self> {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = s;
        }
        Self::new(dim, a)
    }

    /// Row-major `dim×dim` matrix; rejected unless symmetric positive definite.
    pub fn new(dim: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                got: a.len(),
            });
        }
        for i in 0..dim {
            for j in 0..i {
                let (x, y) = (a[i * dim + j], a[j * dim + i]);
                if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let sigma = cholesky(dim, &a).ok_or(Error::NotPositiveDefinite)?;
        Ok(DiffusionMatrix { dim, a, sigma })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    /// `a(x)`; the registry only uses constant matrices.
    pub fn eval(&self, _x: &[f64]) -> &[f64] {
        &self.a
    }

    /// Lower-triangular `σ` with `σσᵀ = a`.
    pub fn factor(&self, _x: &[f64]) -> &[f64] {
        &self.sigma
    }

    /// `Some(s)` when `a = s·I`.
    pub fn as_scaled_identity(&self) -> Option<f64> {
        let d = self.dim;
        let s = self.a[0];
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { s } else { 0.0 };
                if self.a[i * d + j] != expect {
                    return None;
                }
            }
        }
        Some(s)
    }

    /// `out = a·v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| (0..d).map(|j| self.a[i * d + j] * v[j]).sum())
            .collect()
    }
}

fn cholesky(d: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Drift kind: affine `offset + slope·x`, or a base drift corrected by `a∇log h`.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorKind {
    Affine { offset: Vec<f64>, slope: Vec<f64> },
    LogGradient {
        base: Box<VectorField>,
        a: DiffusionMatrix,
        h: ScalarField,
    },
}

/// A vector field `ℝ^d → ℝ^d` used as a drift.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    dim: usize,
    kind: VectorKind,
}

impl VectorField {
    pub fn zero(dim: usize) -> Self {
        Self::affine(dim, vec![0.0; dim], vec![0.0; dim * dim])
    }

    pub fn constant(offset: Vec<f64>) -> Self {
        let d = offset.len();
        Self::affine(d, offset, vec![0.0; d * d])
    }

    /// `b(x) = γx`.
    pub fn linear(dim: usize, gamma: f64) -> Self {
        let mut slope = vec![0.0; dim * dim];
        for i in 0..dim {
            slope[i * dim + i] = gamma;
        }
        Self::affine(dim, vec![0.0; dim], slope)
    }

    pub fn affine(dim: usize, offset: Vec<f64>, slope: Vec<f64>) -> Self {
        assert_eq!(offset.len(), dim);
        assert_eq!(slope.len(), dim * dim);
        VectorField {
            dim,
            kind: VectorKind::Affine { offset, slope },
        }
    }

    /// `b + a∇h/h`, simplified to an affine field whenever both parts are affine.
    pub fn with_log_gradient(&self, a: &DiffusionMatrix, h: &ScalarField) -> Self {
        let d = self.dim;
        if let (Some((bo, bs)), Some((ho, hs))) = (self.as_affine(), h.log_gradient_affine()) {
            let ao = a.apply(&ho);
            let am = a.matrix();
            let mut offset = bo.to_vec();
            let mut slope = bs.to_vec();
            for i in 0..d {
                offset[i] += ao[i];
                for j in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += am[i * d + k] * hs[k * d + j];
                    }
                    slope[i * d + j] += s;
                }
            }
            for v in offset.iter_mut().chain(slope.iter_mut()) {
                if v.abs() < 1e-15 {
                    *v = 0.0;
                }
            }
            return VectorField::affine(d, offset, slope);
        }
        VectorField {
            dim: d,
            kind: VectorKind::LogGradient {
                base: Box::new(self.clone()),
                a: a.clone(),
                h: h.clone(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &VectorKind {
        &self.kind
    }

    pub fn as_affine(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            VectorKind::Affine { offset, slope } => Some((offset, slope)),
            VectorKind::LogGradient { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.as_affine(), Some((o, s)) if o.iter().chain(s).all(|v| *v == 0.0))
    }

    /// Writes `b(x)` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            VectorKind::Affine { offset, slope } => {
                for i in 0..d {
                    let mut v = offset[i];
                    for j in 0..d {
                        v += slope[i * d + j] * x[j];
                    }
                    out[i] = v;
                }
            }
            VectorKind::LogGradient { base, a, h } => {
                base.eval_into(x, out);
                let hv = h.eval(x);
                let g: Vec<f64> = h.grad(x).into_iter().map(|gi| gi / hv).collect();
                let ag = a.apply(&g);
                for i in 0..d {
                    out[i] += ag[i];
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    pub fn descriptor(&self) -> String {
        match &self.kind {
            VectorKind::Affine { offset, slope } => {
                let o: Vec<String> = offset.iter().map(|v| v.to_string()).collect();
                let s: Vec<String> = slope.iter().map(|v| v.to_string()).collect();
                format!("affine:{}:{}", o.join(","), s.join(","))
            }
            VectorKind::LogGradient { base, h, .. } => {
                format!("loggrad({};{})", base.descriptor(), h.descriptor())
            }
        }
    }
}

/// Outcome of comparing analytic derivatives against finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_grad_deviation: f64,
    pub max_hess_trace_deviation: f64,
    /// Indices of points whose deviation exceeded the tolerance.
    pub failures: Vec<usize>,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Finite-difference step used by [`fd_check`].
pub const FD_STEP: f64 = 1e-4;

/// Compares `grad` and `hess_trace_a` (with the given `a`) against centred
/// finite differences at each point; deviations are relative to the analytic
/// value, floored at `1e-8`.
pub fn fd_check(
    field: &ScalarField,
    a: &DiffusionMatrix,
    points: &[Vec<f64>],
    tol: f64,
) -> FdReport {
    let d = field.dim();
    let step = FD_STEP;
    let am = a.matrix();
    let mut report = FdReport {
        max_grad_deviation: 0.0,
        max_hess_trace_deviation: 0.0,
        failures: Vec::new(),
        tol,
    };
    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(1e-8);
    for (idx, x) in points.iter().enumerate() {
        let grad = field.grad(x);
        let f0 = field.eval(x);
        let mut worst: f64 = 0.0;
        let mut shifted = x.clone();
        let at = |shifted: &mut Vec<f64>, moves: &[(usize, f64)]| {
            shifted.copy_from_slice(x);
            for (i, s) in moves {
                shifted[*i] += s;
            }
            field.eval(shifted)
        };
        for i in 0..d {
            let fp = at(&mut shifted, &[(i, step)]);
            let fm = at(&mut shifted, &[(i, -step)]);
            let dev = rel(grad[i], (fp - fm) / (2.0 * step));
            report.max_grad_deviation = report.max_grad_deviation.max(dev);
            worst = worst.max(dev);
        }
        let mut numeric = 0.0;
        for i in 0..d {
            for j in 0..d {
                let aij = am[i * d + j];
                if aij == 0.0 {
                    continue;
                }
                let hij = if i == j {
                    let fp = at(&mut shifted, &[(i, step)]);
                    let fm = at(&mut shifted, &[(i, -step)]);
                    (fp - 2.0 * f0 + fm) / (step * step)
                } else {
                    let fpp = at(&mut shifted, &[(i, step), (j, step)]);
                    let fpm = at(&mut shifted, &[(i, step), (j, -step)]);
                    let fmp = at(&mut shifted, &[(i, -step), (j, step)]);
                    let fmm = at(&mut shifted, &[(i, -step), (j, -step)]);
                    (fpp - fpm - fmp + fmm) / (4.0 * step * step)
                };
                numeric += aij * hij;
            }
        }
        let dev = rel(field.hess_trace_a(x, a), numeric);
        report.max_hess_trace_deviation = report.max_hess_trace_deviation.max(dev);
        worst = worst.max(dev);
        if !(worst <= tol) {
            report.failures.push(idx);
        }
    }
    report
}

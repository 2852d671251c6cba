//! Finite differences for the one-dimensional log-Laplace equation
//! `u_t = Lu + βu − αu²`, `u(·, 0) = g`, with zero Dirichlet data.
//!
//! Solutions on bounded intervals increase to the minimal nonnegative
//! solution on the line as the interval grows; [`domain_doubling_change`]
//! measures how far a given interval is from that limit.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::model::SuperdiffusionSpec;
use crate::sim::InitialMeasure;

/// Uniform grid on `[−half_width, half_width]` with time step `dt` up to `t_end`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid1D {
    pub half_width: f64,
    pub dx: f64,
    pub dt: f64,
    pub t_end: f64,
}

impl Grid1D {
    pub fn new(half_width: f64, dx: f64, dt: f64, t_end: f64) -> Self {
        Grid1D {
            half_width,
            dx,
            dt,
            t_end,
        }
    }

    pub fn nodes(&self) -> usize {
        (2.0 * self.half_width / self.dx).round() as usize + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    /// Same resolution on an interval twice as wide.
    pub fn doubled(&self) -> Self {
        Grid1D {
            half_width: 2.0 * self.half_width,
            ..self.clone()
        }
    }

    /// `dx` and `dt` halved.
    pub fn refined(&self) -> Self {
        Grid1D {
            dx: self.dx / 2.0,
            dt: self.dt / 2.0,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.half_width > 0.0 && self.dx > 0.0 && self.dt > 0.0 && self.t_end >= 0.0;
        if !ok || self.nodes() < 3 {
            return Err(Error::InvalidArgument(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Implicit diffusion and drift, explicit reaction.
    SemiImplicit,
    /// Fully explicit; needs `dt ≤ dx²/(2a)`.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PdeSolution {
    pub x: Vec<f64>,
    /// Times of the stored frames, `0` and `t_end` included.
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
    pub scheme: Scheme,
    pub steps: usize,
    /// Largest step actually taken after the reaction-stiffness cap.
    pub max_dt: f64,
    pub min_u: f64,
    pub max_u: f64,
}

impl PdeSolution {
    pub fn final_u(&self) -> &[f64] {
        self.frames.last().expect("solution has frames")
    }

    /// Linear interpolation of `u(·, t_end)`; zero outside the grid.
    pub fn interp(&self, y: f64) -> f64 {
        let (x0, dx) = (self.x[0], self.x[1] - self.x[0]);
        let u = (y - x0) / dx;
        if !(u >= 0.0) || u > (self.x.len() - 1) as f64 {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.x.len() - 2);
        let w = u - i as f64;
        let f = self.final_u();
        f[i] * (1.0 - w) + f[i + 1] * w
    }

    /// Rows `x,s,u` for every stored frame.
    pub fn write_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "x,s,u")?;
        for (s, frame) in self.times.iter().zip(&self.frames) {
            for (x, u) in self.x.iter().zip(frame) {
                writeln!(out, "{x:.16e},{s:.16e},{u:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Number of stored frames besides the initial one.
const FRAMES: usize = 10;

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Solves `u_t = Lu + βu − αu²` from `g` on `grid` with the semi-implicit scheme.
pub fn solve_forward(spec: &SuperdiffusionSpec, g: &ScalarField, grid: &Grid1D) -> Result<PdeSolution> {
    solve_forward_with(spec, g, grid, Scheme::SemiImplicit)
}

pub fn solve_forward_with(spec: &SuperdiffusionSpec, g: &ScalarField, grid: &Grid1D, scheme: Scheme) -> Result<PdeSolution> {
    if spec.dim() != 1 || g.dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: spec.dim().max(g.dim()),
        });
    }
    grid.validate()?;
    let n = grid.nodes();
    let dx = grid.dx;
    let xs: Vec<f64> = (0..n).map(|i| grid.x(i)).collect();
    let a = spec.diffusion.matrix()[0];
    let drift: Vec<f64> = xs.iter().map(|x| spec.drift.eval(&[*x])[0]).collect();
    let beta: Vec<f64> = xs.iter().map(|x| spec.beta.eval(&[*x])).collect();
    let alpha: Vec<f64> = xs.iter().map(|x| spec.alpha.eval(&[*x])).collect();
    let mut u: Vec<f64> = xs.iter().map(|x| g.eval(&[*x])).collect();
    if let Some(i) = u.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "initial data must be nonnegative, g({}) = {}",
            xs[i], u[i]
        )));
    }
    u[0] = 0.0;
    u[n - 1] = 0.0;
    if scheme == Scheme::Explicit && grid.dt > dx * dx / (2.0 * a) {
        return Err(Error::InvalidArgument(format!(
            "explicit scheme needs dt <= dx^2/(2a) = {}, got {}",
            dx * dx / (2.0 * a),
            grid.dt
        )));
    }

    // Generator stencil: coefficients of u_{i-1}, u_i, u_{i+1}. Central drift
    // differences while the cell Péclet number stays below one, upwind beyond.
    let mut lo = vec![0.0; n];
    let mut mid = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for i in 1..n - 1 {
        let diff = 0.5 * a / (dx * dx);
        let b = drift[i];
        let (l, c, h) = if b.abs() * dx <= a {
            (diff - b / (2.0 * dx), -2.0 * diff, diff + b / (2.0 * dx))
        } else if b > 0.0 {
            (diff, -2.0 * diff - b / dx, diff + b / dx)
        } else {
            (diff - b / dx, -2.0 * diff + b / dx, diff)
        };
        lo[i] = l;
        mid[i] = c;
        hi[i] = h;
    }

    let beta_max = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let alpha_max = alpha.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut times = vec![0.0];
    let mut frames = vec![u.clone()];
    let frame_times: Vec<f64> = (1..=FRAMES).map(|k| grid.t_end * k as f64 / FRAMES as f64).collect();
    let mut next_frame = 0;
    let (mut t, mut steps, mut max_dt) = (0.0, 0usize, 0.0f64);
    let (mut min_u, mut max_u) = (0.0f64, u.iter().fold(0.0f64, |m, v| m.max(*v)));
    let m = n - 2;
    let (mut sl, mut sd, mut su, mut rhs, mut scratch) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut react = vec![0.0; n];

    while next_frame < FRAMES && grid.t_end > 0.0 {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(*v));
        let cap = 0.1 / (beta_max + 2.0 * alpha_max * umax).max(1e-300);
        let target = frame_times[next_frame];
        let mut dt = grid.dt.min(cap);
        let last = t + dt >= target - 1e-12 * target.max(1.0);
        if last {
            dt = target - t;
        }
        for i in 1..n - 1 {
            react[i] = u[i] + dt * (beta[i] * u[i] - alpha[i] * u[i] * u[i]);
        }
        match scheme {
            Scheme::SemiImplicit => {
                for k in 0..m {
                    let i = k + 1;
                    sl[k] = -dt * lo[i];
                    sd[k] = 1.0 - dt * mid[i];
                    su[k] = -dt * hi[i];
                    rhs[k] = react[i];
                }
                thomas(&sl, &sd, &su, &mut rhs, &mut scratch);
                u[1..n - 1].copy_from_slice(&rhs);
            }
            Scheme::Explicit => {
                let prev = u.clone();
                for i in 1..n - 1 {
                    u[i] = react[i] + dt * (lo[i] * prev[i - 1] + mid[i] * prev[i] + hi[i] * prev[i + 1]);
                }
            }
        }
        t = if last { target } else { t + dt };
        steps += 1;
        max_dt = max_dt.max(dt);
        for (i, v) in u.iter().enumerate() {
            if v.is_nan() || *v < -1e-10 {
                return Err(Error::Unstable {
                    step: steps,
                    t,
                    reason: format!("u = {v} at x = {}", xs[i]),
                });
            }
            min_u = min_u.min(*v);
            max_u = max_u.max(*v);
        }
        if last {
            times.push(t);
            frames.push(u.clone());
            next_frame += 1;
        }
    }
    Ok(PdeSolution {
        x: xs,
        times,
        frames,
        scheme,
        steps,
        max_dt,
        min_u,
        max_u,
    })
}

/// `exp(−⟨μ, u(·, t)⟩)`, the log-Laplace side of `E^μ exp⟨X_t, −g⟩`.
pub fn laplace_functional_pde(spec: &SuperdiffusionSpec, mu: &InitialMeasure, g: &ScalarField, grid: &Grid1D) -> Result<f64> {
    for a in &mu.atoms {
        if a.position.len() != 1 || a.position[0].abs() >= grid.half_width {
            return Err(Error::InvalidArgument(format!("atom {:?} outside the grid", a.position)));
        }
    }
    let sol = solve_forward(spec, g, grid)?;
    let exponent: f64 = mu.atoms.iter().map(|a| a.mass * sol.interp(a.position[0])).sum();
    Ok((-exponent).exp())
}

/// Max change of `u(·, t_end)` on the inner half of the grid when the
/// interval is doubled.
pub fn domain_doubling_change(spec: &SuperdiffusionSpec, g: &ScalarField, grid: &Grid1D) -> Result<f64> {
    let small = solve_forward(spec, g, grid)?;
    let big = solve_forward(spec, g, &grid.doubled())?;
    let offset = (big.x.len() - small.x.len()) / 2;
    let inner = grid.half_width / 2.0;
    Ok(small
        .x
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() <= inner + 1e-12)
        .map(|(i, _)| (small.final_u()[i] - big.final_u()[i + offset]).abs())
        .fold(0.0, f64::max))
}

/// Probability that a spatially constant superprocess started from total
/// mass `initial_mass` ever dies out.
pub fn extinction_probability_csbp(beta: f64, alpha: f64, initial_mass: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Constraint(format!("alpha must be positive, got {alpha}")));
    }
    if beta <= 0.0 {
        return Ok(1.0);
    }
    Ok((-(beta / alpha) * initial_mass).exp())
}

/// Probability of extinction by time `t`: `exp(−m·u_∞(t))` with
/// `u_∞(t) = β / (α(1 − e^{−βt}))` (`1/(αt)` when `β = 0`).
pub fn extinction_probability_csbp_at(beta: f64, alpha: f64, initial_mass: f64, t: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Constraint(format!("alpha must be positive, got {alpha}")));
    }
    if !(t > 0.0) {
        return Ok(if initial_mass == 0.0 { 1.0 } else { 0.0 });
    }
    let u = if beta == 0.0 {
        1.0 / (alpha * t)
    } else {
        -beta / (alpha * (-beta * t).exp_m1())
    };
    Ok((-initial_mass * u).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_constant;

    #[test]
    fn thomas_solves_tridiagonal() {
        let (l, d, u) = ([0.0, -1.0, -1.0], [2.0, 2.0, 2.0], [-1.0, -1.0, 0.0]);
        let mut rhs = [1.0, 0.0, 1.0];
        let mut s = [0.0; 3];
        thomas(&l, &d, &u, &mut rhs, &mut s);
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn csbp_closed_forms() {
        assert!((extinction_probability_csbp(1.0, 0.5, 1.0).unwrap() - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(extinction_probability_csbp(0.0, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(extinction_probability_csbp(1.0, 0.5, 0.0).unwrap(), 1.0);
        assert!(extinction_probability_csbp(1.0, 0.0, 1.0).is_err());
        let p8 = extinction_probability_csbp_at(1.0, 0.5, 1.0, 8.0).unwrap();
        assert!(p8 < (-2f64).exp() && (-2f64).exp() - p8 < 1e-4);
    }

    #[test]
    fn fixed_point_of_the_logistic_reaction() {
        let spec = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let sol = solve_forward(&spec, &make_constant(1, 2.0), &Grid1D::new(60.0, 0.1, 0.01, 1.0)).unwrap();
        let mid = sol.x.len() / 2;
        for i in mid - 100..=mid + 100 {
            assert!((sol.final_u()[i] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let spec = SuperdiffusionSpec::super_brownian(1, 1.0, 0.5);
        let sol = solve_forward(&spec, &make_constant(1, 0.0), &Grid1D::new(5.0, 0.1, 0.01, 1.0)).unwrap();
        assert!(sol.final_u().iter().all(|v| *v == 0.0));
        assert_eq!(sol.times.len(), FRAMES + 1);
    }

    #[test]
    fn rejects_negative_data_and_unstable_explicit_step() {
        let spec = SuperdiffusionSpec::super_brownian(1, 0.0, 0.5);
        let g = crate::fields::ScalarField::from_descriptor("sin:1:0:0", 1).unwrap();
        assert!(solve_forward(&spec, &g, &Grid1D::new(5.0, 0.1, 0.01, 1.0)).is_err());
        let bump = crate::fields::make_bump(1, 1.0, 1.0).unwrap();
        let r = solve_forward_with(&spec, &bump, &Grid1D::new(5.0, 0.01, 0.01, 1.0), Scheme::Explicit);
        assert!(r.is_err());
    }
}

//! Motion of a single particle between branching events.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::model::{Domain, SuperdiffusionSpec};
use crate::rng::Rng;

/// How the motion is advanced.
#[derive(Clone, Debug, PartialEq)]
pub enum MotionKind {
    /// `dX = o dt + σ dB`, sampled exactly.
    Brownian { drift: Vec<f64> },
    /// `dX = (o + γX) dt + σ dB` with scalar `γ ≠ 0`, sampled exactly around
    /// the fixed point `−o/γ`.
    Linear { gamma: f64, center: Vec<f64> },
    /// Euler–Maruyama with steps of at most `dt_max`.
    Euler,
}

/// Transition sampler for the `L`-diffusion of a spec.
#[derive(Clone, Debug)]
pub struct Motion<'a> {
    spec: &'a SuperdiffusionSpec,
    kind: MotionKind,
    sigma: Vec<f64>,
    dt_max: f64,
    dim: usize,
}

impl<'a> Motion<'a> {
    pub fn new(spec: &'a SuperdiffusionSpec, dt_max: f64) -> Self {
        let dim = spec.dim();
        let kind = match spec.drift.as_affine() {
            Some((offset, slope)) => {
                let g = slope[0];
                let isotropic = (0..dim).all(|i| {
                    (0..dim).all(|j| slope[i * dim + j] == if i == j { g } else { 0.0 })
                });
                if !isotropic {
                    MotionKind::Euler
                } else if g == 0.0 {
                    MotionKind::Brownian {
                        drift: offset.to_vec(),
                    }
                } else {
                    MotionKind::Linear {
                        gamma: g,
                        center: offset.iter().map(|o| -o / g).collect(),
                    }
                }
            }
            None => MotionKind::Euler,
        };
        let sigma = spec.diffusion.factor(&vec![0.0; dim]).to_vec();
        Motion {
            spec,
            kind,
            sigma,
            dt_max,
            dim,
        }
    }

    /// Forces Euler stepping even when an exact sampler exists.
    pub fn euler(spec: &'a SuperdiffusionSpec, dt_max: f64) -> Self {
        Motion {
            kind: MotionKind::Euler,
            ..Motion::new(spec, dt_max)
        }
    }

    pub fn kind(&self) -> &MotionKind {
        &self.kind
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.kind, MotionKind::Euler)
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    /// Adds `scale·σξ` to `x` for a fresh standard Gaussian `ξ`.
    #[inline]
    fn add_noise(&self, x: &mut [f64], scale: f64, rng: &mut Rng) {
        if self.dim == 1 {
            let z: f64 = rng.sample(StandardNormal);
            x[0] += scale * self.sigma[0] * z;
            return;
        }
        let mut xi = [0.0f64; 16];
        let xi: &mut [f64] = if self.dim <= 16 {
            &mut xi[..self.dim]
        } else {
            return self.add_noise_large(x, scale, rng);
        };
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..self.dim {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.sigma[i * self.dim + j] * xi[j];
            }
            x[i] += scale * s;
        }
    }

    fn add_noise_large(&self, x: &mut [f64], scale: f64, rng: &mut Rng) {
        let xi: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..self.dim {
            let s: f64 = (0..=i).map(|j| self.sigma[i * self.dim + j] * xi[j]).sum();
            x[i] += scale * s;
        }
    }

    #[inline]
    fn exact_step(&self, x: &mut [f64], dt: f64, rng: &mut Rng) {
        match &self.kind {
            MotionKind::Brownian { drift } => {
                for (xi, bi) in x.iter_mut().zip(drift) {
                    *xi += bi * dt;
                }
                self.add_noise(x, dt.sqrt(), rng);
            }
            MotionKind::Linear { gamma, center } => {
                let e = (gamma * dt).exp();
                for (xi, ci) in x.iter_mut().zip(center) {
                    *xi = ci + (*xi - ci) * e;
                }
                let var = (e * e - 1.0) / (2.0 * gamma);
                self.add_noise(x, var.sqrt(), rng);
            }
            MotionKind::Euler => unreachable!("exact_step on Euler motion"),
        }
    }

    /// One Euler–Maruyama step of size `dt`.
    #[inline]
    pub fn euler_step(&self, x: &mut [f64], dt: f64, rng: &mut Rng) {
        let mut b = [0.0f64; 16];
        if self.dim <= 16 {
            self.spec.drift.eval_into(x, &mut b[..self.dim]);
            for i in 0..self.dim {
                x[i] += b[i] * dt;
            }
        } else {
            let b = self.spec.drift.eval(x);
            for i in 0..self.dim {
                x[i] += b[i] * dt;
            }
        }
        self.add_noise(x, dt.sqrt(), rng);
    }

    /// A single transition over `dt`: exact where available, otherwise one
    /// Euler step.
    pub fn step(&self, x: &mut [f64], dt: f64, rng: &mut Rng) {
        if self.is_exact() {
            self.exact_step(x, dt, rng)
        } else {
            self.euler_step(x, dt, rng)
        }
    }

    /// Moves `x` forward by `dt`; returns `false` if the particle leaves
    /// `domain` (checked after each sub-step).
    #[inline]
    pub fn advance(&self, x: &mut [f64], dt: f64, domain: &Domain, rng: &mut Rng) -> bool {
        if dt <= 0.0 {
            return true;
        }
        let whole = matches!(domain, Domain::Whole);
        if self.is_exact() && whole {
            self.exact_step(x, dt, rng);
            return domain.contains(x);
        }
        // Exits from a box are only seen at sub-step ends, also for exact motion.
        let steps = (dt / self.dt_max).ceil().max(1.0) as usize;
        let h = dt / steps as f64;
        for _ in 0..steps {
            self.step(x, h, rng);
            if !domain.contains(x) {
                return false;
            }
        }
        true
    }
}

/// One transition of the `L`-diffusion over `dt` from `x`.
pub fn step_motion(x: &[f64], dt: f64, spec: &SuperdiffusionSpec, rng: &mut Rng) -> Vec<f64> {
    let mut y = x.to_vec();
    Motion::new(spec, dt).step(&mut y, dt, rng);
    y
}

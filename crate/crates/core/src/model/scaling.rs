use std::f64::consts::PI;

use crate::fields::ScalarField;

/// Reference measure `r(dx)`.
#[derive(Clone, Debug, PartialEq)]
pub enum RDensity {
    /// `κ·dx`.
    Lebesgue(f64),
    /// `ρ(x)·dx`.
    Density(ScalarField),
}

/// Scaling schedule for the linear semigroup and the spatial spread:
///
/// * `s_t = (2πt)^{d/2}·e^{growth·t}`
/// * `z_t = speed·t`
/// * `ẑ_t = t^{zhat_power}`
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingTriple {
    pub dim: usize,
    pub growth: f64,
    pub speed: f64,
    pub zhat_power: f64,
    pub r: RDensity,
}

impl ScalingTriple {
    pub fn s(&self, t: f64) -> f64 {
        (2.0 * PI * t).powf(self.dim as f64 / 2.0) * (self.growth * t).exp()
    }

    pub fn log_s(&self, t: f64) -> f64 {
        0.5 * self.dim as f64 * (2.0 * PI * t).ln() + self.growth * t
    }

    pub fn z(&self, t: f64) -> f64 {
        self.speed * t
    }

    pub fn zhat(&self, t: f64) -> f64 {
        t.powf(self.zhat_power)
    }

    /// `max log s_t / log t` over a logarithmic grid on `[2, 10⁶]`.
    pub fn log_growth_ratio(&self) -> f64 {
        (0..=200)
            .map(|i| 2.0 * (5e5f64).powf(i as f64 / 200.0))
            .map(|t| self.log_s(t) / t.ln())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `s_{t+ẑ_t} / s_{ẑ_t}` along `t = 2^k`, `k = 1..=kmax`.
    pub fn shift_ratios(&self, kmax: u32) -> Vec<(f64, f64)> {
        (1..=kmax)
            .map(|k| {
                let t = 2f64.powi(k as i32);
                let zh = self.zhat(t);
                (t, (self.log_s(t + zh) - self.log_s(zh)).exp())
            })
            .collect()
    }

    /// Checks the polynomial-growth and shift conditions numerically.
    pub fn satisfies_growth_conditions(&self) -> bool {
        let bounded = self.log_growth_ratio() < 1e3;
        let ratios = self.shift_ratios(20);
        let last = ratios.last().map(|r| r.1).unwrap_or(f64::NAN);
        bounded && (last - 1.0).abs() < 1e-3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian(dim: usize) -> ScalingTriple {
        ScalingTriple {
            dim,
            growth: 0.0,
            speed: 2f64.sqrt() + 0.1,
            zhat_power: 3.0,
            r: RDensity::Lebesgue(1.0),
        }
    }

    #[test]
    fn brownian_scaling_is_polynomial() {
        let s = brownian(1);
        assert!((s.s(2.0) - (4.0 * PI).sqrt()).abs() < 1e-12);
        assert!(s.log_growth_ratio() < 2.0);
        let r = s.shift_ratios(20);
        assert!((r.last().unwrap().1 - 1.0).abs() < 1e-6);
        assert!(s.satisfies_growth_conditions());
    }

    #[test]
    fn exponential_scaling_fails_growth_conditions() {
        let s = ScalingTriple {
            growth: 0.5,
            ..brownian(1)
        };
        assert!(!s.satisfies_growth_conditions());
    }
}

//! Moment-matched offspring laws on `{0, 1, K}`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest `K` tried before giving up on a law.
pub const OFFSPRING_K_CAP: u64 = 1_000_000;

/// Name recorded in run metadata for the offspring family in use.
pub const OFFSPRING_FAMILY: &str = "three-point {0,1,K}, minimal K";

/// Offspring distribution `P(0) = p0, P(1) = p1, P(K) = pk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OffspringLaw {
    pub k: u64,
    pub p0: f64,
    pub p1: f64,
    pub pk: f64,
    pub target_mean: f64,
    pub target_variance: f64,
}

/// Smallest `K ≥ 2` for which the `{0, 1, K}` law with mean `m` and variance
/// `v` has nonnegative weights.
///
/// Matching `E N = m` and `E N(N−1) = v + m(m−1)` gives
/// `pK = (v + m(m−1)) / (K(K−1))`, `p1 = m − K·pK`, `p0 = 1 − p1 − pK`.
pub fn make_offspring_law(m: f64, v: f64) -> Result<OffspringLaw> {
    let fail = || Error::OffspringLaw {
        mean: m,
        variance: v,
        cap: OFFSPRING_K_CAP,
    };
    if !(m > 0.0) || !(v >= 0.0) || !m.is_finite() || !v.is_finite() {
        return Err(fail());
    }
    let fact2 = v + m * (m - 1.0);
    if fact2 < -1e-15 {
        // Variance below the Bernoulli minimum m(1−m).
        return Err(fail());
    }
    let fact2 = fact2.max(0.0);
    // p1 ≥ 0  ⇔  K ≥ m + v/m.
    let lower = m + v / m;
    let mut k = (lower * (1.0 - 1e-14)).ceil().max(2.0);
    if k > OFFSPRING_K_CAP as f64 {
        return Err(fail());
    }
    loop {
        let pk = fact2 / (k * (k - 1.0));
        let p1 = m - k * pk;
        if p1 >= -1e-15 {
            let p1 = p1.max(0.0);
            let p0 = 1.0 - p1 - pk;
            if p0 < -1e-15 {
                return Err(fail());
            }
            return Ok(OffspringLaw {
                k: k as u64,
                p0: p0.max(0.0),
                p1,
                pk,
                target_mean: m,
                target_variance: v,
            });
        }
        k += 1.0;
        if k > OFFSPRING_K_CAP as f64 {
            return Err(fail());
        }
    }
}

/// Smallest variance of an integer-valued law with mean `m`: `f(1 − f)` with
/// `f` the fractional part of `m`.
pub fn minimal_offspring_variance(m: f64) -> f64 {
    let f = m - m.floor();
    f * (1.0 - f)
}

/// Like [`make_offspring_law`], but a target variance below
/// [`minimal_offspring_variance`] is raised to that minimum (for `m ∈ (1, 2)`
/// the two-point law on `{1, 2}`). The flag reports whether that happened.
///
/// At level `n` the mean is `1 + β/n`, so the floor is about `β/n`: any
/// particle system at that level carries at least this much variance.
pub fn make_offspring_law_floored(m: f64, v: f64) -> Result<(OffspringLaw, bool)> {
    let floor = minimal_offspring_variance(m);
    if m > 0.0 && m < 2.0 && v >= 0.0 && v < floor {
        let mut law = make_offspring_law(m, floor)?;
        law.target_variance = v;
        Ok((law, true))
    } else {
        Ok((make_offspring_law(m, v)?, false))
    }
}

impl OffspringLaw {
    pub fn realized_mean(&self) -> f64 {
        self.p1 + self.k as f64 * self.pk
    }

    pub fn realized_variance(&self) -> f64 {
        let k = self.k as f64;
        let m = self.realized_mean();
        self.p1 + k * k * self.pk - m * m
    }

    /// Number of offspring for a uniform draw `u ∈ [0, 1)`.
    #[inline]
    pub fn sample(&self, u: f64) -> u64 {
        if u < self.p0 {
            0
        } else if u < self.p0 + self.p1 {
            1
        } else {
            self.k
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_100_sbm_law() {
        // Hand solution of the two moment equations with K = 3:
        // pK = (1 + 1.01·0.01)/6, p1 = 1.01 − 3pK, p0 = 1 − p1 − pK.
        let law = make_offspring_law(1.01, 1.0).unwrap();
        assert_eq!(law.k, 3);
        let pk = (1.0 + 1.01 * 0.01) / 6.0;
        assert!((law.pk - pk).abs() < 1e-15);
        assert!((law.pk - 0.168350).abs() < 1e-6);
        assert!((law.p1 - 0.504950).abs() < 1e-6);
        assert!((law.p0 - 0.326700).abs() < 1e-6);
        // Direct summation over the support.
        let mean = law.p1 + 3.0 * law.pk;
        let second = law.p1 + 9.0 * law.pk;
        assert!((mean - 1.01).abs() < 1e-12);
        assert!((second - mean * mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_single_offspring() {
        let law = make_offspring_law(1.0, 0.0).unwrap();
        assert_eq!((law.k, law.pk, law.p1, law.p0), (2, 0.0, 1.0, 0.0));
    }

    #[test]
    fn binary_branching() {
        let law = make_offspring_law(1.0, 1.0).unwrap();
        assert_eq!((law.k, law.pk, law.p1, law.p0), (2, 0.5, 0.0, 0.5));
    }

    #[test]
    fn subcritical_mean() {
        let law = make_offspring_law(0.99, 1.0).unwrap();
        assert!((law.realized_mean() - 0.99).abs() < 1e-12);
        assert!((law.realized_variance() - 1.0).abs() < 1e-12);
        assert!(law.p0 >= 0.0 && law.p1 >= 0.0 && law.pk >= 0.0);
    }

    #[test]
    fn impossible_laws() {
        // Mean far above one with tiny variance cannot live on {0, 1, K}.
        assert!(make_offspring_law(3.0, 0.1).is_err());
        assert!(make_offspring_law(0.5, 0.0).is_err());
        assert!(make_offspring_law(0.0, 1.0).is_err());
        assert!(make_offspring_law(1.0, -1.0).is_err());
        assert!(make_offspring_law(1.0, 4e6).is_err());
    }

    #[test]
    fn tiny_variance_is_floored() {
        let m = 1.005;
        assert!(make_offspring_law(m, 0.004).is_err());
        let (law, floored) = make_offspring_law_floored(m, 0.004).unwrap();
        assert!(floored);
        assert_eq!(law.k, 2);
        assert!(law.p0.abs() < 1e-15);
        assert!((law.realized_mean() - m).abs() < 1e-12);
        assert!((law.realized_variance() - 0.005 * 0.995).abs() < 1e-12);
        let (law, floored) = make_offspring_law_floored(m, 1.0).unwrap();
        assert!(!floored);
        assert!((law.realized_variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_frequencies() {
        let law = make_offspring_law(1.01, 1.0).unwrap();
        let n = 100_000;
        let mut counts = [0u32; 3];
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            match law.sample(u) {
                0 => counts[0] += 1,
                1 => counts[1] += 1,
                3 => counts[2] += 1,
                other => panic!("unexpected {other}"),
            }
        }
        assert!((counts[0] as f64 / n as f64 - law.p0).abs() < 1e-4);
        assert!((counts[2] as f64 / n as f64 - law.pk).abs() < 1e-4);
    }
}

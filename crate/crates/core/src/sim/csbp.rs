//! Feller diffusion `dZ = βZ dt + √(2αZ) dB`: the total mass of a spatially
//! constant superprocess.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Terminal values `Z_t` of `paths` full-truncation Euler paths started at
/// `z0`. Path `i` uses stream `i` of `seed`.
pub fn simulate_feller(beta: f64, alpha: f64, z0: f64, t: f64, dt: f64, paths: usize, seed: u64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !(z0 >= 0.0) || !(t >= 0.0) || !(dt > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "simulate_feller needs alpha > 0, z0 >= 0, t >= 0, dt > 0 (alpha = {alpha}, z0 = {z0}, t = {t}, dt = {dt})"
        )));
    }
    let steps = (t / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let sq = (2.0 * alpha * h).sqrt();
    Ok((0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let mut z = z0;
            for _ in 0..steps {
                if z == 0.0 {
                    break;
                }
                let xi: f64 = rng.sample(StandardNormal);
                z = (z + beta * z * h + sq * z.sqrt() * xi).max(0.0);
            }
            z
        })
        .collect())
}

/// `Var(e^{−βt} Z_t) = (2α z0/β)(1 − e^{−βt})` (`2α z0 t` when `β = 0`).
pub fn feller_normalized_variance(beta: f64, alpha: f64, z0: f64, t: f64) -> f64 {
    if beta == 0.0 {
        2.0 * alpha * z0 * t
    } else {
        2.0 * alpha * z0 / beta * -(-beta * t).exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::summarize;

    #[test]
    fn critical_mean_is_conserved() {
        let z = simulate_feller(0.0, 0.5, 1.0, 1.0, 0.01, 20_000, 3).unwrap();
        let s = summarize(&z).unwrap();
        assert!(s.mean_within(1.0, 4.0), "{s:?}");
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(simulate_feller(1.0, 0.0, 1.0, 1.0, 0.01, 10, 1).is_err());
    }

    #[test]
    fn zero_stays_zero() {
        let z = simulate_feller(1.0, 0.5, 0.0, 2.0, 0.01, 10, 1).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn variance_formula_limits() {
        assert!((feller_normalized_variance(1.0, 0.5, 1.0, 2.0) - 0.8646647167633873).abs() < 1e-15);
        assert!((feller_normalized_variance(1e-12, 0.5, 1.0, 2.0) - 2.0).abs() < 1e-9);
    }
}

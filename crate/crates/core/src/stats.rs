//! Replicate statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean, unbiased variance and standard error of a set of replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub variance: f64,
    /// Batch-means standard error of the mean (batch size 1 for independent replicates).
    pub std_error: f64,
    /// Standard error of the sample variance, from the fourth central moment.
    pub variance_std_error: f64,
    pub count: usize,
}

impl StatSummary {
    /// Half-width of the `z`-standard-error interval.
    pub fn half_width(&self, z: f64) -> f64 {
        z * self.std_error
    }

    /// `|mean − target| ≤ z·SE`.
    pub fn mean_within(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.std_error
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Summary of independent samples; needs at least two.
pub fn summarize(samples: &[f64]) -> Result<StatSummary> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples to summarize, got {n}"
        )));
    }
    let nf = n as f64;
    let m = mean(samples);
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in samples {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    let variance = m2 / (nf - 1.0);
    let mu2 = m2 / nf;
    let mu4 = m4 / nf;
    // Var(s²) ≈ (μ₄ − σ⁴(n−3)/(n−1))/n.
    let var_of_var = ((mu4 - mu2 * mu2 * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);
    Ok(StatSummary {
        mean: m,
        variance,
        std_error: batch_means_se(samples, 1),
        variance_std_error: var_of_var.sqrt(),
        count: n,
    })
}

/// Standard error of the mean from non-overlapping batches of `batch_size`
/// consecutive samples; trailing samples that do not fill a batch are dropped.
pub fn batch_means_se(samples: &[f64], batch_size: usize) -> f64 {
    let b = batch_size.max(1);
    let batches: Vec<f64> = samples.chunks_exact(b).map(mean).collect();
    let k = batches.len();
    if k < 2 {
        return f64::NAN;
    }
    let m = mean(&batches);
    let var = batches.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k as f64 - 1.0);
    (var / k as f64).sqrt()
}

/// Pearson correlation; `NaN` when either side is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard error of a Bernoulli frequency `p` over `n` trials.
pub fn proportion_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

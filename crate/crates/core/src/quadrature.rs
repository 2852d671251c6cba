//! Adaptive Gauss–Kronrod quadrature and Gaussian expectations.

use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adapt(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, whole: f64, err: f64, tol: f64, depth: u32) -> f64 {
    if err <= tol || depth >= MAX_DEPTH || (b - a).abs() < 1e-13 * (a.abs() + b.abs()).max(1e-300) {
        return whole;
    }
    let m = 0.5 * (a + b);
    let (l, el) = gk15(f, a, m);
    let (r, er) = gk15(f, m, b);
    adapt(f, a, m, l, el, 0.5 * tol, depth + 1) + adapt(f, m, b, r, er, 0.5 * tol, depth + 1)
}

/// `∫_a^b f` to relative tolerance `rel_tol` (with absolute floor `abs_tol`).
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // A coarse pass over a few panels sets the scale for the relative tolerance.
    let panels = 8;
    let w = (b - a) / panels as f64;
    let parts: Vec<(f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let (lo, hi) = (a + w * i as f64, if i + 1 == panels { b } else { a + w * (i + 1) as f64 });
            let (v, e) = gk15(f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    let scale: f64 = parts.iter().map(|p| p.2.abs()).sum();
    let tol = (rel_tol * scale).max(abs_tol);
    parts
        .into_iter()
        .map(|(lo, hi, v, e)| adapt(f, lo, hi, v, e, tol / panels as f64, 0))
        .sum()
}

/// Number of standard deviations kept on each side of the Gaussian mean.
const GAUSS_SPAN: f64 = 12.0;

/// `E f(m + sd·Z)` for a standard Gaussian vector `Z`, integrated coordinate by
/// coordinate. `support`, when given, is a box outside which `f` vanishes.
pub fn gaussian_expectation(
    f: &dyn Fn(&[f64]) -> f64,
    mean: &[f64],
    sd: f64,
    support: Option<&[(f64, f64)]>,
    rel_tol: f64,
) -> f64 {
    let d = mean.len();
    if sd == 0.0 {
        return f(mean);
    }
    let mut x = vec![0.0; d];
    nested(f, mean, sd, support, rel_tol, 0, &mut x)
}

fn nested(
    f: &dyn Fn(&[f64]) -> f64,
    mean: &[f64],
    sd: f64,
    support: Option<&[(f64, f64)]>,
    rel_tol: f64,
    axis: usize,
    x: &mut Vec<f64>,
) -> f64 {
    let d = mean.len();
    let (mut lo, mut hi) = (mean[axis] - GAUSS_SPAN * sd, mean[axis] + GAUSS_SPAN * sd);
    if let Some(s) = support {
        lo = lo.max(s[axis].0);
        hi = hi.min(s[axis].1);
    }
    if !(hi > lo) {
        return 0.0;
    }
    let norm = 1.0 / ((2.0 * PI).sqrt() * sd);
    let m = mean[axis];
    let mut inner = |y: f64| {
        let z = (y - m) / sd;
        let dens = norm * (-0.5 * z * z).exp();
        if dens == 0.0 {
            return 0.0;
        }
        x[axis] = y;
        let v = if axis + 1 == d {
            f(x)
        } else {
            let mut xc = x.clone();
            nested(f, mean, sd, support, rel_tol, axis + 1, &mut xc)
        };
        dens * v
    };
    integrate(&mut inner, lo, hi, rel_tol, 1e-300)
}

/// `∫ f` over the box `∏ [lo_i, hi_i]`, nested coordinate by coordinate.
pub fn integrate_box(f: &dyn Fn(&[f64]) -> f64, bounds: &[(f64, f64)], rel_tol: f64) -> f64 {
    let mut x = vec![0.0; bounds.len()];
    box_nested(f, bounds, rel_tol, 0, &mut x)
}

fn box_nested(f: &dyn Fn(&[f64]) -> f64, bounds: &[(f64, f64)], rel_tol: f64, axis: usize, x: &mut Vec<f64>) -> f64 {
    let (lo, hi) = bounds[axis];
    let mut inner = |y: f64| {
        x[axis] = y;
        if axis + 1 == bounds.len() {
            f(x)
        } else {
            let mut xc = x.clone();
            box_nested(f, bounds, rel_tol, axis + 1, &mut xc)
        }
    };
    integrate(&mut inner, lo, hi, rel_tol, 1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_exponentials() {
        let v = integrate(&mut |x| x * x, 0.0, 3.0, 1e-12, 0.0);
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate(&mut |x: f64| x.exp(), -1.0, 2.0, 1e-12, 0.0);
        assert!((v - (2f64.exp() - (-1f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn gaussian_moments() {
        let m2 = gaussian_expectation(&|x| x[0] * x[0], &[0.5], 2.0, None, 1e-10);
        assert!((m2 - (4.0 + 0.25)).abs() < 1e-9);
        let one = gaussian_expectation(&|_| 1.0, &[0.0, 1.0], 0.7, None, 1e-10);
        assert!((one - 1.0).abs() < 1e-9);
        // E[x y] for independent coordinates with means (1, 2).
        let xy = gaussian_expectation(&|x| x[0] * x[1], &[1.0, 2.0], 0.5, None, 1e-10);
        assert!((xy - 2.0).abs() < 1e-9);
    }

    #[test]
    fn indicator_with_support() {
        // P(|Z·5| < 1) = 2Φ(0.2) − 1 ≈ 0.158519.
        let p = gaussian_expectation(&|_| 1.0, &[0.0], 5.0, Some(&[(-1.0, 1.0)]), 1e-12);
        assert!((p - 0.158_519_418_878_206_3).abs() < 1e-10);
    }

    #[test]
    fn box_volume_and_product() {
        let v = integrate_box(&|x| x[0] * x[1], &[(0.0, 1.0), (0.0, 2.0)], 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }
}

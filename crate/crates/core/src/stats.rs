//! Empirical statistics used by the verification runs.

use serde::Serialize;

use crate::error::{Error, Result};

fn sorted_finite(xs: &[f64], what: &str) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("{what}: empty sample")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what}: sample contains a non-finite value")));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted_finite(a, "ks_two_sample")?;
    let b = sorted_finite(b, "ks_two_sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(a: &[f64], cdf: F) -> Result<f64> {
    let a = sorted_finite(a, "ks_one_sample")?;
    let n = a.len() as f64;
    let mut d: f64 = 0.0;
    for (k, x) in a.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    Ok(d)
}

/// Linear-interpolated quantile (type 7) of a sample.
pub fn quantile(xs: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("quantile level outside [0, 1]"));
    }
    let v = sorted_finite(xs, "quantile")?;
    Ok(quantile_sorted(&v, q))
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn iqr(xs: &[f64]) -> Result<f64> {
    let v = sorted_finite(xs, "iqr")?;
    Ok(quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `NaN`-free, zero for two points.
    pub stderr: f64,
}

impl LinearFit {
    /// Symmetric 95% normal-approximation interval for the slope.
    pub fn ci95(&self) -> (f64, f64) {
        (self.slope - 1.96 * self.stderr, self.slope + 1.96 * self.stderr)
    }
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("least squares needs two or more paired points"));
    }
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("least squares needs distinct abscissae"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        stderr,
    })
}

/// Fits `ln(spread) = slope·ln(ε) + intercept`.
pub fn scaling_regression(eps: &[f64], spread: &[f64]) -> Result<LinearFit> {
    if eps.len() != spread.len() {
        return Err(Error::invalid("eps grid and spreads differ in length"));
    }
    if eps.len() < 3 {
        return Err(Error::invalid("scaling regression needs at least three grid points"));
    }
    if let Some(k) = spread.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::invalid(format!(
            "degenerate spread {} at eps = {}",
            spread[k], eps[k]
        )));
    }
    if eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("eps values must be positive"));
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = spread.iter().map(|s| s.ln()).collect();
    least_squares(&xs, &ys)
}

/// Counts adjacent increases along a sequence that exceed `slack`, and any
/// increase at all beyond that.
pub fn trend_inversions(values: &[f64], slack: f64) -> (usize, usize) {
    let mut small = 0;
    let mut large = 0;
    for w in values.windows(2) {
        let up = w[1] - w[0];
        if up > slack {
            large += 1;
        } else if up > 0.0 {
            small += 1;
        }
    }
    (small, large)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ks_basic() {
        let a = [0.3, 0.1, 0.7];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert!(ks_two_sample(&[], &a).is_err());
        assert!(ks_two_sample(&[f64::NAN], &a).is_err());
    }

    #[test]
    fn ks_ties_are_handled() {
        assert_eq!(ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn ks_shifted_uniforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>() + 0.5).collect();
        let d = ks_two_sample(&a, &b).unwrap();
        assert!((d - 0.5).abs() < 0.01, "{d}");
    }

    #[test]
    fn ks_one_sample_uniform() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert_abs_diff_eq!(ks_one_sample(&xs, |x| x).unwrap(), 0.0005, epsilon = 1e-12);
    }

    #[test]
    fn quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5).unwrap(), 3.0);
        assert_eq!(iqr(&xs).unwrap(), 2.0);
        assert_eq!(quantile(&xs, 0.1).unwrap(), 1.4);
    }

    #[test]
    fn exact_power_law() {
        let eps = [1e-2, 1e-3, 1e-4, 1e-5];
        let spread: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.powf(0.25)).collect();
        let fit = scaling_regression(&eps, &spread).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.intercept, 3f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
        let spread: Vec<f64> = eps
            .iter()
            .map(|e: &f64| e.powf(0.7) * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        let fit = scaling_regression(&eps, &spread).unwrap();
        assert!((fit.slope - 0.7).abs() < 0.02);
        assert!(fit.stderr > 0.0 && fit.stderr.is_finite());
    }

    #[test]
    fn regression_preconditions() {
        assert!(scaling_regression(&[1e-2, 1e-3], &[1.0, 2.0]).is_err());
        assert!(scaling_regression(&[1e-2, 1e-3, 1e-4], &[1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn inversions() {
        assert_eq!(trend_inversions(&[0.1, 0.05, 0.055, 0.02], 0.01), (1, 0));
        assert_eq!(trend_inversions(&[0.1, 0.2], 0.01), (0, 1));
    }
}

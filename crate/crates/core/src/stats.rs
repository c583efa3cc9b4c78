//! Small statistics helpers for the Monte Carlo reports.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

/// Wilson score interval for `hits / n` at 95%.
pub fn wilson_ci(hits: u64, n: u64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(invalid("Wilson interval needs n >= 1"));
    }
    if hits > n {
        return Err(invalid("hits exceed trials"));
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% intervals from the t distribution with `n - 2` degrees of
    /// freedom; `None` with fewer than three points.
    pub slope_ci: Option<(f64, f64)>,
    pub intercept_ci: Option<(f64, f64)>,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(invalid("regression inputs differ in length"));
    }
    let n = x.len();
    if n < 2 {
        return Err(invalid("regression needs at least two points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("regression inputs must be finite"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("regression abscissae are all equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_ci, intercept_ci) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let s2 = rss / (nf - 2.0);
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let se_slope = (s2 / sxx).sqrt();
        let se_int = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
        (
            Some((slope - t * se_slope, slope + t * se_slope)),
            Some((intercept - t * se_int, intercept + t * se_int)),
        )
    } else {
        (None, None)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_ci,
        intercept_ci,
        n,
    })
}

/// Median of a nonempty sample.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("median of an empty sample"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wilson_reference() {
        // 10 of 100: (0.05522, 0.17437)
        let (lo, hi) = wilson_ci(10, 100).unwrap();
        assert_relative_eq!(lo, 0.055_229_1, epsilon = 1e-6);
        assert_relative_eq!(hi, 0.174_365_7, epsilon = 1e-6);
        let (lo, hi) = wilson_ci(0, 50).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.1);
        let (lo, hi) = wilson_ci(50, 50).unwrap();
        assert_eq!(hi, 1.0);
        assert!(lo > 0.9);
        assert!(wilson_ci(1, 0).is_err());
    }

    #[test]
    fn exact_line() {
        let f = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-14);
        assert_relative_eq!(f.intercept, 1.0, epsilon = 1e-14);
        let (lo, hi) = f.slope_ci.unwrap();
        assert_relative_eq!(lo, 2.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 2.0, epsilon = 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(linear_fit(&[0.0, 1.0], &[0.0, 1.0]).unwrap().slope_ci.is_none());
    }

    #[test]
    fn slope_ci_reference() {
        // scipy.stats.linregress on these points: slope 0.8, stderr 0.141421
        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 2.0, 3.0, 4.5]).unwrap();
        let (lo, hi) = f.slope_ci.unwrap();
        assert_relative_eq!(f.slope, 0.8, epsilon = 1e-12);
        assert_relative_eq!((hi - lo) / 2.0, 3.182_446_3 * 0.141_421_36, max_relative = 1e-6);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }
}

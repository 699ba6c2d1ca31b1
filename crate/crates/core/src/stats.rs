//! Small statistics toolkit: estimates with standard errors, jackknife,
//! least squares and the Mann–Kendall trend test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{KacError, Result};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    /// `|value − target| ≤ k·stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> Result<Estimate> {
    if xs.is_empty() {
        return Err(KacError::Domain("mean of an empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Ok(Estimate::new(mean, f64::INFINITY));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate::new(mean, (var / n).sqrt()))
}

/// Jackknife standard error from leave-one-group-out estimates.
pub fn jackknife_stderr(leave_out: &[f64]) -> f64 {
    let g = leave_out.len() as f64;
    if leave_out.len() < 2 {
        return f64::INFINITY;
    }
    let mean = leave_out.iter().sum::<f64>() / g;
    ((g - 1.0) / g * leave_out.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Ratio estimator `Σ sums / Σ counts` with jackknife over groups.
pub fn jackknife_ratio(sums: &[f64], counts: &[f64]) -> Result<Estimate> {
    let total_s: f64 = sums.iter().sum();
    let total_c: f64 = counts.iter().sum();
    if !(total_c > 0.0) {
        return Err(KacError::Domain("no samples".into()));
    }
    let loo: Vec<f64> = sums
        .iter()
        .zip(counts)
        .filter(|(_, &c)| total_c - c > 0.0)
        .map(|(s, c)| (total_s - s) / (total_c - c))
        .collect();
    Ok(Estimate::new(total_s / total_c, jackknife_stderr(&loo)))
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(KacError::Domain(format!(
            "least squares needs two equally long series of length >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(KacError::Domain("least squares with constant abscissa".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Outcome of the Mann–Kendall monotone-trend test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub s: f64,
    pub z: f64,
    /// Two-sided p-value under the no-trend hypothesis.
    pub p_value: f64,
    pub tau: f64,
}

/// Mann–Kendall test with tie correction and continuity correction.
pub fn mann_kendall(xs: &[f64]) -> Result<TrendTest> {
    let n = xs.len();
    if n < 3 {
        return Err(KacError::Domain(format!("trend test needs >= 3 points, got {n}")));
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (xs[j] - xs[i]).partial_cmp(&0.0).map_or(0.0, |o| o as i32 as f64);
        }
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < n {
        let mut e = k + 1;
        while e < n && sorted[e] == sorted[k] {
            e += 1;
        }
        let t = (e - k) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        k = e;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = if var <= 0.0 {
        0.0
    } else if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
    Ok(TrendTest {
        s,
        z,
        p_value,
        tau: s / (nf * (nf - 1.0) / 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept + 1.0).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn mann_kendall_reference_values() {
        // strictly increasing series of 10: S = 45, Var = 125, z = 44/√125
        let up: Vec<f64> = (0..10).map(f64::from).collect();
        let t = mann_kendall(&up).unwrap();
        assert_eq!(t.s, 45.0);
        assert!((t.z - 44.0 / 125f64.sqrt()).abs() < 1e-12);
        assert!(t.p_value < 1e-3);
        assert_eq!(t.tau, 1.0);
        let flat = mann_kendall(&[1.0, 3.0, 2.0, 3.0, 1.0, 2.0]).unwrap();
        assert!(flat.p_value > 0.5);
    }

    #[test]
    fn jackknife_of_mean_matches_classic_stderr() {
        let xs = [1.0, 4.0, 2.0, 8.0, 5.0];
        let ones = [1.0; 5];
        let jk = jackknife_ratio(&xs, &ones).unwrap();
        let classic = mean_stderr(&xs).unwrap();
        assert!((jk.value - classic.value).abs() < 1e-14);
        assert!((jk.stderr - classic.stderr).abs() < 1e-12);
    }
}

//! Small statistics helpers: moments, least squares, χ² goodness of fit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

use crate::error::{CollapseError, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (0 for a single sample).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Binomial standard error of a frequency `p` estimated from `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares y = intercept + slope·x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(CollapseError::Fit("need at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(CollapseError::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if xs.len() > 2 {
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
        slope_se,
    })
}

/// Slope of log(y) against log(x); all values must be positive.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(CollapseError::Fit("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² of observed counts against expected counts.
/// `fitted` parameters reduce the degrees of freedom.
pub fn chi_square(observed: &[f64], expected: &[f64], fitted: usize) -> Result<ChiSquareTest> {
    if observed.len() != expected.len() || observed.len() < fitted + 2 {
        return Err(CollapseError::Fit("not enough bins for a χ² test".into()));
    }
    let statistic: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = observed.len() - 1 - fitted;
    let dist = ChiSquared::new(dof as f64).map_err(|e| CollapseError::Fit(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

/// Merge adjacent bins (left to right) until every expected count is at least `min_expected`.
pub fn merge_sparse_bins(observed: &[f64], expected: &[f64], min_expected: f64) -> (Vec<f64>, Vec<f64>) {
    let mut o_out = Vec::new();
    let mut e_out = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            o_out.push(o_acc);
            e_out.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        if let (Some(lo), Some(le)) = (o_out.last_mut(), e_out.last_mut()) {
            *lo += o_acc;
            *le += e_acc;
        } else {
            o_out.push(o_acc);
            e_out.push(e_acc);
        }
    }
    (o_out, e_out)
}

/// χ² goodness of fit of event counts against Poisson(`mean`), tail bins merged.
pub fn poisson_goodness_of_fit(counts: &[usize], mean: f64) -> Result<ChiSquareTest> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let n = counts.len() as f64;
    let mut observed = vec![0.0; max + 2];
    for &c in counts {
        observed[c] += 1.0;
    }
    let dist = Poisson::new(mean).map_err(|e| CollapseError::Fit(e.to_string()))?;
    let mut expected: Vec<f64> = (0..=max).map(|k| n * dist.pmf(k as u64)).collect();
    // open upper tail
    let covered: f64 = expected.iter().sum();
    expected.push((n - covered).max(0.0));
    let (o, e) = merge_sparse_bins(&observed, &expected, 5.0);
    chi_square(&o, &e, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        let ll = log_log_fit(&[1.0, 10.0, 100.0], &[3.0, 3000.0, 3e6]).unwrap();
        assert!((ll.slope - 3.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_perfect_match() {
        let t = chi_square(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0], 0).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_keeps_totals() {
        let (o, e) = merge_sparse_bins(&[1.0, 2.0, 50.0, 3.0, 1.0], &[1.0, 3.0, 48.0, 2.0, 2.0], 5.0);
        assert_eq!(o.iter().sum::<f64>(), 57.0);
        assert_eq!(e.iter().sum::<f64>(), 56.0);
        assert!(e.iter().all(|x| *x >= 5.0));
    }
}

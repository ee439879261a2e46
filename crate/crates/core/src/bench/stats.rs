//! Replication statistics.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SviError};

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Sample standard deviation with the `R - 1` divisor.
pub fn std_dev(samples: &[f64]) -> f64 {
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (samples.len() - 1) as f64).sqrt()
}

/// Two-sided normal quantile `z_{(1+level)/2}`.
pub fn z_value(level: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&level) {
        return Err(SviError::param(format!(
            "confidence level must lie in [0, 1), got {level}"
        )));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 * (1.0 + level)).max(0.0))
}

/// Normal-approximation interval `mean +- z s / sqrt(R)`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(SviError::param("a confidence interval needs at least two samples"));
    }
    let z = z_value(level)?;
    let m = mean(samples);
    let half = z * std_dev(samples) / (samples.len() as f64).sqrt();
    Ok((m - half, m + half))
}

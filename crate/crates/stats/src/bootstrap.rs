//! Participant-level bootstrap envelopes for population curves.
//!
//! Whole participants are resampled with replacement, the population curve is
//! refitted on each resample, and pointwise percentiles of the refitted curves
//! form the band. Resample `k` draws from its own ChaCha stream derived from
//! the seed, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptive::quantile_sorted;
use crate::error::{Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower_pct: f64,
    pub upper_pct: f64,
    /// Curve fitted on the original cohort.
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resamples: usize,
    /// Resamples whose fit failed and were skipped.
    pub failed: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    pub lower_pct: f64,
    pub upper_pct: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 1000, seed: 7, lower_pct: 5.0, upper_pct: 95.0 }
    }
}

/// `fit` maps a cohort (slice of per-participant units) to a curve of fixed
/// length; it may fail on degenerate resamples, which are counted and skipped.
pub fn bootstrap_band<T, F>(cohort: &[T], opts: &BootstrapOptions, fit: F) -> Result<Band>
where
    T: Clone,
    F: Fn(&[T]) -> Result<Vec<f64>>,
{
    if cohort.is_empty() {
        return Err(StatsError::InsufficientData { needed: 1, got: 0 });
    }
    if !(0.0..=100.0).contains(&opts.lower_pct) || opts.lower_pct > opts.upper_pct || opts.upper_pct > 100.0 {
        return Err(StatsError::InvalidInput("percentiles must satisfy 0 <= lower <= upper <= 100".into()));
    }
    let estimate = fit(cohort)?;
    let len = estimate.len();
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(opts.resamples);
    let mut failed = 0;
    let mut resample = Vec::with_capacity(cohort.len());
    for k in 0..opts.resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(k as u64 + 1);
        resample.clear();
        for _ in 0..cohort.len() {
            resample.push(cohort[rng.random_range(0..cohort.len())].clone());
        }
        match fit(&resample) {
            Ok(curve) if curve.len() == len => curves.push(curve),
            _ => failed += 1,
        }
    }
    if curves.is_empty() {
        return Err(StatsError::Numerical("every bootstrap refit failed".into()));
    }
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut column = Vec::with_capacity(curves.len());
    for i in 0..len {
        column.clear();
        column.extend(curves.iter().map(|c| c[i]));
        column.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&column, opts.lower_pct / 100.0));
        upper.push(quantile_sorted(&column, opts.upper_pct / 100.0));
    }
    Ok(Band {
        lower_pct: opts.lower_pct,
        upper_pct: opts.upper_pct,
        estimate,
        lower,
        upper,
        resamples: opts.resamples,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_curve(cohort: &[Vec<f64>]) -> Result<Vec<f64>> {
        let len = cohort[0].len();
        Ok((0..len)
            .map(|i| cohort.iter().map(|c| c[i]).sum::<f64>() / cohort.len() as f64)
            .collect())
    }

    #[test]
    fn single_participant_has_zero_width() {
        let cohort = vec![vec![1.0, 2.0, 3.0]];
        let b = bootstrap_band(&cohort, &BootstrapOptions { resamples: 50, ..Default::default() }, mean_curve).unwrap();
        assert_eq!(b.lower, b.upper);
        assert_eq!(b.lower, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn deterministic_and_nested() {
        let cohort: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let o90 = BootstrapOptions { resamples: 300, seed: 11, lower_pct: 5.0, upper_pct: 95.0 };
        let o80 = BootstrapOptions { lower_pct: 10.0, upper_pct: 90.0, ..o90 };
        let a = bootstrap_band(&cohort, &o90, mean_curve).unwrap();
        let b = bootstrap_band(&cohort, &o90, mean_curve).unwrap();
        assert_eq!(a, b);
        let inner = bootstrap_band(&cohort, &o80, mean_curve).unwrap();
        for i in 0..2 {
            assert!(a.lower[i] <= inner.lower[i] && inner.upper[i] <= a.upper[i]);
        }
    }

    #[test]
    fn rejects_bad_percentiles() {
        let cohort = vec![vec![1.0]];
        let o = BootstrapOptions { lower_pct: 90.0, upper_pct: 10.0, ..Default::default() };
        assert!(bootstrap_band(&cohort, &o, mean_curve).is_err());
    }
}

//! Mann-Kendall monotonic trend test with the Theil-Sen robust line.
//!
//! The series is assumed evenly spaced; position `i` is used as the abscissa
//! so the slope is in units of `y` per step (per week for weekly means).

use serde::{Deserialize, Serialize};

use crate::descriptive::{median, tie_groups};
use crate::dist::two_sided_normal_p;
use crate::error::{require_finite, require_len, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// Theil-Sen slope per step.
    pub slope: f64,
    /// Intercept at position 0: `median(y) - slope * median(x)`.
    pub intercept: f64,
    pub s: f64,
    pub var_s: f64,
    pub z: f64,
    pub p_value: f64,
    pub n: usize,
}

impl TrendReport {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Kendall's S: sum of `sign(y_j - y_i)` over all `i < j`.
pub fn kendall_s(y: &[f64]) -> f64 {
    let mut s = 0i64;
    for i in 0..y.len() {
        for j in (i + 1)..y.len() {
            let d = y[j] - y[i];
            if d > 0.0 {
                s += 1;
            } else if d < 0.0 {
                s -= 1;
            }
        }
    }
    s as f64
}

/// Variance of S under the null, with the tie correction term.
pub fn kendall_s_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ties: f64 = tie_groups(y)
        .into_iter()
        .filter(|&t| t > 1)
        .map(|t| {
            let t = t as f64;
            t * (t - 1.0) * (2.0 * t + 5.0)
        })
        .sum();
    (n * (n - 1.0) * (2.0 * n + 5.0) - ties) / 18.0
}

/// Median of all pairwise slopes and the matching intercept.
pub fn theil_sen(y: &[f64]) -> Result<(f64, f64)> {
    require_len(y.len(), 2)?;
    require_finite(y)?;
    let n = y.len();
    let mut slopes = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            slopes.push((y[j] - y[i]) / (j - i) as f64);
        }
    }
    let m = median(&slopes);
    let x_median = (n - 1) as f64 / 2.0;
    let b = median(y) - m * x_median;
    Ok((m, b))
}

pub fn mann_kendall(y: &[f64]) -> Result<TrendReport> {
    require_len(y.len(), 3)?;
    require_finite(y)?;
    let s = kendall_s(y);
    let var_s = kendall_s_variance(y);
    let z = if var_s <= 0.0 {
        0.0
    } else if s > 0.0 {
        (s - 1.0) / var_s.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var_s.sqrt()
    } else {
        0.0
    };
    let (slope, intercept) = theil_sen(y)?;
    Ok(TrendReport {
        slope,
        intercept,
        s,
        var_s,
        z,
        p_value: two_sided_normal_p(z),
        n: y.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::StatsError;

    #[test]
    fn increasing_series_has_all_pairs_positive() {
        let r = mann_kendall(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.s, 10.0);
        assert!(r.z > 0.0);
        assert_eq!(r.slope, 1.0);
        assert_eq!(r.intercept, 1.0);
    }

    #[test]
    fn constant_series_has_no_trend() {
        let r = mann_kendall(&[3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(r.s, 0.0);
        assert_eq!(r.var_s, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!((r.slope, r.intercept), (0.0, 3.0));
    }

    #[test]
    fn small_hand_case() {
        // pairs of [1,3,2,4]: (1,3)+ (1,2)+ (1,4)+ (3,2)- (3,4)+ (2,4)+
        let r = mann_kendall(&[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.s, 4.0);
        // var = 4*3*13/18
        assert!((r.var_s - 156.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn theil_sen_three_points() {
        // slopes {1, 5, 2.5} -> 2.5; b = 1 - 2.5 * 1
        let (m, b) = theil_sen(&[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(b, -1.5);
    }

    #[test]
    fn exact_line_is_recovered() {
        let y: Vec<f64> = (0..9).map(|x| 2.0 * x as f64 + 1.0).collect();
        assert_eq!(theil_sen(&y).unwrap(), (2.0, 1.0));
    }

    #[test]
    fn too_short() {
        assert_eq!(
            mann_kendall(&[1.0, 2.0]).unwrap_err(),
            StatsError::InsufficientData { needed: 3, got: 2 }
        );
    }

    #[test]
    fn tie_correction_reduces_variance() {
        let plain = kendall_s_variance(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let tied = kendall_s_variance(&[1.0, 2.0, 2.0, 4.0, 5.0]);
        assert!(tied < plain);
        // one tie group of 2: 2*1*9 = 18 -> variance drops by exactly 1
        assert!((plain - tied - 1.0).abs() < 1e-12);
    }
}

//! Wilcoxon signed-rank and Mann-Whitney U tests.
//!
//! Small samples use the exact permutation distribution of the (average-rank)
//! statistic. Ranks are doubled so tied half-integer ranks become integers and
//! the null distribution can be counted exactly. Two-sided p-values are
//! `min(1, 2 * min(P(T <= t), P(T >= t)))`.

use serde::{Deserialize, Serialize};

use crate::descriptive::{average_ranks, tie_groups};
use crate::dist::two_sided_normal_p;
use crate::error::{require_finite, Result, StatsError};

/// Largest number of non-zero differences handled by exact enumeration.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
/// Exact Mann-Whitney is used when the smaller group has at most this many members...
pub const MANN_WHITNEY_EXACT_MAX_MIN_GROUP: usize = 8;
/// ...and the pooled sample is no larger than this.
pub const MANN_WHITNEY_EXACT_MAX_TOTAL: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    /// `W+` for Wilcoxon, `U` of the first sample for Mann-Whitney.
    pub statistic: f64,
    pub p_value: f64,
    pub method: PMethod,
    /// Number of non-zero pairs (Wilcoxon) or pooled size (Mann-Whitney).
    pub n: usize,
}

fn two_sided_from_counts(lower: u128, upper: u128, total: u128) -> f64 {
    let tail = lower.min(upper) as f64;
    (2.0 * tail / total as f64).min(1.0)
}

fn continuity_z(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 0.0;
    }
    let d = stat - mean;
    if d.abs() <= 0.5 {
        0.0
    } else {
        (d - 0.5 * d.signum()) / var.sqrt()
    }
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<RankTest> {
    if a.len() != b.len() {
        return Err(StatsError::InvalidInput(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    require_finite(a)?;
    require_finite(b)?;
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(StatsError::InsufficientData { needed: 1, got: 0 });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= WILCOXON_EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total_sum: usize = doubled.iter().sum();
        let mut counts = vec![0u128; total_sum + 1];
        counts[0] = 1;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let observed = (2.0 * w_plus).round() as usize;
        let lower: u128 = counts[..=observed].iter().sum();
        let upper: u128 = counts[observed..].iter().sum();
        return Ok(RankTest {
            statistic: w_plus,
            p_value: two_sided_from_counts(lower, upper, 1u128 << n),
            method: PMethod::Exact,
            n,
        });
    }

    let nf = n as f64;
    let ties: f64 = tie_groups(&abs)
        .into_iter()
        .map(|t| (t * t * t - t) as f64)
        .sum();
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = continuity_z(w_plus, mean, var);
    Ok(RankTest {
        statistic: w_plus,
        p_value: two_sided_normal_p(z),
        method: PMethod::NormalApprox,
        n,
    })
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<RankTest> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::InsufficientData {
            needed: 1,
            got: a.len().min(b.len()),
        });
    }
    require_finite(a)?;
    require_finite(b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    let total = na + nb;

    if na.min(nb) <= MANN_WHITNEY_EXACT_MAX_MIN_GROUP && total <= MANN_WHITNEY_EXACT_MAX_TOTAL {
        // Count the null distribution of the smaller group's doubled rank sum.
        let (k, group_ranks) = if na <= nb {
            (na, &ranks[..na])
        } else {
            (nb, &ranks[na..])
        };
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = {
            let mut d = doubled.clone();
            d.sort_unstable_by(|x, y| y.cmp(x));
            d[..k].iter().sum()
        };
        // dp[j][s]: subsets of size j with doubled rank sum s
        let mut dp = vec![vec![0u128; max_sum + 1]; k + 1];
        dp[0][0] = 1;
        for &r in &doubled {
            for j in (1..=k).rev() {
                let (prev, cur) = dp.split_at_mut(j);
                let prev = &prev[j - 1];
                for s in (r..=max_sum).rev() {
                    if prev[s - r] != 0 {
                        cur[0][s] += prev[s - r];
                    }
                }
            }
        }
        let observed = group_ranks.iter().map(|r| (2.0 * r).round() as usize).sum::<usize>();
        let dist = &dp[k];
        let lower: u128 = dist[..=observed].iter().sum();
        let upper: u128 = dist[observed..].iter().sum();
        let all: u128 = dist.iter().sum();
        return Ok(RankTest {
            statistic: u_a,
            p_value: two_sided_from_counts(lower, upper, all),
            method: PMethod::Exact,
            n: total,
        });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, total as f64);
    let ties: f64 = tie_groups(&pooled)
        .into_iter()
        .map(|t| (t * t * t - t) as f64)
        .sum();
    let mean = naf * nbf / 2.0;
    let var = naf * nbf / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    let z = continuity_z(u_a, mean, var);
    Ok(RankTest {
        statistic: u_a,
        p_value: two_sided_normal_p(z),
        method: PMethod::NormalApprox,
        n: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over all 2^n sign assignments of the doubled ranks.
    fn wilcoxon_enumerate(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
        let ranks = average_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let r2: Vec<u64> = ranks.iter().map(|r| (2.0 * r) as u64).collect();
        let obs: u64 = d.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let n = d.len();
        let (mut lo, mut hi) = (0u128, 0u128);
        for mask in 0u64..(1 << n) {
            let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r2[i]).sum();
            if s <= obs {
                lo += 1;
            }
            if s >= obs {
                hi += 1;
            }
        }
        (2.0 * lo.min(hi) as f64 / (1u128 << n) as f64).min(1.0)
    }

    #[test]
    fn identical_pairs_are_rejected() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(
            wilcoxon_signed_rank(&a, &a).unwrap_err(),
            StatsError::InsufficientData { needed: 1, got: 0 }
        );
    }

    #[test]
    fn six_pair_hand_case_matches_enumeration() {
        let a = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88];
        let b = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, PMethod::Exact);
        // five positive differences, the negative one has rank 1 -> W+ = 20
        assert_eq!(r.statistic, 20.0);
        // only the all-positive (21) and our W+=20 assignments are >= 20 -> 2/64 * 2
        assert!((r.p_value - 4.0 / 64.0).abs() < 1e-15);
        assert!((r.p_value - wilcoxon_enumerate(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_with_ties_matches_enumeration() {
        let a = [3.0, 5.0, 2.0, 7.0, 4.0, 4.0, 6.0, 1.0];
        let b = [1.0, 3.0, 3.0, 5.0, 2.0, 4.0, 3.0, 2.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!((r.p_value - wilcoxon_enumerate(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.5 + 1.0).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 * 0.45).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, PMethod::NormalApprox);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn mann_whitney_identical_samples_split_evenly() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn mann_whitney_fully_separated() {
        let lo = [1.0, 2.0, 3.0, 4.0];
        let hi = [10.0, 11.0, 12.0, 13.0, 14.0];
        assert_eq!(mann_whitney_u(&lo, &hi).unwrap().statistic, 0.0);
        let r = mann_whitney_u(&hi, &lo).unwrap();
        assert_eq!(r.statistic, 20.0);
        // one extreme labeling of C(9,4)=126 in each tail
        assert!((r.p_value - 2.0 / 126.0).abs() < 1e-15);
    }

    #[test]
    fn mann_whitney_large_groups_normal() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, PMethod::NormalApprox);
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }
}

//! Interrupted time series on per-participant z-scored daily intensities
//! aligned on each participant's action week.
//!
//! Annotation days before the action week are indexed `-k..=-1` (closest day is
//! `-1`), days after it `0..k` (first day is `0`); the action week itself is
//! dropped. The pooled segmented regression is
//! `z = b0 + b1 t + b2 post + b3 post * t`, so `b2` is the level change at the
//! interruption and `b1`, `b1 + b3` are the pre- and post-action slopes.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::t_ppf;
use crate::error::{Result, StatsError};
use crate::normalize::zscore;
use crate::ols::ols;

pub const DEFAULT_WINDOW_DAYS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyIntensity {
    pub participant: String,
    /// Day index since enrolment (0-based); only the ordering matters.
    pub day: i64,
    /// 1-based study week the day falls in.
    pub week: u32,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItsReport {
    pub baseline: Coefficient,
    pub pre_slope: Coefficient,
    pub slope_change: Coefficient,
    pub level_change: Coefficient,
    pub post_slope: f64,
    pub window_days: usize,
    pub n_participants: usize,
    pub n_points: usize,
    /// Participants lacking pre- or post-action data.
    pub skipped: Vec<String>,
    /// Participants whose series had zero variance (z-scores set to 0).
    pub degenerate: Vec<String>,
    /// Mean z-score per aligned day index, for plotting.
    pub mean_by_day: Vec<(i64, f64)>,
    /// Pre-action line extended over the post-action days.
    pub counterfactual: Vec<(i64, f64)>,
}

pub fn interrupted_time_series(
    days: &[DailyIntensity],
    action_weeks: &BTreeMap<String, u32>,
    window_days: usize,
) -> Result<ItsReport> {
    if window_days == 0 {
        return Err(StatsError::InvalidInput("window must be at least one day".into()));
    }
    let mut series: BTreeMap<&str, Vec<&DailyIntensity>> = BTreeMap::new();
    for d in days {
        if action_weeks.contains_key(&d.participant) {
            series.entry(d.participant.as_str()).or_default().push(d);
        }
    }

    let mut t_all = Vec::new();
    let mut post_all = Vec::new();
    let mut z_all = Vec::new();
    let mut skipped = Vec::new();
    let mut degenerate = Vec::new();
    let mut used = 0usize;

    for (id, mut rows) in series {
        rows.sort_by_key(|d| d.day);
        let action = action_weeks[id];
        let values: Vec<f64> = rows.iter().map(|d| d.intensity).collect();
        let z = zscore(&values);
        if z.degenerate {
            degenerate.push(id.to_string());
        }
        let pre: Vec<(usize, &&DailyIntensity)> =
            rows.iter().enumerate().filter(|(_, d)| d.week < action).collect();
        let post: Vec<(usize, &&DailyIntensity)> =
            rows.iter().enumerate().filter(|(_, d)| d.week > action).collect();
        if pre.is_empty() || post.is_empty() {
            skipped.push(id.to_string());
            continue;
        }
        used += 1;
        let pre_tail = &pre[pre.len().saturating_sub(window_days)..];
        for (k, (i, _)) in pre_tail.iter().rev().enumerate() {
            t_all.push(-(k as f64) - 1.0);
            post_all.push(0.0);
            z_all.push(z.values[*i]);
        }
        for (k, (i, _)) in post.iter().take(window_days).enumerate() {
            t_all.push(k as f64);
            post_all.push(1.0);
            z_all.push(z.values[*i]);
        }
    }
    if used == 0 {
        return Err(StatsError::InsufficientData { needed: 1, got: 0 });
    }

    let n = z_all.len();
    let design = DMatrix::from_fn(n, 4, |i, j| match j {
        0 => 1.0,
        1 => t_all[i],
        2 => post_all[i],
        _ => post_all[i] * t_all[i],
    });
    let fit = ols(&design, &z_all)?;
    let q = t_ppf(0.975, fit.df_resid as f64);
    let coef = |j: usize| {
        let (e, se) = (fit.coefficients[j], fit.std_errors[j]);
        Coefficient { estimate: e, std_error: se, p_value: fit.p_values[j], ci_low: e - q * se, ci_high: e + q * se }
    };

    let mut by_day: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (t, z) in t_all.iter().zip(&z_all) {
        let e = by_day.entry(*t as i64).or_insert((0.0, 0));
        e.0 += z;
        e.1 += 1;
    }
    let mean_by_day: Vec<(i64, f64)> = by_day.into_iter().map(|(t, (s, c))| (t, s / c as f64)).collect();
    let (b0, b1) = (fit.coefficients[0], fit.coefficients[1]);
    let counterfactual = mean_by_day
        .iter()
        .filter(|(t, _)| *t >= 0)
        .map(|(t, _)| (*t, b0 + b1 * *t as f64))
        .collect();

    Ok(ItsReport {
        baseline: coef(0),
        pre_slope: coef(1),
        slope_change: coef(3),
        level_change: coef(2),
        post_slope: fit.coefficients[1] + fit.coefficients[3],
        window_days,
        n_participants: used,
        n_points: n,
        skipped,
        degenerate,
        mean_by_day,
        counterfactual,
    })
}

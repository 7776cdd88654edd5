//! Statistical procedures for longitudinal stress self-report studies:
//! Mann-Kendall / Theil-Sen trends, REML mixed-effects regression,
//! interrupted time series, rank tests, normality checks, participant
//! bootstrap bands and retention curves.

pub mod bootstrap;
pub mod descriptive;
pub mod dist;
pub mod error;
pub mod its;
pub mod lmm;
pub mod nonparam;
pub mod normality;
pub mod normalize;
pub mod ols;
pub mod optim;
pub mod survival;
pub mod trend;

pub use bootstrap::{bootstrap_band, Band, BootstrapOptions};
pub use error::{Result, StatsError};
pub use its::{interrupted_time_series, DailyIntensity, ItsReport};
pub use lmm::{filter_participants, fit_lmm, LmmFit, LmmOptions, Observation, RandomEffects};
pub use nonparam::{mann_whitney_u, wilcoxon_signed_rank, PMethod, RankTest};
pub use normality::{shapiro_wilk, ShapiroWilk};
pub use normalize::{zscore, zscore_per_participant, ZScored};
pub use survival::{retention_curve, RetentionCurve};
pub use trend::{mann_kendall, theil_sen, TrendReport};

/// Trend of stressor-entry durations over successive annotated episodes.
pub fn entry_time_trend(durations_by_episode: &[f64]) -> Result<TrendReport> {
    mann_kendall(durations_by_episode)
}

//! Analysis documents shared by the HTTP report routes, background jobs and
//! the `analyze` subcommand, so every path produces the same JSON.

use std::fmt;
use std::str::FromStr;

use moods_core::analysis::{its, lmm, retention, weekly_trend, AnalysisOptions, Metric, Weighting};
use moods_core::platform::ParticipantSnapshot;
use moods_core::CoreError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    /// Mann-Kendall trend and Theil-Sen slope of weekly means.
    Trends,
    /// Random intercept and slope model of participant weekly means.
    Lmm,
    /// Level and slope change around the reported action week.
    Its,
    /// Kaplan-Meier retention over study days.
    Retention,
}

impl AnalysisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisKind::Trends => "trends",
            AnalysisKind::Lmm => "lmm",
            AnalysisKind::Its => "its",
            AnalysisKind::Retention => "retention",
        }
    }
}

impl fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, CoreError> {
        match s {
            "trends" => Ok(AnalysisKind::Trends),
            "lmm" => Ok(AnalysisKind::Lmm),
            "its" => Ok(AnalysisKind::Its),
            "retention" => Ok(AnalysisKind::Retention),
            other => Err(CoreError::NotFound(format!("analysis {other:?}"))),
        }
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown weighting {s:?}"))
}

/// Optional knobs; unset fields take the study defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default)]
pub struct AnalysisParams {
    /// intensity or frequency
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
    /// participant_mean or pooled
    #[arg(long, value_parser = parse_weighting)]
    pub weighting: Option<Weighting>,
    #[arg(long)]
    pub first_week: Option<u32>,
    #[arg(long)]
    pub min_weeks: Option<usize>,
    #[arg(long)]
    pub window_days: Option<usize>,
}

/// Parameters with every default filled in, echoed in the document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub metric: Metric,
    pub weighting: Weighting,
    pub first_week: u32,
    pub min_weeks: usize,
    pub window_days: usize,
}

impl AnalysisParams {
    pub fn resolve(&self) -> ResolvedParams {
        let d = AnalysisOptions::default();
        ResolvedParams {
            metric: self.metric.unwrap_or(Metric::Intensity),
            weighting: self.weighting.unwrap_or(Weighting::ParticipantMean),
            first_week: self.first_week.unwrap_or(1),
            min_weeks: self.min_weeks.unwrap_or(d.lmm_min_weeks),
            window_days: self.window_days.unwrap_or(d.its_window_days),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDocument {
    pub analysis: AnalysisKind,
    pub params: ResolvedParams,
    pub participants: usize,
    pub result: Value,
}

pub fn run_analysis(
    kind: AnalysisKind,
    params: &AnalysisParams,
    snapshots: &[ParticipantSnapshot],
) -> Result<AnalysisDocument, CoreError> {
    let p = params.resolve();
    let result = match kind {
        AnalysisKind::Trends => serde_json::to_value(weekly_trend(snapshots, p.metric, p.weighting, p.first_week)?)?,
        AnalysisKind::Lmm => serde_json::to_value(lmm(snapshots, p.metric, p.min_weeks)?)?,
        AnalysisKind::Its => serde_json::to_value(its(snapshots, p.window_days)?)?,
        AnalysisKind::Retention => serde_json::to_value(retention(snapshots))?,
    };
    Ok(AnalysisDocument { analysis: kind, params: p, participants: snapshots.len(), result })
}

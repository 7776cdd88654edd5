//! Weekly reflection charts.
//!
//! Builders turn a participant's cumulative, non-private annotations into
//! renderer-agnostic [`ChartSpec`] documents. Serialization is deterministic:
//! all maps are ordered and records are sorted before aggregation.

mod bundle;
mod charts;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::domain::{
    hour_of, EventId, GeoPoint, PhysiologicalEvent, StressAnnotation, StressRatingLevel, StudyClock, Timestamp,
};
use crate::error::CoreError;

pub use bundle::sha256_hex;
pub use bundle::{assemble_bundle, write_bundle, BundleManifest, ChartBundle, ManifestEntry};
pub use charts::{build_chart, gaussian_kde, silverman_bandwidth, BoxSummary};

pub const SCHEMA_VERSION: u32 = 1;
pub const LAST_SCHEDULED_WEEK: u32 = 14;
pub const UNSPECIFIED: &str = "(unspecified)";
const ABBREVIATE_OVER: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    OverallSummary,
    ProminentStressorContext,
    MapView,
    StressorPrevalence,
    LocationProminence,
    CalendarView,
    StressorRanking,
    WeeklyTrend,
    WeeklyPrevalence,
    TimeOfDayTrend,
    LocationTrend,
    DayOfWeek,
    DurationDistribution,
    PrevalentDuration,
    StressorWordCloud,
    LocationWordCloud,
}

impl ChartKind {
    /// In introduction order.
    pub const ALL: [ChartKind; 16] = [
        ChartKind::OverallSummary,
        ChartKind::ProminentStressorContext,
        ChartKind::MapView,
        ChartKind::StressorPrevalence,
        ChartKind::LocationProminence,
        ChartKind::CalendarView,
        ChartKind::StressorRanking,
        ChartKind::WeeklyTrend,
        ChartKind::WeeklyPrevalence,
        ChartKind::TimeOfDayTrend,
        ChartKind::LocationTrend,
        ChartKind::DayOfWeek,
        ChartKind::DurationDistribution,
        ChartKind::PrevalentDuration,
        ChartKind::StressorWordCloud,
        ChartKind::LocationWordCloud,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ChartKind::OverallSummary => "overall_summary",
            ChartKind::ProminentStressorContext => "prominent_stressor_context",
            ChartKind::MapView => "map_view",
            ChartKind::StressorPrevalence => "stressor_prevalence",
            ChartKind::LocationProminence => "location_prominence",
            ChartKind::CalendarView => "calendar_view",
            ChartKind::StressorRanking => "stressor_ranking",
            ChartKind::WeeklyTrend => "weekly_trend",
            ChartKind::WeeklyPrevalence => "weekly_prevalence",
            ChartKind::TimeOfDayTrend => "time_of_day_trend",
            ChartKind::LocationTrend => "location_trend",
            ChartKind::DayOfWeek => "day_of_week",
            ChartKind::DurationDistribution => "duration_distribution",
            ChartKind::PrevalentDuration => "prevalent_duration",
            ChartKind::StressorWordCloud => "stressor_word_cloud",
            ChartKind::LocationWordCloud => "location_word_cloud",
        }
    }

    /// Week in which the chart first appears.
    pub fn introduced_in_week(self) -> u32 {
        match self {
            ChartKind::OverallSummary | ChartKind::ProminentStressorContext => 1,
            ChartKind::StressorWordCloud | ChartKind::LocationWordCloud => 14,
            other => ChartKind::ALL.iter().position(|k| *k == other).unwrap() as u32,
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ChartKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChartKind::ALL
            .iter()
            .copied()
            .find(|k| k.id() == s)
            .ok_or_else(|| CoreError::Validation(format!("unknown chart id {s:?}")))
    }
}

/// Charts delivered in `week`; cumulative, and frozen after the last week.
pub fn schedule(week: u32) -> Vec<ChartKind> {
    let w = week.min(LAST_SCHEDULED_WEEK);
    ChartKind::ALL.iter().copied().filter(|k| k.introduced_in_week() <= w).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBlock {
    Night,
    Morning,
    Afternoon,
    Evening,
}

impl TimeBlock {
    pub const ALL: [TimeBlock; 4] = [TimeBlock::Night, TimeBlock::Morning, TimeBlock::Afternoon, TimeBlock::Evening];

    pub fn of_hour(hour: u32) -> Self {
        match hour {
            0..=5 => TimeBlock::Night,
            6..=11 => TimeBlock::Morning,
            12..=17 => TimeBlock::Afternoon,
            _ => TimeBlock::Evening,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TimeBlock::Night => "night",
            TimeBlock::Morning => "morning",
            TimeBlock::Afternoon => "afternoon",
            TimeBlock::Evening => "evening",
        }
    }
}

/// Initial letters for long labels; short labels pass through.
pub fn abbreviate(label: &str) -> String {
    if label.chars().count() <= ABBREVIATE_OVER {
        return label.to_string();
    }
    label
        .split(|c: char| c.is_whitespace() || c == '/' || c == '-')
        .filter_map(|w| w.chars().next())
        .flat_map(char::to_uppercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Hierarchy from the root ring down to this point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, serde_json::Value>,
}

impl Point {
    pub fn new(value: f64) -> Self {
        Self { x: None, y: None, value, label: None, path: Vec::new(), detail: BTreeMap::new() }
    }

    pub fn at(mut self, x: f64, y: Option<f64>) -> Self {
        self.x = Some(x);
        self.y = y;
        self
    }

    /// Sets the (possibly abbreviated) label and records the full text.
    pub fn labelled(mut self, full: &str) -> Self {
        let short = abbreviate(full);
        if short != full {
            self.detail.insert("full_text".into(), full.into());
        }
        self.label = Some(short);
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.detail.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_text: Option<String>,
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stats: BTreeMap<String, f64>,
}

impl Series {
    pub fn new(id: &str, points: Vec<Point>) -> Self {
        let label = abbreviate(id);
        let full_text = (label != id).then(|| id.to_string());
        Self { id: id.to_string(), label, full_text, points, stats: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Axis {
    pub fn new(name: &str, label: &str) -> Self {
        Self { name: name.into(), label: label.into(), categories: Vec::new() }
    }

    pub fn categorical(name: &str, label: &str, categories: Vec<String>) -> Self {
        Self { name: name.into(), label: label.into(), categories }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorScale {
    pub palette: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 2]>,
}

impl ColorScale {
    pub fn categorical() -> Self {
        Self { palette: "okabe-ito".into(), kind: "categorical".into(), domain: None }
    }

    pub fn sequential(lo: f64, hi: f64) -> Self {
        Self { palette: "viridis".into(), kind: "sequential".into(), domain: Some([lo, hi]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub toggleable: bool,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub schema_version: u32,
    pub chart_id: ChartKind,
    pub week_index: u32,
    pub title: String,
    pub axes: Vec<Axis>,
    pub legend: Legend,
    pub color_scale: ColorScale,
    pub series: Vec<Series>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ChartSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chart specs serialize")
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(serde_json::Value::as_f64)
    }
}

/// One non-private event joined with its annotation (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct VizRecord {
    pub event_id: EventId,
    pub start: Timestamp,
    pub local: NaiveDateTime,
    pub week: u32,
    pub study_day: i64,
    pub duration_min: f64,
    pub score: f64,
    pub detected: bool,
    pub rating: Option<StressRatingLevel>,
    pub stressor: Option<String>,
    pub location: Option<String>,
    pub gps: Option<GeoPoint>,
}

impl VizRecord {
    /// Counts toward stressed-duration totals.
    pub fn is_stressed(&self) -> bool {
        self.rating.is_some_and(StressRatingLevel::counts_as_stressed)
    }

    pub fn stressor_or_unspecified(&self) -> &str {
        self.stressor.as_deref().unwrap_or(UNSPECIFIED)
    }

    pub fn location_or_unspecified(&self) -> &str {
        self.location.as_deref().unwrap_or(UNSPECIFIED)
    }

    pub fn hour(&self) -> u32 {
        hour_of(&self.local)
    }

    pub fn block(&self) -> TimeBlock {
        TimeBlock::of_hour(self.hour())
    }
}

/// Immutable chart input: cumulative data up to and including `week`.
#[derive(Debug, Clone)]
pub struct VizInput {
    pub week: u32,
    pub records: Vec<VizRecord>,
}

impl VizInput {
    /// Joins events and annotations, dropping private annotations together
    /// with their events and anything after `week`.
    pub fn new(clock: &StudyClock, events: &[PhysiologicalEvent], annotations: &[StressAnnotation], week: u32) -> Self {
        let by_event: BTreeMap<&EventId, &StressAnnotation> = annotations.iter().map(|a| (&a.event_id, a)).collect();
        let mut records: Vec<VizRecord> = events
            .iter()
            .filter_map(|e| {
                let ann = by_event.get(&e.event_id).copied();
                if ann.is_some_and(|a| a.is_private) {
                    return None;
                }
                let local = e.local_start();
                let w = clock.week_index(local.date());
                (w <= week).then(|| VizRecord {
                    event_id: e.event_id.clone(),
                    start: e.start,
                    local,
                    week: w,
                    study_day: clock.study_day(local.date()),
                    duration_min: e.duration_min,
                    score: e.score,
                    detected: e.is_detected(),
                    rating: ann.map(|a| a.rating),
                    stressor: ann.and_then(|a| a.stressor_text.clone()),
                    location: ann.and_then(|a| a.semantic_location.clone()),
                    gps: ann.and_then(|a| a.gps).or(e.location),
                })
            })
            .collect();
        records.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.event_id.cmp(&b.event_id)));
        Self { week: week.max(1), records }
    }

    /// Records that carry a stressor description.
    pub fn stressor_reports(&self) -> impl Iterator<Item = &VizRecord> {
        self.records.iter().filter(|r| r.stressor.is_some())
    }

    pub fn stressed(&self) -> impl Iterator<Item = &VizRecord> {
        self.records.iter().filter(|r| r.is_stressed())
    }

    pub fn total_stressed_min(&self) -> f64 {
        self.stressed().map(|r| r.duration_min).sum()
    }
}

//! Shared vocabulary: events, ratings, annotations, weekly surveys and the
//! study clock.
//!
//! Timestamps are integer epoch seconds (UTC). Every record that needs a wall
//! clock carries the participant's `tz_offset_min` captured at the time.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(ParticipantId);
string_id!(EventId);

pub type Timestamp = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Wall-clock time for an epoch timestamp at a fixed UTC offset.
pub fn local_datetime(ts: Timestamp, tz_offset_min: i32) -> NaiveDateTime {
    DateTime::from_timestamp(ts + i64::from(tz_offset_min) * 60, 0)
        .expect("timestamp in chrono range")
        .naive_utc()
}

pub fn local_date(ts: Timestamp, tz_offset_min: i32) -> NaiveDate {
    local_datetime(ts, tz_offset_min).date()
}

/// Epoch seconds of local midnight starting `date`.
pub fn local_midnight(date: NaiveDate, tz_offset_min: i32) -> Timestamp {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() - i64::from(tz_offset_min) * 60
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    #[default]
    Detector,
    /// Synthetic event created for a manual self-report; its score is not a
    /// detector output and is left out of score-based aggregates.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysiologicalEvent {
    pub event_id: EventId,
    pub participant_id: ParticipantId,
    pub start: Timestamp,
    pub end: Timestamp,
    pub duration_min: f64,
    pub score: f64,
    pub tz_offset_min: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "is_detector")]
    pub source: EventSource,
}

fn is_detector(s: &EventSource) -> bool {
    *s == EventSource::Detector
}

impl PhysiologicalEvent {
    pub fn new(
        event_id: impl Into<EventId>,
        participant_id: impl Into<ParticipantId>,
        start: Timestamp,
        end: Timestamp,
        score: f64,
        tz_offset_min: i32,
    ) -> Result<Self> {
        let ev = Self {
            event_id: event_id.into(),
            participant_id: participant_id.into(),
            start,
            end,
            duration_min: (end - start) as f64 / 60.0,
            score,
            tz_offset_min,
            location: None,
            source: EventSource::Detector,
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn with_location(mut self, location: GeoPoint) -> Self {
        self.location = Some(location);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.end <= self.start {
            return Err(CoreError::Validation(format!(
                "event {} ends ({}) before it starts ({})",
                self.event_id, self.end, self.start
            )));
        }
        if !(0.0..=100.0).contains(&self.score) {
            return Err(CoreError::Validation(format!(
                "event {} score {} outside [0, 100]",
                self.event_id, self.score
            )));
        }
        let expected = (self.end - self.start) as f64 / 60.0;
        if (self.duration_min - expected).abs() > 1.0 / 60.0 {
            return Err(CoreError::Validation(format!(
                "event {} duration {} does not match end - start ({expected})",
                self.event_id, self.duration_min
            )));
        }
        if self.event_id.0.is_empty() || self.participant_id.0.is_empty() {
            return Err(CoreError::Validation("event and participant ids are required".into()));
        }
        Ok(())
    }

    pub fn local_start(&self) -> NaiveDateTime {
        local_datetime(self.start, self.tz_offset_min)
    }

    pub fn is_detected(&self) -> bool {
        self.source == EventSource::Detector
    }
}

/// Five-level momentary rating, ordered from calm to stressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressRatingLevel {
    NotStressed = 0,
    ProbablyNotStressed = 1,
    Unsure = 2,
    ProbablyStressed = 3,
    Stressed = 4,
}

impl StressRatingLevel {
    pub const ALL: [StressRatingLevel; 5] = [
        StressRatingLevel::NotStressed,
        StressRatingLevel::ProbablyNotStressed,
        StressRatingLevel::Unsure,
        StressRatingLevel::ProbablyStressed,
        StressRatingLevel::Stressed,
    ];

    pub fn from_intensity(v: u8) -> Option<Self> {
        Self::ALL.get(usize::from(v)).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            StressRatingLevel::NotStressed => "Not stressed",
            StressRatingLevel::ProbablyNotStressed => "Probably not stressed",
            StressRatingLevel::Unsure => "Unsure",
            StressRatingLevel::ProbablyStressed => "Probably stressed",
            StressRatingLevel::Stressed => "Stressed",
        }
    }

    /// Counts toward stressed-minute totals (Unsure does not).
    pub fn counts_as_stressed(self) -> bool {
        matches!(self, StressRatingLevel::ProbablyStressed | StressRatingLevel::Stressed)
    }
}

/// Stress intensity on the 0..=4 scale.
pub fn rating_to_intensity(rating: StressRatingLevel) -> u8 {
    rating as u8
}

/// Ratings that open the stressor / location entry step.
pub fn requires_stressor(rating: StressRatingLevel) -> bool {
    matches!(
        rating,
        StressRatingLevel::Unsure | StressRatingLevel::ProbablyStressed | StressRatingLevel::Stressed
    )
}

/// Weekly "how many times a day were you stressed" answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyChoice {
    AtMostOnce = 1,
    OnceToTwice = 2,
    TwiceToThrice = 3,
    FourOrMore = 4,
}

impl FrequencyChoice {
    pub const ALL: [FrequencyChoice; 4] = [
        FrequencyChoice::AtMostOnce,
        FrequencyChoice::OnceToTwice,
        FrequencyChoice::TwiceToThrice,
        FrequencyChoice::FourOrMore,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FrequencyChoice::AtMostOnce => "At most once",
            FrequencyChoice::OnceToTwice => "More than once but at most twice",
            FrequencyChoice::TwiceToThrice => "More than twice but at most three times",
            FrequencyChoice::FourOrMore => "Four or more times",
        }
    }

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.value() == v)
    }
}

impl FromStr for FrequencyChoice {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| CoreError::Validation(format!("unknown frequency option {s:?}")))
    }
}

/// Stress frequency value (1..=4) for a survey option label.
pub fn frequency_to_value(option: &str) -> Result<u8> {
    option.parse::<FrequencyChoice>().map(FrequencyChoice::value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VizImpact {
    AwarenessOfPatterns,
    ContextualUnderstanding,
    MotivatedToReduce,
    TookSpecificAction,
    SawReductionFromChange,
    ReinforcedBenefit,
    None,
}

impl VizImpact {
    pub const ALL: [VizImpact; 7] = [
        VizImpact::AwarenessOfPatterns,
        VizImpact::ContextualUnderstanding,
        VizImpact::MotivatedToReduce,
        VizImpact::TookSpecificAction,
        VizImpact::SawReductionFromChange,
        VizImpact::ReinforcedBenefit,
        VizImpact::None,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VizImpact::AwarenessOfPatterns => "Increased awareness of stress patterns",
            VizImpact::ContextualUnderstanding => "Contextual understanding of stressors",
            VizImpact::MotivatedToReduce => "Motivated to reduce stress",
            VizImpact::TookSpecificAction => "Took specific action to reduce stress",
            VizImpact::SawReductionFromChange => "Saw a reduction in stress from a behavior change",
            VizImpact::ReinforcedBenefit => "Reinforced the benefit of a behavior change",
            VizImpact::None => "None",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressAnnotation {
    pub event_id: EventId,
    pub participant_id: ParticipantId,
    pub rating: StressRatingLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stressor_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps: Option<GeoPoint>,
    pub is_private: bool,
    pub is_manual: bool,
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_at: Option<Timestamp>,
    /// Seconds between opening the stressor entry task and completing it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_duration_s: Option<i64>,
    /// Incremented on every stored change; used for idempotent log appends.
    pub version: u32,
}

impl StressAnnotation {
    pub fn intensity(&self) -> u8 {
        rating_to_intensity(self.rating)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySurvey {
    pub participant_id: ParticipantId,
    pub week_index: u32,
    pub frequency: FrequencyChoice,
    pub recall_ease: u8,
    pub viz_impacts: BTreeSet<VizImpact>,
    pub submitted_at: Timestamp,
    #[serde(default)]
    pub late: bool,
}

impl WeeklySurvey {
    pub fn validate(&self) -> Result<()> {
        if self.week_index == 0 {
            return Err(CoreError::Validation("week_index is 1-based".into()));
        }
        if !(1..=5).contains(&self.recall_ease) {
            return Err(CoreError::Validation(format!(
                "recall_ease {} outside 1..=5",
                self.recall_ease
            )));
        }
        if self.viz_impacts.contains(&VizImpact::None) && self.viz_impacts.len() > 1 {
            return Err(CoreError::Validation("\"none\" cannot be combined with other impacts".into()));
        }
        Ok(())
    }

    pub fn frequency_value(&self) -> u8 {
        self.frequency.value()
    }
}

/// Maps local dates to 1-based study weeks counted from enrolment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyClock {
    pub participant_id: ParticipantId,
    pub enrollment_day: NaiveDate,
}

impl StudyClock {
    pub fn new(participant_id: impl Into<ParticipantId>, enrollment_day: NaiveDate) -> Self {
        Self { participant_id: participant_id.into(), enrollment_day }
    }

    /// Days since enrolment (negative before enrolment).
    pub fn study_day(&self, date: NaiveDate) -> i64 {
        (date - self.enrollment_day).num_days()
    }

    /// 1-based week; days before enrolment are clamped into week 1.
    pub fn week_index(&self, date: NaiveDate) -> u32 {
        let d = self.study_day(date).max(0);
        (d / 7 + 1) as u32
    }

    pub fn week_of(&self, ts: Timestamp, tz_offset_min: i32) -> u32 {
        self.week_index(local_date(ts, tz_offset_min))
    }

    pub fn week_start(&self, week_index: u32) -> NaiveDate {
        self.enrollment_day + chrono::Duration::days(7 * i64::from(week_index.max(1) - 1))
    }

    /// First local day after the week ends.
    pub fn week_end(&self, week_index: u32) -> NaiveDate {
        self.week_start(week_index) + chrono::Duration::days(7)
    }
}

pub fn hour_of(dt: &NaiveDateTime) -> u32 {
    dt.hour()
}

pub fn weekday_index(dt: &NaiveDateTime) -> u32 {
    dt.weekday().num_days_from_monday()
}

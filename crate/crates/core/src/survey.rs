//! Weekly end-of-week surveys.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::domain::{local_midnight, FrequencyChoice, ParticipantId, StudyClock, Timestamp, VizImpact, WeeklySurvey};
use crate::error::{CoreError, Result};

pub const DEFAULT_WINDOW_S: i64 = 48 * 3600;
const DUE_HOUR: i64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyInstance {
    pub participant_id: ParticipantId,
    pub week_index: u32,
    pub opened_at: Timestamp,
    pub due_at: Timestamp,
    pub closes_at: Timestamp,
    pub frequency_options: Vec<String>,
    pub recall_ease_scale: [u8; 2],
    pub viz_impact_options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub frequency: FrequencyChoice,
    pub recall_ease: u8,
    #[serde(default)]
    pub viz_impacts: BTreeSet<VizImpact>,
}

/// First Sunday on or after `date`.
pub fn sunday_on_or_after(date: NaiveDate) -> NaiveDate {
    let ahead = (7 - date.weekday().num_days_from_sunday()) % 7;
    date + chrono::Duration::days(i64::from(ahead))
}

#[derive(Debug, Clone)]
pub struct SurveyBook {
    clock: StudyClock,
    window_s: i64,
    accept_late: bool,
    instances: BTreeMap<u32, SurveyInstance>,
    responses: BTreeMap<u32, WeeklySurvey>,
}

impl SurveyBook {
    pub fn new(clock: StudyClock) -> Self {
        Self { clock, window_s: DEFAULT_WINDOW_S, accept_late: true, instances: BTreeMap::new(), responses: BTreeMap::new() }
    }

    pub fn with_window(mut self, window_s: i64, accept_late: bool) -> Self {
        self.window_s = window_s;
        self.accept_late = accept_late;
        self
    }

    pub fn clock(&self) -> &StudyClock {
        &self.clock
    }

    pub fn responses(&self) -> impl Iterator<Item = &WeeklySurvey> {
        self.responses.values()
    }

    pub fn response(&self, week: u32) -> Option<&WeeklySurvey> {
        self.responses.get(&week)
    }

    pub fn instance(&self, week: u32) -> Option<&SurveyInstance> {
        self.instances.get(&week)
    }

    /// Local midnight at which `week` is over.
    pub fn week_complete_at(&self, week: u32, tz_offset_min: i32) -> Timestamp {
        local_midnight(self.clock.week_end(week), tz_offset_min)
    }

    /// Sunday 08:00 local on or after the week's end.
    pub fn due_at(&self, week: u32, tz_offset_min: i32) -> Timestamp {
        let sunday = sunday_on_or_after(self.clock.week_end(week));
        debug_assert_eq!(sunday.weekday(), Weekday::Sun);
        local_midnight(sunday, tz_offset_min) + DUE_HOUR * 3600
    }

    fn build_instance(&self, week: u32, now: Timestamp, tz_offset_min: i32) -> SurveyInstance {
        let due_at = self.due_at(week, tz_offset_min);
        SurveyInstance {
            participant_id: self.clock.participant_id.clone(),
            week_index: week,
            opened_at: now,
            due_at,
            closes_at: due_at + self.window_s,
            frequency_options: FrequencyChoice::ALL.iter().map(|f| f.label().to_string()).collect(),
            recall_ease_scale: [1, 5],
            viz_impact_options: VizImpact::ALL.iter().map(|v| v.label().to_string()).collect(),
        }
    }

    pub fn open_survey(&mut self, week: u32, now: Timestamp, tz_offset_min: i32) -> Result<SurveyInstance> {
        if week == 0 {
            return Err(CoreError::Validation("week_index is 1-based".into()));
        }
        if self.instances.contains_key(&week) || self.responses.contains_key(&week) {
            return Err(CoreError::Conflict(format!("survey for week {week} already exists")));
        }
        if now < self.week_complete_at(week, tz_offset_min) {
            return Err(CoreError::Precondition(format!("week {week} has not finished")));
        }
        let inst = self.build_instance(week, now, tz_offset_min);
        self.instances.insert(week, inst.clone());
        Ok(inst)
    }

    /// Most recent finished week still awaiting a response, opening it if needed.
    pub fn current(&mut self, now: Timestamp, tz_offset_min: i32) -> Option<SurveyInstance> {
        let today = crate::domain::local_date(now, tz_offset_min);
        let finished = self.clock.week_index(today).saturating_sub(1);
        if finished == 0 || now < self.week_complete_at(finished, tz_offset_min) || self.responses.contains_key(&finished) {
            return None;
        }
        if let Some(i) = self.instances.get(&finished) {
            return Some(i.clone());
        }
        self.open_survey(finished, now, tz_offset_min).ok()
    }

    pub fn submit_survey(&mut self, week: u32, response: SurveyResponse, now: Timestamp) -> Result<WeeklySurvey> {
        if self.responses.contains_key(&week) {
            return Err(CoreError::Conflict(format!("survey for week {week} already submitted")));
        }
        let inst = self
            .instances
            .get(&week)
            .ok_or_else(|| CoreError::Precondition(format!("no open survey for week {week}")))?;
        let late = now > inst.closes_at;
        if late && !self.accept_late {
            return Err(CoreError::Expired(format!("survey window for week {week} closed")));
        }
        let survey = WeeklySurvey {
            participant_id: self.clock.participant_id.clone(),
            week_index: week,
            frequency: response.frequency,
            recall_ease: response.recall_ease,
            viz_impacts: response.viz_impacts,
            submitted_at: now,
            late,
        };
        survey.validate()?;
        self.responses.insert(week, survey.clone());
        Ok(survey)
    }

    /// Replay path: installs a stored response without clock checks.
    pub fn apply(&mut self, survey: WeeklySurvey) {
        self.responses.entry(survey.week_index).or_insert(survey);
    }
}

/// Mean survey frequency per week over submitted responses only.
pub fn weekly_mean_frequency<'a>(surveys: impl IntoIterator<Item = &'a WeeklySurvey>) -> BTreeMap<u32, f64> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for s in surveys {
        let e = acc.entry(s.week_index).or_default();
        e.0 += f64::from(s.frequency_value());
        e.1 += 1;
    }
    acc.into_iter().map(|(w, (sum, n))| (w, sum / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book() -> SurveyBook {
        // Wednesday 2024-01-03
        SurveyBook::new(StudyClock::new("p1", NaiveDate::from_ymd_opt(2024, 1, 3).unwrap()))
    }

    fn at(y: i32, m: u32, d: u32, h: u32) -> Timestamp {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap().and_utc().timestamp()
    }

    #[test]
    fn sunday_rule() {
        let wed = NaiveDate::from_ymd_opt(2024, 1, 10).unwrap();
        assert_eq!(sunday_on_or_after(wed), NaiveDate::from_ymd_opt(2024, 1, 14).unwrap());
        let sun = NaiveDate::from_ymd_opt(2024, 1, 14).unwrap();
        assert_eq!(sunday_on_or_after(sun), sun);
    }

    #[test]
    fn open_rules() {
        let mut b = book();
        assert_eq!(b.open_survey(1, at(2024, 1, 8, 12), 0).unwrap_err().code(), "precondition");
        let i = b.open_survey(3, at(2024, 1, 25, 12), 0).unwrap();
        assert_eq!(i.week_index, 3);
        assert_eq!(i.due_at, at(2024, 1, 28, 8));
        assert_eq!(i.frequency_options.len(), 4);
        assert_eq!(b.open_survey(3, at(2024, 1, 25, 13), 0).unwrap_err().code(), "conflict");
    }

    #[test]
    fn submit_and_late_flag() {
        let mut b = book();
        b.open_survey(1, at(2024, 1, 14, 8), 0).unwrap();
        let r = SurveyResponse { frequency: FrequencyChoice::OnceToTwice, recall_ease: 2, viz_impacts: BTreeSet::new() };
        let s = b.submit_survey(1, r.clone(), at(2024, 1, 17, 9)).unwrap();
        assert!(s.late);
        assert_eq!(s.frequency_value(), 2);
        assert_eq!(b.submit_survey(1, r, at(2024, 1, 17, 10)).unwrap_err().code(), "conflict");
    }

    #[test]
    fn current_survey_follows_clock() {
        let mut b = book();
        assert!(b.current(at(2024, 1, 5, 9), 0).is_none());
        let i = b.current(at(2024, 1, 14, 9), 0).unwrap();
        assert_eq!(i.week_index, 1);
        assert_eq!(b.current(at(2024, 1, 14, 10), 0).unwrap(), i);
    }

    #[test]
    fn weekly_means_skip_missing() {
        let mk = |w, f| WeeklySurvey {
            participant_id: "p".into(),
            week_index: w,
            frequency: f,
            recall_ease: 3,
            viz_impacts: BTreeSet::new(),
            submitted_at: 0,
            late: false,
        };
        let s = [mk(1, FrequencyChoice::AtMostOnce), mk(1, FrequencyChoice::FourOrMore), mk(3, FrequencyChoice::TwiceToThrice)];
        let m = weekly_mean_frequency(&s);
        assert_eq!(m.get(&1), Some(&2.5));
        assert_eq!(m.get(&2), None);
        assert_eq!(m.get(&3), Some(&3.0));
    }
}

//! Ratings, stressor annotations, edits and manual self-reports for one
//! participant.
//!
//! Every state change produces a new annotation version and goes through
//! [`AnnotationStore::apply`], which is also what log replay uses, so the
//! lexicon counts and open stressor tasks rebuild identically.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{
    requires_stressor, EventId, EventSource, GeoPoint, ParticipantId, PhysiologicalEvent, StressAnnotation,
    StressRatingLevel, Timestamp,
};
use crate::error::{CoreError, Result};
use crate::events::PromptTicket;
use crate::lexicon::{normalize_stressor, StressorLexicon};

pub const DEFAULT_MANUAL_DURATION_MIN: f64 = 5.0;

/// Event context shown on the stressor entry screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressorTask {
    pub event_id: EventId,
    pub opened_at: Timestamp,
    pub start: Timestamp,
    pub end: Timestamp,
    pub duration_min: f64,
    pub score: f64,
    pub tz_offset_min: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
}

impl StressorTask {
    fn for_event(event: &PhysiologicalEvent, opened_at: Timestamp) -> Self {
        Self {
            event_id: event.event_id.clone(),
            opened_at,
            start: event.start,
            end: event.end,
            duration_min: event.duration_min,
            score: event.score,
            tz_offset_min: event.tz_offset_min,
            location: event.location,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingOutcome {
    pub annotation: StressAnnotation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stressor_task: Option<StressorTask>,
    /// True when the rating had already been recorded.
    pub duplicate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPatch {
    #[serde(default)]
    pub rating: Option<StressRatingLevel>,
    #[serde(default)]
    pub stressor_text: Option<String>,
    #[serde(default)]
    pub semantic_location: Option<String>,
    #[serde(default)]
    pub is_private: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualReport {
    pub rating: StressRatingLevel,
    pub stressor_text: String,
    #[serde(default)]
    pub semantic_location: Option<String>,
    pub at: Timestamp,
    #[serde(default)]
    pub duration_min: Option<f64>,
    #[serde(default)]
    pub tz_offset_min: i32,
    #[serde(default)]
    pub gps: Option<GeoPoint>,
}

fn clean_location(loc: Option<String>) -> Option<String> {
    loc.map(|l| normalize_stressor(&l)).filter(|l| !l.is_empty())
}

#[derive(Debug, Clone)]
pub struct AnnotationStore {
    participant_id: ParticipantId,
    lexicon: Arc<StressorLexicon>,
    annotations: BTreeMap<EventId, StressAnnotation>,
    tasks: BTreeMap<EventId, StressorTask>,
    manual_default_min: f64,
}

impl AnnotationStore {
    pub fn new(participant_id: ParticipantId, lexicon: StressorLexicon) -> Self {
        Self {
            participant_id,
            lexicon: Arc::new(lexicon),
            annotations: BTreeMap::new(),
            tasks: BTreeMap::new(),
            manual_default_min: DEFAULT_MANUAL_DURATION_MIN,
        }
    }

    pub fn with_manual_duration(mut self, minutes: f64) -> Self {
        self.manual_default_min = minutes;
        self
    }

    /// Immutable view for concurrent autocomplete readers.
    pub fn lexicon(&self) -> Arc<StressorLexicon> {
        Arc::clone(&self.lexicon)
    }

    pub fn get(&self, event_id: &EventId) -> Option<&StressAnnotation> {
        self.annotations.get(event_id)
    }

    pub fn annotations(&self) -> impl Iterator<Item = &StressAnnotation> {
        self.annotations.values()
    }

    pub fn open_tasks(&self) -> impl Iterator<Item = &StressorTask> {
        self.tasks.values()
    }

    /// Installs a new annotation version, keeping lexicon counts and open
    /// tasks consistent. Older or equal versions are ignored.
    pub fn apply(&mut self, ann: StressAnnotation, event: Option<&PhysiologicalEvent>) {
        let previous = self.annotations.get(&ann.event_id);
        if previous.is_some_and(|p| p.version >= ann.version) {
            return;
        }
        let old_text = previous.and_then(|p| p.stressor_text.clone());
        if old_text != ann.stressor_text {
            let lex = Arc::make_mut(&mut self.lexicon);
            if let Some(old) = &old_text {
                lex.release_use(old);
            }
            if let Some(new) = &ann.stressor_text {
                lex.record_use(new, ann.edited_at.unwrap_or(ann.created_at));
            }
        }
        let needs_task = requires_stressor(ann.rating) && ann.stressor_text.is_none() && !ann.is_private && !ann.is_manual;
        if needs_task {
            if !self.tasks.contains_key(&ann.event_id) {
                if let Some(ev) = event {
                    self.tasks.insert(ann.event_id.clone(), StressorTask::for_event(ev, ann.created_at));
                }
            }
        } else {
            self.tasks.remove(&ann.event_id);
        }
        self.annotations.insert(ann.event_id.clone(), ann);
    }

    pub fn submit_rating(
        &mut self,
        ticket: &PromptTicket,
        event: &PhysiologicalEvent,
        rating: StressRatingLevel,
        now: Timestamp,
    ) -> Result<RatingOutcome> {
        if let Some(existing) = self.annotations.get(&ticket.event_id) {
            return Ok(RatingOutcome {
                annotation: existing.clone(),
                stressor_task: self.tasks.get(&ticket.event_id).cloned(),
                duplicate: true,
            });
        }
        if ticket.event_id != event.event_id || ticket.participant_id != self.participant_id {
            return Err(CoreError::Validation("ticket does not match event".into()));
        }
        if ticket.is_expired(now) {
            return Err(CoreError::Expired(format!("prompt for event {} expired", ticket.event_id)));
        }
        let ann = StressAnnotation {
            event_id: event.event_id.clone(),
            participant_id: self.participant_id.clone(),
            rating,
            stressor_text: None,
            semantic_location: None,
            gps: event.location,
            is_private: false,
            is_manual: false,
            created_at: now,
            edited_at: None,
            entry_duration_s: None,
            version: 1,
        };
        self.apply(ann.clone(), Some(event));
        Ok(RatingOutcome { annotation: ann, stressor_task: self.tasks.get(&event.event_id).cloned(), duplicate: false })
    }

    pub fn complete_annotation(
        &mut self,
        event_id: &EventId,
        stressor_text: &str,
        semantic_location: Option<String>,
        now: Timestamp,
    ) -> Result<StressAnnotation> {
        let task = self
            .tasks
            .get(event_id)
            .ok_or_else(|| CoreError::Precondition(format!("no open stressor task for event {event_id}")))?;
        let text = normalize_stressor(stressor_text);
        if text.is_empty() {
            return Err(CoreError::Validation("stressor_text is required".into()));
        }
        let entry = (now - task.opened_at).max(0);
        let mut ann = self.annotations[event_id].clone();
        ann.stressor_text = Some(text);
        ann.semantic_location = clean_location(semantic_location);
        ann.entry_duration_s = Some(entry);
        ann.version += 1;
        // completion is part of the original entry, not an edit
        self.apply(ann.clone(), None);
        Ok(ann)
    }

    pub fn edit_annotation(&mut self, event_id: &EventId, patch: AnnotationPatch, now: Timestamp) -> Result<StressAnnotation> {
        let current = self
            .annotations
            .get(event_id)
            .ok_or_else(|| CoreError::NotFound(format!("annotation for event {event_id}")))?;
        let mut ann = current.clone();
        if let Some(r) = patch.rating {
            ann.rating = r;
        }
        if let Some(t) = patch.stressor_text {
            let t = normalize_stressor(&t);
            if t.is_empty() {
                return Err(CoreError::Validation("stressor_text cannot be blank".into()));
            }
            ann.stressor_text = Some(t);
        }
        if patch.semantic_location.is_some() {
            ann.semantic_location = clean_location(patch.semantic_location);
        }
        if let Some(p) = patch.is_private {
            ann.is_private = p;
        }
        if ann == *current {
            return Ok(ann);
        }
        ann.edited_at = Some(now.max(ann.created_at));
        ann.version += 1;
        self.apply(ann.clone(), None);
        Ok(ann)
    }

    /// Creates the synthetic event and its annotation for a self-report.
    pub fn manual_report(&mut self, report: ManualReport, now: Timestamp) -> Result<(PhysiologicalEvent, StressAnnotation)> {
        if report.at > now {
            return Err(CoreError::Validation("manual report cannot be in the future".into()));
        }
        if !requires_stressor(report.rating) {
            return Err(CoreError::Validation("manual reports must describe a stress episode".into()));
        }
        let text = normalize_stressor(&report.stressor_text);
        if text.is_empty() {
            return Err(CoreError::Validation("stressor_text is required".into()));
        }
        let minutes = report.duration_min.unwrap_or(self.manual_default_min);
        if !(minutes > 0.0 && minutes.is_finite()) {
            return Err(CoreError::Validation("duration must be positive".into()));
        }
        let event_id = EventId(format!("manual-{}-{}", self.participant_id, report.at));
        if let Some(existing) = self.annotations.get(&event_id) {
            return Err(CoreError::Conflict(format!("manual report {} already exists (version {})", event_id, existing.version)));
        }
        let end = report.at + (minutes * 60.0).round() as i64;
        let mut event = PhysiologicalEvent::new(event_id.clone(), self.participant_id.clone(), report.at, end, 0.0, report.tz_offset_min)?;
        event.source = EventSource::Manual;
        event.location = report.gps;
        let ann = StressAnnotation {
            event_id,
            participant_id: self.participant_id.clone(),
            rating: report.rating,
            stressor_text: Some(text),
            semantic_location: clean_location(report.semantic_location),
            gps: report.gps,
            is_private: false,
            is_manual: true,
            created_at: now,
            edited_at: None,
            entry_duration_s: None,
            version: 1,
        };
        self.apply(ann.clone(), Some(&event));
        Ok((event, ann))
    }

    /// Stressor entry times in seconds, ordered by completion time.
    pub fn entry_durations(&self) -> Vec<i64> {
        let mut v: Vec<(Timestamp, i64)> = self
            .annotations
            .values()
            .filter_map(|a| a.entry_duration_s.map(|d| (a.created_at + d, d)))
            .collect();
        v.sort();
        v.into_iter().map(|(_, d)| d).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Band;

    fn setup() -> (AnnotationStore, PhysiologicalEvent, PromptTicket) {
        let store = AnnotationStore::new("p1".into(), StressorLexicon::seeded(0));
        let ev = PhysiologicalEvent::new("e1", "p1", 1_000, 1_600, 90.0, 0).unwrap();
        let t = PromptTicket {
            event_id: "e1".into(),
            participant_id: "p1".into(),
            issued_at: 1_630,
            expires_at: 1_630 + 86_400,
            responded: false,
            band: Band::High,
            score: 90.0,
        };
        (store, ev, t)
    }

    #[test]
    fn not_stressed_completes_without_task() {
        let (mut s, ev, t) = setup();
        let out = s.submit_rating(&t, &ev, StressRatingLevel::NotStressed, 2_000).unwrap();
        assert!(out.stressor_task.is_none());
        assert_eq!(s.open_tasks().count(), 0);
    }

    #[test]
    fn stressed_opens_task_with_context() {
        let (mut s, ev, t) = setup();
        let out = s.submit_rating(&t, &ev, StressRatingLevel::Stressed, 2_000).unwrap();
        let task = out.stressor_task.unwrap();
        assert_eq!((task.start, task.duration_min, task.score), (1_000, 10.0, 90.0));
        let again = s.submit_rating(&t, &ev, StressRatingLevel::NotStressed, 2_100).unwrap();
        assert!(again.duplicate);
        assert_eq!(again.annotation.rating, StressRatingLevel::Stressed);
    }

    #[test]
    fn expired_ticket_rejected() {
        let (mut s, ev, t) = setup();
        let err = s.submit_rating(&t, &ev, StressRatingLevel::Stressed, t.expires_at + 1).unwrap_err();
        assert_eq!(err.code(), "expired");
    }

    #[test]
    fn completion_records_entry_time_and_lexicon() {
        let (mut s, ev, t) = setup();
        s.submit_rating(&t, &ev, StressRatingLevel::Stressed, 2_000).unwrap();
        assert_eq!(s.complete_annotation(&ev.event_id, "  ", None, 2_010).unwrap_err().code(), "validation");
        let a = s.complete_annotation(&ev.event_id, "Work overload/demand", Some("Office".into()), 2_042).unwrap();
        assert_eq!(a.entry_duration_s, Some(42));
        assert_eq!(a.semantic_location.as_deref(), Some("office"));
        assert_eq!(s.lexicon().get("work overload/demand").unwrap().use_count, 1);
        assert_eq!(s.complete_annotation(&ev.event_id, "x", None, 2_050).unwrap_err().code(), "precondition");
        assert_eq!(s.entry_durations(), vec![42]);
    }

    #[test]
    fn edits() {
        let (mut s, ev, t) = setup();
        s.submit_rating(&t, &ev, StressRatingLevel::Unsure, 2_000).unwrap();
        s.complete_annotation(&ev.event_id, "deadline", None, 2_030).unwrap();
        let same = s.edit_annotation(&ev.event_id, AnnotationPatch::default(), 3_000).unwrap();
        assert_eq!(same.edited_at, None);
        let e = s
            .edit_annotation(&ev.event_id, AnnotationPatch { rating: Some(StressRatingLevel::Stressed), ..Default::default() }, 3_000)
            .unwrap();
        assert_eq!(e.intensity(), 4);
        assert_eq!(e.edited_at, Some(3_000));
        let moved = s
            .edit_annotation(&ev.event_id, AnnotationPatch { stressor_text: Some("exams".into()), ..Default::default() }, 3_100)
            .unwrap();
        assert_eq!(moved.version, 4);
        assert_eq!(s.lexicon().get("deadline").unwrap().use_count, 0);
        assert_eq!(s.lexicon().get("exams").unwrap().use_count, 1);
        assert_eq!(s.edit_annotation(&"nope".into(), AnnotationPatch::default(), 0).unwrap_err().code(), "not_found");
    }

    #[test]
    fn manual_reports() {
        let (mut s, _, _) = setup();
        let r = ManualReport {
            rating: StressRatingLevel::Stressed,
            stressor_text: "heavy traffic".into(),
            semantic_location: Some("car".into()),
            at: 29_700,
            duration_min: None,
            tz_offset_min: 0,
            gps: None,
        };
        let (ev, ann) = s.manual_report(r.clone(), 30_000).unwrap();
        assert_eq!(ev.duration_min, 5.0);
        assert!(ann.is_manual && !ev.is_detected());
        let future = ManualReport { at: 40_000, ..r.clone() };
        assert_eq!(s.manual_report(future, 30_000).unwrap_err().code(), "validation");
        let calm = ManualReport { rating: StressRatingLevel::NotStressed, at: 1, ..r };
        assert_eq!(s.manual_report(calm, 30_000).unwrap_err().code(), "validation");
    }

    #[test]
    fn replay_rebuilds_same_state() {
        let (mut s, ev, t) = setup();
        let mut log = Vec::new();
        log.push(s.submit_rating(&t, &ev, StressRatingLevel::Stressed, 2_000).unwrap().annotation);
        log.push(s.complete_annotation(&ev.event_id, "exams", None, 2_020).unwrap());
        log.push(
            s.edit_annotation(&ev.event_id, AnnotationPatch { stressor_text: Some("grading".into()), ..Default::default() }, 2_500)
                .unwrap(),
        );
        let mut r = AnnotationStore::new("p1".into(), StressorLexicon::seeded(0));
        for a in log {
            r.apply(a, Some(&ev));
        }
        assert_eq!(*r.lexicon(), *s.lexicon());
        assert_eq!(r.get(&ev.event_id), s.get(&ev.event_id));
    }
}

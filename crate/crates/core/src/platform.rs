//! The participant-facing service: one serialized writer per participant,
//! optional durable logs, and immutable snapshots for charts and analyses.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use arc_swap::ArcSwap;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationPatch, AnnotationStore, ManualReport, RatingOutcome, DEFAULT_MANUAL_DURATION_MIN};
use crate::domain::{
    EventId, ParticipantId, PhysiologicalEvent, StressAnnotation, StressRatingLevel, StudyClock, Timestamp, WeeklySurvey,
};
use crate::error::{CoreError, Result};
use crate::events::{keyed_uniform, EventEngine, PromptDecision, PromptTicket, SamplingPolicy};
use crate::lexicon::{seed_stressors, StressorLexicon};
use crate::storage::{participant_dirs, read_profile, write_profile, LogKind, ParticipantLog, Profile};
use crate::survey::{SurveyBook, SurveyInstance, SurveyResponse, DEFAULT_WINDOW_S};
use crate::viz::{assemble_bundle, ChartBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub policy: SamplingPolicy,
    pub seed: u64,
    pub fsync: bool,
    pub manual_duration_min: f64,
    pub survey_window_s: i64,
    pub accept_late_surveys: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            policy: SamplingPolicy::default(),
            seed: 0x4d4f_4f44_53,
            fsync: false,
            manual_duration_min: DEFAULT_MANUAL_DURATION_MIN,
            survey_window_s: DEFAULT_WINDOW_S,
            accept_late_surveys: true,
        }
    }
}

/// Selection seed for one participant, derived from the platform seed.
pub fn participant_seed(seed: u64, participant: &ParticipantId) -> u64 {
    (keyed_uniform(seed, participant.as_str()) * (1u64 << 53) as f64) as u64
}

struct ParticipantState {
    profile: Profile,
    engine: EventEngine,
    annotations: AnnotationStore,
    surveys: SurveyBook,
    events: BTreeMap<EventId, PhysiologicalEvent>,
    last_tz: i32,
    log: Option<ParticipantLog>,
}

impl ParticipantState {
    fn persist<T: Serialize>(&mut self, kind: LogKind, id: &str, version: u32, record: &T) -> Result<()> {
        if let Some(log) = self.log.as_mut() {
            log.append(kind, id, version, record)?;
        }
        Ok(())
    }

    fn persist_ticket(&mut self, t: &PromptTicket) -> Result<()> {
        let version = if t.responded { 2 } else { 1 };
        self.persist(LogKind::Tickets, t.event_id.as_str(), version, t)
    }

    fn persist_annotation(&mut self, a: &StressAnnotation) -> Result<()> {
        if a.is_private {
            self.engine.exclude(&a.event_id);
        }
        self.persist(LogKind::Annotations, a.event_id.as_str(), a.version, a)
    }

    fn flush(&mut self, now: Timestamp) -> Result<()> {
        for d in self.engine.flush_deferred(now) {
            if let PromptDecision::Issued(t) = d {
                self.persist_ticket(&t)?;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> ParticipantSnapshot {
        let mut events: Vec<PhysiologicalEvent> = self.events.values().cloned().collect();
        events.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.event_id.cmp(&b.event_id)));
        ParticipantSnapshot {
            profile: self.profile.clone(),
            events,
            tickets: self.engine.tickets().cloned().collect(),
            annotations: self.annotations.annotations().cloned().collect(),
            surveys: self.surveys.responses().cloned().collect(),
            horizons: self.log.as_ref().map(ParticipantLog::horizons).unwrap_or_default(),
        }
    }
}

struct Participant {
    state: Mutex<ParticipantState>,
    lexicon: ArcSwap<StressorLexicon>,
}

/// Point-in-time copy of one participant's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSnapshot {
    pub profile: Profile,
    pub events: Vec<PhysiologicalEvent>,
    pub tickets: Vec<PromptTicket>,
    pub annotations: Vec<StressAnnotation>,
    pub surveys: Vec<WeeklySurvey>,
    #[serde(default)]
    pub horizons: BTreeMap<LogKind, u64>,
}

impl ParticipantSnapshot {
    pub fn clock(&self) -> StudyClock {
        StudyClock::new(self.profile.participant_id.clone(), self.profile.enrollment_day)
    }

    pub fn bundle(&self, week: u32) -> Result<ChartBundle> {
        assemble_bundle(&self.clock(), &self.events, &self.annotations, week)
    }

    pub fn event(&self, id: &EventId) -> Option<&PhysiologicalEvent> {
        self.events.iter().find(|e| &e.event_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub event: PhysiologicalEvent,
    pub annotation: StressAnnotation,
}

pub struct Platform {
    config: PlatformConfig,
    data_dir: Option<PathBuf>,
    participants: RwLock<BTreeMap<ParticipantId, Arc<Participant>>>,
}

impl Platform {
    pub fn in_memory(config: PlatformConfig) -> Self {
        Self { config, data_dir: None, participants: RwLock::new(BTreeMap::new()) }
    }

    /// Opens `data_dir`, replaying every participant log found there.
    pub fn open(data_dir: &Path, config: PlatformConfig) -> Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let platform = Self { config, data_dir: Some(data_dir.to_path_buf()), participants: RwLock::new(BTreeMap::new()) };
        for dir in participant_dirs(data_dir)? {
            let profile = read_profile(&dir)?;
            let p = platform.restore(profile, &dir)?;
            let id = p.state.lock().unwrap().profile.participant_id.clone();
            platform.participants.write().unwrap().insert(id, Arc::new(p));
        }
        Ok(platform)
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    fn fresh_state(&self, profile: Profile) -> ParticipantState {
        let seed = participant_seed(self.config.seed, &profile.participant_id);
        let clock = StudyClock::new(profile.participant_id.clone(), profile.enrollment_day);
        let lexicon = StressorLexicon::with_seed(&seed_stressors(), 0);
        ParticipantState {
            engine: EventEngine::new(profile.participant_id.clone(), self.config.policy.clone(), seed),
            annotations: AnnotationStore::new(profile.participant_id.clone(), lexicon)
                .with_manual_duration(self.config.manual_duration_min),
            surveys: SurveyBook::new(clock).with_window(self.config.survey_window_s, self.config.accept_late_surveys),
            events: BTreeMap::new(),
            last_tz: profile.tz_offset_min,
            log: None,
            profile,
        }
    }

    fn restore(&self, profile: Profile, dir: &Path) -> Result<Participant> {
        let mut st = self.fresh_state(profile);
        let (log, rec) = ParticipantLog::open(dir, self.config.fsync)?;
        for e in &rec.events {
            st.last_tz = e.tz_offset_min;
            st.events.insert(e.event_id.clone(), e.clone());
        }
        let mut tickets: BTreeMap<EventId, PromptTicket> = BTreeMap::new();
        for t in rec.tickets {
            tickets.insert(t.event_id.clone(), t);
        }
        let events: Vec<PhysiologicalEvent> = st.events.values().cloned().collect();
        st.engine.restore(&events, &tickets.into_values().collect::<Vec<_>>());
        for a in rec.annotations {
            if a.is_private {
                st.engine.exclude(&a.event_id);
            }
            let ev = st.events.get(&a.event_id).cloned();
            st.annotations.apply(a, ev.as_ref());
        }
        for s in rec.surveys {
            st.surveys.apply(s);
        }
        st.log = Some(log);
        Ok(Participant { lexicon: ArcSwap::new(st.annotations.lexicon()), state: Mutex::new(st) })
    }

    /// Registers a participant; re-enrolling with the same profile is a no-op.
    pub fn enroll(&self, participant_id: ParticipantId, enrollment_day: NaiveDate, tz_offset_min: i32) -> Result<Profile> {
        let profile = Profile { participant_id: participant_id.clone(), enrollment_day, tz_offset_min };
        let mut map = self.participants.write().unwrap();
        if let Some(p) = map.get(&participant_id) {
            let existing = p.state.lock().unwrap().profile.clone();
            return if existing == profile {
                Ok(existing)
            } else {
                Err(CoreError::Conflict(format!("participant {participant_id} already enrolled")))
            };
        }
        let mut st = self.fresh_state(profile.clone());
        if let Some(root) = &self.data_dir {
            let dir = root.join(participant_id.as_str());
            write_profile(&dir, &profile)?;
            st.log = Some(ParticipantLog::open(&dir, self.config.fsync)?.0);
        }
        let p = Participant { lexicon: ArcSwap::new(st.annotations.lexicon()), state: Mutex::new(st) };
        map.insert(participant_id, Arc::new(p));
        Ok(profile)
    }

    pub fn participant_ids(&self) -> Vec<ParticipantId> {
        self.participants.read().unwrap().keys().cloned().collect()
    }

    fn participant(&self, id: &ParticipantId) -> Result<Arc<Participant>> {
        self.participants
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| CoreError::NotFound(format!("participant {id}")))
    }

    fn with_state<T>(&self, id: &ParticipantId, f: impl FnOnce(&mut ParticipantState) -> Result<T>) -> Result<T> {
        let p = self.participant(id)?;
        let mut st = p.state.lock().unwrap();
        let out = f(&mut st);
        p.lexicon.store(st.annotations.lexicon());
        out
    }

    pub fn ingest_event(&self, event: PhysiologicalEvent, now: Timestamp) -> Result<PromptDecision> {
        event.validate()?;
        self.with_state(&event.participant_id.clone(), |st| {
            st.flush(now)?;
            if let Some(existing) = st.events.get(&event.event_id) {
                if *existing != event {
                    return Err(CoreError::Conflict(format!("event {} already ingested with different content", event.event_id)));
                }
            }
            let decision = st.engine.ingest(&event, now);
            if matches!(decision, PromptDecision::Duplicate(_)) {
                return Ok(decision);
            }
            st.persist(LogKind::Events, event.event_id.as_str(), 1, &event)?;
            if let PromptDecision::Issued(t) = &decision {
                st.persist_ticket(t)?;
            }
            st.last_tz = event.tz_offset_min;
            st.events.insert(event.event_id.clone(), event);
            Ok(decision)
        })
    }

    pub fn pending_prompts(&self, participant: &ParticipantId, now: Timestamp) -> Result<Vec<PromptTicket>> {
        self.with_state(participant, |st| {
            st.flush(now)?;
            Ok(st.engine.pending(now))
        })
    }

    pub fn submit_rating(
        &self,
        participant: &ParticipantId,
        event_id: &EventId,
        rating: StressRatingLevel,
        now: Timestamp,
    ) -> Result<RatingOutcome> {
        self.with_state(participant, |st| {
            st.flush(now)?;
            let ticket = st
                .engine
                .ticket(event_id)
                .cloned()
                .ok_or_else(|| CoreError::NotFound(format!("no prompt for event {event_id}")))?;
            let event = st.events[event_id].clone();
            let out = st.annotations.submit_rating(&ticket, &event, rating, now)?;
            if !out.duplicate {
                st.persist_annotation(&out.annotation)?;
                if let Some(t) = st.engine.mark_responded(event_id) {
                    st.persist_ticket(&t)?;
                }
            }
            Ok(out)
        })
    }

    pub fn complete_annotation(
        &self,
        participant: &ParticipantId,
        event_id: &EventId,
        stressor_text: &str,
        semantic_location: Option<String>,
        now: Timestamp,
    ) -> Result<StressAnnotation> {
        self.with_state(participant, |st| {
            let a = st.annotations.complete_annotation(event_id, stressor_text, semantic_location, now)?;
            st.persist_annotation(&a)?;
            Ok(a)
        })
    }

    pub fn edit_annotation(
        &self,
        participant: &ParticipantId,
        event_id: &EventId,
        patch: AnnotationPatch,
        now: Timestamp,
    ) -> Result<StressAnnotation> {
        self.with_state(participant, |st| {
            let a = st.annotations.edit_annotation(event_id, patch, now)?;
            st.persist_annotation(&a)?;
            Ok(a)
        })
    }

    pub fn manual_report(&self, participant: &ParticipantId, report: ManualReport, now: Timestamp) -> Result<StressAnnotation> {
        self.with_state(participant, |st| {
            let (event, ann) = st.annotations.manual_report(report, now)?;
            st.persist(LogKind::Events, event.event_id.as_str(), 1, &event)?;
            st.engine.restore(std::slice::from_ref(&event), &[]);
            st.events.insert(event.event_id.clone(), event);
            st.persist_annotation(&ann)?;
            Ok(ann)
        })
    }

    /// Lock-free read against the latest lexicon snapshot.
    pub fn autocomplete(&self, participant: &ParticipantId, query: &str, limit: usize) -> Result<Vec<String>> {
        if limit == 0 {
            return Err(CoreError::Validation("limit must be at least 1".into()));
        }
        let p = self.participant(participant)?;
        Ok(p.lexicon.load().autocomplete(query, limit))
    }

    pub fn lexicon(&self, participant: &ParticipantId) -> Result<Arc<StressorLexicon>> {
        Ok(self.participant(participant)?.lexicon.load_full())
    }

    /// Annotated events, newest first, including private ones.
    pub fn dashboard(&self, participant: &ParticipantId) -> Result<Vec<TimelineEntry>> {
        self.with_state(participant, |st| {
            let mut out: Vec<TimelineEntry> = st
                .annotations
                .annotations()
                .filter_map(|a| st.events.get(&a.event_id).map(|e| TimelineEntry { event: e.clone(), annotation: a.clone() }))
                .collect();
            out.sort_by(|a, b| b.event.start.cmp(&a.event.start).then_with(|| a.event.event_id.cmp(&b.event.event_id)));
            Ok(out)
        })
    }

    pub fn current_survey(&self, participant: &ParticipantId, now: Timestamp) -> Result<Option<SurveyInstance>> {
        self.with_state(participant, |st| Ok(st.surveys.current(now, st.last_tz)))
    }

    pub fn open_survey(&self, participant: &ParticipantId, week: u32, now: Timestamp) -> Result<SurveyInstance> {
        self.with_state(participant, |st| st.surveys.open_survey(week, now, st.last_tz))
    }

    /// Submits a response, opening the week's instance first if needed.
    pub fn submit_survey(
        &self,
        participant: &ParticipantId,
        week: u32,
        response: SurveyResponse,
        now: Timestamp,
    ) -> Result<WeeklySurvey> {
        self.with_state(participant, |st| {
            if st.surveys.instance(week).is_none() && st.surveys.response(week).is_none() {
                st.surveys.open_survey(week, now, st.last_tz)?;
            }
            let s = st.surveys.submit_survey(week, response, now)?;
            st.persist(LogKind::Surveys, &week.to_string(), 1, &s)?;
            Ok(s)
        })
    }

    pub fn snapshot(&self, participant: &ParticipantId) -> Result<ParticipantSnapshot> {
        self.with_state(participant, |st| Ok(st.snapshot()))
    }

    pub fn snapshots(&self) -> Vec<ParticipantSnapshot> {
        self.participant_ids().iter().filter_map(|id| self.snapshot(id).ok()).collect()
    }

    pub fn visualizations(&self, participant: &ParticipantId, week: u32) -> Result<ChartBundle> {
        self.snapshot(participant)?.bundle(week)
    }

    pub fn entry_durations(&self, participant: &ParticipantId) -> Result<Vec<i64>> {
        self.with_state(participant, |st| Ok(st.annotations.entry_durations()))
    }

    pub fn compact(&self) -> Result<()> {
        for id in self.participant_ids() {
            self.with_state(&id, |st| st.log.as_mut().map_or(Ok(()), ParticipantLog::compact))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, 4).unwrap()
    }

    fn t0() -> Timestamp {
        day().and_hms_opt(9, 0, 0).unwrap().and_utc().timestamp()
    }

    #[test]
    fn prompt_rate_annotate_cycle() {
        let p = Platform::in_memory(PlatformConfig::default());
        let pid: ParticipantId = "p1".into();
        p.enroll(pid.clone(), day(), 0).unwrap();
        let ev = PhysiologicalEvent::new("e1", "p1", t0(), t0() + 600, 99.0, 0).unwrap();
        let PromptDecision::Issued(t) = p.ingest_event(ev, t0() + 600).unwrap() else { panic!() };
        assert_eq!(p.pending_prompts(&pid, t.issued_at).unwrap().len(), 1);
        let out = p.submit_rating(&pid, &"e1".into(), StressRatingLevel::Stressed, t.issued_at + 60).unwrap();
        assert!(out.stressor_task.is_some());
        assert!(p.pending_prompts(&pid, t.issued_at + 60).unwrap().is_empty());
        p.complete_annotation(&pid, &"e1".into(), "Too much work", Some("office".into()), t.issued_at + 100).unwrap();
        assert_eq!(p.autocomplete(&pid, "too", 3).unwrap()[0], "too much work");
        assert_eq!(p.dashboard(&pid).unwrap().len(), 1);
    }

    #[test]
    fn persisted_state_replays() {
        let dir = tempfile::tempdir().unwrap();
        let pid: ParticipantId = "p1".into();
        let snap = {
            let p = Platform::open(dir.path(), PlatformConfig::default()).unwrap();
            p.enroll(pid.clone(), day(), -300).unwrap();
            for i in 0..5 {
                let s = t0() + i * 7200;
                let ev = PhysiologicalEvent::new(format!("e{i}"), "p1", s, s + 300, 96.0 + i as f64 / 2.0, -300).unwrap();
                if let PromptDecision::Issued(t) = p.ingest_event(ev, s + 300).unwrap() {
                    p.submit_rating(&pid, &t.event_id, StressRatingLevel::ProbablyStressed, t.issued_at + 10).unwrap();
                    p.complete_annotation(&pid, &t.event_id, "exams", None, t.issued_at + 40).unwrap();
                }
            }
            p.edit_annotation(&pid, &"e0".into(), AnnotationPatch { is_private: Some(true), ..Default::default() }, t0() + 90_000)
                .unwrap();
            p.snapshot(&pid).unwrap()
        };
        let reopened = Platform::open(dir.path(), PlatformConfig::default()).unwrap();
        let again = reopened.snapshot(&pid).unwrap();
        assert_eq!(snap.events, again.events);
        assert_eq!(snap.annotations, again.annotations);
        assert_eq!(snap.tickets, again.tickets);
        assert_eq!(*reopened.lexicon(&pid).unwrap(), *Platform::open(dir.path(), PlatformConfig::default()).unwrap().lexicon(&pid).unwrap());
        assert_eq!(reopened.lexicon(&pid).unwrap().get("exams").unwrap().use_count, 5);
    }
}

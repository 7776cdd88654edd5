//! Event selection and prompt scheduling.
//!
//! Each participant's detector scores are summarised by 25th/75th/95th
//! percentiles over a trailing window; the band an event's score falls in sets
//! its prompting probability. Selected events get a single prompt ticket
//! shortly after they conclude, subject to a refractory gap and per-band daily
//! caps.

use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{local_date, local_midnight, EventId, ParticipantId, PhysiologicalEvent, Timestamp, SECONDS_PER_DAY};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    /// `[0, p25]`
    Low,
    /// `(p25, p75]`
    Mid,
    /// `(p75, p95]`
    High,
    /// `(p95, 100]`
    Top,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Low, Band::Mid, Band::High, Band::Top];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBands {
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
    pub source_window_days: u32,
    pub sample_count: usize,
    pub cold_start: bool,
}

impl PercentileBands {
    pub fn fixed(p25: f64, p75: f64, p95: f64) -> Self {
        Self { p25, p75, p95, source_window_days: 0, sample_count: 0, cold_start: true }
    }

    pub fn band_of(&self, score: f64) -> Band {
        if score > self.p95 {
            Band::Top
        } else if score > self.p75 {
            Band::High
        } else if score > self.p25 {
            Band::Mid
        } else {
            Band::Low
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandValues {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    pub top: f64,
}

impl BandValues {
    pub fn get(&self, band: Band) -> f64 {
        match band {
            Band::Low => self.low,
            Band::Mid => self.mid,
            Band::High => self.high,
            Band::Top => self.top,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub probabilities: BandValues,
    /// Average prompts/day each band aims for; `<= 0` means uncapped.
    pub daily_targets: BandValues,
    pub budgets_enabled: bool,
    pub window_days: u32,
    pub cold_start_min_events: usize,
    pub cold_start_thresholds: [f64; 3],
    pub prompt_delay_s: i64,
    pub refractory_s: i64,
    pub ticket_ttl_s: i64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            probabilities: BandValues { low: 0.2, mid: 0.1, high: 0.8, top: 1.0 },
            daily_targets: BandValues { low: 1.0, mid: 2.0, high: 3.0, top: 0.0 },
            budgets_enabled: true,
            window_days: 14,
            cold_start_min_events: 100,
            cold_start_thresholds: [25.0, 75.0, 95.0],
            prompt_delay_s: 30,
            refractory_s: 30 * 60,
            ticket_ttl_s: SECONDS_PER_DAY,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        for b in Band::ALL {
            let p = self.probabilities.get(b);
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Validation(format!("band probability {p} outside [0, 1]")));
            }
        }
        let [a, b, c] = self.cold_start_thresholds;
        if !(a <= b && b <= c) {
            return Err(CoreError::Validation("cold-start thresholds must be ordered".into()));
        }
        if !(0..=60).contains(&self.prompt_delay_s) {
            return Err(CoreError::Validation("prompts must follow the event within 60 s".into()));
        }
        Ok(())
    }

    /// Largest number of prompts a capped band may issue per participant-day.
    pub fn daily_cap(&self, band: Band) -> Option<u32> {
        let target = self.daily_targets.get(band);
        (self.budgets_enabled && target > 0.0).then(|| (2.0 * target).ceil() as u32)
    }

    /// Bernoulli probability for a score, ignoring budgets.
    pub fn selection_probability(&self, score: f64, bands: &PercentileBands) -> f64 {
        self.probabilities.get(bands.band_of(score))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub event_id: EventId,
    pub start: Timestamp,
    pub score: f64,
}

fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Percentile thresholds from events that started before `as_of`.
///
/// Until `cold_start_min_events` events have been seen the fixed cold-start
/// thresholds apply; afterwards nearest-rank percentiles over the trailing
/// `window_days` (falling back to all history if the window is empty).
pub fn update_percentiles(history: &[ScoredEvent], as_of: Timestamp, policy: &SamplingPolicy) -> PercentileBands {
    let prior: Vec<&ScoredEvent> = history.iter().filter(|e| e.start < as_of).collect();
    if prior.len() < policy.cold_start_min_events || prior.is_empty() {
        let [a, b, c] = policy.cold_start_thresholds;
        return PercentileBands {
            sample_count: prior.len(),
            source_window_days: policy.window_days,
            ..PercentileBands::fixed(a, b, c)
        };
    }
    let since = as_of - i64::from(policy.window_days) * SECONDS_PER_DAY;
    let mut scores: Vec<f64> = prior.iter().filter(|e| e.start >= since).map(|e| e.score).collect();
    if scores.is_empty() {
        scores = prior.iter().map(|e| e.score).collect();
    }
    scores.sort_by(f64::total_cmp);
    PercentileBands {
        p25: nearest_rank(&scores, 25.0),
        p75: nearest_rank(&scores, 75.0),
        p95: nearest_rank(&scores, 95.0),
        source_window_days: policy.window_days,
        sample_count: scores.len(),
        cold_start: false,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed by `(seed, key)`; stable across platforms.
pub fn keyed_uniform(seed: u64, key: &str) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (splitmix64(seed ^ splitmix64(h)) >> 11) as f64 / (1u64 << 53) as f64
}

/// Bernoulli selection for one event before any budget or refractory rule.
pub fn select_for_prompt(event: &PhysiologicalEvent, bands: &PercentileBands, policy: &SamplingPolicy, seed: u64) -> bool {
    let band = bands.band_of(event.score);
    if band == Band::Top && policy.probabilities.top >= 1.0 {
        return true;
    }
    keyed_uniform(seed, event.event_id.as_str()) < policy.probabilities.get(band)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTicket {
    pub event_id: EventId,
    pub participant_id: ParticipantId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub responded: bool,
    pub band: Band,
    pub score: f64,
}

impl PromptTicket {
    pub fn is_expired(&self, now: Timestamp) -> bool {
        now > self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptDecision {
    Issued(PromptTicket),
    NotSelected,
    /// Selected but the event has not ended yet; issued by `flush_deferred`.
    Deferred,
    SuppressedBudget,
    SuppressedRefractory,
    /// The event was already ingested.
    Duplicate(Option<PromptTicket>),
}

/// Per-participant selection state. One writer at a time.
#[derive(Debug, Clone)]
pub struct EventEngine {
    participant_id: ParticipantId,
    policy: SamplingPolicy,
    seed: u64,
    history: Vec<ScoredEvent>,
    excluded: HashSet<EventId>,
    seen: HashSet<EventId>,
    bands: PercentileBands,
    bands_date: Option<NaiveDate>,
    issued_per_day: BTreeMap<(NaiveDate, Band), u32>,
    last_issued_at: Option<Timestamp>,
    tickets: BTreeMap<EventId, PromptTicket>,
    deferred: Vec<(PhysiologicalEvent, Band)>,
}

impl EventEngine {
    pub fn new(participant_id: ParticipantId, policy: SamplingPolicy, seed: u64) -> Self {
        let [a, b, c] = policy.cold_start_thresholds;
        Self {
            participant_id,
            policy,
            seed,
            history: Vec::new(),
            excluded: HashSet::new(),
            seen: HashSet::new(),
            bands: PercentileBands::fixed(a, b, c),
            bands_date: None,
            issued_per_day: BTreeMap::new(),
            last_issued_at: None,
            tickets: BTreeMap::new(),
            deferred: Vec::new(),
        }
    }

    pub fn policy(&self) -> &SamplingPolicy {
        &self.policy
    }

    pub fn bands(&self) -> &PercentileBands {
        &self.bands
    }

    pub fn tickets(&self) -> impl Iterator<Item = &PromptTicket> {
        self.tickets.values()
    }

    pub fn ticket(&self, event_id: &EventId) -> Option<&PromptTicket> {
        self.tickets.get(event_id)
    }

    /// Bands are recomputed once per local day, at midnight.
    fn refresh_bands(&mut self, date: NaiveDate, tz_offset_min: i32) {
        if self.bands_date == Some(date) {
            return;
        }
        let usable: Vec<ScoredEvent> = self
            .history
            .iter()
            .filter(|e| !self.excluded.contains(&e.event_id))
            .cloned()
            .collect();
        self.bands = update_percentiles(&usable, local_midnight(date, tz_offset_min), &self.policy);
        self.bands_date = Some(date);
    }

    pub fn ingest(&mut self, event: &PhysiologicalEvent, now: Timestamp) -> PromptDecision {
        if self.seen.contains(&event.event_id) {
            return PromptDecision::Duplicate(self.tickets.get(&event.event_id).cloned());
        }
        self.seen.insert(event.event_id.clone());
        if !event.is_detected() {
            return PromptDecision::NotSelected;
        }
        self.refresh_bands(local_date(event.start, event.tz_offset_min), event.tz_offset_min);
        let band = self.bands.band_of(event.score);
        let selected = select_for_prompt(event, &self.bands, &self.policy, self.seed);
        self.history.push(ScoredEvent { event_id: event.event_id.clone(), start: event.start, score: event.score });
        if !selected {
            return PromptDecision::NotSelected;
        }
        if now < event.end {
            self.deferred.push((event.clone(), band));
            return PromptDecision::Deferred;
        }
        self.try_issue(event, band)
    }

    /// Issues tickets for deferred events that have concluded by `now`.
    pub fn flush_deferred(&mut self, now: Timestamp) -> Vec<PromptDecision> {
        let (ready, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut self.deferred)
            .into_iter()
            .partition(|(e, _)| e.end <= now);
        self.deferred = waiting;
        ready.into_iter().map(|(e, band)| self.try_issue(&e, band)).collect()
    }

    fn try_issue(&mut self, event: &PhysiologicalEvent, band: Band) -> PromptDecision {
        let issued_at = event.end + self.policy.prompt_delay_s;
        let day = local_date(issued_at, event.tz_offset_min);
        if let Some(cap) = self.policy.daily_cap(band) {
            if self.issued_per_day.get(&(day, band)).copied().unwrap_or(0) >= cap {
                return PromptDecision::SuppressedBudget;
            }
        }
        if let Some(last) = self.last_issued_at {
            if (issued_at - last).abs() < self.policy.refractory_s {
                return PromptDecision::SuppressedRefractory;
            }
        }
        let ticket = PromptTicket {
            event_id: event.event_id.clone(),
            participant_id: self.participant_id.clone(),
            issued_at,
            expires_at: issued_at + self.policy.ticket_ttl_s,
            responded: false,
            band,
            score: event.score,
        };
        *self.issued_per_day.entry((day, band)).or_insert(0) += 1;
        self.last_issued_at = Some(self.last_issued_at.map_or(issued_at, |l| l.max(issued_at)));
        self.tickets.insert(event.event_id.clone(), ticket.clone());
        PromptDecision::Issued(ticket)
    }

    /// Tickets visible to the participant at `now`.
    pub fn pending(&self, now: Timestamp) -> Vec<PromptTicket> {
        self.tickets
            .values()
            .filter(|t| !t.responded && t.issued_at <= now && !t.is_expired(now))
            .cloned()
            .collect()
    }

    pub fn mark_responded(&mut self, event_id: &EventId) -> Option<PromptTicket> {
        let t = self.tickets.get_mut(event_id)?;
        t.responded = true;
        Some(t.clone())
    }

    /// Removes an event from future percentile computations (private events).
    pub fn exclude(&mut self, event_id: &EventId) {
        self.excluded.insert(event_id.clone());
    }

    /// Rebuilds state from stored events and tickets without re-deciding.
    pub fn restore(&mut self, events: &[PhysiologicalEvent], tickets: &[PromptTicket]) {
        for e in events {
            self.seen.insert(e.event_id.clone());
            if e.is_detected() {
                self.history.push(ScoredEvent { event_id: e.event_id.clone(), start: e.start, score: e.score });
            }
        }
        let tz: BTreeMap<&EventId, i32> = events.iter().map(|e| (&e.event_id, e.tz_offset_min)).collect();
        for t in tickets {
            let offset = tz.get(&t.event_id).copied().unwrap_or(0);
            *self.issued_per_day.entry((local_date(t.issued_at, offset), t.band)).or_insert(0) += 1;
            self.last_issued_at = Some(self.last_issued_at.map_or(t.issued_at, |l| l.max(t.issued_at)));
            self.tickets.insert(t.event_id.clone(), t.clone());
        }
        self.bands_date = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, start: Timestamp, minutes: i64, score: f64) -> PhysiologicalEvent {
        PhysiologicalEvent::new(id, "p1", start, start + minutes * 60, score, 0).unwrap()
    }

    fn history(scores: &[f64]) -> Vec<ScoredEvent> {
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| ScoredEvent { event_id: EventId(format!("h{i}")), start: 1_000 + i as i64, score: *s })
            .collect()
    }

    #[test]
    fn uniform_grid_percentiles() {
        let scores: Vec<f64> = (0..=100).map(f64::from).collect();
        let b = update_percentiles(&history(&scores), 1_000_000, &SamplingPolicy::default());
        assert!(!b.cold_start);
        assert_eq!((b.p25, b.p75, b.p95), (25.0, 75.0, 95.0));
    }

    #[test]
    fn degenerate_distribution() {
        let policy = SamplingPolicy { cold_start_min_events: 1, ..Default::default() };
        let b = update_percentiles(&history(&[40.0]), 1_000_000, &policy);
        assert_eq!((b.p25, b.p75, b.p95), (40.0, 40.0, 40.0));
    }

    #[test]
    fn cold_start_until_enough_events() {
        let b = update_percentiles(&history(&[10.0; 99]), 1_000_000, &SamplingPolicy::default());
        assert!(b.cold_start);
        assert_eq!((b.p25, b.p75, b.p95), (25.0, 75.0, 95.0));
    }

    #[test]
    fn trailing_window_ignores_old_events() {
        let mut h = history(&vec![90.0; 150]);
        // recent events all low
        for i in 0..150 {
            h.push(ScoredEvent { event_id: EventId(format!("r{i}")), start: 30 * SECONDS_PER_DAY + i, score: 10.0 });
        }
        let b = update_percentiles(&h, 31 * SECONDS_PER_DAY, &SamplingPolicy::default());
        assert_eq!(b.p95, 10.0);
        assert_eq!(b.sample_count, 150);
    }

    #[test]
    fn band_edges() {
        let b = PercentileBands::fixed(25.0, 75.0, 95.0);
        assert_eq!(b.band_of(0.0), Band::Low);
        assert_eq!(b.band_of(25.0), Band::Low);
        assert_eq!(b.band_of(25.5), Band::Mid);
        assert_eq!(b.band_of(75.0), Band::Mid);
        assert_eq!(b.band_of(80.0), Band::High);
        assert_eq!(b.band_of(95.0), Band::High);
        assert_eq!(b.band_of(97.0), Band::Top);
    }

    #[test]
    fn top_band_always_selected() {
        let policy = SamplingPolicy::default();
        let bands = PercentileBands::fixed(25.0, 75.0, 95.0);
        for i in 0..200 {
            assert!(select_for_prompt(&ev(&format!("e{i}"), 0, 5, 97.0), &bands, &policy, i));
        }
    }

    #[test]
    fn prompt_follows_event_within_a_minute() {
        let mut engine = EventEngine::new("p1".into(), SamplingPolicy::default(), 1);
        let e = ev("e1", 36_000 - 600, 10, 99.0);
        match engine.ingest(&e, 36_000) {
            PromptDecision::Issued(t) => {
                assert!(t.issued_at >= e.end && t.issued_at <= e.end + 60);
                assert_eq!(t.expires_at, t.issued_at + SECONDS_PER_DAY);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refractory_suppresses_close_prompts() {
        let mut engine = EventEngine::new("p1".into(), SamplingPolicy::default(), 1);
        assert!(matches!(engine.ingest(&ev("a", 0, 10, 99.0), 10_000), PromptDecision::Issued(_)));
        assert_eq!(engine.ingest(&ev("b", 180, 10, 99.0), 10_000), PromptDecision::SuppressedRefractory);
        assert!(matches!(engine.ingest(&ev("c", 3_600, 10, 99.0), 10_000), PromptDecision::Issued(_)));
    }

    #[test]
    fn unfinished_events_are_deferred() {
        let mut engine = EventEngine::new("p1".into(), SamplingPolicy::default(), 1);
        let e = ev("a", 1_000, 10, 99.0);
        assert_eq!(engine.ingest(&e, 1_100), PromptDecision::Deferred);
        assert!(engine.flush_deferred(1_200).is_empty());
        let issued = engine.flush_deferred(e.end);
        assert!(matches!(issued.as_slice(), [PromptDecision::Issued(_)]));
    }

    #[test]
    fn duplicate_ingest_returns_existing_ticket() {
        let mut engine = EventEngine::new("p1".into(), SamplingPolicy::default(), 1);
        let e = ev("a", 0, 10, 99.0);
        let PromptDecision::Issued(t) = engine.ingest(&e, 10_000) else { panic!() };
        assert_eq!(engine.ingest(&e, 10_000), PromptDecision::Duplicate(Some(t)));
        assert_eq!(engine.tickets().count(), 1);
    }

    #[test]
    fn daily_budget_caps_low_band() {
        let policy = SamplingPolicy {
            probabilities: BandValues { low: 1.0, mid: 1.0, high: 1.0, top: 1.0 },
            refractory_s: 0,
            ..Default::default()
        };
        let mut engine = EventEngine::new("p1".into(), policy, 3);
        let issued = (0..10)
            .filter(|i| matches!(engine.ingest(&ev(&format!("e{i}"), i * 3_600, 5, 5.0), 100_000), PromptDecision::Issued(_)))
            .count();
        // low band target 1/day -> cap 2
        assert_eq!(issued, 2);
    }

    #[test]
    fn policy_validation() {
        let bad = SamplingPolicy { prompt_delay_s: 120, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(SamplingPolicy::default().validate().is_ok());
    }
}

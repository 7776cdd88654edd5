//! Synthetic cohorts that exercise the whole platform.
//!
//! Each participant is simulated independently from its own ChaCha stream:
//! detected events are pushed through a real [`Platform`], prompts that the
//! platform issues are answered (or not) by a parametric participant, and
//! weekly surveys are filled in from latent trajectories. Latent values are
//! kept so that analyses can be checked against the generating truth.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationPatch, ManualReport};
use crate::domain::{
    local_midnight, requires_stressor, EventId, FrequencyChoice, GeoPoint, ParticipantId, PhysiologicalEvent,
    StressRatingLevel, StudyClock, Timestamp, VizImpact, SECONDS_PER_DAY,
};
use crate::error::{CoreError, Result};
use crate::events::PromptDecision;
use crate::lexicon::seed_stressors;
use crate::platform::{ParticipantSnapshot, Platform, PlatformConfig};
use crate::storage::{write_profile, LogKind, ParticipantLog};
use crate::survey::{sunday_on_or_after, SurveyResponse};

/// Most-reported stressors, in popularity order, ahead of the rest of the seed list.
const POPULAR: [&str; 10] = [
    "anxiety",
    "approaching deadlines",
    "heavy traffic",
    "too much work",
    "acute or chronic pain",
    "work",
    "unsure",
    "playing video game",
    "research",
    "unpleasant conversation",
];
const LOCATIONS: [&str; 10] = ["home", "office", "car", "school", "lab", "gym", "store", "restaurant", "bus", "outdoors"];
const NOVEL_SUBJECTS: [&str; 12] = [
    "appointment", "presentation", "interview", "exam", "bill", "meeting", "flight", "project", "chores", "errand",
    "phone call", "assignment",
];
const NOVEL_QUALIFIERS: [&str; 8] = ["missed", "upcoming", "unexpected", "long", "difficult", "cancelled", "extra", "late"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Trajectory {
    /// Latent value in week 1.
    pub intercept: f64,
    pub intercept_sd: f64,
    /// Change per week.
    pub slope: f64,
    pub slope_sd: f64,
    /// Momentary noise around the participant's line.
    pub noise_sd: f64,
    /// Extra latent level in week 1 only.
    pub first_week_elevation: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self { intercept: 1.6, intercept_sd: 0.76, slope: -0.052, slope_sd: 0.062, noise_sd: 1.0, first_week_elevation: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponent {
    pub weight: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntryTime {
    pub intercept_s: f64,
    pub slope_s: f64,
    pub noise_sd_s: f64,
    pub floor_s: f64,
}

impl Default for EntryTime {
    fn default() -> Self {
        Self { intercept_s: 50.46, slope_s: -0.58, noise_sd_s: 8.0, floor_s: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConfig {
    /// Probability that a participant belongs to the action subcohort.
    pub fraction: f64,
    pub week_mean: f64,
    pub week_sd: f64,
    /// Level shift after the action week, in units of the participant's
    /// daily-intensity standard deviation.
    pub step_z: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self { fraction: 0.125, week_mean: 6.0, week_sd: 2.0, step_z: -0.278 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_participants: usize,
    pub n_weeks: u32,
    pub study_start: NaiveDate,
    pub enrollment_spread_days: u32,
    pub tz_offsets_min: Vec<i32>,
    /// Mean detected events per active day (Poisson).
    pub events_per_day: f64,
    pub waking_hours: [u32; 2],
    pub event_duration_median_min: f64,
    pub event_duration_log_sd: f64,
    pub score_mixture: Vec<ScoreComponent>,
    pub response_rate: f64,
    pub response_delay_mean_min: f64,
    pub intensity: Trajectory,
    pub frequency: Trajectory,
    /// Probability a stressor is entered when the rating asks for one.
    pub stressor_completion: f64,
    pub zipf_exponent: f64,
    pub novel_stressor_prob: f64,
    pub personal_reuse_prob: f64,
    pub entry_time: EntryTime,
    pub dropout_hazard_per_day: f64,
    pub survey_rate: f64,
    pub private_rate: f64,
    pub manual_reports_per_day: f64,
    pub action: ActionConfig,
    pub platform: PlatformConfig,
    /// Per-participant stream overrides, keyed by participant index.
    pub participant_seeds: BTreeMap<usize, u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            n_participants: 136,
            n_weeks: 14,
            study_start: NaiveDate::from_ymd_opt(2023, 1, 9).unwrap(),
            enrollment_spread_days: 28,
            tz_offsets_min: vec![-300, -360, -420, -480],
            events_per_day: 20.0,
            waking_hours: [7, 23],
            event_duration_median_min: 6.0,
            event_duration_log_sd: 0.6,
            score_mixture: vec![
                ScoreComponent { weight: 0.25, lo: 0.0, hi: 25.0 },
                ScoreComponent { weight: 0.50, lo: 25.0, hi: 75.0 },
                ScoreComponent { weight: 0.20, lo: 75.0, hi: 95.0 },
                ScoreComponent { weight: 0.05, lo: 95.0, hi: 100.0 },
            ],
            response_rate: 0.74,
            response_delay_mean_min: 20.0,
            intensity: Trajectory::default(),
            frequency: Trajectory {
                intercept: 2.85,
                intercept_sd: 0.6,
                slope: -0.028,
                slope_sd: 0.04,
                noise_sd: 0.5,
                first_week_elevation: 0.1,
            },
            stressor_completion: 0.97,
            zipf_exponent: 1.0,
            novel_stressor_prob: 0.08,
            personal_reuse_prob: 0.2,
            entry_time: EntryTime::default(),
            // survival to day 30 of about 81%
            dropout_hazard_per_day: 1.0 - 0.81f64.powf(1.0 / 29.0),
            survey_rate: 0.7,
            private_rate: 0.008,
            manual_reports_per_day: 0.05,
            action: ActionConfig::default(),
            platform: PlatformConfig::default(),
            participant_seeds: BTreeMap::new(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| CoreError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("response_rate", self.response_rate),
            ("stressor_completion", self.stressor_completion),
            ("novel_stressor_prob", self.novel_stressor_prob),
            ("personal_reuse_prob", self.personal_reuse_prob),
            ("dropout_hazard_per_day", self.dropout_hazard_per_day),
            ("survey_rate", self.survey_rate),
            ("private_rate", self.private_rate),
            ("action.fraction", self.action.fraction),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Validation(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.n_weeks == 0 {
            return Err(CoreError::Validation("n_weeks must be at least 1".into()));
        }
        if self.tz_offsets_min.is_empty() || self.score_mixture.is_empty() {
            return Err(CoreError::Validation("tz_offsets_min and score_mixture must be non-empty".into()));
        }
        let [a, b] = self.waking_hours;
        if a >= b || b > 24 {
            return Err(CoreError::Validation("waking_hours must be an increasing pair within 0..=24".into()));
        }
        if self.events_per_day < 0.0 || self.manual_reports_per_day < 0.0 {
            return Err(CoreError::Validation("rates must be non-negative".into()));
        }
        self.platform.policy.validate()
    }

    pub fn participant_id(index: usize) -> ParticipantId {
        ParticipantId(format!("P{:03}", index + 1))
    }

    fn stream_seed(&self, index: usize) -> u64 {
        self.participant_seeds.get(&index).copied().unwrap_or(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantTruth {
    pub participant_id: ParticipantId,
    pub days_active: u32,
    pub intensity_intercept: f64,
    pub intensity_slope: f64,
    pub frequency_intercept: f64,
    pub frequency_slope: f64,
    #[serde(default)]
    pub action_week: Option<u32>,
    #[serde(default)]
    pub action_step_z: f64,
    /// Latent shift applied after the action week.
    #[serde(default)]
    pub action_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRating {
    pub participant_id: ParticipantId,
    pub event_id: EventId,
    pub week: u32,
    /// Momentary latent intensity before any action effect.
    pub latent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFrequency {
    pub participant_id: ParticipantId,
    pub week: u32,
    /// Latent stressful moments per day.
    pub per_day: f64,
    pub choice: FrequencyChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub participants: Vec<ParticipantSnapshot>,
    pub truths: Vec<ParticipantTruth>,
    pub latent_ratings: Vec<LatentRating>,
    pub latent_frequencies: Vec<LatentFrequency>,
}

/// Rating for a latent intensity: nearest level, clamped to the scale.
pub fn rating_for_latent(latent: f64) -> StressRatingLevel {
    StressRatingLevel::from_intensity(latent.round().clamp(0.0, 4.0) as u8).unwrap()
}

pub fn frequency_for_latent(per_day: f64) -> FrequencyChoice {
    FrequencyChoice::from_value(per_day.round().clamp(1.0, 4.0) as u8).unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Ingest(usize),
    Rate(EventId),
    Complete(EventId, usize),
    Private(EventId),
    Manual(usize),
    Survey(u32),
}

struct ParticipantSim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    id: ParticipantId,
    clock: StudyClock,
    tz: i32,
    truth: ParticipantTruth,
    action_week: Option<u32>,
    locations: Vec<(&'static str, GeoPoint)>,
    personal: Vec<String>,
    popularity: Vec<String>,
    completions: usize,
    events: Vec<PhysiologicalEvent>,
    event_locations: BTreeMap<EventId, usize>,
    manual: Vec<ManualReport>,
    latents: Vec<LatentRating>,
    frequencies: Vec<LatentFrequency>,
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    Normal::new(mean, sd).unwrap().sample(rng)
}

fn zipf_index(rng: &mut ChaCha8Rng, n: usize, s: f64) -> usize {
    Zipf::new(n as f64, s).unwrap().sample(rng) as usize - 1
}

impl<'a> ParticipantSim<'a> {
    fn new(cfg: &'a SimConfig, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed(index));
        rng.set_stream(index as u64 + 1);
        let id = SimConfig::participant_id(index);
        let enrol = cfg.study_start + Duration::days(i64::from(rng.random_range(0..=cfg.enrollment_spread_days)));
        let tz = cfg.tz_offsets_min[rng.random_range(0..cfg.tz_offsets_min.len())];
        let max_days = cfg.n_weeks * 7;
        let mut days_active = 1;
        while days_active < max_days && !rng.random_bool(cfg.dropout_hazard_per_day) {
            days_active += 1;
        }
        let it = &cfg.intensity;
        let ft = &cfg.frequency;
        let truth = ParticipantTruth {
            participant_id: id.clone(),
            days_active,
            intensity_intercept: normal(&mut rng, it.intercept, it.intercept_sd),
            intensity_slope: normal(&mut rng, it.slope, it.slope_sd),
            frequency_intercept: normal(&mut rng, ft.intercept, ft.intercept_sd),
            frequency_slope: normal(&mut rng, ft.slope, ft.slope_sd),
            action_week: None,
            action_step_z: 0.0,
            action_shift: 0.0,
        };
        let action_draw = rng.random_bool(cfg.action.fraction);
        let week_draw = normal(&mut rng, cfg.action.week_mean, cfg.action.week_sd).round();
        let action_week = action_draw.then(|| week_draw.clamp(2.0, f64::from(cfg.n_weeks.saturating_sub(1).max(2))) as u32);

        let center = GeoPoint { lat: normal(&mut rng, 40.42, 0.05), lon: normal(&mut rng, -86.91, 0.05) };
        let mut names = LOCATIONS.to_vec();
        names.shuffle(&mut rng);
        let locations = names
            .into_iter()
            .map(|n| (n, GeoPoint { lat: normal(&mut rng, center.lat, 0.02), lon: normal(&mut rng, center.lon, 0.02) }))
            .collect();

        let seed = seed_stressors();
        let mut popularity: Vec<String> = POPULAR.iter().map(|s| s.to_string()).collect();
        popularity.extend(seed.into_iter().filter(|s| !POPULAR.contains(&s.as_str())));

        Self {
            cfg,
            rng,
            clock: StudyClock::new(id.clone(), enrol),
            id,
            tz,
            truth,
            action_week,
            locations,
            personal: Vec::new(),
            popularity,
            completions: 0,
            events: Vec::new(),
            event_locations: BTreeMap::new(),
            manual: Vec::new(),
            latents: Vec::new(),
            frequencies: Vec::new(),
        }
    }

    fn day_start(&self, day: u32) -> Timestamp {
        local_midnight(self.clock.enrollment_day + Duration::days(i64::from(day)), self.tz)
    }

    fn score(&mut self) -> f64 {
        let total: f64 = self.cfg.score_mixture.iter().map(|c| c.weight).sum();
        let mut u = self.rng.random::<f64>() * total;
        for c in &self.cfg.score_mixture {
            if u < c.weight {
                return self.rng.random_range(c.lo..=c.hi);
            }
            u -= c.weight;
        }
        let last = self.cfg.score_mixture.last().unwrap();
        self.rng.random_range(last.lo..=last.hi)
    }

    fn location_index(&mut self) -> usize {
        zipf_index(&mut self.rng, self.locations.len(), 1.2)
    }

    fn jittered(&mut self, loc: usize) -> GeoPoint {
        let g = self.locations[loc].1;
        GeoPoint { lat: normal(&mut self.rng, g.lat, 0.0005), lon: normal(&mut self.rng, g.lon, 0.0005) }
    }

    fn generate_events(&mut self) {
        let [wake, sleep] = self.cfg.waking_hours;
        let poisson = (self.cfg.events_per_day > 0.0).then(|| Poisson::new(self.cfg.events_per_day).unwrap());
        let manual_poisson = (self.cfg.manual_reports_per_day > 0.0).then(|| Poisson::new(self.cfg.manual_reports_per_day).unwrap());
        let duration = LogNormal::new(self.cfg.event_duration_median_min.ln(), self.cfg.event_duration_log_sd).unwrap();
        let mut n = 0usize;
        for day in 0..self.truth.days_active {
            let base = self.day_start(day);
            let count = poisson.map_or(0, |p| p.sample(&mut self.rng) as usize);
            let mut starts: Vec<Timestamp> = (0..count)
                .map(|_| base + self.rng.random_range(i64::from(wake) * 3600..i64::from(sleep) * 3600))
                .collect();
            starts.sort_unstable();
            for start in starts {
                let minutes = duration.sample(&mut self.rng).clamp(1.0, 60.0);
                let score = self.score();
                let loc = self.location_index();
                let gps = self.jittered(loc);
                let id = EventId(format!("{}-e{:05}", self.id, n));
                n += 1;
                let ev = PhysiologicalEvent::new(id.clone(), self.id.clone(), start, start + (minutes * 60.0).round() as i64, score, self.tz)
                    .expect("generated events are valid")
                    .with_location(gps);
                self.event_locations.insert(id, loc);
                self.events.push(ev);
            }
            let manual = manual_poisson.map_or(0, |p| p.sample(&mut self.rng) as usize);
            for _ in 0..manual {
                let at = base + self.rng.random_range(i64::from(wake) * 3600..i64::from(sleep) * 3600);
                let loc = self.location_index();
                let gps = self.jittered(loc);
                let stressor = self.stressor();
                self.manual.push(ManualReport {
                    rating: if self.rng.random_bool(0.5) { StressRatingLevel::Stressed } else { StressRatingLevel::ProbablyStressed },
                    stressor_text: stressor,
                    semantic_location: Some(self.locations[loc].0.to_string()),
                    at,
                    duration_min: None,
                    tz_offset_min: self.tz,
                    gps: Some(gps),
                });
            }
        }
    }

    fn stressor(&mut self) -> String {
        if self.rng.random_bool(self.cfg.novel_stressor_prob) {
            let s = format!(
                "{} {}",
                NOVEL_QUALIFIERS[self.rng.random_range(0..NOVEL_QUALIFIERS.len())],
                NOVEL_SUBJECTS[self.rng.random_range(0..NOVEL_SUBJECTS.len())]
            );
            if !self.personal.contains(&s) {
                self.personal.push(s.clone());
            }
            return s;
        }
        if !self.personal.is_empty() && self.rng.random_bool(self.cfg.personal_reuse_prob) {
            return self.personal[self.rng.random_range(0..self.personal.len())].clone();
        }
        let i = zipf_index(&mut self.rng, self.popularity.len(), self.cfg.zipf_exponent);
        self.popularity[i].clone()
    }

    fn latent_intensity(&mut self, week: u32) -> f64 {
        let t = &self.cfg.intensity;
        let mut mu = self.truth.intensity_intercept + self.truth.intensity_slope * f64::from(week - 1);
        if week == 1 {
            mu += t.first_week_elevation;
        }
        normal(&mut self.rng, mu, t.noise_sd)
    }

    fn latent_frequency(&mut self, week: u32) -> f64 {
        let t = &self.cfg.frequency;
        let mut mu = self.truth.frequency_intercept + self.truth.frequency_slope * f64::from(week - 1);
        if week == 1 {
            mu += t.first_week_elevation;
        }
        normal(&mut self.rng, mu, t.noise_sd)
    }

    fn survey_response(&mut self, week: u32) -> (SurveyResponse, f64) {
        let per_day = self.latent_frequency(week);
        let mut impacts = BTreeSet::new();
        let pick = [
            (VizImpact::AwarenessOfPatterns, 0.5),
            (VizImpact::ContextualUnderstanding, 0.4),
            (VizImpact::MotivatedToReduce, 0.3),
        ];
        for (impact, p) in pick {
            if self.rng.random_bool(p) {
                impacts.insert(impact);
            }
        }
        if let Some(a) = self.action_week {
            if week == a {
                impacts.insert(VizImpact::TookSpecificAction);
            } else if week > a && self.rng.random_bool(0.3) {
                impacts.insert(VizImpact::SawReductionFromChange);
            }
        }
        if impacts.is_empty() {
            impacts.insert(VizImpact::None);
        }
        let recall = normal(&mut self.rng, 2.1, 0.7).round().clamp(1.0, 5.0) as u8;
        (SurveyResponse { frequency: frequency_for_latent(per_day), recall_ease: recall, viz_impacts: impacts }, per_day)
    }

    fn run(mut self, platform: &Platform) -> Result<(ParticipantTruth, Vec<LatentRating>, Vec<LatentFrequency>)> {
        platform.enroll(self.id.clone(), self.clock.enrollment_day, self.tz)?;
        self.generate_events();
        let mut queue: BinaryHeap<Reverse<(Timestamp, u64, Action)>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |q: &mut BinaryHeap<_>, at: Timestamp, a: Action| {
            seq += 1;
            q.push(Reverse((at, seq, a)));
        };
        for (i, e) in self.events.iter().enumerate() {
            push(&mut queue, e.end, Action::Ingest(i));
        }
        for (i, m) in self.manual.iter().enumerate() {
            push(&mut queue, m.at + 600, Action::Manual(i));
        }
        for week in 1..=self.cfg.n_weeks {
            let active_through_week = self.truth.days_active >= week * 7;
            let forced = self.action_week == Some(week);
            if active_through_week && (forced || self.rng.random_bool(self.cfg.survey_rate)) {
                let sunday = sunday_on_or_after(self.clock.week_end(week));
                let delay: f64 = Exp::new(1.0 / 6.0).unwrap().sample(&mut self.rng);
                let delay = delay.min(40.0);
                push(&mut queue, local_midnight(sunday, self.tz) + 8 * 3600 + (delay * 3600.0) as i64, Action::Survey(week));
            }
        }
        let delay = Exp::new(1.0 / self.cfg.response_delay_mean_min).unwrap();
        while let Some(Reverse((now, _, action))) = queue.pop() {
            match action {
                Action::Ingest(i) => {
                    let ev = self.events[i].clone();
                    if let PromptDecision::Issued(t) = platform.ingest_event(ev, now)? {
                        if self.rng.random_bool(self.cfg.response_rate) {
                            let wait = (delay.sample(&mut self.rng) * 60.0).min(23.0 * 3600.0) as i64;
                            push(&mut queue, t.issued_at + wait, Action::Rate(t.event_id));
                        }
                    }
                }
                Action::Rate(event_id) => {
                    let ev = &self.events[self.index_of(&event_id)];
                    let week = self.clock.week_of(ev.start, ev.tz_offset_min);
                    let latent = self.latent_intensity(week);
                    let rating = rating_for_latent(latent);
                    self.latents.push(LatentRating { participant_id: self.id.clone(), event_id: event_id.clone(), week, latent });
                    platform.submit_rating(&self.id, &event_id, rating, now)?;
                    if requires_stressor(rating) && self.rng.random_bool(self.cfg.stressor_completion) {
                        let k = self.completions;
                        self.completions += 1;
                        let et = &self.cfg.entry_time;
                        let secs = normal(&mut self.rng, et.intercept_s + et.slope_s * k as f64, et.noise_sd_s).max(et.floor_s);
                        push(&mut queue, now + secs.round() as i64, Action::Complete(event_id, k));
                    } else if self.rng.random_bool(self.cfg.private_rate) {
                        push(&mut queue, now + 3600, Action::Private(event_id));
                    }
                }
                Action::Complete(event_id, _) => {
                    let loc = self.event_locations[&event_id];
                    let stressor = self.stressor();
                    platform.complete_annotation(&self.id, &event_id, &stressor, Some(self.locations[loc].0.to_string()), now)?;
                    if self.rng.random_bool(self.cfg.private_rate) {
                        push(&mut queue, now + 3600, Action::Private(event_id));
                    }
                }
                Action::Private(event_id) => {
                    let patch = AnnotationPatch { is_private: Some(true), ..Default::default() };
                    platform.edit_annotation(&self.id, &event_id, patch, now)?;
                }
                Action::Manual(i) => {
                    let report = self.manual[i].clone();
                    match platform.manual_report(&self.id, report, now) {
                        Ok(_) | Err(CoreError::Conflict(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                Action::Survey(week) => {
                    let (response, per_day) = self.survey_response(week);
                    let choice = response.frequency;
                    platform.submit_survey(&self.id, week, response, now)?;
                    self.frequencies.push(LatentFrequency { participant_id: self.id.clone(), week, per_day, choice });
                }
            }
        }
        let mut truth = self.truth.clone();
        truth.action_week = self.action_week;
        Ok((truth, self.latents, self.frequencies))
    }

    fn index_of(&self, id: &EventId) -> usize {
        // ids are "{pid}-eNNNNN" in generation order
        id.as_str().rsplit("-e").next().and_then(|n| n.parse().ok()).expect("simulated event id")
    }
}

/// Runs the cohort through an in-memory platform and applies the configured
/// action effect.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut out = SimOutput { participants: Vec::new(), truths: Vec::new(), latent_ratings: Vec::new(), latent_frequencies: Vec::new() };
    for index in 0..cfg.n_participants {
        // one platform per participant keeps the streams independent
        let platform = Platform::in_memory(cfg.platform.clone());
        let sim = ParticipantSim::new(cfg, index);
        let id = sim.id.clone();
        let (truth, latents, freqs) = sim.run(&platform)?;
        out.participants.push(platform.snapshot(&id)?);
        out.truths.push(truth);
        out.latent_ratings.extend(latents);
        out.latent_frequencies.extend(freqs);
    }
    let subcohort: BTreeMap<ParticipantId, u32> =
        out.truths.iter().filter_map(|t| t.action_week.map(|w| (t.participant_id.clone(), w))).collect();
    inject_action_effect(&mut out, &subcohort, cfg.action.step_z);
    Ok(out)
}

/// Daily mean intensity per local study day from non-private ratings.
pub fn daily_intensities(snapshot: &ParticipantSnapshot) -> BTreeMap<i64, (u32, f64)> {
    let clock = snapshot.clock();
    let events: BTreeMap<&EventId, &PhysiologicalEvent> = snapshot.events.iter().map(|e| (&e.event_id, e)).collect();
    let mut acc: BTreeMap<i64, (u32, f64, usize)> = BTreeMap::new();
    for a in snapshot.annotations.iter().filter(|a| !a.is_private) {
        let Some(e) = events.get(&a.event_id) else { continue };
        let date = e.local_start().date();
        let entry = acc.entry(clock.study_day(date)).or_insert((clock.week_index(date), 0.0, 0));
        entry.1 += f64::from(a.intensity());
        entry.2 += 1;
    }
    acc.into_iter().map(|(d, (w, s, n))| (d, (w, s / n as f64))).collect()
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Shifts momentary latent intensity after each participant's action week so
/// that daily intensities move by `step_z` of the participant's daily SD, and
/// re-derives the affected ratings. The shift is divided by the fraction of
/// latent mass inside the rating scale, which the clamp would otherwise eat.
pub fn inject_action_effect(out: &mut SimOutput, subcohort: &BTreeMap<ParticipantId, u32>, step_z: f64) {
    for (pid, &week) in subcohort {
        let Some(pi) = out.participants.iter().position(|p| &p.profile.participant_id == pid) else { continue };
        let latents: BTreeMap<&EventId, &LatentRating> =
            out.latent_ratings.iter().filter(|l| &l.participant_id == pid).map(|l| (&l.event_id, l)).collect();
        let daily: Vec<f64> = daily_intensities(&out.participants[pi]).values().map(|v| v.1).collect();
        let values: Vec<f64> = latents.values().map(|l| l.latent).collect();
        if daily.len() < 2 || values.len() < 2 {
            continue;
        }
        let sd_daily = population_sd(&daily);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = population_sd(&values).max(1e-9);
        let inside = moods_stats::dist::norm_cdf((4.5 - mean) / sd) - moods_stats::dist::norm_cdf((-0.5 - mean) / sd);
        let shift = step_z * sd_daily / inside.max(0.05);
        let snapshot = &mut out.participants[pi];
        for a in snapshot.annotations.iter_mut().filter(|a| !a.is_manual) {
            if let Some(l) = latents.get(&a.event_id) {
                let shifted = if l.week > week { l.latent + shift } else { l.latent };
                a.rating = rating_for_latent(shifted);
            }
        }
        if let Some(t) = out.truths.iter_mut().find(|t| &t.participant_id == pid) {
            t.action_week = Some(week);
            t.action_step_z = step_z;
            t.action_shift = shift;
        }
    }
}

/// Writes snapshots as platform data directories (one log line per record).
pub fn write_dataset(participants: &[ParticipantSnapshot], data_dir: &Path) -> Result<()> {
    for p in participants {
        let dir = data_dir.join(p.profile.participant_id.as_str());
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        write_profile(&dir, &p.profile)?;
        let (mut log, _) = ParticipantLog::open(&dir, false)?;
        for e in &p.events {
            log.append(LogKind::Events, e.event_id.as_str(), 1, e)?;
        }
        for t in &p.tickets {
            log.append(LogKind::Tickets, t.event_id.as_str(), if t.responded { 2 } else { 1 }, t)?;
        }
        for a in &p.annotations {
            log.append(LogKind::Annotations, a.event_id.as_str(), a.version, a)?;
        }
        for s in &p.surveys {
            log.append(LogKind::Surveys, &s.week_index.to_string(), 1, s)?;
        }
    }
    Ok(())
}

/// Days since enrolment on which each participant was last seen, plus one.
pub fn days_active(snapshot: &ParticipantSnapshot) -> u32 {
    let clock = snapshot.clock();
    snapshot
        .events
        .iter()
        .map(|e| clock.study_day(e.local_start().date()) + 1)
        .max()
        .unwrap_or(0)
        .max(0) as u32
}

/// Study-day span covered by a cohort, for sanity checks.
pub fn span_days(participants: &[ParticipantSnapshot]) -> i64 {
    let lo = participants.iter().flat_map(|p| p.events.first()).map(|e| e.start).min();
    let hi = participants.iter().flat_map(|p| p.events.last()).map(|e| e.end).max();
    match (lo, hi) {
        (Some(a), Some(b)) => (b - a) / SECONDS_PER_DAY,
        _ => 0,
    }
}

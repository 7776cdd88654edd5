//! Cohort analyses over participant snapshots: engagement, retention, weekly
//! trends, mixed-effects fits, action-aligned interrupted time series and the
//! reflection-survey summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use moods_stats::{
    bootstrap_band, entry_time_trend, filter_participants, fit_lmm, interrupted_time_series, mann_kendall,
    mann_whitney_u, retention_curve, shapiro_wilk, theil_sen, wilcoxon_signed_rank, BootstrapOptions, DailyIntensity,
    ItsReport, LmmFit, LmmOptions, Observation, RankTest, RetentionCurve, ShapiroWilk, StatsError, TrendReport,
};
use serde::{Deserialize, Serialize};

use crate::domain::{local_date, ParticipantId, VizImpact};
use crate::error::{CoreError, Result};
use crate::platform::ParticipantSnapshot;
use crate::sim::daily_intensities;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Momentary stress intensity (0-4) from rated prompts.
    Intensity,
    /// Self-reported daily frequency of stressful moments (1-4) from weekly surveys.
    Frequency,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Intensity, Metric::Frequency];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Intensity => "intensity",
            Metric::Frequency => "frequency",
        }
    }
}

impl FromStr for Metric {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(Metric::Intensity),
            "frequency" => Ok(Metric::Frequency),
            other => Err(CoreError::Validation(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Average of participant weekly means.
    ParticipantMean,
    /// Average of all observations in the week.
    Pooled,
}

fn stats_err(e: StatsError) -> CoreError {
    CoreError::Validation(e.to_string())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Raw observations of a metric per participant and 1-based week.
pub fn raw_observations(p: &ParticipantSnapshot, metric: Metric) -> Vec<(u32, f64)> {
    let clock = p.clock();
    match metric {
        Metric::Intensity => {
            let events: BTreeMap<_, _> = p.events.iter().map(|e| (&e.event_id, e)).collect();
            p.annotations
                .iter()
                .filter(|a| !a.is_private)
                .filter_map(|a| events.get(&a.event_id).map(|e| (clock.week_of(e.start, e.tz_offset_min), f64::from(a.intensity()))))
                .collect()
        }
        Metric::Frequency => p.surveys.iter().map(|s| (s.week_index, f64::from(s.frequency_value()))).collect(),
    }
}

/// Per-participant weekly means: participant -> week -> (mean, count).
pub fn participant_weekly(snapshots: &[ParticipantSnapshot], metric: Metric) -> BTreeMap<ParticipantId, BTreeMap<u32, (f64, usize)>> {
    snapshots
        .iter()
        .map(|p| {
            let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
            for (w, y) in raw_observations(p, metric) {
                let e = acc.entry(w).or_default();
                e.0 += y;
                e.1 += 1;
            }
            let weeks = acc.into_iter().map(|(w, (s, n))| (w, (s / n as f64, n))).collect();
            (p.profile.participant_id.clone(), weeks)
        })
        .collect()
}

type Weekly = BTreeMap<u32, (f64, usize)>;

fn population_weekly(units: &[Weekly], weighting: Weighting, n_weeks: u32) -> Vec<Option<f64>> {
    (1..=n_weeks)
        .map(|w| {
            let (mut s, mut n) = (0.0, 0usize);
            for u in units {
                if let Some(&(m, c)) = u.get(&w) {
                    match weighting {
                        Weighting::ParticipantMean => {
                            s += m;
                            n += 1;
                        }
                        Weighting::Pooled => {
                            s += m * c as f64;
                            n += c;
                        }
                    }
                }
            }
            (n > 0).then(|| s / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub metric: Metric,
    pub weighting: Weighting,
    /// First week included in the series.
    pub first_week: u32,
    /// `(week, population mean)` for weeks with data.
    pub weekly_means: Vec<(u32, f64)>,
    pub report: TrendReport,
}

fn study_weeks(snapshots: &[ParticipantSnapshot]) -> u32 {
    snapshots
        .iter()
        .flat_map(|p| {
            let clock = p.clock();
            p.events.iter().map(move |e| clock.week_of(e.start, e.tz_offset_min)).chain(p.surveys.iter().map(|s| s.week_index))
        })
        .max()
        .unwrap_or(0)
}

/// Mann-Kendall trend with Theil-Sen slope on population weekly means.
/// Slope units are metric points per week; the intercept is at `first_week`.
pub fn weekly_trend(snapshots: &[ParticipantSnapshot], metric: Metric, weighting: Weighting, first_week: u32) -> Result<TrendSummary> {
    let units: Vec<Weekly> = participant_weekly(snapshots, metric).into_values().collect();
    let means: Vec<(u32, f64)> = population_weekly(&units, weighting, study_weeks(snapshots))
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|m| (i as u32 + 1, m)))
        .filter(|(w, _)| *w >= first_week)
        .collect();
    let y: Vec<f64> = means.iter().map(|m| m.1).collect();
    let report = mann_kendall(&y).map_err(stats_err)?;
    Ok(TrendSummary { metric, weighting, first_week, weekly_means: means, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendBand {
    pub metric: Metric,
    pub weeks: Vec<u32>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resamples: usize,
    pub failed: usize,
}

/// Participant-resampling envelope around the Theil-Sen line of weekly means.
pub fn trend_band(snapshots: &[ParticipantSnapshot], metric: Metric, opts: &BootstrapOptions) -> Result<TrendBand> {
    let units: Vec<Weekly> = participant_weekly(snapshots, metric).into_values().collect();
    let n_weeks = study_weeks(snapshots);
    let band = bootstrap_band(&units, opts, |cohort| {
        let weekly = population_weekly(cohort, Weighting::ParticipantMean, n_weeks);
        if weekly.iter().any(Option::is_none) {
            return Err(StatsError::InsufficientData { needed: n_weeks as usize, got: weekly.iter().flatten().count() });
        }
        let y: Vec<f64> = weekly.into_iter().flatten().collect();
        let (m, b) = theil_sen(&y)?;
        Ok((0..y.len()).map(|x| b + m * x as f64).collect())
    })
    .map_err(stats_err)?;
    Ok(TrendBand {
        metric,
        weeks: (1..=n_weeks).collect(),
        estimate: band.estimate,
        lower: band.lower,
        upper: band.upper,
        resamples: band.resamples,
        failed: band.failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmSummary {
    pub metric: Metric,
    pub fit: LmmFit,
    pub too_few_weeks: Vec<String>,
    pub no_variability: Vec<String>,
}

/// Observations for the mixed model: participant weekly means with week
/// counted from 0.
pub fn lmm_observations(snapshots: &[ParticipantSnapshot], metric: Metric) -> Vec<Observation> {
    participant_weekly(snapshots, metric)
        .into_iter()
        .flat_map(|(pid, weeks)| weeks.into_iter().map(move |(w, (m, _))| Observation::new(pid.0.clone(), f64::from(w - 1), m)))
        .collect()
}

pub fn lmm(snapshots: &[ParticipantSnapshot], metric: Metric, min_weeks: usize) -> Result<LmmSummary> {
    let filtered = filter_participants(&lmm_observations(snapshots, metric), min_weeks);
    let fit = fit_lmm(&filtered.kept, &LmmOptions::default()).map_err(stats_err)?;
    Ok(LmmSummary { metric, fit, too_few_weeks: filtered.too_few_weeks, no_variability: filtered.no_variability })
}

/// First week in which a participant reported taking a specific action.
pub fn action_weeks(snapshots: &[ParticipantSnapshot]) -> BTreeMap<String, u32> {
    snapshots
        .iter()
        .filter_map(|p| {
            p.surveys
                .iter()
                .filter(|s| s.viz_impacts.contains(&VizImpact::TookSpecificAction))
                .map(|s| s.week_index)
                .min()
                .map(|w| (p.profile.participant_id.0.clone(), w))
        })
        .collect()
}

pub fn daily_series(snapshots: &[ParticipantSnapshot]) -> Vec<DailyIntensity> {
    snapshots
        .iter()
        .flat_map(|p| {
            daily_intensities(p).into_iter().map(|(day, (week, intensity))| DailyIntensity {
                participant: p.profile.participant_id.0.clone(),
                day,
                week,
                intensity,
            })
        })
        .collect()
}

pub fn its(snapshots: &[ParticipantSnapshot], window_days: usize) -> Result<ItsReport> {
    interrupted_time_series(&daily_series(snapshots), &action_weeks(snapshots), window_days).map_err(stats_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSummary {
    pub curve: RetentionCurve,
    pub day30: f64,
    /// Study days from enrolment through the last detected event.
    pub days_active: BTreeMap<ParticipantId, u32>,
}

pub fn retention(snapshots: &[ParticipantSnapshot]) -> RetentionSummary {
    let days_active: BTreeMap<ParticipantId, u32> =
        snapshots.iter().map(|p| (p.profile.participant_id.clone(), crate::sim::days_active(p))).collect();
    let days: Vec<u32> = days_active.values().copied().collect();
    let curve = retention_curve(&days);
    RetentionSummary { day30: curve.at(30), curve, days_active }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Engagement {
    pub participants: usize,
    pub detected_events: usize,
    pub prompts: usize,
    pub responses: usize,
    /// Participant-days with at least one prompt.
    pub prompt_days: usize,
    pub prompts_per_day: f64,
    pub responses_per_day: f64,
    pub response_fraction: f64,
    /// Stressors entered per prompt-day, manual reports included.
    pub stressors_per_day: f64,
    pub manual_reports: usize,
    pub private_annotations: usize,
    pub unique_stressors: usize,
    pub surveys: usize,
    pub late_surveys: usize,
}

pub fn engagement(snapshots: &[ParticipantSnapshot]) -> Engagement {
    let mut e = Engagement {
        participants: snapshots.len(),
        detected_events: 0,
        prompts: 0,
        responses: 0,
        prompt_days: 0,
        prompts_per_day: 0.0,
        responses_per_day: 0.0,
        response_fraction: 0.0,
        stressors_per_day: 0.0,
        manual_reports: 0,
        private_annotations: 0,
        unique_stressors: 0,
        surveys: 0,
        late_surveys: 0,
    };
    let mut stressors = 0usize;
    let mut unique = BTreeSet::new();
    for p in snapshots {
        let tz = p.profile.tz_offset_min;
        e.detected_events += p.events.iter().filter(|ev| ev.is_detected()).count();
        e.prompts += p.tickets.len();
        e.responses += p.tickets.iter().filter(|t| t.responded).count();
        e.prompt_days += p.tickets.iter().map(|t| local_date(t.issued_at, tz)).collect::<BTreeSet<_>>().len();
        for a in &p.annotations {
            e.manual_reports += usize::from(a.is_manual);
            e.private_annotations += usize::from(a.is_private);
            if let Some(s) = &a.stressor_text {
                stressors += 1;
                unique.insert(crate::lexicon::normalize_stressor(s));
            }
        }
        e.surveys += p.surveys.len();
        e.late_surveys += p.surveys.iter().filter(|s| s.late).count();
    }
    if e.prompt_days > 0 {
        let d = e.prompt_days as f64;
        e.prompts_per_day = e.prompts as f64 / d;
        e.responses_per_day = e.responses as f64 / d;
        e.stressors_per_day = stressors as f64 / d;
    }
    if e.prompts > 0 {
        e.response_fraction = e.responses as f64 / e.prompts as f64;
    }
    e.unique_stressors = unique.len();
    e
}

/// Cohort mean stressor-entry time by per-participant episode index, over
/// the leading indices that at least `min_participants` reached.
pub fn entry_time_series(snapshots: &[ParticipantSnapshot], min_participants: usize) -> Vec<f64> {
    let mut by_index: Vec<Vec<f64>> = Vec::new();
    for p in snapshots {
        let mut timed: Vec<_> =
            p.annotations
                .iter()
                .filter(|a| !a.is_private)
                .filter_map(|a| a.entry_duration_s.map(|d| (a.created_at, a.event_id.clone(), d)))
                .collect();
        timed.sort();
        for (k, (_, _, d)) in timed.into_iter().enumerate() {
            if by_index.len() <= k {
                by_index.push(Vec::new());
            }
            by_index[k].push(d as f64);
        }
    }
    by_index.into_iter().take_while(|v| v.len() >= min_participants).map(|v| mean(&v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryTimeSummary {
    pub episodes: usize,
    pub report: TrendReport,
}

pub fn entry_time(snapshots: &[ParticipantSnapshot], max_episodes: usize, min_participants: usize) -> Result<EntryTimeSummary> {
    let mut series = entry_time_series(snapshots, min_participants);
    series.truncate(max_episodes);
    let report = entry_time_trend(&series).map_err(stats_err)?;
    Ok(EntryTimeSummary { episodes: series.len(), report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekComparison {
    pub metric: Metric,
    pub week_a: u32,
    pub week_b: u32,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_pairs: usize,
    pub test: RankTest,
}

/// Paired signed-rank comparison of participant means between two weeks.
pub fn compare_weeks(snapshots: &[ParticipantSnapshot], metric: Metric, week_a: u32, week_b: u32) -> Result<WeekComparison> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for weeks in participant_weekly(snapshots, metric).values() {
        if let (Some(x), Some(y)) = (weeks.get(&week_a), weeks.get(&week_b)) {
            a.push(x.0);
            b.push(y.0);
        }
    }
    let test = wilcoxon_signed_rank(&a, &b).map_err(stats_err)?;
    Ok(WeekComparison { metric, week_a, week_b, mean_a: mean(&a), mean_b: mean(&b), n_pairs: a.len(), test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub metric: Metric,
    pub mean_action: f64,
    pub mean_other: f64,
    pub normality_action: Option<ShapiroWilk>,
    pub normality_other: Option<ShapiroWilk>,
    pub test: RankTest,
}

/// Week-1 means of participants who later reported an action against the rest.
pub fn compare_action_baseline(snapshots: &[ParticipantSnapshot], metric: Metric) -> Result<GroupComparison> {
    let actions = action_weeks(snapshots);
    let (mut a, mut o) = (Vec::new(), Vec::new());
    for (pid, weeks) in participant_weekly(snapshots, metric) {
        if let Some(&(m, _)) = weeks.get(&1) {
            if actions.contains_key(&pid.0) {
                a.push(m);
            } else {
                o.push(m);
            }
        }
    }
    let test = mann_whitney_u(&a, &o).map_err(stats_err)?;
    Ok(GroupComparison {
        metric,
        mean_action: mean(&a),
        mean_other: mean(&o),
        normality_action: shapiro_wilk(&a).ok(),
        normality_other: shapiro_wilk(&o).ok(),
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    /// Mean ease of recall (1 easiest) per week.
    pub recall_ease: Vec<(u32, f64)>,
    /// Share of survey responses selecting each impact.
    pub viz_impacts: Vec<(VizImpact, f64)>,
}

pub fn survey_summary(snapshots: &[ParticipantSnapshot]) -> SurveySummary {
    let mut ease: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut counts: BTreeMap<VizImpact, usize> = BTreeMap::new();
    let mut total = 0usize;
    for s in snapshots.iter().flat_map(|p| &p.surveys) {
        let e = ease.entry(s.week_index).or_default();
        e.0 += f64::from(s.recall_ease);
        e.1 += 1;
        total += 1;
        for i in &s.viz_impacts {
            *counts.entry(*i).or_default() += 1;
        }
    }
    SurveySummary {
        recall_ease: ease.into_iter().map(|(w, (s, n))| (w, s / n as f64)).collect(),
        viz_impacts: VizImpact::ALL
            .iter()
            .map(|i| (*i, if total == 0 { 0.0 } else { counts.get(i).copied().unwrap_or(0) as f64 / total as f64 }))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub lmm_min_weeks: usize,
    pub its_window_days: usize,
    pub bootstrap: BootstrapOptionsDoc,
    pub entry_max_episodes: usize,
    pub entry_min_participants: usize,
    pub baseline_weeks: (u32, u32),
}

/// Serializable mirror of [`BootstrapOptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptionsDoc {
    pub resamples: usize,
    pub seed: u64,
    pub lower_pct: f64,
    pub upper_pct: f64,
}

impl From<BootstrapOptionsDoc> for BootstrapOptions {
    fn from(d: BootstrapOptionsDoc) -> Self {
        BootstrapOptions { resamples: d.resamples, seed: d.seed, lower_pct: d.lower_pct, upper_pct: d.upper_pct }
    }
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        let b = BootstrapOptions::default();
        Self {
            lmm_min_weeks: 5,
            its_window_days: 20,
            bootstrap: BootstrapOptionsDoc { resamples: b.resamples, seed: b.seed, lower_pct: b.lower_pct, upper_pct: b.upper_pct },
            entry_max_episodes: 60,
            entry_min_participants: 10,
            baseline_weeks: (1, 4),
        }
    }
}

/// Every analysis in one document. Parts that cannot be computed on the given
/// data are left empty and named in `unavailable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub engagement: Engagement,
    pub retention: RetentionSummary,
    pub trends: Vec<TrendSummary>,
    pub bands: Vec<TrendBand>,
    pub lmm: Vec<LmmSummary>,
    pub its: Option<ItsReport>,
    pub entry_time: Option<EntryTimeSummary>,
    pub baseline: Option<WeekComparison>,
    pub action_baseline: Option<GroupComparison>,
    pub surveys: SurveySummary,
    pub unavailable: Vec<String>,
}

impl StudyReport {
    pub fn trend(&self, metric: Metric, weighting: Weighting, first_week: u32) -> Option<&TrendSummary> {
        self.trends.iter().find(|t| t.metric == metric && t.weighting == weighting && t.first_week == first_week)
    }
}

pub fn study_report(snapshots: &[ParticipantSnapshot], opts: &AnalysisOptions) -> StudyReport {
    fn keep<T>(unavailable: &mut Vec<String>, name: String, r: Result<T>) -> Option<T> {
        r.map_err(|e| unavailable.push(format!("{name}: {e}"))).ok()
    }
    let mut unavailable = Vec::new();
    let mut trends = Vec::new();
    let mut bands = Vec::new();
    let mut fits = Vec::new();
    for metric in Metric::ALL {
        for (weighting, first) in [(Weighting::ParticipantMean, 1), (Weighting::Pooled, 1), (Weighting::ParticipantMean, 2)] {
            let name = format!("trend {} {:?} from week {first}", metric.as_str(), weighting);
            trends.extend(keep(&mut unavailable, name, weekly_trend(snapshots, metric, weighting, first)));
        }
        bands.extend(keep(&mut unavailable, format!("band {}", metric.as_str()), trend_band(snapshots, metric, &opts.bootstrap.into())));
        fits.extend(keep(&mut unavailable, format!("lmm {}", metric.as_str()), lmm(snapshots, metric, opts.lmm_min_weeks)));
    }
    let its = keep(&mut unavailable, "its".into(), its(snapshots, opts.its_window_days));
    let entry = keep(&mut unavailable, "entry_time".into(), entry_time(snapshots, opts.entry_max_episodes, opts.entry_min_participants));
    let (wa, wb) = opts.baseline_weeks;
    let baseline = keep(&mut unavailable, "baseline".into(), compare_weeks(snapshots, Metric::Intensity, wa, wb));
    let action_baseline = keep(&mut unavailable, "action_baseline".into(), compare_action_baseline(snapshots, Metric::Intensity));
    StudyReport {
        engagement: engagement(snapshots),
        retention: retention(snapshots),
        trends,
        bands,
        lmm: fits,
        its,
        entry_time: entry,
        baseline,
        action_baseline,
        surveys: survey_summary(snapshots),
        unavailable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimConfig};

    fn cohort() -> Vec<ParticipantSnapshot> {
        let cfg = SimConfig { n_participants: 12, n_weeks: 6, dropout_hazard_per_day: 0.0, ..Default::default() };
        simulate(&cfg).unwrap().participants
    }

    #[test]
    fn weighting_modes_agree_when_counts_are_equal() {
        let units = vec![
            BTreeMap::from([(1, (2.0, 3)), (2, (1.0, 3))]),
            BTreeMap::from([(1, (4.0, 3)), (2, (3.0, 3))]),
        ];
        let a = population_weekly(&units, Weighting::ParticipantMean, 2);
        let b = population_weekly(&units, Weighting::Pooled, 2);
        assert_eq!(a, vec![Some(3.0), Some(2.0)]);
        assert_eq!(a, b);
        let skewed = vec![BTreeMap::from([(1, (2.0, 1))]), BTreeMap::from([(1, (4.0, 3))])];
        assert_eq!(population_weekly(&skewed, Weighting::Pooled, 1), vec![Some(3.5)]);
    }

    #[test]
    fn report_on_small_cohort() {
        let snaps = cohort();
        let r = study_report(&snaps, &AnalysisOptions { bootstrap: BootstrapOptionsDoc { resamples: 50, seed: 1, lower_pct: 5.0, upper_pct: 95.0 }, ..Default::default() });
        assert_eq!(r.engagement.participants, 12);
        assert!(r.engagement.response_fraction > 0.6 && r.engagement.response_fraction < 0.85);
        let t = r.trend(Metric::Intensity, Weighting::ParticipantMean, 1).unwrap();
        assert_eq!(t.weekly_means.len(), 6);
        assert_eq!(r.retention.day30, 1.0);
        for b in &r.bands {
            assert!(b.lower.iter().zip(&b.upper).all(|(l, u)| l <= u));
        }
    }

    #[test]
    fn metric_parses() {
        assert_eq!("frequency".parse::<Metric>().unwrap(), Metric::Frequency);
        assert!("mood".parse::<Metric>().is_err());
    }
}

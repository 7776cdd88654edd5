use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use moods_stats::descriptive::{quantile_sorted, sample_sd, sorted};
use serde_json::json;

use super::{Axis, ChartKind, ChartSpec, ColorScale, Legend, Point, Series, TimeBlock, VizInput, VizRecord, SCHEMA_VERSION};
use crate::domain::weekday_index;

const TOP_N: usize = 5;
const RANKING_N: usize = 10;
const KDE_SAMPLES: usize = 64;
const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

pub fn build_chart(kind: ChartKind, input: &VizInput) -> ChartSpec {
    match kind {
        ChartKind::OverallSummary => overall_summary(input),
        ChartKind::ProminentStressorContext => prominent_stressor_context(input),
        ChartKind::MapView => map_view(input),
        ChartKind::StressorPrevalence => share_chart(input, kind, "Stressor prevalence", |r| r.stressor_or_unspecified(), true),
        ChartKind::LocationProminence => share_chart(input, kind, "Location prominence", |r| r.location_or_unspecified(), false),
        ChartKind::CalendarView => calendar_view(input),
        ChartKind::StressorRanking => stressor_ranking(input),
        ChartKind::WeeklyTrend => weekly_counts(input, kind, "Weekly stressor frequency", |r| r.stressor.clone()),
        ChartKind::WeeklyPrevalence => weekly_prevalence(input),
        ChartKind::TimeOfDayTrend => time_of_day_trend(input),
        ChartKind::LocationTrend => weekly_counts(input, kind, "Stress by location over time", |r| Some(r.location_or_unspecified().to_string())),
        ChartKind::DayOfWeek => day_of_week(input),
        ChartKind::DurationDistribution => duration_distribution(input),
        ChartKind::PrevalentDuration => prevalent_duration(input),
        ChartKind::StressorWordCloud => word_cloud(input, kind, "Stressor word cloud", |r| r.stressor.clone()),
        ChartKind::LocationWordCloud => word_cloud(input, kind, "Location word cloud", |r| r.location.clone()),
    }
}

fn spec(kind: ChartKind, input: &VizInput, title: &str) -> ChartSpec {
    ChartSpec {
        schema_version: SCHEMA_VERSION,
        chart_id: kind,
        week_index: input.week,
        title: title.to_string(),
        axes: Vec::new(),
        legend: Legend { toggleable: false, items: Vec::new() },
        color_scale: ColorScale::categorical(),
        series: Vec::new(),
        meta: BTreeMap::new(),
    }
}

/// Keys ordered by value (desc), then key.
fn ranked(map: BTreeMap<String, f64>) -> Vec<(String, f64)> {
    let mut v: Vec<(String, f64)> = map.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

fn sum_by<'a>(records: impl Iterator<Item = &'a VizRecord>, key: impl Fn(&VizRecord) -> String) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(key(r)).or_insert(0.0) += r.duration_min;
    }
    m
}

fn count_by<'a>(records: impl Iterator<Item = &'a VizRecord>, key: impl Fn(&VizRecord) -> Option<String>) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for r in records {
        if let Some(k) = key(r) {
            *m.entry(k).or_insert(0.0) += 1.0;
        }
    }
    m
}

fn top_by_count(input: &VizInput) -> Vec<String> {
    ranked(count_by(input.stressor_reports(), |r| r.stressor.clone())).into_iter().take(TOP_N).map(|(k, _)| k).collect()
}

fn weeks(input: &VizInput) -> std::ops::RangeInclusive<u32> {
    1..=input.week
}

fn overall_summary(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::OverallSummary, input, "Stressed minutes per hour");
    let hours = |rs: &mut dyn Iterator<Item = &VizRecord>| -> usize {
        rs.map(|r| (r.local.date(), r.hour())).collect::<BTreeSet<(NaiveDate, u32)>>().len()
    };
    let cov_all = hours(&mut input.records.iter());
    let cov_week = hours(&mut input.records.iter().filter(|r| r.week == input.week));
    let stressed_all = input.total_stressed_min();
    let stressed_week: f64 = input.stressed().filter(|r| r.week == input.week).map(|r| r.duration_min).sum();
    let reports_all = input.stressor_reports().count() as f64;
    let reports_week = input.stressor_reports().filter(|r| r.week == input.week).count() as f64;
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let gauges = [
        ("stressed_min_per_hour_overall", "Overall stressed minutes per hour", ratio(stressed_all, cov_all)),
        ("stressed_min_per_hour_week", "This week's stressed minutes per hour", ratio(stressed_week, cov_week)),
        ("avg_stressors_per_week", "Average stressors per week", reports_all / f64::from(input.week)),
        ("daily_stressors_this_week", "Stressors per day this week", reports_week / 7.0),
    ];
    let points = gauges
        .iter()
        .map(|(id, label, v)| Point::new(*v).with("gauge", *id).with("title", *label))
        .collect();
    c.series.push(Series::new("gauges", points));
    c.meta.insert("no_data".into(), json!(cov_all == 0));
    c.meta.insert("coverage_hours".into(), json!(cov_all));
    c.meta.insert("total_stressed_min".into(), json!(stressed_all));
    c
}

fn prominent_stressor_context(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::ProminentStressorContext, input, "Where and when your top stressors happen");
    let top: Vec<(String, f64)> = ranked(sum_by(input.stressed(), |r| r.stressor_or_unspecified().to_string()))
        .into_iter()
        .take(TOP_N)
        .collect();
    let mut ring1 = Vec::new();
    let mut ring2 = Vec::new();
    let mut ring3 = Vec::new();
    for (stressor, minutes) in &top {
        ring1.push(Point { path: vec![stressor.clone()], ..Point::new(*minutes).labelled(stressor) });
        let of_stressor = || input.stressed().filter(move |r| r.stressor_or_unspecified() == stressor);
        for (loc, loc_min) in ranked(sum_by(of_stressor(), |r| r.location_or_unspecified().to_string())) {
            ring2.push(Point { path: vec![stressor.clone(), loc.clone()], ..Point::new(loc_min).labelled(&loc) });
            let mut blocks: BTreeMap<TimeBlock, f64> = BTreeMap::new();
            for r in of_stressor().filter(|r| r.location_or_unspecified() == loc) {
                *blocks.entry(r.block()).or_insert(0.0) += r.duration_min;
            }
            for (b, m) in blocks {
                ring3.push(Point {
                    path: vec![stressor.clone(), loc.clone(), b.label().to_string()],
                    ..Point::new(m).labelled(b.label())
                });
            }
        }
    }
    let shown: f64 = top.iter().map(|t| t.1).sum();
    c.legend.items = top.iter().map(|t| t.0.clone()).collect();
    c.series = vec![Series::new("stressor", ring1), Series::new("location", ring2), Series::new("time_block", ring3)];
    c.meta.insert("total_stressed_min".into(), json!(input.total_stressed_min()));
    c.meta.insert("shown_stressed_min".into(), json!(shown));
    c
}

fn map_view(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::MapView, input, "Where you reported stress");
    let mut first_week: BTreeMap<&str, u32> = BTreeMap::new();
    for r in input.records.iter().filter(|r| r.rating.is_some()) {
        first_week.entry(r.location_or_unspecified()).or_insert(r.week);
    }
    let points: Vec<Point> = input
        .records
        .iter()
        .filter(|r| r.rating.is_some())
        .filter_map(|r| {
            let g = r.gps?;
            let loc = r.location_or_unspecified();
            Some(
                Point::new(1.0)
                    .at(g.lon, Some(g.lat))
                    .labelled(loc)
                    .with("stressor", r.stressor_or_unspecified())
                    .with("day", r.local.date().to_string())
                    .with("time", r.local.format("%H:%M").to_string())
                    .with("new_this_week", first_week[loc] == input.week),
            )
        })
        .collect();
    c.legend.items = first_week.keys().map(|k| k.to_string()).collect();
    c.axes = vec![Axis::new("x", "longitude"), Axis::new("y", "latitude")];
    c.series.push(Series::new("reports", points));
    c
}

/// Donut of stressed-duration shares. With `top_only`, the top five keep
/// their own segments and the rest fold into "other".
fn share_chart(input: &VizInput, kind: ChartKind, title: &str, key: impl Fn(&VizRecord) -> &str, top_only: bool) -> ChartSpec {
    let mut c = spec(kind, input, title);
    let total = input.total_stressed_min();
    let shares = ranked(sum_by(input.stressed(), |r| key(r).to_string()));
    let (head, tail) = if top_only && shares.len() > TOP_N { shares.split_at(TOP_N) } else { (&shares[..], &[][..]) };
    let pct = |m: f64| if total > 0.0 { 100.0 * m / total } else { 0.0 };
    let mut points: Vec<Point> = head.iter().map(|(k, m)| Point::new(pct(*m)).labelled(k).with("minutes", *m)).collect();
    if !tail.is_empty() {
        let m: f64 = tail.iter().map(|t| t.1).sum();
        let members: Vec<&str> = tail.iter().map(|t| t.0.as_str()).collect();
        points.push(Point::new(pct(m)).labelled("other").with("minutes", m).with("members", members));
    }
    c.legend.items = points.iter().filter_map(|p| p.label.clone()).collect();
    c.series.push(Series::new("share", points));
    c.meta.insert("total_stressed_min".into(), json!(total));
    c.meta.insert("no_data".into(), json!(total == 0.0));
    c
}

fn calendar_view(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::CalendarView, input, "Calendar of stressors");
    let mut cells: BTreeMap<(NaiveDate, u32), Vec<&VizRecord>> = BTreeMap::new();
    for r in input.stressor_reports() {
        cells.entry((r.local.date(), r.hour())).or_default().push(r);
    }
    let mut points = Vec::new();
    for ((date, hour), rs) in cells {
        let scores: Vec<f64> = rs.iter().filter(|r| r.detected).map(|r| r.score).collect();
        let mean_score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        let stressed: Vec<f64> = rs.iter().filter(|r| r.is_stressed()).map(|r| r.duration_min).collect();
        let avg_min = if stressed.is_empty() { 0.0 } else { stressed.iter().sum::<f64>() / stressed.len() as f64 };
        let stressors: BTreeSet<&str> = rs.iter().map(|r| r.stressor_or_unspecified()).collect();
        points.push(
            Point::new(mean_score.unwrap_or(0.0))
                .at(rs[0].study_day as f64, Some(f64::from(hour)))
                .with("date", date.to_string())
                .with("hour", hour)
                .with("stressors", stressors.into_iter().collect::<Vec<_>>())
                .with("mean_score", mean_score)
                .with("avg_stressed_min", avg_min)
                .with("reports", rs.len()),
        );
    }
    c.axes = vec![Axis::new("x", "study day"), Axis::new("y", "hour of day")];
    c.color_scale = ColorScale::sequential(0.0, 100.0);
    c.series.push(Series::new("cells", points));
    c
}

fn stressor_ranking(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::StressorRanking, input, "Stressors ranked by stress likelihood");
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in input.stressor_reports().filter(|r| r.detected) {
        let e = acc.entry(r.stressor_or_unspecified().to_string()).or_default();
        e.0 += r.score;
        e.1 += 1;
    }
    let counts: BTreeMap<String, usize> = acc.iter().map(|(k, v)| (k.clone(), v.1)).collect();
    let means = acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let points = ranked(means)
        .into_iter()
        .take(RANKING_N)
        .map(|(k, m)| Point::new(m).labelled(&k).with("reports", counts[&k]))
        .collect();
    c.axes = vec![Axis::new("y", "mean stress likelihood")];
    c.color_scale = ColorScale::sequential(0.0, 100.0);
    c.series.push(Series::new("ranking", points));
    c
}

/// One zero-filled weekly count line per key, keys ordered by total count.
fn weekly_counts(input: &VizInput, kind: ChartKind, title: &str, key: impl Fn(&VizRecord) -> Option<String>) -> ChartSpec {
    let mut c = spec(kind, input, title);
    let order = ranked(count_by(input.stressor_reports(), &key));
    for (k, _) in &order {
        let points = weeks(input)
            .map(|w| {
                let n = input.stressor_reports().filter(|r| r.week == w && key(r).as_deref() == Some(k)).count();
                Point::new(n as f64).at(f64::from(w), None)
            })
            .collect();
        c.series.push(Series::new(k, points));
    }
    c.legend = Legend { toggleable: true, items: order.into_iter().map(|o| o.0).collect() };
    c.axes = vec![Axis::new("x", "week"), Axis::new("y", "reports")];
    c
}

fn weekly_prevalence(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::WeeklyPrevalence, input, "Stressor prevalence by week");
    let order: Vec<String> = ranked(count_by(input.stressor_reports(), |r| r.stressor.clone())).into_iter().map(|o| o.0).collect();
    let mut cells: BTreeMap<(usize, u32), f64> = BTreeMap::new();
    for r in input.stressor_reports() {
        let idx = order.iter().position(|s| Some(s) == r.stressor.as_ref()).unwrap();
        *cells.entry((idx, r.week)).or_insert(0.0) += 1.0;
    }
    let points = cells
        .into_iter()
        .map(|((i, w), n)| Point::new(n).at(f64::from(w), Some(i as f64)).labelled(&order[i]))
        .collect();
    c.axes = vec![Axis::new("x", "week"), Axis::categorical("y", "stressor", order.clone())];
    c.legend = Legend { toggleable: true, items: order };
    c.series.push(Series::new("bubbles", points));
    c
}

fn time_of_day_trend(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::TimeOfDayTrend, input, "Time of day of stressors by week");
    let order = ranked(count_by(input.stressor_reports(), |r| r.stressor.clone()));
    for (k, _) in &order {
        let mut cells: BTreeMap<(u32, TimeBlock), f64> = BTreeMap::new();
        for r in input.stressor_reports().filter(|r| r.stressor.as_ref() == Some(k)) {
            *cells.entry((r.week, r.block())).or_insert(0.0) += 1.0;
        }
        let points = cells
            .into_iter()
            .map(|((w, b), n)| Point::new(n).at(f64::from(w), Some(b as u8 as f64)).with("block", b.label()))
            .collect();
        c.series.push(Series::new(k, points));
    }
    c.axes = vec![
        Axis::new("x", "week"),
        Axis::categorical("y", "time of day", TimeBlock::ALL.iter().map(|b| b.label().to_string()).collect()),
    ];
    c.legend = Legend { toggleable: true, items: order.into_iter().map(|o| o.0).collect() };
    c
}

fn day_of_week(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::DayOfWeek, input, "Stressors by day of week");
    let order = ranked(count_by(input.stressor_reports(), |r| r.stressor.clone()));
    for (k, _) in &order {
        let mut days = [0.0f64; 7];
        for r in input.stressor_reports().filter(|r| r.stressor.as_ref() == Some(k)) {
            days[weekday_index(&r.local) as usize] += 1.0;
        }
        let points = days.iter().enumerate().map(|(d, n)| Point::new(*n).at(d as f64, None)).collect();
        c.series.push(Series::new(k, points));
    }
    c.axes = vec![
        Axis::categorical("x", "day of week", WEEKDAYS.iter().map(|d| d.to_string()).collect()),
        Axis::new("y", "reports"),
    ];
    c.legend = Legend { toggleable: true, items: order.into_iter().map(|o| o.0).collect() };
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl BoxSummary {
    pub fn of(values: &[f64]) -> Self {
        let s = sorted(values);
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        let fence = 1.5 * (q3 - q1);
        Self {
            n: s.len(),
            min: s[0],
            q1,
            median: quantile_sorted(&s, 0.5),
            q3,
            max: s[s.len() - 1],
            whisker_low: *s.iter().find(|v| **v >= q1 - fence).unwrap(),
            whisker_high: *s.iter().rev().find(|v| **v <= q3 + fence).unwrap(),
        }
    }

    fn into_map(self) -> BTreeMap<String, f64> {
        [
            ("n", self.n as f64),
            ("min", self.min),
            ("q1", self.q1),
            ("median", self.median),
            ("q3", self.q3),
            ("max", self.max),
            ("whisker_low", self.whisker_low),
            ("whisker_high", self.whisker_high),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Silverman's rule of thumb; 1.0 when the spread is zero.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 1.0;
    }
    let s = sorted(values);
    let sd = sample_sd(values);
    let iqr = (quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 1.0,
    };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

/// Gaussian kernel density of `values` evaluated at `grid`.
pub fn gaussian_kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|x| values.iter().map(|v| (-0.5 * ((x - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

fn duration_distribution(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::DurationDistribution, input, "Duration of your most frequent stressors");
    for k in top_by_count(input) {
        let durations: Vec<f64> = input.stressor_reports().filter(|r| r.stressor.as_ref() == Some(&k)).map(|r| r.duration_min).collect();
        let h = silverman_bandwidth(&durations);
        let summary = BoxSummary::of(&durations);
        let (lo, hi) = (summary.min - 3.0 * h, summary.max + 3.0 * h);
        let grid: Vec<f64> = (0..KDE_SAMPLES).map(|i| lo + (hi - lo) * i as f64 / (KDE_SAMPLES - 1) as f64).collect();
        let density = gaussian_kde(&durations, h, &grid);
        let points = grid.iter().zip(density).map(|(x, d)| Point::new(d).at(*x, None)).collect();
        let mut s = Series::new(&k, points);
        s.stats = summary.into_map();
        s.stats.insert("bandwidth".into(), h);
        c.series.push(s);
    }
    c.legend.items = c.series.iter().map(|s| s.id.clone()).collect();
    c.axes = vec![Axis::new("x", "duration (min)"), Axis::new("y", "density")];
    c
}

fn prevalent_duration(input: &VizInput) -> ChartSpec {
    let mut c = spec(ChartKind::PrevalentDuration, input, "Average duration per week of top stressors");
    for k in top_by_count(input) {
        let mut by_week: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for r in input.stressor_reports().filter(|r| r.stressor.as_ref() == Some(&k)) {
            let e = by_week.entry(r.week).or_default();
            e.0 += r.duration_min;
            e.1 += 1;
        }
        let points = by_week
            .into_iter()
            .map(|(w, (sum, n))| Point::new(sum / n as f64).at(f64::from(w), None).with("current_week", w == input.week))
            .collect();
        c.series.push(Series::new(&k, points));
    }
    c.legend.items = c.series.iter().map(|s| s.id.clone()).collect();
    c.axes = vec![Axis::new("x", "week"), Axis::new("y", "mean duration (min)")];
    c
}

fn word_cloud(input: &VizInput, kind: ChartKind, title: &str, key: impl Fn(&VizRecord) -> Option<String>) -> ChartSpec {
    let mut c = spec(kind, input, title);
    let points = ranked(count_by(input.stressor_reports(), key))
        .into_iter()
        .map(|(w, n)| Point { label: Some(w), ..Point::new(n) })
        .collect();
    c.series.push(Series::new("words", points));
    c
}

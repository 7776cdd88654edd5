//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings so the page needs no generated
//! type glue. The same functions are callable natively, which is how the tests
//! exercise them.

use moods_core::domain::{EventId, PhysiologicalEvent};
use moods_core::events::{select_for_prompt, update_percentiles, Band, SamplingPolicy, ScoredEvent};
use moods_core::sim::{simulate, SimConfig};
use moods_core::CoreError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Fixed origin for the synthetic timeline used by the sampler preview.
const ORIGIN: i64 = 1_709_251_200;

#[derive(Debug, Deserialize)]
pub struct SamplerRequest {
    /// Past detector scores, oldest first, one per 30 minutes.
    #[serde(default)]
    pub history: Vec<f64>,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct SampledEvent {
    pub score: f64,
    pub band: Band,
    pub probability: f64,
    pub selected: bool,
}

/// Bands the history yields and the prompt decision for each new score,
/// before budgets or the refractory gap apply.
pub fn sampler_preview(request: &str) -> Result<String, CoreError> {
    let req: SamplerRequest = serde_json::from_str(request)?;
    let policy = SamplingPolicy::default();
    if let Some(bad) = req.history.iter().chain(&req.scores).find(|s| !(0.0..=100.0).contains(*s)) {
        return Err(CoreError::Validation(format!("score {bad} outside [0, 100]")));
    }
    let history: Vec<ScoredEvent> = req
        .history
        .iter()
        .enumerate()
        .map(|(i, &score)| ScoredEvent { event_id: EventId(format!("h{i}")), start: ORIGIN + i as i64 * 1800, score })
        .collect();
    let as_of = ORIGIN + req.history.len() as i64 * 1800;
    let bands = update_percentiles(&history, as_of, &policy);
    let events = req
        .scores
        .iter()
        .enumerate()
        .map(|(i, &score)| {
            let start = as_of + i as i64 * 1800;
            let event = PhysiologicalEvent::new(format!("s{i}").as_str(), "demo", start, start + 300, score, 0)?;
            Ok(SampledEvent {
                score,
                band: bands.band_of(score),
                probability: policy.selection_probability(score, &bands),
                selected: select_for_prompt(&event, &bands, &policy, req.seed),
            })
        })
        .collect::<Result<Vec<_>, CoreError>>()?;
    Ok(json!({ "bands": bands, "events": events }).to_string())
}

/// Mann-Kendall test with Theil-Sen slope over a JSON array of numbers.
pub fn trend(values: &str) -> Result<String, CoreError> {
    let y: Vec<f64> = serde_json::from_str(values)?;
    Ok(serde_json::to_string(&moods_stats::mann_kendall(&y)?)?)
}

/// The chart bundle one simulated participant receives in `week`.
pub fn weekly_charts(seed: u64, week: u32) -> Result<String, CoreError> {
    if !(1..=14).contains(&week) {
        return Err(CoreError::Validation(format!("week {week} outside 1..=14")));
    }
    let cfg = SimConfig { seed, n_participants: 1, n_weeks: week, dropout_hazard_per_day: 0.0, ..Default::default() };
    let participant = simulate(&cfg)?.participants.remove(0);
    let bundle = participant.bundle(week)?;
    Ok(json!({ "manifest": bundle.manifest(), "charts": bundle.charts }).to_string())
}

fn js(r: Result<String, CoreError>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = samplerPreview)]
pub fn sampler_preview_js(request: &str) -> Result<String, JsError> {
    js(sampler_preview(request))
}

#[wasm_bindgen(js_name = trend)]
pub fn trend_js(values: &str) -> Result<String, JsError> {
    js(trend(values))
}

#[wasm_bindgen(js_name = weeklyCharts)]
pub fn weekly_charts_js(seed: u64, week: u32) -> Result<String, JsError> {
    js(weekly_charts(seed, week))
}

//! End-to-end study replay: simulate a cohort, persist it in the platform's
//! native layout, reload it through the service, render every weekly bundle
//! and run the full analysis.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{study_report, AnalysisOptions, StudyReport};
use crate::error::{CoreError, Result};
use crate::platform::{ParticipantSnapshot, Platform};
use crate::sim::{simulate, write_dataset, ParticipantTruth, SimConfig};
use crate::viz::{sha256_hex, write_bundle};

/// Content hash of a set of snapshots, ignoring log sequence horizons.
pub fn snapshot_hash(snapshots: &[ParticipantSnapshot]) -> String {
    let mut sorted: Vec<ParticipantSnapshot> = snapshots
        .iter()
        .map(|s| ParticipantSnapshot { horizons: Default::default(), ..s.clone() })
        .collect();
    sorted.sort_by(|a, b| a.profile.participant_id.cmp(&b.profile.participant_id));
    sha256_hex(serde_json::to_string(&sorted).expect("snapshots serialize").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub simulate_s: f64,
    pub persist_s: f64,
    pub reload_s: f64,
    pub bundles_s: f64,
    pub analysis_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub data_dir: PathBuf,
    pub participants: usize,
    pub simulated_hash: String,
    pub reloaded_hash: String,
    pub bundles: usize,
    pub charts: usize,
    pub truths: Vec<ParticipantTruth>,
    pub report: StudyReport,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    pub analysis: AnalysisOptions,
    /// Write every bundle under `{dir}/{participant}/week-{w}`; bundles are
    /// still assembled when unset.
    pub bundle_dir: Option<PathBuf>,
}

/// Runs the replay into `data_dir`, which must be empty or absent.
pub fn replay_study(cfg: &SimConfig, data_dir: &Path, opts: &ReplayOptions) -> Result<ReplayOutcome> {
    if data_dir.exists() && std::fs::read_dir(data_dir)?.next().is_some() {
        return Err(CoreError::Precondition(format!("{} is not empty", data_dir.display())));
    }
    let t = Instant::now();
    let sim = simulate(cfg)?;
    let simulate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    write_dataset(&sim.participants, data_dir)?;
    let persist_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let platform = Platform::open(data_dir, cfg.platform.clone())?;
    let reloaded = platform.snapshots();
    let reload_s = t.elapsed().as_secs_f64();
    let simulated_hash = snapshot_hash(&sim.participants);
    let reloaded_hash = snapshot_hash(&reloaded);

    let t = Instant::now();
    let (mut bundles, mut charts) = (0, 0);
    for snap in &reloaded {
        let last_week = snap.events.iter().map(|e| snap.clock().week_of(e.start, e.tz_offset_min)).max().unwrap_or(0);
        for week in 1..=last_week.min(cfg.n_weeks) {
            let bundle = snap.bundle(week)?;
            if let Some(dir) = &opts.bundle_dir {
                write_bundle(&bundle, &dir.join(snap.profile.participant_id.as_str()).join(format!("week-{week}")))?;
            }
            bundles += 1;
            charts += bundle.charts.len();
        }
    }
    let bundles_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let report = study_report(&reloaded, &opts.analysis);
    let analysis_s = t.elapsed().as_secs_f64();

    Ok(ReplayOutcome {
        data_dir: data_dir.to_path_buf(),
        participants: reloaded.len(),
        simulated_hash,
        reloaded_hash,
        bundles,
        charts,
        truths: sim.truths,
        report,
        timings: StageTimings { simulate_s, persist_s, reload_s, bundles_s, analysis_s },
    })
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_chart, schedule, ChartKind, ChartSpec, VizInput, SCHEMA_VERSION};
use crate::domain::{ParticipantId, PhysiologicalEvent, StressAnnotation, StudyClock};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartBundle {
    pub schema_version: u32,
    pub participant_id: ParticipantId,
    pub week_index: u32,
    pub charts: Vec<ChartSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub chart_id: ChartKind,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub schema_version: u32,
    pub participant_id: ParticipantId,
    pub week_index: u32,
    pub charts: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Charts scheduled for `week`, each built over all data from week 1 on.
pub fn assemble_bundle(
    clock: &StudyClock,
    events: &[PhysiologicalEvent],
    annotations: &[StressAnnotation],
    week: u32,
) -> Result<ChartBundle> {
    if week == 0 {
        return Err(CoreError::Validation("week_index is 1-based".into()));
    }
    let input = VizInput::new(clock, events, annotations, week);
    Ok(ChartBundle {
        schema_version: SCHEMA_VERSION,
        participant_id: clock.participant_id.clone(),
        week_index: week,
        charts: schedule(week).into_iter().map(|k| build_chart(k, &input)).collect(),
    })
}

impl ChartBundle {
    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            schema_version: self.schema_version,
            participant_id: self.participant_id.clone(),
            week_index: self.week_index,
            charts: self
                .charts
                .iter()
                .map(|c| ManifestEntry {
                    chart_id: c.chart_id,
                    file: format!("{}.json", c.chart_id),
                    sha256: sha256_hex(c.to_json().as_bytes()),
                })
                .collect(),
        }
    }

    pub fn chart(&self, kind: ChartKind) -> Option<&ChartSpec> {
        self.charts.iter().find(|c| c.chart_id == kind)
    }
}

/// Writes one JSON file per chart plus `manifest.json` into `dir`.
pub fn write_bundle(bundle: &ChartBundle, dir: &Path) -> Result<BundleManifest> {
    fs::create_dir_all(dir)?;
    let manifest = bundle.manifest();
    for (chart, entry) in bundle.charts.iter().zip(&manifest.charts) {
        fs::write(dir.join(&entry.file), chart.to_json())?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

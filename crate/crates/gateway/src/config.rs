//! Gateway configuration: platform settings plus the static token table.

use std::path::Path;

use chrono::NaiveDate;
use moods_core::platform::PlatformConfig;
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantEntry {
    pub id: String,
    pub token: String,
    /// Enrols the participant at startup when both are given.
    #[serde(default)]
    pub enrollment_day: Option<NaiveDate>,
    #[serde(default)]
    pub tz_offset_min: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub platform: PlatformConfig,
    /// Tokens allowed to read cohort reports and run analysis jobs.
    pub analyst_tokens: Vec<String>,
    pub participants: Vec<ParticipantEntry>,
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for t in self.participants.iter().map(|p| &p.token).chain(&self.analyst_tokens) {
            if t.is_empty() {
                return Err(GatewayError::Config("empty token".into()));
            }
            if !seen.insert(t) {
                return Err(GatewayError::Config(format!("token {t:?} listed twice")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_duplicate_tokens() {
        let cfg = GatewayConfig::from_toml(
            r#"
            analyst_tokens = ["a"]
            [platform]
            seed = 7
            [[participants]]
            id = "P001"
            token = "t1"
            enrollment_day = "2024-03-04"
            tz_offset_min = -300
            "#,
        )
        .unwrap();
        assert_eq!(cfg.platform.seed, 7);
        assert_eq!(cfg.participants[0].enrollment_day, NaiveDate::from_ymd_opt(2024, 3, 4));
        assert!(GatewayConfig::from_toml("analyst_tokens = [\"x\", \"x\"]").is_err());
    }
}

//! JSON analysis configuration. Every field has a default, so `{}` is a
//! valid config.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use crate::conditions::{Condition, DEFAULT_ALPHA};
use crate::detector::DetectorConfig;
use crate::efficiency::SensorSpec;
use crate::error::{Error, Result};
use crate::regression::ReferenceConditions;
use crate::telemetry::IngestConfig;

/// Detector settings; the rest current defaults to a C-rate so it can be
/// resolved per series capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    /// Absolute rest current in amperes; overrides `rest_c_rate_max`.
    pub rest_current_max_a: Option<f64>,
    pub rest_c_rate_max: f64,
    pub rest_duration_min_s: f64,
    pub soc_match_tolerance: f64,
    pub trip_duration_min_s: f64,
    pub trip_duration_max_s: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        let d = DetectorConfig::for_capacity(1.0);
        DetectorSettings {
            rest_current_max_a: None,
            rest_c_rate_max: d.rest_current_max,
            rest_duration_min_s: d.rest_duration_min,
            soc_match_tolerance: d.soc_match_tolerance,
            trip_duration_min_s: d.trip_duration_min,
            trip_duration_max_s: d.trip_duration_max,
        }
    }
}

impl DetectorSettings {
    pub fn resolve(&self, capacity_ah: f64) -> DetectorConfig {
        DetectorConfig {
            rest_current_max: self
                .rest_current_max_a
                .unwrap_or(self.rest_c_rate_max * capacity_ah),
            rest_duration_min: self.rest_duration_min_s,
            soc_match_tolerance: self.soc_match_tolerance,
            trip_duration_min: self.trip_duration_min_s,
            trip_duration_max: self.trip_duration_max_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

/// Which two conditions enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionSelection {
    /// The two strongest significant conditions from the correlation ranking.
    Auto(Auto),
    Explicit([Condition; 2]),
}

impl Default for ConditionSelection {
    fn default() -> Self {
        ConditionSelection::Explicit([Condition::RmsCrate, Condition::TempRt])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSetting {
    Auto(Auto),
    Explicit([f64; 2]),
}

impl Default for ReferenceSetting {
    fn default() -> Self {
        ReferenceSetting::Auto(Auto::Auto)
    }
}

impl From<ReferenceSetting> for ReferenceConditions {
    fn from(value: ReferenceSetting) -> Self {
        match value {
            ReferenceSetting::Auto(_) => ReferenceConditions::Auto,
            ReferenceSetting::Explicit([c1, c2]) => ReferenceConditions::Explicit { c1, c2 },
        }
    }
}

/// How trips are bucketed in calendar time, keyed on the trip start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionRule {
    /// `YYYY-MM` in UTC.
    #[default]
    CalendarMonth,
    /// Epoch-aligned buckets of this many seconds, labelled by bucket start.
    FixedSeconds(u64),
}

impl PartitionRule {
    /// A label whose lexicographic order is chronological.
    pub fn label(&self, timestamp: f64) -> String {
        match *self {
            PartitionRule::CalendarMonth => {
                let dt = DateTime::from_timestamp(timestamp.floor() as i64, 0).unwrap_or_default();
                format!("{:04}-{:02}", dt.year(), dt.month())
            }
            PartitionRule::FixedSeconds(width) => {
                let width = width.max(1) as i64;
                let start = (timestamp.floor() as i64).div_euclid(width) * width;
                let dt = DateTime::from_timestamp(start, 0).unwrap_or_default();
                dt.format("%Y-%m-%dT%H:%M:%S").to_string()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub ingest: IngestConfig,
    pub detector: DetectorSettings,
    pub sensor: SensorSpec,
    pub conditions: ConditionSelection,
    pub significance_alpha: f64,
    pub partition: PartitionRule,
    pub reference: ReferenceSetting,
    /// Used when the command line gives no `--out`.
    pub output_dir: Option<PathBuf>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            ingest: IngestConfig::default(),
            detector: DetectorSettings::default(),
            sensor: SensorSpec::default(),
            conditions: ConditionSelection::default(),
            significance_alpha: DEFAULT_ALPHA,
            partition: PartitionRule::default(),
            reference: ReferenceSetting::default(),
            output_dir: None,
        }
    }
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: AnalysisConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest.validate()?;
        self.detector.resolve(self.ingest.nominal_capacity_ah).validate()?;
        self.sensor.validate()?;
        if !(self.significance_alpha > 0.0 && self.significance_alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "significance_alpha = {}",
                self.significance_alpha
            )));
        }
        if let ConditionSelection::Explicit([a, b]) = self.conditions {
            if a == b {
                return Err(Error::InvalidConfig(format!("condition `{a}` selected twice")));
            }
        }
        if self.partition == PartitionRule::FixedSeconds(0) {
            return Err(Error::InvalidConfig("partition width must be positive".into()));
        }
        Ok(())
    }
}

//! Round-trip energy efficiency of stationary batteries from field telemetry,
//! and its fade over calendar time.
//!
//! The pipeline runs ingestion ([`telemetry`]) → round-trip detection
//! ([`detector`]) → efficiency with uncertainty ([`efficiency`]) → operating
//! conditions and rank correlation ([`conditions`]) → weighted regression and
//! fade ([`regression`]). [`thevenin`] generates synthetic telemetry with
//! known efficiency for validation.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod config;
pub mod detector;
pub mod efficiency;
pub mod error;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod telemetry;
pub mod thevenin;

pub use conditions::{Condition, ConditionVector, CorrelationResult};
pub use config::AnalysisConfig;
pub use detector::{detect_round_trips, DetectorConfig, RoundTrip};
pub use efficiency::{EfficiencyEstimate, SensorSpec};
pub use error::{Error, Result};
pub use regression::{FadeReport, RegressionModel, WlsObservation};
pub use telemetry::{compute_soc, IngestConfig, TelemetryRecord, TelemetrySeries};
pub use thevenin::{DutyProfile, FleetScenario, TheveninParams};

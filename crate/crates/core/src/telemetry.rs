//! Telemetry ingestion: CSV parsing, validation, gap splitting and
//! coulomb-counted state of charge.
//!
//! Current is stored charge-positive. Inputs using the opposite convention
//! are negated at ingestion via [`IngestConfig::discharge_positive`].

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One telemetry sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    /// Amperes, positive while charging.
    pub current: f64,
    /// Terminal voltage in volts.
    pub voltage: f64,
    /// Pack-average temperature in degrees Celsius.
    pub temperature: f64,
}

/// How the state of charge at the first sample of a segment was fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SocSource {
    /// A configured constant.
    #[default]
    Constant,
    /// The first BMS-reported SoC sample of the segment, then coulomb counting.
    BmsInitial,
    /// The BMS-reported SoC trace as-is (no coulomb counting).
    BmsTrace,
}

/// A contiguous, uniformly sampled stretch of telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySeries {
    pub records: Vec<TelemetryRecord>,
    /// Sampling interval in seconds.
    pub sampling_interval: f64,
    /// Nominal capacity in ampere-hours.
    pub nominal_capacity: f64,
    /// State of charge at the first sample, as a fraction.
    pub initial_soc: f64,
    pub soc_origin: SocSource,
    /// BMS-reported SoC aligned with `records`, when the input carried one.
    pub bms_soc: Option<Vec<f64>>,
    pub segment_id: String,
}

impl TelemetrySeries {
    /// Builds a series with a constant initial SoC, checking the series invariants.
    pub fn new(
        segment_id: impl Into<String>,
        records: Vec<TelemetryRecord>,
        sampling_interval: f64,
        nominal_capacity: f64,
        initial_soc: f64,
    ) -> Result<Self> {
        let series = TelemetrySeries {
            records,
            sampling_interval,
            nominal_capacity,
            initial_soc,
            soc_origin: SocSource::Constant,
            bms_soc: None,
            segment_id: segment_id.into(),
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_capacity > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "nominal capacity must be positive, got {}",
                self.nominal_capacity
            )));
        }
        if !(self.sampling_interval > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sampling interval must be positive, got {}",
                self.sampling_interval
            )));
        }
        if self.records.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (k, pair) in self.records.windows(2).enumerate() {
            if !(pair[1].timestamp > pair[0].timestamp) {
                return Err(Error::DataOrder {
                    line: (k + 2) as u64,
                    timestamp: pair[1].timestamp,
                    previous: pair[0].timestamp,
                });
            }
        }
        if let Some(soc) = &self.bms_soc {
            if soc.len() != self.records.len() {
                return Err(Error::LengthMismatch {
                    left: soc.len(),
                    right: self.records.len(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Seconds elapsed since the first sample.
    #[inline]
    pub fn elapsed(&self, index: usize) -> f64 {
        self.records[index].timestamp - self.records[0].timestamp
    }

    /// Covered duration in seconds, counting one sampling interval per record.
    pub fn duration(&self) -> f64 {
        self.records.len() as f64 * self.sampling_interval
    }
}

/// Column-name mapping from the CSV header to the record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub timestamp: String,
    pub current: String,
    pub voltage: String,
    pub temperature: String,
    /// Optional BMS-reported SoC column (fraction).
    pub soc: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            timestamp: "timestamp".into(),
            current: "current".into(),
            voltage: "voltage".into(),
            temperature: "temperature".into(),
            soc: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// Epoch seconds when the cell parses as a number, ISO-8601 otherwise.
    #[default]
    Auto,
    Epoch,
    Iso8601,
}

/// Ingestion settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub columns: ColumnMapping,
    pub timestamp_format: TimestampFormat,
    pub sampling_interval_s: f64,
    /// Allowed relative deviation of the sample spacing from the interval.
    pub jitter_tolerance: f64,
    pub nominal_capacity_ah: f64,
    pub initial_soc: f64,
    pub soc_source: SocSource,
    /// Set when the input reports discharge current as positive.
    pub discharge_positive: bool,
    pub temperature_range_c: [f64; 2],
    pub soc_band: [f64; 2],
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            columns: ColumnMapping::default(),
            timestamp_format: TimestampFormat::Auto,
            sampling_interval_s: 1.0,
            jitter_tolerance: 0.1,
            nominal_capacity_ah: 100.0,
            initial_soc: 0.5,
            soc_source: SocSource::Constant,
            discharge_positive: false,
            temperature_range_c: [-40.0, 80.0],
            soc_band: [-0.05, 1.05],
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sampling_interval_s > 0.0) {
            return bad(format!("sampling_interval_s = {}", self.sampling_interval_s));
        }
        if !(0.0..1.0).contains(&self.jitter_tolerance) {
            return bad(format!("jitter_tolerance = {}", self.jitter_tolerance));
        }
        if !(self.nominal_capacity_ah > 0.0) {
            return bad(format!("nominal_capacity_ah = {}", self.nominal_capacity_ah));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return bad(format!("initial_soc = {}", self.initial_soc));
        }
        if self.soc_source != SocSource::Constant && self.columns.soc.is_none() {
            return bad("soc_source requires a `soc` column mapping".into());
        }
        if !(self.temperature_range_c[0] < self.temperature_range_c[1]) {
            return bad("temperature_range_c must be increasing".into());
        }
        if !(self.soc_band[0] < self.soc_band[1]) {
            return bad("soc_band must be increasing".into());
        }
        Ok(())
    }
}

/// Row accounting for one parsed source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub source: String,
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    pub segments: usize,
    pub segment_lengths: Vec<usize>,
    pub drop_reasons: BTreeMap<String, usize>,
}

impl ParseReport {
    fn drop(&mut self, reason: &str) {
        self.rows_dropped += 1;
        *self.drop_reasons.entry(reason.to_string()).or_default() += 1;
    }
}

#[derive(Debug, Clone)]
pub struct ParsedTelemetry {
    pub series: Vec<TelemetrySeries>,
    pub report: ParseReport,
}

fn parse_timestamp(cell: &str, format: TimestampFormat) -> Option<f64> {
    let epoch = || cell.parse::<f64>().ok().filter(|t| t.is_finite());
    let iso = || {
        if let Ok(dt) = DateTime::parse_from_rfc3339(cell) {
            return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
        }
        ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(cell, fmt).ok())
            .map(|naive| {
                let dt = naive.and_utc();
                dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9
            })
    };
    match format {
        TimestampFormat::Epoch => epoch(),
        TimestampFormat::Iso8601 => iso(),
        TimestampFormat::Auto => epoch().or_else(iso),
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .or_else(|| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name)))
        .ok_or_else(|| Error::Schema(name.to_string()))
}

/// Parses a CSV telemetry source into gap-free segments.
///
/// Rows that fail record invariants are dropped and counted in the report.
/// Spacing larger than the jitter tolerance opens a new segment; spacing
/// smaller than it drops the early sample. Segments are labelled
/// `segment_prefix` when there is only one, `segment_prefix-sN` otherwise.
pub fn parse_csv<R: Read>(
    source: R,
    config: &IngestConfig,
    segment_prefix: &str,
) -> Result<ParsedTelemetry> {
    config.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = &config.columns;
    let i_ts = column_index(&headers, &cols.timestamp)?;
    let i_cur = column_index(&headers, &cols.current)?;
    let i_volt = column_index(&headers, &cols.voltage)?;
    let i_temp = column_index(&headers, &cols.temperature)?;
    let i_soc = match &cols.soc {
        Some(name) => Some(column_index(&headers, name)?),
        None => None,
    };

    let dt = config.sampling_interval_s;
    let max_step = dt * (1.0 + config.jitter_tolerance);
    let min_step = dt * (1.0 - config.jitter_tolerance);
    let [t_lo, t_hi] = config.temperature_range_c;
    let sign = if config.discharge_positive { -1.0 } else { 1.0 };

    let mut report = ParseReport {
        source: segment_prefix.to_string(),
        ..ParseReport::default()
    };
    let mut segments: Vec<(Vec<TelemetryRecord>, Vec<f64>)> = Vec::new();
    let mut current: (Vec<TelemetryRecord>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut row = csv::StringRecord::new();

    while reader.read_record(&mut row)? {
        report.rows_read += 1;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            row.get(i)
                .and_then(|c| c.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        let parsed = (
            row.get(i_ts)
                .and_then(|c| parse_timestamp(c, config.timestamp_format)),
            num(i_cur),
            num(i_volt),
            num(i_temp),
            i_soc.map(num),
        );
        let (timestamp, current_a, voltage, temperature, soc) = match parsed {
            (Some(t), Some(i), Some(u), Some(temp), soc) => (t, i, u, temp, soc),
            _ => {
                report.drop("unparseable");
                continue;
            }
        };
        let soc = match soc {
            Some(None) => {
                report.drop("unparseable");
                continue;
            }
            Some(Some(s)) => s,
            None => f64::NAN,
        };
        if voltage <= 0.0 {
            report.drop("voltage_nonpositive");
            continue;
        }
        if !(t_lo..=t_hi).contains(&temperature) {
            report.drop("temperature_out_of_range");
            continue;
        }
        if let Some(prev) = current.0.last() {
            let step = timestamp - prev.timestamp;
            if step <= 0.0 {
                return Err(Error::DataOrder {
                    line,
                    timestamp,
                    previous: prev.timestamp,
                });
            }
            if step < min_step {
                report.drop("early_sample");
                continue;
            }
            if step > max_step {
                segments.push(std::mem::take(&mut current));
            }
        }
        current.0.push(TelemetryRecord {
            timestamp,
            current: sign * current_a,
            voltage,
            temperature,
        });
        current.1.push(soc);
        report.rows_kept += 1;
    }
    if !current.0.is_empty() {
        segments.push(current);
    }
    if segments.is_empty() {
        return Err(Error::EmptyInput);
    }

    let many = segments.len() > 1;
    let series = segments
        .into_iter()
        .enumerate()
        .map(|(k, (records, soc))| {
            let segment_id = if many {
                format!("{segment_prefix}-s{}", k + 1)
            } else {
                segment_prefix.to_string()
            };
            let bms_soc = i_soc.map(|_| soc);
            let initial_soc = match (config.soc_source, &bms_soc) {
                (SocSource::Constant, _) | (_, None) => config.initial_soc,
                (_, Some(trace)) => trace[0],
            };
            TelemetrySeries {
                records,
                sampling_interval: dt,
                nominal_capacity: config.nominal_capacity_ah,
                initial_soc,
                soc_origin: config.soc_source,
                bms_soc,
                segment_id,
            }
        })
        .collect::<Vec<_>>();
    report.segments = series.len();
    report.segment_lengths = series.iter().map(TelemetrySeries::len).collect();
    Ok(ParsedTelemetry { series, report })
}

/// Writes a series in the format [`parse_csv`] reads with default columns.
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(series: &TelemetrySeries, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let with_soc = series.bms_soc.is_some();
    if with_soc {
        writer.write_record(["timestamp", "current", "voltage", "temperature", "soc"])?;
    } else {
        writer.write_record(["timestamp", "current", "voltage", "temperature"])?;
    }
    for (k, r) in series.records.iter().enumerate() {
        let mut fields = vec![
            r.timestamp.to_string(),
            r.current.to_string(),
            r.voltage.to_string(),
            r.temperature.to_string(),
        ];
        if let Some(soc) = &series.bms_soc {
            fields.push(soc[k].to_string());
        }
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

/// State of charge aligned 1:1 with a [`TelemetrySeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct SocTrace {
    pub soc: Vec<f64>,
    pub origin: SocSource,
    /// First index leaving the plausibility band, if any.
    pub band_violation: Option<usize>,
}

impl SocTrace {
    pub fn len(&self) -> usize {
        self.soc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soc.is_empty()
    }

    /// True when the trace stayed inside its plausibility band.
    pub fn is_plausible(&self) -> bool {
        self.band_violation.is_none()
    }
}

/// Default SoC plausibility band.
pub const DEFAULT_SOC_BAND: (f64, f64) = (-0.05, 1.05);

/// Coulomb-counted SoC with the default plausibility band.
pub fn compute_soc(series: &TelemetrySeries) -> SocTrace {
    compute_soc_in_band(series, DEFAULT_SOC_BAND)
}

/// Coulomb-counted SoC: `soc[k] = soc0 + dt / (3600 C_n) * sum_{j<=k} I_j`.
///
/// A series whose origin is [`SocSource::BmsTrace`] returns the reported
/// trace unchanged. Leaving `band` is recorded, not fatal.
pub fn compute_soc_in_band(series: &TelemetrySeries, band: (f64, f64)) -> SocTrace {
    let soc = match (&series.soc_origin, &series.bms_soc) {
        (SocSource::BmsTrace, Some(trace)) => trace.clone(),
        _ => {
            let scale = series.sampling_interval / (3600.0 * series.nominal_capacity);
            let mut charge = 0.0;
            series
                .records
                .iter()
                .map(|r| {
                    charge += r.current;
                    series.initial_soc + scale * charge
                })
                .collect()
        }
    };
    let band_violation = soc
        .iter()
        .position(|s| !(band.0..=band.1).contains(s));
    SocTrace {
        soc,
        origin: series.soc_origin,
        band_violation,
    }
}

//! Round-trip detection.
//!
//! A trip opens at the end of a rest window (|I| below the rest current for
//! at least the minimum rest duration) and closes at the middle of the first
//! run of samples whose SoC is back within tolerance of the opening SoC,
//! subject to strict minimum and maximum trip durations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{SocTrace, TelemetrySeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Amperes; samples with |I| strictly below count as rest.
    pub rest_current_max: f64,
    /// Seconds of rest required before a trip may open.
    pub rest_duration_min: f64,
    /// Allowed |SoC(end) - SoC(start)|, as a fraction.
    pub soc_match_tolerance: f64,
    /// Exclusive lower bound on trip duration, seconds.
    pub trip_duration_min: f64,
    /// Exclusive upper bound on trip duration, seconds.
    pub trip_duration_max: f64,
}

impl DetectorConfig {
    /// Defaults for a pack of `capacity_ah`: rest below 0.05 C for 300 s,
    /// 0.1 percent-point SoC match, trips between 10 min and 24 h.
    pub fn for_capacity(capacity_ah: f64) -> Self {
        DetectorConfig {
            rest_current_max: 0.05 * capacity_ah,
            rest_duration_min: 300.0,
            soc_match_tolerance: 0.001,
            trip_duration_min: 600.0,
            trip_duration_max: 86_400.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rest_current_max", self.rest_current_max),
            ("rest_duration_min", self.rest_duration_min),
            ("soc_match_tolerance", self.soc_match_tolerance),
            ("trip_duration_min", self.trip_duration_min),
            ("trip_duration_max", self.trip_duration_max),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.trip_duration_min >= self.trip_duration_max {
            return Err(Error::InvalidConfig(
                "trip_duration_min must be below trip_duration_max".into(),
            ));
        }
        Ok(())
    }
}

/// A detected round trip within one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTrip {
    pub start_index: usize,
    pub end_index: usize,
    /// Indices in `[start, end]` with I < 0.
    pub discharge_indices: Vec<usize>,
    /// Indices in `[start, end]` with I > 0.
    pub charge_indices: Vec<usize>,
    pub parent_segment: String,
}

impl RoundTrip {
    /// Builds the trip and its charge/discharge index sets.
    pub fn from_bounds(series: &TelemetrySeries, start_index: usize, end_index: usize) -> Self {
        let mut discharge_indices = Vec::new();
        let mut charge_indices = Vec::new();
        for k in start_index..=end_index {
            let current = series.records[k].current;
            if current < 0.0 {
                discharge_indices.push(k);
            } else if current > 0.0 {
                charge_indices.push(k);
            }
        }
        RoundTrip {
            start_index,
            end_index,
            discharge_indices,
            charge_indices,
            parent_segment: series.segment_id.clone(),
        }
    }

    pub fn duration(&self, series: &TelemetrySeries) -> f64 {
        series.records[self.end_index].timestamp - series.records[self.start_index].timestamp
    }

    /// Number of samples in `[start, end]`.
    pub fn n_samples(&self) -> usize {
        self.end_index - self.start_index + 1
    }
}

#[inline]
fn at_rest(current: f64, config: &DetectorConfig) -> bool {
    current.abs() < config.rest_current_max
}

/// Every index preceded by at least `rest_duration_min` seconds of rest.
///
/// Index `k` qualifies when all samples with timestamps in
/// `[t_k - t_rest, t_k)` are at rest and the series covers that window.
pub fn find_rest_starts(series: &TelemetrySeries, config: &DetectorConfig) -> Vec<usize> {
    let records = &series.records;
    let mut starts = Vec::new();
    let mut last_busy: Option<usize> = None;
    for k in 0..records.len() {
        let t_k = records[k].timestamp;
        let covered = t_k - records[0].timestamp >= config.rest_duration_min;
        let quiet = last_busy.is_none_or(|j| t_k - records[j].timestamp > config.rest_duration_min);
        if covered && quiet {
            starts.push(k);
        }
        if !at_rest(records[k].current, config) {
            last_busy = Some(k);
        }
    }
    starts
}

/// Reduces rest-start candidates to one opener per rest window.
///
/// Candidates form runs of consecutive indices. The opener of a run is its
/// last candidate that is itself at rest, or the last candidate when none is.
pub fn trip_openers(series: &TelemetrySeries, candidates: &[usize], config: &DetectorConfig) -> Vec<usize> {
    let mut openers = Vec::new();
    let mut run_start = 0;
    for i in 0..candidates.len() {
        let run_ends = i + 1 == candidates.len() || candidates[i + 1] != candidates[i] + 1;
        if !run_ends {
            continue;
        }
        let run = &candidates[run_start..=i];
        let opener = run
            .iter()
            .rev()
            .find(|&&k| at_rest(series.records[k].current, config))
            .unwrap_or(&run[run.len() - 1]);
        openers.push(*opener);
        run_start = i + 1;
    }
    openers
}

/// Detects all round trips in a segment.
///
/// Trips from different openers may overlap or nest. Output is ordered by
/// start index.
pub fn detect_round_trips(
    series: &TelemetrySeries,
    soc: &SocTrace,
    config: &DetectorConfig,
) -> Result<Vec<RoundTrip>> {
    config.validate()?;
    if soc.len() != series.len() {
        return Err(Error::LengthMismatch {
            left: soc.len(),
            right: series.len(),
        });
    }
    let records = &series.records;
    let candidates = find_rest_starts(series, config);
    let mut trips = Vec::new();
    for start in trip_openers(series, &candidates, config) {
        let t_start = records[start].timestamp;
        let soc_start = soc.soc[start];
        let mut run: Option<(usize, usize)> = None;
        for j in start + 1..records.len() {
            let elapsed = records[j].timestamp - t_start;
            if elapsed >= config.trip_duration_max {
                break;
            }
            let matches = elapsed > config.trip_duration_min
                && (soc.soc[j] - soc_start).abs() <= config.soc_match_tolerance;
            match (&mut run, matches) {
                (None, true) => run = Some((j, j)),
                (Some((_, last)), true) => *last = j,
                (Some(_), false) => break,
                (None, false) => {}
            }
        }
        if let Some((first, last)) = run {
            let end = first + (last - first) / 2;
            trips.push(RoundTrip::from_bounds(series, start, end));
        }
    }
    Ok(trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{compute_soc, TelemetryRecord};

    fn series_from_currents(currents: &[f64], capacity: f64, soc0: f64) -> TelemetrySeries {
        let records = currents
            .iter()
            .enumerate()
            .map(|(k, &current)| TelemetryRecord {
                timestamp: 1.0e9 + k as f64,
                current,
                voltage: 3.7,
                temperature: 25.0,
            })
            .collect();
        TelemetrySeries::new("seg", records, 1.0, capacity, soc0).unwrap()
    }

    fn config(capacity: f64) -> DetectorConfig {
        DetectorConfig {
            trip_duration_min: 60.0,
            ..DetectorConfig::for_capacity(capacity)
        }
    }

    #[test]
    fn permanent_rest_starts_everywhere_after_window() {
        let s = series_from_currents(&vec![0.0; 3600], 100.0, 0.5);
        let starts = find_rest_starts(&s, &config(100.0));
        assert_eq!(starts, (300..3600).collect::<Vec<_>>());
    }

    #[test]
    fn never_at_rest_has_no_starts() {
        let s = series_from_currents(&vec![100.0; 3600], 100.0, 0.0);
        assert!(find_rest_starts(&s, &config(100.0)).is_empty());
    }

    #[test]
    fn rest_then_load_window() {
        let mut currents = vec![0.0; 600];
        currents.extend(vec![100.0; 600]);
        let s = series_from_currents(&currents, 100.0, 0.2);
        let starts = find_rest_starts(&s, &config(100.0));
        assert_eq!(starts, (300..=600).collect::<Vec<_>>());
        // the opener is the last rest sample, not the first loaded one
        assert_eq!(trip_openers(&s, &starts, &config(100.0)), vec![599]);
    }

    #[test]
    fn negative_current_is_not_rest() {
        let mut currents = vec![-100.0; 600];
        currents.extend(vec![0.0; 400]);
        let s = series_from_currents(&currents, 100.0, 0.9);
        let starts = find_rest_starts(&s, &config(100.0));
        assert_eq!(starts.first(), Some(&900));
    }

    #[test]
    fn symmetric_cycle_yields_one_trip() {
        let c = 100.0;
        let mut currents = vec![0.0; 600];
        currents.extend(vec![-c; 360]);
        currents.extend(vec![c; 360]);
        currents.extend(vec![0.0; 600]);
        let s = series_from_currents(&currents, c, 0.8);
        let soc = compute_soc(&s);
        let trips = detect_round_trips(&s, &soc, &config(c)).unwrap();
        assert_eq!(trips.len(), 1);
        let trip = &trips[0];
        assert_eq!(trip.start_index, 599);
        // matching run: last three charge samples, then the whole final rest
        assert_eq!(trip.end_index, 1316 + (1919 - 1316) / 2);
        assert_eq!(trip.discharge_indices.len(), 360);
        assert_eq!(trip.charge_indices.len(), 360);
    }

    #[test]
    fn monotone_discharge_never_returns() {
        let mut currents = vec![0.0; 600];
        currents.extend(vec![-50.0; 3000]);
        let s = series_from_currents(&currents, 100.0, 0.9);
        let soc = compute_soc(&s);
        assert!(detect_round_trips(&s, &soc, &config(100.0)).unwrap().is_empty());
    }

    #[test]
    fn trips_respect_max_duration() {
        let c = 100.0;
        let mut currents = vec![0.0; 600];
        currents.extend(vec![-c; 360]);
        currents.extend(vec![c; 360]);
        currents.extend(vec![0.0; 600]);
        let s = series_from_currents(&currents, c, 0.8);
        let soc = compute_soc(&s);
        let cfg = DetectorConfig {
            trip_duration_max: 700.0,
            ..config(c)
        };
        assert!(detect_round_trips(&s, &soc, &cfg).unwrap().is_empty());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = DetectorConfig {
            trip_duration_min: 10.0,
            trip_duration_max: 5.0,
            ..DetectorConfig::for_capacity(1.0)
        };
        assert!(cfg.validate().is_err());
        let cfg = DetectorConfig {
            rest_current_max: 0.0,
            ..DetectorConfig::for_capacity(1.0)
        };
        assert!(cfg.validate().is_err());
    }
}

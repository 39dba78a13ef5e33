//! Per-trip energy efficiency and its propagated standard error.

use serde::{Deserialize, Serialize};

use crate::detector::RoundTrip;
use crate::error::{Error, Result};
use crate::telemetry::{TelemetryRecord, TelemetrySeries};

/// Efficiencies outside this band carry an implausibility warning.
pub const PLAUSIBLE_ETA: (f64, f64) = (0.5, 1.2);

/// Voltage and current sensor error model.
///
/// Gain errors are fractions of the reading; resolutions are quantization
/// steps and contribute their uniform-distribution variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub voltage_offset: f64,
    pub voltage_gain_error: f64,
    pub voltage_resolution: f64,
    pub current_offset: f64,
    pub current_gain_error: f64,
    pub current_resolution: f64,
    /// Samples per window when estimating noise from rest periods.
    pub noise_estimation_window: usize,
}

impl Default for SensorSpec {
    /// Placeholder values for a ~650 V / ±600 A pack BMS. Review per vehicle.
    fn default() -> Self {
        SensorSpec {
            voltage_offset: 0.1,
            voltage_gain_error: 0.005,
            voltage_resolution: 0.1,
            current_offset: 0.5,
            current_gain_error: 0.005,
            current_resolution: 0.1,
            noise_estimation_window: 60,
        }
    }
}

impl SensorSpec {
    /// A spec with every error term zero.
    pub fn ideal() -> Self {
        SensorSpec {
            voltage_offset: 0.0,
            voltage_gain_error: 0.0,
            voltage_resolution: 0.0,
            current_offset: 0.0,
            current_gain_error: 0.0,
            current_resolution: 0.0,
            noise_estimation_window: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.voltage_offset,
            self.voltage_gain_error,
            self.voltage_resolution,
            self.current_offset,
            self.current_gain_error,
            self.current_resolution,
        ];
        if fields.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "sensor spec fields must be non-negative".into(),
            ))
        }
    }
}

/// Standard errors of one voltage and one current reading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleError {
    pub voltage: f64,
    pub current: f64,
}

/// Random noise levels observed on the two channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub voltage_std: f64,
    pub current_std: f64,
    /// Rest windows the estimate was pooled from; zero means no estimate.
    pub windows: usize,
}

/// Quadrature sum of offset, gain, resolution and noise terms per channel.
pub fn sample_stderr(record: &TelemetryRecord, spec: &SensorSpec, noise: &NoiseEstimate) -> SampleError {
    let channel = |offset: f64, gain: f64, resolution: f64, reading: f64, noise: f64| {
        (offset * offset
            + (gain * reading.abs()).powi(2)
            + resolution * resolution / 12.0
            + noise * noise)
            .sqrt()
    };
    SampleError {
        voltage: channel(
            spec.voltage_offset,
            spec.voltage_gain_error,
            spec.voltage_resolution,
            record.voltage,
            noise.voltage_std,
        ),
        current: channel(
            spec.current_offset,
            spec.current_gain_error,
            spec.current_resolution,
            record.current,
            noise.current_std,
        ),
    }
}

fn diff_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let diffs: Vec<f64> = values
        .clone()
        .zip(values.skip(1))
        .map(|(a, b)| b - a)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Estimates channel noise from rest periods.
///
/// Rest runs (|I| < `rest_current_max`) are cut into windows of
/// `spec.noise_estimation_window` samples. The variance of first differences
/// is pooled over windows; white noise of std σ gives a difference variance
/// of 2σ².
pub fn estimate_noise(series: &TelemetrySeries, spec: &SensorSpec, rest_current_max: f64) -> NoiseEstimate {
    let window = spec.noise_estimation_window;
    if window < 3 {
        return NoiseEstimate::default();
    }
    let records = &series.records;
    let (mut var_u, mut var_i, mut windows) = (0.0, 0.0, 0usize);
    let mut k = 0;
    while k < records.len() {
        if records[k].current.abs() >= rest_current_max {
            k += 1;
            continue;
        }
        let run_start = k;
        while k < records.len() && records[k].current.abs() < rest_current_max {
            k += 1;
        }
        for chunk in records[run_start..k].chunks_exact(window) {
            var_u += diff_variance(chunk.iter().map(|r| r.voltage));
            var_i += diff_variance(chunk.iter().map(|r| r.current));
            windows += 1;
        }
    }
    if windows == 0 {
        return NoiseEstimate::default();
    }
    let n = windows as f64;
    NoiseEstimate {
        voltage_std: (var_u / n / 2.0).sqrt(),
        current_std: (var_i / n / 2.0).sqrt(),
        windows,
    }
}

/// Discharged and charged energy of a trip, in joules, and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripEnergy {
    pub e_dis: f64,
    pub e_chg: f64,
    pub eta: f64,
}

fn check_trip(series: &TelemetrySeries, trip: &RoundTrip) -> Result<()> {
    if trip.end_index >= series.len() || trip.start_index >= trip.end_index {
        return Err(Error::DegenerateTrip(format!(
            "indices {}..={} invalid for a series of {} samples",
            trip.start_index,
            trip.end_index,
            series.len()
        )));
    }
    Ok(())
}

/// Rectangle-rule energies over the trip's discharge and charge samples.
pub fn compute_efficiency(series: &TelemetrySeries, trip: &RoundTrip) -> Result<TripEnergy> {
    check_trip(series, trip)?;
    let dt = series.sampling_interval;
    let power = |k: &usize| {
        let r = &series.records[*k];
        r.current * r.voltage
    };
    let e_dis = -trip.discharge_indices.iter().map(power).sum::<f64>() * dt;
    let e_chg = trip.charge_indices.iter().map(power).sum::<f64>() * dt;
    if !(e_chg > 0.0) {
        return Err(Error::DegenerateTrip(format!(
            "no charged energy in trip starting at index {}",
            trip.start_index
        )));
    }
    Ok(TripEnergy {
        e_dis,
        e_chg,
        eta: e_dis / e_chg,
    })
}

/// Standard errors of the two energies and of the efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PropagatedError {
    pub e_dis_stderr: f64,
    pub e_chg_stderr: f64,
    pub eta_stderr: f64,
}

/// Propagates per-sample sensor errors to the energies and the efficiency.
///
/// `per_sample[k]` belongs to sample `trip.start_index + k`. Each energy gets
/// `sqrt(sum (U² S_I² + I² S_U²) dt)` with dt to the first power, and the
/// efficiency combines both through the partial derivatives of the ratio.
pub fn propagate_uncertainty(
    series: &TelemetrySeries,
    trip: &RoundTrip,
    per_sample: &[SampleError],
    energy: &TripEnergy,
) -> Result<PropagatedError> {
    check_trip(series, trip)?;
    if per_sample.len() != trip.n_samples() {
        return Err(Error::LengthMismatch {
            left: per_sample.len(),
            right: trip.n_samples(),
        });
    }
    let dt = series.sampling_interval;
    let variance = |indices: &[usize]| {
        indices
            .iter()
            .map(|&k| {
                let r = &series.records[k];
                let s = &per_sample[k - trip.start_index];
                (r.voltage * s.current).powi(2) + (r.current * s.voltage).powi(2)
            })
            .sum::<f64>()
            * dt
    };
    let e_dis_stderr = variance(&trip.discharge_indices).sqrt();
    let e_chg_stderr = variance(&trip.charge_indices).sqrt();
    let d_dis = e_dis_stderr / energy.e_chg;
    let d_chg = energy.e_dis / (energy.e_chg * energy.e_chg) * e_chg_stderr;
    Ok(PropagatedError {
        e_dis_stderr,
        e_chg_stderr,
        eta_stderr: d_dis.hypot(d_chg),
    })
}

/// Efficiency of one round trip with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub segment_id: String,
    pub start_index: usize,
    pub end_index: usize,
    pub start_timestamp: f64,
    pub end_timestamp: f64,
    pub eta: f64,
    pub eta_stderr: f64,
    /// Joules.
    pub e_dis: f64,
    pub e_chg: f64,
    pub e_dis_stderr: f64,
    pub e_chg_stderr: f64,
    /// Set when eta falls outside [`PLAUSIBLE_ETA`].
    pub implausible: bool,
}

/// Computes energy, efficiency and propagated error for one trip.
pub fn estimate_efficiency(
    series: &TelemetrySeries,
    trip: &RoundTrip,
    spec: &SensorSpec,
    noise: &NoiseEstimate,
) -> Result<EfficiencyEstimate> {
    let energy = compute_efficiency(series, trip)?;
    let per_sample: Vec<SampleError> = series.records[trip.start_index..=trip.end_index]
        .iter()
        .map(|r| sample_stderr(r, spec, noise))
        .collect();
    let error = propagate_uncertainty(series, trip, &per_sample, &energy)?;
    Ok(EfficiencyEstimate {
        segment_id: trip.parent_segment.clone(),
        start_index: trip.start_index,
        end_index: trip.end_index,
        start_timestamp: series.records[trip.start_index].timestamp,
        end_timestamp: series.records[trip.end_index].timestamp,
        eta: energy.eta,
        eta_stderr: error.eta_stderr,
        e_dis: energy.e_dis,
        e_chg: energy.e_chg,
        e_dis_stderr: error.e_dis_stderr,
        e_chg_stderr: error.e_chg_stderr,
        implausible: !(PLAUSIBLE_ETA.0..=PLAUSIBLE_ETA.1).contains(&energy.eta),
    })
}

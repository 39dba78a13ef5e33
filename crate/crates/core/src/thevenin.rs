//! Ohmic Thévenin battery simulator and the closed-form efficiency relations
//! it satisfies.
//!
//! Terminal voltage is `U_emf(SoC) + R0 * I` with charge-positive current
//! and SoC coulomb-counted the same way [`compute_soc`] does, so noise-free
//! output is an exact oracle for the analysis pipeline.
//!
//! [`compute_soc`]: crate::telemetry::compute_soc

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Months, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{SocSource, TelemetryRecord, TelemetrySeries};

/// Open-circuit voltage as a function of SoC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmfCurve {
    Flat { volts: f64 },
    /// `(soc, volts)` breakpoints, sorted by SoC; clamped outside the range.
    PiecewiseLinear { points: Vec<[f64; 2]> },
}

impl EmfCurve {
    pub fn eval(&self, soc: f64) -> f64 {
        match self {
            EmfCurve::Flat { volts } => *volts,
            EmfCurve::PiecewiseLinear { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if soc <= first[0] {
                    return first[1];
                }
                if soc >= last[0] {
                    return last[1];
                }
                let k = points.partition_point(|p| p[0] <= soc);
                let [s0, u0] = points[k - 1];
                let [s1, u1] = points[k];
                u0 + (u1 - u0) * (soc - s0) / (s1 - s0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EmfCurve::Flat { volts } if *volts > 0.0 => Ok(()),
            EmfCurve::Flat { volts } => Err(Error::InvalidConfig(format!("flat EMF {volts} V"))),
            EmfCurve::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidConfig("EMF curve needs two points".into()));
                }
                let increasing_soc = points.windows(2).all(|w| w[1][0] > w[0][0]);
                let monotone = points.windows(2).all(|w| w[1][1] >= w[0][1]);
                if !increasing_soc || !monotone || points[0][1] <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "EMF curve must be positive and non-decreasing in SoC".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// `R0 = r0_ohm * aging * (1 + temp_coeff (T - T_ref)) * (1 + soc_coeff (SoC - 0.5))`,
/// clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResistanceModel {
    pub r0_ohm: f64,
    pub temp_coeff_per_c: f64,
    pub reference_temp_c: f64,
    pub soc_coeff: f64,
}

impl Default for ResistanceModel {
    fn default() -> Self {
        ResistanceModel {
            r0_ohm: 0.05,
            temp_coeff_per_c: 0.0,
            reference_temp_c: 25.0,
            soc_coeff: 0.0,
        }
    }
}

impl ResistanceModel {
    pub fn constant(r0_ohm: f64) -> Self {
        ResistanceModel {
            r0_ohm,
            ..ResistanceModel::default()
        }
    }

    pub fn eval(&self, soc: f64, temperature: f64, aging: f64) -> f64 {
        let t = 1.0 + self.temp_coeff_per_c * (temperature - self.reference_temp_c);
        let s = 1.0 + self.soc_coeff * (soc - 0.5);
        (self.r0_ohm * aging * t * s).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheveninParams {
    pub emf: EmfCurve,
    pub resistance: ResistanceModel,
    pub capacity_ah: f64,
    pub initial_soc: f64,
    /// Multiplier on R0 for calendar aging; 1 at beginning of life.
    #[serde(default = "one")]
    pub aging_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl TheveninParams {
    pub fn flat(volts: f64, r0_ohm: f64, capacity_ah: f64, initial_soc: f64) -> Self {
        TheveninParams {
            emf: EmfCurve::Flat { volts },
            resistance: ResistanceModel::constant(r0_ohm),
            capacity_ah,
            initial_soc,
            aging_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.emf.validate()?;
        if !(self.capacity_ah > 0.0) {
            return Err(Error::InvalidConfig("capacity_ah must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return Err(Error::InvalidConfig("initial_soc outside [0, 1]".into()));
        }
        if !(self.resistance.r0_ohm >= 0.0) || !(self.aging_factor >= 0.0) {
            return Err(Error::InvalidConfig("resistance must be non-negative".into()));
        }
        Ok(())
    }
}

/// A constant-current stretch of a duty profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration_s: u32,
    /// Amperes, charge-positive.
    pub current_a: f64,
}

impl Phase {
    pub fn new(duration_s: u32, current_a: f64) -> Self {
        Phase { duration_s, current_a }
    }

    pub fn rest(duration_s: u32) -> Self {
        Phase::new(duration_s, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureTrace {
    Constant { celsius: f64 },
    /// Yearly cosine peaking on `peak_day_of_year` plus a daily cosine
    /// peaking at 15:00 UTC.
    Seasonal {
        mean_c: f64,
        seasonal_amplitude_c: f64,
        diurnal_amplitude_c: f64,
        peak_day_of_year: f64,
    },
}

impl TemperatureTrace {
    pub fn eval(&self, timestamp: f64) -> f64 {
        match *self {
            TemperatureTrace::Constant { celsius } => celsius,
            TemperatureTrace::Seasonal {
                mean_c,
                seasonal_amplitude_c,
                diurnal_amplitude_c,
                peak_day_of_year,
            } => {
                let days = timestamp / 86_400.0;
                let year_phase = 2.0 * PI * (days.rem_euclid(365.2425) - peak_day_of_year) / 365.2425;
                let day_phase = 2.0 * PI * (days.rem_euclid(1.0) - 15.0 / 24.0);
                mean_c + seasonal_amplitude_c * year_phase.cos() + diurnal_amplitude_c * day_phase.cos()
            }
        }
    }
}

/// Additive Gaussian measurement noise on the recorded channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub current_std: f64,
    pub voltage_std: f64,
    pub temperature_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyProfile {
    pub phases: Vec<Phase>,
    #[serde(default = "one_u32")]
    pub repeat_count: u32,
    pub temperature: TemperatureTrace,
    #[serde(default)]
    pub noise: SensorNoise,
    /// Epoch seconds of the first sample.
    #[serde(default)]
    pub start_time: f64,
}

fn one_u32() -> u32 {
    1
}

impl DutyProfile {
    pub fn new(phases: Vec<Phase>, temperature_c: f64) -> Self {
        DutyProfile {
            phases,
            repeat_count: 1,
            temperature: TemperatureTrace::Constant { celsius: temperature_c },
            noise: SensorNoise::default(),
            start_time: 0.0,
        }
    }

    /// Number of samples the profile produces at 1 Hz.
    pub fn n_samples(&self) -> usize {
        self.phases.iter().map(|p| p.duration_s as usize).sum::<usize>() * self.repeat_count as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() || self.repeat_count == 0 {
            return Err(Error::InvalidConfig("duty profile is empty".into()));
        }
        if let Some(k) = self.phases.iter().position(|p| p.duration_s == 0 || !p.current_a.is_finite()) {
            return Err(Error::InvalidConfig(format!("phase {k} has zero duration or bad current")));
        }
        let n = self.noise;
        if !(n.current_std >= 0.0 && n.voltage_std >= 0.0 && n.temperature_std >= 0.0) {
            return Err(Error::InvalidConfig("noise std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Simulates 1 Hz telemetry. Deterministic for a given seed.
///
/// Errors with the offending phase when the true SoC leaves [0, 1].
pub fn simulate(params: &TheveninParams, profile: &DutyProfile, seed: u64) -> Result<TelemetrySeries> {
    params.validate()?;
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |std: f64| Normal::new(0.0, std).expect("validated std");
    let (noise_i, noise_u, noise_t) = (
        normal(profile.noise.current_std),
        normal(profile.noise.voltage_std),
        normal(profile.noise.temperature_std),
    );
    let dt = 1.0;
    let scale = dt / (3600.0 * params.capacity_ah);
    let mut charge = 0.0;
    let mut records = Vec::with_capacity(profile.n_samples());
    let mut k = 0usize;
    for _ in 0..profile.repeat_count {
        for (phase_index, phase) in profile.phases.iter().enumerate() {
            for _ in 0..phase.duration_s {
                let timestamp = profile.start_time + k as f64 * dt;
                charge += phase.current_a;
                let soc = params.initial_soc + scale * charge;
                if !(-1e-12..=1.0 + 1e-12).contains(&soc) {
                    return Err(Error::InfeasibleProfile { phase: phase_index, soc });
                }
                let temperature = profile.temperature.eval(timestamp);
                let r0 = params.resistance.eval(soc, temperature, params.aging_factor);
                let voltage = params.emf.eval(soc) + r0 * phase.current_a;
                records.push(TelemetryRecord {
                    timestamp,
                    current: phase.current_a + noise_i.sample(&mut rng),
                    voltage: voltage + noise_u.sample(&mut rng),
                    temperature: temperature + noise_t.sample(&mut rng),
                });
                k += 1;
            }
        }
    }
    Ok(TelemetrySeries {
        records,
        sampling_interval: dt,
        nominal_capacity: params.capacity_ah,
        initial_soc: params.initial_soc,
        soc_origin: SocSource::Constant,
        bms_soc: None,
        segment_id: "sim".to_string(),
    })
}

/// Closed-form constant-current round-trip efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticEta {
    /// `(U - R0 I) / (U + R0 I)`.
    pub exact: f64,
    /// `1 - 2 R0 I / U`.
    pub linearized: f64,
}

/// Efficiency of a symmetric constant-current trip at constant EMF.
pub fn analytic_eta(u_emf: f64, r0: f64, i_c: f64) -> Result<AnalyticEta> {
    let drop = r0 * i_c;
    if !(drop >= 0.0 && u_emf > drop) || !u_emf.is_finite() {
        return Err(Error::Domain(format!(
            "need U_emf > R0 I >= 0, got U_emf = {u_emf}, R0 I = {drop}"
        )));
    }
    Ok(AnalyticEta {
        exact: (u_emf - drop) / (u_emf + drop),
        linearized: 1.0 - 2.0 * drop / u_emf,
    })
}

/// Expected efficiency fade in percent points for a resistance increase
/// from `r0_bol` to `r0_now` at current `i_c` and EMF `u_emf`.
pub fn expected_fade(r0_bol: f64, r0_now: f64, i_c: f64, u_emf: f64) -> f64 {
    100.0 * 2.0 * (r0_now - r0_bol) * i_c / u_emf
}

/// Resistance multiplier per simulated partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgingSchedule {
    /// R0 grows linearly to `1 + total_increase` at the last partition.
    Linear { total_increase: f64 },
    /// Explicit factor per partition.
    Factors { factors: Vec<f64> },
}

impl Default for AgingSchedule {
    fn default() -> Self {
        AgingSchedule::Linear { total_increase: 0.0 }
    }
}

impl AgingSchedule {
    pub fn factor(&self, partition: usize, partitions: usize) -> f64 {
        match self {
            AgingSchedule::Linear { total_increase } => {
                if partitions <= 1 {
                    1.0
                } else {
                    1.0 + total_increase * partition as f64 / (partitions - 1) as f64
                }
            }
            AgingSchedule::Factors { factors } => factors.get(partition).copied().unwrap_or(1.0),
        }
    }
}

/// A multi-month aged fleet scenario: one segment per calendar month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetScenario {
    pub params: TheveninParams,
    /// Run once per partition, starting at the partition's start time.
    pub profile: DutyProfile,
    /// RFC 3339 start of the first partition, e.g. `2019-08-01T06:00:00Z`.
    pub start: String,
    pub partitions: usize,
    #[serde(default)]
    pub aging: AgingSchedule,
    #[serde(default = "default_prefix")]
    pub segment_prefix: String,
}

fn default_prefix() -> String {
    "sim".to_string()
}

impl FleetScenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.profile.validate()?;
        self.start_time()?;
        if self.partitions == 0 {
            return Err(Error::InvalidConfig("partitions must be at least 1".into()));
        }
        if let AgingSchedule::Factors { factors } = &self.aging {
            if factors.len() < self.partitions || factors.iter().any(|f| !(*f >= 0.0)) {
                return Err(Error::InvalidConfig(
                    "aging factors must be non-negative, one per partition".into(),
                ));
            }
        }
        Ok(())
    }

    fn start_time(&self) -> Result<DateTime<Utc>> {
        DateTime::parse_from_rfc3339(&self.start)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::InvalidConfig(format!("scenario start `{}`: {e}", self.start)))
    }

    /// Start time and `YYYY-MM` label of partition `index`.
    pub fn partition_start(&self, index: usize) -> Result<(f64, String)> {
        let start = self.start_time()?;
        let shifted = start
            .checked_add_months(Months::new(index as u32))
            .ok_or_else(|| Error::InvalidConfig("scenario runs past the calendar".into()))?;
        let first = Utc
            .with_ymd_and_hms(shifted.year(), shifted.month(), shifted.day(), 0, 0, 0)
            .single()
            .expect("valid date");
        let offset = (shifted - first).num_seconds() as f64;
        let label = format!("{:04}-{:02}", shifted.year(), shifted.month());
        Ok((first.timestamp() as f64 + offset, label))
    }

    /// Simulates partition `index` with its aging factor and a derived seed.
    pub fn simulate_partition(&self, index: usize, seed: u64) -> Result<TelemetrySeries> {
        let (start_time, label) = self.partition_start(index)?;
        let params = TheveninParams {
            aging_factor: self.params.aging_factor * self.aging.factor(index, self.partitions),
            ..self.params.clone()
        };
        let profile = DutyProfile {
            start_time,
            ..self.profile.clone()
        };
        let partition_seed = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut series = simulate(&params, &profile, partition_seed)?;
        series.segment_id = format!("{}-{label}", self.segment_prefix);
        Ok(series)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_current_ohm_drop() {
        let params = TheveninParams::flat(3.7, 0.01, 50.0, 0.8);
        let series = simulate(&params, &DutyProfile::new(vec![Phase::new(100, -10.0)], 25.0), 1).unwrap();
        assert!(series.records.iter().all(|r| (r.voltage - 3.6).abs() < 1e-12));
    }

    #[test]
    fn lossless_battery_sits_on_emf() {
        let params = TheveninParams {
            emf: EmfCurve::PiecewiseLinear {
                points: vec![[0.0, 3.0], [0.5, 3.6], [1.0, 4.2]],
            },
            ..TheveninParams::flat(3.7, 0.0, 10.0, 0.5)
        };
        let profile = DutyProfile::new(vec![Phase::new(600, -5.0), Phase::new(600, 5.0)], 20.0);
        let series = simulate(&params, &profile, 3).unwrap();
        let soc = crate::telemetry::compute_soc(&series);
        for (r, s) in series.records.iter().zip(&soc.soc) {
            assert!((r.voltage - params.emf.eval(*s)).abs() < 1e-12);
        }
    }

    #[test]
    fn emf_interpolates_and_clamps() {
        let emf = EmfCurve::PiecewiseLinear {
            points: vec![[0.1, 3.0], [0.5, 3.6], [1.0, 4.1]],
        };
        assert_eq!(emf.eval(0.0), 3.0);
        assert!((emf.eval(0.3) - 3.3).abs() < 1e-12);
        assert_eq!(emf.eval(1.2), 4.1);
        let bad = EmfCurve::PiecewiseLinear {
            points: vec![[0.0, 3.6], [1.0, 3.5]],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn infeasible_profile_names_phase() {
        let params = TheveninParams::flat(3.7, 0.01, 1.0, 0.5);
        let profile = DutyProfile::new(vec![Phase::rest(10), Phase::new(3600, -1.0)], 25.0);
        match simulate(&params, &profile, 0) {
            Err(Error::InfeasibleProfile { phase, .. }) => assert_eq!(phase, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seed_fixes_noise() {
        let params = TheveninParams::flat(650.0, 0.05, 200.0, 0.6);
        let mut profile = DutyProfile::new(vec![Phase::new(300, -100.0)], 20.0);
        profile.noise = SensorNoise {
            current_std: 0.3,
            voltage_std: 0.2,
            temperature_std: 0.1,
        };
        let a = simulate(&params, &profile, 7).unwrap();
        let b = simulate(&params, &profile, 7).unwrap();
        let c = simulate(&params, &profile, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn analytic_values() {
        let eta = analytic_eta(3.7, 0.01, 10.0).unwrap();
        assert!((eta.exact - 3.6 / 3.8).abs() < 1e-15);
        assert!((eta.exact - 0.947_368_4).abs() < 1e-7);
        assert!((eta.linearized - 0.945_945_9).abs() < 1e-7);
        let lossless = analytic_eta(650.0, 0.0, 300.0).unwrap();
        assert_eq!((lossless.exact, lossless.linearized), (1.0, 1.0));
        let small = analytic_eta(3.7, 0.01, 1.0).unwrap();
        assert!(small.exact - small.linearized < 1.5e-5);
        assert!(analytic_eta(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn fade_relation() {
        assert_eq!(expected_fade(0.05, 0.05, 200.0, 650.0), 0.0);
        // 2 R0 I / U = 0.03 at BoL, +17 % resistance
        let (u, i) = (650.0, 200.0);
        let r_bol = 0.03 * u / (2.0 * i);
        let fade = expected_fade(r_bol, 1.17 * r_bol, i, u);
        assert!((fade - 0.51).abs() < 1e-9);
        let doubled = expected_fade(r_bol, r_bol + 2.0 * 0.17 * r_bol, i, u);
        assert!((doubled - 2.0 * fade).abs() < 1e-12);
    }

    #[test]
    fn fleet_partitions_are_monthly() {
        let scenario = FleetScenario {
            params: TheveninParams::flat(650.0, 0.05, 200.0, 0.8),
            profile: DutyProfile::new(vec![Phase::rest(10)], 20.0),
            start: "2019-08-01T06:00:00Z".into(),
            partitions: 42,
            aging: AgingSchedule::Linear { total_increase: 0.17 },
            segment_prefix: "bus".into(),
        };
        scenario.validate().unwrap();
        let (t0, l0) = scenario.partition_start(0).unwrap();
        let (t41, l41) = scenario.partition_start(41).unwrap();
        assert_eq!(l0, "2019-08");
        assert_eq!(l41, "2023-01");
        assert_eq!(t0, 1_564_639_200.0);
        assert!(t41 > t0);
        assert!((scenario.aging.factor(41, 42) - 1.17).abs() < 1e-15);
        let s = scenario.simulate_partition(5, 1).unwrap();
        assert_eq!(s.segment_id, "bus-2020-01");
    }

    #[test]
    fn seasonal_trace_peaks_in_the_afternoon() {
        let trace = TemperatureTrace::Seasonal {
            mean_c: 10.0,
            seasonal_amplitude_c: 0.0,
            diurnal_amplitude_c: 5.0,
            peak_day_of_year: 0.0,
        };
        assert!((trace.eval(15.0 * 3600.0) - 15.0).abs() < 1e-9);
        assert!((trace.eval(3.0 * 3600.0) - 5.0).abs() < 1e-9);
    }
}

//! Independent oracles and scenario builders shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtefade::detector::DetectorConfig;
use rtefade::telemetry::{TelemetryRecord, TelemetrySeries};
use rtefade::thevenin::{DutyProfile, Phase, TheveninParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 1 Hz series from a current trace, voltage fixed at 1 V.
pub fn series_from_currents(currents: &[f64], capacity_ah: f64, initial_soc: f64) -> TelemetrySeries {
    let records = currents
        .iter()
        .enumerate()
        .map(|(k, &i)| TelemetryRecord {
            timestamp: k as f64,
            current: i,
            voltage: 1.0,
            temperature: 25.0,
        })
        .collect();
    TelemetrySeries::new("oracle", records, 1.0, capacity_ah, initial_soc).unwrap()
}

/// SoC by running summation, written independently of the library.
pub fn soc_literal(series: &TelemetrySeries) -> Vec<f64> {
    let scale = series.sampling_interval / (3600.0 * series.nominal_capacity);
    let mut out = Vec::with_capacity(series.len());
    let mut q = 0.0;
    for r in &series.records {
        q += r.current;
        out.push(series.initial_soc + scale * q);
    }
    out
}

/// Rest test evaluated over the whole window for every index.
pub fn brute_rest_starts(series: &TelemetrySeries, config: &DetectorConfig) -> Vec<usize> {
    let r = &series.records;
    (0..r.len())
        .filter(|&k| {
            let t_k = r[k].timestamp;
            t_k - r[0].timestamp >= config.rest_duration_min
                && (0..k)
                    .rev()
                    .take_while(|&j| r[j].timestamp >= t_k - config.rest_duration_min)
                    .all(|j| r[j].current.abs() < config.rest_current_max)
        })
        .collect()
}

/// Literal round-trip detection: every (start, end) pair is examined.
///
/// Returns `(start, end)` pairs ordered by start.
pub fn brute_round_trips(series: &TelemetrySeries, soc: &[f64], config: &DetectorConfig) -> Vec<(usize, usize)> {
    let r = &series.records;
    let candidates = brute_rest_starts(series, config);
    let is_candidate = |k: usize| candidates.binary_search(&k).is_ok();
    let at_rest = |k: usize| r[k].current.abs() < config.rest_current_max;

    // One opener per maximal block of consecutive candidates: the last
    // candidate that is itself at rest, else the block's last candidate.
    let mut openers = Vec::new();
    let mut k = 0;
    while k < r.len() {
        if !is_candidate(k) {
            k += 1;
            continue;
        }
        let first = k;
        while k + 1 < r.len() && is_candidate(k + 1) {
            k += 1;
        }
        let last = k;
        let opener = (first..=last).rev().find(|&j| at_rest(j)).unwrap_or(last);
        openers.push(opener);
        k += 1;
    }

    let mut trips = Vec::new();
    for s in openers {
        let matching: Vec<usize> = (0..r.len())
            .filter(|&e| {
                let dt = r[e].timestamp - r[s].timestamp;
                dt > config.trip_duration_min
                    && dt < config.trip_duration_max
                    && (soc[e] - soc[s]).abs() <= config.soc_match_tolerance
            })
            .collect();
        if matching.is_empty() {
            continue;
        }
        let mut run_end = 0;
        while run_end + 1 < matching.len() && matching[run_end + 1] == matching[run_end] + 1 {
            run_end += 1;
        }
        trips.push((s, matching[run_end / 2]));
    }
    trips
}

/// Random piecewise-constant duty cycle mixing rests, sub-threshold drift
/// and loaded phases, at most `max_len` samples.
pub fn random_profile(rng: &mut ChaCha8Rng, max_len: usize, rest_current: f64, load: f64) -> Vec<f64> {
    let target = rng.random_range(max_len / 4..=max_len);
    let mut currents = Vec::with_capacity(target);
    while currents.len() < target {
        let duration = rng.random_range(5..400usize).min(target - currents.len());
        let kind = rng.random_range(0..5u8);
        let level = match kind {
            0 => 0.0,
            1 => rng.random_range(-0.9..0.9) * rest_current,
            2 => -load * rng.random_range(0.2..1.0),
            3 => load * rng.random_range(0.2..1.0),
            _ => {
                // Mirror an earlier phase so SoC tends to come back.
                let back = rng.random_range(0..=currents.len().min(400));
                let mean = currents[currents.len() - back..].iter().sum::<f64>() / back.max(1) as f64;
                -mean
            }
        };
        currents.extend(std::iter::repeat_n(level, duration));
    }
    currents
}

/// Exact average-rank Spearman on small integer data.
///
/// Ranks are doubled so they stay integral; rho is assembled from integer
/// sums and only the final ratio is floating point. `None` when either
/// input is constant.
pub fn spearman_oracle(x: &[i64], y: &[i64]) -> Option<f64> {
    fn doubled_ranks(v: &[i64]) -> Vec<i128> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as i128;
                let equal = v.iter().filter(|b| *b == a).count() as i128;
                // average of positions less+1 ..= less+equal, times two
                2 * less + equal + 1
            })
            .collect()
    }
    let n = x.len() as i128;
    let (a, b) = (doubled_ranks(x), doubled_ranks(y));
    let (sa, sb): (i128, i128) = (a.iter().sum(), b.iter().sum());
    let sab: i128 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let saa: i128 = a.iter().map(|p| p * p).sum();
    let sbb: i128 = b.iter().map(|q| q * q).sum();
    let cov = n * sab - sa * sb;
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va == 0 || vb == 0 {
        return None;
    }
    Some(cov as f64 / ((va as f64) * (vb as f64)).sqrt())
}

/// Constant-current round trip on a flat EMF: rest, discharge, charge, rest.
pub fn symmetric_cycle(u_emf: f64, r0: f64, current: f64, duration_s: u32, capacity_ah: f64) -> (TheveninParams, DutyProfile) {
    let params = TheveninParams::flat(u_emf, r0, capacity_ah, 0.5);
    let profile = DutyProfile::new(
        vec![
            Phase::rest(600),
            Phase::new(duration_s, -current),
            Phase::new(duration_s, current),
            Phase::rest(600),
        ],
        25.0,
    );
    (params, profile)
}

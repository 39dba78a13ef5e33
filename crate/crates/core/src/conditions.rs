//! Operating-condition statistics per round trip and Spearman ranking of
//! conditions against efficiency.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::detector::RoundTrip;
use crate::efficiency::EfficiencyEstimate;
use crate::error::{Error, Result};
use crate::telemetry::{SocTrace, TelemetrySeries};

/// Default significance level for correlation tests.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// The four per-trip conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SocRt,
    DodRt,
    RmsCrate,
    TempRt,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::SocRt,
        Condition::DodRt,
        Condition::RmsCrate,
        Condition::TempRt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::SocRt => "soc_rt",
            Condition::DodRt => "dod_rt",
            Condition::RmsCrate => "rms_crate",
            Condition::TempRt => "temp_rt",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown condition `{s}`")))
    }
}

/// Conditions of one round trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    /// Mean SoC over the trip.
    pub soc_rt: f64,
    /// Max minus min SoC over the trip.
    pub dod_rt: f64,
    /// RMS of I / C_n, in 1/h.
    pub rms_crate: f64,
    /// Mean temperature, °C.
    pub temp_rt: f64,
    pub n_samples: usize,
}

impl ConditionVector {
    pub fn get(&self, condition: Condition) -> f64 {
        match condition {
            Condition::SocRt => self.soc_rt,
            Condition::DodRt => self.dod_rt,
            Condition::RmsCrate => self.rms_crate,
            Condition::TempRt => self.temp_rt,
        }
    }
}

/// Condition statistics over all samples in `[start, end]`.
pub fn compute_conditions(series: &TelemetrySeries, soc: &SocTrace, trip: &RoundTrip) -> ConditionVector {
    let range = trip.start_index..=trip.end_index;
    let n = trip.n_samples() as f64;
    let soc_slice = &soc.soc[range.clone()];
    let records = &series.records[range];
    let (lo, hi) = soc_slice
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let crate_sq = records
        .iter()
        .map(|r| (r.current / series.nominal_capacity).powi(2))
        .sum::<f64>();
    ConditionVector {
        soc_rt: soc_slice.iter().sum::<f64>() / n,
        dod_rt: hi - lo,
        rms_crate: (crate_sq / n).sqrt(),
        temp_rt: records.iter().map(|r| r.temperature).sum::<f64>() / n,
        n_samples: trip.n_samples(),
    }
}

/// Outcome of a rank-correlation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub condition_name: String,
    pub rho: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Two-sided p-value of a correlation coefficient from `m` pairs via the
/// t-approximation with `m - 2` degrees of freedom.
pub fn correlation_p_value(rho: f64, m: usize) -> f64 {
    let dof = (m - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let t = rho * (dof / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(x: &[f64], y: &[f64], alpha: f64) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData {
            what: "pairs",
            needed: 3,
            got: x.len(),
        });
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::UndefinedCorrelation("constant input sequence".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::UndefinedCorrelation("NaN in input".into()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y));
    let p_value = correlation_p_value(rho, x.len());
    Ok(CorrelationResult {
        condition_name: String::new(),
        rho,
        p_value,
        significant: p_value < alpha,
    })
}

/// Correlates every condition with efficiency.
///
/// Significant conditions come first, ordered by |rho| descending, followed
/// by the non-significant ones in the same order. A constant condition is
/// reported as rho = 0, p = 1.
pub fn rank_conditions(
    trips: &[(EfficiencyEstimate, ConditionVector)],
    alpha: f64,
) -> Result<Vec<CorrelationResult>> {
    if trips.len() < 3 {
        return Err(Error::InsufficientData {
            what: "round trips",
            needed: 3,
            got: trips.len(),
        });
    }
    let eta: Vec<f64> = trips.iter().map(|(e, _)| e.eta).collect();
    let mut results = Condition::ALL
        .into_iter()
        .map(|condition| {
            let values: Vec<f64> = trips.iter().map(|(_, c)| c.get(condition)).collect();
            let mut result = match spearman(&values, &eta, alpha) {
                Ok(r) => r,
                Err(Error::UndefinedCorrelation(_)) => CorrelationResult {
                    condition_name: String::new(),
                    rho: 0.0,
                    p_value: 1.0,
                    significant: false,
                },
                Err(e) => return Err(e),
            };
            result.condition_name = condition.name().to_string();
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| {
        b.significant
            .cmp(&a.significant)
            .then(b.rho.abs().total_cmp(&a.rho.abs()))
    });
    Ok(results)
}

/// The two strongest significant conditions, if at least two are significant.
pub fn top_two(ranking: &[CorrelationResult]) -> Option<(Condition, Condition)> {
    let mut significant = ranking
        .iter()
        .filter(|r| r.significant)
        .filter_map(|r| r.condition_name.parse::<Condition>().ok());
    Some((significant.next()?, significant.next()?))
}

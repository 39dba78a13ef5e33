//! End-to-end commands: ingestion → detection → efficiency → conditions →
//! regression → fade, with their file outputs.
//!
//! Each `run_*` function computes an outcome in memory; the matching
//! `write_*` function serializes it. Per-file and per-trip problems become
//! warnings; only a total failure is an error.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditions::{compute_conditions, rank_conditions, top_two, Condition, ConditionVector, CorrelationResult};
use crate::config::{AnalysisConfig, ConditionSelection};
use crate::detector::detect_round_trips;
use crate::efficiency::{estimate_efficiency, estimate_noise, EfficiencyEstimate};
use crate::error::{Error, Result};
use crate::regression::{build_fade_report, fit_wls, FadeReport, Partition, RegressionModel, WlsObservation};
use crate::report::{fmt_float, fmt_timestamp, write_json, write_table};
use crate::telemetry::{compute_soc_in_band, parse_csv, write_csv, ParseReport, TelemetrySeries};
use crate::thevenin::FleetScenario;

/// Audit row for one detected trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripAudit {
    pub segment_id: String,
    pub start_timestamp: f64,
    pub end_timestamp: f64,
    pub soc_start: f64,
    pub soc_end: f64,
    pub duration_s: f64,
}

/// Efficiency and conditions of one trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripResult {
    pub estimate: EfficiencyEstimate,
    pub conditions: ConditionVector,
}

/// Everything extracted from one segment.
#[derive(Debug, Clone, Default)]
pub struct SegmentOutcome {
    pub audits: Vec<TripAudit>,
    pub results: Vec<TripResult>,
    pub warnings: Vec<String>,
}

/// Detects trips in one segment and, when `with_efficiency`, evaluates them.
pub fn analyze_series(series: &TelemetrySeries, config: &AnalysisConfig, with_efficiency: bool) -> Result<SegmentOutcome> {
    let band = (config.ingest.soc_band[0], config.ingest.soc_band[1]);
    let soc = compute_soc_in_band(series, band);
    let mut outcome = SegmentOutcome::default();
    if let Some(k) = soc.band_violation {
        outcome.warnings.push(format!(
            "{}: SoC {:.4} leaves the plausibility band at index {k}; check capacity and initial SoC",
            series.segment_id, soc.soc[k]
        ));
    }
    let detector = config.detector.resolve(series.nominal_capacity);
    let trips = detect_round_trips(series, &soc, &detector)?;
    let noise = if with_efficiency {
        estimate_noise(series, &config.sensor, detector.rest_current_max)
    } else {
        Default::default()
    };
    for trip in &trips {
        outcome.audits.push(TripAudit {
            segment_id: series.segment_id.clone(),
            start_timestamp: series.records[trip.start_index].timestamp,
            end_timestamp: series.records[trip.end_index].timestamp,
            soc_start: soc.soc[trip.start_index],
            soc_end: soc.soc[trip.end_index],
            duration_s: trip.duration(series),
        });
        if !with_efficiency {
            continue;
        }
        match estimate_efficiency(series, trip, &config.sensor, &noise) {
            Ok(estimate) => {
                if estimate.implausible {
                    outcome.warnings.push(format!(
                        "{}: implausible efficiency {:.4} for trip at index {}",
                        series.segment_id, estimate.eta, trip.start_index
                    ));
                }
                outcome.results.push(TripResult {
                    estimate,
                    conditions: compute_conditions(series, &soc, trip),
                });
            }
            Err(Error::DegenerateTrip(msg)) => {
                outcome.warnings.push(format!("{}: trip discarded: {msg}", series.segment_id));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

/// Expands directories to their `*.csv` files, sorted by path.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("csv")))
                .collect();
            found.sort();
            files.extend(found);
        } else if path.is_file() {
            files.push(path.clone());
        } else {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input `{}` does not exist", path.display()),
            )));
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidConfig("no input CSV files found".into()));
    }
    Ok(files)
}

/// Aggregate ingestion bookkeeping for a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub files: usize,
    pub files_failed: usize,
    pub segments: usize,
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// Seconds covered by the ingested segments.
    pub covered_s: f64,
    pub trips: usize,
    pub warnings: Vec<String>,
    pub parse_reports: Vec<ParseReport>,
}

fn segment_prefix(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".to_string())
}

/// Parses every file and hands each segment to `visit`. Files that fail to
/// parse become warnings unless every file fails.
fn for_each_series(
    files: &[PathBuf],
    config: &AnalysisConfig,
    mut visit: impl FnMut(&TelemetrySeries, &mut RunSummary) -> Result<()>,
) -> Result<RunSummary> {
    let mut summary = RunSummary {
        files: files.len(),
        ..RunSummary::default()
    };
    let mut first_error = None;
    for path in files {
        let parsed = File::open(path)
            .map_err(Error::from)
            .and_then(|f| parse_csv(BufReader::new(f), &config.ingest, &segment_prefix(path)));
        let parsed = match parsed {
            Ok(p) => p,
            Err(e) => {
                summary.files_failed += 1;
                summary.warnings.push(format!("{}: skipped: {e}", path.display()));
                first_error.get_or_insert(e);
                continue;
            }
        };
        summary.rows_read += parsed.report.rows_read;
        summary.rows_dropped += parsed.report.rows_dropped;
        if parsed.report.rows_dropped > 0 {
            summary.warnings.push(format!(
                "{}: dropped {} of {} rows",
                path.display(),
                parsed.report.rows_dropped,
                parsed.report.rows_read
            ));
        }
        summary.parse_reports.push(parsed.report);
        for series in &parsed.series {
            summary.segments += 1;
            summary.covered_s += series.duration();
            visit(series, &mut summary)?;
        }
    }
    match first_error {
        Some(e) if summary.files_failed == summary.files => Err(e),
        _ => Ok(summary),
    }
}

/// Detection results and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    pub audits: Vec<TripAudit>,
    pub summary: DetectSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub segments: usize,
    pub trips: usize,
    pub trips_per_day: f64,
    pub run: RunSummary,
}

pub fn run_detect(files: &[PathBuf], config: &AnalysisConfig) -> Result<DetectOutcome> {
    config.validate()?;
    let mut audits = Vec::new();
    let mut run = for_each_series(files, config, |series, summary| {
        let outcome = analyze_series(series, config, false)?;
        summary.warnings.extend(outcome.warnings);
        audits.extend(outcome.audits);
        Ok(())
    })?;
    run.trips = audits.len();
    if audits.is_empty() {
        run.warnings.push("no round trips detected".into());
    }
    let days = run.covered_s / 86_400.0;
    Ok(DetectOutcome {
        summary: DetectSummary {
            segments: run.segments,
            trips: audits.len(),
            trips_per_day: if days > 0.0 { audits.len() as f64 / days } else { 0.0 },
            run,
        },
        audits,
    })
}

pub fn write_trips_csv<W: std::io::Write>(sink: W, audits: &[TripAudit]) -> Result<()> {
    write_table(
        sink,
        &["segment_id", "start_timestamp", "end_timestamp", "soc_start", "soc_end", "duration_s"],
        audits.iter().map(|a| {
            vec![
                a.segment_id.clone(),
                fmt_timestamp(a.start_timestamp),
                fmt_timestamp(a.end_timestamp),
                fmt_float(a.soc_start),
                fmt_float(a.soc_end),
                fmt_float(a.duration_s),
            ]
        }),
    )
}

pub fn write_detect(out_dir: &Path, outcome: &DetectOutcome) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_trips_csv(File::create(out_dir.join("trips.csv"))?, &outcome.audits)?;
    write_json(&out_dir.join("detect_summary.json"), &outcome.summary)
}

/// Collects per-trip efficiency and conditions from every input.
pub fn collect_trip_results(files: &[PathBuf], config: &AnalysisConfig) -> Result<(Vec<TripResult>, RunSummary)> {
    config.validate()?;
    let mut results = Vec::new();
    let mut run = for_each_series(files, config, |series, summary| {
        let outcome = analyze_series(series, config, true)?;
        summary.warnings.extend(outcome.warnings);
        results.extend(outcome.results);
        Ok(())
    })?;
    run.trips = results.len();
    Ok((results, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub alpha: f64,
    pub n_trips: usize,
    pub conditions: Vec<CorrelationResult>,
    /// `explicit` or `auto`.
    pub selection: String,
    pub selected: [Condition; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOutcome {
    pub trips: Vec<TripResult>,
    pub correlation: CorrelationReport,
    pub regression: RegressionModel,
    pub summary: RunSummary,
}

/// Ranks the conditions and resolves the regression pair.
pub fn correlate(trips: &[TripResult], config: &AnalysisConfig) -> Result<CorrelationReport> {
    let pairs: Vec<(EfficiencyEstimate, ConditionVector)> =
        trips.iter().map(|t| (t.estimate.clone(), t.conditions)).collect();
    let ranking = rank_conditions(&pairs, config.significance_alpha)?;
    let (selection, selected) = match config.conditions {
        ConditionSelection::Explicit(pair) => ("explicit", pair),
        ConditionSelection::Auto(_) => {
            let (a, b) = top_two(&ranking).ok_or_else(|| Error::InsufficientData {
                what: "significant conditions for automatic selection",
                needed: 2,
                got: ranking.iter().filter(|r| r.significant).count(),
            })?;
            ("auto", [a, b])
        }
    };
    Ok(CorrelationReport {
        alpha: config.significance_alpha,
        n_trips: trips.len(),
        conditions: ranking,
        selection: selection.to_string(),
        selected,
    })
}

pub fn observations(trips: &[TripResult], pair: [Condition; 2]) -> Vec<WlsObservation> {
    trips
        .iter()
        .map(|t| WlsObservation {
            c1: t.conditions.get(pair[0]),
            c2: t.conditions.get(pair[1]),
            eta: t.estimate.eta,
            eta_stderr: t.estimate.eta_stderr,
        })
        .collect()
}

/// Correlation ranking plus one pooled regression over all trips.
pub fn analyze_results(trips: Vec<TripResult>, summary: RunSummary, config: &AnalysisConfig) -> Result<AnalyzeOutcome> {
    let correlation = correlate(&trips, config)?;
    let pair = correlation.selected;
    let regression = fit_wls(&observations(&trips, pair), [pair[0].name(), pair[1].name()], "all")?;
    Ok(AnalyzeOutcome {
        trips,
        correlation,
        regression,
        summary,
    })
}

pub fn run_analyze(files: &[PathBuf], config: &AnalysisConfig) -> Result<AnalyzeOutcome> {
    let (trips, summary) = collect_trip_results(files, config)?;
    analyze_results(trips, summary, config)
}

pub fn write_analyze(out_dir: &Path, outcome: &AnalyzeOutcome) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_table(
        File::create(out_dir.join("efficiency.csv"))?,
        &["segment_id", "start_timestamp", "end_timestamp", "eta", "eta_stderr", "e_dis_J", "e_chg_J"],
        outcome.trips.iter().map(|t| {
            let e = &t.estimate;
            vec![
                e.segment_id.clone(),
                fmt_timestamp(e.start_timestamp),
                fmt_timestamp(e.end_timestamp),
                fmt_float(e.eta),
                fmt_float(e.eta_stderr),
                fmt_float(e.e_dis),
                fmt_float(e.e_chg),
            ]
        }),
    )?;
    write_table(
        File::create(out_dir.join("conditions.csv"))?,
        &["segment_id", "start_timestamp", "soc_rt", "dod_rt", "rms_crate", "temp_rt", "eta", "eta_stderr"],
        outcome.trips.iter().map(|t| {
            let c = &t.conditions;
            vec![
                t.estimate.segment_id.clone(),
                fmt_timestamp(t.estimate.start_timestamp),
                fmt_float(c.soc_rt),
                fmt_float(c.dod_rt),
                fmt_float(c.rms_crate),
                fmt_float(c.temp_rt),
                fmt_float(t.estimate.eta),
                fmt_float(t.estimate.eta_stderr),
            ]
        }),
    )?;
    write_json(&out_dir.join("correlation.json"), &outcome.correlation)?;
    write_json(&out_dir.join("regression.json"), &outcome.regression)?;
    write_json(&out_dir.join("analyze_summary.json"), &outcome.summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FadeOutcome {
    pub report: FadeReport,
    pub summary: RunSummary,
}

/// Groups trips into partitions by the configured rule on their start time.
pub fn partition_trips(trips: &[TripResult], config: &AnalysisConfig, pair: [Condition; 2]) -> Vec<Partition> {
    let mut buckets: std::collections::BTreeMap<String, Vec<WlsObservation>> = Default::default();
    for (trip, obs) in trips.iter().zip(observations(trips, pair)) {
        buckets
            .entry(config.partition.label(trip.estimate.start_timestamp))
            .or_default()
            .push(obs);
    }
    buckets
        .into_iter()
        .map(|(label, trips)| Partition { label, trips })
        .collect()
}

/// Fade report from already-evaluated trips.
pub fn fade_results(trips: &[TripResult], config: &AnalysisConfig) -> Result<FadeReport> {
    let pair = match config.conditions {
        ConditionSelection::Explicit(pair) => pair,
        ConditionSelection::Auto(_) => correlate(trips, config)?.selected,
    };
    let partitions = partition_trips(trips, config, pair);
    build_fade_report(&partitions, config.reference.into(), [pair[0].name(), pair[1].name()])
}

pub fn run_fade(files: &[PathBuf], config: &AnalysisConfig) -> Result<FadeOutcome> {
    let (trips, mut summary) = collect_trip_results(files, config)?;
    let report = fade_results(&trips, config)?;
    for skipped in &report.skipped {
        summary
            .warnings
            .push(format!("partition {} skipped: {}", skipped.partition_label, skipped.reason));
    }
    Ok(FadeOutcome { report, summary })
}

pub fn write_fade_csv<W: std::io::Write>(sink: W, report: &FadeReport) -> Result<()> {
    write_table(
        sink,
        &["partition_label", "eta_hat", "ci95_lo", "ci95_hi", "moving_avg", "n_trips"],
        report.points.iter().zip(&report.moving_average).map(|(p, ma)| {
            vec![
                p.partition_label.clone(),
                fmt_float(p.eta_hat),
                fmt_float(p.eta_hat - p.ci95_half_width),
                fmt_float(p.eta_hat + p.ci95_half_width),
                ma.map(fmt_float).unwrap_or_default(),
                p.n_trips.to_string(),
            ]
        }),
    )
}

pub fn write_fade(out_dir: &Path, outcome: &FadeOutcome) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("fade_report.json"), &outcome.report)?;
    write_fade_csv(File::create(out_dir.join("fade.csv"))?, &outcome.report)?;
    write_json(&out_dir.join("fade_summary.json"), &outcome.summary)
}

/// Simulates every partition of a scenario into `out_dir`, one CSV per
/// segment named after its segment id.
pub fn run_simulate(scenario: &FleetScenario, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    scenario.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(scenario.partitions);
    for index in 0..scenario.partitions {
        let series = scenario.simulate_partition(index, seed)?;
        let path = out_dir.join(format!("{}.csv", series.segment_id));
        let file = std::io::BufWriter::new(File::create(&path)?);
        write_csv(&series, file)?;
        written.push(path);
    }
    Ok(written)
}

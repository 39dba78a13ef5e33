//! Weighted two-condition efficiency maps and efficiency fade over
//! calendar partitions.
//!
//! The model is `eta = b1 * c1 + b2 * c2 + b3` with weights `1 / S_eta²`.
//! Coefficients come from a Householder QR of the row-scaled design
//! `sqrt(W) X`, which solves the weighted normal equations without forming
//! `X'WX`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest admissible weight, reached by stderr <= 1e-6.
pub const WEIGHT_CAP: f64 = 1e12;

/// z-value of a two-sided 95 % normal interval.
pub const Z95: f64 = 1.96;

/// One round trip as seen by the regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsObservation {
    pub c1: f64,
    pub c2: f64,
    pub eta: f64,
    pub eta_stderr: f64,
}

impl WlsObservation {
    pub fn weight(&self) -> f64 {
        if self.eta_stderr > 0.0 {
            (1.0 / (self.eta_stderr * self.eta_stderr)).min(WEIGHT_CAP)
        } else {
            WEIGHT_CAP
        }
    }
}

/// Fitted efficiency map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// (b1 for c1, b2 for c2, b3 intercept).
    pub beta: [f64; 3],
    pub beta_covariance: [[f64; 3]; 3],
    pub beta_stderr: [f64; 3],
    pub p_values: [f64; 3],
    pub adjusted_r2: f64,
    /// Weighted residual sum of squares over n - 3.
    pub residual_variance: f64,
    pub n_trips: usize,
    pub condition_names: [String; 2],
    pub partition_label: String,
}

/// Predicted efficiency with the standard error of the mean response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub eta_hat: f64,
    pub stderr: f64,
    /// Set when the plane evaluates above 1 at the requested point.
    pub extrapolated: bool,
}

fn check_varies(values: impl Iterator<Item = f64>, name: &str) -> Result<()> {
    let mut values = values;
    let first = values.next().unwrap_or(0.0);
    if values.all(|v| v == first) {
        return Err(Error::DegenerateDesign(name.to_string()));
    }
    Ok(())
}

fn back_substitute(r: &Matrix3<f64>, rhs: &Vector3<f64>) -> Vector3<f64> {
    let mut x = Vector3::zeros();
    for i in (0..3).rev() {
        let mut acc = rhs[i];
        for j in i + 1..3 {
            acc -= r[(i, j)] * x[j];
        }
        x[i] = acc / r[(i, i)];
    }
    x
}

fn two_sided_p(estimate: f64, stderr: f64, dist: &StudentsT) -> f64 {
    if stderr > 0.0 {
        (2.0 * dist.sf((estimate / stderr).abs())).clamp(0.0, 1.0)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Fits the weighted two-condition plane.
pub fn fit_wls(trips: &[WlsObservation], condition_names: [&str; 2], partition_label: &str) -> Result<RegressionModel> {
    let n = trips.len();
    if n < 4 {
        return Err(Error::InsufficientData {
            what: "round trips for a regression",
            needed: 4,
            got: n,
        });
    }
    if let Some(bad) = trips
        .iter()
        .find(|t| !(t.c1.is_finite() && t.c2.is_finite() && t.eta.is_finite()) || t.eta_stderr.is_nan())
    {
        return Err(Error::Domain(format!("non-finite regression input {bad:?}")));
    }
    check_varies(trips.iter().map(|t| t.c1), condition_names[0])?;
    check_varies(trips.iter().map(|t| t.c2), condition_names[1])?;

    let weights: Vec<f64> = trips.iter().map(WlsObservation::weight).collect();
    let design = DMatrix::from_fn(n, 3, |i, j| {
        let root_w = weights[i].sqrt();
        root_w
            * match j {
                0 => trips[i].c1,
                1 => trips[i].c2,
                _ => 1.0,
            }
    });
    let column_norms: Vec<f64> = (0..3).map(|j| design.column(j).norm()).collect();
    let mut rhs = DVector::from_fn(n, |i, _| weights[i].sqrt() * trips[i].eta);

    let qr = design.qr();
    let r_full = qr.r();
    let r = Matrix3::from_fn(|i, j| r_full[(i, j)]);
    for k in 0..3 {
        if r[(k, k)].abs() <= 1e-10 * column_norms[k] {
            let name = match k {
                0 => condition_names[0],
                1 => condition_names[1],
                _ => "intercept",
            };
            return Err(Error::DegenerateDesign(name.to_string()));
        }
    }
    qr.q_tr_mul(&mut rhs);
    let beta = back_substitute(&r, &Vector3::new(rhs[0], rhs[1], rhs[2]));

    // (X'WX)^-1 = R^-1 R^-T
    let mut r_inv = Matrix3::zeros();
    for k in 0..3 {
        let col = back_substitute(&r, &Vector3::from_fn(|i, _| if i == k { 1.0 } else { 0.0 }));
        r_inv.set_column(k, &col);
    }
    let unscaled = r_inv * r_inv.transpose();

    let fitted = |t: &WlsObservation| beta[0] * t.c1 + beta[1] * t.c2 + beta[2];
    let ssr: f64 = trips
        .iter()
        .zip(&weights)
        .map(|(t, w)| w * (t.eta - fitted(t)).powi(2))
        .sum();
    let w_sum: f64 = weights.iter().sum();
    let y_bar = trips.iter().zip(&weights).map(|(t, w)| w * t.eta).sum::<f64>() / w_sum;
    let sst: f64 = trips
        .iter()
        .zip(&weights)
        .map(|(t, w)| w * (t.eta - y_bar).powi(2))
        .sum();

    let dof = (n - 3) as f64;
    let residual_variance = ssr / dof;
    let cov = unscaled * residual_variance;
    let mut beta_covariance = [[0.0; 3]; 3];
    for (i, row) in beta_covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            // symmetrize rounding noise
            *v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    let beta_stderr = [0, 1, 2].map(|k| beta_covariance[k][k].max(0.0).sqrt());
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    let p_values = [0, 1, 2].map(|k| two_sided_p(beta[k], beta_stderr[k], &dist));
    let adjusted_r2 = if sst > 0.0 {
        1.0 - (ssr / dof) / (sst / (n as f64 - 1.0))
    } else {
        1.0
    };

    Ok(RegressionModel {
        beta: [beta[0], beta[1], beta[2]],
        beta_covariance,
        beta_stderr,
        p_values,
        adjusted_r2,
        residual_variance,
        n_trips: n,
        condition_names: condition_names.map(str::to_string),
        partition_label: partition_label.to_string(),
    })
}

impl RegressionModel {
    /// Evaluates the plane at `(c1, c2)` with the mean-response standard error.
    pub fn predict(&self, c1: f64, c2: f64) -> Prediction {
        let x = [c1, c2, 1.0];
        let eta_hat = self.beta.iter().zip(&x).map(|(b, x)| b * x).sum::<f64>();
        let mut variance = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                variance += x[i] * self.beta_covariance[i][j] * x[j];
            }
        }
        Prediction {
            eta_hat,
            stderr: variance.max(0.0).sqrt(),
            extrapolated: eta_hat > 1.0,
        }
    }
}

/// Conditions at which every partition's model is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceConditions {
    /// Trip-count-weighted mean of c1 and c2 over all partitions.
    Auto,
    Explicit { c1: f64, c2: f64 },
}

/// A calendar bucket of round trips.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Chronologically sortable label, e.g. `2019-10`.
    pub label: String,
    pub trips: Vec<WlsObservation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadePoint {
    pub partition_label: String,
    pub eta_hat: f64,
    pub ci95_half_width: f64,
    pub n_trips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPartition {
    pub partition_label: String,
    pub n_trips: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadeReport {
    pub condition_names: [String; 2],
    pub reference_conditions: [f64; 2],
    pub points: Vec<FadePoint>,
    /// Centered 3-partition mean of `eta_hat`; absent at both ends.
    pub moving_average: Vec<Option<f64>>,
    /// Percent points; positive means the efficiency decreased.
    pub fade_pp: f64,
    pub models: Vec<RegressionModel>,
    pub skipped: Vec<SkippedPartition>,
}

/// Centered three-point moving average, `None` at the first and last point.
pub fn centered_moving_average(values: &[f64]) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|k| {
            if k == 0 || k + 1 >= values.len() {
                None
            } else {
                Some((values[k - 1] + values[k] + values[k + 1]) / 3.0)
            }
        })
        .collect()
}

/// Fits every partition, evaluates at the reference conditions and
/// summarizes the fade between the first and last fittable partitions.
pub fn build_fade_report(
    partitions: &[Partition],
    reference: ReferenceConditions,
    condition_names: [&str; 2],
) -> Result<FadeReport> {
    let mut ordered: Vec<&Partition> = partitions.iter().collect();
    ordered.sort_by(|a, b| a.label.cmp(&b.label));

    let reference_conditions = match reference {
        ReferenceConditions::Explicit { c1, c2 } => [c1, c2],
        ReferenceConditions::Auto => {
            let all = ordered.iter().flat_map(|p| p.trips.iter());
            let (n, s1, s2) = all.fold((0usize, 0.0, 0.0), |(n, s1, s2), t| (n + 1, s1 + t.c1, s2 + t.c2));
            if n == 0 {
                return Err(Error::InsufficientData {
                    what: "round trips across partitions",
                    needed: 1,
                    got: 0,
                });
            }
            [s1 / n as f64, s2 / n as f64]
        }
    };

    let mut models = Vec::new();
    let mut skipped = Vec::new();
    for partition in ordered {
        match fit_wls(&partition.trips, condition_names, &partition.label) {
            Ok(model) => models.push(model),
            Err(e @ (Error::InsufficientData { .. } | Error::DegenerateDesign(_))) => {
                skipped.push(SkippedPartition {
                    partition_label: partition.label.clone(),
                    n_trips: partition.trips.len(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if models.len() < 2 {
        return Err(Error::InsufficientData {
            what: "fittable partitions",
            needed: 2,
            got: models.len(),
        });
    }

    let points: Vec<FadePoint> = models
        .iter()
        .map(|m| {
            let p = m.predict(reference_conditions[0], reference_conditions[1]);
            FadePoint {
                partition_label: m.partition_label.clone(),
                eta_hat: p.eta_hat,
                ci95_half_width: Z95 * p.stderr,
                n_trips: m.n_trips,
            }
        })
        .collect();
    let etas: Vec<f64> = points.iter().map(|p| p.eta_hat).collect();
    let fade_pp = 100.0 * (etas[0] - etas[etas.len() - 1]);
    Ok(FadeReport {
        condition_names: condition_names.map(str::to_string),
        reference_conditions,
        moving_average: centered_moving_average(&etas),
        points,
        fade_pp,
        models,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const NAMES: [&str; 2] = ["rms_crate", "temp_rt"];

    fn plane(c1: f64, c2: f64) -> f64 {
        -0.08 * c1 + 0.0008 * c2 + 0.978
    }

    fn plane_points(n: usize) -> Vec<WlsObservation> {
        (0..n)
            .map(|i| {
                let c1 = 0.2 + 0.07 * i as f64;
                let c2 = 5.0 + ((i * 7) % 11) as f64 * 2.5;
                WlsObservation {
                    c1,
                    c2,
                    eta: plane(c1, c2),
                    eta_stderr: 0.002,
                }
            })
            .collect()
    }

    /// Cramer's rule on the explicit weighted normal equations.
    fn normal_equations(trips: &[WlsObservation]) -> [f64; 3] {
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for t in trips {
            let w = t.weight();
            let x = [t.c1, t.c2, 1.0];
            for i in 0..3 {
                b[i] += w * x[i] * t.eta;
                for j in 0..3 {
                    a[i][j] += w * x[i] * x[j];
                }
            }
        }
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        [0, 1, 2].map(|k| {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = b[i];
            }
            det(m) / d
        })
    }

    #[test]
    fn noiseless_plane_is_recovered() {
        let model = fit_wls(&plane_points(20), NAMES, "p").unwrap();
        let truth = [-0.08, 0.0008, 0.978];
        for k in 0..3 {
            assert!((model.beta[k] - truth[k]).abs() < 1e-10, "{k}: {}", model.beta[k]);
        }
        assert!((model.adjusted_r2 - 1.0).abs() < 1e-9);
        let p = model.predict(0.5, 25.0);
        assert!((p.eta_hat - 0.958).abs() < 1e-12);
    }

    #[test]
    fn intercept_identity() {
        let mut trips = plane_points(30);
        for (i, t) in trips.iter_mut().enumerate() {
            t.eta += if i % 3 == 0 { 0.001 } else { -0.0005 };
        }
        let model = fit_wls(&trips, NAMES, "p").unwrap();
        let p = model.predict(0.0, 0.0);
        assert_eq!(p.eta_hat, model.beta[2]);
        assert!((p.stderr - model.beta_stderr[2]).abs() < 1e-15);
    }

    #[test]
    fn matches_explicit_normal_equations() {
        let mut trips = plane_points(40);
        for (i, t) in trips.iter_mut().enumerate() {
            t.eta += 0.003 * ((i as f64) * 1.3).sin();
            t.eta_stderr = 0.001 + 0.0005 * (i % 5) as f64;
        }
        let model = fit_wls(&trips, NAMES, "p").unwrap();
        let oracle = normal_equations(&trips);
        for k in 0..3 {
            assert!((model.beta[k] - oracle[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_condition_is_named() {
        let mut trips = plane_points(10);
        for t in &mut trips {
            t.c2 = 21.0;
        }
        match fit_wls(&trips, NAMES, "p") {
            Err(Error::DegenerateDesign(name)) => assert_eq!(name, "temp_rt"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collinear_conditions_are_degenerate() {
        let mut trips = plane_points(10);
        for t in &mut trips {
            t.c2 = 3.0 * t.c1 + 1.0;
        }
        assert!(matches!(fit_wls(&trips, NAMES, "p"), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn too_few_trips() {
        assert!(matches!(
            fit_wls(&plane_points(3), NAMES, "p"),
            Err(Error::InsufficientData { needed: 4, got: 3, .. })
        ));
    }

    #[test]
    fn zero_stderr_gets_capped_weight() {
        let t = WlsObservation {
            c1: 0.0,
            c2: 0.0,
            eta: 0.9,
            eta_stderr: 0.0,
        };
        assert_eq!(t.weight(), WEIGHT_CAP);
        let t = WlsObservation { eta_stderr: 1e-9, ..t };
        assert_eq!(t.weight(), WEIGHT_CAP);
    }

    #[test]
    fn extrapolation_above_one_is_flagged() {
        let model = fit_wls(&plane_points(20), NAMES, "p").unwrap();
        assert!(model.predict(0.0, 40.0).extrapolated);
        assert!(!model.predict(0.5, 25.0).extrapolated);
    }

    #[test]
    fn moving_average_shape() {
        let ma = centered_moving_average(&[1.0, 2.0, 3.0, 7.0]);
        assert_eq!(ma, vec![None, Some(2.0), Some(4.0), None]);
    }

    #[test]
    fn identical_partitions_have_no_fade() {
        let mut trips = plane_points(25);
        for (i, t) in trips.iter_mut().enumerate() {
            t.eta += 0.002 * ((i as f64) * 0.7).cos();
        }
        let partitions: Vec<Partition> = ["2020-03", "2020-01", "2020-02"]
            .iter()
            .map(|label| Partition {
                label: label.to_string(),
                trips: trips.clone(),
            })
            .collect();
        let report = build_fade_report(&partitions, ReferenceConditions::Auto, NAMES).unwrap();
        assert_eq!(report.fade_pp, 0.0);
        let labels: Vec<&str> = report.points.iter().map(|p| p.partition_label.as_str()).collect();
        assert_eq!(labels, ["2020-01", "2020-02", "2020-03"]);
        assert!(report.points.windows(2).all(|w| w[0].eta_hat == w[1].eta_hat));
        assert_eq!(report.moving_average[0], None);
        assert!(report.moving_average[1].is_some());
    }

    #[test]
    fn unfittable_partitions_are_skipped() {
        let trips = plane_points(12);
        let partitions = vec![
            Partition { label: "a".into(), trips: trips.clone() },
            Partition { label: "b".into(), trips: trips[..2].to_vec() },
            Partition { label: "c".into(), trips },
        ];
        let report = build_fade_report(&partitions, ReferenceConditions::Explicit { c1: 0.5, c2: 20.0 }, NAMES).unwrap();
        assert_eq!(report.points.len(), 2);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].partition_label, "b");
        assert_eq!(report.reference_conditions, [0.5, 20.0]);
    }

    #[test]
    fn single_partition_is_insufficient() {
        let partitions = vec![Partition { label: "a".into(), trips: plane_points(12) }];
        assert!(matches!(
            build_fade_report(&partitions, ReferenceConditions::Auto, NAMES),
            Err(Error::InsufficientData { .. })
        ));
    }
}

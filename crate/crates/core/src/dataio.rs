//! Measurement ingestion, caliper volumes, min-max normalization and the
//! logistic interpolant used as the smooth training target.
//!
//! Input CSV schema (UTF-8, `#` comment lines ignored):
//!
//! ```text
//! id,time_days,volume_mm3
//! 1,22,80.0
//! 1,27,400.0
//! ```

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("subject {0} not found")]
    NotFound(u32),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("duplicated time point {time} for subject {subject}")]
    DuplicateTime { subject: u32, time: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("sigmoid fit did not converge after {iterations} iterations (best sse {:.6e})", best.sse)]
    NotConverged { iterations: usize, best: SigmoidFit },
    #[error("fitted sigmoid violates its invariants: {reason} ({fit:?})")]
    Invalid { reason: String, fit: SigmoidFit },
}

/// Ellipsoid volume from caliper diameters: `(π/6)·w²·L`.
///
/// `length` is the largest diameter and `width` the smallest. The formula is
/// sometimes typeset as `π/(6w²L)`, which is not a volume; the standard
/// ellipsoid reading is used here.
pub fn volume_from_calipers(length: f64, width: f64) -> Result<f64, DataError> {
    if !(length >= 0.0 && width >= 0.0) {
        return Err(DataError::Domain(format!(
            "caliper diameters must be non-negative (L={length}, w={width})"
        )));
    }
    if width > length {
        return Err(DataError::Domain(format!(
            "smallest diameter {width} exceeds largest diameter {length}"
        )));
    }
    Ok(PI / 6.0 * width * width * length)
}

/// One subject's measurements in physical units (days, mm³).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorSeries {
    pub subject_id: u32,
    pub times: Vec<f64>,
    pub volumes: Vec<f64>,
}

impl TumorSeries {
    pub const MIN_POINTS: usize = 4;

    pub fn new(subject_id: u32, times: Vec<f64>, volumes: Vec<f64>) -> Result<Self, DataError> {
        if times.len() != volumes.len() {
            return Err(DataError::Domain(format!(
                "{} times but {} volumes",
                times.len(),
                volumes.len()
            )));
        }
        if times.len() < Self::MIN_POINTS {
            return Err(DataError::Domain(format!(
                "subject {subject_id} has {} points, need at least {}",
                times.len(),
                Self::MIN_POINTS
            )));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::Domain(format!(
                    "times must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(v) = volumes.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(DataError::Domain(format!("volume {v} is not positive")));
        }
        Ok(Self {
            subject_id,
            times,
            volumes,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Row {
    id: u32,
    time: f64,
    volume: f64,
}

fn parse_rows<R: Read>(reader: R) -> Result<Vec<Row>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["id", "time_days", "volume_mm3"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(DataError::Parse {
            line: 1,
            msg: format!(
                "expected header `id,time_days,volume_mm3`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(DataError::Parse {
                line,
                msg: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let field = |i: usize, name: &str| -> Result<f64, DataError> {
            record[i].parse::<f64>().map_err(|_| DataError::Parse {
                line,
                msg: format!("invalid {name} `{}`", &record[i]),
            })
        };
        let id = record[0].parse::<u32>().map_err(|_| DataError::Parse {
            line,
            msg: format!("invalid id `{}`", &record[0]),
        })?;
        rows.push(Row {
            id,
            time: field(1, "time_days")?,
            volume: field(2, "volume_mm3")?,
        });
    }
    Ok(rows)
}

fn series_from_rows(rows: &[Row], subject_id: u32) -> Result<TumorSeries, DataError> {
    let mut mine: Vec<Row> = rows.iter().copied().filter(|r| r.id == subject_id).collect();
    if mine.is_empty() {
        return Err(DataError::NotFound(subject_id));
    }
    mine.sort_by(|a, b| a.time.total_cmp(&b.time));
    if let Some(w) = mine.windows(2).find(|w| w[0].time == w[1].time) {
        return Err(DataError::DuplicateTime {
            subject: subject_id,
            time: w[0].time,
        });
    }
    TumorSeries::new(
        subject_id,
        mine.iter().map(|r| r.time).collect(),
        mine.iter().map(|r| r.volume).collect(),
    )
}

/// Reads one subject's rows from a measurement CSV, sorted by time.
pub fn load_series(path: impl AsRef<Path>, subject_id: u32) -> Result<TumorSeries, DataError> {
    let file = std::fs::File::open(path)?;
    read_series(file, subject_id)
}

pub fn read_series<R: Read>(reader: R, subject_id: u32) -> Result<TumorSeries, DataError> {
    let rows = parse_rows(reader)?;
    series_from_rows(&rows, subject_id)
}

/// Distinct subject ids present in a measurement CSV, ascending.
pub fn subject_ids(path: impl AsRef<Path>) -> Result<Vec<u32>, DataError> {
    let rows = parse_rows(std::fs::File::open(path)?)?;
    let mut ids: Vec<u32> = rows.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// Affine scalers between physical units and the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub t_min: f64,
    pub t_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl NormalizationMap {
    pub fn new(t_min: f64, t_max: f64, v_min: f64, v_max: f64) -> Result<Self, DataError> {
        if !(t_max > t_min) {
            return Err(DataError::Domain(format!("degenerate time range [{t_min}, {t_max}]")));
        }
        if !(v_max > v_min) {
            return Err(DataError::Domain(format!("degenerate volume range [{v_min}, {v_max}]")));
        }
        Ok(Self {
            t_min,
            t_max,
            v_min,
            v_max,
        })
    }

    /// Days spanned by the normalized unit interval.
    pub fn time_scale(&self) -> f64 {
        self.t_max - self.t_min
    }

    /// mm³ spanned by the normalized unit interval.
    pub fn volume_scale(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn normalize_t(&self, t: f64) -> f64 {
        (t - self.t_min) / self.time_scale()
    }

    pub fn denormalize_t(&self, tau: f64) -> f64 {
        self.t_min + tau * self.time_scale()
    }

    pub fn normalize_v(&self, v: f64) -> f64 {
        (v - self.v_min) / self.volume_scale()
    }

    pub fn denormalize_v(&self, v: f64) -> f64 {
        self.v_min + v * self.volume_scale()
    }

    /// Converts a normalized rate dv/dτ into mm³/day.
    pub fn denormalize_rate(&self, dv_dtau: f64) -> f64 {
        dv_dtau * self.volume_scale() / self.time_scale()
    }
}

/// Time span from first to last measurement, volume span from smallest to
/// largest measured volume.
pub fn make_norm_map(series: &TumorSeries) -> Result<NormalizationMap, DataError> {
    let t_min = series.times[0];
    let t_max = series.times[series.len() - 1];
    let v_min = series.volumes.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = series.volumes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    NormalizationMap::new(t_min, t_max, v_min, v_max)
}

/// Four-parameter logistic `V(τ) = A + B / (1 + exp(-k (τ - τ₀)))` over
/// normalized time, volumes in mm³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub tau0: f64,
    pub sse: f64,
}

impl SigmoidFit {
    pub fn eval(&self, tau: f64) -> f64 {
        logistic(&[self.a, self.b, self.k, self.tau0], tau)
    }
}

fn logistic(p: &[f64; 4], tau: f64) -> f64 {
    p[0] + p[1] / (1.0 + (-p[2] * (tau - p[3])).exp())
}

/// Partial derivatives of the logistic with respect to (A, B, k, τ₀).
fn logistic_jacobian_row(p: &[f64; 4], tau: f64) -> [f64; 4] {
    let s = 1.0 / (1.0 + (-p[2] * (tau - p[3])).exp());
    let ds = s * (1.0 - s);
    [1.0, s, p[1] * ds * (tau - p[3]), -p[1] * ds * p[2]]
}

pub const SIGMOID_MAX_ITER: usize = 200;
pub const SIGMOID_GRAD_TOL: f64 = 1e-10;

/// Levenberg-Marquardt least-squares fit of the logistic interpolant.
///
/// The gradient tolerance is applied to `‖Jᵀr‖∞` scaled by the volume range so
/// that it is unit-free. Starts from `A = min V`, `B = range V`, `k = 10`,
/// `τ₀ = 0.5`.
pub fn fit_sigmoid(series: &TumorSeries, map: &NormalizationMap) -> Result<SigmoidFit, FitError> {
    let taus: Vec<f64> = series.times.iter().map(|&t| map.normalize_t(t)).collect();
    fit_logistic(&taus, &series.volumes)
}

pub(crate) fn fit_logistic(taus: &[f64], vols: &[f64]) -> Result<SigmoidFit, FitError> {
    if taus.len() < TumorSeries::MIN_POINTS {
        return Err(FitError::Degenerate(format!(
            "{} points, need at least {}",
            taus.len(),
            TumorSeries::MIN_POINTS
        )));
    }
    let v_lo = vols.iter().copied().fold(f64::INFINITY, f64::min);
    let v_hi = vols.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = v_hi - v_lo;
    if !(range > 0.0) {
        return Err(FitError::Degenerate("constant volume".into()));
    }

    let sse_of = |p: &[f64; 4]| -> f64 { taus.iter().zip(vols).map(|(&t, &v)| (logistic(p, t) - v).powi(2)).sum() };

    let mut p = [v_lo, range, 10.0, 0.5];
    let mut sse = sse_of(&p);
    let mut mu = 1e-3;
    let grad_scale = range * range;

    let finish = |p: [f64; 4], sse: f64| -> Result<SigmoidFit, FitError> {
        let fit = SigmoidFit {
            a: p[0],
            b: p[1],
            k: p[2],
            tau0: p[3],
            sse,
        };
        if !(fit.b > 0.0 && fit.k > 0.0) {
            return Err(FitError::Invalid {
                reason: "amplitude and steepness must be positive".into(),
                fit,
            });
        }
        if !(0.0..=1.0).contains(&fit.tau0) {
            return Err(FitError::Invalid {
                reason: "midpoint outside the normalized time span".into(),
                fit,
            });
        }
        Ok(fit)
    };

    for _ in 0..SIGMOID_MAX_ITER {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&t, &v) in taus.iter().zip(vols) {
            let r = logistic(&p, t) - v;
            let row = logistic_jacobian_row(&p, t);
            for i in 0..4 {
                jtr[i] += row[i] * r;
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let gnorm = jtr.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= SIGMOID_GRAD_TOL * grad_scale || sse == 0.0 {
            return finish(p, sse);
        }

        // Damping loop: grow mu until the step reduces the residual.
        let mut improved = false;
        for _ in 0..60 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += mu * jtj[i][i].max(1e-300);
            }
            let rhs = jtr.map(|g| -g);
            let Some(step) = linalg::solve4(a, rhs) else {
                mu *= 10.0;
                continue;
            };
            let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let cand_sse = sse_of(&cand);
            if cand_sse.is_finite() && cand_sse <= sse {
                let stalled = step.iter().zip(&p).all(|(s, x)| s.abs() <= 1e-15 * (1.0 + x.abs()));
                p = cand;
                sse = cand_sse;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if stalled {
                    return finish(p, sse);
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            // No descent direction left at machine precision.
            return finish(p, sse);
        }
    }
    Err(FitError::NotConverged {
        iterations: SIGMOID_MAX_ITER,
        best: SigmoidFit {
            a: p[0],
            b: p[1],
            k: p[2],
            tau0: p[3],
            sse,
        },
    })
}

/// `n` points uniform in τ ∈ [0, 1] as `(τ, V)` with V in mm³.
pub fn sample_interpolant(fit: &SigmoidFit, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let tau = i as f64 / (n - 1) as f64;
            (tau, fit.eval(tau))
        })
        .collect()
}

/// Writes interpolant samples as `tau,time_days,volume_mm3`.
pub fn write_interpolant_csv<W: Write>(
    writer: W,
    samples: &[(f64, f64)],
    map: &NormalizationMap,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tau", "time_days", "volume_mm3"])?;
    for &(tau, v) in samples {
        w.write_record([tau.to_string(), map.denormalize_t(tau).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

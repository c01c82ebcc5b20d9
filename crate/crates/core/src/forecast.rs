//! Train on a leading fraction of a normalized series and extrapolate the rest.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{loss, solve, train, DynamicsModel, ModelError, ModelKind, TrainConfig, TrainError, TrainReport};
use crate::odeint::Trajectory;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.9, 0.8, 0.7];

/// Points within this distance above the split are still training points.
const SPLIT_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self, ForecastError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(ForecastError::Domain(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        Ok(Self { train_fraction })
    }

    /// `"90-10"` style label.
    pub fn label(&self) -> String {
        let pct = (self.train_fraction * 100.0).round() as i64;
        format!("{pct}-{}", 100 - pct)
    }
}

/// Normalized `(τ, v)` points.
pub type Points = Vec<(f64, f64)>;

/// Points with `τ ≤ train_fraction` and the rest. Both must be non-empty.
pub fn split(data: &[(f64, f64)], spec: SplitSpec) -> Result<(Points, Points), ForecastError> {
    SplitSpec::new(spec.train_fraction)?;
    if data.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(ForecastError::Domain("data must be sorted by τ".into()));
    }
    let cut = data.partition_point(|&(t, _)| t <= spec.train_fraction + SPLIT_SLACK);
    if cut == 0 || cut == data.len() {
        return Err(ForecastError::Domain(format!(
            "fraction {} leaves an empty partition ({cut} of {} points in train)",
            spec.train_fraction,
            data.len()
        )));
    }
    Ok((data[..cut].to_vec(), data[cut..].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub model: DynamicsModel,
    pub train_loss: f64,
    /// Normalized MSE over the held-out points.
    pub test_mse: f64,
    /// One continuous solve from the first data point to `τ = 1`.
    pub trajectory: Trajectory,
    pub split_tau: f64,
    pub report: TrainReport,
}

impl ForecastResult {
    /// Writes `tau,v_true,v_pred,is_test` for every data point.
    pub fn write_csv<W: Write>(&self, writer: W, data: &[(f64, f64)]) -> Result<(), ForecastError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| ForecastError::Domain(e.to_string());
        w.write_record(["tau", "v_true", "v_pred", "is_test"]).map_err(io)?;
        for &(t, v) in data {
            let pred = self.trajectory.eval_at(t).map_err(ModelError::from)?;
            let is_test = t > self.split_tau + SPLIT_SLACK;
            w.write_record([
                t.to_string(),
                v.to_string(),
                pred.to_string(),
                u8::from(is_test).to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| ForecastError::Domain(e.to_string()))?;
        Ok(())
    }
}

/// Trains on the leading partition and solves the trained model over the
/// whole span from the shared initial point.
pub fn forecast(
    kind: &ModelKind,
    data: &[(f64, f64)],
    spec: SplitSpec,
    config: &TrainConfig,
) -> Result<ForecastResult, ForecastError> {
    let (train_set, test_set) = split(data, spec)?;
    let (model, report) = train(kind, &train_set, config)?;
    let (t0, v0) = data[0];
    let t1 = data[data.len() - 1].0;
    let trajectory = solve(&model, v0, t0, t1, config.steps_for(t1 - t0))?;
    let mut sse = 0.0;
    for &(t, v) in &test_set {
        sse += (trajectory.eval_at(t).map_err(ModelError::from)? - v).powi(2);
    }
    let train_loss = loss(&model, &train_set, config)?;
    Ok(ForecastResult {
        model,
        train_loss,
        test_mse: sse / test_set.len() as f64,
        trajectory,
        split_tau: spec.train_fraction,
        report,
    })
}

/// One row of a forecast suite. `error` is set, and the losses are NaN, when
/// the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub variant: String,
    pub fraction: f64,
    pub train_loss: f64,
    pub test_mse: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCell {
    pub row: SuiteRow,
    pub result: Option<ForecastResult>,
}

/// Every `(variant, fraction)` pair, sorted by variant tag then fraction.
/// A failing cell is recorded and the suite carries on.
pub fn forecast_suite(data: &[(f64, f64)], variants: &[(ModelKind, TrainConfig)], fractions: &[f64]) -> Vec<SuiteCell> {
    let mut cells = Vec::with_capacity(variants.len() * fractions.len());
    for (kind, config) in variants {
        for &fraction in fractions {
            let outcome = SplitSpec::new(fraction).and_then(|spec| forecast(kind, data, spec, config));
            let cell = match outcome {
                Ok(res) => SuiteCell {
                    row: SuiteRow {
                        variant: kind.tag().into(),
                        fraction,
                        train_loss: res.train_loss,
                        test_mse: res.test_mse,
                        error: None,
                    },
                    result: Some(res),
                },
                Err(e) => SuiteCell {
                    row: SuiteRow {
                        variant: kind.tag().into(),
                        fraction,
                        train_loss: f64::NAN,
                        test_mse: f64::NAN,
                        error: Some(e.to_string()),
                    },
                    result: None,
                },
            };
            cells.push(cell);
        }
    }
    cells.sort_by(|a, b| {
        a.row
            .variant
            .cmp(&b.row.variant)
            .then(a.row.fraction.total_cmp(&b.row.fraction))
    });
    cells
}

/// Writes `subject,variant,fraction,train_loss,test_mse`.
pub fn write_suite_csv<W: Write>(writer: W, subject: u32, rows: &[SuiteRow], write_header: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if write_header {
        w.write_record(["subject", "variant", "fraction", "train_loss", "test_mse"])?;
    }
    for r in rows {
        w.write_record([
            subject.to_string(),
            r.variant.clone(),
            r.fraction.to_string(),
            r.train_loss.to_string(),
            r.test_mse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

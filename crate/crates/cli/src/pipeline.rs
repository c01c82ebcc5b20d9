//! Per-subject pipeline stages and the multi-subject driver.
//!
//! Layout of one subject directory (`<output_dir>/subject_<id>/`):
//!
//! ```text
//! measurements.csv            time_days,volume_mm3
//! interpolant.csv / .svg      tau,time_days,volume_mm3
//! gompertz_trajectory.csv     tau,time_days,model_mm3,interpolant_mm3
//! gompertz.svg
//! {node,ude}_trajectory.csv   same columns as the Gompertz trajectory
//! {node,ude}.svg
//! {node,ude}_loss.csv         epoch,loss
//! {node,ude}_checkpoint.json
//! forecast_suite.csv          subject,variant,fraction,train_loss,test_mse
//! forecast_{variant}_{split}.csv / .svg   tau,v_true,v_pred,is_test
//! recovery_{node,ude}.csv     basis_index,coefficient
//! summary.json
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tumorgrowth::dataio::{
    fit_sigmoid, load_series, make_norm_map, sample_interpolant, subject_ids, write_interpolant_csv, NormalizationMap,
    SigmoidFit, TumorSeries,
};
use tumorgrowth::forecast::{forecast_suite, write_suite_csv, SplitSpec, SuiteRow};
use tumorgrowth::models::{solve, train, DynamicsModel, ModelKind, TrainReport};
use tumorgrowth::neuralnet::{read_checkpoint, write_checkpoint};
use tumorgrowth::odeint::{GompertzParams, Trajectory};
use tumorgrowth::symrec::{
    build_design_matrix, default_lambda, format_expression, sample_physical_derivatives, sparse_regress, BasisSet,
    SparseFit,
};

use crate::config::RunConfig;
use crate::svg::{emit_plot, PlotStyle, Series};
use crate::CliError;

/// Dense grid used for interpolant plots.
const PLOT_POINTS: usize = 201;

pub const TRAINED_VARIANTS: [&str; 2] = ["node", "ude"];

fn stage_err(stage: &'static str) -> impl Fn(String) -> CliError {
    move |message| CliError::Stage { stage, message }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Data shared by every stage of one subject.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub series: TumorSeries,
    pub map: NormalizationMap,
    pub fit: SigmoidFit,
    /// Normalized `(τ, v)` collocation points.
    pub collocation: Vec<(f64, f64)>,
    pub capacity: f64,
}

impl SubjectData {
    pub fn v0(&self) -> f64 {
        self.collocation[0].1
    }
}

pub fn subject_dir(config: &RunConfig, subject: u32) -> PathBuf {
    config.output_dir.join(format!("subject_{subject}"))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Fails with [`CliError::NotFound`] unless every configured subject is in
/// the data file.
pub fn check_subjects(config: &RunConfig, subjects: &[u32]) -> Result<(), CliError> {
    let ids = subject_ids(&config.data_path).map_err(|e| io_err(&config.data_path, e))?;
    for s in subjects {
        if !ids.contains(s) {
            return Err(CliError::NotFound(*s));
        }
    }
    Ok(())
}

/// Loads, normalizes and interpolates one subject.
pub fn prepare(config: &RunConfig, subject: u32) -> Result<SubjectData, CliError> {
    let err = stage_err("interpolate");
    let series = load_series(&config.data_path, subject).map_err(|e| match e {
        tumorgrowth::dataio::DataError::NotFound(id) => CliError::NotFound(id),
        other => err(other.to_string()),
    })?;
    let map = make_norm_map(&series).map_err(|e| err(e.to_string()))?;
    let fit = fit_sigmoid(&series, &map).map_err(|e| err(e.to_string()))?;
    let collocation: Vec<(f64, f64)> = sample_interpolant(&fit, config.n_collocation)
        .into_iter()
        .map(|(t, v)| (t, map.normalize_v(v)))
        .collect();
    if !(collocation[0].1 > 0.0) {
        return Err(err(format!(
            "normalized interpolant starts at {} (must be positive for the growth models)",
            collocation[0].1
        )));
    }
    Ok(SubjectData {
        series,
        map,
        fit,
        collocation,
        capacity: config.capacity_for(subject),
    })
}

/// Writes measurements and the interpolant (CSV and plot).
pub fn write_interpolation(dir: &Path, data: &SubjectData) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let path = dir.join("measurements.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["time_days", "volume_mm3"])
        .map_err(|e| io_err(&path, e))?;
    for (t, v) in data.series.times.iter().zip(&data.series.volumes) {
        w.write_record([t.to_string(), v.to_string()])
            .map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let dense = sample_interpolant(&data.fit, PLOT_POINTS);
    let path = dir.join("interpolant.csv");
    write_interpolant_csv(create(&path)?, &dense, &data.map).map_err(|e| io_err(&path, e))?;
    let series = Series {
        x: dense.iter().map(|&(t, _)| data.map.denormalize_t(t)).collect(),
        columns: vec![("sigmoid interpolant".into(), dense.iter().map(|&(_, v)| v).collect())],
    };
    plot(
        &dir.join("interpolant.svg"),
        &series,
        format!("Subject {}: sigmoid interpolation", data.series.subject_id),
        None,
    )
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn plot(path: &Path, series: &Series, title: String, marker_x: Option<f64>) -> Result<(), CliError> {
    let style = PlotStyle {
        title,
        x_label: "time (days)".into(),
        y_label: "tumor volume (mm³)".into(),
        marker_x,
    };
    write_text(path, &emit_plot(series, &style)?)
}

/// Writes `tau,time_days,model_mm3,interpolant_mm3` on the trajectory nodes,
/// where `physical` says whether trajectory times and states are already in
/// days and mm³.
fn write_trajectory(
    dir: &Path,
    name: &str,
    label: &str,
    data: &SubjectData,
    tr: &Trajectory,
    physical: bool,
) -> Result<(), CliError> {
    let map = &data.map;
    let rows: Vec<(f64, f64, f64, f64)> = tr
        .times
        .iter()
        .zip(&tr.states)
        .map(|(&t, &s)| {
            let (tau, v) = if physical {
                (map.normalize_t(t), s)
            } else {
                (t, map.denormalize_v(s))
            };
            (tau, map.denormalize_t(tau), v, data.fit.eval(tau))
        })
        .collect();
    let path = dir.join(format!("{name}_trajectory.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record(["tau", "time_days", "model_mm3", "interpolant_mm3"])
        .map_err(|e| io_err(&path, e))?;
    for r in &rows {
        w.write_record([r.0.to_string(), r.1.to_string(), r.2.to_string(), r.3.to_string()])
            .map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    let series = Series {
        x: rows.iter().map(|r| r.1).collect(),
        columns: vec![
            (label.into(), rows.iter().map(|r| r.2).collect()),
            ("sigmoid interpolant".into(), rows.iter().map(|r| r.3).collect()),
        ],
    };
    plot(
        &dir.join(format!("{name}.svg")),
        &series,
        format!("Subject {}: {label} vs interpolated data", data.series.subject_id),
        None,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GompertzSummary {
    pub a_per_day: f64,
    pub capacity: f64,
    pub v0_mm3: f64,
    /// MSE against the interpolant on the trajectory nodes, mm³².
    pub mse_vs_interpolant: f64,
}

/// Fixed-parameter Gompertz baseline over the measured span in physical
/// units, started from the interpolant at the first measurement.
pub fn run_gompertz(config: &RunConfig, dir: &Path, data: &SubjectData) -> Result<GompertzSummary, CliError> {
    let err = stage_err("gompertz");
    let g = &config.gompertz;
    let params = GompertzParams::new(g.a, g.capacity).map_err(|e| err(e.to_string()))?;
    let model = DynamicsModel::Gompertz(params);
    let v0 = data.fit.eval(0.0);
    let tr = solve(&model, v0, data.map.t_min, data.map.t_max, g.steps).map_err(|e| err(e.to_string()))?;
    ensure_dir(dir)?;
    write_trajectory(dir, "gompertz", "Gompertz", data, &tr, true)?;
    let mse = tr
        .times
        .iter()
        .zip(&tr.states)
        .map(|(&t, &s)| (s - data.fit.eval(data.map.normalize_t(t))).powi(2))
        .sum::<f64>()
        / tr.len() as f64;
    Ok(GompertzSummary {
        a_per_day: g.a,
        capacity: g.capacity,
        v0_mm3: v0,
        mse_vs_interpolant: mse,
    })
}

pub fn model_kind(config: &RunConfig, variant: &str) -> Result<ModelKind, CliError> {
    let hidden = config.net_config(variant)?.hidden.clone();
    Ok(match variant {
        "node" => ModelKind::NeuralOde { hidden },
        _ => ModelKind::Ude { hidden },
    })
}

fn label(variant: &str) -> &'static str {
    match variant {
        "node" => "Neural ODE",
        _ => "UDE",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Losses rescaled to mm³².
    pub initial_loss_mm3: f64,
    pub final_loss_mm3: f64,
    pub epochs: usize,
    pub wall_time_secs: f64,
}

impl TrainSummary {
    fn new(report: &TrainReport, map: &NormalizationMap) -> Self {
        let (initial_loss_mm3, final_loss_mm3) = report.physical_losses(map.volume_scale());
        Self {
            initial_loss: report.initial_loss,
            final_loss: report.final_loss,
            initial_loss_mm3,
            final_loss_mm3,
            epochs: report.loss_history.len(),
            wall_time_secs: report.wall_time_secs,
        }
    }
}

/// Trains one neural variant on the full collocation set and writes its loss
/// history, checkpoint, trajectory and plot.
pub fn run_training(
    config: &RunConfig,
    dir: &Path,
    data: &SubjectData,
    variant: &str,
) -> Result<(DynamicsModel, TrainSummary), CliError> {
    let err = stage_err(if variant == "node" { "train-node" } else { "train-ude" });
    let kind = model_kind(config, variant)?;
    let tc = config.train_config(variant)?;
    let (model, report) = train(&kind, &data.collocation, &tc).map_err(|e| err(e.to_string()))?;
    ensure_dir(dir)?;
    let path = dir.join(format!("{variant}_loss.csv"));
    report.write_csv(create(&path)?).map_err(|e| io_err(&path, e))?;
    let ckpt = model.to_checkpoint(config.seed).expect("neural variant");
    let path = checkpoint_path(dir, variant);
    write_checkpoint(create(&path)?, &ckpt).map_err(|e| io_err(&path, e))?;
    let tr = solve(&model, data.v0(), 0.0, 1.0, tc.steps_for(1.0)).map_err(|e| err(e.to_string()))?;
    write_trajectory(dir, variant, label(variant), data, &tr, false)?;
    Ok((model, TrainSummary::new(&report, &data.map)))
}

pub fn checkpoint_path(dir: &Path, variant: &str) -> PathBuf {
    dir.join(format!("{variant}_checkpoint.json"))
}

pub fn load_model(dir: &Path, variant: &str) -> Result<Option<DynamicsModel>, CliError> {
    let path = checkpoint_path(dir, variant);
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let ckpt = read_checkpoint(std::io::BufReader::new(file)).map_err(|e| io_err(&path, e))?;
    let model = DynamicsModel::from_checkpoint(&ckpt).map_err(|e| io_err(&path, e))?;
    if model.tag() != variant {
        return Err(io_err(&path, format!("holds a `{}` model", model.tag())));
    }
    Ok(Some(model))
}

/// Forecast suite over the configured variants and fractions.
pub fn run_forecasts(config: &RunConfig, dir: &Path, data: &SubjectData) -> Result<Vec<SuiteRow>, CliError> {
    let err = stage_err("forecast");
    let mut variants = Vec::new();
    for v in &config.forecast.variants {
        variants.push((model_kind(config, v)?, config.train_config(v)?));
    }
    let cells = forecast_suite(&data.collocation, &variants, &config.forecast.fractions);
    ensure_dir(dir)?;
    let rows: Vec<SuiteRow> = cells.iter().map(|c| c.row.clone()).collect();
    let path = dir.join("forecast_suite.csv");
    write_suite_csv(create(&path)?, data.series.subject_id, &rows, true).map_err(|e| io_err(&path, e))?;
    for cell in &cells {
        let Some(res) = &cell.result else { continue };
        let split = SplitSpec::new(cell.row.fraction)
            .map_err(|e| err(e.to_string()))?
            .label();
        let stem = format!("forecast_{}_{split}", cell.row.variant);
        let path = dir.join(format!("{stem}.csv"));
        res.write_csv(create(&path)?, &data.collocation)
            .map_err(|e| err(e.to_string()))?;
        let map = &data.map;
        let series = Series {
            x: res.trajectory.times.iter().map(|&t| map.denormalize_t(t)).collect(),
            columns: vec![
                (
                    format!("{} forecast", label(&cell.row.variant)),
                    res.trajectory.states.iter().map(|&v| map.denormalize_v(v)).collect(),
                ),
                (
                    "sigmoid interpolant".into(),
                    res.trajectory.times.iter().map(|&t| data.fit.eval(t)).collect(),
                ),
            ],
        };
        plot(
            &dir.join(format!("{stem}.svg")),
            &series,
            format!(
                "Subject {}: {} forecast, {split} split",
                data.series.subject_id,
                label(&cell.row.variant)
            ),
            Some(map.denormalize_t(res.split_tau)),
        )?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverySummary {
    pub capacity: f64,
    pub beta: [f64; 4],
    pub active_set: Vec<usize>,
    pub residual_norm: f64,
    pub lambda: f64,
    pub expression: String,
}

/// Sparse recovery of `model`'s dynamics in physical units.
pub fn recover_fit(
    config: &RunConfig,
    data: &SubjectData,
    model: &DynamicsModel,
) -> Result<(SparseFit, BasisSet), CliError> {
    let err = stage_err("recover");
    let basis = BasisSet::new(data.capacity).map_err(|e| err(e.to_string()))?;
    let samples = sample_physical_derivatives(
        model,
        &data.map,
        data.v0(),
        config.symrec.n_samples,
        config
            .train_config(model.tag())
            .map(|c| c.steps_for(1.0))
            .unwrap_or(config.solver_steps),
    )
    .map_err(|e| err(e.to_string()))?;
    let (phi, y) = build_design_matrix(&samples, &basis).map_err(|e| err(e.to_string()))?;
    let lambda = config
        .symrec
        .lambda
        .unwrap_or_else(|| default_lambda(&phi, &y, config.symrec.lambda_ratio));
    let fit = sparse_regress(&phi, &y, Some(lambda)).map_err(|e| err(e.to_string()))?;
    Ok((fit, basis))
}

pub fn run_recovery(
    config: &RunConfig,
    dir: &Path,
    data: &SubjectData,
    variant: &str,
    model: &DynamicsModel,
) -> Result<RecoverySummary, CliError> {
    let (fit, basis) = recover_fit(config, data, model)?;
    ensure_dir(dir)?;
    let path = dir.join(format!("recovery_{variant}.csv"));
    fit.write_csv(create(&path)?).map_err(|e| io_err(&path, e))?;
    Ok(RecoverySummary {
        capacity: basis.capacity,
        beta: fit.beta,
        active_set: fit.active_set.clone(),
        residual_norm: fit.residual_norm,
        lambda: fit.lambda,
        expression: format_expression(&fit, &basis, config.symrec.sig_figs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectReport {
    pub subject: u32,
    pub capacity: f64,
    pub normalization: NormalizationMap,
    pub sigmoid: SigmoidFit,
    pub v0_normalized: f64,
    pub gompertz: Option<GompertzSummary>,
    pub node: Option<TrainSummary>,
    pub ude: Option<TrainSummary>,
    pub forecasts: Vec<SuiteRow>,
    pub recovery_node: Option<RecoverySummary>,
    pub recovery_ude: Option<RecoverySummary>,
    pub errors: Vec<StageError>,
}

fn record<T>(errors: &mut Vec<StageError>, r: Result<T, CliError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(StageError {
                stage: e.stage().to_string(),
                message: e.to_string(),
            });
            None
        }
    }
}

/// All stages for one subject. Interpolation failures abort the subject; any
/// later stage failure is recorded in the report and independent stages
/// still run.
pub fn run_subject(config: &RunConfig, subject: u32) -> Result<SubjectReport, CliError> {
    config.validate()?;
    check_subjects(config, &[subject])?;
    let data = prepare(config, subject)?;
    let dir = subject_dir(config, subject);
    write_interpolation(&dir, &data)?;

    let mut errors = Vec::new();
    let gompertz = record(&mut errors, run_gompertz(config, &dir, &data));
    let node = record(&mut errors, run_training(config, &dir, &data, "node"));
    let ude = record(&mut errors, run_training(config, &dir, &data, "ude"));
    let forecasts = record(&mut errors, run_forecasts(config, &dir, &data)).unwrap_or_default();
    for row in &forecasts {
        if let Some(e) = &row.error {
            errors.push(StageError {
                stage: "forecast".into(),
                message: format!("{} {}: {e}", row.variant, row.fraction),
            });
        }
    }
    let recovery_node = node
        .as_ref()
        .and_then(|(m, _)| record(&mut errors, run_recovery(config, &dir, &data, "node", m)));
    let recovery_ude = ude
        .as_ref()
        .and_then(|(m, _)| record(&mut errors, run_recovery(config, &dir, &data, "ude", m)));

    let report = SubjectReport {
        subject,
        capacity: data.capacity,
        normalization: data.map,
        sigmoid: data.fit,
        v0_normalized: data.v0(),
        gompertz,
        node: node.map(|n| n.1),
        ude: ude.map(|u| u.1),
        forecasts,
        recovery_node,
        recovery_ude,
        errors,
    };
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| io_err(&path, e))?;
    write_text(&path, &(json + "\n"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAllOutcome {
    pub reports: Vec<SubjectReport>,
    /// Subjects whose pipeline failed before producing a report.
    pub failures: Vec<(u32, String)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs every configured subject and writes `results_table.csv`,
/// `forecast_summary.csv` and `forecast_suite.csv` in the output directory.
pub fn run_all(config: &RunConfig) -> Result<RunAllOutcome, CliError> {
    config.validate()?;
    check_subjects(config, &config.subjects)?;
    ensure_dir(&config.output_dir)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &s in &config.subjects {
        match run_subject(config, s) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push((s, e.to_string())),
        }
    }

    let path = config.output_dir.join("results_table.csv");
    let mut w = csv_writer(&path)?;
    let e = |err| io_err(&path, err);
    w.write_record([
        "subject",
        "capacity",
        "node_loss",
        "ude_loss",
        "node_expression",
        "ude_expression",
    ])
    .map_err(e)?;
    for &s in &config.subjects {
        let r = reports.iter().find(|r| r.subject == s);
        let expr = |rec: Option<&RecoverySummary>| rec.map(|x| x.expression.clone()).unwrap_or_default();
        w.write_record([
            s.to_string(),
            config.capacity_for(s).to_string(),
            fmt_opt(r.and_then(|r| r.node.as_ref()).map(|n| n.final_loss)),
            fmt_opt(r.and_then(|r| r.ude.as_ref()).map(|n| n.final_loss)),
            expr(r.and_then(|r| r.recovery_node.as_ref())),
            expr(r.and_then(|r| r.recovery_ude.as_ref())),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|err| io_err(&path, err))?;

    let mut variants = config.forecast.variants.clone();
    variants.sort();
    let mut fractions = config.forecast.fractions.clone();
    fractions.sort_by(|a, b| b.total_cmp(a));
    let path = config.output_dir.join("forecast_summary.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["subject".to_string(), "capacity".to_string()];
    for v in &variants {
        for f in &fractions {
            let split = SplitSpec::new(*f).map(|s| s.label()).unwrap_or_default();
            header.push(format!("{v}_{}", split.replace('-', "_")));
        }
    }
    w.write_record(&header).map_err(|err| io_err(&path, err))?;
    for &s in &config.subjects {
        let r = reports.iter().find(|r| r.subject == s);
        let mut row = vec![s.to_string(), config.capacity_for(s).to_string()];
        for v in &variants {
            for f in &fractions {
                let cell = r.and_then(|r| r.forecasts.iter().find(|x| &x.variant == v && x.fraction == *f));
                row.push(fmt_opt(cell.filter(|c| c.error.is_none()).map(|c| c.test_mse)));
            }
        }
        w.write_record(&row).map_err(|err| io_err(&path, err))?;
    }
    w.flush().map_err(|err| io_err(&path, err))?;

    let path = config.output_dir.join("forecast_suite.csv");
    let mut file = create(&path)?;
    write_suite_csv(&mut file, 0, &[], true).map_err(|err| io_err(&path, err))?;
    for r in &reports {
        write_suite_csv(&mut file, r.subject, &r.forecasts, false).map_err(|err| io_err(&path, err))?;
    }
    drop(file);

    Ok(RunAllOutcome { reports, failures })
}

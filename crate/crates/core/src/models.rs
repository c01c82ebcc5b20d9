//! The three dynamics models and their full-batch training.
//!
//! All models act on a scalar state `v` (normalized volume unless stated
//! otherwise) and normalized time `τ`:
//!
//! * Gompertz: `dv/dτ = a·v·ln(K/v)`
//! * Neural ODE: `dv/dτ = f_θ(v)`
//! * UDE: `dv/dτ = NN₁(v)·v·NN₂(v)`
//!
//! Networks see `v` only unless they were built with an input width of 2, in
//! which case they see `[v, τ]`.
//!
//! Training minimises the mean squared error between the RK4 solution started
//! at the first collocation point and every collocation point, with gradients
//! taken through the unrolled solver.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::{
    forward_slice, forward_tape, init_params_with, rk4_unrolled, seeded_rng, value_and_grad, AdamState, GradError,
    MlpArch, MlpParams, NetCheckpoint, NetError, Tape, Var,
};
use crate::odeint::{integrate_rk4, locate, step_grid, GompertzParams, OdeError, Trajectory, STATE_FLOOR};

pub const NODE_HIDDEN: [usize; 4] = [128, 128, 64, 64];
pub const UDE_HIDDEN: [usize; 2] = [10, 10];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}: {reason}")]
    NonFinite {
        epoch: usize,
        reason: String,
        history: Vec<f64>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which model to build and train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Trains `(a, K)` starting from `init`.
    Gompertz {
        init: GompertzParams,
    },
    NeuralOde {
        hidden: Vec<usize>,
    },
    Ude {
        hidden: Vec<usize>,
    },
}

impl ModelKind {
    pub fn neural_ode() -> Self {
        ModelKind::NeuralOde {
            hidden: NODE_HIDDEN.to_vec(),
        }
    }

    pub fn ude() -> Self {
        ModelKind::Ude {
            hidden: UDE_HIDDEN.to_vec(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Gompertz { .. } => "gompertz",
            ModelKind::NeuralOde { .. } => "node",
            ModelKind::Ude { .. } => "ude",
        }
    }
}

/// A trained (or hand-built) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DynamicsModel {
    Gompertz(GompertzParams),
    NeuralOde(MlpParams),
    Ude { nn1: MlpParams, nn2: MlpParams },
}

fn net_input(net: &MlpParams, v: f64, tau: f64) -> f64 {
    let out = if net.arch.input_width() == 2 {
        forward_slice(&net.arch, &net.theta, &[v, tau])
    } else {
        forward_slice(&net.arch, &net.theta, &[v])
    };
    out.expect("model networks are validated on construction")[0]
}

fn check_scalar_net(net: &MlpParams) -> Result<(), ModelError> {
    let arch = &net.arch;
    if !matches!(arch.input_width(), 1 | 2) || arch.output_width() != 1 {
        return Err(ModelError::Domain(format!(
            "dynamics networks map [v] or [v, τ] to a scalar, got widths {:?}",
            arch.widths()
        )));
    }
    Ok(())
}

impl DynamicsModel {
    pub fn neural_ode(net: MlpParams) -> Result<Self, ModelError> {
        check_scalar_net(&net)?;
        Ok(DynamicsModel::NeuralOde(net))
    }

    pub fn ude(nn1: MlpParams, nn2: MlpParams) -> Result<Self, ModelError> {
        check_scalar_net(&nn1)?;
        check_scalar_net(&nn2)?;
        Ok(DynamicsModel::Ude { nn1, nn2 })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            DynamicsModel::Gompertz(_) => "gompertz",
            DynamicsModel::NeuralOde(_) => "node",
            DynamicsModel::Ude { .. } => "ude",
        }
    }

    /// `dv/dτ`, with the Gompertz state clamped to [`STATE_FLOOR`].
    pub fn rhs(&self, v: f64, tau: f64) -> f64 {
        self.rhs_counted(v, tau, &Cell::new(0))
    }

    /// As [`Self::rhs`], counting Gompertz clamp events in `clamps`.
    pub fn rhs_counted(&self, v: f64, tau: f64, clamps: &Cell<u64>) -> f64 {
        match self {
            DynamicsModel::Gompertz(p) => p.rhs_clamped(v, clamps),
            DynamicsModel::NeuralOde(net) => net_input(net, v, tau),
            DynamicsModel::Ude { nn1, nn2 } => net_input(nn1, v, tau) * v * net_input(nn2, v, tau),
        }
    }

    /// `dv/dτ` without clamping; a non-positive Gompertz state is an error.
    pub fn rhs_checked(&self, v: f64, tau: f64) -> Result<f64, ModelError> {
        if !v.is_finite() {
            return Err(ModelError::Domain(format!("state {v} is not finite")));
        }
        match self {
            DynamicsModel::Gompertz(p) => Ok(crate::odeint::gompertz_rhs(v, p)?),
            _ => Ok(self.rhs(v, tau)),
        }
    }

    /// Flat trainable parameters.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            DynamicsModel::Gompertz(p) => vec![p.a, p.capacity],
            DynamicsModel::NeuralOde(net) => net.theta.clone(),
            DynamicsModel::Ude { nn1, nn2 } => {
                let mut t = nn1.theta.clone();
                t.extend_from_slice(&nn2.theta);
                t
            }
        }
    }

    /// Same structure with parameters replaced by `theta`.
    pub fn with_params(&self, theta: &[f64]) -> Self {
        assert_eq!(theta.len(), self.flatten().len(), "parameter length");
        match self {
            DynamicsModel::Gompertz(_) => DynamicsModel::Gompertz(GompertzParams {
                a: theta[0],
                capacity: theta[1],
            }),
            DynamicsModel::NeuralOde(net) => DynamicsModel::NeuralOde(MlpParams {
                arch: net.arch.clone(),
                theta: theta.to_vec(),
            }),
            DynamicsModel::Ude { nn1, nn2 } => {
                let n1 = nn1.theta.len();
                DynamicsModel::Ude {
                    nn1: MlpParams {
                        arch: nn1.arch.clone(),
                        theta: theta[..n1].to_vec(),
                    },
                    nn2: MlpParams {
                        arch: nn2.arch.clone(),
                        theta: theta[n1..].to_vec(),
                    },
                }
            }
        }
    }

    /// Records `dv/dτ` on `tape` with parameters read from `theta`.
    pub fn rhs_tape(&self, tape: &mut Tape, theta: Var, tau: f64, v: Var) -> Var {
        let input = |tape: &mut Tape, net: &MlpParams| {
            if net.arch.input_width() == 2 {
                let t = tape.constant(tau);
                tape.concat(&[v, t])
            } else {
                v
            }
        };
        match self {
            DynamicsModel::Gompertz(_) => {
                let a = tape.slice(theta, 0, 1);
                let k = tape.slice(theta, 1, 1);
                let ln_k = tape.ln_clamped(k, STATE_FLOOR);
                let ln_v = tape.ln_clamped(v, STATE_FLOOR);
                let log_ratio = tape.sub(ln_k, ln_v);
                let av = tape.mul(a, v);
                tape.mul(av, log_ratio)
            }
            DynamicsModel::NeuralOde(net) => {
                let x = input(tape, net);
                forward_tape(&net.arch, tape, theta, 0, x)
            }
            DynamicsModel::Ude { nn1, nn2 } => {
                let x1 = input(tape, nn1);
                let g1 = forward_tape(&nn1.arch, tape, theta, 0, x1);
                let x2 = input(tape, nn2);
                let g2 = forward_tape(&nn2.arch, tape, theta, nn1.theta.len(), x2);
                let gv = tape.mul(g1, v);
                tape.mul(gv, g2)
            }
        }
    }

    /// Neural variants as a parameter checkpoint; `None` for Gompertz.
    pub fn to_checkpoint(&self, seed: u64) -> Option<NetCheckpoint> {
        match self {
            DynamicsModel::Gompertz(_) => None,
            DynamicsModel::NeuralOde(net) => Some(NetCheckpoint::new("node", seed, &[("f", net)])),
            DynamicsModel::Ude { nn1, nn2 } => Some(NetCheckpoint::new("ude", seed, &[("nn1", nn1), ("nn2", nn2)])),
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<Self, ModelError> {
        let get = |name: &str| -> Result<MlpParams, ModelError> {
            ckpt.network(name)
                .map_err(|e| ModelError::Domain(e.to_string()))?
                .ok_or_else(|| ModelError::Domain(format!("checkpoint has no network `{name}`")))
        };
        match ckpt.variant.as_str() {
            "node" => Self::neural_ode(get("f")?),
            "ude" => Self::ude(get("nn1")?, get("nn2")?),
            other => Err(ModelError::Domain(format!("unknown checkpoint variant `{other}`"))),
        }
    }
}

/// One optimizer stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sequential `(learning rate, epochs)` stages; Adam moments restart at
    /// every stage.
    pub schedule: Vec<Stage>,
    pub seed: u64,
    /// Interpolant samples used as training targets.
    pub n_collocation: usize,
    /// RK4 steps per unit of normalized time.
    pub solver_steps: usize,
    /// Feed `τ` to the networks in addition to `v`.
    #[serde(default)]
    pub time_input: bool,
}

impl TrainConfig {
    pub fn neural_ode() -> Self {
        Self {
            schedule: vec![Stage {
                learning_rate: 0.01,
                epochs: 500,
            }],
            seed: 123,
            n_collocation: 21,
            solver_steps: 100,
            time_input: false,
        }
    }

    pub fn ude() -> Self {
        Self {
            schedule: vec![
                Stage {
                    learning_rate: 0.01,
                    epochs: 1000,
                },
                Stage {
                    learning_rate: 0.005,
                    epochs: 1000,
                },
                Stage {
                    learning_rate: 0.001,
                    epochs: 500,
                },
            ],
            ..Self::neural_ode()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.schedule.is_empty() {
            return Err(TrainError::Config("empty schedule".into()));
        }
        for s in &self.schedule {
            if s.epochs == 0 {
                return Err(TrainError::Config("every stage needs at least one epoch".into()));
            }
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
                return Err(TrainError::Config(format!(
                    "learning rate {} must be positive",
                    s.learning_rate
                )));
            }
        }
        if self.solver_steps == 0 {
            return Err(TrainError::Config("solver_steps must be positive".into()));
        }
        if self.n_collocation < 2 {
            return Err(TrainError::Config("need at least 2 collocation points".into()));
        }
        Ok(())
    }

    /// RK4 steps used over a span of normalized time.
    pub fn steps_for(&self, span: f64) -> usize {
        ((self.solver_steps as f64 * span).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss of the initial parameters.
    pub initial_loss: f64,
    /// Loss of the returned (best) parameters.
    pub final_loss: f64,
    /// Best-so-far loss after each epoch; non-increasing, last entry equals
    /// `final_loss`.
    pub loss_history: Vec<f64>,
    /// Loss of the parameters evaluated at each epoch.
    pub epoch_losses: Vec<f64>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// `(initial, final)` losses rescaled to mm³² given the volume span.
    pub fn physical_losses(&self, volume_scale: f64) -> (f64, f64) {
        let s2 = volume_scale * volume_scale;
        (self.initial_loss * s2, self.final_loss * s2)
    }

    /// Writes `epoch,loss` rows from the best-so-far history.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "loss"])?;
        for (i, l) in self.loss_history.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_data(data: &[(f64, f64)]) -> Result<(), ModelError> {
    if data.len() < 2 {
        return Err(ModelError::Domain("need at least 2 data points".into()));
    }
    if data.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
        return Err(ModelError::Domain("data must be finite".into()));
    }
    if data.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(ModelError::Domain("data must be strictly increasing in τ".into()));
    }
    Ok(())
}

/// RK4 solution of `model` from `v0` over `[t0, t1]`.
pub fn solve(model: &DynamicsModel, v0: f64, t0: f64, t1: f64, steps: usize) -> Result<Trajectory, ModelError> {
    Ok(solve_with_clamps(model, v0, t0, t1, steps)?.0)
}

/// As [`solve`], also returning how many times the Gompertz state floor was
/// applied.
pub fn solve_with_clamps(
    model: &DynamicsModel,
    v0: f64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<(Trajectory, u64), ModelError> {
    let clamps = Cell::new(0);
    let tr = integrate_rk4(|t, v| model.rhs_counted(v, t, &clamps), v0, t0, t1, steps)?;
    Ok((tr, clamps.get()))
}

/// Trajectory used by the loss: from the first data point to the last.
pub fn solve_over_data(
    model: &DynamicsModel,
    data: &[(f64, f64)],
    config: &TrainConfig,
) -> Result<Trajectory, ModelError> {
    check_data(data)?;
    let (t0, v0) = data[0];
    let t1 = data[data.len() - 1].0;
    solve(model, v0, t0, t1, config.steps_for(t1 - t0))
}

/// Mean squared error between the solution started at `data[0]` and every
/// data point.
pub fn loss(model: &DynamicsModel, data: &[(f64, f64)], config: &TrainConfig) -> Result<f64, ModelError> {
    let tr = solve_over_data(model, data, config)?;
    let mut sse = 0.0;
    for &(t, v) in data {
        sse += (tr.eval_at(t)? - v).powi(2);
    }
    Ok(sse / data.len() as f64)
}

/// The loss recorded on `tape`, differentiable with respect to `theta`.
pub fn loss_tape(
    model: &DynamicsModel,
    tape: &mut Tape,
    theta: Var,
    data: &[(f64, f64)],
    config: &TrainConfig,
) -> Result<Var, ModelError> {
    check_data(data)?;
    let (t0, v0) = data[0];
    let t1 = data[data.len() - 1].0;
    let n = config.steps_for(t1 - t0);
    let times = step_grid(t0, t1, n);
    let v0 = tape.constant(v0);
    let states = rk4_unrolled(tape, |tp, t, v| model.rhs_tape(tp, theta, t, v), v0, t0, t1, n);
    let mut preds = Vec::with_capacity(data.len());
    for &(t, _) in data {
        let (i, w) = locate(&times, t)?;
        preds.push(if w == 0.0 {
            states[i]
        } else {
            tape.lincomb(&[(states[i], 1.0 - w), (states[i + 1], w)])
        });
    }
    let pred = tape.concat(&preds);
    let target = tape.leaf(data.iter().map(|d| d.1).collect());
    let resid = tape.sub(pred, target);
    let sq = tape.square(resid);
    let sse = tape.sum(&[sq]);
    Ok(tape.scale(sse, 1.0 / data.len() as f64))
}

/// Loss and its gradient with respect to [`DynamicsModel::flatten`].
pub fn loss_and_grad(
    model: &DynamicsModel,
    data: &[(f64, f64)],
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>), TrainError> {
    check_data(data)?;
    let theta = model.flatten();
    let mut setup_err = None;
    let res = value_and_grad(&theta, |tape, th| match loss_tape(model, tape, th, data, config) {
        Ok(v) => v,
        Err(e) => {
            setup_err = Some(e);
            tape.constant(f64::NAN)
        }
    });
    if let Some(e) = setup_err {
        return Err(e.into());
    }
    res.map_err(|e: GradError| TrainError::NonFinite {
        epoch: 0,
        reason: e.to_string(),
        history: Vec::new(),
    })
}

/// Freshly initialised model of the given kind.
pub fn init_model(kind: &ModelKind, config: &TrainConfig) -> Result<DynamicsModel, ModelError> {
    let input = if config.time_input { 2 } else { 1 };
    let mut rng = seeded_rng(config.seed);
    match kind {
        ModelKind::Gompertz { init } => Ok(DynamicsModel::Gompertz(*init)),
        ModelKind::NeuralOde { hidden } => {
            let arch = MlpArch::with_hidden(input, hidden, 1)?;
            DynamicsModel::neural_ode(init_params_with(&arch, &mut rng))
        }
        ModelKind::Ude { hidden } => {
            let arch = MlpArch::with_hidden(input, hidden, 1)?;
            let nn1 = init_params_with(&arch, &mut rng);
            let nn2 = init_params_with(&arch, &mut rng);
            DynamicsModel::ude(nn1, nn2)
        }
    }
}

/// Full-batch Adam over the configured schedule. Returns the parameters with
/// the lowest loss seen.
pub fn train(
    kind: &ModelKind,
    data: &[(f64, f64)],
    config: &TrainConfig,
) -> Result<(DynamicsModel, TrainReport), TrainError> {
    config.validate()?;
    check_data(data).map_err(|e| TrainError::Data(e.to_string()))?;
    let model = init_model(kind, config)?;
    train_from(model, data, config)
}

/// As [`train`], starting from an existing model.
pub fn train_from(
    model: DynamicsModel,
    data: &[(f64, f64)],
    config: &TrainConfig,
) -> Result<(DynamicsModel, TrainReport), TrainError> {
    config.validate()?;
    check_data(data).map_err(|e| TrainError::Data(e.to_string()))?;
    let start = Instant::now();
    let mut theta = model.flatten();
    let mut best_theta = theta.clone();
    let mut best = f64::INFINITY;
    let mut history = Vec::with_capacity(config.total_epochs());
    let mut epoch_losses = Vec::with_capacity(config.total_epochs());

    for stage in &config.schedule {
        let mut adam = AdamState::new(theta.len(), stage.learning_rate);
        for _ in 0..stage.epochs {
            let epoch = epoch_losses.len();
            let current = model.with_params(&theta);
            let (l, g) = match loss_and_grad(&current, data, config) {
                Ok(lg) => lg,
                Err(TrainError::NonFinite { reason, .. }) => {
                    return Err(TrainError::NonFinite {
                        epoch,
                        reason,
                        history: epoch_losses,
                    })
                }
                Err(e) => return Err(e),
            };
            if !l.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    reason: format!("loss = {l}"),
                    history: epoch_losses,
                });
            }
            epoch_losses.push(l);
            if l < best {
                best = l;
                best_theta.clone_from(&theta);
            }
            history.push(best);
            adam.step(&mut theta, &g);
        }
    }

    let report = TrainReport {
        initial_loss: epoch_losses[0],
        final_loss: best,
        loss_history: history,
        epoch_losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model.with_params(&best_theta), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{init_params, MlpArch};
    use crate::odeint::gompertz_exact;

    fn const_net(c: f64) -> MlpParams {
        // [1, 1] network with zero weight and bias c outputs c everywhere.
        MlpParams::new(MlpArch::new(vec![1, 1]).unwrap(), vec![0.0, c]).unwrap()
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn ude_with_zero_first_network_is_flat() {
        let nn1 = MlpParams::zeros(MlpArch::new(vec![1, 10, 10, 1]).unwrap());
        let nn2 = init_params(&MlpArch::new(vec![1, 10, 10, 1]).unwrap(), 9);
        let m = DynamicsModel::ude(nn1, nn2).unwrap();
        for v in [0.01, 0.3, 0.9, 2.0] {
            assert_eq!(m.rhs(v, 0.5), 0.0);
        }
    }

    #[test]
    fn zero_network_gives_flat_trajectory() {
        let m = DynamicsModel::neural_ode(MlpParams::zeros(MlpArch::with_hidden(1, &NODE_HIDDEN, 1).unwrap())).unwrap();
        let tr = solve(&m, 0.25, 0.0, 1.0, 100).unwrap();
        assert!(tr.states.iter().all(|&s| s == 0.25));
    }

    #[test]
    fn ude_reproduces_gompertz_at_probe_points() {
        let p = GompertzParams::new(0.3, 1.5).unwrap();
        let g = DynamicsModel::Gompertz(p);
        for v in [0.05, 0.4, 0.8, 1.2] {
            let ude = DynamicsModel::ude(const_net(p.a), const_net((p.capacity / v).ln())).unwrap();
            assert!((ude.rhs(v, 0.0) - g.rhs(v, 0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn ude_rhs_factorises_and_vanishes_at_zero() {
        let arch = MlpArch::new(vec![1, 10, 10, 1]).unwrap();
        let nn1 = init_params(&arch, 1);
        let nn2 = init_params(&arch, 2);
        let m = DynamicsModel::ude(nn1.clone(), nn2.clone()).unwrap();
        assert_eq!(m.rhs(0.0, 0.3), 0.0);
        for v in [0.1, 0.5, 0.77] {
            assert_eq!(m.rhs(v, 0.0), nn1.eval_scalar(v) * v * nn2.eval_scalar(v));
        }
    }

    #[test]
    fn gompertz_checked_rhs_rejects_nonpositive() {
        let m = DynamicsModel::Gompertz(GompertzParams::new(0.3, 1.0).unwrap());
        assert!(m.rhs_checked(0.0, 0.0).is_err());
        assert!(m.rhs_checked(0.5, 0.0).unwrap() > 0.0);
    }

    #[test]
    fn loss_is_zero_for_exact_model_and_mse_arithmetic_holds() {
        let p = GompertzParams::new(2.0, 1.2).unwrap();
        let m = DynamicsModel::Gompertz(p);
        let cfg = TrainConfig {
            solver_steps: 2000,
            ..TrainConfig::neural_ode()
        };
        let tr = solve(&m, 0.1, 0.0, 1.0, cfg.steps_for(1.0)).unwrap();
        let data: Vec<(f64, f64)> = grid(21).into_iter().map(|t| (t, tr.eval_at(t).unwrap())).collect();
        assert!(loss(&m, &data, &cfg).unwrap() < 1e-28);

        let delta = 0.01;
        let mut shifted = data.clone();
        shifted[7].1 += delta;
        let l = loss(&m, &shifted, &cfg).unwrap();
        assert!((l - delta * delta / 21.0).abs() < 1e-15);
    }

    #[test]
    fn flat_model_started_on_flat_data_has_zero_loss() {
        let m = DynamicsModel::neural_ode(MlpParams::zeros(MlpArch::new(vec![1, 4, 1]).unwrap())).unwrap();
        let data: Vec<(f64, f64)> = grid(11).into_iter().map(|t| (t, 0.5)).collect();
        assert_eq!(loss(&m, &data, &TrainConfig::neural_ode()).unwrap(), 0.0);
    }

    #[test]
    fn physical_gompertz_solve_matches_closed_form() {
        let p = GompertzParams::new(0.3, 1200.0).unwrap();
        let m = DynamicsModel::Gompertz(p);
        let tr = solve(&m, 80.0, 0.0, 10.0, 1000).unwrap();
        assert_eq!(tr.first(), 80.0);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let e = gompertz_exact(*t, 80.0, &p);
            assert!(((s - e) / e).abs() < 1e-8);
        }
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let arch = MlpArch::new(vec![1, 10, 10, 1]).unwrap();
        let m = DynamicsModel::ude(init_params(&arch, 4), init_params(&arch, 5)).unwrap();
        let data: Vec<(f64, f64)> = grid(21).into_iter().map(|t| (t, 0.05 + 0.9 * t * t)).collect();
        let cfg = TrainConfig::ude();
        let (l, _) = loss_and_grad(&m, &data, &cfg).unwrap();
        assert!((l - loss(&m, &data, &cfg).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn zero_epoch_schedule_is_rejected() {
        let mut cfg = TrainConfig::neural_ode();
        cfg.schedule[0].epochs = 0;
        let data = vec![(0.0, 0.1), (1.0, 0.9)];
        assert!(matches!(
            train(&ModelKind::neural_ode(), &data, &cfg),
            Err(TrainError::Config(_))
        ));
        cfg.schedule.clear();
        assert!(matches!(
            train(&ModelKind::neural_ode(), &data, &cfg),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn short_training_is_deterministic_and_monotone() {
        let data: Vec<(f64, f64)> = grid(11).into_iter().map(|t| (t, 0.05 + 0.9 * t)).collect();
        let cfg = TrainConfig {
            schedule: vec![
                Stage {
                    learning_rate: 0.01,
                    epochs: 15,
                },
                Stage {
                    learning_rate: 0.005,
                    epochs: 5,
                },
            ],
            ..TrainConfig::ude()
        };
        let (m1, r1) = train(&ModelKind::ude(), &data, &cfg).unwrap();
        let (m2, r2) = train(&ModelKind::ude(), &data, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.loss_history, r2.loss_history);
        assert_eq!(r1.loss_history.len(), 20);
        assert!(r1.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r1.final_loss, *r1.loss_history.last().unwrap());
        assert!((loss(&m1, &data, &cfg).unwrap() - r1.final_loss).abs() < 1e-13);
    }

    #[test]
    fn checkpoint_round_trip_preserves_model() {
        let arch = MlpArch::new(vec![1, 10, 10, 1]).unwrap();
        let m = DynamicsModel::ude(init_params(&arch, 1), init_params(&arch, 2)).unwrap();
        let ck = m.to_checkpoint(123).unwrap();
        assert_eq!(DynamicsModel::from_checkpoint(&ck).unwrap(), m);
        assert!(DynamicsModel::Gompertz(GompertzParams::new(1.0, 1.0).unwrap())
            .to_checkpoint(1)
            .is_none());
    }
}

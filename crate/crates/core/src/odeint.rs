//! Fixed-step explicit integration of scalar autonomous ODEs and the Gompertz
//! growth law.

use std::cell::Cell;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("solution diverged at step {step} (t = {t}, state = {state})")]
    Divergence { step: usize, t: f64, state: f64 },
}

/// Smallest state fed to `ln` inside the Gompertz law during integration.
pub const STATE_FLOOR: f64 = 1e-12;

/// `dV/dt = a·V·ln(K/V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GompertzParams {
    /// Intrinsic growth rate, per unit of the integration variable.
    pub a: f64,
    /// Carrying capacity, in state units.
    pub capacity: f64,
}

impl GompertzParams {
    pub fn new(a: f64, capacity: f64) -> Result<Self, OdeError> {
        if !(a > 0.0 && capacity > 0.0) {
            return Err(OdeError::Domain(format!(
                "Gompertz parameters must be positive (a={a}, K={capacity})"
            )));
        }
        Ok(Self { a, capacity })
    }

    /// Right-hand side with the state clamped to [`STATE_FLOOR`]; each clamp
    /// increments `clamps`.
    pub fn rhs_clamped(&self, v: f64, clamps: &Cell<u64>) -> f64 {
        let v = if v < STATE_FLOOR {
            clamps.set(clamps.get() + 1);
            STATE_FLOOR
        } else {
            v
        };
        self.a * v * (self.capacity / v).ln()
    }
}

pub fn gompertz_rhs(v: f64, p: &GompertzParams) -> Result<f64, OdeError> {
    if !(v > 0.0) {
        return Err(OdeError::Domain(format!("Gompertz state must be positive, got {v}")));
    }
    Ok(p.a * v * (p.capacity / v).ln())
}

/// Closed-form Gompertz solution `K·exp(ln(V₀/K)·e^{-a t})`.
pub fn gompertz_exact(t: f64, v0: f64, p: &GompertzParams) -> f64 {
    p.capacity * ((v0 / p.capacity).ln() * (-p.a * t).exp()).exp()
}

/// Solution nodes of a scalar ODE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.states[0]
    }

    pub fn last(&self) -> f64 {
        self.states[self.states.len() - 1]
    }

    /// Linear interpolation between bracketing nodes.
    pub fn eval_at(&self, t: f64) -> Result<f64, OdeError> {
        let (i, w) = locate(&self.times, t)?;
        if w == 0.0 {
            return Ok(self.states[i]);
        }
        Ok(self.states[i] + w * (self.states[i + 1] - self.states[i]))
    }

    /// Writes `t,state` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "state"])?;
        for (t, s) in self.times.iter().zip(&self.states) {
            w.write_record([t.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bracketing node `i` and weight `w ∈ [0, 1)` such that the linear
/// interpolant at `t` is `s[i] + w·(s[i+1] − s[i])`; `w = 0` on a node.
pub fn locate(times: &[f64], t: f64) -> Result<(usize, f64), OdeError> {
    let n = times.len();
    if n == 0 {
        return Err(OdeError::Domain("empty trajectory".into()));
    }
    let (lo, hi) = (times[0], times[n - 1]);
    let slack = 1e-12 * (hi - lo).abs().max(1.0);
    if !(t >= lo - slack && t <= hi + slack) {
        return Err(OdeError::Domain(format!("t = {t} outside [{lo}, {hi}]")));
    }
    let t = t.clamp(lo, hi);
    // First node strictly greater than t.
    let j = times.partition_point(|&x| x <= t);
    if j == 0 {
        return Ok((0, 0.0));
    }
    let i = j - 1;
    if i + 1 == n || times[i] == t {
        return Ok((i, 0.0));
    }
    Ok((i, (t - times[i]) / (times[i + 1] - times[i])))
}

/// Node times `t0 + i·h` with the last node pinned to `t1`.
pub fn step_grid(t0: f64, t1: f64, n_steps: usize) -> Vec<f64> {
    let h = (t1 - t0) / n_steps as f64;
    (0..=n_steps)
        .map(|i| if i == n_steps { t1 } else { t0 + i as f64 * h })
        .collect()
}

/// One classical RK4 step.
#[inline]
pub fn rk4_step(rhs: &mut impl FnMut(f64, f64) -> f64, t: f64, v: f64, h: f64) -> f64 {
    let k1 = rhs(t, v);
    let k2 = rhs(t + 0.5 * h, v + 0.5 * h * k1);
    let k3 = rhs(t + 0.5 * h, v + 0.5 * h * k2);
    let k4 = rhs(t + h, v + h * k3);
    v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Classical fourth-order Runge-Kutta with `n_steps` equal steps over
/// `[t0, t1]`; returns all `n_steps + 1` nodes. `rhs` receives `(t, state)`.
pub fn integrate_rk4(
    mut rhs: impl FnMut(f64, f64) -> f64,
    v0: f64,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<Trajectory, OdeError> {
    if n_steps == 0 {
        return Err(OdeError::Domain("n_steps must be at least 1".into()));
    }
    if !(t1 > t0) {
        return Err(OdeError::Domain(format!("empty time span [{t0}, {t1}]")));
    }
    if !v0.is_finite() {
        return Err(OdeError::Divergence {
            step: 0,
            t: t0,
            state: v0,
        });
    }
    let h = (t1 - t0) / n_steps as f64;
    let times = step_grid(t0, t1, n_steps);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut v = v0;
    states.push(v);
    for step in 0..n_steps {
        v = rk4_step(&mut rhs, times[step], v, h);
        if !v.is_finite() {
            return Err(OdeError::Divergence {
                step: step + 1,
                t: times[step + 1],
                state: v,
            });
        }
        states.push(v);
    }
    Ok(Trajectory { times, states })
}

//! Sparse recovery of closed-form growth laws from a trained model.
//!
//! The learned derivative is sampled in physical units and regressed onto
//! four growth terms with an L1 penalty:
//!
//! | index | term            |
//! |-------|-----------------|
//! | 1     | `V`             |
//! | 2     | `V·ln(K/V)`     |
//! | 3     | `V·(1 − V/K)`   |
//! | 4     | `V²`            |
//!
//! Terms 1, 3 and 4 are linearly dependent (`φ₃ = φ₁ − φ₄/K`), so the
//! unpenalized problem has no unique solution; the penalty selects the
//! sparsest combination.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::NormalizationMap;
use crate::linalg::max_eigenvalue_psd;
use crate::models::{solve, DynamicsModel, ModelError};

pub const N_BASIS: usize = 4;
pub const DEFAULT_SAMPLES: usize = 101;
pub const DEFAULT_LAMBDA_RATIO: f64 = 1e-3;
pub const FISTA_TOL: f64 = 1e-10;
pub const FISTA_MAX_ITER: usize = 50_000;
/// Coefficients below this fraction of the largest magnitude are zeroed.
pub const THRESHOLD_RATIO: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SymrecError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("sparse regression did not converge in {iterations} iterations")]
    NotConverged {
        iterations: usize,
        /// Objective value every 1000 iterations.
        history: Vec<f64>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    /// Carrying capacity in mm³.
    pub capacity: f64,
}

impl BasisSet {
    pub fn new(capacity: f64) -> Result<Self, SymrecError> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(SymrecError::Domain(format!(
                "capacity must be positive, got {capacity}"
            )));
        }
        Ok(Self { capacity })
    }

    /// `[φ₁(V), φ₂(V), φ₃(V), φ₄(V)]`; requires `V > 0`.
    pub fn row(&self, v: f64) -> Result<[f64; N_BASIS], SymrecError> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SymrecError::Domain(format!("basis needs V > 0, got {v}")));
        }
        let k = self.capacity;
        Ok([v, v * (k / v).ln(), v * (1.0 - v / k), v * v])
    }

    /// Term for basis index `i ∈ 1..=4`, with `K` written out.
    pub fn term(&self, i: usize) -> String {
        let k = self.capacity;
        match i {
            1 => "V".into(),
            2 => format!("V*log({k}/V)"),
            3 => format!("V*(1 - V/{k})"),
            4 => "V^2".into(),
            _ => panic!("basis index {i} out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    /// Coefficients in physical units, `beta[i - 1]` for basis index `i`.
    pub beta: [f64; N_BASIS],
    /// Basis indices (1-based) with non-zero coefficients.
    pub active_set: Vec<usize>,
    /// `‖Φβ − y‖₂` for the returned `beta`.
    pub residual_norm: f64,
    /// Penalty weight used on the standardized problem.
    pub lambda: f64,
    pub iterations: usize,
}

impl SparseFit {
    /// Writes `basis_index,coefficient`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["basis_index", "coefficient"])?;
        for (i, b) in self.beta.iter().enumerate() {
            w.write_record([(i + 1).to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(V, dV/dt)` in mm³ and mm³/day at `n` uniform τ ∈ [0, 1], taken from one
/// RK4 solve from `v0` (normalized) with `steps` steps. The derivative is the
/// model's right-hand side at the sampled state, rescaled by the chain rule.
pub fn sample_physical_derivatives(
    model: &DynamicsModel,
    map: &NormalizationMap,
    v0: f64,
    n: usize,
    steps: usize,
) -> Result<Vec<(f64, f64)>, SymrecError> {
    if n < 10 {
        return Err(SymrecError::Domain(format!("need at least 10 samples, got {n}")));
    }
    let tr = solve(model, v0, 0.0, 1.0, steps)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let tau = i as f64 / (n - 1) as f64;
        let v = tr.eval_at(tau).map_err(ModelError::from)?;
        let dv = model.rhs(v, tau);
        out.push((map.denormalize_v(v), map.denormalize_rate(dv)));
    }
    Ok(out)
}

/// Design matrix rows `Φᵢ = φ(Vᵢ)` and targets `yᵢ = (dV/dt)ᵢ`.
pub fn build_design_matrix(
    samples: &[(f64, f64)],
    basis: &BasisSet,
) -> Result<(Vec<[f64; N_BASIS]>, Vec<f64>), SymrecError> {
    let mut phi = Vec::with_capacity(samples.len());
    let mut y = Vec::with_capacity(samples.len());
    for &(v, dv) in samples {
        phi.push(basis.row(v)?);
        y.push(dv);
    }
    Ok((phi, y))
}

/// Default penalty `ratio·‖Xᵀy‖∞/n` on the column-standardized design `X`.
pub fn default_lambda(phi: &[[f64; N_BASIS]], y: &[f64], ratio: f64) -> f64 {
    let (x, _) = standardize(phi);
    let xty = xt_y(&x, y);
    ratio * xty.iter().fold(0.0f64, |m, v| m.max(v.abs())) / y.len() as f64
}

/// Column scales `sⱼ = sqrt(mean(Φᵢⱼ²))` (1 for all-zero columns) and `Φ/s`.
fn standardize(phi: &[[f64; N_BASIS]]) -> (Vec<[f64; N_BASIS]>, [f64; N_BASIS]) {
    let n = phi.len() as f64;
    let mut s = [0.0; N_BASIS];
    for row in phi {
        for j in 0..N_BASIS {
            s[j] += row[j] * row[j];
        }
    }
    for sj in &mut s {
        *sj = (*sj / n).sqrt();
        if *sj == 0.0 {
            *sj = 1.0;
        }
    }
    let x = phi.iter().map(|r| std::array::from_fn(|j| r[j] / s[j])).collect();
    (x, s)
}

fn xt_y(x: &[[f64; N_BASIS]], y: &[f64]) -> [f64; N_BASIS] {
    let mut out = [0.0; N_BASIS];
    for (r, yi) in x.iter().zip(y) {
        for j in 0..N_BASIS {
            out[j] += r[j] * yi;
        }
    }
    out
}

fn gram(x: &[[f64; N_BASIS]]) -> [[f64; N_BASIS]; N_BASIS] {
    let mut g = [[0.0; N_BASIS]; N_BASIS];
    for r in x {
        for i in 0..N_BASIS {
            for j in 0..N_BASIS {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    g
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn residual_norm(phi: &[[f64; N_BASIS]], y: &[f64], beta: &[f64; N_BASIS]) -> f64 {
    phi.iter()
        .zip(y)
        .map(|(r, yi)| {
            let p: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            (p - yi).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Minimizes `‖Xγ − y‖² + λ‖γ‖₁` over the column-standardized design with
/// FISTA and gradient-based restart, maps back to `β = γ/s`, then zeroes
/// coefficients below [`THRESHOLD_RATIO`] of the largest. `lambda = None`
/// uses [`default_lambda`] with [`DEFAULT_LAMBDA_RATIO`].
pub fn sparse_regress(phi: &[[f64; N_BASIS]], y: &[f64], lambda: Option<f64>) -> Result<SparseFit, SymrecError> {
    if phi.len() < N_BASIS || phi.len() != y.len() {
        return Err(SymrecError::Domain(format!(
            "need at least {N_BASIS} rows and matching targets, got {} rows and {} targets",
            phi.len(),
            y.len()
        )));
    }
    if phi.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(SymrecError::Domain("design and targets must be finite".into()));
    }
    let lambda = lambda.unwrap_or_else(|| default_lambda(phi, y, DEFAULT_LAMBDA_RATIO));
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SymrecError::Domain(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }

    let (x, s) = standardize(phi);
    let g = gram(&x);
    let xty = xt_y(&x, y);
    let lipschitz = 2.0 * max_eigenvalue_psd(&g);
    let objective = |gamma: &[f64; N_BASIS]| {
        let r: f64 = x
            .iter()
            .zip(y)
            .map(|(row, yi)| (row.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>() - yi).powi(2))
            .sum();
        r + lambda * gamma.iter().map(|v| v.abs()).sum::<f64>()
    };

    let mut gamma = [0.0; N_BASIS];
    let mut iterations = 0;
    if lipschitz > 0.0 {
        let step = 1.0 / lipschitz;
        let mut z = gamma;
        let mut t = 1.0f64;
        let mut history = Vec::new();
        let mut converged = false;
        for it in 1..=FISTA_MAX_ITER {
            let grad: [f64; N_BASIS] =
                std::array::from_fn(|i| 2.0 * ((0..N_BASIS).map(|j| g[i][j] * z[j]).sum::<f64>() - xty[i]));
            let next: [f64; N_BASIS] = std::array::from_fn(|i| soft_threshold(z[i] - step * grad[i], step * lambda));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Restart momentum when it points uphill.
            let uphill: f64 = (0..N_BASIS).map(|i| (z[i] - next[i]) * (next[i] - gamma[i])).sum();
            let (momentum, t_used) = if uphill > 0.0 {
                (0.0, 1.0)
            } else {
                ((t - 1.0) / t_next, t_next)
            };
            z = std::array::from_fn(|i| next[i] + momentum * (next[i] - gamma[i]));
            let change = (0..N_BASIS).map(|i| (next[i] - gamma[i]).abs()).fold(0.0, f64::max);
            let scale = next.iter().map(|v| v.abs()).fold(1.0, f64::max);
            gamma = next;
            t = t_used;
            iterations = it;
            if it % 1000 == 0 {
                history.push(objective(&gamma));
            }
            if change <= FISTA_TOL * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SymrecError::NotConverged { iterations, history });
        }
    }

    let mut beta: [f64; N_BASIS] = std::array::from_fn(|j| gamma[j] / s[j]);
    let max = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    for b in &mut beta {
        if b.abs() < THRESHOLD_RATIO * max || *b == 0.0 {
            *b = 0.0;
        }
    }
    let active_set = (0..N_BASIS).filter(|&j| beta[j] != 0.0).map(|j| j + 1).collect();
    Ok(SparseFit {
        beta,
        active_set,
        residual_norm: residual_norm(phi, y, &beta),
        lambda,
        iterations,
    })
}

/// Rounds to `sig_figs` significant figures and prints without exponent.
pub fn format_sig(x: f64, sig_figs: usize) -> String {
    let sig_figs = sig_figs.max(1);
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = |v: f64| v.abs().log10().floor() as i32;
    let decimals = |e: i32| (sig_figs as i32 - 1 - e).max(0) as usize;
    let factor = 10f64.powi(sig_figs as i32 - 1 - mag(x));
    let rounded = (x * factor).round() / factor;
    format!("{:.*}", decimals(mag(rounded)), rounded)
}

/// `dV/dt ≈ β₁*V + β₂*V*log(K/V) + …` over the non-zero terms in basis order.
pub fn format_expression(fit: &SparseFit, basis: &BasisSet, sig_figs: usize) -> String {
    let mut out = String::from("dV/dt ≈");
    let mut first = true;
    for (j, &b) in fit.beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let coef = format_sig(b.abs(), sig_figs);
        let term = basis.term(j + 1);
        match (first, b < 0.0) {
            (true, false) => out.push_str(&format!(" {coef}*{term}")),
            (true, true) => out.push_str(&format!(" -{coef}*{term}")),
            (false, false) => out.push_str(&format!(" + {coef}*{term}")),
            (false, true) => out.push_str(&format!(" - {coef}*{term}")),
        }
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
    out
}

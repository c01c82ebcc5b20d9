//! Tanh multilayer perceptrons over a flat parameter vector, seeded
//! Glorot-uniform initialisation, reverse-mode gradients and Adam.
//!
//! Parameter layout is layer-major: for each consecutive width pair
//! `(w_in, w_out)` the `w_out × w_in` weight matrix (row-major) is followed
//! by the `w_out` biases.

mod adam;
mod checkpoint;
pub mod tape;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, NetCheckpoint};
pub use tape::{rk4_unrolled, value_and_grad, GradError, Tape, Var};

/// Generator used for every seeded draw in the crate.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("input has width {got}, network expects {expected}")]
    Width { expected: usize, got: usize },
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

/// Layer widths, input first and output last. Hidden layers use tanh, the
/// output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    widths: Vec<usize>,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>) -> Result<Self, NetError> {
        if widths.len() < 2 {
            return Err(NetError::Arch(format!("need at least 2 widths, got {widths:?}")));
        }
        if widths.contains(&0) {
            return Err(NetError::Arch(format!("zero-width layer in {widths:?}")));
        }
        Ok(Self { widths })
    }

    /// `input → hidden… → output`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self, NetError> {
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(hidden);
        w.push(output);
        Self::new(w)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    /// `(w_in, w_out)` per layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.widths.windows(2).map(|w| (w[0], w[1]))
    }

    /// `Σ (w_in + 1)·w_out`.
    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| (i + 1) * o).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub arch: MlpArch,
    pub theta: Vec<f64>,
}

impl MlpParams {
    pub fn new(arch: MlpArch, theta: Vec<f64>) -> Result<Self, NetError> {
        let expected = arch.param_count();
        if theta.len() != expected {
            return Err(NetError::ParamCount {
                expected,
                got: theta.len(),
            });
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: MlpArch) -> Self {
        let n = arch.param_count();
        Self {
            arch,
            theta: vec![0.0; n],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        forward_slice(&self.arch, &self.theta, x)
    }

    /// Scalar-in, scalar-out evaluation for `[1, …, 1]` networks.
    pub fn eval_scalar(&self, x: f64) -> f64 {
        forward_slice(&self.arch, &self.theta, &[x]).expect("scalar network")[0]
    }

    /// Weight and bias slices per layer.
    pub fn layer_slices(&self) -> Vec<(&[f64], &[f64])> {
        let mut out = Vec::new();
        let mut off = 0;
        for (i, o) in self.arch.layers() {
            let w = &self.theta[off..off + i * o];
            let b = &self.theta[off + i * o..off + (i + 1) * o];
            out.push((w, b));
            off += (i + 1) * o;
        }
        out
    }
}

/// Forward pass reading parameters from an arbitrary slice, so several
/// networks can share one flat vector.
pub fn forward_slice(arch: &MlpArch, theta: &[f64], x: &[f64]) -> Result<Vec<f64>, NetError> {
    if x.len() != arch.input_width() {
        return Err(NetError::Width {
            expected: arch.input_width(),
            got: x.len(),
        });
    }
    if theta.len() < arch.param_count() {
        return Err(NetError::ParamCount {
            expected: arch.param_count(),
            got: theta.len(),
        });
    }
    let n_layers = arch.widths.len() - 1;
    let mut h = x.to_vec();
    let mut off = 0;
    for (l, (n_in, n_out)) in arch.layers().enumerate() {
        let w = &theta[off..off + n_in * n_out];
        let b = &theta[off + n_in * n_out..off + (n_in + 1) * n_out];
        let mut next: Vec<f64> = (0..n_out)
            .map(|o| {
                b[o] + w[o * n_in..(o + 1) * n_in]
                    .iter()
                    .zip(&h)
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
            })
            .collect();
        if l + 1 < n_layers {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = next;
        off += (n_in + 1) * n_out;
    }
    Ok(h)
}

/// Records the network on `tape`, reading parameters from `theta[offset..]`.
pub fn forward_tape(arch: &MlpArch, tape: &mut Tape, theta: Var, offset: usize, x: Var) -> Var {
    let n_layers = arch.widths.len() - 1;
    let mut h = x;
    let mut off = offset;
    for (l, (n_in, n_out)) in arch.layers().enumerate() {
        h = tape.affine(theta, off, n_in, n_out, h);
        if l + 1 < n_layers {
            h = tape.tanh(h);
        }
        off += (n_in + 1) * n_out;
    }
    h
}

/// Glorot-uniform weights, zero biases, drawn from `rng`.
pub fn init_params_with(arch: &MlpArch, rng: &mut Rng) -> MlpParams {
    let mut theta = Vec::with_capacity(arch.param_count());
    for (n_in, n_out) in arch.layers() {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        theta.extend((0..n_in * n_out).map(|_| dist.sample(rng)));
        theta.extend(std::iter::repeat_n(0.0, n_out));
    }
    MlpParams {
        arch: arch.clone(),
        theta,
    }
}

pub fn init_params(arch: &MlpArch, seed: u64) -> MlpParams {
    init_params_with(arch, &mut seeded_rng(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MlpArch {
        MlpArch::new(vec![1, 10, 10, 1]).unwrap()
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(small().param_count(), 141);
        assert_eq!(
            MlpArch::with_hidden(1, &[128, 128, 64, 64], 1).unwrap().param_count(),
            29_249
        );
        assert!(MlpArch::new(vec![3]).is_err());
        assert!(MlpArch::new(vec![3, 0, 1]).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&small(), 123);
        let b = init_params(&small(), 123);
        assert_eq!(a.theta, b.theta);
        assert_ne!(a.theta, init_params(&small(), 124).theta);
        for (_, bias) in a.layer_slices() {
            assert!(bias.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn forward_examples() {
        let z = MlpParams::zeros(small());
        for x in [-3.0, 0.0, 0.7] {
            assert_eq!(z.eval_scalar(x), 0.0);
        }
        let lin = MlpParams::new(MlpArch::new(vec![1, 1]).unwrap(), vec![2.5, -0.5]).unwrap();
        assert_eq!(lin.eval_scalar(3.0), 2.5 * 3.0 - 0.5);
        assert!(matches!(
            z.forward(&[1.0, 2.0]),
            Err(NetError::Width { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn hidden_activations_are_bounded() {
        let p = init_params(&small(), 7);
        let mut tape = Tape::new();
        let th = tape.leaf(p.theta.clone());
        let x = tape.constant(25.0);
        let h1 = tape.affine(th, 0, 1, 10, x);
        let a1 = tape.tanh(h1);
        assert!(tape.value(a1).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let p = init_params(&small(), 3);
        let mut tape = Tape::new();
        let th = tape.leaf(p.theta.clone());
        let x = tape.constant(0.37);
        let y = forward_tape(&p.arch, &mut tape, th, 0, x);
        assert_eq!(tape.scalar(y), p.eval_scalar(0.37));
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let p = init_params(&small(), 11);
        let loss = |t: &mut Tape, th: Var| {
            let x = t.constant(0.4);
            let y = forward_tape(&p.arch, t, th, 0, x);
            let sq = t.square(y);
            t.sum(&[sq])
        };
        let (_, g) = value_and_grad(&p.theta, loss).unwrap();
        let h = 1e-5;
        for i in 0..p.theta.len() {
            let mut up = p.theta.clone();
            up[i] += h;
            let mut dn = p.theta.clone();
            dn[i] -= h;
            let fd = (value_and_grad(&up, loss).unwrap().0 - value_and_grad(&dn, loss).unwrap().0) / (2.0 * h);
            let denom = g[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (fd - g[i]).abs() / denom < 1e-6 || (fd - g[i]).abs() < 1e-10,
                "coord {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn glorot_variance_on_wide_layers() {
        let arch = MlpArch::with_hidden(64, &[128], 64).unwrap();
        let p = init_params(&arch, 123);
        for (w, _) in p.layer_slices() {
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let target = 2.0 / (64.0 + 128.0);
            assert!((var / target - 1.0).abs() < 0.2, "var {var} target {target}");
        }
    }
}

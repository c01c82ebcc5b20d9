//! Reverse-mode differentiation over a Wengert list of vector-valued nodes.
//!
//! Nodes hold dense `f64` vectors. Network layers are recorded as single
//! `affine` nodes that read their weights directly out of a flat parameter
//! leaf, so the backward pass accumulates straight into the parameter
//! gradient without materialising per-layer weight nodes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("non-finite value at graph node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss must be a scalar node, got length {0}")]
    NotScalar(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine {
        theta: usize,
        offset: usize,
        n_in: usize,
        n_out: usize,
        x: usize,
    },
    Tanh(usize),
    Mul(usize, usize),
    /// `Σ cᵢ·xᵢ`
    LinComb(Vec<(usize, f64)>),
    /// `ln(max(x, floor))`
    Ln {
        x: usize,
        floor: f64,
    },
    Square(usize),
    /// Sum of all elements of all operands.
    Sum(Vec<usize>),
    Slice {
        x: usize,
        start: usize,
    },
    Concat(Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Mul(..) => "mul",
            Op::LinComb(_) => "lincomb",
            Op::Ln { .. } => "ln",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Slice { .. } => "slice",
            Op::Concat(_) => "concat",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_nonfinite: Option<(usize, &'static str)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let idx = self.nodes.len();
        if self.first_nonfinite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_nonfinite = Some((idx, op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(idx)
    }

    /// Differentiable input (parameters) or constant data.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(vec![value])
    }

    /// `W·x + b` with `W` (row-major, `n_out × n_in`) followed by `b` stored
    /// in `theta[offset..]`.
    pub fn affine(&mut self, theta: Var, offset: usize, n_in: usize, n_out: usize, x: Var) -> Var {
        let p = &self.nodes[theta.0].value;
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), n_in, "affine input width");
        assert!(offset + (n_in + 1) * n_out <= p.len(), "affine reads past parameters");
        let w = &p[offset..offset + n_in * n_out];
        let b = &p[offset + n_in * n_out..offset + (n_in + 1) * n_out];
        let out: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &w[o * n_in..(o + 1) * n_in];
                b[o] + row.iter().zip(xv).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect();
        self.push(
            out,
            Op::Affine {
                theta: theta.0,
                offset,
                n_in,
                n_out,
                x: x.0,
            },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(out, Op::Tanh(x.0))
    }

    /// Elementwise product of equal-length operands.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "mul operand lengths");
        let out = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        self.push(out, Op::Mul(a.0, b.0))
    }

    /// `Σ cᵢ·xᵢ` over equal-length operands.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "lincomb needs at least one term");
        let n = self.nodes[terms[0].0 .0].value.len();
        let mut out = vec![0.0; n];
        for &(v, c) in terms {
            let xv = &self.nodes[v.0].value;
            assert_eq!(xv.len(), n, "lincomb operand lengths");
            for (o, x) in out.iter_mut().zip(xv) {
                *o += c * x;
            }
        }
        self.push(out, Op::LinComb(terms.iter().map(|&(v, c)| (v.0, c)).collect()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(&[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(&[(a, 1.0), (b, -1.0)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.lincomb(&[(a, c)])
    }

    /// Natural log with the argument clamped below at `floor`; the gradient is
    /// zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.max(floor).ln()).collect();
        self.push(out, Op::Ln { x: x.0, floor })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v * v).collect();
        self.push(out, Op::Square(x.0))
    }

    /// Scalar sum of every element of every operand.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let s = xs.iter().flat_map(|v| self.nodes[v.0].value.iter()).sum();
        self.push(vec![s], Op::Sum(xs.iter().map(|v| v.0).collect()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(out, Op::Slice { x: x.0, start })
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let out = xs.iter().flat_map(|v| self.nodes[v.0].value.iter().copied()).collect();
        self.push(out, Op::Concat(xs.iter().map(|v| v.0).collect()))
    }

    /// First node whose value was NaN or infinite, if any.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.first_nonfinite
    }

    /// Gradient of scalar `output` with respect to every node, returned for
    /// the requested `wrt` node.
    pub fn gradient(&self, output: Var, wrt: Var) -> Result<Vec<f64>, GradError> {
        if let Some((node, op)) = self.first_nonfinite {
            return Err(GradError::NonFinite { node, op });
        }
        let out_len = self.nodes[output.0].value.len();
        if out_len != 1 {
            return Err(GradError::NotScalar(out_len));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); output.0 + 1];
        grads[output.0] = vec![1.0];

        fn acc(grads: &mut [Vec<f64>], idx: usize, len: usize) -> &mut Vec<f64> {
            let g = &mut grads[idx];
            if g.is_empty() {
                *g = vec![0.0; len];
            }
            g
        }

        for i in (0..=output.0).rev() {
            if i == wrt.0 {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            if g.is_empty() {
                continue;
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(GradError::NonFinite {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                &Op::Affine {
                    theta,
                    offset,
                    n_in,
                    n_out,
                    x,
                } => {
                    let p = &self.nodes[theta].value;
                    let xv = &self.nodes[x].value;
                    let w = &p[offset..offset + n_in * n_out];
                    let mut gx = vec![0.0; n_in];
                    for o in 0..n_out {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        for (gxi, wi) in gx.iter_mut().zip(row) {
                            *gxi += wi * g[o];
                        }
                    }
                    let plen = p.len();
                    let gp = acc(&mut grads, theta, plen);
                    for o in 0..n_out {
                        let go = g[o];
                        let grow = &mut gp[offset + o * n_in..offset + (o + 1) * n_in];
                        for (gw, xi) in grow.iter_mut().zip(xv) {
                            *gw += go * xi;
                        }
                        gp[offset + n_in * n_out + o] += go;
                    }
                    let gxa = acc(&mut grads, x, n_in);
                    for (a, b) in gxa.iter_mut().zip(&gx) {
                        *a += b;
                    }
                }
                &Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    let gx = acc(&mut grads, x, y.len());
                    for ((a, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *a += gi * (1.0 - yi * yi);
                    }
                }
                &Op::Mul(a, b) => {
                    let av = self.nodes[a].value.clone();
                    let bv = &self.nodes[b].value;
                    {
                        let ga = acc(&mut grads, a, av.len());
                        for ((s, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *s += gi * bi;
                        }
                    }
                    let gb = acc(&mut grads, b, av.len());
                    for ((s, gi), ai) in gb.iter_mut().zip(&g).zip(&av) {
                        *s += gi * ai;
                    }
                }
                Op::LinComb(terms) => {
                    for &(x, c) in terms {
                        let gx = acc(&mut grads, x, g.len());
                        for (s, gi) in gx.iter_mut().zip(&g) {
                            *s += c * gi;
                        }
                    }
                }
                &Op::Ln { x, floor } => {
                    let xv = &self.nodes[x].value;
                    let gx = acc(&mut grads, x, xv.len());
                    for ((s, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if *xi >= floor {
                            *s += gi / xi;
                        }
                    }
                }
                &Op::Square(x) => {
                    let xv = &self.nodes[x].value;
                    let gx = acc(&mut grads, x, xv.len());
                    for ((s, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *s += 2.0 * gi * xi;
                    }
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        let n = self.nodes[x].value.len();
                        for s in acc(&mut grads, x, n).iter_mut() {
                            *s += g[0];
                        }
                    }
                }
                &Op::Slice { x, start } => {
                    let n = self.nodes[x].value.len();
                    let gx = acc(&mut grads, x, n);
                    for (s, gi) in gx[start..start + g.len()].iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
                Op::Concat(xs) => {
                    let mut pos = 0;
                    for &x in xs {
                        let n = self.nodes[x].value.len();
                        for (s, gi) in acc(&mut grads, x, n).iter_mut().zip(&g[pos..pos + n]) {
                            *s += gi;
                        }
                        pos += n;
                    }
                }
            }
        }
        let n = self.nodes[wrt.0].value.len();
        let mut g = std::mem::take(&mut grads[wrt.0]);
        if g.is_empty() {
            g = vec![0.0; n];
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(GradError::NonFinite {
                node: wrt.0,
                op: self.nodes[wrt.0].op.name(),
            });
        }
        Ok(g)
    }
}

/// Evaluates `loss_fn` on a fresh tape with `theta` as the differentiable
/// leaf and returns the loss value and its exact gradient.
pub fn value_and_grad<F>(theta: &[f64], loss_fn: F) -> Result<(f64, Vec<f64>), GradError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let p = tape.leaf(theta.to_vec());
    let out = loss_fn(&mut tape, p);
    let g = tape.gradient(out, p)?;
    Ok((tape.scalar(out), g))
}

/// Unrolled classical RK4 on the tape; returns the `n_steps + 1` node states.
/// Uses the same node times as [`crate::odeint::integrate_rk4`].
pub fn rk4_unrolled<F>(tape: &mut Tape, mut rhs: F, v0: Var, t0: f64, t1: f64, n_steps: usize) -> Vec<Var>
where
    F: FnMut(&mut Tape, f64, Var) -> Var,
{
    let h = (t1 - t0) / n_steps as f64;
    let times = crate::odeint::step_grid(t0, t1, n_steps);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut v = v0;
    states.push(v);
    for &t in &times[..n_steps] {
        let k1 = rhs(tape, t, v);
        let y2 = tape.lincomb(&[(v, 1.0), (k1, 0.5 * h)]);
        let k2 = rhs(tape, t + 0.5 * h, y2);
        let y3 = tape.lincomb(&[(v, 1.0), (k2, 0.5 * h)]);
        let k3 = rhs(tape, t + 0.5 * h, y3);
        let y4 = tape.lincomb(&[(v, 1.0), (k3, h)]);
        let k4 = rhs(tape, t + h, y4);
        v = tape.lincomb(&[(v, 1.0), (k1, h / 6.0), (k2, h / 3.0), (k3, h / 3.0), (k4, h / 6.0)]);
        states.push(v);
    }
    states
}

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::fft::{self, Complex};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// An operation with a hand-written backward pass.
///
/// `forward` runs once when the op is recorded and may keep whatever it
/// needs for `backward` (the scan kernel stores its hidden states).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradient for each input given the output gradient. Entries may be
    /// `None` for inputs that do not need one.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Recip(Var),
    AddScalar(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        depthwise: bool,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    RmsNorm {
        x: Var,
        gamma: Var,
        xhat: Vec<f64>,
        inv_rms: Vec<f64>,
    },
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Exp(Var),
    Ln {
        x: Var,
        floor: f64,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    GatherCols {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
    },
    PickRows {
        x: Var,
        rows: Vec<usize>,
    },
    RfftMagnitude {
        x: Var,
        spectra: Vec<Vec<Complex>>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
}

/// Record of executed operations, in execution order.
///
/// Every op appends one node after its inputs, so node order is a
/// topological order and `backward` is a single reverse sweep. Gradients of
/// leaves accumulate across `backward` calls until [`Tape::zero_grad`].
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    training: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            training: false,
        }
    }

    /// Batch normalization uses batch statistics in training mode and the
    /// supplied running statistics otherwise.
    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any has been propagated to it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `d loss / d v` to every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    let slot = &mut self.nodes[i].grad;
                    match slot {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                continue;
            }
            backprop_node(&self.nodes, i, &g, &mut grads);
        }
        Ok(())
    }
}

/// Adds a contribution into the gradient buffer of `v`, allocating it on
/// first touch. Skips inputs that do not need gradients.
fn acc<F: FnOnce(&mut [f64])>(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: F) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(buf);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_value(x: f64) -> f64 {
    sigmoid(x)
}

fn backprop_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[i].value;
    let val = |v: Var| &nodes[v.0].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            acc(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
        }
        Op::Sub(a, b) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            acc(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            acc(nodes, grads, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * bv[k];
                }
            });
            acc(nodes, grads, *b, |gb| {
                for k in 0..g.len() {
                    gb[k] += g[k] * av[k];
                }
            });
        }
        Op::Scale(a, s) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
        }
        Op::ScaleBy(a, s) => {
            let (av, sv) = (val(*a).data(), val(*s).item());
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += sv * y));
            acc(nodes, grads, *s, |gs| gs[0] += dot(g, av));
        }
        Op::Recip(a) => {
            let y = out.data();
            acc(nodes, grads, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] -= g[k] * y[k] * y[k];
                }
            });
        }
        Op::AddScalar(a) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
        }
        Op::AddBias(x, b) => {
            let n = out.shape()[1];
            acc(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += q));
            acc(nodes, grads, *b, |gb| {
                for (r, gbr) in gb.iter_mut().enumerate() {
                    *gbr += g[r * n..(r + 1) * n].iter().sum::<f64>();
                }
            });
        }
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            let (av, bv) = (val(*a).data(), val(*b).data());
            acc(nodes, grads, *a, |ga| {
                for r in 0..m {
                    for j in 0..k {
                        ga[r * k + j] += dot(&g[r * n..(r + 1) * n], &bv[j * n..(j + 1) * n]);
                    }
                }
            });
            acc(nodes, grads, *b, |gb| {
                for r in 0..m {
                    for j in 0..k {
                        let w = av[r * k + j];
                        axpy(w, &g[r * n..(r + 1) * n], &mut gb[j * n..(j + 1) * n]);
                    }
                }
            });
        }
        Op::Linear { x, w, b } => {
            let (cout, cin) = (val(*w).shape()[0], val(*w).shape()[1]);
            let n = out.shape()[1];
            let (xv, wv) = (val(*x).data(), val(*w).data());
            acc(nodes, grads, *x, |gx| {
                for o in 0..cout {
                    let go = &g[o * n..(o + 1) * n];
                    for c in 0..cin {
                        axpy(wv[o * cin + c], go, &mut gx[c * n..(c + 1) * n]);
                    }
                }
            });
            acc(nodes, grads, *w, |gw| {
                for o in 0..cout {
                    let go = &g[o * n..(o + 1) * n];
                    for c in 0..cin {
                        gw[o * cin + c] += dot(go, &xv[c * n..(c + 1) * n]);
                    }
                }
            });
            if let Some(b) = b {
                acc(nodes, grads, *b, |gb| {
                    for o in 0..cout {
                        gb[o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                    }
                });
            }
        }
        Op::Conv1d { x, w, b, depthwise } => {
            let (cin, l) = (val(*x).shape()[0], val(*x).shape()[1]);
            let cout = out.shape()[0];
            let k = *val(*w).shape().last().unwrap();
            let pad = k / 2;
            let (xv, wv) = (val(*x).data(), val(*w).data());
            // (output channel, input channel, weight offset)
            let taps = |o: usize| -> core::ops::Range<usize> {
                if *depthwise {
                    o..o + 1
                } else {
                    0..cin
                }
            };
            let widx = |o: usize, c: usize, j: usize| {
                if *depthwise {
                    o * k + j
                } else {
                    (o * cin + c) * k + j
                }
            };
            acc(nodes, grads, *x, |gx| {
                for o in 0..cout {
                    let go = &g[o * l..(o + 1) * l];
                    for c in taps(o) {
                        for j in 0..k {
                            let wj = wv[widx(o, c, j)];
                            let (t0, t1, s) = shift_range(l, j, pad);
                            // gx[c, t + s] += w * g[o, t]
                            for t in t0..t1 {
                                gx[c * l + (t as isize + s) as usize] += wj * go[t];
                            }
                        }
                    }
                }
            });
            acc(nodes, grads, *w, |gw| {
                for o in 0..cout {
                    let go = &g[o * l..(o + 1) * l];
                    for c in taps(o) {
                        let xc = &xv[c * l..(c + 1) * l];
                        for j in 0..k {
                            let (t0, t1, s) = shift_range(l, j, pad);
                            let mut sum = 0.0;
                            for t in t0..t1 {
                                sum += go[t] * xc[(t as isize + s) as usize];
                            }
                            gw[widx(o, c, j)] += sum;
                        }
                    }
                }
            });
            if let Some(b) = b {
                acc(nodes, grads, *b, |gb| {
                    for o in 0..cout {
                        gb[o] += g[o * l..(o + 1) * l].iter().sum::<f64>();
                    }
                });
            }
        }
        Op::RmsNorm { x, gamma, xhat, inv_rms } => {
            let (c, n) = (out.shape()[0], out.shape()[1]);
            let gv = val(*gamma).data();
            acc(nodes, grads, *gamma, |gg| {
                for r in 0..c {
                    gg[r] += dot(&g[r * n..(r + 1) * n], &xhat[r * n..(r + 1) * n]);
                }
            });
            acc(nodes, grads, *x, |gx| {
                let mut proj = vec![0.0; n];
                for r in 0..c {
                    for j in 0..n {
                        proj[j] += gv[r] * g[r * n + j] * xhat[r * n + j];
                    }
                }
                for r in 0..c {
                    for j in 0..n {
                        let k = r * n + j;
                        gx[k] += inv_rms[j] * (gv[r] * g[k] - xhat[k] * proj[j] / c as f64);
                    }
                }
            });
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let (c, n) = (out.shape()[0], out.shape()[1]);
            let gv = val(*gamma).data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for r in 0..c {
                for j in 0..n {
                    sum_g[r] += g[r * n + j];
                    sum_gx[r] += g[r * n + j] * xhat[r * n + j];
                }
            }
            acc(nodes, grads, *gamma, |gg| {
                for r in 0..c {
                    gg[r] += sum_gx[r];
                }
            });
            acc(nodes, grads, *beta, |gb| {
                for r in 0..c {
                    gb[r] += sum_g[r];
                }
            });
            acc(nodes, grads, *x, |gx| {
                for r in 0..c {
                    let s = gv[r] * inv_std[r];
                    if *train {
                        let nf = n as f64;
                        for j in 0..n {
                            let k = r * n + j;
                            gx[k] += s / nf * (nf * g[k] - sum_g[r] - xhat[k] * sum_gx[r]);
                        }
                    } else {
                        for j in 0..n {
                            gx[r * n + j] += s * g[r * n + j];
                        }
                    }
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            acc(nodes, grads, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            });
        }
        Op::Silu(a) => {
            let xv = val(*a).data();
            acc(nodes, grads, *a, |ga| {
                for k in 0..g.len() {
                    let s = sigmoid(xv[k]);
                    ga[k] += g[k] * s * (1.0 + xv[k] * (1.0 - s));
                }
            });
        }
        Op::Softplus(a) => {
            let xv = val(*a).data();
            acc(nodes, grads, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * sigmoid(xv[k]);
                }
            });
        }
        Op::Exp(a) => {
            let y = out.data();
            acc(nodes, grads, *a, |ga| {
                for k in 0..g.len() {
                    ga[k] += g[k] * y[k];
                }
            });
        }
        Op::Ln { x, floor } => {
            let xv = val(*x).data();
            acc(nodes, grads, *x, |ga| {
                for k in 0..g.len() {
                    if xv[k] > *floor {
                        ga[k] += g[k] / xv[k];
                    }
                }
            });
        }
        Op::Softmax { x, axis } => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            let y = out.data();
            acc(nodes, grads, *x, |gx| {
                if *axis == 1 {
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let s = dot(&g[row.clone()], &y[row]);
                        for j in 0..c {
                            let k = i * c + j;
                            gx[k] += y[k] * (g[k] - s);
                        }
                    }
                } else {
                    for j in 0..c {
                        let s: f64 = (0..r).map(|i| g[i * c + j] * y[i * c + j]).sum();
                        for i in 0..r {
                            let k = i * c + j;
                            gx[k] += y[k] * (g[k] - s);
                        }
                    }
                }
            });
        }
        Op::Embedding { table, ids } => {
            let c = val(*table).shape()[1];
            let n = ids.len();
            acc(nodes, grads, *table, |gt| {
                for (j, &id) in ids.iter().enumerate() {
                    for r in 0..c {
                        gt[id * c + r] += g[r * n + j];
                    }
                }
            });
        }
        Op::Concat { parts, axis } => {
            let cols = out.shape()[1];
            let mut offset = 0;
            for p in parts {
                let (pr, pc) = (val(*p).shape()[0], val(*p).shape()[1]);
                acc(nodes, grads, *p, |gp| {
                    for i in 0..pr {
                        for j in 0..pc {
                            let src = if *axis == 0 {
                                (offset + i) * cols + j
                            } else {
                                i * cols + offset + j
                            };
                            gp[i * pc + j] += g[src];
                        }
                    }
                });
                offset += if *axis == 0 { pr } else { pc };
            }
        }
        Op::Slice { x, axis, start } => {
            let (xr, xc) = (val(*x).shape()[0], val(*x).shape()[1]);
            let (or, oc) = (out.shape()[0], out.shape()[1]);
            let _ = xr;
            acc(nodes, grads, *x, |gx| {
                for i in 0..or {
                    for j in 0..oc {
                        let dst = if *axis == 0 {
                            (start + i) * xc + j
                        } else {
                            i * xc + start + j
                        };
                        gx[dst] += g[i * oc + j];
                    }
                }
            });
        }
        Op::Sum(a) => {
            acc(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            acc(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
        }
        Op::Max(a, arg) => {
            acc(nodes, grads, *a, |ga| ga[*arg] += g[0]);
        }
        Op::GatherCols { x, idx } => {
            let n = val(*x).shape()[1];
            let m = idx.len();
            let r = out.shape()[0];
            acc(nodes, grads, *x, |gx| {
                for i in 0..r {
                    for (j, &src) in idx.iter().enumerate() {
                        gx[i * n + src] += g[i * m + j];
                    }
                }
            });
        }
        Op::SegmentMean { x, seg, counts } => {
            let n = seg.len();
            let s = counts.len();
            let r = out.shape()[0];
            acc(nodes, grads, *x, |gx| {
                for i in 0..r {
                    for (j, &sj) in seg.iter().enumerate() {
                        gx[i * n + j] += g[i * s + sj] / counts[sj] as f64;
                    }
                }
            });
        }
        Op::PickRows { x, rows } => {
            let n = rows.len();
            acc(nodes, grads, *x, |gx| {
                for (j, &r) in rows.iter().enumerate() {
                    gx[r * n + j] += g[j];
                }
            });
        }
        Op::RfftMagnitude { x, spectra } => {
            let l = val(*x).shape()[1];
            let lp = out.shape()[1];
            let mag = out.data();
            acc(nodes, grads, *x, |gx| {
                for (r, spec) in spectra.iter().enumerate() {
                    // d|F_k|/dx_n = Re(conj(F_k) w^{kn}) / |F_k|, summed by an
                    // inverse transform of (g_k / |F_k|) F_k
                    let mut buf: Vec<Complex> = (0..lp)
                        .map(|k| {
                            let m = mag[r * lp + k];
                            if m > 0.0 {
                                spec[k].scale(g[r * lp + k] / m)
                            } else {
                                Complex::ZERO
                            }
                        })
                        .collect();
                    fft::inverse(&mut buf);
                    for t in 0..l {
                        gx[r * l + t] += buf[t].re;
                    }
                }
            });
        }
        Op::Custom { inputs, op } => {
            let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
            let gs = op.backward(&ins, out, g);
            for (v, gi) in inputs.iter().zip(gs) {
                if let Some(gi) = gi {
                    acc(nodes, grads, *v, |buf| {
                        buf.iter_mut().zip(&gi).for_each(|(a, b)| *a += b)
                    });
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Output positions `t0..t1` whose input `t + s` is in range for tap `j`
/// of a zero-padded "same" convolution.
pub(crate) fn shift_range(l: usize, j: usize, pad: usize) -> (usize, usize, isize) {
    let s = j as isize - pad as isize;
    let t0 = if s < 0 { (-s) as usize } else { 0 };
    let t1 = if s > 0 {
        l.saturating_sub(s as usize)
    } else {
        l
    };
    (t0.min(t1), t1, s)
}

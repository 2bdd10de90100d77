//! Selective state-space scan.
//!
//! Per channel `c` and state `n`, with zero-order-hold discretization:
//!
//! ```text
//! a_t = exp(delta[c,t] * A[c,n])
//! h_t = a_t * h_{t-1} + delta[c,t] * B[n,t] * x[c,t]      (h_{-1} = 0)
//! y[c,t] = sum_n C[n,t] * h_t + D[c] * x[c,t]
//! ```
//!
//! `B` and `C` are per step and shared by all channels; `delta` is per step
//! and per channel. Sequences are channels-first `(channels, len)`.
//! [`selective_scan`] is the reference recurrence; [`scan_blocked`] splits
//! the sequence into chunks whose carries are combined afterwards.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Materialized per-step parameters of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanParams {
    pub channels: usize,
    pub state_dim: usize,
    pub len: usize,
    /// `(channels, len)`, positive.
    pub delta: Vec<f64>,
    /// `(channels, state_dim)`, negative.
    pub a: Vec<f64>,
    /// `(state_dim, len)`.
    pub b: Vec<f64>,
    /// `(state_dim, len)`.
    pub c: Vec<f64>,
    /// `(channels)`.
    pub d: Vec<f64>,
}

impl ScanParams {
    fn check(&self, x: &[f64]) -> Result<()> {
        let (ch, n, l) = (self.channels, self.state_dim, self.len);
        let bad = |what: &str| Error::InvalidArgument(alloc::format!("scan params: {what} has wrong length"));
        if l == 0 {
            return Err(Error::InvalidArgument("scan length must be >= 1".into()));
        }
        if x.len() != ch * l {
            return Err(Error::Shape {
                op: "selective_scan",
                left: vec![ch, l],
                right: vec![x.len()],
            });
        }
        if self.delta.len() != ch * l {
            return Err(bad("delta"));
        }
        if self.a.len() != ch * n {
            return Err(bad("A"));
        }
        if self.b.len() != n * l || self.c.len() != n * l {
            return Err(bad("B/C"));
        }
        if self.d.len() != ch {
            return Err(bad("D"));
        }
        Ok(())
    }

    /// First step holding a non-finite input, step-major.
    fn first_non_finite(&self, x: &[f64]) -> Option<(usize, usize)> {
        let (ch, n, l) = (self.channels, self.state_dim, self.len);
        if let Some(c) = (0..ch).find(|&c| !self.d[c].is_finite() || (0..n).any(|k| !self.a[c * n + k].is_finite())) {
            return Some((0, c));
        }
        for t in 0..l {
            for c in 0..ch {
                if !x[c * l + t].is_finite() || !self.delta[c * l + t].is_finite() {
                    return Some((t, c));
                }
            }
            if (0..n).any(|k| !self.b[k * l + t].is_finite() || !self.c[k * l + t].is_finite()) {
                return Some((t, 0));
            }
        }
        None
    }

    fn validate(&self, x: &[f64]) -> Result<()> {
        self.check(x)?;
        match self.first_non_finite(x) {
            Some((step, channel)) => Err(Error::NonFinite { step, channel }),
            None => Ok(()),
        }
    }
}

/// Runs steps `t0..t1` from state `h`, writing outputs and optionally
/// every intermediate state.
fn run_steps(
    x: &[f64],
    p: &ScanParams,
    h: &mut [f64],
    t0: usize,
    t1: usize,
    y: &mut [f64],
    mut states: Option<&mut [f64]>,
) {
    let (ch, n, l) = (p.channels, p.state_dim, p.len);
    for t in t0..t1 {
        for c in 0..ch {
            let xt = x[c * l + t];
            let dt = p.delta[c * l + t];
            let hc = &mut h[c * n..(c + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                let decay = libm::exp(dt * p.a[c * n + k]);
                hc[k] = decay * hc[k] + dt * p.b[k * l + t] * xt;
                acc += p.c[k * l + t] * hc[k];
            }
            y[c * l + t] = acc + p.d[c] * xt;
        }
        if let Some(s) = states.as_deref_mut() {
            s[t * ch * n..(t + 1) * ch * n].copy_from_slice(h);
        }
    }
}

/// Reference recurrence over the whole sequence.
pub fn selective_scan(x: &[f64], p: &ScanParams) -> Result<Vec<f64>> {
    p.validate(x)?;
    let mut h = vec![0.0; p.channels * p.state_dim];
    let mut y = vec![0.0; x.len()];
    run_steps(x, p, &mut h, 0, p.len, &mut y, None);
    Ok(y)
}

/// Chunked scan: each chunk first runs from a zero state while tracking
/// its cumulative decay, is then replayed from its true incoming state,
/// and finally folds its summary into the carry for the next chunk.
///
/// A chunk's summary does not depend on any other chunk, and its incoming
/// state depends only on earlier summaries. Chunks are processed in order
/// so each one is replayed while still cache-resident. With
/// `block >= len` this performs exactly the reference arithmetic.
pub fn scan_blocked(x: &[f64], p: &ScanParams, block: usize) -> Result<Vec<f64>> {
    p.validate(x)?;
    if block == 0 {
        return Err(Error::InvalidArgument("block length must be >= 1".into()));
    }
    let (ch, n, l) = (p.channels, p.state_dim, p.len);
    let width = ch * n;
    let mut y = vec![0.0; x.len()];
    let mut carry = vec![0.0; width];
    let mut local = vec![0.0; width];
    let mut prod = vec![0.0; width];
    let mut h = vec![0.0; width];
    for s in (0..l).step_by(block) {
        let e = (s + block).min(l);
        // local end state and decay product from a zero state
        local.fill(0.0);
        prod.fill(1.0);
        for t in s..e {
            for c in 0..ch {
                let xt = x[c * l + t];
                let dt = p.delta[c * l + t];
                for k in 0..n {
                    let i = c * n + k;
                    let decay = libm::exp(dt * p.a[i]);
                    local[i] = decay * local[i] + dt * p.b[k * l + t] * xt;
                    prod[i] *= decay;
                }
            }
        }
        // replay from the incoming state, then advance the carry
        h.copy_from_slice(&carry);
        run_steps(x, p, &mut h, s, e, &mut y, None);
        for i in 0..width {
            carry[i] = local[i] + prod[i] * carry[i];
        }
    }
    Ok(y)
}

/// Gradients of a scan with respect to each of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrads {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Forward pass keeping every hidden state, `(len, channels, state_dim)`.
pub fn scan_with_states(x: &[f64], p: &ScanParams) -> Result<(Vec<f64>, Vec<f64>)> {
    p.validate(x)?;
    let mut h = vec![0.0; p.channels * p.state_dim];
    let mut y = vec![0.0; x.len()];
    let mut states = vec![0.0; p.len * p.channels * p.state_dim];
    run_steps(x, p, &mut h, 0, p.len, &mut y, Some(&mut states));
    Ok((y, states))
}

/// Reverse sweep of the recurrence given stored states and `d loss / d y`.
pub fn scan_backward(x: &[f64], p: &ScanParams, states: &[f64], gy: &[f64]) -> ScanGrads {
    let (ch, n, l) = (p.channels, p.state_dim, p.len);
    let width = ch * n;
    let mut g = ScanGrads {
        x: vec![0.0; ch * l],
        delta: vec![0.0; ch * l],
        a: vec![0.0; width],
        b: vec![0.0; n * l],
        c: vec![0.0; n * l],
        d: vec![0.0; ch],
    };
    let mut gh = vec![0.0; width];
    let zeros = vec![0.0; width];
    for t in (0..l).rev() {
        let h_t = &states[t * width..(t + 1) * width];
        let h_prev = if t > 0 {
            &states[(t - 1) * width..t * width]
        } else {
            &zeros[..]
        };
        for c in 0..ch {
            let xt = x[c * l + t];
            let dt = p.delta[c * l + t];
            let gyt = gy[c * l + t];
            g.d[c] += gyt * xt;
            g.x[c * l + t] += gyt * p.d[c];
            for k in 0..n {
                let i = c * n + k;
                gh[i] += gyt * p.c[k * l + t];
                g.c[k * l + t] += gyt * h_t[i];
                let decay = libm::exp(dt * p.a[i]);
                let bt = p.b[k * l + t];
                let d_decay = gh[i] * h_prev[i];
                g.delta[c * l + t] += d_decay * decay * p.a[i] + gh[i] * bt * xt;
                g.a[i] += d_decay * decay * dt;
                g.b[k * l + t] += gh[i] * dt * xt;
                g.x[c * l + t] += gh[i] * dt * bt;
                gh[i] *= decay;
            }
        }
    }
    g
}

struct ScanOp {
    params: Option<ScanParams>,
    states: Vec<f64>,
}

fn params_from(inputs: &[&Tensor]) -> Result<ScanParams> {
    let (channels, len) = inputs[0].dims2("selective_scan")?;
    let (_, state_dim) = inputs[2].dims2("selective_scan A")?;
    Ok(ScanParams {
        channels,
        state_dim,
        len,
        delta: inputs[1].data().to_vec(),
        a: inputs[2].data().to_vec(),
        b: inputs[3].data().to_vec(),
        c: inputs[4].data().to_vec(),
        d: inputs[5].data().to_vec(),
    })
}

impl CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let p = params_from(inputs)?;
        let (y, states) = scan_with_states(inputs[0].data(), &p)?;
        let out = Tensor::matrix(p.channels, p.len, y)?;
        self.states = states;
        self.params = Some(p);
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = self.params.as_ref().expect("forward ran");
        let g = scan_backward(inputs[0].data(), p, &self.states, grad);
        vec![Some(g.x), Some(g.delta), Some(g.a), Some(g.b), Some(g.c), Some(g.d)]
    }
}

/// Records a scan on the tape. Shapes: `x, delta (channels, len)`,
/// `a (channels, state)`, `b, c (state, len)`, `d (channels)`.
pub fn scan_op(tape: &mut Tape, x: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> Result<Var> {
    tape.custom(
        &[x, delta, a, b, c, d],
        Box::new(ScanOp {
            params: None,
            states: Vec::new(),
        }),
    )
}

/// Learnable selective SSM layer weights.
#[derive(Debug, Clone, Copy)]
pub struct SsmWeights {
    /// `(channels, channels)` and `(channels)`: step size projection.
    pub w_delta: Var,
    pub b_delta: Var,
    /// `(state, channels)`.
    pub w_b: Var,
    /// `(state, channels)`.
    pub w_c: Var,
    /// `(channels, state)`; `A = -exp(a_log)` stays negative.
    pub a_log: Var,
    /// `(channels)`.
    pub d: Var,
}

/// Input-dependent SSM over `u (channels, len)`:
/// `delta = softplus(W_delta u + b)`, `B = W_B u`, `C = W_C u`.
pub fn selective_ssm(tape: &mut Tape, u: Var, w: &SsmWeights) -> Result<Var> {
    let delta = tape.linear(u, w.w_delta, Some(w.b_delta))?;
    let delta = tape.softplus(delta);
    let b = tape.linear(u, w.w_b, None)?;
    let c = tape.linear(u, w.w_c, None)?;
    let a = tape.exp(w.a_log);
    let a = tape.scale(a, -1.0);
    scan_op(tape, u, delta, a, b, c, w.d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(len: usize) -> ScanParams {
        ScanParams {
            channels: 1,
            state_dim: 1,
            len,
            delta: vec![1.0; len],
            a: vec![-1.0],
            b: vec![1.0; len],
            c: vec![1.0; len],
            d: vec![0.0],
        }
    }

    #[test]
    fn single_step() {
        let y = selective_scan(&[2.0], &scalar_params(1)).unwrap();
        assert_eq!(y, [2.0]);
    }

    #[test]
    fn decays_by_exp_minus_one() {
        let y = selective_scan(&[1.0, 0.0], &scalar_params(2)).unwrap();
        assert_eq!(y[0], 1.0);
        assert!((y[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((y[1] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn zero_input_zero_output() {
        let mut p = scalar_params(5);
        p.d = vec![3.0];
        assert!(selective_scan(&[0.0; 5], &p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_block_is_exact() {
        let p = scalar_params(4);
        let x = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(selective_scan(&x, &p).unwrap(), scan_blocked(&x, &p, 4).unwrap());
        assert_eq!(selective_scan(&x, &p).unwrap(), scan_blocked(&x, &p, 100).unwrap());
    }

    #[test]
    fn non_finite_input_names_step() {
        let p = scalar_params(4);
        let err = selective_scan(&[0.0, 1.0, f64::NAN, 0.0], &p).unwrap_err();
        assert_eq!(err, Error::NonFinite { step: 2, channel: 0 });
        assert!(scan_blocked(&[0.0, f64::INFINITY, 0.0, 0.0], &p, 2).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = scalar_params(4);
        assert!(selective_scan(&[0.0; 3], &p).is_err());
        assert!(scan_blocked(&[0.0; 4], &p, 0).is_err());
    }
}

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{axpy, shift_range, sigmoid_value, CustomOp, Op, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::fft::{self, Complex};

/// Batch statistics produced by [`Tape::batchnorm1d`] in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-average updates.
    pub var: Vec<f64>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2(op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(x.shape(), data).unwrap();
        self.push(t, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape(), data).unwrap();
        self.push(t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |p, q| p + q, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |p, q| p - q, Op::Sub(a, b)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |p, q| p * q, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |v| v * s, Op::Scale(a, s))
    }

    /// Multiplies every entry of `a` by the scalar tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(shape_err("scale_by", self.shape(a), self.shape(s)));
        }
        let sv = self.value(s).item();
        Ok(self.zip_scalar(a, s, sv))
    }

    fn zip_scalar(&mut self, a: Var, s: Var, sv: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v * sv).collect();
        let t = Tensor::new(x.shape(), data).unwrap();
        self.push(t, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, |v| 1.0 / v, Op::Recip(a))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v + c, Op::AddScalar(a))
    }

    /// Adds `b[r]` to every entry of row `r` of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, n) = self.dims2("add_bias", x)?;
        if self.value(b).len() != r {
            return Err(shape_err("add_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            data[i * n..(i + 1) * n].iter_mut().for_each(|v| *v += bv[i]);
        }
        let t = Tensor::matrix(r, n, data)?;
        Ok(self.push(t, Op::AddBias(x, b), &[x, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            for j in 0..k {
                axpy(av[r * k + j], &bv[j * n..(j + 1) * n], &mut data[r * n..(r + 1) * n]);
            }
        }
        let t = Tensor::matrix(m, n, data)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// `w (out, in) * x (in, n) + b (out)` on channels-first features.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (cin, n) = self.dims2("linear", x)?;
        let (cout, cin2) = self.dims2("linear", w)?;
        if cin != cin2 {
            return Err(shape_err("linear", self.shape(w), self.shape(x)));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(shape_err("linear bias", self.shape(w), self.shape(b)));
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut data = vec![0.0; cout * n];
        for o in 0..cout {
            let row = &mut data[o * n..(o + 1) * n];
            if let Some(b) = b {
                row.fill(self.value(b).data()[o]);
            }
            for c in 0..cin {
                axpy(wv[o * cin + c], &xv[c * n..(c + 1) * n], row);
            }
        }
        let t = Tensor::matrix(cout, n, data)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b }, &ins))
    }

    /// Zero-padded "same" 1D convolution over `x (channels, length)`.
    ///
    /// Dense kernels are `(out, in, k)`; depthwise kernels are
    /// `(channels, k)`. `k` must be odd.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (cin, l) = self.dims2("conv1d", x)?;
        let ws = self.shape(w).to_vec();
        let (depthwise, cout, k) = match *ws.as_slice() {
            [c, k] if c == cin => (true, c, k),
            [o, c, k] if c == cin => (false, o, k),
            _ => return Err(shape_err("conv1d", &ws, self.shape(x))),
        };
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "conv1d kernel size must be odd, got {k}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(shape_err("conv1d bias", &ws, self.shape(b)));
            }
        }
        let pad = k / 2;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut data = vec![0.0; cout * l];
        for o in 0..cout {
            let row = &mut data[o * l..(o + 1) * l];
            if let Some(b) = b {
                row.fill(self.value(b).data()[o]);
            }
            let chans = if depthwise { o..o + 1 } else { 0..cin };
            for c in chans {
                let xc = &xv[c * l..(c + 1) * l];
                for j in 0..k {
                    let wj = if depthwise {
                        wv[o * k + j]
                    } else {
                        wv[(o * cin + c) * k + j]
                    };
                    let (t0, t1, s) = shift_range(l, j, pad);
                    for t in t0..t1 {
                        row[t] += wj * xc[(t as isize + s) as usize];
                    }
                }
            }
        }
        let t = Tensor::matrix(cout, l, data)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(t, Op::Conv1d { x, w, b, depthwise }, &ins))
    }

    /// Per-channel normalization of `x (channels, n)` over the `n` axis.
    ///
    /// In training mode the batch statistics are used and returned so the
    /// caller can update its running averages; otherwise `running_mean` and
    /// `running_var` are applied and the op is affine in `x`.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (c, n) = self.dims2("batchnorm1d", x)?;
        for v in [gamma, beta] {
            if self.value(v).len() != c {
                return Err(shape_err("batchnorm1d", self.shape(x), self.shape(v)));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batchnorm1d running stats", self.shape(x), &[running_mean.len()]));
        }
        let train = self.is_training();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for r in 0..c {
                let row = &xv[r * n..(r + 1) * n];
                let m = row.iter().sum::<f64>() / n as f64;
                mean[r] = m;
                var[r] = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            }
        } else {
            mean.copy_from_slice(running_mean);
            var.copy_from_slice(running_var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let mut xhat = vec![0.0; c * n];
        let mut data = vec![0.0; c * n];
        for r in 0..c {
            for j in 0..n {
                let k = r * n + j;
                xhat[k] = (xv[k] - mean[r]) * inv_std[r];
                data[k] = gv[r] * xhat[k] + bv[r];
            }
        }
        let stats = train.then(|| BatchStats {
            var: var
                .iter()
                .map(|v| if n > 1 { v * n as f64 / (n - 1) as f64 } else { *v })
                .collect(),
            mean,
        });
        let t = Tensor::matrix(c, n, data)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        Ok((self.push(t, op, &[x, gamma, beta]), stats))
    }

    /// Scales every column of `x (channels, n)` to unit root-mean-square
    /// over channels, then by `gamma (channels)`. No batch statistics.
    pub fn rms_norm(&mut self, x: Var, gamma: Var, eps: f64) -> Result<Var> {
        let (c, n) = self.dims2("rms_norm", x)?;
        if self.value(gamma).len() != c {
            return Err(shape_err("rms_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let mut ms = vec![0.0; n];
        for r in 0..c {
            for j in 0..n {
                ms[j] += xv[r * n + j] * xv[r * n + j];
            }
        }
        let inv_rms: Vec<f64> = ms.iter().map(|m| 1.0 / libm::sqrt(m / c as f64 + eps)).collect();
        let mut xhat = vec![0.0; c * n];
        let mut data = vec![0.0; c * n];
        for r in 0..c {
            for j in 0..n {
                let k = r * n + j;
                xhat[k] = xv[k] * inv_rms[j];
                data[k] = gv[r] * xhat[k];
            }
        }
        let t = Tensor::matrix(c, n, data)?;
        Ok(self.push(t, Op::RmsNorm { x, gamma, xhat, inv_rms }, &[x, gamma]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid_value, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |v| v * sigmoid_value(v), Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(
            a,
            |v| v.max(0.0) + libm::log1p(libm::exp(-v.abs())),
            Op::Softplus(a),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, libm::exp, Op::Exp(a))
    }

    /// `ln(max(x, floor))`; no gradient flows where `x <= floor`.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, move |v| libm::log(v.max(floor)), Op::Ln { x: a, floor })
    }

    /// Softmax of a rank-2 tensor along `axis` (0 normalizes each column).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2("softmax", x)?;
        if axis > 1 {
            return Err(Error::InvalidArgument(alloc::format!("softmax axis {axis}")));
        }
        let xv = self.value(x).data();
        let mut data = vec![0.0; r * c];
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
        for o in 0..outer {
            let idx = |i: usize| o * stride_o + i * stride_i;
            let m = (0..inner).map(|i| xv[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for i in 0..inner {
                let e = libm::exp(xv[idx(i)] - m);
                data[idx(i)] = e;
                s += e;
            }
            for i in 0..inner {
                data[idx(i)] /= s;
            }
        }
        let t = Tensor::matrix(r, c, data)?;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Rows of `table (vocab, channels)` for each id, as `(channels, n)`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, c) = self.dims2("embedding", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Range {
                what: "embedding id",
                value: bad as u64,
                limit: vocab.saturating_sub(1) as u64,
            });
        }
        let tv = self.value(table).data();
        let n = ids.len();
        let mut data = vec![0.0; c * n];
        for (j, &id) in ids.iter().enumerate() {
            for r in 0..c {
                data[r * n + j] = tv[id * c + r];
            }
        }
        let t = Tensor::matrix(c, n, data)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Concatenates rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidArgument("concat needs parts and axis 0|1".into()));
        }
        let (r0, c0) = self.dims2("concat", parts[0])?;
        let (mut rows, mut cols) = (r0, c0);
        for &p in &parts[1..] {
            let (r, c) = self.dims2("concat", p)?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(shape_err("concat", self.shape(parts[0]), self.shape(p)));
            }
            if axis == 0 {
                rows += r;
            } else {
                cols += c;
            }
        }
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat", p)?;
            let pv = self.value(p).data();
            for i in 0..r {
                let dst = if axis == 0 {
                    (offset + i) * cols
                } else {
                    i * cols + offset
                };
                data[dst..dst + c].copy_from_slice(&pv[i * c..(i + 1) * c]);
            }
            offset += if axis == 0 { r } else { c };
        }
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// `start..end` along `axis` of a rank-2 tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice", x)?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || start > end || end > extent {
            return Err(Error::InvalidArgument(alloc::format!(
                "slice {start}..{end} on axis {axis} of {:?}",
                self.shape(x)
            )));
        }
        let xv = self.value(x).data();
        let (or, oc) = if axis == 0 { (end - start, c) } else { (r, end - start) };
        let mut data = Vec::with_capacity(or * oc);
        for i in 0..or {
            if axis == 0 {
                data.extend_from_slice(&xv[(start + i) * c..(start + i + 1) * c]);
            } else {
                data.extend_from_slice(&xv[i * c + start..i * c + end]);
            }
        }
        let t = Tensor::matrix(or, oc, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Largest entry; the gradient goes to the first maximizer.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a).data();
        if x.is_empty() {
            return Err(Error::InvalidArgument("max of empty tensor".into()));
        }
        let (arg, m) = x
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        Ok(self.push(Tensor::scalar(m), Op::Max(a, arg), &[a]))
    }

    /// Columns `idx` of `x (rows, n)`; indices may repeat.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, n) = self.dims2("gather_cols", x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Range {
                what: "column index",
                value: bad as u64,
                limit: n.saturating_sub(1) as u64,
            });
        }
        let xv = self.value(x).data();
        let m = idx.len();
        let mut data = vec![0.0; r * m];
        for i in 0..r {
            let src = &xv[i * n..(i + 1) * n];
            for (j, &s) in idx.iter().enumerate() {
                data[i * m + j] = src[s];
            }
        }
        let t = Tensor::matrix(r, m, data)?;
        Ok(self.push(
            t,
            Op::GatherCols {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Mean of the columns of `x` sharing a segment id, `(rows, segments)`.
    /// Empty segments produce zeros.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let (r, n) = self.dims2("segment_mean", x)?;
        if seg.len() != n {
            return Err(shape_err("segment_mean", self.shape(x), &[seg.len()]));
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= segments) {
            return Err(Error::Range {
                what: "segment id",
                value: bad as u64,
                limit: segments.saturating_sub(1) as u64,
            });
        }
        let mut counts = vec![0usize; segments];
        for &s in seg {
            counts[s] += 1;
        }
        let xv = self.value(x).data();
        let mut data = vec![0.0; r * segments];
        for i in 0..r {
            for (j, &s) in seg.iter().enumerate() {
                data[i * segments + s] += xv[i * n + j];
            }
            for s in 0..segments {
                if counts[s] > 0 {
                    data[i * segments + s] /= counts[s] as f64;
                }
            }
        }
        let t = Tensor::matrix(r, segments, data)?;
        Ok(self.push(
            t,
            Op::SegmentMean {
                x,
                seg: seg.to_vec(),
                counts,
            },
            &[x],
        ))
    }

    /// `out[0, j] = x[rows[j], j]`.
    pub fn pick_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, n) = self.dims2("pick_rows", x)?;
        if rows.len() != n {
            return Err(shape_err("pick_rows", self.shape(x), &[rows.len()]));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Range {
                what: "row index",
                value: bad as u64,
                limit: r.saturating_sub(1) as u64,
            });
        }
        let xv = self.value(x).data();
        let data = rows.iter().enumerate().map(|(j, &i)| xv[i * n + j]).collect();
        let t = Tensor::row(data);
        Ok(self.push(
            t,
            Op::PickRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// Magnitude spectrum of each row, zero-padded to the next power of
    /// two. The output has `padded_len(n)` bins per row with the unnormalized
    /// convention of [`crate::fft`].
    pub fn rfft_magnitude(&mut self, x: Var) -> Result<Var> {
        let (r, l) = self.dims2("rfft_magnitude", x)?;
        let lp = fft::padded_len(l);
        let xv = self.value(x).data();
        let mut spectra: Vec<Vec<Complex>> = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * lp);
        for i in 0..r {
            let spec = fft::real_spectrum(&xv[i * l..(i + 1) * l]);
            data.extend(spec.iter().map(|c| c.norm()));
            spectra.push(spec);
        }
        let t = Tensor::matrix(r, lp, data)?;
        Ok(self.push(t, Op::RfftMagnitude { x, spectra }, &[x]))
    }

    /// Records a user-defined op.
    pub fn custom(&mut self, inputs: &[Var], mut op: Box<dyn CustomOp>) -> Result<Var> {
        let out = {
            let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&ins)?
        };
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        ))
    }
}

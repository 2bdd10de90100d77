use alloc::format;

use super::config::NetworkConfig;
use super::params::Session;
use super::{conv, linear};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::ssm::{selective_ssm, SsmWeights};

/// Per-window mean of `f (C, N)` broadcast back to every event, stacked
/// under the pointwise features and projected back to `C` channels.
pub fn reversed_aggregation(
    tape: &mut Tape,
    s: &mut Session,
    path: &str,
    f: Var,
    window_ids: &[usize],
    num_windows: usize,
) -> Result<Var> {
    let means = tape.segment_mean(f, window_ids, num_windows)?;
    let spread = tape.gather_cols(means, window_ids)?;
    let both = tape.concat(&[f, spread], 0)?;
    linear(tape, s, path, both)
}

/// Each event's feature minus the mean feature of the previous window.
/// The first window, and any window after an empty one, subtracts zero.
fn motion(tape: &mut Tape, r: Var, window_ids: &[usize], num_windows: usize) -> Result<Var> {
    let c = tape.shape(r)[0];
    let zero = tape.constant(Tensor::zeros(&[c, 1]));
    let prev = if num_windows > 1 {
        let means = tape.segment_mean(r, window_ids, num_windows)?;
        let head = tape.slice(means, 1, 0, num_windows - 1)?;
        tape.concat(&[zero, head], 1)?
    } else {
        zero
    };
    let prev = tape.gather_cols(prev, window_ids)?;
    tape.sub(r, prev)
}

/// One multi-scale state-space block over `f (C, N)` in scan order.
///
/// ```text
/// r      = RA(f)
/// intra  = silu(dwconv(r))
/// inter  = dwconv(r - prev_window_mean(r))
/// fuse   = sigmoid(inter) * intra + inter
/// dual   = SSM(silu(fuse)) * sigmoid(linear(f))
/// f_0    = conv_k0(linear(r)),  f_i = silu(conv_ki(f_{i-1}))
/// ms     = silu(sum_i f_i)
/// out    = linear(ms + dual)
/// ```
///
/// Without the multi-scale pathway the block reduces to `linear(dual)`.
pub fn ms3m_forward(
    tape: &mut Tape,
    s: &mut Session,
    cfg: &NetworkConfig,
    path: &str,
    f: Var,
    window_ids: &[usize],
    num_windows: usize,
) -> Result<Var> {
    let r = reversed_aggregation(tape, s, &format!("{path}.ra"), f, window_ids, num_windows)?;

    let intra = conv(tape, s, &format!("{path}.intra_conv"), r, true)?;
    let intra = tape.silu(intra);
    let m = motion(tape, r, window_ids, num_windows)?;
    let inter = conv(tape, s, &format!("{path}.inter_conv"), m, true)?;

    let weight = tape.sigmoid(inter);
    let fuse = tape.mul(weight, intra)?;
    let fuse = tape.add(fuse, inter)?;
    let u = tape.silu(fuse);
    let w = SsmWeights {
        w_delta: s.get(tape, &format!("{path}.ssm.w_delta"))?,
        b_delta: s.get(tape, &format!("{path}.ssm.b_delta"))?,
        w_b: s.get(tape, &format!("{path}.ssm.w_b"))?,
        w_c: s.get(tape, &format!("{path}.ssm.w_c"))?,
        a_log: s.get(tape, &format!("{path}.ssm.a_log"))?,
        d: s.get(tape, &format!("{path}.ssm.d"))?,
    };
    let y = selective_ssm(tape, u, &w)?;
    let gate = linear(tape, s, &format!("{path}.gate"), f)?;
    let gate = tape.sigmoid(gate);
    let dual = tape.mul(y, gate)?;

    let fused = if cfg.use_ms3m {
        let mut fi = linear(tape, s, &format!("{path}.ms.proj"), r)?;
        fi = conv(tape, s, &format!("{path}.ms.conv0"), fi, true)?;
        let mut sum = None;
        for i in 1..=cfg.ms3m.kernels.len() {
            let next = conv(tape, s, &format!("{path}.ms.conv{i}"), fi, true)?;
            fi = tape.silu(next);
            sum = Some(match sum {
                None => fi,
                Some(acc) => tape.add(acc, fi)?,
            });
        }
        let ms = tape.silu(sum.expect("kernel list is non-empty"));
        tape.add(ms, dual)?
    } else {
        dual
    };
    linear(tape, s, &format!("{path}.out"), fused)
}

use alloc::vec::Vec;

use super::config::NetworkConfig;
use super::params::{Session, BN_EPS};
use super::{conv, linear};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::events::EventCloud4D;

/// Per-event input channels `(x/W, y/H, z, p)` as a `(4, N)` tensor, plus
/// window ids, both in flattened order. Polarity stays at ±1.
pub fn point_features(cloud: &EventCloud4D) -> (Tensor, Vec<usize>) {
    let n = cloud.num_events();
    let (w, h) = (cloud.sensor_width as f64, cloud.sensor_height as f64);
    let mut data = alloc::vec![0.0; 4 * n];
    let mut windows = Vec::with_capacity(n);
    let mut j = 0;
    for win in &cloud.windows {
        for (e, &z) in win.events.iter().zip(&win.z) {
            data[j] = e.x as f64 / w;
            data[n + j] = e.y as f64 / h;
            data[2 * n + j] = z;
            data[3 * n + j] = e.p.sign() as f64;
            windows.push(win.index);
            j += 1;
        }
    }
    (Tensor::matrix(4, n, data).expect("4 x n"), windows)
}

/// Spatio-temporal decoupling and fusion over a serialized sequence.
///
/// `points` is `(4, N)` in scan order and `window_ids` the matching window
/// ordinals. Returns `(C, N)` with `C` the first encoder width.
///
/// ```text
/// f_s   = proj(dwconv(points))          spatial
/// f_t   = embed(T_n)                    window embedding
/// intra = conv(z)                       within-window time
/// inter = dwconv over the embedding table, gathered by T_n
/// out   = silu(BN(conv(f_s + f_t + f_s * (intra + inter))))
/// ```
///
/// With the front-end disabled the output is `linear(f_s + f_t)`.
pub fn stdf_forward(
    tape: &mut Tape,
    s: &mut Session,
    cfg: &NetworkConfig,
    points: Var,
    window_ids: &[usize],
) -> Result<Var> {
    let fs = conv(tape, s, "stdf.spatial_conv", points, true)?;
    let fs = linear(tape, s, "stdf.spatial_proj", fs)?;
    let table = s.get(tape, "stdf.time_embed.weight")?;
    let ft = tape.embedding(table, window_ids)?;
    let base = tape.add(fs, ft)?;
    if !cfg.use_stdf {
        return linear(tape, s, "stdf.naive_proj", base);
    }

    let z = tape.slice(points, 0, 2, 3)?;
    let intra = conv(tape, s, "stdf.intra_conv", z, true)?;

    let all: Vec<usize> = (0..cfg.stdf.window_embed).collect();
    let per_window = tape.embedding(table, &all)?;
    let per_window = conv(tape, s, "stdf.inter_conv", per_window, true)?;
    let inter = tape.gather_cols(per_window, window_ids)?;

    let temporal = tape.add(intra, inter)?;
    let modulated = tape.mul(fs, temporal)?;
    let r = tape.add(base, modulated)?;
    let r = conv(tape, s, "stdf.fuse_conv", r, false)?;

    let gamma = s.get(tape, "stdf.bn.weight")?;
    let beta = s.get(tape, "stdf.bn.bias")?;
    let rm = s.buffer("stdf.bn.running_mean")?.data();
    let rv = s.buffer("stdf.bn.running_var")?.data();
    let (r, stats) = tape.batchnorm1d(r, gamma, beta, rm, rv, BN_EPS)?;
    if let Some(stats) = stats {
        s.record_bn("stdf.bn", stats);
    }
    Ok(tape.silu(r))
}

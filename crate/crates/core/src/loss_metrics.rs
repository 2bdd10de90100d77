//! Training objective and evaluation metrics.
//!
//! The objective is cross-entropy plus a frequency regularizer that compares
//! the spectrum of the predicted rain-probability sequence with the spectrum
//! of the label sequence, both taken in serialized event order:
//!
//! ```text
//! fft = mean_i ( |F(P)_i - F(Y)_i| / max(max_j |F(P)_j - F(Y)_j|, eps) + eps' )^2
//! ```
//!
//! Because the transform is linear, `F(P) - F(Y) = F(P - Y)` and a single
//! magnitude spectrum of the difference is taken. Sequences are zero-padded
//! to a power of two and the mean runs over the padded bins.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fft;

/// Floor applied to the true-class probability before the logarithm.
pub const CE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossConfig {
    /// Weight of the frequency term.
    pub lambda: f64,
    /// Floor on the normalizing maximum.
    pub eps: f64,
    /// Offset added to every normalized bin.
    pub eps_prime: f64,
    /// Treat the normalizing maximum as a constant during backpropagation.
    pub detach_max: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            eps: 1e-8,
            eps_prime: 1e-3,
            detach_max: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.eps > 0.0) || !(self.eps_prime > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "loss config needs lambda >= 0 and eps, eps' > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Mean negative log-probability of the true class. `probs` is `(2, n)`.
pub fn ce_loss(tape: &mut Tape, probs: Var, labels: &[u8]) -> Result<Var> {
    let picked = tape.pick_rows(probs, &labels.iter().map(|&l| l as usize).collect::<Vec<_>>())?;
    let logs = tape.ln_clamped(picked, CE_FLOOR);
    let m = tape.mean(logs);
    Ok(tape.scale(m, -1.0))
}

/// Frequency regularizer between a rain-probability row `p (1, L)` and
/// binary labels `y`.
pub fn fft_loss(tape: &mut Tape, p: Var, y: &[f64], cfg: &LossConfig) -> Result<Var> {
    let (rows, len) = tape.value(p).dims2("fft_loss")?;
    if len == 0 || rows != 1 {
        return Err(Error::InvalidArgument(alloc::format!(
            "fft_loss needs a non-empty (1, L) row, got {:?}",
            tape.shape(p)
        )));
    }
    if y.len() != len {
        return Err(Error::Shape {
            op: "fft_loss",
            left: alloc::vec![1, len],
            right: alloc::vec![y.len()],
        });
    }
    let yv = tape.constant(Tensor::row(y.to_vec()));
    let diff = tape.sub(p, yv)?;
    let mag = tape.rfft_magnitude(diff)?;
    let ratio = if cfg.detach_max {
        let m = tape.value(mag).data().iter().copied().fold(0.0, f64::max);
        tape.scale(mag, 1.0 / m.max(cfg.eps))
    } else {
        let m = tape.max(mag)?;
        let den = if tape.value(m).item() > cfg.eps {
            m
        } else {
            tape.constant(Tensor::scalar(cfg.eps))
        };
        let inv = tape.recip(den);
        tape.scale_by(mag, inv)?
    };
    let shifted = tape.add_scalar(ratio, cfg.eps_prime);
    let sq = tape.mul(shifted, shifted)?;
    Ok(tape.mean(sq))
}

/// Contiguous `[start, end)` runs of equal window id.
pub fn window_segments(window_ids: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=window_ids.len() {
        if i == window_ids.len() || window_ids[i] != window_ids[start] {
            if i > start {
                out.push((start, i));
            }
            start = i;
        }
    }
    out
}

/// [`fft_loss`] per segment of a serialized row, averaged over segments.
pub fn windowed_fft_loss(
    tape: &mut Tape,
    p: Var,
    y: &[f64],
    segments: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<Var> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("no windows for fft_loss".into()));
    }
    let mut parts = Vec::with_capacity(segments.len());
    for &(s, e) in segments {
        let ps = tape.slice(p, 1, s, e)?;
        parts.push(fft_loss(tape, ps, &y[s..e], cfg)?);
    }
    let mut total = parts[0];
    for &v in &parts[1..] {
        total = tape.add(total, v)?;
    }
    Ok(tape.scale(total, 1.0 / parts.len() as f64))
}

/// Loss value and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub ce: f64,
    /// `None` when the frequency term is disabled.
    pub fft: Option<f64>,
}

/// `ce + lambda * fft`.
///
/// `probs (2, n)` and `labels` are in input order; `order` is the
/// serialization used for the spectral term and `segments` the window runs
/// in that order. With `use_fft` off or `lambda == 0` the result is the
/// cross-entropy node itself.
pub fn total_loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[u8],
    order: &[usize],
    segments: &[(usize, usize)],
    cfg: &LossConfig,
    use_fft: bool,
) -> Result<LossParts> {
    cfg.validate()?;
    let ce = ce_loss(tape, probs, labels)?;
    let ce_val = tape.value(ce).item();
    if !use_fft || cfg.lambda == 0.0 {
        return Ok(LossParts {
            total: ce,
            ce: ce_val,
            fft: None,
        });
    }
    let rain = tape.slice(probs, 0, 1, 2)?;
    let serialized = tape.gather_cols(rain, order)?;
    let y: Vec<f64> = order.iter().map(|&i| labels[i] as f64).collect();
    let f = windowed_fft_loss(tape, serialized, &y, segments, cfg)?;
    let fft_val = tape.value(f).item();
    let weighted = tape.scale(f, cfg.lambda);
    let total = tape.add(ce, weighted)?;
    Ok(LossParts {
        total,
        ce: ce_val,
        fft: Some(fft_val),
    })
}

/// Confusion counts with class 0 = background and class 1 = rain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Confusion {
    /// Background events predicted as background.
    pub pb: u64,
    /// All background events.
    pub tb: u64,
    /// Rain events predicted as rain.
    pub pr: u64,
    /// All rain events.
    pub tr: u64,
}

impl Confusion {
    pub fn count(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape {
                op: "evaluate",
                left: alloc::vec![predictions.len()],
                right: alloc::vec![labels.len()],
            });
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            if p > 1 || l > 1 {
                return Err(Error::InvalidArgument(alloc::format!("non-binary class {}", p.max(l))));
            }
            match l {
                0 => {
                    c.tb += 1;
                    c.pb += (p == 0) as u64;
                }
                _ => {
                    c.tr += 1;
                    c.pr += (p == 1) as u64;
                }
            }
        }
        Ok(c)
    }

    pub fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            pb: self.pb + o.pb,
            tb: self.tb + o.tb,
            pr: self.pr + o.pr,
            tr: self.tr + o.tr,
        }
    }
}

/// Signal retention, noise removal and denoising accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub counts: Confusion,
    pub sr: f64,
    pub nr: f64,
    pub da: f64,
}

/// What could be computed when one class is absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialReport {
    pub pb: u64,
    pub tb: u64,
    pub pr: u64,
    pub tr: u64,
    pub sr: Option<f64>,
    pub nr: Option<f64>,
}

impl EvalReport {
    pub fn from_confusion(c: Confusion) -> Result<Self> {
        let sr = (c.tb > 0).then(|| c.pb as f64 / c.tb as f64);
        let nr = (c.tr > 0).then(|| c.pr as f64 / c.tr as f64);
        match (sr, nr) {
            (Some(sr), Some(nr)) => Ok(EvalReport {
                counts: c,
                sr,
                nr,
                da: 0.5 * (sr + nr),
            }),
            _ => Err(Error::UndefinedMetric(PartialReport {
                pb: c.pb,
                tb: c.tb,
                pr: c.pr,
                tr: c.tr,
                sr,
                nr,
            })),
        }
    }
}

pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<EvalReport> {
    EvalReport::from_confusion(Confusion::count(predictions, labels)?)
}

/// Hard decisions from `(2, n)` probabilities: rain iff `P(rain) > P(bg)`.
pub fn predictions_from_probs(probs: &Tensor) -> Vec<u8> {
    let n = probs.shape()[1];
    (0..n).map(|j| (probs.at2(1, j) > probs.at2(0, j)) as u8).collect()
}

/// Power spectrum and run statistics of a binary label sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpectrum {
    /// `(bin center as a fraction of the sampling rate, summed power)`
    /// over `[0, 0.5]`.
    pub bins: Vec<(f64, f64)>,
    /// Non-DC frequency of maximum power, `None` if the sequence is flat.
    pub peak_frequency: Option<f64>,
    /// `(run length, count)` of maximal runs of 1s, ascending by length.
    pub run_lengths: Vec<(usize, usize)>,
}

impl LabelSpectrum {
    pub fn median_run_length(&self) -> Option<f64> {
        median_of_histogram(&self.run_lengths)
    }

    pub fn mean_run_length(&self) -> Option<f64> {
        let n: usize = self.run_lengths.iter().map(|r| r.1).sum();
        (n > 0).then(|| self.run_lengths.iter().map(|&(l, c)| (l * c) as f64).sum::<f64>() / n as f64)
    }
}

fn median_of_histogram(h: &[(usize, usize)]) -> Option<f64> {
    let n: usize = h.iter().map(|r| r.1).sum();
    if n == 0 {
        return None;
    }
    let nth = |k: usize| {
        let mut seen = 0;
        for &(l, c) in h {
            seen += c;
            if seen > k {
                return l as f64;
            }
        }
        unreachable!()
    };
    Some(if n % 2 == 1 {
        nth(n / 2)
    } else {
        0.5 * (nth(n / 2 - 1) + nth(n / 2))
    })
}

pub fn run_lengths(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut run = 0;
    for &l in labels.iter().chain(core::iter::once(&0)) {
        if l == 1 {
            run += 1;
        } else if run > 0 {
            *hist.entry(run).or_default() += 1;
            run = 0;
        }
    }
    hist.into_iter().collect()
}

pub fn label_spectrum(labels: &[u8], bins: usize) -> Result<LabelSpectrum> {
    if labels.len() < 2 {
        return Err(Error::InvalidArgument("label spectrum needs at least 2 labels".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    let x: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let spec = fft::real_spectrum(&x);
    let lp = spec.len();
    let half = lp / 2;
    let width = 0.5 / bins as f64;
    let mut binned: Vec<(f64, f64)> = (0..bins).map(|b| ((b as f64 + 0.5) * width, 0.0)).collect();
    let mut peak: Option<(usize, f64)> = None;
    for (k, c) in spec.iter().enumerate().take(half + 1) {
        let f = k as f64 / lp as f64;
        let power = c.norm_sqr();
        let b = ((f / width) as usize).min(bins - 1);
        binned[b].1 += power;
        if k > 0 && power > 1e-18 && peak.is_none_or(|(_, p)| power > p) {
            peak = Some((k, power));
        }
    }
    Ok(LabelSpectrum {
        bins: binned,
        peak_frequency: peak.map(|(k, _)| k as f64 / lp as f64),
        run_lengths: run_lengths(labels),
    })
}

//! AdamW training with gradient accumulation over samples.
//!
//! One sample is one cloud. A batch runs forward and backward once per
//! sample on a fresh tape, sums the parameter gradients and applies a
//! single AdamW update with the averaged gradient. The learning rate follows
//! a cosine from `lr` down to `min_lr` over the planned number of steps.
//!
//! Global step `s` always trains on the same batch: the epoch is
//! `s / steps_per_epoch` and the sample order of an epoch is a shuffle
//! seeded by `(seed, epoch)`. Together with the optimizer moments kept in
//! [`AdamState`] this makes a resumed run identical to an uninterrupted one.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::loss_metrics::{predictions_from_probs, total_loss, LossConfig};
use crate::model::{forward, CloudPlan, ModelParams, NetworkConfig, Session};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Rescale the averaged gradient to this global L2 norm when larger;
    /// 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 4.8e-4,
            min_lr: 1e-5,
            weight_decay: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            batch_size: 6,
            clip_norm: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.min_lr >= 0.0
            && self.min_lr <= self.lr
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm >= 0.0
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!("bad optimizer settings: {self:?}")))
        }
    }

    pub fn steps_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.batch_size) as u64
    }

    /// Cosine decay from `lr` at step 0 to `min_lr` at `total`.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let frac = if total == 0 {
            0.0
        } else {
            (step as f64 / total as f64).min(1.0)
        };
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + libm::cos(core::f64::consts::PI * frac))
    }
}

/// First and second moments per parameter path, plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// 1-based index of the update just applied.
    pub step: u64,
    pub lr: f64,
    pub ce: f64,
    /// Mean frequency term, `None` when disabled.
    pub fft: Option<f64>,
    pub total: f64,
}

/// Sample order of one epoch.
pub fn epoch_order(seed: u64, epoch: u64, samples: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    order
}

/// Forward, loss and backward for one sample; returns the loss parts, the
/// gradient of every parameter and the batch-norm statistics.
#[allow(clippy::type_complexity)]
fn sample_grads(
    net: &NetworkConfig,
    loss: &LossConfig,
    params: &ModelParams,
    plan: &CloudPlan,
) -> Result<(f64, Option<f64>, f64, BTreeMap<String, Vec<f64>>, Vec<(String, crate::autodiff::BatchStats)>)> {
    let labels = plan
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("training sample has unlabeled events".into()))?;
    let mut tape = Tape::new();
    tape.set_training(true);
    let mut s = Session::new(params, true);
    let probs = forward(&mut tape, &mut s, net, plan)?;
    let parts = total_loss(
        &mut tape,
        probs,
        labels,
        plan.scan_order(),
        &plan.scan_segments(),
        loss,
        net.use_fft_loss,
    )?;
    let total = tape.value(parts.total).item();
    tape.backward(parts.total)?;
    let mut grads = BTreeMap::new();
    for (path, &v) in s.vars() {
        let g = tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec);
        grads.insert(path.clone(), g);
    }
    Ok((parts.ce, parts.fft, total, grads, s.bn_stats().to_vec()))
}

pub struct Trainer {
    pub net: NetworkConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub params: ModelParams,
    pub adam: AdamState,
}

impl Trainer {
    pub fn new(net: NetworkConfig, loss: LossConfig, optim: OptimConfig, seed: u64) -> Result<Self> {
        net.validate()?;
        loss.validate()?;
        optim.validate()?;
        let params = ModelParams::init(&net, seed)?;
        Ok(Trainer {
            net,
            loss,
            optim,
            seed,
            params,
            adam: AdamState::default(),
        })
    }

    /// Sample indices of global step `step` (0-based).
    pub fn batch_for_step(&self, step: u64, samples: usize) -> Vec<usize> {
        let spe = self.optim.steps_per_epoch(samples);
        let order = epoch_order(self.seed, step / spe, samples);
        let start = (step % spe) as usize * self.optim.batch_size;
        order[start..(start + self.optim.batch_size).min(samples)].to_vec()
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        self.optim.epochs as u64 * self.optim.steps_per_epoch(samples)
    }

    /// One AdamW update on the averaged gradient of `batch`.
    pub fn step_on(&mut self, batch: &[&CloudPlan], total_steps: u64) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let (mut ce, mut fft, mut total) = (0.0, None::<f64>, 0.0);
        for plan in batch {
            let (c, f, t, g, bn) = sample_grads(&self.net, &self.loss, &self.params, plan)?;
            if !t.is_finite() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "non-finite loss at step {}",
                    self.adam.step + 1
                )));
            }
            ce += c;
            total += t;
            if let Some(f) = f {
                fft = Some(fft.unwrap_or(0.0) + f);
            }
            for (path, g) in g {
                match grads.get_mut(&path) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(path, g);
                    }
                }
            }
            for (path, stats) in &bn {
                self.params.update_bn(path, stats)?;
            }
        }
        let mut k = batch.len() as f64;
        let o = &self.optim;
        if o.clip_norm > 0.0 {
            let norm = libm::sqrt(grads.values().flatten().map(|g| g * g).sum::<f64>()) / k;
            if norm > o.clip_norm {
                k *= norm / o.clip_norm;
            }
        }
        let mean = |v: f64| v / batch.len() as f64;
        let lr = o.lr_at(self.adam.step, total_steps);
        self.adam.step += 1;
        let t = self.adam.step as f64;
        let (c1, c2) = (1.0 - libm::pow(o.beta1, t), 1.0 - libm::pow(o.beta2, t));
        for (path, g) in grads {
            let p = self
                .params
                .tensors
                .get_mut(&path)
                .ok_or_else(|| Error::MissingParam(path.clone()))?;
            let m = self.adam.m.entry(path.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.adam.v.entry(path).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g / k;
                *m = o.beta1 * *m + (1.0 - o.beta1) * g;
                *v = o.beta2 * *v + (1.0 - o.beta2) * g * g;
                let update = (*m / c1) / (libm::sqrt(*v / c2) + o.eps);
                *w -= lr * (update + o.weight_decay * *w);
            }
        }
        Ok(StepStats {
            step: self.adam.step,
            lr,
            ce: mean(ce),
            fft: fft.map(mean),
            total: mean(total),
        })
    }

    /// Trains until `until` updates have been applied (capped by the
    /// planned total), calling `log` after every update.
    pub fn train_until(
        &mut self,
        data: &[CloudPlan],
        until: u64,
        mut log: impl FnMut(&StepStats),
    ) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let total = self.total_steps(data.len());
        while self.adam.step < until.min(total) {
            let idx = self.batch_for_step(self.adam.step, data.len());
            let batch: Vec<&CloudPlan> = idx.iter().map(|&i| &data[i]).collect();
            let stats = self.step_on(&batch, total)?;
            log(&stats);
        }
        Ok(())
    }
}

/// Hard predictions for one cloud with running batch-norm statistics.
pub fn predict(net: &NetworkConfig, params: &ModelParams, plan: &CloudPlan) -> Result<Vec<u8>> {
    let mut tape = Tape::new();
    let mut s = Session::new(params, false);
    let probs = forward(&mut tape, &mut s, net, plan)?;
    Ok(predictions_from_probs(tape.value(probs)))
}

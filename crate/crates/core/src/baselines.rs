//! Two classical denoising filters used as comparison points.
//!
//! Both are deliberately simple reconstructions. They return per-event
//! predictions with the model's convention: 0 keeps the event as signal,
//! 1 marks it as noise.
//!
//! [`ts_filter`] is causal: the decision for an event depends only on events
//! at or before it. [`density_filter`] counts support in a symmetric time
//! window and so also looks ahead.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::events::{check_sorted, Event};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FilterConfig {
    /// Time-surface decay, microseconds.
    pub tau: f64,
    /// Minimum decayed 8-neighbour support to keep an event.
    pub ts_threshold: f64,
    /// Chebyshev radius of the density box, pixels.
    pub radius: u32,
    /// Half-width of the density time window, microseconds.
    pub window: u64,
    pub min_support: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            tau: 10_000.0,
            ts_threshold: 0.3,
            radius: 1,
            window: 5_000,
            min_support: 2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || self.radius == 0 || self.min_support == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "filter needs tau > 0, radius >= 1, min_support >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

fn extent(events: &[Event]) -> (usize, usize) {
    let w = events.iter().map(|e| e.x).max().map_or(0, |m| m as usize + 1);
    let h = events.iter().map(|e| e.y).max().map_or(0, |m| m as usize + 1);
    (w, h)
}

/// Time-surface filter: keep an event when the exponentially decayed ages
/// of its eight neighbours' latest events sum above the threshold.
pub fn ts_filter(events: &[Event], cfg: &FilterConfig) -> Result<Vec<u8>> {
    check_sorted(events)?;
    cfg.validate()?;
    let (w, h) = extent(events);
    let mut last: Vec<Option<u64>> = vec![None; w * h];
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        let mut support = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (x, y) = (e.x as i64 + dx, e.y as i64 + dy);
                if (dx, dy) == (0, 0) || x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                if let Some(t) = last[y as usize * w + x as usize] {
                    support += libm::exp(-((e.t - t) as f64) / cfg.tau);
                }
            }
        }
        out.push((support <= cfg.ts_threshold) as u8);
        last[e.y as usize * w + e.x as usize] = Some(e.t);
    }
    Ok(out)
}

/// Space-time density filter: keep an event when at least `min_support`
/// other events fall in its `(2r+1)^2` pixel box within `±window` µs.
pub fn density_filter(events: &[Event], cfg: &FilterConfig) -> Result<Vec<u8>> {
    check_sorted(events)?;
    cfg.validate()?;
    let (w, h) = extent(events);
    let mut counts = vec![0usize; w * h];
    let (mut lo, mut hi) = (0, 0);
    let r = cfg.radius as i64;
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        while hi < events.len() && events[hi].t <= e.t.saturating_add(cfg.window) {
            counts[events[hi].y as usize * w + events[hi].x as usize] += 1;
            hi += 1;
        }
        while events[lo].t < e.t.saturating_sub(cfg.window) {
            counts[events[lo].y as usize * w + events[lo].x as usize] -= 1;
            lo += 1;
        }
        let mut n = 0;
        for y in (e.y as i64 - r).max(0)..=(e.y as i64 + r).min(h as i64 - 1) {
            for x in (e.x as i64 - r).max(0)..=(e.x as i64 + r).min(w as i64 - 1) {
                n += counts[y as usize * w + x as usize];
            }
        }
        // the event itself is always inside its own box
        out.push((n - 1 < cfg.min_support) as u8);
    }
    Ok(out)
}

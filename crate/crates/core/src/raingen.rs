//! Synthetic rainy event streams and KNN auto-labeling.
//!
//! [`generate`] superimposes rain streaks on a background scene. Streaks are
//! born as a Poisson process whose rate grows linearly with intensity; each
//! translates at a sampled velocity and emits `+1` events where its head
//! enters a pixel and `-1` events where its tail leaves one. Every random
//! quantity comes from ChaCha streams derived from the seed: background,
//! birth times and each streak's own kinematics draw from separate streams,
//! so raising the intensity only adds streaks and moves births earlier.
//!
//! [`knn_label`] labels a rainy recording against a clean one: an event is
//! background when at least `k` clean events lie inside an anisotropic
//! space-time neighbourhood.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::{Event, Label, Polarity};

/// Streak births per second per mm/hr on a 64x48 sensor. Chosen so that
/// 50 mm/hr gives about 40% rain events on the default scene.
pub const BIRTHS_PER_MMHR: f64 = 0.73;
const REFERENCE_AREA: f64 = 64.0 * 48.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Background {
    /// Fixed edge pixels flickering under slight camera vibration.
    StaticEdges,
    /// A vertical bar sweeping left to right.
    MovingBar,
    /// A user-supplied stream, relabeled as background.
    Events(Vec<Event>),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SceneParams {
    pub background: Background,
    pub sensor_width: u32,
    pub sensor_height: u32,
    /// Seconds.
    pub duration: f64,
    /// Background events per second for the synthetic scenes.
    pub background_rate: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            background: Background::StaticEdges,
            sensor_width: 64,
            sensor_height: 48,
            duration: 0.5,
            background_rate: 2400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RainParams {
    /// mm/hr.
    pub intensity: f64,
    /// Pixels per millisecond.
    pub speed: (f64, f64),
    /// Pixels.
    pub length: (f64, f64),
    /// Degrees from vertical.
    pub angle: (f64, f64),
    pub events_per_step: u32,
    pub seed: u64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            intensity: 50.0,
            speed: (0.5, 2.0),
            length: (3.0, 8.0),
            angle: (-15.0, 15.0),
            events_per_step: 1,
            seed: 0,
        }
    }
}

fn check_range(what: &str, r: (f64, f64)) -> Result<()> {
    if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!("{what} range {r:?} is empty")))
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        check_range("speed", self.speed)?;
        check_range("length", self.length)?;
        check_range("angle", self.angle)?;
        if !(self.intensity >= 0.0) || !(self.speed.0 > 0.0) || !(self.length.0 >= 1.0) || self.events_per_step == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "rain needs intensity >= 0, speed > 0, length >= 1, events_per_step >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || self.sensor_width == 0 || self.sensor_height == 0 || !(self.background_rate >= 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "scene needs positive duration and sensor size: {:?}",
                (self.sensor_width, self.sensor_height, self.duration)
            )));
        }
        Ok(())
    }

    fn duration_us(&self) -> u64 {
        libm::round(self.duration * 1e6) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Labeled events sorted by time.
    pub events: Vec<Event>,
    pub background_events: usize,
    pub rain_events: usize,
    pub streaks: usize,
}

impl Generated {
    pub fn rain_fraction(&self) -> f64 {
        self.rain_events as f64 / self.events.len().max(1) as f64
    }
}

const STREAM_BACKGROUND: u64 = 0;
const STREAM_BIRTHS: u64 = 1;
const STREAM_STREAKS: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Unit-rate exponential variate.
fn exp1(r: &mut ChaCha8Rng) -> f64 {
    let u: f64 = r.gen();
    -libm::log1p(-u)
}

fn polarity(r: &mut ChaCha8Rng) -> Polarity {
    if r.gen_bool(0.5) {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

fn background(scene: &SceneParams, seed: u64) -> Vec<Event> {
    let (w, h) = (scene.sensor_width, scene.sensor_height);
    let end = scene.duration_us();
    let mut r = rng(seed, STREAM_BACKGROUND);
    let mut out = Vec::new();
    let bg = |x: u32, y: u32, t: u64, p| Event::new(x, y, t, p).with_label(Label::Background);
    match &scene.background {
        Background::Events(events) => {
            out.extend(
                events
                    .iter()
                    .filter(|e| e.t < end && e.x < w && e.y < h)
                    .map(|e| bg(e.x, e.y, e.t, e.p)),
            );
        }
        Background::StaticEdges => {
            // outlines of a few axis-aligned rectangles
            let mut edges = Vec::new();
            for _ in 0..3 {
                let x0 = r.gen_range(0..w);
                let y0 = r.gen_range(0..h);
                let x1 = r.gen_range(x0..w);
                let y1 = r.gen_range(y0..h);
                for x in x0..=x1 {
                    edges.push((x, y0));
                    edges.push((x, y1));
                }
                for y in y0..=y1 {
                    edges.push((x0, y));
                    edges.push((x1, y));
                }
            }
            if scene.background_rate == 0.0 {
                return out;
            }
            let mut t = 0.0;
            loop {
                t += exp1(&mut r) / scene.background_rate * 1e6;
                if t >= end as f64 {
                    break;
                }
                let (mut x, mut y) = edges[r.gen_range(0..edges.len())];
                // micro-vibration shifts the edge by one pixel now and then
                if r.gen_bool(0.2) {
                    x = (x as i64 + r.gen_range(-1..=1)).clamp(0, w as i64 - 1) as u32;
                    y = (y as i64 + r.gen_range(-1..=1)).clamp(0, h as i64 - 1) as u32;
                }
                out.push(bg(x, y, t as u64, polarity(&mut r)));
            }
        }
        Background::MovingBar => {
            if scene.background_rate == 0.0 {
                return out;
            }
            let bar = 3.0;
            let speed = (w as f64 + bar) / (end as f64);
            let mut t = 0.0;
            loop {
                t += exp1(&mut r) / scene.background_rate * 1e6;
                if t >= end as f64 {
                    break;
                }
                let lead = t * speed;
                let (edge, p) = if r.gen_bool(0.5) {
                    (lead, Polarity::Positive)
                } else {
                    (lead - bar, Polarity::Negative)
                };
                if edge < 0.0 || edge >= w as f64 {
                    continue;
                }
                out.push(bg(edge as u32, r.gen_range(0..h), t as u64, p));
            }
        }
    }
    out
}

fn streak_events(scene: &SceneParams, rain: &RainParams, born: f64, r: &mut ChaCha8Rng, out: &mut Vec<Event>) {
    let (w, h) = (scene.sensor_width as f64, scene.sensor_height as f64);
    let end = scene.duration_us() as f64;
    let sample = |r: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo < hi { r.gen_range(lo..hi) } else { lo };
    let speed = sample(r, rain.speed);
    let len = libm::round(sample(r, rain.length)).max(1.0) as i64;
    let angle = sample(r, rain.angle).to_radians();
    let x0 = r.gen_range(0.0..w);
    let y0 = r.gen_range(-(len as f64)..h);
    let (dx, dy) = (libm::sin(angle), libm::cos(angle));
    let step_us = 1000.0 / speed;
    let pixel = |s: i64| {
        let x = libm::floor(x0 + dx * s as f64);
        let y = libm::floor(y0 + dy * s as f64);
        (x >= 0.0 && x < w && y >= 0.0 && y < h).then_some((x as u32, y as u32))
    };
    // the head walks until the tail has left the sensor
    let mut s = 0i64;
    loop {
        let t = born + s as f64 * step_us;
        if t >= end {
            break;
        }
        let head = pixel(s);
        let tail = pixel(s - len);
        if head.is_none() && tail.is_none() && y0 + dy * (s - len) as f64 >= h {
            break;
        }
        for k in 0..rain.events_per_step {
            let tk = (t + k as f64 * step_us / (2 * rain.events_per_step) as f64) as u64;
            if let Some((x, y)) = head {
                out.push(Event::new(x, y, tk, Polarity::Positive).with_label(Label::Rain));
            }
            if s >= len {
                if let Some((x, y)) = tail {
                    out.push(Event::new(x, y, tk, Polarity::Negative).with_label(Label::Rain));
                }
            }
        }
        s += 1;
        if s > 4 * (scene.sensor_width + scene.sensor_height) as i64 + len {
            break;
        }
    }
}

/// Labeled rainy stream, sorted by time, deterministic in the params.
pub fn generate(scene: &SceneParams, rain: &RainParams) -> Result<Generated> {
    scene.validate()?;
    rain.validate()?;
    let mut events = background(scene, rain.seed);
    let background_events = events.len();

    let area = scene.sensor_width as f64 * scene.sensor_height as f64 / REFERENCE_AREA;
    let rate = rain.intensity * BIRTHS_PER_MMHR * area;
    let end = scene.duration_us() as f64;
    let mut births = rng(rain.seed, STREAM_BIRTHS);
    let mut streaks = 0;
    if rate > 0.0 {
        let mut arrival = 0.0;
        loop {
            arrival += exp1(&mut births);
            let born = arrival / rate * 1e6;
            if born >= end {
                break;
            }
            let mut r = rng(rain.seed, STREAM_STREAKS + streaks as u64);
            streak_events(scene, rain, born, &mut r, &mut events);
            streaks += 1;
        }
    }
    let rain_events = events.len() - background_events;
    events.sort_by_key(|e| e.t);
    Ok(Generated {
        events,
        background_events,
        rain_events,
        streaks,
    })
}

/// Neighbourhood used by [`knn_label`]: Euclidean pixel distance and
/// absolute time difference, both inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KnnRadius {
    pub pixels: u32,
    pub micros: u64,
}

impl Default for KnnRadius {
    fn default() -> Self {
        KnnRadius {
            pixels: 3,
            micros: 2000,
        }
    }
}

pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnLabeled {
    pub events: Vec<Event>,
    /// Set when the clean stream was empty and every event became rain.
    pub empty_clean: bool,
}

/// Labels `rainy` against `clean`; the clean stream is only read.
pub fn knn_label(rainy: &[Event], clean: &[Event], k: usize, radius: KnnRadius) -> Result<KnnLabeled> {
    crate::events::check_sorted(rainy)?;
    crate::events::check_sorted(clean)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let label_all = |l: Label| rainy.iter().map(|e| Event { label: Some(l), ..*e }).collect();
    if clean.is_empty() {
        return Ok(KnnLabeled {
            events: label_all(Label::Rain),
            empty_clean: true,
        });
    }
    let w = rainy.iter().chain(clean).map(|e| e.x).max().unwrap_or(0) as usize + 1;
    let h = rainy.iter().chain(clean).map(|e| e.y).max().unwrap_or(0) as usize + 1;
    let mut grid: Vec<Vec<u64>> = vec![Vec::new(); w * h];
    for e in clean {
        grid[e.y as usize * w + e.x as usize].push(e.t);
    }
    let r = radius.pixels as i64;
    let events = rainy
        .iter()
        .map(|e| {
            let lo = e.t.saturating_sub(radius.micros);
            let hi = e.t.saturating_add(radius.micros);
            let mut found = 0;
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (x, y) = (e.x as i64 + dx, e.y as i64 + dy);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let ts = &grid[y as usize * w + x as usize];
                    let a = ts.partition_point(|&t| t < lo);
                    let b = ts.partition_point(|&t| t <= hi);
                    found += b - a;
                    if found >= k {
                        break 'scan;
                    }
                }
            }
            let label = if found >= k { Label::Background } else { Label::Rain };
            Event { label: Some(label), ..*e }
        })
        .collect();
    Ok(KnnLabeled {
        events,
        empty_clean: false,
    })
}

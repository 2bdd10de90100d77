//! Event records and the windowed 4D event cloud.
//!
//! A stream is cut into `L` windows of fixed duration `T` measured from the
//! first event. Inside window `n` each event gets a normalized time
//! `z = (t - t0) / (te - t0)` in `[0, 1]`, and the window ordinal `n` is kept
//! as the coarse temporal coordinate. Windows are half-open except the last,
//! which also takes events sitting exactly on its end timestamp.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_sign(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Label {
    Background,
    Rain,
}

impl Label {
    pub fn from_class(c: u8) -> Option<Self> {
        match c {
            0 => Some(Label::Background),
            1 => Some(Label::Rain),
            _ => None,
        }
    }

    pub fn class(self) -> u8 {
        match self {
            Label::Background => 0,
            Label::Rain => 1,
        }
    }
}

/// One camera event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Event {
    pub x: u32,
    pub y: u32,
    pub t: u64,
    pub p: Polarity,
    pub label: Option<Label>,
}

impl Event {
    pub fn new(x: u32, y: u32, t: u64, p: Polarity) -> Self {
        Event {
            x,
            y,
            t,
            p,
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// Checks that timestamps are non-decreasing.
pub fn check_sorted(events: &[Event]) -> Result<()> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].t < pair[0].t {
            return Err(Error::UnsortedTimestamps {
                index: i + 1,
                prev: pair[0].t,
                t: pair[1].t,
            });
        }
    }
    Ok(())
}

/// Checks that every event lies on a `width x height` sensor.
pub fn check_in_sensor(events: &[Event], width: u32, height: u32) -> Result<()> {
    match events
        .iter()
        .position(|e| e.x >= width || e.y >= height)
    {
        Some(index) => Err(Error::OutOfSensor {
            index,
            x: events[index].x,
            y: events[index].y,
            width,
            height,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub index: usize,
    pub t0: u64,
    pub te: u64,
    pub events: Vec<Event>,
    /// Normalized time of each event, parallel to `events`.
    pub z: Vec<f64>,
}

impl EventWindow {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventCloud4D {
    pub windows: Vec<EventWindow>,
    pub sensor_width: u32,
    pub sensor_height: u32,
    pub window_duration_us: u64,
    /// Events past the last window that were not assigned.
    pub dropped: usize,
}

impl EventCloud4D {
    pub fn num_events(&self) -> usize {
        self.windows.iter().map(EventWindow::len).sum()
    }

    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn window_duration_secs(&self) -> f64 {
        self.window_duration_us as f64 * 1e-6
    }
}

/// Window geometry for [`build_cloud`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowSpec {
    pub sensor_width: u32,
    pub sensor_height: u32,
    /// Window duration `T` in seconds.
    pub window_duration: f64,
    /// Number of windows `L`.
    pub num_windows: usize,
}

impl WindowSpec {
    pub fn duration_us(&self) -> Result<u64> {
        let us = libm::round(self.window_duration * 1e6);
        if !(us >= 1.0) || !us.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "window duration must be at least 1 us, got {} s",
                self.window_duration
            )));
        }
        Ok(us as u64)
    }
}

/// Splits a sorted stream into `num_windows` windows of `window_duration`
/// seconds starting at the first event's timestamp.
pub fn build_cloud(events: &[Event], spec: &WindowSpec) -> Result<EventCloud4D> {
    if events.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if spec.num_windows == 0 {
        return Err(Error::InvalidArgument("num_windows must be >= 1".into()));
    }
    let dur = spec.duration_us()?;
    check_sorted(events)?;
    check_in_sensor(events, spec.sensor_width, spec.sensor_height)?;

    let t_first = events[0].t;
    let last = spec.num_windows - 1;
    let mut windows: Vec<EventWindow> = (0..spec.num_windows)
        .map(|n| {
            let t0 = t_first + n as u64 * dur;
            EventWindow {
                index: n,
                t0,
                te: t0 + dur,
                events: Vec::new(),
                z: Vec::new(),
            }
        })
        .collect();

    let mut dropped = 0;
    for e in events {
        let offset = e.t - t_first;
        let mut n = (offset / dur) as usize;
        if n > last {
            // the closing timestamp of the last window still belongs to it
            if n == last + 1 && offset == dur * spec.num_windows as u64 {
                n = last;
            } else {
                dropped += 1;
                continue;
            }
        }
        let w = &mut windows[n];
        w.z.push((e.t - w.t0) as f64 / (w.te - w.t0) as f64);
        w.events.push(*e);
    }

    Ok(EventCloud4D {
        windows,
        sensor_width: spec.sensor_width,
        sensor_height: spec.sensor_height,
        window_duration_us: dur,
        dropped,
    })
}

/// A point of the flattened cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub x: u32,
    pub y: u32,
    pub z: f64,
    pub window: usize,
    pub p: Polarity,
    pub label: Option<Label>,
    /// Original timestamp, kept so the flattening can be inverted.
    pub t: u64,
}

/// Concatenates windows in ascending order, keeping time order inside each.
pub fn flatten(cloud: &EventCloud4D) -> Vec<CloudPoint> {
    let mut out = Vec::with_capacity(cloud.num_events());
    for w in &cloud.windows {
        for (e, &z) in w.events.iter().zip(&w.z) {
            out.push(CloudPoint {
                x: e.x,
                y: e.y,
                z,
                window: w.index,
                p: e.p,
                label: e.label,
                t: e.t,
            });
        }
    }
    out
}

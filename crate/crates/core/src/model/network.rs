use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::config::NetworkConfig;
use super::ms3m::ms3m_forward;
use super::params::{ModelParams, Session, NORM_EPS};
use super::stdf::{point_features, stdf_forward};
use super::linear;
use crate::autodiff::{Tape, Tensor, Var};
use crate::curves::{grid_points, invert_permutation, order_points, GridPoint, ScanMode};
use crate::error::{Error, Result};
use crate::events::EventCloud4D;
use crate::loss_metrics::window_segments;

/// One resolution of the U-Net: points, their scan orders and the pooling
/// map to the next coarser level.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub points: Vec<GridPoint>,
    pub bits: u32,
    pub windows: Vec<usize>,
    /// Scan order of every mode, indexed by [`ScanMode::index`].
    pub orders: Vec<Vec<usize>>,
    pub inverses: Vec<Vec<usize>>,
    /// Window ids in each mode's scan order.
    pub scan_windows: Vec<Vec<usize>>,
    /// Coarse cell of every point at the next level; empty at the last.
    pub parent: Vec<usize>,
}

impl Level {
    fn new(points: Vec<GridPoint>, bits: u32) -> Result<Self> {
        let windows: Vec<usize> = points.iter().map(|p| p.window).collect();
        let mut orders = Vec::with_capacity(4);
        for mode in ScanMode::ALL {
            orders.push(order_points(&points, mode, bits)?);
        }
        let inverses = orders.iter().map(|o| invert_permutation(o)).collect();
        let scan_windows = orders
            .iter()
            .map(|o| o.iter().map(|&i| windows[i]).collect())
            .collect();
        Ok(Level {
            points,
            bits,
            windows,
            orders,
            inverses,
            scan_windows,
            parent: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Groups points into cells of twice the size, ordered by
    /// `(window, x, y, z)`.
    fn coarsen(&mut self) -> Result<Level> {
        let key = |p: &GridPoint| (p.window, p.x >> 1, p.y >> 1, p.z >> 1);
        let mut cells = BTreeMap::new();
        for p in &self.points {
            cells.insert(key(p), 0usize);
        }
        let mut coarse = Vec::with_capacity(cells.len());
        for (id, (&(window, x, y, z), slot)) in cells.iter_mut().enumerate() {
            *slot = id;
            coarse.push(GridPoint { window, x, y, z });
        }
        self.parent = self.points.iter().map(|p| cells[&key(p)]).collect();
        Level::new(coarse, self.bits - 1)
    }
}

/// Everything about a cloud the network needs that does not depend on the
/// weights: input features, per-level scan orders and pooling maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPlan {
    /// `(4, N)` point features in flattened order.
    pub features: Tensor,
    pub num_windows: usize,
    pub levels: Vec<Level>,
    /// Labels in flattened order when every event carries one.
    pub labels: Option<Vec<u8>>,
    first_mode: ScanMode,
}

impl CloudPlan {
    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened indices in the scan order of the first scheduled mode.
    pub fn scan_order(&self) -> &[usize] {
        &self.levels[0].orders[self.first_mode.index()]
    }

    /// Window spans of [`Self::scan_order`].
    pub fn scan_segments(&self) -> Vec<(usize, usize)> {
        window_segments(&self.levels[0].scan_windows[self.first_mode.index()])
    }
}

pub fn plan(cloud: &EventCloud4D, cfg: &NetworkConfig) -> Result<CloudPlan> {
    cfg.validate()?;
    if cloud.num_events() == 0 {
        return Err(Error::EmptyCloud);
    }
    let (features, _) = point_features(cloud);
    let mut levels = Vec::with_capacity(cfg.stages());
    levels.push(Level::new(grid_points(cloud, cfg.grid_bits), cfg.grid_bits)?);
    for _ in 1..cfg.stages() {
        let next = levels.last_mut().expect("level 0 exists").coarsen()?;
        levels.push(next);
    }
    let labels = cloud
        .windows
        .iter()
        .flat_map(|w| w.events.iter().map(|e| e.label.map(|l| l.class())))
        .collect();
    Ok(CloudPlan {
        features,
        num_windows: cloud.num_windows(),
        levels,
        labels,
        first_mode: cfg.scan_schedule[0],
    })
}

struct Blocks<'c> {
    cfg: &'c NetworkConfig,
    count: usize,
}

impl Blocks<'_> {
    /// Pre-normalized residual block, `f + block(norm(f))`, in the next
    /// scheduled scan order of `level`.
    fn run(&mut self, tape: &mut Tape, s: &mut Session, path: &str, f: Var, level: &Level, windows: usize) -> Result<Var> {
        let sched = &self.cfg.scan_schedule;
        let m = sched[self.count % sched.len()].index();
        self.count += 1;
        let gamma = s.get(tape, &format!("{path}.norm.weight"))?;
        let x = tape.rms_norm(f, gamma, NORM_EPS)?;
        let x = tape.gather_cols(x, &level.orders[m])?;
        let y = ms3m_forward(tape, s, self.cfg, path, x, &level.scan_windows[m], windows)?;
        let y = tape.gather_cols(y, &level.inverses[m])?;
        tape.add(f, y)
    }
}

/// Per-event probabilities `(2, N)` in flattened order: row 0 background,
/// row 1 rain.
pub fn forward(tape: &mut Tape, s: &mut Session, cfg: &NetworkConfig, plan: &CloudPlan) -> Result<Var> {
    let lv = &plan.levels;
    let w = plan.num_windows;
    let x = tape.constant(plan.features.clone());
    let m0 = cfg.scan_schedule[0].index();
    let xs = tape.gather_cols(x, &lv[0].orders[m0])?;
    let f = stdf_forward(tape, s, cfg, xs, &lv[0].scan_windows[m0])?;
    let mut f = tape.gather_cols(f, &lv[0].inverses[m0])?;

    let mut blocks = Blocks { cfg, count: 0 };
    let mut skips = Vec::with_capacity(lv.len());
    for i in 0..lv.len() {
        if i > 0 {
            f = tape.segment_mean(f, &lv[i - 1].parent, lv[i].len())?;
            f = linear(tape, s, &format!("enc{i}.down"), f)?;
        }
        for b in 0..cfg.blocks_per_stage {
            f = blocks.run(tape, s, &format!("enc{i}.block{b}"), f, &lv[i], w)?;
        }
        skips.push(f);
    }
    for i in (0..lv.len() - 1).rev() {
        f = tape.gather_cols(f, &lv[i].parent)?;
        f = linear(tape, s, &format!("dec{i}.up"), f)?;
        f = tape.add(f, skips[i])?;
        for b in 0..cfg.blocks_per_stage {
            f = blocks.run(tape, s, &format!("dec{i}.block{b}"), f, &lv[i], w)?;
        }
    }
    let logits = linear(tape, s, "head", f)?;
    tape.softmax(logits, 0)
}

/// Inference: probabilities `(2, N)` in flattened order with running
/// batch-norm statistics.
pub fn network_forward(cloud: &EventCloud4D, cfg: &NetworkConfig, params: &ModelParams) -> Result<Tensor> {
    let plan = plan(cloud, cfg)?;
    let mut tape = Tape::new();
    let mut s = Session::new(params, false);
    let probs = forward(&mut tape, &mut s, cfg, &plan)?;
    Ok(tape.value(probs).clone())
}

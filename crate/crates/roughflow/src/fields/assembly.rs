use serde::{Deserialize, Serialize};

use super::block::{BuildingBlock, Region};
use super::windows::TimeWindows;
use crate::params::LoopSchedule;
use crate::{Error, Point, Result};

/// Spatial symmetry relating a copy to the quadrant-II original.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reflection {
    Identity,
    /// `(x1, x2) -> (-x1, x2)`, quadrant II to I.
    ReflectX,
    /// `x -> -x`, quadrant II to IV.
    ReflectXY,
    /// `(x1, x2) -> (x1, -x2)`, quadrant II to III.
    ReflectY,
}

impl Reflection {
    pub fn apply(self, x: Point) -> Point {
        match self {
            Self::Identity => x,
            Self::ReflectX => [-x[0], x[1]],
            Self::ReflectXY => [-x[0], -x[1]],
            Self::ReflectY => [x[0], -x[1]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Pipe(usize),
    Glue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedBlock {
    pub block: BuildingBlock,
    pub windows: TimeWindows,
    pub reflection: Reflection,
    /// Windows are read at `T_n - t` instead of `t`.
    pub time_reversed: bool,
    pub level: Level,
}

/// The assembled loop field `b_n` on `[0, T_n)`, zero outside that interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopField {
    pub schedule: LoopSchedule,
    pub n: usize,
    pub horizon: f64,
    pub side: f64,
    pub blocks: Vec<PlacedBlock>,
}

/// The reflection `P_n`: across the y-axis for even `n`, across the x-axis for odd `n`.
pub fn parity_reflection(n: usize) -> Reflection {
    if n % 2 == 0 {
        Reflection::ReflectX
    } else {
        Reflection::ReflectY
    }
}

pub fn assemble_loop_field(schedule: &LoopSchedule, n: usize) -> Result<LoopField> {
    if n > schedule.n_max() {
        return Err(Error::Schedule(format!("level n = {n} exceeds n_max = {}", schedule.n_max())));
    }
    let horizon = schedule.t_horizon[n];
    let mut blocks = Vec::new();
    for q in 0..=n {
        let base = schedule.pipe(q);
        let windows = if q == 0 {
            TimeWindows::Always
        } else {
            let width = schedule.t_cum[q] - schedule.t_cum[q - 1] + schedule.a[q - 1] / schedule.v[q];
            TimeWindows::periodic(schedule.t_cum[q - 1], schedule.tau_bar[q], width)
        };
        for (reflection, time_reversed) in [
            (Reflection::Identity, false),
            (Reflection::ReflectX, true),
            (Reflection::ReflectXY, true),
            (Reflection::ReflectY, true),
        ] {
            let mut block = base;
            block.center = reflection.apply(base.center);
            blocks.push(PlacedBlock {
                block,
                windows: windows.clone(),
                reflection,
                time_reversed,
                level: Level::Pipe(q),
            });
        }
    }
    blocks.push(PlacedBlock {
        block: schedule.glue(n),
        windows: TimeWindows::periodic(schedule.t_cum[n], schedule.tau_bar[n + 1], schedule.t_glue[n]),
        reflection: Reflection::Identity,
        time_reversed: false,
        level: Level::Glue,
    });
    let field = LoopField { schedule: schedule.clone(), n, horizon, side: schedule.torus_side, blocks };
    field.check_support_inside()?;
    if let Some((i, j, k, x)) = field.triple_overlap() {
        return Err(Error::Geometry(format!(
            "blocks {i}, {j}, {k} overlap at {x:?}; supports must overlap at most pairwise"
        )));
    }
    Ok(field)
}

impl LoopField {
    pub fn wrap(&self, x: Point) -> Point {
        let l = self.side;
        [x[0] - l * (x[0] / l).round(), x[1] - l * (x[1] / l).round()]
    }

    fn check_support_inside(&self) -> Result<()> {
        let half = 0.5 * self.side;
        for b in &self.blocks {
            let (lo, hi) = b.block.bounding_box();
            if lo[0] <= -half || lo[1] <= -half || hi[0] >= half || hi[1] >= half {
                return Err(Error::Geometry(format!(
                    "block at {:?} leaves the periodic box of side {}",
                    b.block.center, self.side
                )));
            }
        }
        Ok(())
    }

    /// A point covered by three supports, if any (sampled on a grid at the finest width).
    pub fn triple_overlap(&self) -> Option<(usize, usize, usize, Point)> {
        let boxes: Vec<_> = self.blocks.iter().map(|b| b.block.bounding_box()).collect();
        let meet = |a: &(Point, Point), b: &(Point, Point)| -> Option<(Point, Point)> {
            let lo = [a.0[0].max(b.0[0]), a.0[1].max(b.0[1])];
            let hi = [a.1[0].min(b.1[0]), a.1[1].min(b.1[1])];
            (lo[0] < hi[0] && lo[1] < hi[1]).then_some((lo, hi))
        };
        let m = self.blocks.len();
        for i in 0..m {
            for j in i + 1..m {
                let Some(ij) = meet(&boxes[i], &boxes[j]) else { continue };
                for k in j + 1..m {
                    let Some(bx) = meet(&ij, &boxes[k]) else { continue };
                    let step = 0.125
                        * self.blocks[i].block.a.min(self.blocks[j].block.a).min(self.blocks[k].block.a);
                    let nx = ((bx.1[0] - bx.0[0]) / step).ceil() as usize;
                    let ny = ((bx.1[1] - bx.0[1]) / step).ceil() as usize;
                    for ix in 0..nx {
                        for iy in 0..ny {
                            let x = [bx.0[0] + (ix as f64 + 0.5) * step, bx.0[1] + (iy as f64 + 0.5) * step];
                            if [i, j, k].iter().all(|&b| self.blocks[b].block.contains(x)) {
                                return Some((i, j, k, x));
                            }
                        }
                    }
                }
            }
        }
        None
    }

    /// Whether block `i` is switched on at time `t`.
    pub fn is_active(&self, i: usize, t: f64) -> bool {
        if !(0.0..self.horizon).contains(&t) {
            return false;
        }
        let b = &self.blocks[i];
        let tt = if b.time_reversed { self.horizon - t } else { t };
        b.windows.contains(tt)
    }

    pub fn active_blocks(&self, t: f64) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.is_active(i, t)).collect()
    }

    /// Distinct pipe levels switched on at `t` (the glue reported as `n + 1`).
    pub fn active_levels(&self, t: f64) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .active_blocks(t)
            .into_iter()
            .map(|i| match self.blocks[i].level {
                Level::Pipe(q) => q,
                Level::Glue => self.n + 1,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn velocity(&self, t: f64, x: Point) -> Point {
        let x = self.wrap(x);
        let mut u = [0.0, 0.0];
        for (i, b) in self.blocks.iter().enumerate() {
            if self.is_active(i, t) {
                let w = b.block.eval(x);
                u[0] += w[0];
                u[1] += w[1];
            }
        }
        u
    }

    /// Velocity summed over an explicit active set.
    pub fn velocity_with(&self, active: &[usize], x: Point) -> Point {
        let mut u = [0.0, 0.0];
        for &i in active {
            let w = self.blocks[i].block.eval(x);
            u[0] += w[0];
            u[1] += w[1];
        }
        u
    }

    pub fn stream(&self, t: f64, x: Point) -> f64 {
        let x = self.wrap(x);
        self.blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_active(*i, t))
            .map(|(_, b)| b.block.stream(x))
            .sum()
    }

    /// Non-trivial regions of active blocks containing `x`.
    pub fn regions(&self, t: f64, x: Point) -> Vec<(usize, Region)> {
        let x = self.wrap(x);
        self.blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_active(*i, t))
            .filter_map(|(i, b)| match b.block.region(x) {
                Region::Outside | Region::Hole => None,
                r => Some((i, r)),
            })
            .collect()
    }

    /// Number of supports containing `x` among active blocks.
    pub fn overlap_count(&self, t: f64, x: Point) -> usize {
        self.regions(t, x).len()
    }

    /// Next window edge of block `i` strictly after `t` (in forward time).
    pub fn next_edge(&self, i: usize, t: f64) -> Option<f64> {
        let b = &self.blocks[i];
        if b.time_reversed {
            b.windows.prev_edge_before(self.horizon - t).map(|e| self.horizon - e)
        } else {
            b.windows.next_edge_after(t)
        }
    }

    /// Previous window edge of block `i` strictly before `t`.
    pub fn prev_edge(&self, i: usize, t: f64) -> Option<f64> {
        let b = &self.blocks[i];
        if b.time_reversed {
            b.windows.next_edge_after(self.horizon - t).map(|e| self.horizon - e)
        } else {
            b.windows.prev_edge_before(t)
        }
    }

    /// Next time after `t` (strictly) at which one of `blocks` may switch, capped at `T_n`.
    pub fn next_event_among(&self, blocks: impl IntoIterator<Item = usize>, t: f64) -> f64 {
        let mut best = if t < 0.0 { 0.0 } else { f64::INFINITY };
        if t < self.horizon {
            best = best.min(self.horizon);
        }
        for i in blocks {
            if let Some(e) = self.next_edge(i, t) {
                if e > t && e < best {
                    best = e;
                }
            }
        }
        best
    }

    /// Previous time before `t` (strictly) at which one of `blocks` may switch.
    pub fn prev_event_among(&self, blocks: impl IntoIterator<Item = usize>, t: f64) -> f64 {
        let mut best = if t > self.horizon { self.horizon } else { f64::NEG_INFINITY };
        if t > 0.0 {
            best = best.max(0.0);
        }
        for i in blocks {
            if let Some(e) = self.prev_edge(i, t) {
                if e < t && e > best {
                    best = e;
                }
            }
        }
        best
    }

    /// Next time after `t` (strictly) at which the active set may change, capped at `T_n`.
    pub fn next_time_event(&self, t: f64) -> f64 {
        self.next_event_among(0..self.blocks.len(), t)
    }

    /// Previous time before `t` (strictly) at which the active set may change.
    pub fn prev_time_event(&self, t: f64) -> f64 {
        self.prev_event_among(0..self.blocks.len(), t)
    }

    /// Largest speed among active blocks.
    pub fn sup_speed(&self, t: f64) -> f64 {
        // overlapping straight strips are perpendicular, so sums stay below the sqrt(2) bound
        let mut v: Vec<f64> = self
            .active_blocks(t)
            .iter()
            .map(|&i| self.blocks[i].block.v)
            .collect();
        v.sort_by(|a, b| b.total_cmp(a));
        match v.as_slice() {
            [] => 0.0,
            [a] => *a,
            [a, b, ..] => a.hypot(*b),
        }
    }

    /// Shortest `a / v` among active blocks.
    pub fn crossing_time(&self, t: f64) -> f64 {
        self.active_blocks(t)
            .iter()
            .map(|&i| self.blocks[i].block.a / self.blocks[i].block.v)
            .fold(f64::INFINITY, f64::min)
    }

    /// `sup |grad b|` over the ball of radius `r` at `x`.
    pub fn gradient_in_ball(&self, t: f64, x: Point, r: f64) -> f64 {
        let x = self.wrap(x);
        self.active_blocks(t)
            .iter()
            .map(|&i| self.blocks[i].block.gradient_in_ball(x, r))
            .fold(0.0, f64::max)
    }

    /// Pipe `q` in quadrant II.
    pub fn pipe(&self, q: usize) -> &BuildingBlock {
        &self.blocks[4 * q].block
    }

    pub fn glue(&self) -> &BuildingBlock {
        &self.blocks.last().expect("glue block").block
    }
}

//! Evaluatable velocity fields: the loop building block and assembly, and the chess shears.

pub mod assembly;
pub mod block;
pub mod chess;
pub mod windows;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Point, Result};
pub use assembly::{assemble_loop_field, LoopField, PlacedBlock, Reflection};
pub use block::{BuildingBlock, Region};
pub use chess::{assemble_chess_field, ChessField, ChessPhase};
pub use windows::TimeWindows;

/// Local description of the field at a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegionKind {
    Straight { block: usize, dir: Point },
    Corner { block: usize, center: Point, r: f64 },
    /// Shear along `axis` (0 horizontal, 1 vertical) with signed speed.
    ShearTile { axis: usize, speed: f64 },
    Constant { velocity: Point },
}

/// A velocity field on a periodic square.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FieldHandle {
    Loop(LoopField),
    Chess(ChessField),
    /// `b = 0` on a box of the given side, on `[0, horizon]`.
    Zero { side: f64, horizon: f64 },
}

impl FieldHandle {
    pub fn velocity(&self, t: f64, x: Point) -> Point {
        match self {
            Self::Loop(f) => f.velocity(t, x),
            Self::Chess(f) => f.velocity(t, x),
            Self::Zero { .. } => [0.0, 0.0],
        }
    }

    /// Lower-left corner and side of the fundamental domain.
    pub fn domain(&self) -> (Point, f64) {
        match self {
            Self::Loop(f) => ([-0.5 * f.side, -0.5 * f.side], f.side),
            Self::Chess(_) => ([0.0, 0.0], 1.0),
            Self::Zero { side, .. } => ([0.0, 0.0], *side),
        }
    }

    pub fn side(&self) -> f64 {
        self.domain().1
    }

    /// Map into the fundamental domain.
    pub fn wrap(&self, x: Point) -> Point {
        let (lo, l) = self.domain();
        [lo[0] + (x[0] - lo[0]).rem_euclid(l), lo[1] + (x[1] - lo[1]).rem_euclid(l)]
    }

    /// Interval on which the field may be non-zero.
    pub fn time_range(&self) -> (f64, f64) {
        match self {
            Self::Loop(f) => (0.0, f.horizon),
            Self::Chess(f) => (0.0, f.horizon),
            Self::Zero { horizon, .. } => (0.0, *horizon),
        }
    }

    /// Times in `(t0, t1)` where the field may jump; it is autonomous in between.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        match self {
            Self::Loop(f) => {
                let mut v = Vec::new();
                let mut t = t0;
                loop {
                    t = f.next_time_event(t);
                    if !(t < t1) {
                        break;
                    }
                    v.push(t);
                }
                v
            }
            Self::Chess(f) => f.breakpoints(t0, t1),
            Self::Zero { .. } => Vec::new(),
        }
    }

    /// `sup_x |b(t, x)|`.
    pub fn sup_speed(&self, t: f64) -> f64 {
        match self {
            Self::Loop(f) => f.sup_speed(t),
            Self::Chess(f) => f.sup_speed(t),
            Self::Zero { .. } => 0.0,
        }
    }

    /// Shortest time for the active structures to move a point across their own width.
    pub fn crossing_time(&self, t: f64) -> f64 {
        match self {
            Self::Loop(f) => f.crossing_time(t),
            Self::Chess(f) => f.crossing_time(t),
            Self::Zero { .. } => f64::INFINITY,
        }
    }

    /// `sup |grad b(t)|` on the ball `B_r(x)`; shears and constants contribute 0.
    pub fn gradient_in_ball(&self, t: f64, x: Point, r: f64) -> f64 {
        match self {
            Self::Loop(f) => f.gradient_in_ball(t, x, r),
            _ => 0.0,
        }
    }

    /// Contributions to the field at `(t, x)`; empty where `b = 0`.
    pub fn region(&self, t: f64, x: Point) -> Vec<RegionKind> {
        match self {
            Self::Loop(f) => f
                .regions(t, x)
                .into_iter()
                .filter_map(|(i, r)| match r {
                    Region::Straight { dir, .. } => Some(RegionKind::Straight { block: i, dir }),
                    Region::Corner { center, r } => Some(RegionKind::Corner { block: i, center, r }),
                    _ => None,
                })
                .collect(),
            Self::Chess(c) => {
                let u = c.velocity(t, x);
                match c.phase_at(t).0 {
                    ChessPhase::Zero => vec![],
                    ChessPhase::Swap { .. } => vec![RegionKind::Constant { velocity: u }],
                    ChessPhase::Horizontal { .. } => vec![RegionKind::ShearTile { axis: 0, speed: u[0] }],
                    ChessPhase::Vertical { .. } => vec![RegionKind::ShearTile { axis: 1, speed: u[1] }],
                }
            }
            Self::Zero { .. } => vec![],
        }
    }

    /// Active block indices (loop) or the active shear level (chess).
    pub fn active_levels(&self, t: f64) -> Vec<usize> {
        match self {
            Self::Loop(f) => f.active_blocks(t),
            Self::Chess(c) => match c.phase_at(t).0 {
                ChessPhase::Zero => vec![],
                ChessPhase::Horizontal { q } | ChessPhase::Vertical { q } | ChessPhase::Swap { q } => vec![q],
            },
            Self::Zero { .. } => vec![],
        }
    }

    /// `int_{y0}^{y1} b_1(t, x, y) dy`, exact.
    pub fn flux_x(&self, t: f64, x: f64, y0: f64, y1: f64) -> f64 {
        match self {
            Self::Loop(f) => f.stream(t, [x, y0]) - f.stream(t, [x, y1]),
            Self::Chess(f) => f.flux_x(t, x, y0, y1),
            Self::Zero { .. } => 0.0,
        }
    }

    /// `int_{x0}^{x1} b_2(t, x, y) dx`, exact.
    pub fn flux_y(&self, t: f64, y: f64, x0: f64, x1: f64) -> f64 {
        match self {
            Self::Loop(f) => f.stream(t, [x1, y]) - f.stream(t, [x0, y]),
            Self::Chess(f) => f.flux_y(t, y, x0, x1),
            Self::Zero { .. } => 0.0,
        }
    }

    /// Flow from `t0` to `t1` (backward when `t1 < t0`).
    pub fn flow_map(&self, t0: f64, t1: f64, x: Point) -> Result<Point> {
        match self {
            Self::Loop(f) => crate::flow::loop_flow_map(f, t0, t1, x),
            Self::Chess(f) => Ok(f.flow_map(t0, t1, x)),
            Self::Zero { .. } => Ok(self.wrap(x)),
        }
    }

    /// JSON description of the assembly.
    pub fn describe(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Cell grid of the fundamental domain with `n` cells per side.
fn cell_grid(handle: &FieldHandle, n: usize) -> (Point, f64) {
    let (lo, l) = handle.domain();
    (lo, l / n as f64)
}

/// Largest net boundary flux over cells of side `h`, divided by `h`.
///
/// Face fluxes are exact integrals, so the result measures rounding only.
pub fn divergence_defect(handle: &FieldHandle, t: f64, h: f64) -> f64 {
    let n = (handle.side() / h).round().max(1.0) as usize;
    let (lo, h) = cell_grid(handle, n);
    let node = |i: usize| -> f64 { i as f64 * h };
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let (y0, y1) = (lo[1] + node(j), lo[1] + node(j + 1));
        for i in 0..n {
            let (x0, x1) = (lo[0] + node(i), lo[0] + node(i + 1));
            let net = handle.flux_x(t, x1, y0, y1) - handle.flux_x(t, x0, y0, y1)
                + handle.flux_y(t, y1, x0, x1)
                - handle.flux_y(t, y0, x0, x1);
            worst = worst.max(net.abs() / h);
        }
    }
    worst
}

/// Midpoint-rule `||b(t)||_{L^p}` on a `grid_n x grid_n` grid.
pub fn lp_norm_sample(handle: &FieldHandle, t: f64, p: f64, grid_n: usize) -> f64 {
    let (lo, h) = cell_grid(handle, grid_n);
    let mut acc = 0.0;
    for j in 0..grid_n {
        for i in 0..grid_n {
            let x = [lo[0] + (i as f64 + 0.5) * h, lo[1] + (j as f64 + 0.5) * h];
            let u = handle.velocity(t, x);
            acc += u[0].hypot(u[1]).powf(p);
        }
    }
    (acc * h * h).powf(1.0 / p)
}

/// `x,y,u,v` at cell centres.
pub fn write_snapshot_csv(handle: &FieldHandle, t: f64, grid_n: usize, mut out: impl Write) -> Result<()> {
    let (lo, h) = cell_grid(handle, grid_n);
    writeln!(out, "x,y,u,v")?;
    for j in 0..grid_n {
        for i in 0..grid_n {
            let x = [lo[0] + (i as f64 + 0.5) * h, lo[1] + (j as f64 + 0.5) * h];
            let u = handle.velocity(t, x);
            writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e}", x[0], x[1], u[0], u[1])?;
        }
    }
    Ok(())
}

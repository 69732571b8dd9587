//! Exact event-driven flows of the assembled fields and the arrival-time machinery.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::assembly::{parity_reflection, Level, LoopField};
use crate::fields::chess::{board, ChessField};
use crate::fields::{FieldHandle, Region};
use crate::params::LoopSchedule;
use crate::{add, norm, scale, sub, Error, Point, Result};

/// Distances below this are treated as "already at the event".
const EVENT_TOL: f64 = 1e-12;
const MAX_EVENTS: usize = 2_000_000;
/// Radius around the origin where the reflected copies meet.
const ORIGIN_TOL: f64 = 1e-12;

/// Closed-form motion on one piece of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    Rest,
    /// Displacement `u * |dt|`.
    Translate { u: Point },
    /// Rotation about `center` at signed angular speed `omega` per unit `|dt|`.
    Rotate { center: Point, omega: f64 },
}

impl Motion {
    pub fn apply(&self, x: Point, s: f64) -> Point {
        match *self {
            Motion::Rest => x,
            Motion::Translate { u } => add(x, scale(u, s)),
            Motion::Rotate { center, omega } => {
                let (sn, cs) = (omega * s).sin_cos();
                let y = sub(x, center);
                [center[0] + cs * y[0] - sn * y[1], center[1] + sn * y[0] + cs * y[1]]
            }
        }
    }

    /// Unit direction of motion at `x` (zero at rest).
    fn direction(&self, x: Point) -> Option<Point> {
        match *self {
            Motion::Rest => None,
            Motion::Translate { u } => {
                let n = norm(u);
                (n > 0.0).then(|| scale(u, 1.0 / n))
            }
            Motion::Rotate { center, omega } => {
                let y = sub(x, center);
                let r = norm(y);
                (r > 0.0).then(|| scale([-y[1], y[0]], omega.signum() / r))
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Motion::Rest => "rest",
            Motion::Translate { .. } => "straight",
            Motion::Rotate { .. } => "corner",
        }
    }
}

/// One closed-form piece of a trajectory, from `t0` to `t1` (either order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub x0: Point,
    pub motion: Motion,
    pub blocks: Vec<usize>,
    /// Exact elapsed time; can exceed the representable `|t1 - t0|` for very fast blocks.
    pub dt: f64,
}

impl Segment {
    pub fn at(&self, t: f64) -> Point {
        self.motion.apply(self.x0, (t - self.t0).abs().min(self.dt))
    }

    pub fn end(&self) -> Point {
        self.motion.apply(self.x0, self.dt)
    }

    pub fn duration(&self) -> f64 {
        self.dt
    }

    fn covers(&self, t: f64) -> bool {
        let (lo, hi) = if self.t0 <= self.t1 { (self.t0, self.t1) } else { (self.t1, self.t0) };
        t >= lo && t <= hi
    }
}

/// A flow path as a chain of closed-form segments (positions are the unwrapped lift).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub t1: f64,
    pub start: Point,
    pub segments: Vec<Segment>,
}

impl Trajectory {
    pub fn end(&self) -> Point {
        self.segments.last().map(Segment::end).unwrap_or(self.start)
    }

    /// Position at `t` between `t0` and `t1`.
    pub fn position(&self, t: f64) -> Point {
        // segments are ordered along the direction of integration
        let i = if self.t1 >= self.t0 {
            self.segments.partition_point(|s| s.t1 < t)
        } else {
            self.segments.partition_point(|s| s.t1 > t)
        };
        match self.segments.get(i) {
            Some(s) if s.covers(t) => s.at(t),
            Some(s) => s.x0,
            None => self.end(),
        }
    }

    pub fn sample(&self, times: &[f64]) -> Vec<Point> {
        times.iter().map(|&t| self.position(t)).collect()
    }

    /// Segment boundaries: `(time, position, blocks, region kind)`.
    pub fn events(&self) -> impl Iterator<Item = (f64, Point, &[usize], &'static str)> + '_ {
        self.segments.iter().map(|s| (s.t0, s.x0, s.blocks.as_slice(), s.motion.label()))
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,x,y,block,region")?;
        for (t, x, blocks, kind) in self.events() {
            let b = blocks.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";");
            writeln!(out, "{t:.17e},{:.17e},{:.17e},{b},{kind}", x[0], x[1])?;
        }
        let x = self.end();
        writeln!(out, "{:.17e},{:.17e},{:.17e},,end", self.t1, x[0], x[1])?;
        Ok(())
    }
}

/// Flow of the loop field from `t0` to `t1`.
pub fn loop_flow_map(field: &LoopField, t0: f64, t1: f64, x: Point) -> Result<Point> {
    integrate_loop(field, t0, t1, x, |_| {})
}

/// Flow path of any field from `t0` to `t1`.
pub fn flow_trajectory(handle: &FieldHandle, t0: f64, t1: f64, x: Point) -> Result<Trajectory> {
    let mut segments = Vec::new();
    let x = handle.wrap(x);
    match handle {
        FieldHandle::Loop(f) => {
            integrate_loop(f, t0, t1, x, |s| segments.push(s))?;
        }
        FieldHandle::Chess(f) => chess_segments(f, t0, t1, x, &mut segments),
        FieldHandle::Zero { .. } => {
            segments.push(Segment { t0, t1, x0: x, motion: Motion::Rest, blocks: vec![], dt: (t1 - t0).abs() });
        }
    }
    Ok(Trajectory { t0, t1, start: x, segments })
}

fn chess_segments(f: &ChessField, t0: f64, t1: f64, x: Point, out: &mut Vec<Segment>) {
    let forward = t1 >= t0;
    let mut x = x;
    let order: Box<dyn Iterator<Item = usize>> =
        if forward { Box::new(0..f.pieces.len()) } else { Box::new((0..f.pieces.len()).rev()) };
    for i in order {
        let p = &f.pieces[i];
        let (lo, hi) = if forward { (p.start.max(t0), p.end.min(t1)) } else { (p.start.max(t1), p.end.min(t0)) };
        if hi <= lo {
            continue;
        }
        let u = f.velocity(0.5 * (p.start + p.end), x);
        let sigma = if forward { 1.0 } else { -1.0 };
        let (a, b) = if forward { (lo, hi) } else { (hi, lo) };
        let seg = Segment { t0: a, t1: b, x0: x, motion: Motion::Translate { u: scale(u, sigma) }, blocks: vec![i], dt: hi - lo };
        x = seg.end();
        out.push(seg);
    }
}

/// Core event loop: sends each closed-form segment to `sink` and returns the end point.
///
/// Spatial events use every block's boundaries; time events only those of blocks whose
/// support holds the point, so far-away fast windows cost nothing.
fn integrate_loop(field: &LoopField, t0: f64, t1: f64, x: Point, mut sink: impl FnMut(Segment)) -> Result<Point> {
    let sigma = if t1 >= t0 { 1.0 } else { -1.0 };
    let all: Vec<usize> = (0..field.blocks.len()).collect();
    let mut x = field.wrap(x);
    let mut t = t0;
    let mut dir: Option<Point> = None;
    let mut events = 0usize;
    while sigma * (t1 - t) > 0.0 {
        events += 1;
        if events > MAX_EVENTS {
            return Err(Error::Flow(format!("more than {MAX_EVENTS} events between t = {t0} and {t1}")));
        }
        let probe = match dir {
            Some(d) => add(x, scale(d, EVENT_TOL)),
            None => x,
        };
        let holding: Vec<usize> = all.iter().copied().filter(|&i| field.blocks[i].block.contains(probe)).collect();
        let te = if sigma > 0.0 {
            field.next_event_among(holding.iter().copied(), t).min(t1)
        } else {
            field.prev_event_among(holding.iter().copied(), t).max(t1)
        };
        let mid = 0.5 * (t + te);
        let active: Vec<usize> = holding.into_iter().filter(|&i| field.is_active(i, mid)).collect();
        let (motion, blocks) = classify(field, &active, x, sigma, dir)?;
        if !matches!(motion, Motion::Rest) && norm(x) < ORIGIN_TOL {
            return Err(Error::Bifurcation { t, x: x[0], y: x[1] });
        }
        let left = (te - t).abs();
        let dt = match motion {
            Motion::Rest => left,
            Motion::Translate { u } => translate_event(field, &all, x, u).min(left),
            Motion::Rotate { center, omega } => rotate_event(field, &all, x, center, omega).min(left),
        };
        let (t_next, dt) = if dt >= left { (te, left) } else { (t + sigma * dt, dt) };
        let seg = Segment { t0: t, t1: t_next, x0: x, motion, blocks, dt };
        x = seg.end();
        // keep probing along the last motion so boundary points classify by where they go
        if let Some(d) = motion.direction(x) {
            dir = Some(d);
        }
        sink(seg);
        t = t_next;
    }
    Ok(x)
}

/// Motion regime just ahead of `x` along `dir`.
fn classify(field: &LoopField, active: &[usize], x: Point, sigma: f64, dir: Option<Point>) -> Result<(Motion, Vec<usize>)> {
    let probe = match dir {
        Some(d) => add(x, scale(d, EVENT_TOL)),
        None => x,
    };
    let mut u = [0.0, 0.0];
    let mut corner = None;
    let mut blocks = Vec::new();
    for &i in active {
        let b = &field.blocks[i].block;
        match b.region(probe) {
            Region::Outside | Region::Hole => {}
            Region::Straight { dir, .. } => {
                u = add(u, scale(dir, sigma * b.v));
                blocks.push(i);
            }
            Region::Corner { center, .. } => {
                corner = Some((center, b.v));
                blocks.push(i);
            }
        }
    }
    match (corner, blocks.len()) {
        (None, 0) => Ok((Motion::Rest, blocks)),
        (None, _) => Ok((Motion::Translate { u }, blocks)),
        (Some((center, v)), 1) => {
            let r = norm(sub(x, center));
            Ok((Motion::Rotate { center, omega: sigma * v / r }, blocks))
        }
        (Some(_), _) => Err(Error::Flow(format!(
            "curved part of a block overlaps blocks {blocks:?} at {x:?}; the flow is not closed-form there"
        ))),
    }
}

/// Time until the straight path `x + u s` meets a region boundary of an active block.
fn translate_event(field: &LoopField, active: &[usize], x: Point, u: Point) -> f64 {
    let speed = norm(u);
    if speed == 0.0 {
        return f64::INFINITY;
    }
    let s_min = EVENT_TOL / speed;
    let mut best = f64::INFINITY;
    let mut consider = |s: f64| {
        if s > s_min && s < best {
            best = s;
        }
    };
    for &i in active {
        let b = &field.blocks[i].block;
        let (xs, ys) = b.boundary_lines();
        if u[0] != 0.0 {
            xs.iter().for_each(|&l| consider((l - x[0]) / u[0]));
        }
        if u[1] != 0.0 {
            ys.iter().for_each(|&l| consider((l - x[1]) / u[1]));
        }
        for c in b.corner_centers() {
            let y = sub(x, c);
            let qa = u[0] * u[0] + u[1] * u[1];
            let qb = 2.0 * (y[0] * u[0] + y[1] * u[1]);
            for rad in [b.a, 2.0 * b.a] {
                let qc = y[0] * y[0] + y[1] * y[1] - rad * rad;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    consider((-qb - sq) / (2.0 * qa));
                    consider((-qb + sq) / (2.0 * qa));
                }
            }
        }
    }
    best
}

/// Time until the circular path about `center` meets a region boundary of an active block.
fn rotate_event(field: &LoopField, active: &[usize], x: Point, center: Point, omega: f64) -> f64 {
    let y = sub(x, center);
    let r = norm(y);
    let phi0 = y[1].atan2(y[0]);
    let sg = omega.signum();
    let min_angle = EVENT_TOL / r;
    let mut best = f64::INFINITY;
    let mut consider = |phi: f64| {
        let d = (sg * (phi - phi0)).rem_euclid(TAU);
        if d > min_angle && d < best {
            best = d;
        }
    };
    for &i in active {
        let b = &field.blocks[i].block;
        let (xs, ys) = b.boundary_lines();
        for l in xs {
            let c = (l - center[0]) / r;
            if c.abs() <= 1.0 {
                let a = c.acos();
                consider(a);
                consider(-a);
            }
        }
        for l in ys {
            let s = (l - center[1]) / r;
            if s.abs() <= 1.0 {
                let a = s.asin();
                consider(a);
                consider(std::f64::consts::PI - a);
            }
        }
        for c2 in b.corner_centers() {
            let dv = sub(c2, center);
            let d = norm(dv);
            if d == 0.0 {
                continue;
            }
            let base = dv[1].atan2(dv[0]);
            for rad in [b.a, 2.0 * b.a] {
                let c = (r * r + d * d - rad * rad) / (2.0 * r * d);
                if c.abs() <= 1.0 {
                    let a = c.acos();
                    consider(base + a);
                    consider(base - a);
                }
            }
        }
    }
    best / omega.abs()
}

/// Axis-aligned rectangle `(min, max)`.
pub type Rect = (Point, Point);

/// Whether `x` is in the restriction `rect[eps]` (distance more than `eps` from the complement).
pub fn rect_restricted(rect: &Rect, x: Point, eps: f64) -> bool {
    x[0] > rect.0[0] + eps && x[0] < rect.1[0] - eps && x[1] > rect.0[1] + eps && x[1] < rect.1[1] - eps
}

/// The starting square `R_0 = x_0 + [0, a_0]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartZone {
    pub x0: Point,
    pub a0: f64,
    pub rect: Rect,
}

/// `R_0` sits on the bottom strip of pipe 0, immediately upstream of `S_0`.
///
/// Covering `S_0` at every time `k a_1/v_0`, `k = 1..a_0/a_1`, pins the arc interval of
/// `R_0` on every streamline to the `a_0` just before `S_0`.
pub fn start_zone(schedule: &LoopSchedule) -> StartZone {
    let a0 = schedule.a[0];
    let (lo, hi) = schedule.crossing_rect(0);
    let x0 = [lo[0] - a0, lo[1]];
    StartZone { x0, a0, rect: (x0, [lo[0], hi[1]]) }
}

impl StartZone {
    pub fn contains(&self, x: Point, eps: f64) -> bool {
        rect_restricted(&self.rect, x, eps)
    }

    /// Checks the defining covering property on a `k x k` grid of `S_0`; returns the worst miss.
    pub fn verify_coverage(&self, schedule: &LoopSchedule, k: usize) -> (bool, f64) {
        let pipe = schedule.pipe(0);
        let s0 = schedule.crossing_rect(0);
        let m = schedule.ratio[0];
        let tau = schedule.tau_bar[1];
        let mut worst: f64 = 0.0;
        for j in 1..=m {
            for ix in 0..k {
                for iy in 0..k {
                    let y = [
                        s0.0[0] + (ix as f64 + 0.5) / k as f64 * (s0.1[0] - s0.0[0]),
                        s0.0[1] + (iy as f64 + 0.5) / k as f64 * (s0.1[1] - s0.0[1]),
                    ];
                    let back = pipe.flow(y, -(j as f64) * tau);
                    let r = &self.rect;
                    let miss = (r.0[0] - back[0]).max(back[0] - r.1[0]).max(r.0[1] - back[1]).max(back[1] - r.1[1]);
                    worst = worst.max(miss);
                }
            }
        }
        (worst <= 1e-9, worst)
    }
}

/// Which margins the arrival sets and restrictions use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginPolicy {
    /// The stated `a^{1+eps}` margins.
    Paper,
    /// Margins replaced by a positional tolerance (brackets `[1, a_{k-2}/a_k - 1]`).
    Substitute,
}

/// Positional tolerance used in place of collapsed margins.
pub const SUBSTITUTE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCombinatorics {
    pub n: usize,
    pub policy: MarginPolicy,
    /// Inclusive integer brackets for `beta_1..beta_{n+1}`.
    pub brackets: Vec<(u64, u64)>,
    pub count: u128,
    pub schedule: LoopSchedule,
}

/// `a_{k-2}/a_k` as an integer (exact for the rounded schedule).
fn level_ratio(s: &LoopSchedule, k: usize) -> u64 {
    if k == 1 {
        s.ratio[0]
    } else {
        s.ratio[k - 2] * s.ratio[k - 1]
    }
}

pub fn build_arrival_combinatorics(schedule: &LoopSchedule, n: usize, policy: MarginPolicy) -> Result<ArrivalCombinatorics> {
    if n > schedule.n_max() {
        return Err(Error::Schedule(format!("level n = {n} exceeds n_max = {}", schedule.n_max())));
    }
    let eps = schedule.params.epsilon;
    let mut brackets = Vec::new();
    let mut count: u128 = 1;
    for k in 1..=n + 1 {
        let m = level_ratio(schedule, k);
        let (lo, hi) = match policy {
            MarginPolicy::Paper => {
                let margin = 4.0 * schedule.a_bracket(k).powf(1.0 + eps) / schedule.a[k];
                let lo = margin.ceil();
                let hi = (m as f64 - margin).floor();
                if hi < lo {
                    return Err(Error::EmptyArrivals(format!(
                        "k = {k}: bracket [{margin:.4}, {:.4}] contains no integer (a_(k-2)/a_k = {m})",
                        m as f64 - margin
                    )));
                }
                (lo as u64, hi as u64)
            }
            MarginPolicy::Substitute => (1, m - 1),
        };
        count *= u128::from(hi - lo + 1);
        brackets.push((lo, hi));
    }
    Ok(ArrivalCombinatorics { n, policy, brackets, count, schedule: schedule.clone() })
}

impl ArrivalCombinatorics {
    /// Multi-index number `idx` in mixed radix (`beta_1` slowest).
    pub fn beta(&self, idx: u128) -> Vec<u64> {
        let mut rest = idx % self.count;
        let mut out = vec![0; self.brackets.len()];
        for (k, &(lo, hi)) in self.brackets.iter().enumerate().rev() {
            let w = u128::from(hi - lo + 1);
            out[k] = lo + (rest % w) as u64;
            rest /= w;
        }
        out
    }

    /// `(9/10, 1) * a_0^2 / (a_n a_{n+1})`.
    pub fn cardinality_bounds(&self) -> (f64, f64) {
        let s = &self.schedule;
        let top = s.a[0] * s.a[0] / (s.a[self.n] * s.a[self.n + 1]);
        (0.9 * top, top)
    }

    fn tau(&self, k: usize) -> f64 {
        self.schedule.tau_bar[k]
    }

    /// `t_{n,beta}`: arrival in the middle of the gluing pipe.
    pub fn t_arrival(&self, beta: &[u64]) -> f64 {
        let s = &self.schedule;
        self.t_bar(self.n as isize, beta) + 0.5 * s.t_glue[self.n]
    }

    /// `t_bar_{q,beta}` for `q = -1..=n`.
    pub fn t_bar(&self, q: isize, beta: &[u64]) -> f64 {
        if q < 0 {
            return 0.0;
        }
        let q = q as usize;
        let s = &self.schedule;
        let waits: f64 = (1..=q + 1).map(|k| beta[k - 1] as f64 * self.tau(k)).sum();
        s.t_cum[q] + waits
    }

    /// `t_bar_{q,beta,max}`; equals `t_{n,beta}` at `q = n + 1`.
    pub fn t_bar_max(&self, q: usize, beta: &[u64]) -> f64 {
        if q > self.n {
            return self.t_arrival(beta);
        }
        let extra: f64 = (q + 2..=self.n + 1)
            .map(|k| level_ratio(&self.schedule, k) as f64 * self.tau(k))
            .sum();
        self.t_bar(q as isize, beta) + extra
    }

    /// The mirrored multi-index `a_{k-2}/a_k - beta_k`.
    pub fn beta_mirror(&self, beta: &[u64]) -> Vec<u64> {
        beta.iter()
            .enumerate()
            .map(|(i, &b)| level_ratio(&self.schedule, i + 1) - b)
            .collect()
    }

    /// Forward times `s_bar_{q,beta}` for `q = -1..=n` (`q = -1` gives `T_n`).
    pub fn s_bar(&self, q: isize, beta: &[u64]) -> f64 {
        let s = &self.schedule;
        let horizon = s.t_horizon[self.n];
        if q < 0 {
            return horizon;
        }
        let pipe0 = 2.0 * s.a[0] / s.v[0];
        horizon - self.t_bar(q, &self.beta_mirror(beta)) - pipe0
    }

    /// `s_bar_{q,beta,min}`, the mirror image of `t_bar_{q,beta,max}`.
    pub fn s_bar_min(&self, q: usize, beta: &[u64]) -> f64 {
        if q > self.n {
            return self.t_arrival(beta);
        }
        let extra: f64 = (q + 2..=self.n + 1)
            .map(|k| level_ratio(&self.schedule, k) as f64 * self.tau(k))
            .sum();
        self.s_bar(q as isize, beta) - extra
    }

    /// All arrival times `J_n` (sorted), when there are at most `limit` of them.
    pub fn arrival_times(&self, limit: u128) -> Option<Vec<f64>> {
        if self.count > limit {
            return None;
        }
        let mut v: Vec<f64> = (0..self.count).map(|i| self.t_arrival(&self.beta(i))).collect();
        v.sort_by(f64::total_cmp);
        Some(v)
    }

    /// Margins at level `q` for the stage checks.
    pub fn margins(&self) -> Margins {
        let s = &self.schedule;
        let e = 1.0 + s.params.epsilon;
        let sub = |m: f64| match self.policy {
            MarginPolicy::Paper => m,
            MarginPolicy::Substitute => SUBSTITUTE_TOL,
        };
        Margins {
            zone: sub(2.0 * s.a[self.n + 1].powf(e)),
            pipe_stage: (0..=self.n).map(|q| sub(2.0 * s.a[q].powf(e))).collect(),
            crossing_stage: (0..=self.n).map(|q| sub(s.a[q + 1].powf(e))).collect(),
            confine: (0..=self.n).map(|q| sub(s.a[q].powf(e))).collect(),
            terminal: sub(s.a[0].powf(e)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub zone: f64,
    pub pipe_stage: Vec<f64>,
    pub crossing_stage: Vec<f64>,
    pub confine: Vec<f64>,
    pub terminal: f64,
}

/// The rectangle of the gluing pipe around the arrival point (before restriction).
pub fn glue_zone(schedule: &LoopSchedule, n: usize, policy: MarginPolicy) -> Rect {
    let (an, an1, s) = (schedule.a[n], schedule.a[n + 1], schedule.offsets[n]);
    let half = match policy {
        MarginPolicy::Paper => 0.5 * (an - 8.0 * an.powf(1.0 + schedule.params.epsilon)),
        MarginPolicy::Substitute => 0.5 * an,
    };
    if n % 2 == 0 {
        ([-half, s - 2.0 * an - an1], [half, s - 2.0 * an])
    } else {
        ([-s - 2.0 * an - an1, -half], [-s - 2.0 * an, half])
    }
}

/// Deterministic `k x k` grid of starts inside `glue_zone[margin]`; empty if the zone is.
pub fn sample_glue_zone(schedule: &LoopSchedule, n: usize, policy: MarginPolicy, margin: f64, k: usize) -> Vec<Point> {
    let (lo, hi) = glue_zone(schedule, n, policy);
    let (lo, hi) = ([lo[0] + margin, lo[1] + margin], [hi[0] - margin, hi[1] - margin]);
    if !(hi[0] > lo[0] && hi[1] > lo[1]) {
        return vec![];
    }
    let mut v = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            v.push([
                lo[0] + (i as f64 + 0.5) / k as f64 * (hi[0] - lo[0]),
                lo[1] + (j as f64 + 0.5) / k as f64 * (hi[1] - lo[1]),
            ]);
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub sample: usize,
    pub stage: String,
    pub position: Point,
}

/// Outcome of a backward or forward property sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub n: usize,
    pub direction: String,
    pub policy: MarginPolicy,
    pub samples: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    pub failures_by_stage: BTreeMap<String, usize>,
    pub first_failures: Vec<StageFailure>,
    /// `max_q |t_bar_{q+1} - t_bar_q| / (6 a_q / v_{q+1})` over the sampled multi-indices.
    pub worst_gap_ratio: f64,
    /// Fraction of samples ending in the expected quadrant (forward sweeps).
    pub quadrant_fraction: f64,
}

fn pipe_block(field: &LoopField, q: usize, reflection: Option<crate::fields::Reflection>) -> crate::fields::BuildingBlock {
    let mut b = *field.pipe(q);
    if let Some(r) = reflection {
        b.center = r.apply(b.center);
    }
    b
}

fn map_rect(rect: &Rect, r: crate::fields::Reflection) -> Rect {
    let a = r.apply(rect.0);
    let b = r.apply(rect.1);
    ([a[0].min(b[0]), a[1].min(b[1])], [a[0].max(b[0]), a[1].max(b[1])])
}

/// Interior sample times of `[lo, hi]` plus segment ends inside it.
fn confinement_times(traj: &Trajectory, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=16).map(|i| lo + (hi - lo) * i as f64 / 16.0).collect();
    v.extend(traj.segments.iter().map(|s| s.t0).filter(|&t| t > lo && t < hi));
    v
}

/// Which sample multi-index a start uses.
pub fn beta_for(comb: &ArrivalCombinatorics, i: usize) -> Vec<u64> {
    comb.beta((i as u128).wrapping_mul(2_654_435_761) % comb.count)
}

fn gap_ratio(comb: &ArrivalCombinatorics, beta: &[u64]) -> f64 {
    let s = &comb.schedule;
    (0..comb.n)
        .map(|q| {
            let gap = comb.t_bar(q as isize + 1, beta) - comb.t_bar(q as isize, beta);
            gap / (6.0 * s.a[q] / s.v[q + 1])
        })
        .fold(0.0, f64::max)
}

fn summarize(n: usize, direction: &str, policy: MarginPolicy, outcomes: Vec<(Option<StageFailure>, f64, bool)>) -> PropertyReport {
    let samples = outcomes.len();
    let mut failures_by_stage = BTreeMap::new();
    let mut first_failures = Vec::new();
    let mut passed = 0;
    let mut worst_gap_ratio: f64 = 0.0;
    let mut quadrant = 0;
    for (f, g, quad) in outcomes {
        worst_gap_ratio = worst_gap_ratio.max(g);
        quadrant += usize::from(quad);
        match f {
            None => passed += 1,
            Some(f) => {
                *failures_by_stage.entry(f.stage.clone()).or_insert(0) += 1;
                if first_failures.len() < 20 {
                    first_failures.push(f);
                }
            }
        }
    }
    let frac = |k: usize| if samples == 0 { 0.0 } else { k as f64 / samples as f64 };
    PropertyReport {
        n,
        direction: direction.to_string(),
        policy,
        samples,
        passed,
        pass_fraction: frac(passed),
        failures_by_stage,
        first_failures,
        worst_gap_ratio,
        quadrant_fraction: frac(quadrant),
    }
}

/// Backward chain from the gluing zone into `R_0`.
pub fn verify_backward_property(field: &LoopField, comb: &ArrivalCombinatorics, samples: &[Point]) -> Result<PropertyReport> {
    let s = &comb.schedule;
    let n = comb.n;
    let m = comb.margins();
    let zone = start_zone(s);
    let outcomes: Vec<Result<(Option<StageFailure>, f64, bool)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let beta = beta_for(comb, i);
            let t_start = comb.t_arrival(&beta);
            let traj = flow_trajectory(&FieldHandle::Loop(field.clone()), t_start, 0.0, x)?;
            let fail = |stage: String, p: Point| Some(StageFailure { sample: i, stage, position: p });
            let mut failure = None;
            for q in (0..=n).rev() {
                let t = comb.t_bar(q as isize, &beta);
                let p = traj.position(t);
                let pipe = pipe_block(field, q, None);
                if !pipe.contains_restricted(p, m.pipe_stage[q]) {
                    failure = fail(format!("stage q={q}: outside Q_q"), p);
                    break;
                }
                if !rect_restricted(&s.crossing_rect(q), p, m.crossing_stage[q]) {
                    failure = fail(format!("stage q={q}: outside S_q"), p);
                    break;
                }
                let lo = comb.t_bar(q as isize - 1, &beta);
                if let Some(&bad) = confinement_times(&traj, lo, t)
                    .iter()
                    .find(|&&tc| !pipe.contains_restricted(traj.position(tc), m.confine[q]))
                {
                    failure = fail(format!("confinement q={q}"), traj.position(bad));
                    break;
                }
            }
            if failure.is_none() {
                let p = traj.end();
                if !zone.contains(p, m.terminal) {
                    failure = fail("terminal: outside R_0".into(), p);
                }
            }
            Ok((failure, gap_ratio(comb, &beta), true))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(n, "backward", comb.policy, outcomes))
}

/// Forward chain from the gluing zone into the reflected pipes and `P_n(Q_0)`.
pub fn verify_forward_property(field: &LoopField, comb: &ArrivalCombinatorics, samples: &[Point]) -> Result<PropertyReport> {
    let s = &comb.schedule;
    let n = comb.n;
    let m = comb.margins();
    let pn = parity_reflection(n);
    let zone = start_zone(s);
    let a0 = s.a[0];
    let horizon = field.horizon;
    let outcomes: Vec<Result<(Option<StageFailure>, f64, bool)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let beta = beta_for(comb, i);
            let t_start = comb.t_arrival(&beta);
            let traj = flow_trajectory(&FieldHandle::Loop(field.clone()), t_start, horizon, x)?;
            let fail = |stage: String, p: Point| Some(StageFailure { sample: i, stage, position: p });
            let mut failure = None;
            for q in (0..=n).rev() {
                let t = comb.s_bar(q as isize, &beta);
                let p = traj.position(t);
                let pipe = pipe_block(field, q, Some(pn));
                if !pipe.contains_restricted(p, m.pipe_stage[q]) {
                    failure = fail(format!("stage q={q}: outside P_n(Q_q)"), p);
                    break;
                }
                if !rect_restricted(&map_rect(&s.crossing_rect(q), pn), p, m.crossing_stage[q]) {
                    failure = fail(format!("stage q={q}: outside P_n(S_q)"), p);
                    break;
                }
                let hi = comb.s_bar(q as isize - 1, &beta);
                if let Some(&bad) = confinement_times(&traj, t, hi)
                    .iter()
                    .find(|&&tc| !pipe.contains_restricted(traj.position(tc), m.confine[q]))
                {
                    failure = fail(format!("confinement q={q}"), traj.position(bad));
                    break;
                }
            }
            let p = traj.end();
            let quad = if n % 2 == 0 { p[0] > a0 && p[1] > a0 } else { p[0] < -a0 && p[1] < -a0 };
            if failure.is_none() {
                // the endpoint sits 2 a_0 upstream of P_n(R_0) along pipe 0
                let back = pn.apply(p);
                let shifted = field.pipe(0).flow(back, 2.0 * a0 / s.v[0]);
                if !zone.contains(shifted, m.terminal) {
                    failure = fail("terminal: not 2a_0 upstream of P_n(R_0)".into(), p);
                } else if !quad {
                    failure = fail("terminal: wrong quadrant".into(), p);
                }
            }
            Ok((failure, gap_ratio(comb, &beta), quad))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(n, "forward", comb.policy, outcomes))
}

/// `int |grad w_{q+1}|_{L^inf(B_radius(gamma(s)))} ds` over the whole trajectory.
///
/// Only blocks of level `q + 1` count; each segment is split into 64 midpoint cells.
pub fn gronwall_budget(field: &LoopField, traj: &Trajectory, q: usize, radius: f64) -> f64 {
    let level: Vec<usize> = (0..field.blocks.len())
        .filter(|&i| field.blocks[i].level == Level::Pipe(q + 1))
        .collect();
    let mut total = 0.0;
    for seg in &traj.segments {
        let dur = seg.duration();
        if dur == 0.0 {
            continue;
        }
        let cells = 64;
        let h = dur / cells as f64;
        for c in 0..cells {
            let s = (c as f64 + 0.5) * h;
            let t = seg.t0 + (seg.t1 - seg.t0).signum() * s;
            let x = seg.motion.apply(seg.x0, s);
            let g = level
                .iter()
                .filter(|&&i| field.is_active(i, t))
                .map(|&i| field.blocks[i].block.gradient_in_ball(x, radius))
                .fold(0.0, f64::max);
            total += g * h;
        }
    }
    total
}

/// Budget for one full revolution of a single block along the streamline through `x`.
pub fn block_loop_budget(block: &crate::fields::BuildingBlock, x: Point, radius: f64) -> f64 {
    let Some((d, _)) = block.arc_coordinate(x) else { return 0.0 };
    let period = block.perimeter(d) / block.v;
    let cells = 4096;
    let h = period / cells as f64;
    (0..cells)
        .map(|c| block.gradient_in_ball(block.flow(x, (c as f64 + 0.5) * h), radius) * h)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileMismatch {
    pub stage: String,
    pub cell: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChessFlowReport {
    pub q: usize,
    pub tiles_checked: usize,
    /// `board_q -> board_{q+1}` on `[t_q, t_{q+1})`.
    pub refine_mismatches: usize,
    /// `board_q -> -board_q` on `J_{q,1}`.
    pub swap_mismatches: usize,
    /// `board_{q+1} -> -board_q` on `[T - t_{q+1}, T - t_q)`.
    pub coarsen_mismatches: usize,
    /// `board_q` unchanged on `I_{q,1}`.
    pub idle_mismatches: usize,
    pub first_mismatch: Option<TileMismatch>,
    pub pass: bool,
}

/// Tile-permutation check of the chess flow at level `q`.
///
/// Every `a_{q+1}` cell of one `2 a_q` period is pulled back through the flow; the
/// fields and boards are `2 a_q`-periodic, so one period covers the torus.
pub fn verify_chess_flow(field: &ChessField, q: usize) -> Result<ChessFlowReport> {
    if q >= field.n {
        return Err(Error::Schedule(format!("level q = {q} needs n > q, field has n = {}", field.n)));
    }
    let s = &field.schedule;
    let (a, a1) = (s.a[q], s.a[q + 1]);
    let periods = 1.0 / (2.0 * a);
    if (periods - periods.round()).abs() > 1e-9 {
        return Err(Error::Schedule(format!("1/(2 a_{q}) = {periods} is not an integer; boards are not periodic")));
    }
    let cells = (2.0 * a / a1).round() as usize;
    let (t_q, t_q1) = (s.t_steps[q], s.t_steps[q + 1]);
    let horizon = field.horizon;
    let stages: [(&str, f64, f64, f64, f64, f64, f64); 4] = [
        // name, t_from, t_to, source tile, source sign, target tile, target sign
        ("refine", t_q, t_q1, a, 1.0, a1, 1.0),
        ("swap", s.interval_j(q, 1).0, s.interval_j(q, 1).1, a, 1.0, a, -1.0),
        ("coarsen", horizon - t_q1, horizon - t_q, a1, 1.0, a, -1.0),
        ("idle", s.interval_i(q, 1).0, s.interval_i(q, 1).1, a, 1.0, a, 1.0),
    ];
    let mut counts = [0usize; 4];
    let mut first = None;
    let inset = [0.25, 0.75];
    for (k, &(name, t0, t1, src, ssign, dst, dsign)) in stages.iter().enumerate() {
        let bad: Vec<Point> = (0..cells * cells)
            .into_par_iter()
            .filter_map(|idx| {
                let (i, j) = (idx % cells, idx / cells);
                let mut ok = true;
                for fx in inset {
                    for fy in inset {
                        let y = [(i as f64 + fx) * a1, (j as f64 + fy) * a1];
                        let pre = field.flow_map(t1, t0, y);
                        if ssign * board(src, pre) != dsign * board(dst, y) {
                            ok = false;
                        }
                    }
                }
                (!ok).then(|| [i as f64 * a1, j as f64 * a1])
            })
            .collect();
        counts[k] = bad.len();
        if first.is_none() {
            if let Some(&cell) = bad.first() {
                first = Some(TileMismatch { stage: name.to_string(), cell });
            }
        }
    }
    Ok(ChessFlowReport {
        q,
        tiles_checked: cells * cells,
        refine_mismatches: counts[0],
        swap_mismatches: counts[1],
        coarsen_mismatches: counts[2],
        idle_mismatches: counts[3],
        pass: counts.iter().all(|&c| c == 0),
        first_mismatch: first,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::assemble_loop_field;
    use crate::params::{build_loop_schedule, LoopParams};

    #[test]
    fn motion_rotation_keeps_radius() {
        let m = Motion::Rotate { center: [1.0, 2.0], omega: 3.0 };
        let y = m.apply([1.5, 2.0], 0.7);
        assert!((norm(sub(y, [1.0, 2.0])) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn loop_round_trip() {
        let s = build_loop_schedule(&LoopParams::default()).unwrap();
        let f = assemble_loop_field(&s, 1).unwrap();
        let x = s.crossing_center(0);
        let y = loop_flow_map(&f, 0.0, 0.3 * f.horizon, x).unwrap();
        let z = loop_flow_map(&f, 0.3 * f.horizon, 0.0, y).unwrap();
        assert!(norm(sub(x, z)) < 1e-10, "{x:?} {z:?}");
    }
}

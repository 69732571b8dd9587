//! Stochastic flows, Feynman-Kac estimators and Brownian excursion statistics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::{FieldHandle, TimeWindows};
use crate::flow::{flow_trajectory, ArrivalCombinatorics};
use crate::{Error, Point, Result};

/// Steps per RNG block; a particle's stream is re-keyed every block.
pub const STEPS_PER_BLOCK: u64 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// How the Euler-Maruyama step is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DtPolicy {
    /// `dt <= min(window width, width/speed) / divisor` on every piece.
    Auto { divisor: f64 },
    /// A requested step; refused when larger than the `Auto { divisor: 16 }` limit.
    Fixed(f64),
}

impl Default for DtPolicy {
    fn default() -> Self {
        Self::Auto { divisor: 16.0 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed of one block of one particle's noise.
pub fn stream_seed(master: u64, particle: u64, block: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ particle) ^ block.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Standard normal pairs for one particle, independent of scheduling.
pub struct NoiseStream {
    master: u64,
    particle: u64,
    step: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(master: u64, particle: u64) -> Self {
        Self { master, particle, step: 0, rng: ChaCha8Rng::seed_from_u64(stream_seed(master, particle, 0)) }
    }

    pub fn next_pair(&mut self) -> Point {
        if self.step > 0 && self.step % STEPS_PER_BLOCK == 0 {
            let block = self.step / STEPS_PER_BLOCK;
            self.rng = ChaCha8Rng::seed_from_u64(stream_seed(self.master, self.particle, block));
        }
        self.step += 1;
        [StandardNormal.sample(&mut self.rng), StandardNormal.sample(&mut self.rng)]
    }
}

/// Increments of `sqrt(2 kappa) W` on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    pub times: Vec<f64>,
    /// Per step; each component has variance `2 kappa |dt|`.
    pub increments: Vec<Point>,
    pub master: u64,
    pub particle: u64,
}

impl BrownianPath {
    pub fn generate(master: u64, particle: u64, times: &[f64], kappa: f64) -> Self {
        let mut noise = NoiseStream::new(master, particle);
        let increments = times
            .windows(2)
            .map(|w| {
                let s = (2.0 * kappa * (w[1] - w[0]).abs()).sqrt();
                let z = noise.next_pair();
                [s * z[0], s * z[1]]
            })
            .collect();
        Self { times: times.to_vec(), increments, master, particle }
    }

    /// Cumulative path, starting at 0.
    pub fn cumulative(&self) -> Vec<Point> {
        let mut w = vec![[0.0, 0.0]];
        for d in &self.increments {
            let l = *w.last().unwrap();
            w.push([l[0] + d[0], l[1] + d[1]]);
        }
        w
    }
}

/// Largest stable step on the piece of the field around `t`.
fn step_limit(handle: &FieldHandle, t: f64, divisor: f64) -> f64 {
    let width = match handle {
        FieldHandle::Loop(f) => f
            .active_blocks(t)
            .iter()
            .filter_map(|&i| match f.blocks[i].windows {
                TimeWindows::Periodic { width, .. } => Some(width),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min),
        FieldHandle::Chess(c) => c.piece_at(t).map(|i| c.pieces[i].end - c.pieces[i].start).unwrap_or(f64::INFINITY),
        FieldHandle::Zero { .. } => f64::INFINITY,
    };
    width.min(handle.crossing_time(t)) / divisor
}

/// Shared time grid from `t0` to `t1` (either order) containing every breakpoint and `extra` time.
pub fn step_grid(handle: &FieldHandle, t0: f64, t1: f64, policy: DtPolicy, extra: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let mut knots = vec![lo];
    knots.extend(handle.breakpoints(lo, hi));
    knots.extend(extra.iter().copied().filter(|&t| t > lo && t < hi));
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut grid = vec![lo];
    for w in knots.windows(2) {
        let (s, e) = (w[0], w[1]);
        if e <= s {
            continue;
        }
        let mid = 0.5 * (s + e);
        let limit = step_limit(handle, mid, 16.0);
        let dt = match policy {
            DtPolicy::Auto { divisor } => step_limit(handle, mid, divisor),
            DtPolicy::Fixed(dt) => {
                if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
                    return Err(Error::Sde(format!(
                        "dt = {dt:e} exceeds the step limit {limit:e} on [{s:e}, {e:e}]"
                    )));
                }
                dt
            }
        };
        let k = if dt.is_finite() { ((e - s) / dt).ceil().max(1.0) as usize } else { 1 };
        for j in 1..k {
            grid.push(s + (e - s) * j as f64 / k as f64);
        }
        grid.push(e);
    }
    if t1 < t0 {
        grid.reverse();
    }
    Ok(grid)
}

/// One Euler-Maruyama path on `grid`; returns positions (lifted) at the grid indices in `record`.
fn em_path(handle: &FieldHandle, grid: &[f64], start: Point, kappa: f64, master: u64, particle: u64, record: &[usize]) -> Result<Vec<Point>> {
    let sigma = if grid.last() >= grid.first() { 1.0 } else { -1.0 };
    let mut noise = NoiseStream::new(master, particle);
    let mut x = start;
    let mut out = Vec::with_capacity(record.len());
    let mut r = 0;
    for k in 0..grid.len() {
        while r < record.len() && record[r] == k {
            out.push(x);
            r += 1;
        }
        if k + 1 == grid.len() {
            break;
        }
        let dt = (grid[k + 1] - grid[k]).abs();
        // the field is constant in time on each step, so its midpoint time is unambiguous
        let b = handle.velocity(0.5 * (grid[k] + grid[k + 1]), handle.wrap(x));
        let z = noise.next_pair();
        let s = (2.0 * kappa * dt).sqrt();
        x = [x[0] + sigma * b[0] * dt + s * z[0], x[1] + sigma * b[1] * dt + s * z[1]];
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::Sde(format!("particle {particle} left the reals at t = {}", grid[k + 1])));
        }
    }
    Ok(out)
}

/// Indices of `times` in `grid` (each time must be a grid knot).
fn grid_indices(grid: &[f64], times: &[f64]) -> Result<Vec<usize>> {
    let forward = grid.last() >= grid.first();
    times
        .iter()
        .map(|&t| {
            let i = if forward {
                grid.partition_point(|&g| g < t)
            } else {
                grid.partition_point(|&g| g > t)
            };
            match grid.get(i) {
                Some(&g) if (g - t).abs() <= 1e-12 * (1.0 + t.abs()) => Ok(i),
                _ => Err(Error::Sde(format!("checkpoint {t} is not on the step grid"))),
            }
        })
        .collect()
}

/// Ensemble of stochastic trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeEnsemble {
    pub direction: Direction,
    pub t0: f64,
    pub t1: f64,
    pub kappa: f64,
    pub master_seed: u64,
    pub steps: usize,
    pub starts: Vec<Point>,
    pub per_start: usize,
    pub checkpoints: Vec<f64>,
    /// `positions[particle][checkpoint]`, unwrapped lifts.
    pub positions: Vec<Vec<Point>>,
}

impl SdeEnsemble {
    pub fn particles(&self) -> usize {
        self.positions.len()
    }

    /// Terminal positions wrapped to the torus.
    pub fn terminal_wrapped(&self, handle: &FieldHandle) -> Vec<Point> {
        self.positions.iter().map(|p| handle.wrap(*p.last().unwrap())).collect()
    }

    /// `particle,t,x,y` rows.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "particle,t,x,y")?;
        for (i, p) in self.positions.iter().enumerate() {
            for (t, x) in self.checkpoints.iter().zip(p) {
                writeln!(out, "{i},{t:.17e},{:.17e},{:.17e}", x[0], x[1])?;
            }
        }
        Ok(())
    }
}

/// Euler-Maruyama ensemble from `t0` to `t1`; `t1 < t0` integrates the backward flow.
///
/// Particle `s * per_start + j` starts at `starts[s]` and owns noise stream `(seed, particle)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sde(
    handle: &FieldHandle,
    t0: f64,
    t1: f64,
    starts: &[Point],
    per_start: usize,
    kappa: f64,
    policy: DtPolicy,
    seed: u64,
    checkpoints: &[f64],
) -> Result<SdeEnsemble> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Sde(format!("kappa = {kappa} must be finite and non-negative")));
    }
    let mut cps: Vec<f64> = checkpoints.to_vec();
    if !cps.iter().any(|&t| t == t1) {
        cps.push(t1);
    }
    let grid = step_grid(handle, t0, t1, policy, &cps)?;
    if t1 >= t0 {
        cps.sort_by(f64::total_cmp);
    } else {
        cps.sort_by(|a, b| b.total_cmp(a));
    }
    let idx = grid_indices(&grid, &cps)?;
    let n = starts.len() * per_start;
    let positions = (0..n)
        .into_par_iter()
        .map(|p| em_path(handle, &grid, starts[p / per_start], kappa, seed, p as u64, &idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(SdeEnsemble {
        direction: if t1 >= t0 { Direction::Forward } else { Direction::Backward },
        t0,
        t1,
        kappa,
        master_seed: seed,
        steps: grid.len() - 1,
        starts: starts.to_vec(),
        per_start,
        checkpoints: cps,
        positions,
    })
}

/// Distance on the torus of `handle`.
pub fn torus_distance(handle: &FieldHandle, x: Point, y: Point) -> f64 {
    let l = handle.side();
    let d = |a: f64, b: f64| {
        let r = (a - b).rem_euclid(l);
        r.min(l - r)
    };
    d(x[0], y[0]).hypot(d(x[1], y[1]))
}

/// Sup over `[0, duration]` of `|W_t|` for standard 2-d Brownian paths sampled on `steps` steps.
pub fn brownian_sup_excursions(master: u64, paths: usize, duration: f64, steps: usize) -> Vec<f64> {
    (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = NoiseStream::new(master, p as u64);
            let s = (duration / steps as f64).sqrt();
            let (mut w, mut sup) = ([0.0f64, 0.0f64], 0.0f64);
            for _ in 0..steps {
                let z = noise.next_pair();
                w = [w[0] + s * z[0], w[1] + s * z[1]];
                sup = sup.max(w[0].hypot(w[1]));
            }
            sup
        })
        .collect()
}

/// `d exp(-C^2 / (2 d (b - a)))`.
pub fn doob_bound(d: f64, duration: f64, c: f64) -> f64 {
    d * (-c * c / (2.0 * d * duration)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoobReport {
    pub paths: usize,
    pub threshold: f64,
    pub duration: f64,
    pub fraction: f64,
    pub bound: f64,
    /// Binomial standard deviation at the bound.
    pub sigma: f64,
    pub pass: bool,
}

/// Fraction of paths whose excursion reaches `c`, against the Doob bound (d = 2).
pub fn empirical_doob(excursions: &[f64], duration: f64, c: f64) -> DoobReport {
    let n = excursions.len();
    let hits = excursions.iter().filter(|&&s| s >= c).count();
    let fraction = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    let bound = doob_bound(2.0, duration, c);
    let p = bound.min(1.0);
    let sigma = (p * (1.0 - p) / n.max(1) as f64).sqrt();
    DoobReport { paths: n, threshold: c, duration, fraction, bound, sigma, pass: fraction <= bound + 3.0 * sigma }
}

/// Good-set statistics of the noise along the stages of the loop chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodSetStats {
    pub n: usize,
    pub kappa: f64,
    /// `K = exp(C_budget)`.
    pub k_factor: f64,
    pub c_budget: f64,
    /// `a_q^{1+eps} / (4K)` for `q = 0..=n`.
    pub thresholds: Vec<f64>,
    pub stage_lengths: Vec<f64>,
    /// Fraction of paths whose stage-`q` excursion reaches the threshold.
    pub level_exceedance: Vec<f64>,
    pub paths: usize,
    /// Empirical `P(Omega_n^c)` (backward stages) and `P(tilde Omega_n^c)` (forward stages).
    pub p_bad_backward: f64,
    pub p_bad_forward: f64,
    /// Union of per-stage Doob bounds, backward stages.
    pub union_bound: f64,
    pub union_bound_forward: f64,
    pub sigma: f64,
    pub sigma_forward: f64,
    pub forward_lengths: Vec<f64>,
    pub pass: bool,
}

/// Noise excursions `sup |sqrt(2 kappa)(W_t - W_{t_q})|` over each stage, one Brownian path per sample.
///
/// Stage `q` of the backward chain runs over `[t_bar_{q-1}, t_bar_q]`; the forward chain mirrors it.
pub fn good_set_stats(comb: &ArrivalCombinatorics, kappa: f64, c_budget: f64, paths: usize, seed: u64) -> GoodSetStats {
    let s = &comb.schedule;
    let n = comb.n;
    let eps = s.params.epsilon;
    let k_factor = c_budget.exp();
    let beta: Vec<u64> = comb.brackets.iter().map(|&(lo, hi)| (lo + hi) / 2).collect();
    let stage_lengths: Vec<f64> = (0..=n)
        .map(|q| comb.t_bar(q as isize, &beta) - comb.t_bar(q as isize - 1, &beta))
        .collect();
    let forward_lengths: Vec<f64> = (0..=n)
        .map(|q| comb.s_bar(q as isize - 1, &beta) - comb.s_bar(q as isize, &beta))
        .collect();
    let thresholds: Vec<f64> = (0..=n).map(|q| s.a[q].powf(1.0 + eps) / (4.0 * k_factor)).collect();
    let amp = (2.0 * kappa).sqrt();
    let steps = 256;
    let sweep = |lengths: &[f64], salt: u64| -> (Vec<usize>, usize) {
        let per_path: Vec<Vec<bool>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut noise = NoiseStream::new(seed ^ salt, p as u64);
                lengths
                    .iter()
                    .zip(&thresholds)
                    .map(|(&len, &thr)| {
                        let h = (len.max(0.0) / steps as f64).sqrt() * amp;
                        let (mut w, mut sup) = ([0.0f64, 0.0f64], 0.0f64);
                        for _ in 0..steps {
                            let z = noise.next_pair();
                            w = [w[0] + h * z[0], w[1] + h * z[1]];
                            sup = sup.max(w[0].hypot(w[1]));
                        }
                        sup >= thr
                    })
                    .collect()
            })
            .collect();
        let mut level = vec![0usize; lengths.len()];
        let mut bad = 0;
        for v in &per_path {
            for (q, &b) in v.iter().enumerate() {
                level[q] += usize::from(b);
            }
            bad += usize::from(v.iter().any(|&b| b));
        }
        (level, bad)
    };
    let (level, bad_b) = sweep(&stage_lengths, 0x5eed_0001);
    let (_, bad_f) = sweep(&forward_lengths, 0x5eed_0002);
    let union = |lengths: &[f64]| -> f64 {
        lengths
            .iter()
            .zip(&thresholds)
            .map(|(&len, &thr)| if kappa == 0.0 { 0.0 } else { doob_bound(2.0, len, thr / amp) })
            .sum()
    };
    let (ub, uf) = (union(&stage_lengths), union(&forward_lengths));
    let sig = |u: f64| {
        let p = u.min(1.0);
        (p * (1.0 - p) / paths.max(1) as f64).sqrt()
    };
    let frac = |k: usize| k as f64 / paths.max(1) as f64;
    let (pb, pf) = (frac(bad_b), frac(bad_f));
    GoodSetStats {
        n,
        kappa,
        k_factor,
        c_budget,
        thresholds,
        stage_lengths,
        level_exceedance: level.into_iter().map(frac).collect(),
        paths,
        p_bad_backward: pb,
        p_bad_forward: pf,
        union_bound: ub,
        union_bound_forward: uf,
        sigma: sig(ub),
        sigma_forward: sig(uf),
        forward_lengths,
        pass: pb <= ub + 3.0 * sig(ub) && pf <= uf + 3.0 * sig(uf),
    }
}

/// One start of a stability comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStart {
    pub x: Point,
    pub anchor: f64,
    pub end: f64,
    /// `(level, t_lo, t_hi)`: the tube of `level` applies on `[t_lo, t_hi]`.
    pub stages: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub direction: Direction,
    pub kappa: f64,
    pub particles: usize,
    pub bound: f64,
    /// Mean `|X - Y|` at each of the relative checkpoints.
    pub mean_gap: Vec<f64>,
    pub sup_mean_gap: f64,
    /// Tube radius per level.
    pub tubes: Vec<f64>,
    /// Fraction of particles leaving the tube of level `q` during its stage.
    pub exceedance: Vec<f64>,
    /// Per particle, the first level (in chain order) whose tube breaks.
    pub first_break: Vec<Option<usize>>,
    pub pass: bool,
}

/// Paired deterministic and stochastic flows from shared anchors.
///
/// `X` is the exact flow, `Y` the Euler-Maruyama flow with its own noise; both start from
/// `x` at `anchor` and run to `end`.
#[allow(clippy::too_many_arguments)]
pub fn stability_gap(
    handle: &FieldHandle,
    starts: &[GapStart],
    per_start: usize,
    kappa: f64,
    tubes: &[f64],
    bound: f64,
    policy: DtPolicy,
    seed: u64,
) -> Result<GapReport> {
    const SLOTS: usize = 32;
    let direction = match starts.first() {
        Some(g) if g.end < g.anchor => Direction::Backward,
        _ => Direction::Forward,
    };
    // per particle: gaps at the SLOTS+1 relative checkpoints, and the first broken level
    let runs: Vec<Result<Vec<(Vec<f64>, Option<usize>, Vec<bool>)>>> = starts
        .par_iter()
        .enumerate()
        .map(|(si, g)| {
            let mut rel: Vec<f64> = (0..=SLOTS).map(|k| g.anchor + (g.end - g.anchor) * k as f64 / SLOTS as f64).collect();
            rel[SLOTS] = g.end;
            let mut cps = rel.clone();
            for &(_, lo, hi) in &g.stages {
                let steps = 8;
                for k in 0..=steps {
                    cps.push(lo + (hi - lo) * k as f64 / steps as f64);
                }
            }
            let (lo, hi) = if g.anchor <= g.end { (g.anchor, g.end) } else { (g.end, g.anchor) };
            cps.retain(|&t| t >= lo && t <= hi);
            cps.sort_by(f64::total_cmp);
            cps.dedup();
            let traj = flow_trajectory(handle, g.anchor, g.end, g.x)?;
            let grid = step_grid(handle, g.anchor, g.end, policy, &cps)?;
            let mut ordered = cps.clone();
            if g.end < g.anchor {
                ordered.reverse();
            }
            let idx = grid_indices(&grid, &ordered)?;
            let det: Vec<Point> = ordered.iter().map(|&t| traj.position(t)).collect();
            (0..per_start)
                .map(|j| {
                    let particle = (si * per_start + j) as u64;
                    let ys = em_path(handle, &grid, g.x, kappa, seed, particle, &idx)?;
                    let gaps: Vec<f64> = det.iter().zip(&ys).map(|(x, y)| torus_distance(handle, *x, *y)).collect();
                    let at = |t: f64| -> f64 {
                        let k = ordered.iter().position(|&c| c == t).expect("checkpoint");
                        gaps[k]
                    };
                    let slot_gaps: Vec<f64> = rel.iter().map(|&t| at(t)).collect();
                    let mut first = None;
                    let mut broke = vec![false; tubes.len()];
                    for &(level, s_lo, s_hi) in &g.stages {
                        let (a, b) = if s_lo <= s_hi { (s_lo, s_hi) } else { (s_hi, s_lo) };
                        let bad = ordered
                            .iter()
                            .zip(&gaps)
                            .any(|(&t, &d)| t >= a && t <= b && d >= tubes[level]);
                        if bad {
                            broke[level] = true;
                            if first.is_none() {
                                first = Some(level);
                            }
                        }
                    }
                    Ok((slot_gaps, first, broke))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect();
    let mut all = Vec::new();
    for r in runs {
        all.extend(r?);
    }
    let particles = all.len();
    let mut mean_gap = vec![0.0; SLOTS + 1];
    let mut exceed = vec![0usize; tubes.len()];
    let mut first_break = Vec::with_capacity(particles);
    for (g, f, broke) in &all {
        for (m, v) in mean_gap.iter_mut().zip(g) {
            *m += v;
        }
        for (e, &b) in exceed.iter_mut().zip(broke) {
            *e += usize::from(b);
        }
        first_break.push(*f);
    }
    let denom = particles.max(1) as f64;
    mean_gap.iter_mut().for_each(|m| *m /= denom);
    let sup_mean_gap = mean_gap.iter().cloned().fold(0.0, f64::max);
    Ok(GapReport {
        direction,
        kappa,
        particles,
        bound,
        mean_gap,
        sup_mean_gap,
        tubes: tubes.to_vec(),
        exceedance: exceed.into_iter().map(|e| e as f64 / denom).collect(),
        first_break,
        pass: sup_mean_gap <= bound,
    })
}

/// `kappa` with Peclet number `width * speed / kappa` at least `peclet` for every structure.
pub fn peclet_kappa(handle: &FieldHandle, peclet: f64) -> f64 {
    let m = match handle {
        FieldHandle::Loop(f) => f.blocks.iter().map(|b| b.block.a * b.block.v).fold(f64::INFINITY, f64::min),
        FieldHandle::Chess(c) => c
            .pieces
            .iter()
            .filter_map(|p| {
                let mid = 0.5 * (p.start + p.end);
                let v = c.sup_speed(mid);
                (v > 0.0).then(|| v * c.crossing_time(mid) * v)
            })
            .fold(f64::INFINITY, f64::min),
        FieldHandle::Zero { .. } => f64::INFINITY,
    };
    if m.is_finite() {
        m / peclet
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub x: Point,
    pub mean: f64,
    pub std_err: f64,
    /// Half-width of the 95% interval.
    pub ci95: f64,
    /// Set when `ci95` exceeds the requested tolerance.
    pub increase_n: bool,
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

/// `theta(t, x) = E[theta_in(Y_{t,0}(x))]` at each point, with 95% intervals.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_backward(
    handle: &FieldHandle,
    theta_in: &(dyn Fn(Point) -> f64 + Sync),
    t: f64,
    points: &[Point],
    n: usize,
    kappa: f64,
    policy: DtPolicy,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<Vec<FkEstimate>> {
    let ens = simulate_sde(handle, t, 0.0, points, n, kappa, policy, seed, &[])?;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let vals: Vec<f64> = ens.positions[i * n..(i + 1) * n]
                .iter()
                .map(|p| theta_in(handle.wrap(*p.last().unwrap())))
                .collect();
            let (mean, se) = mean_ci(&vals);
            let ci95 = 1.96 * se;
            FkEstimate { x, mean, std_err: se, ci95, increase_n: tolerance.is_some_and(|tol| ci95 > tol) }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkIntegral {
    pub value: f64,
    pub std_err: f64,
    pub ci95: f64,
    pub samples: usize,
    pub increase_n: bool,
}

/// `int E[f(Y_{0,t}(x))] theta_in(x) dx` by midpoint quadrature over an `m x m` grid of starts.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_forward_pushforward(
    handle: &FieldHandle,
    theta_in: &(dyn Fn(Point) -> f64 + Sync),
    t: f64,
    test_f: &(dyn Fn(Point) -> f64 + Sync),
    m: usize,
    per_start: usize,
    kappa: f64,
    policy: DtPolicy,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<FkIntegral> {
    let (lo, l) = handle.domain();
    let h = l / m as f64;
    let starts: Vec<Point> = (0..m * m)
        .map(|k| [lo[0] + (k % m) as f64 * h + 0.5 * h, lo[1] + (k / m) as f64 * h + 0.5 * h])
        .collect();
    let ens = simulate_sde(handle, 0.0, t, &starts, per_start, kappa, policy, seed, &[])?;
    let area = l * l;
    let vals: Vec<f64> = ens
        .positions
        .iter()
        .enumerate()
        .map(|(p, pos)| {
            let x0 = starts[p / per_start];
            area * theta_in(x0) * test_f(handle.wrap(*pos.last().unwrap()))
        })
        .collect();
    let (value, se) = mean_ci(&vals);
    let ci95 = 1.96 * se;
    Ok(FkIntegral { value, std_err: se, ci95, samples: vals.len(), increase_n: tolerance.is_some_and(|tol| ci95 > tol) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = NoiseStream::new(7, 3);
        let mut b = NoiseStream::new(7, 3);
        for _ in 0..3000 {
            assert_eq!(a.next_pair(), b.next_pair());
        }
        assert_ne!(NoiseStream::new(7, 4).next_pair(), NoiseStream::new(7, 3).next_pair());
    }

    #[test]
    fn doob_example_value() {
        assert!((doob_bound(2.0, 0.01, 0.3) - 2.0 * (-2.25f64).exp()).abs() < 1e-15);
    }
}

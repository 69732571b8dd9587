//! Finite-volume advection-diffusion on the torus, initial data and separation diagnostics.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::chess::board;
use crate::fields::FieldHandle;
use crate::flow::{glue_zone, start_zone, ArrivalCombinatorics, Rect};
use crate::params::{ChessSchedule, LoopSchedule};
use crate::{Error, Point, Result};

/// Uniform cell grid of a periodic square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub lo: Point,
    pub h: f64,
}

impl Grid {
    pub fn new(lo: Point, side: f64, n: usize) -> Self {
        Self { n, lo, h: side / n as f64 }
    }

    pub fn for_handle(handle: &FieldHandle, n: usize) -> Self {
        let (lo, side) = handle.domain();
        Self::new(lo, side, n)
    }

    pub fn side(&self) -> f64 {
        self.h * self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        [self.lo[0] + (i as f64 + 0.5) * self.h, self.lo[1] + (j as f64 + 0.5) * self.h]
    }

    /// Cell containing `x` (periodically).
    pub fn locate(&self, x: Point) -> (usize, usize) {
        let l = self.side();
        let c = |z: f64, lo: f64| (((z - lo).rem_euclid(l) / self.h).floor() as usize).min(self.n - 1);
        (c(x[0], self.lo[0]), c(x[1], self.lo[1]))
    }

    /// Whether `len` is a whole number of cells (to `1e-9` relative).
    pub fn resolves(&self, len: f64) -> bool {
        let k = len / self.h;
        (k - k.round()).abs() <= 1e-9 * k.max(1.0) && k.round() >= 1.0
    }
}

/// Cell-centred values, row-major (`j * n + i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub t: f64,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid, t: f64) -> Self {
        Self { grid, t, data: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid, t: f64, f: impl Fn(Point) -> f64 + Sync) -> Self {
        let n = grid.n;
        let data = (0..grid.len()).into_par_iter().map(|k| f(grid.center(k % n, k / n))).collect();
        Self { grid, t, data }
    }

    /// Cell averages by `sub x sub` midpoint subsampling.
    pub fn from_cell_average(grid: Grid, t: f64, sub: usize, f: impl Fn(Point) -> f64 + Sync) -> Self {
        let h = grid.h / sub as f64;
        let w = 1.0 / (sub * sub) as f64;
        Self::from_fn(grid, t, |c| {
            let x0 = [c[0] - 0.5 * grid.h, c[1] - 0.5 * grid.h];
            let mut acc = 0.0;
            for j in 0..sub {
                for i in 0..sub {
                    acc += f([x0[0] + (i as f64 + 0.5) * h, x0[1] + (j as f64 + 0.5) * h]);
                }
            }
            acc * w
        })
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.h * self.grid.h
    }

    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `1/2 ||theta||_{L^2}^2`.
    pub fn energy(&self) -> f64 {
        0.5 * self.data.iter().map(|v| v * v).sum::<f64>() * self.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `int self * other`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() * self.cell_area()
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.cell_area()
    }

    /// Value of the cell containing `x`.
    pub fn sample(&self, x: Point) -> f64 {
        let (i, j) = self.grid.locate(x);
        self.data[j * self.grid.n + i]
    }

    /// `int_{Q} theta` over cells whose centre is in `region`.
    pub fn integral_over(&self, region: impl Fn(Point) -> bool) -> f64 {
        let n = self.grid.n;
        let mut acc = 0.0;
        for (k, v) in self.data.iter().enumerate() {
            if region(self.grid.center(k % n, k / n)) {
                acc += v;
            }
        }
        acc * self.cell_area()
    }

    /// Largest one-sided difference quotient.
    pub fn max_gradient(&self) -> f64 {
        let n = self.grid.n;
        let mut g: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let v = self.data[j * n + i];
                let dx = self.data[j * n + (i + 1) % n] - v;
                let dy = self.data[((j + 1) % n) * n + i] - v;
                g = g.max(dx.hypot(dy) / self.grid.h);
            }
        }
        g
    }

    /// Little-endian `f64` dump plus a JSON sidecar `<path>.json`.
    pub fn write_snapshot(&self, path: &Path, construction: &str, params_hash: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.data.len());
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let side = SnapshotMeta {
            n: self.grid.n,
            lo: self.grid.lo,
            h: self.grid.h,
            t: self.t,
            construction: construction.to_string(),
            params_hash: params_hash.to_string(),
        };
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        std::fs::write(name, serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<(Self, SnapshotMeta)> {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        let meta: SnapshotMeta = serde_json::from_str(&std::fs::read_to_string(name)?)?;
        let bytes = std::fs::read(path)?;
        if bytes.len() != 8 * meta.n * meta.n {
            return Err(Error::Solver(format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), 8 * meta.n * meta.n)));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let grid = Grid { n: meta.n, lo: meta.lo, h: meta.h };
        Ok((Self { grid, t: meta.t, data }, meta))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub n: usize,
    pub lo: Point,
    pub h: f64,
    pub t: f64,
    pub construction: String,
    pub params_hash: String,
}

const BUMP_CELLS: usize = 1 << 14;

/// Cumulative distribution of the normalised bump `exp(-1/(1-r^2))` on `[-1, 1]`.
fn bump_cdf_table() -> &'static (Vec<f64>, f64) {
    static TABLE: OnceLock<(Vec<f64>, f64)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let rho = |r: f64| if r.abs() < 1.0 { (-1.0 / (1.0 - r * r)).exp() } else { 0.0 };
        let h = 2.0 / BUMP_CELLS as f64;
        let mut cdf = vec![0.0; BUMP_CELLS + 1];
        for k in 0..BUMP_CELLS {
            let (a, b) = (-1.0 + k as f64 * h, -1.0 + (k + 1) as f64 * h);
            // Simpson per cell
            cdf[k + 1] = cdf[k] + h / 6.0 * (rho(a) + 4.0 * rho(0.5 * (a + b)) + rho(b));
        }
        let total = cdf[BUMP_CELLS];
        cdf.iter_mut().for_each(|c| *c /= total);
        (cdf, rho(0.0) / total)
    })
}

/// `int_{-inf}^{r} rho` for the normalised bump on `[-1, 1]`.
pub fn bump_cdf(r: f64) -> f64 {
    if r <= -1.0 {
        return 0.0;
    }
    if r >= 1.0 {
        return 1.0;
    }
    let (cdf, _) = bump_cdf_table();
    let s = (r + 1.0) * 0.5 * BUMP_CELLS as f64;
    let k = (s.floor() as usize).min(BUMP_CELLS - 1);
    let w = s - k as f64;
    cdf[k] * (1.0 - w) + cdf[k + 1] * w
}

/// Peak of the normalised bump on `[-1, 1]`.
pub fn bump_peak() -> f64 {
    bump_cdf_table().1
}

/// One-dimensional mollifier `psi_w(z) = w^{-1} psi~(z / w)` with `supp psi~ = [-2, 2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub width: f64,
}

impl Mollifier {
    /// Mass of the kernel on `(-inf, z]`.
    pub fn cdf(&self, z: f64) -> f64 {
        if self.width == 0.0 {
            return if z >= 0.0 { 1.0 } else { 0.0 };
        }
        bump_cdf(z / (2.0 * self.width))
    }

    pub fn support(&self) -> f64 {
        2.0 * self.width
    }

    /// Convolution with the periodic wave `(-1)^k` on `[k a + inset, (k+1) a - inset]`, zero elsewhere.
    pub fn wave(&self, a: f64, inset: f64, x: f64) -> f64 {
        let r = self.support();
        let k0 = ((x - r) / a).floor() as i64 - 1;
        let k1 = ((x + r) / a).floor() as i64 + 1;
        let mut acc = 0.0;
        for k in k0..=k1 {
            let (lo, hi) = (k as f64 * a + inset, (k + 1) as f64 * a - inset);
            if hi <= lo {
                continue;
            }
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            // x - y in [lo, hi]  <=>  y in [x - hi, x - lo]
            acc += sign * (self.cdf(x - lo) - self.cdf(x - hi));
        }
        acc
    }
}

/// Chessboards `A_q`, `B_q`, the chess initial datum and the test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkerboards {
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mollifier: Mollifier,
    /// `a_0^{1+delta/2}`, the paper's mollification parameter.
    pub paper_width: f64,
    /// Inset of `A_0`, `B_0` used by the test function (`5` widths).
    pub inset: f64,
}

impl Checkerboards {
    /// Boards of `schedule` with the mollification width `a_0^{1+delta/2}`.
    pub fn new(schedule: &ChessSchedule) -> Self {
        let w = schedule.a[0].powf(1.0 + 0.5 * schedule.params.delta);
        Self::with_width(schedule, w)
    }

    /// Boards with a substituted mollification width.
    pub fn with_width(schedule: &ChessSchedule, width: f64) -> Self {
        Self {
            a: schedule.a.clone(),
            lambda: schedule.lambda.clone(),
            mollifier: Mollifier { width },
            paper_width: schedule.a[0].powf(1.0 + 0.5 * schedule.params.delta),
            inset: 5.0 * width,
        }
    }

    /// `theta_0(lambda_q x)`: `+1` on `A_q`, `-1` on `B_q`.
    pub fn theta0(&self, q: usize, x: Point) -> f64 {
        board(self.a[q], x)
    }

    pub fn in_a(&self, q: usize, x: Point) -> bool {
        self.theta0(q, x) > 0.0
    }

    /// `(theta_bar_0 * psi)(x)`.
    pub fn initial(&self, x: Point) -> f64 {
        let m = &self.mollifier;
        m.wave(self.a[0], 0.0, x[0]) * m.wave(self.a[0], 0.0, x[1])
    }

    /// `f = (1_{A_0[5w]} - 1_{B_0[5w]}) * psi`.
    pub fn test_function(&self, x: Point) -> f64 {
        let m = &self.mollifier;
        m.wave(self.a[0], self.inset, x[0]) * m.wave(self.a[0], self.inset, x[1])
    }

    /// Area fraction of `A_0[5w] u B_0[5w]` on the unit torus.
    pub fn shrunk_area(&self) -> f64 {
        (1.0 - 2.0 * self.inset / self.a[0]).max(0.0).powi(2)
    }
}

/// Subsamples per axis for cell averages of the near-discontinuous chess data.
pub const CELL_SUBSAMPLES: usize = 8;

pub fn make_chess_initial_datum(boards: &Checkerboards, n: usize) -> Result<ScalarField> {
    let grid = Grid::new([0.0, 0.0], 1.0, n);
    if boards.mollifier.width > 0.0 && (n as f64) * boards.mollifier.width < 4.0 && boards.mollifier.width >= boards.paper_width {
        return Err(Error::Solver(format!(
            "N = {n} cannot resolve the mollification width {:e}",
            boards.mollifier.width
        )));
    }
    Ok(ScalarField::from_cell_average(grid, 0.0, CELL_SUBSAMPLES, |x| boards.initial(x)))
}

/// Width of the loop datum's ramp, `a_0^{1+eps/2}`.
pub fn loop_ramp_width(schedule: &LoopSchedule) -> f64 {
    schedule.a[0].powf(1.0 + 0.5 * schedule.params.epsilon)
}

/// `theta_in = g(dist(x, R_0))` with a smooth step `g` from 1 at 0 to 0 at `2w`.
pub fn loop_initial_value(schedule: &LoopSchedule, side: f64, x: Point) -> f64 {
    let w = loop_ramp_width(schedule);
    let r = start_zone(schedule).rect;
    let c = [0.5 * (r.0[0] + r.1[0]), 0.5 * (r.0[1] + r.1[1])];
    let half = [0.5 * (r.1[0] - r.0[0]), 0.5 * (r.1[1] - r.0[1])];
    let image = |z: f64| z - side * (z / side).round();
    let dx = (image(x[0] - c[0]).abs() - half[0]).max(0.0);
    let dy = (image(x[1] - c[1]).abs() - half[1]).max(0.0);
    let d = dx.hypot(dy);
    // the step runs over [0, 2w] so that its slope stays below 1/w
    1.0 - bump_cdf(d / w - 1.0)
}

pub fn make_loop_initial_datum(schedule: &LoopSchedule, side: f64, n: usize) -> Result<ScalarField> {
    let w = loop_ramp_width(schedule);
    if (n as f64 / side) * w < 4.0 {
        return Err(Error::Solver(format!("N = {n} cannot resolve the ramp width {w:e} on a torus of side {side}")));
    }
    let grid = Grid::new([-0.5 * side, -0.5 * side], side, n);
    Ok(ScalarField::from_fn(grid, 0.0, |x| loop_initial_value(schedule, side, x)))
}

/// `min_sign || theta - sign * board_q ||_{L^1}`.
pub fn chessboard_distance(theta: &ScalarField, a_q: f64) -> Result<f64> {
    if !theta.grid.resolves(a_q) {
        return Err(Error::Solver(format!("h = {:e} does not divide the tile {a_q:e}", theta.grid.h)));
    }
    let b = ScalarField::from_fn(theta.grid, theta.t, |x| board(a_q, x));
    let neg = ScalarField { data: b.data.iter().map(|v| -v).collect(), ..b.clone() };
    Ok(theta.l1_distance(&b).min(theta.l1_distance(&neg)))
}

/// Solver controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kappa: f64,
    /// Largest per-cell Courant number `dt * sum(outflux) / h^2`.
    pub courant: f64,
    /// Largest `kappa dt / h^2`.
    pub diffusion_number: f64,
    /// A requested step; refused if it breaks either limit.
    pub dt: Option<f64>,
    /// Accumulate the local energy defect field.
    pub local_check: bool,
    /// Times at which snapshots are kept.
    pub checkpoints: Vec<f64>,
    /// Slack of the maximum principle.
    pub bound_slack: f64,
}

impl SolverOptions {
    pub fn new(kappa: f64) -> Self {
        Self { kappa, courant: 1.0, diffusion_number: 0.125, dt: None, local_check: false, checkpoints: vec![], bound_slack: 1e-6 }
    }
}

/// Energy bookkeeping of the tracked field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    /// `1/2 ||theta||^2`.
    pub energy: Vec<f64>,
    /// `kappa int_0^t ||grad theta||^2`.
    pub dissipation: Vec<f64>,
    /// Energy removed by the upwind transport.
    pub numerical: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Cell- and time-integrated local energy balance, minus the explicit-step term.
    pub local_defect: Option<ScalarField>,
    pub steps: usize,
}

impl EnergyLedger {
    fn push(&mut self, t: f64, f: &ScalarField, diss: f64, num: f64) {
        self.times.push(t);
        self.energy.push(f.energy());
        self.dissipation.push(diss);
        self.numerical.push(num);
        self.mean.push(f.mean());
        self.min.push(f.min());
        self.max.push(f.max());
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,energy,dissipation,numerical,mean,min,max")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[k], self.energy[k], self.dissipation[k], self.numerical[k], self.mean[k], self.min[k], self.max[k]
            )?;
        }
        Ok(())
    }
}

/// Face fluxes of one time-constant piece.
struct Fluxes {
    /// Through the right face of cell `(i, j)`.
    fx: Vec<f64>,
    /// Through the top face of cell `(i, j)`.
    fy: Vec<f64>,
    max_out: f64,
}

fn face_fluxes(handle: &FieldHandle, grid: &Grid, t: f64) -> Option<Fluxes> {
    if handle.sup_speed(t) == 0.0 {
        return None;
    }
    let n = grid.n;
    let h = grid.h;
    let node = |k: usize, lo: f64| lo + k as f64 * h;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (y0, y1) = (node(j, grid.lo[1]), node(j + 1, grid.lo[1]));
            let fx = (0..n).map(|i| handle.flux_x(t, node(i + 1, grid.lo[0]), y0, y1)).collect();
            let fy = (0..n)
                .map(|i| handle.flux_y(t, y1, node(i, grid.lo[0]), node(i + 1, grid.lo[0])))
                .collect();
            (fx, fy)
        })
        .collect();
    let mut fx = Vec::with_capacity(grid.len());
    let mut fy = Vec::with_capacity(grid.len());
    for (a, b) in rows {
        fx.extend(a);
        fy.extend(b);
    }
    let mut max_out: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            let left = fx[j * n + (i + n - 1) % n];
            let below = fy[((j + n - 1) % n) * n + i];
            let out = fx[k].max(0.0) + (-left).max(0.0) + fy[k].max(0.0) + (-below).max(0.0);
            max_out = max_out.max(out);
        }
    }
    Some(Fluxes { fx, fy, max_out })
}

/// Upwind step `theta -= dt/h^2 div(F theta_upwind)`; optionally adds the local advective balance.
fn advect(f: &Fluxes, src: &[f64], dst: &mut [f64], n: usize, c: f64, local: Option<&mut [f64]>) {
    dst.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let jm = (j + n - 1) % n;
        let jp = (j + 1) % n;
        for (i, out) in row.iter_mut().enumerate() {
            let im = (i + n - 1) % n;
            let ip = (i + 1) % n;
            let k = j * n + i;
            let up = |flux: f64, here: f64, there: f64| if flux > 0.0 { flux * here } else { flux * there };
            let right = up(f.fx[k], src[k], src[j * n + ip]);
            let left = up(f.fx[j * n + im], src[j * n + im], src[k]);
            let top = up(f.fy[k], src[k], src[jp * n + i]);
            let bottom = up(f.fy[jm * n + i], src[jm * n + i], src[k]);
            *out = src[k] - c * (right - left + top - bottom);
        }
    });
    if let Some(local) = local {
        // (1/2 theta'^2 - 1/2 theta^2) + dt/h^2 div(F 1/2 theta_upwind^2), in cell units
        local.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
            let jm = (j + n - 1) % n;
            let jp = (j + 1) % n;
            for (i, acc) in row.iter_mut().enumerate() {
                let im = (i + n - 1) % n;
                let ip = (i + 1) % n;
                let k = j * n + i;
                let e = |v: f64| 0.5 * v * v;
                let up = |flux: f64, here: f64, there: f64| if flux > 0.0 { flux * e(here) } else { flux * e(there) };
                let right = up(f.fx[k], src[k], src[j * n + ip]);
                let left = up(f.fx[j * n + im], src[j * n + im], src[k]);
                let top = up(f.fy[k], src[k], src[jp * n + i]);
                let bottom = up(f.fy[jm * n + i], src[jm * n + i], src[k]);
                *acc += e(dst[k]) - e(src[k]) + c * (right - left + top - bottom);
            }
        });
    }
}

/// Explicit five-point step with `d = kappa dt / h^2`.
fn diffuse(src: &[f64], dst: &mut [f64], n: usize, d: f64) {
    dst.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let jm = (j + n - 1) % n;
        let jp = (j + 1) % n;
        for (i, out) in row.iter_mut().enumerate() {
            let k = j * n + i;
            let s = src[j * n + (i + n - 1) % n] + src[j * n + (i + 1) % n] + src[jm * n + i] + src[jp * n + i];
            *out = src[k] + d * (s - 4.0 * src[k]);
        }
    });
}

/// `sum over faces of (grad a)(grad b)`; rows are summed in order so the result ignores the thread count.
fn grad_dot(a: &[f64], b: &[f64], n: usize) -> f64 {
    (0..n)
        .into_par_iter()
        .map(|j| {
            let jp = (j + 1) % n;
            let mut acc = 0.0;
            for i in 0..n {
                let k = j * n + i;
                let r = j * n + (i + 1) % n;
                let t = jp * n + i;
                acc += (a[r] - a[k]) * (b[r] - b[k]) + (a[t] - a[k]) * (b[t] - b[k]);
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Diffusive part of the local balance minus its explicit-step term `1/2 delta^2`.
fn local_diffusion(old: &[f64], new: &[f64], acc: &mut [f64], n: usize, d: f64) {
    acc.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let jm = (j + n - 1) % n;
        let jp = (j + 1) % n;
        for (i, a) in row.iter_mut().enumerate() {
            let k = j * n + i;
            let nb = [j * n + (i + n - 1) % n, j * n + (i + 1) % n, jm * n + i, jp * n + i];
            let e = |v: f64| 0.5 * v * v;
            let lap_e: f64 = nb.iter().map(|&m| e(old[m]) - e(old[k])).sum();
            let grad2: f64 = 0.5 * nb.iter().map(|&m| (old[m] - old[k]).powi(2)).sum::<f64>();
            let delta = new[k] - old[k];
            *a += e(new[k]) - e(old[k]) - d * lap_e + d * grad2 - 0.5 * delta * delta;
        }
    });
}

/// One time-constant stretch of the step plan.
struct Stretch {
    t0: f64,
    t1: f64,
    steps: usize,
    fluxes: Option<Fluxes>,
}

fn plan(handle: &FieldHandle, grid: &Grid, t0: f64, t1: f64, stops: &[f64], opts: &SolverOptions) -> Result<Vec<Stretch>> {
    let mut knots = vec![t0];
    knots.extend(handle.breakpoints(t0, t1));
    knots.extend(stops.iter().copied().filter(|&t| t > t0 && t < t1));
    knots.push(t1);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let h2 = grid.h * grid.h;
    let mut out = Vec::new();
    for w in knots.windows(2) {
        let (s, e) = (w[0], w[1]);
        if e <= s {
            continue;
        }
        let fluxes = face_fluxes(handle, grid, 0.5 * (s + e));
        let adv = match &fluxes {
            Some(f) if f.max_out > 0.0 => opts.courant * h2 / f.max_out,
            _ => f64::INFINITY,
        };
        let dif = if opts.kappa > 0.0 { opts.diffusion_number * h2 / opts.kappa } else { f64::INFINITY };
        let limit = adv.min(dif);
        let len = e - s;
        let steps = match opts.dt {
            Some(dt) => {
                if dt > limit * (1.0 + 1e-9) {
                    return Err(Error::Solver(format!("dt = {dt:e} breaks the stability limit {limit:e} on [{s:e}, {e:e}]")));
                }
                (len / dt - 1e-9).ceil().max(1.0) as usize
            }
            None if limit.is_finite() => {
                let k = len / limit;
                // snap to whole steps so that grid-aligned shifts stay exact
                if (k - k.round()).abs() <= 1e-9 * k.max(1.0) { k.round().max(1.0) as usize } else { k.ceil() as usize }
            }
            None => 1,
        };
        out.push(Stretch { t0: s, t1: e, steps, fluxes });
    }
    Ok(out)
}

/// Snapshots and ledger of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRun {
    pub final_field: ScalarField,
    pub snapshots: Vec<ScalarField>,
    pub ledger: EnergyLedger,
}

/// Evolves `fields` together; `fields[0]` is tracked by the ledger and the bound checks.
///
/// At each time of `stops` the callback may rewrite the fields.
fn run_multi(
    handle: &FieldHandle,
    mut fields: Vec<ScalarField>,
    t0: f64,
    t1: f64,
    opts: &SolverOptions,
    stops: &[f64],
    mut on_stop: impl FnMut(f64, &mut Vec<ScalarField>) -> Result<()>,
) -> Result<(Vec<ScalarField>, Vec<ScalarField>, EnergyLedger)> {
    let grid = fields[0].grid;
    let n = grid.n;
    if !(opts.kappa >= 0.0) || opts.courant > 1.0 || opts.diffusion_number > 0.25 {
        return Err(Error::Solver(format!(
            "kappa = {}, courant = {}, diffusion number = {} outside the monotone range",
            opts.kappa, opts.courant, opts.diffusion_number
        )));
    }
    let mut all_stops: Vec<f64> = stops.to_vec();
    all_stops.extend(&opts.checkpoints);
    let stretches = plan(handle, &grid, t0, t1, &all_stops, opts)?;
    let (lo_bound, hi_bound) = (fields[0].min() - opts.bound_slack, fields[0].max() + opts.bound_slack);
    let mut ledger = EnergyLedger::default();
    if opts.local_check {
        ledger.local_defect = Some(ScalarField::zeros(grid, t0));
    }
    let (mut diss, mut num) = (0.0, 0.0);
    ledger.push(t0, &fields[0], 0.0, 0.0);
    let mut snapshots = Vec::new();
    let mut buf = vec![0.0; grid.len()];
    let mut buf2 = vec![0.0; grid.len()];
    let h2 = grid.h * grid.h;
    let stop_hit = |t: f64, list: &[f64]| list.iter().any(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()));
    if stop_hit(t0, stops) {
        on_stop(t0, &mut fields)?;
    }
    if stop_hit(t0, &opts.checkpoints) {
        snapshots.push(fields[0].clone());
    }
    for st in &stretches {
        let dt = (st.t1 - st.t0) / st.steps as f64;
        let c = dt / h2;
        let d = opts.kappa * dt / h2;
        for s in 0..st.steps {
            let t_next = if s + 1 == st.steps { st.t1 } else { st.t0 + (s + 1) as f64 * dt };
            for (fi, field) in fields.iter_mut().enumerate() {
                let track = fi == 0;
                let e0 = if track { field.energy() } else { 0.0 };
                if let Some(fl) = &st.fluxes {
                    let local = if track { ledger.local_defect.as_mut().map(|l| l.data.as_mut_slice()) } else { None };
                    advect(fl, &field.data, &mut buf, n, c, local);
                    std::mem::swap(&mut field.data, &mut buf);
                }
                if d > 0.0 {
                    diffuse(&field.data, &mut buf2, n, d);
                    if track {
                        let e1 = field.energy();
                        num += e0 - e1;
                        let half: Vec<f64> = field.data.iter().zip(&buf2).map(|(a, b)| 0.5 * (a + b)).collect();
                        diss += opts.kappa * dt * grad_dot(&field.data, &half, n);
                        if let Some(l) = ledger.local_defect.as_mut() {
                            local_diffusion(&field.data, &buf2, &mut l.data, n, d);
                        }
                    }
                    std::mem::swap(&mut field.data, &mut buf2);
                } else if track {
                    num += e0 - field.energy();
                }
                field.t = t_next;
            }
            let f0 = &fields[0];
            let (mn, mx) = (f0.min(), f0.max());
            if !(mn >= lo_bound && mx <= hi_bound) {
                return Err(Error::Solver(format!(
                    "maximum principle broken at t = {t_next:e}: range [{mn:e}, {mx:e}] outside [{lo_bound:e}, {hi_bound:e}]"
                )));
            }
            ledger.steps += 1;
            ledger.push(t_next, f0, diss, num);
        }
        if stop_hit(st.t1, stops) {
            on_stop(st.t1, &mut fields)?;
        }
        if stop_hit(st.t1, &opts.checkpoints) {
            snapshots.push(fields[0].clone());
        }
    }
    if let Some(l) = ledger.local_defect.as_mut() {
        l.t = t1;
        // cell units to physical: multiply by the cell area
        l.data.iter_mut().for_each(|v| *v *= h2);
    }
    Ok((fields, snapshots, ledger))
}

/// `d_t theta + b . grad theta = kappa Lap theta` from `t0` to `t1` by first-order splitting.
pub fn solve_advection_diffusion(handle: &FieldHandle, theta0: &ScalarField, t0: f64, t1: f64, opts: &SolverOptions) -> Result<SolveRun> {
    let mut start = theta0.clone();
    start.t = t0;
    let (fields, snapshots, ledger) = run_multi(handle, vec![start], t0, t1, opts, &[], |_, _| Ok(()))?;
    Ok(SolveRun { final_field: fields.into_iter().next().unwrap(), snapshots, ledger })
}

/// Outcome of the global and local energy checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub initial_energy: f64,
    /// `max_t (E(t) + D(t) - E(0))`; at most the tolerance.
    pub worst_excess: f64,
    /// `E(0) - E(T) - D(T)`, the total defect.
    pub defect: f64,
    pub mean_drift: f64,
    pub range: (f64, f64),
    pub local_max: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

/// `1/2 ||theta(t)||^2 + kappa int ||grad theta||^2 <= 1/2 ||theta_in||^2` at every step.
pub fn energy_inequality_check(ledger: &EnergyLedger, theta_in: &ScalarField) -> EnergyReport {
    let e0 = theta_in.energy();
    let tolerance = 1e-12 * e0.max(1e-300) * (1.0 + ledger.steps as f64).sqrt();
    let worst_excess = ledger
        .energy
        .iter()
        .zip(&ledger.dissipation)
        .map(|(e, d)| e + d - e0)
        .fold(f64::NEG_INFINITY, f64::max);
    let last = ledger.energy.len() - 1;
    let defect = e0 - ledger.energy[last] - ledger.dissipation[last];
    let m0 = theta_in.mean();
    let mean_drift = ledger.mean.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    let range = (
        ledger.min.iter().cloned().fold(f64::INFINITY, f64::min),
        ledger.max.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let local_max = ledger.local_defect.as_ref().map(|l| l.max());
    let scale = theta_in.data.iter().map(|v| v * v).fold(0.0, f64::max) * theta_in.cell_area();
    let local_ok = local_max.is_none_or(|m| m <= 1e-12 * scale * (1.0 + ledger.steps as f64));
    let (lo, hi) = (theta_in.min() - 1e-6, theta_in.max() + 1e-6);
    EnergyReport {
        initial_energy: e0,
        worst_excess,
        defect,
        mean_drift,
        range,
        local_max,
        tolerance,
        pass: worst_excess <= tolerance && defect >= -tolerance && mean_drift <= 1e-10 && range.0 >= lo && range.1 <= hi && local_ok,
    }
}

/// Chunks `theta_{n,k}` and the remainder at the final time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkRun {
    pub arrivals: Vec<f64>,
    pub theta: ScalarField,
    pub chunks: Vec<ScalarField>,
    pub remainder: ScalarField,
    /// Largest `|theta - sum chunks - remainder|` over all stops.
    pub identity_error: f64,
    pub min_chunk: f64,
    /// Largest `sum chunks - theta`.
    pub subadditivity_excess: f64,
    /// `sum_k int theta_k / int theta_in` at the end.
    pub chunk_mass_fraction: f64,
    /// `(t, quadrant_mass(chunks))` at the solver checkpoints.
    pub quadrant_series: Vec<(f64, f64)>,
    pub ledger: EnergyLedger,
}

/// Splits off `1_S theta_bar` at every arrival time and evolves all pieces to `t1`.
pub fn chunk_decomposition(
    handle: &FieldHandle,
    theta_in: &ScalarField,
    arrivals: &[f64],
    zone: &Rect,
    margin: f64,
    t1: f64,
    parity: usize,
    opts: &SolverOptions,
) -> Result<ChunkRun> {
    let grid = theta_in.grid;
    let n = grid.n;
    let mask: Vec<bool> = (0..grid.len())
        .map(|k| crate::flow::rect_restricted(zone, grid.center(k % n, k / n), margin))
        .collect();
    let mut arr: Vec<f64> = arrivals.iter().copied().filter(|&t| t > 0.0 && t < t1).collect();
    arr.sort_by(f64::total_cmp);
    arr.dedup();
    let fields = vec![theta_in.clone(), theta_in.clone()];
    let mut identity_error: f64 = 0.0;
    let mut min_chunk = f64::INFINITY;
    let mut excess = f64::NEG_INFINITY;
    let check = |fields: &Vec<ScalarField>, ie: &mut f64, mc: &mut f64, ex: &mut f64| {
        for k in 0..grid.len() {
            let sum: f64 = fields[2..].iter().map(|c| c.data[k]).sum();
            *ie = ie.max((fields[0].data[k] - sum - fields[1].data[k]).abs());
            *ex = ex.max(sum - fields[0].data[k]);
            for c in &fields[2..] {
                *mc = mc.min(c.data[k]);
            }
        }
    };
    let mass_in = theta_in.integral();
    let mut series = Vec::new();
    let mut stops = arr.clone();
    stops.extend(&opts.checkpoints);
    let hit = |list: &[f64], t: f64| list.iter().any(|&a| (a - t).abs() <= 1e-12 * (1.0 + t.abs()));
    let (fields, _, ledger) = run_multi(handle, fields, 0.0, t1, opts, &stops, |t, fields| {
        if hit(&arr, t) {
            let rem = &mut fields[1];
            let mut chunk = ScalarField::zeros(grid, t);
            for k in 0..grid.len() {
                if mask[k] {
                    chunk.data[k] = rem.data[k];
                    rem.data[k] = 0.0;
                }
            }
            fields.push(chunk);
        }
        if hit(&opts.checkpoints, t) {
            series.push((t, quadrant_mass(&fields[2..], parity, mass_in)));
        }
        check(fields, &mut identity_error, &mut min_chunk, &mut excess);
        Ok(())
    })?;
    check(&fields, &mut identity_error, &mut min_chunk, &mut excess);
    if min_chunk < -1e-9 {
        return Err(Error::Solver(format!("chunk negativity {min_chunk:e} breaks monotonicity")));
    }
    let mut it = fields.into_iter();
    let theta = it.next().unwrap();
    let remainder = it.next().unwrap();
    let chunks: Vec<ScalarField> = it.collect();
    let chunk_mass: f64 = chunks.iter().map(|c| c.integral()).sum();
    Ok(ChunkRun {
        arrivals: arr,
        theta,
        chunks,
        remainder,
        identity_error,
        min_chunk: if min_chunk.is_finite() { min_chunk } else { 0.0 },
        subadditivity_excess: excess,
        chunk_mass_fraction: if mass_in > 0.0 { chunk_mass / mass_in } else { 0.0 },
        quadrant_series: series,
        ledger,
    })
}

/// The loop chunk zone `S_{n,glue}` for the arrival policy of `comb`.
pub fn chunk_zone(comb: &ArrivalCombinatorics) -> Rect {
    glue_zone(&comb.schedule, comb.n, comb.policy)
}

/// Fraction of `int theta_in` carried by `fields` in quadrant I (even `n`) or III (odd `n`).
pub fn quadrant_mass(fields: &[ScalarField], n: usize, mass_in: f64) -> f64 {
    let even = n % 2 == 0;
    let total: f64 = fields
        .iter()
        .map(|f| f.integral_over(|x| if even { x[0] >= 0.0 && x[1] >= 0.0 } else { x[0] <= 0.0 && x[1] <= 0.0 }))
        .sum();
    total / mass_in
}

/// `int f (theta_even - theta_odd)` and the three pieces of its lower bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub value: f64,
    /// `int f (rho_even - rho_odd)` for the transport solutions.
    pub deterministic: Option<f64>,
    /// `int |f (theta_even - rho_even)|`.
    pub error_even: Option<f64>,
    pub error_odd: Option<f64>,
    /// `deterministic - error_even - error_odd`.
    pub lower_bound: Option<f64>,
}

pub fn separation_functional(
    f: &ScalarField,
    theta_even: &ScalarField,
    theta_odd: &ScalarField,
    rho: Option<(&ScalarField, &ScalarField)>,
) -> SeparationReport {
    let da = f.cell_area();
    let diff = |a: &ScalarField, b: &ScalarField| -> f64 {
        f.data.iter().zip(a.data.iter().zip(&b.data)).map(|(w, (x, y))| w * (x - y)).sum::<f64>() * da
    };
    let abs_diff = |a: &ScalarField, b: &ScalarField| -> f64 {
        f.data.iter().zip(a.data.iter().zip(&b.data)).map(|(w, (x, y))| (w * (x - y)).abs()).sum::<f64>() * da
    };
    let value = diff(theta_even, theta_odd);
    match rho {
        Some((re, ro)) => {
            let det = diff(re, ro);
            let (ee, eo) = (abs_diff(theta_even, re), abs_diff(theta_odd, ro));
            SeparationReport { value, deterministic: Some(det), error_even: Some(ee), error_odd: Some(eo), lower_bound: Some(det - ee - eo) }
        }
        None => SeparationReport { value, deterministic: None, error_even: None, error_odd: None, lower_bound: None },
    }
}

/// `sin(2 pi k . x)` on the unit torus.
pub fn fourier_mode(grid: Grid, k: [i32; 2]) -> ScalarField {
    let tau = std::f64::consts::TAU / grid.side();
    ScalarField::from_fn(grid, 0.0, |x| (tau * (k[0] as f64 * x[0] + k[1] as f64 * x[1])).sin())
}

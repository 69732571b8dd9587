use serde::{Deserialize, Serialize};

use crate::params::ChessSchedule;
use crate::{Error, Point, Result};

/// Instantaneous field on one time interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChessPhase {
    Zero,
    /// Horizontal shear of rows of height `a_{q+1}`.
    Horizontal { q: usize },
    /// Vertical shear of columns of width `a_{q+1}`.
    Vertical { q: usize },
    /// Constant `(a_q^{1-gamma}, 0)`.
    Swap { q: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChessPiece {
    pub start: f64,
    pub end: f64,
    pub phase: ChessPhase,
    /// `+1` on the forward half, `-1` for the reversed copies.
    pub sign: f64,
    pub label: String,
}

/// The chess field `b_n`, piecewise constant in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChessField {
    pub schedule: ChessSchedule,
    pub n: usize,
    pub horizon: f64,
    /// Sorted pieces covering `[0, T]`.
    pub pieces: Vec<ChessPiece>,
}

/// Square wave of period 1: `+1` on `[0, 1/2)`, `-1` on `[1/2, 1)`.
#[inline]
pub fn square_wave(z: f64) -> f64 {
    if z.rem_euclid(1.0) < 0.5 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn is_even(z: f64) -> bool {
    z.floor().rem_euclid(2.0) == 0.0
}

/// `+1` on the even chessboard of tile size `a`, `-1` on the odd one.
pub fn board(a: f64, x: Point) -> f64 {
    if is_even((x[0] / a).floor() + (x[1] / a).floor()) {
        1.0
    } else {
        -1.0
    }
}

pub fn assemble_chess_field(schedule: &ChessSchedule, n: usize) -> Result<ChessField> {
    if n > schedule.n_max() {
        return Err(Error::Schedule(format!("level n = {n} exceeds n_max = {}", schedule.n_max())));
    }
    for q in 0..n {
        if schedule.ratio[q] % 2 != 0 {
            return Err(Error::Schedule(format!(
                "a_{q}/a_{} = {} is odd; the shears need 2 a_(q+1) to divide a_q",
                q + 1,
                schedule.ratio[q]
            )));
        }
    }
    let horizon = schedule.horizon;
    let mut pieces = Vec::new();
    let zero = |start: f64, end: f64, label: String| ChessPiece { start, end, phase: ChessPhase::Zero, sign: 1.0, label };
    for q in 0..n {
        let (s1, e1) = schedule.interval_i(q, 1);
        let (s2, e2) = schedule.interval_i(q, 2);
        let (s3, e3) = schedule.interval_i(q, 3);
        pieces.push(zero(s1, e1, format!("I_{q},1")));
        pieces.push(ChessPiece { start: s2, end: e2, phase: ChessPhase::Horizontal { q }, sign: 1.0, label: format!("I_{q},2") });
        pieces.push(ChessPiece { start: s3, end: e3, phase: ChessPhase::Vertical { q }, sign: 1.0, label: format!("I_{q},3") });
    }
    let mid_start = schedule.t_steps[n];
    pieces.push(zero(mid_start, horizon - mid_start, "off".to_string()));
    for q in (0..n).rev() {
        let (s3, e3) = schedule.interval_j(q, 3);
        let (s2, e2) = schedule.interval_j(q, 2);
        let (s1, e1) = schedule.interval_j(q, 1);
        pieces.push(ChessPiece { start: s3, end: e3, phase: ChessPhase::Vertical { q }, sign: -1.0, label: format!("J_{q},3") });
        pieces.push(ChessPiece { start: s2, end: e2, phase: ChessPhase::Horizontal { q }, sign: -1.0, label: format!("J_{q},2") });
        pieces.push(ChessPiece { start: s1, end: e1, phase: ChessPhase::Swap { q }, sign: 1.0, label: format!("J_{q},1") });
    }
    Ok(ChessField { schedule: schedule.clone(), n, horizon, pieces })
}

impl ChessField {
    pub fn wrap(&self, x: Point) -> Point {
        [x[0].rem_euclid(1.0), x[1].rem_euclid(1.0)]
    }

    /// Index of the piece containing `t`, if `t` is in `[0, T)`.
    pub fn piece_at(&self, t: f64) -> Option<usize> {
        let i = self.pieces.partition_point(|p| p.start <= t);
        (i > 0 && t < self.pieces[i - 1].end).then(|| i - 1)
    }

    pub fn phase_at(&self, t: f64) -> (ChessPhase, f64) {
        match self.piece_at(t) {
            Some(i) => (self.pieces[i].phase, self.pieces[i].sign),
            None => (ChessPhase::Zero, 1.0),
        }
    }

    fn amplitude(&self, phase: ChessPhase) -> f64 {
        let s = &self.schedule;
        let g = s.params.gamma;
        match phase {
            ChessPhase::Zero => 0.0,
            ChessPhase::Horizontal { q } => 0.5 * s.a[q].powf(1.0 - g),
            ChessPhase::Vertical { q } => s.a[q + 1] * s.a[q].powf(-g),
            ChessPhase::Swap { q } => s.a[q].powf(1.0 - g),
        }
    }

    /// Horizontal velocity of the row shear at height `y`.
    fn row_speed(&self, q: usize, y: f64) -> f64 {
        let (a, a1) = (self.schedule.a[q], self.schedule.a[q + 1]);
        let sign = if is_even(y / a) { -1.0 } else { 1.0 };
        sign * self.amplitude(ChessPhase::Horizontal { q }) * square_wave(y / (2.0 * a1))
    }

    /// Vertical velocity of the column shear at abscissa `x`.
    fn column_speed(&self, q: usize, x: f64) -> f64 {
        let (a, a1) = (self.schedule.a[q], self.schedule.a[q + 1]);
        let w = square_wave(x / (2.0 * a1));
        let profile = if is_even((x + 0.5 * a) / a) { 0.5 * (1.0 - w) } else { 0.5 * (1.0 + w) };
        self.amplitude(ChessPhase::Vertical { q }) * profile
    }

    pub fn velocity(&self, t: f64, x: Point) -> Point {
        let (phase, sign) = self.phase_at(t);
        let x = self.wrap(x);
        match phase {
            ChessPhase::Zero => [0.0, 0.0],
            ChessPhase::Horizontal { q } => [sign * self.row_speed(q, x[1]), 0.0],
            ChessPhase::Vertical { q } => [0.0, sign * self.column_speed(q, x[0])],
            ChessPhase::Swap { .. } => [sign * self.amplitude(phase), 0.0],
        }
    }

    /// `sup_x |b(t, x)|`.
    pub fn sup_speed(&self, t: f64) -> f64 {
        self.amplitude(self.phase_at(t).0)
    }

    /// Time for the active shear to move a point across one of its strips.
    pub fn crossing_time(&self, t: f64) -> f64 {
        let phase = self.phase_at(t).0;
        let v = self.amplitude(phase);
        match phase {
            ChessPhase::Zero => f64::INFINITY,
            ChessPhase::Horizontal { q } | ChessPhase::Vertical { q } | ChessPhase::Swap { q } => {
                self.schedule.a[q + 1] / v
            }
        }
    }

    /// Exact flow inside one piece for signed duration `dt`.
    fn step(&self, piece: usize, x: Point, dt: f64) -> Point {
        let p = &self.pieces[piece];
        let y = match p.phase {
            ChessPhase::Zero => x,
            ChessPhase::Horizontal { q } => [x[0] + p.sign * self.row_speed(q, x[1]) * dt, x[1]],
            ChessPhase::Vertical { q } => [x[0], x[1] + p.sign * self.column_speed(q, x[0]) * dt],
            ChessPhase::Swap { .. } => [x[0] + p.sign * self.amplitude(p.phase) * dt, x[1]],
        };
        self.wrap(y)
    }

    /// Flow from `t0` to `t1` (either order), exact up to rounding.
    pub fn flow_map(&self, t0: f64, t1: f64, x: Point) -> Point {
        let mut x = self.wrap(x);
        if t1 >= t0 {
            for (i, p) in self.pieces.iter().enumerate() {
                let (s, e) = (p.start.max(t0), p.end.min(t1));
                if e > s {
                    x = self.step(i, x, e - s);
                }
            }
        } else {
            for (i, p) in self.pieces.iter().enumerate().rev() {
                let (s, e) = (p.start.max(t1), p.end.min(t0));
                if e > s {
                    x = self.step(i, x, -(e - s));
                }
            }
        }
        x
    }

    /// Piece boundaries strictly inside `(t0, t1)`.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| [p.start, p.end])
            .filter(|&t| t > t0 && t < t1)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// `int_{y0}^{y1} b_1(t, x, y) dy` in closed form.
    pub fn flux_x(&self, t: f64, _x: f64, y0: f64, y1: f64) -> f64 {
        let (phase, sign) = self.phase_at(t);
        match phase {
            ChessPhase::Horizontal { q } => {
                let h = self.schedule.a[q + 1];
                sign * piecewise_integral(y0, y1, h, |y| self.row_speed(q, y))
            }
            ChessPhase::Swap { .. } => sign * self.amplitude(phase) * (y1 - y0),
            ChessPhase::Zero | ChessPhase::Vertical { .. } => 0.0,
        }
    }

    /// `int_{x0}^{x1} b_2(t, x, y) dx` in closed form.
    pub fn flux_y(&self, t: f64, _y: f64, x0: f64, x1: f64) -> f64 {
        let (phase, sign) = self.phase_at(t);
        match phase {
            ChessPhase::Vertical { q } => {
                let h = self.schedule.a[q + 1];
                sign * piecewise_integral(x0, x1, h, |x| self.column_speed(q, x))
            }
            _ => 0.0,
        }
    }
}

/// Integral over `[z0, z1]` of a function constant on `[k h, (k+1) h)`.
fn piecewise_integral(z0: f64, z1: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut k = (z0 / h).floor();
    let mut acc = 0.0;
    loop {
        let lo = (k * h).max(z0);
        let hi = ((k + 1.0) * h).min(z1);
        if hi > lo {
            acc += f(0.5 * (lo + hi)) * (hi - lo);
        }
        if (k + 1.0) * h >= z1 {
            break;
        }
        k += 1.0;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{build_chess_schedule, ChessParams};

    #[test]
    fn pieces_tile_the_horizon() {
        let s = build_chess_schedule(&ChessParams::default()).unwrap();
        let f = assemble_chess_field(&s, 2).unwrap();
        assert_eq!(f.pieces[0].start, 0.0);
        for w in f.pieces.windows(2) {
            assert!((w[0].end - w[1].start).abs() < 1e-15, "{w:?}");
        }
        assert!((f.pieces.last().unwrap().end - s.horizon).abs() < 1e-15);
    }

    #[test]
    fn square_wave_halves() {
        assert_eq!(square_wave(0.25), 1.0);
        assert_eq!(square_wave(0.75), -1.0);
        assert_eq!(square_wave(-0.25), -1.0);
    }
}

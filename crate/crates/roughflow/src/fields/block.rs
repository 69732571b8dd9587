use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

/// Which piece of a loop a point sits in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Outside the outer boundary.
    Outside,
    /// Inside the inner boundary (the core of the loop).
    Hole,
    /// A straight strip; `dir` is the unit velocity direction.
    Straight { side: Side, dir: Point },
    /// A quarter-annulus around `center` (absolute coordinates), `r` the radius of the point.
    Corner { center: Point, r: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// A compactly supported loop of width `a` running around a rounded rectangle.
///
/// The core is `R = [-l/2 + a, l/2 - a] x [-l_bar/2 + a, l_bar/2 - a]` around `center`;
/// the support is the set of points at distance in `[a, 2a)` from `R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub l: f64,
    pub l_bar: f64,
    pub a: f64,
    pub v: f64,
    pub center: Point,
    /// +1 counter-clockwise, -1 clockwise.
    pub orientation: i8,
}

impl BuildingBlock {
    pub fn new(l: f64, l_bar: f64, a: f64, v: f64, center: Point) -> Result<Self> {
        if !(a > 0.0 && v >= 0.0 && l.is_finite() && l_bar.is_finite() && v.is_finite()) {
            return Err(Error::Geometry(format!("bad block a={a} v={v} l={l} l_bar={l_bar}")));
        }
        if l < 2.0 * a || l_bar < 2.0 * a {
            return Err(Error::Geometry(format!(
                "block lengths ({l}, {l_bar}) must be at least 2a = {}",
                2.0 * a
            )));
        }
        Ok(Self { l, l_bar, a, v, center, orientation: 1 })
    }

    /// Half sizes of the core rectangle.
    #[inline]
    pub fn half_core(&self) -> (f64, f64) {
        (0.5 * self.l - self.a, 0.5 * self.l_bar - self.a)
    }

    /// Bounding box of the support as `(min, max)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        let ex = 0.5 * self.l + self.a;
        let ey = 0.5 * self.l_bar + self.a;
        (
            [self.center[0] - ex, self.center[1] - ey],
            [self.center[0] + ex, self.center[1] + ey],
        )
    }

    /// Distance from `x` to the core rectangle, split into its axis parts.
    #[inline]
    fn core_offsets(&self, x: Point) -> (f64, f64, f64, f64) {
        let (hx, hy) = self.half_core();
        let y1 = x[0] - self.center[0];
        let y2 = x[1] - self.center[1];
        let dx = (y1.abs() - hx).max(0.0);
        let dy = (y2.abs() - hy).max(0.0);
        (y1, y2, dx, dy)
    }

    /// Distance from `x` to the core rectangle.
    pub fn core_distance(&self, x: Point) -> f64 {
        let (_, _, dx, dy) = self.core_offsets(x);
        dx.hypot(dy)
    }

    pub fn contains(&self, x: Point) -> bool {
        let d = self.core_distance(x);
        d >= self.a && d < 2.0 * self.a
    }

    pub fn region(&self, x: Point) -> Region {
        let (y1, y2, dx, dy) = self.core_offsets(x);
        let d = dx.hypot(dy);
        if d < self.a {
            return Region::Hole;
        }
        if d >= 2.0 * self.a {
            return Region::Outside;
        }
        let o = f64::from(self.orientation);
        let (hx, hy) = self.half_core();
        if dx > 0.0 && dy > 0.0 {
            let c = [
                self.center[0] + hx.copysign(y1),
                self.center[1] + hy.copysign(y2),
            ];
            Region::Corner { center: c, r: d }
        } else if dx > 0.0 {
            if y1 > 0.0 {
                Region::Straight { side: Side::Right, dir: [0.0, o] }
            } else {
                Region::Straight { side: Side::Left, dir: [0.0, -o] }
            }
        } else if y2 > 0.0 {
            Region::Straight { side: Side::Top, dir: [-o, 0.0] }
        } else {
            Region::Straight { side: Side::Bottom, dir: [o, 0.0] }
        }
    }

    /// `v grad^perp H`, zero outside the support.
    pub fn eval(&self, x: Point) -> Point {
        match self.region(x) {
            Region::Outside | Region::Hole => [0.0, 0.0],
            Region::Straight { dir, .. } => [self.v * dir[0], self.v * dir[1]],
            Region::Corner { center, r } => {
                let s = f64::from(self.orientation) * self.v / r;
                [-(x[1] - center[1]) * s, (x[0] - center[0]) * s]
            }
        }
    }

    /// The Hamiltonian `H = min(dist(x, R_a), a)` with `R_a` the inner boundary.
    pub fn hamiltonian(&self, x: Point) -> f64 {
        (self.core_distance(x) - self.a).clamp(0.0, self.a)
    }

    /// Stream function: `v * orientation * H`, so that the field is its perpendicular gradient.
    pub fn stream(&self, x: Point) -> f64 {
        f64::from(self.orientation) * self.v * self.hamiltonian(x)
    }

    /// Operator norm of the gradient at `x`: `v/r` on corners, zero elsewhere.
    pub fn gradient_norm(&self, x: Point) -> f64 {
        match self.region(x) {
            Region::Corner { r, .. } => self.v / r,
            _ => 0.0,
        }
    }

    /// Upper bound of the gradient on the support: `v/a`.
    pub fn gradient_bound(&self) -> f64 {
        self.v / self.a
    }

    /// `sup |grad w|` over the ball `B_rad(x)` intersected with the support.
    pub fn gradient_in_ball(&self, x: Point, rad: f64) -> f64 {
        let (hx, hy) = self.half_core();
        let mut best: f64 = 0.0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                let c = [self.center[0] + sx * hx, self.center[1] + sy * hy];
                let q = [x[0] - c[0], x[1] - c[1]];
                // distance from x to the open quadrant of this corner
                let gap = (sx * q[0]).min(0.0).hypot((sy * q[1]).min(0.0));
                if gap > rad {
                    continue;
                }
                let rc = q[0].hypot(q[1]);
                if rc + rad < self.a || rc - rad >= 2.0 * self.a {
                    continue;
                }
                let rmin = (rc - rad).max(self.a);
                best = best.max(self.v / rmin);
            }
        }
        best
    }

    /// Perimeter of the streamline at core distance `d`.
    pub fn perimeter(&self, d: f64) -> f64 {
        let (hx, hy) = self.half_core();
        4.0 * hx + 4.0 * hy + 2.0 * PI * d
    }

    /// Upper bound on the period of any closed streamline: `(2l + 2l_bar + 4 pi a)/v`.
    pub fn period_bound(&self) -> f64 {
        (2.0 * self.l + 2.0 * self.l_bar + 4.0 * PI * self.a) / self.v
    }

    /// Core distance and counter-clockwise arc coordinate of `x`.
    ///
    /// The arc coordinate starts at the left end of the bottom straight segment.
    pub fn arc_coordinate(&self, x: Point) -> Option<(f64, f64)> {
        if !self.contains(x) {
            return None;
        }
        let (hx, hy) = self.half_core();
        let y1 = x[0] - self.center[0];
        let y2 = x[1] - self.center[1];
        let d = self.core_distance(x);
        let (bx, by) = (2.0 * hx, 2.0 * hy);
        let q = FRAC_PI_2 * d;
        let s = match self.region(x) {
            Region::Straight { side: Side::Bottom, .. } => y1 + hx,
            Region::Straight { side: Side::Right, .. } => bx + q + (y2 + hy),
            Region::Straight { side: Side::Top, .. } => bx + by + 2.0 * q + (hx - y1),
            Region::Straight { side: Side::Left, .. } => 2.0 * bx + by + 3.0 * q + (hy - y2),
            Region::Corner { center, .. } => {
                let phi = (x[1] - center[1]).atan2(x[0] - center[0]);
                let (cx, cy) = (center[0] > self.center[0], center[1] > self.center[1]);
                match (cx, cy) {
                    (true, false) => bx + d * (phi + FRAC_PI_2),
                    (true, true) => bx + by + q + d * phi,
                    (false, true) => 2.0 * bx + by + 2.0 * q + d * (phi - FRAC_PI_2),
                    (false, false) => {
                        2.0 * bx + 2.0 * by + 3.0 * q + d * (phi.rem_euclid(2.0 * PI) - PI)
                    }
                }
            }
            Region::Outside | Region::Hole => unreachable!(),
        };
        let p = self.perimeter(d);
        let s = if self.orientation >= 0 { s } else { p - s };
        Some((d, s.rem_euclid(p)))
    }

    /// Inverse of [`Self::arc_coordinate`].
    pub fn point_at(&self, d: f64, s: f64) -> Point {
        let (hx, hy) = self.half_core();
        let p = self.perimeter(d);
        let s = if self.orientation >= 0 { s } else { p - s };
        let mut s = s.rem_euclid(p);
        let (bx, by) = (2.0 * hx, 2.0 * hy);
        let q = FRAC_PI_2 * d;
        let o = self.center;
        if s < bx {
            return [o[0] - hx + s, o[1] - hy - d];
        }
        s -= bx;
        if s < q {
            let phi = -FRAC_PI_2 + s / d;
            return [o[0] + hx + d * phi.cos(), o[1] - hy + d * phi.sin()];
        }
        s -= q;
        if s < by {
            return [o[0] + hx + d, o[1] - hy + s];
        }
        s -= by;
        if s < q {
            let phi = s / d;
            return [o[0] + hx + d * phi.cos(), o[1] + hy + d * phi.sin()];
        }
        s -= q;
        if s < bx {
            return [o[0] + hx - s, o[1] + hy + d];
        }
        s -= bx;
        if s < q {
            let phi = FRAC_PI_2 + s / d;
            return [o[0] - hx + d * phi.cos(), o[1] + hy + d * phi.sin()];
        }
        s -= q;
        if s < by {
            return [o[0] - hx - d, o[1] + hy - s];
        }
        s -= by;
        let phi = PI + s / d;
        [o[0] - hx + d * phi.cos(), o[1] - hy + d * phi.sin()]
    }

    /// Arc length travelled along the streamline from `from` to `to` (first positive hit).
    pub fn arc_between(&self, from: Point, to: Point) -> Result<f64> {
        let (d0, s0) = self
            .arc_coordinate(from)
            .ok_or_else(|| Error::Geometry(format!("{from:?} is not in the block support")))?;
        let (d1, s1) = self
            .arc_coordinate(to)
            .ok_or_else(|| Error::Geometry(format!("{to:?} is not in the block support")))?;
        if (d0 - d1).abs() > 1e-9 * self.a {
            return Err(Error::Geometry(format!(
                "streamline through {from:?} (d={d0}) misses {to:?} (d={d1})"
            )));
        }
        let p = self.perimeter(d0);
        let mut arc = (s1 - s0).rem_euclid(p);
        if arc <= 1e-12 * p || p - arc <= 1e-12 * p {
            arc = p;
        }
        Ok(arc)
    }

    /// Exact flow of the autonomous block field for time `t` (negative runs backwards).
    pub fn flow(&self, x: Point, t: f64) -> Point {
        match self.arc_coordinate(x) {
            Some((d, s)) => self.point_at(d, s + self.v * t),
            None => x,
        }
    }

    /// Local coordinates of the lines and circles that bound the regions.
    pub fn boundary_lines(&self) -> ([f64; 6], [f64; 6]) {
        let (hx, hy) = self.half_core();
        let a = self.a;
        let c = self.center;
        (
            [
                c[0] - hx - 2.0 * a,
                c[0] - hx - a,
                c[0] - hx,
                c[0] + hx,
                c[0] + hx + a,
                c[0] + hx + 2.0 * a,
            ],
            [
                c[1] - hy - 2.0 * a,
                c[1] - hy - a,
                c[1] - hy,
                c[1] + hy,
                c[1] + hy + a,
                c[1] + hy + 2.0 * a,
            ],
        )
    }

    pub fn corner_centers(&self) -> [Point; 4] {
        let (hx, hy) = self.half_core();
        let c = self.center;
        [
            [c[0] + hx, c[1] - hy],
            [c[0] + hx, c[1] + hy],
            [c[0] - hx, c[1] + hy],
            [c[0] - hx, c[1] - hy],
        ]
    }

    /// Area of the support.
    pub fn support_area(&self) -> f64 {
        let (hx, hy) = self.half_core();
        (4.0 * hx + 4.0 * hy) * self.a + 3.0 * PI * self.a * self.a
    }

    /// `||w||_{L^p}` in closed form (constant speed on the support).
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.v * self.support_area().powf(1.0 / p)
    }

    /// Whether `x` lies in the restriction `Q[eps]`.
    pub fn contains_restricted(&self, x: Point, eps: f64) -> bool {
        let d = self.core_distance(x);
        d > self.a + eps && d < 2.0 * self.a - eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> BuildingBlock {
        BuildingBlock::new(1.0, 0.6, 0.1, 2.0, [0.3, -0.2]).unwrap()
    }

    #[test]
    fn left_strip_points_down() {
        let b = block();
        let x = [0.3 - 0.55, -0.2];
        assert_eq!(b.eval(x), [0.0, -2.0]);
    }

    #[test]
    fn arc_round_trip() {
        let b = block();
        for i in 0..200 {
            let d = 0.1 + 0.099 * (i as f64 / 200.0);
            let s = b.perimeter(d) * (i as f64 * 0.618).fract();
            let x = b.point_at(d, s);
            let (d1, s1) = b.arc_coordinate(x).unwrap();
            assert!((d - d1).abs() < 1e-12);
            let p = b.perimeter(d);
            let e = (s - s1).rem_euclid(p);
            assert!(e.min(p - e) < 1e-12, "{s} {s1}");
        }
    }

    #[test]
    fn gradient_bound_value() {
        let b = BuildingBlock::new(1.0, 1.0, 0.1, 1.0, [0.0, 0.0]).unwrap();
        assert_eq!(b.gradient_bound(), 10.0);
    }
}

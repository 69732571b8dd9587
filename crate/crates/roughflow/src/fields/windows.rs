use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// On/off schedule of a pipe, as half-open intervals `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeWindows {
    Always,
    Never,
    /// `[offset + j period, offset + j period + width)` for all integers `j`.
    Periodic { offset: f64, period: f64, width: f64 },
    /// Sorted, disjoint intervals.
    List(Vec<(f64, f64)>),
}

impl TimeWindows {
    /// Periodic windows; collapses to `Always`/`Never` when they cover everything/nothing.
    pub fn periodic(offset: f64, period: f64, width: f64) -> Self {
        if !(period > 0.0) || width >= period {
            Self::Always
        } else if width <= 0.0 {
            Self::Never
        } else {
            Self::Periodic { offset: offset.rem_euclid(period), period, width }
        }
    }

    pub fn list(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        intervals.retain(|(s, e)| e > s);
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Schedule(format!("overlapping windows {:?} {:?}", w[0], w[1])));
            }
        }
        Ok(Self::List(intervals))
    }

    pub fn contains(&self, t: f64) -> bool {
        match self {
            Self::Always => true,
            Self::Never => false,
            Self::Periodic { offset, period, width } => (t - offset).rem_euclid(*period) < *width,
            Self::List(v) => {
                let i = v.partition_point(|(s, _)| *s <= t);
                i > 0 && t < v[i - 1].1
            }
        }
    }

    /// Smallest window edge strictly greater than `t`.
    pub fn next_edge_after(&self, t: f64) -> Option<f64> {
        match self {
            Self::Always | Self::Never => None,
            Self::Periodic { offset, period, width } => {
                let j = ((t - offset) / period).floor() - 1.0;
                let mut best = f64::INFINITY;
                for k in 0..4 {
                    let base = offset + (j + k as f64) * period;
                    for e in [base, base + width] {
                        if e > t && e < best {
                            best = e;
                        }
                    }
                }
                Some(best)
            }
            Self::List(v) => v.iter().flat_map(|(s, e)| [*s, *e]).find(|&e| e > t),
        }
    }

    /// Largest window edge strictly smaller than `t`.
    pub fn prev_edge_before(&self, t: f64) -> Option<f64> {
        match self {
            Self::Always | Self::Never => None,
            Self::Periodic { offset, period, width } => {
                let j = ((t - offset) / period).floor() - 2.0;
                let mut best = f64::NEG_INFINITY;
                for k in 0..4 {
                    let base = offset + (j + k as f64) * period;
                    for e in [base, base + width] {
                        if e < t && e > best {
                            best = e;
                        }
                    }
                }
                Some(best)
            }
            Self::List(v) => v.iter().rev().flat_map(|(s, e)| [*e, *s]).find(|&e| e < t),
        }
    }

    /// Total on-time inside `[t0, t1]`.
    pub fn measure_in(&self, t0: f64, t1: f64) -> f64 {
        let mut t = t0;
        let mut on = 0.0;
        while t < t1 {
            let next = self.next_edge_after(t).unwrap_or(f64::INFINITY).min(t1);
            if self.contains(0.5 * (t + next)) {
                on += next - t;
            }
            t = next;
        }
        on
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_edges() {
        let w = TimeWindows::periodic(0.25, 1.0, 0.5);
        assert!(w.contains(0.3));
        assert!(!w.contains(0.8));
        assert!(w.contains(-0.7));
        assert_eq!(w.next_edge_after(0.25), Some(0.75));
        assert_eq!(w.next_edge_after(0.8), Some(1.25));
        assert_eq!(w.prev_edge_before(1.25), Some(0.75));
        assert!((w.measure_in(0.0, 4.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wide_periodic_is_always() {
        assert_eq!(TimeWindows::periodic(0.0, 1.0, 1.5), TimeWindows::Always);
    }
}

//! Parameter hypotheses and the derived scalar schedules of both constructions.

use serde::{Deserialize, Serialize};

use crate::fields::block::BuildingBlock;
use crate::{Error, Point, Result};

/// Relative size below which continued series terms are dropped.
const TAIL_REL: f64 = 1e-18;
/// Hard cap on the number of continued levels.
const MAX_LEVELS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    pub p: f64,
    pub delta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub a0: f64,
    pub n_max: usize,
    pub kappa: f64,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self { p: 1.5, delta: 0.1, alpha: 1.2, epsilon: 0.001, a0: 0.1, n_max: 3, kappa: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChessParams {
    pub p: f64,
    pub delta: f64,
    pub gamma: f64,
    pub a0: f64,
    pub n_max: usize,
    pub kappa: f64,
}

impl Default for ChessParams {
    /// Desk-scale chess: dyadic tiles so a 512 grid is aligned down to `a_4`.
    fn default() -> Self {
        Self { p: 1.5, delta: 0.1, gamma: 2.7, a0: 1.0 / 16.0, n_max: 3, kappa: 1.0 }
    }
}

impl ChessParams {
    /// A parameter set for which every chess hypothesis holds, including the
    /// smallness `2 a_0^delta < 1/10`, at the price of a huge tile ratio.
    pub fn separation() -> Self {
        Self { p: 1.1, delta: 1.0, gamma: 9.0, a0: 2f64.powi(-11), n_max: 1, kappa: 1.0 }
    }
}

/// One evaluated inequality `lhs < rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub hypothesis: String,
    pub statement: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; positive when the inequality holds.
    pub margin: f64,
    pub pass: bool,
    /// Checks that are only measured do not affect `pass` of the report.
    pub enforced: bool,
}

impl Check {
    fn lt(hypothesis: &str, statement: &str, lhs: f64, rhs: f64, enforced: bool) -> Self {
        Self {
            hypothesis: hypothesis.to_string(),
            statement: statement.to_string(),
            lhs,
            rhs,
            margin: rhs - lhs,
            pass: lhs < rhs,
            enforced,
        }
    }

    fn le(hypothesis: &str, statement: &str, lhs: f64, rhs: f64, enforced: bool) -> Self {
        Self { pass: lhs <= rhs, ..Self::lt(hypothesis, statement, lhs, rhs, enforced) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ValidationReport {
    fn new(checks: Vec<Check>) -> Self {
        let pass = checks.iter().filter(|c| c.enforced).all(|c| c.pass);
        Self { checks, pass }
    }

    /// Whether every check tagged `hypothesis` holds.
    pub fn holds(&self, hypothesis: &str) -> bool {
        let mut seen = false;
        for c in self.checks.iter().filter(|c| c.hypothesis == hypothesis) {
            seen = true;
            if !c.pass {
                return false;
            }
        }
        seen
    }
}

fn require(name: &'static str, ok: bool, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam { name, reason: reason.into() })
    }
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    require(name, x.is_finite() && x > 0.0, format!("must be finite and positive, got {x}"))
}

/// Integer ratio `a_q / a_{q+1}`: the smallest integer in `[a^-delta, a^-delta + 1]`.
pub fn tile_ratio(a: f64, delta: f64) -> u64 {
    let r = a.powf(-delta);
    let c = r.ceil();
    if c.is_finite() && c < u64::MAX as f64 {
        c as u64
    } else {
        u64::MAX
    }
}

/// `a_0, a_1, ...` continued until the terms are negligible (at least `min_len`).
fn continued_tiles(a0: f64, delta: f64, min_len: usize) -> Result<(Vec<f64>, Vec<u64>)> {
    let mut a = vec![a0];
    let mut m = Vec::new();
    loop {
        let last = *a.last().unwrap();
        if a.len() >= min_len && (last < a0 * TAIL_REL || a.len() >= MAX_LEVELS) {
            break;
        }
        if last < 1e-250 {
            if a.len() < min_len {
                return Err(Error::Schedule(format!(
                    "tile a_{} = {last:e} underflows before level {min_len}",
                    a.len() - 1
                )));
            }
            break;
        }
        let r = tile_ratio(last, delta);
        if r < 2 {
            return Err(Error::Schedule(format!(
                "level q = {}: integer ratio a_q/a_(q+1) = {r} < 2 is incompatible with sum a_k <= 2",
                a.len() - 1
            )));
        }
        m.push(r);
        a.push(last / r as f64);
    }
    Ok((a, m))
}

pub fn validate_loop_hypotheses(params: &LoopParams) -> Result<ValidationReport> {
    let LoopParams { p, delta, alpha, epsilon, a0, kappa, .. } = *params;
    positive("p", p)?;
    positive("delta", delta)?;
    positive("alpha", alpha)?;
    positive("epsilon", epsilon)?;
    positive("a0", a0)?;
    require("kappa", kappa.is_finite() && kappa >= 0.0, "must be finite and non-negative")?;
    require("p", p >= 1.0, format!("p = {p} must be at least 1"))?;
    require("p", p < 2.0, format!("p = {p} >= 2 violates (H delta) for every delta > 0"))?;
    require("a0", a0 < 0.125, format!("a0 = {a0} must be below 1/8"))?;

    let mut checks = vec![
        Check::lt(
            "H_delta",
            "p < (2+delta)(1-delta)/(1+delta)",
            p,
            (2.0 + delta) * (1.0 - delta) / (1.0 + delta),
            true,
        ),
        Check::lt("H_alpha", "1/(1-delta) < alpha", 1.0 / (1.0 - delta), alpha, true),
        Check::lt(
            "H_alpha",
            "alpha < (2+delta)/(p(1+delta))",
            alpha,
            (2.0 + delta) / (p * (1.0 + delta)),
            true,
        ),
        Check::lt(
            "H_epsilon",
            "epsilon < min(delta(alpha-1)/(1+delta), delta^2/8)",
            epsilon,
            (delta * (alpha - 1.0) / (1.0 + delta)).min(delta * delta / 8.0),
            true,
        ),
    ];
    let (a, _) = continued_tiles(a0, delta, params.n_max + 2)?;
    let sum: f64 = a.iter().rev().sum();
    checks.push(Check::le("sum_a", "sum_k a_k <= 2 (rounded schedule)", sum, 2.0, true));
    Ok(ValidationReport::new(checks))
}

pub fn validate_chess_hypotheses(params: &ChessParams) -> Result<ValidationReport> {
    let ChessParams { p, delta, gamma, a0, kappa, .. } = *params;
    positive("p", p)?;
    positive("delta", delta)?;
    positive("gamma", gamma)?;
    positive("a0", a0)?;
    require("kappa", kappa.is_finite() && kappa >= 0.0, "must be finite and non-negative")?;
    require("p", (1.0..2.0).contains(&p), format!("p = {p} must lie in [1, 2)"))?;
    require("a0", a0 < 1.0, format!("a0 = {a0} must be below 1"))?;
    let conj = if p > 1.0 { p / (p - 1.0) } else { f64::INFINITY };
    let lower = 2.0 * (1.0 + delta).powi(2);
    let (a, _) = continued_tiles(a0, delta, params.n_max + 2)?;
    let sum: f64 = a.iter().rev().map(|x| x.powf(delta)).sum();
    let checks = vec![
        Check::lt("H_delta_chess", "2(1+delta)^2 < p/(p-1)", lower, conj, true),
        Check::lt("H_gamma", "2(1+delta)^2 < gamma", lower, gamma, true),
        Check::lt("H_gamma", "gamma < p/(p-1)", gamma, conj, true),
        Check::le("a0_small", "sum_j a_j^delta <= 2 a0^delta", sum, 2.0 * a0.powf(delta), false),
        Check::lt("a0_small", "2 a0^delta < 1/10", 2.0 * a0.powf(delta), 0.1, false),
    ];
    Ok(ValidationReport::new(checks))
}

/// Every derived sequence of the loop construction.
///
/// Index conventions: vectors indexed by level `q` run over `0..=n_max+1`;
/// entries that are undefined at `q = 0` (`tau_bar`, `t_travel`) hold 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSchedule {
    pub params: LoopParams,
    pub a: Vec<f64>,
    /// `a_q / a_{q+1}` for `q = 0..=n_max`.
    pub ratio: Vec<u64>,
    pub v: Vec<f64>,
    /// `tau_bar_q / tau_bar_{q+1}` for `q = 1..=n_max` (index 0 unused, 0).
    pub tau_ratio: Vec<u64>,
    pub l: Vec<f64>,
    pub centers: Vec<Point>,
    /// `s_q = 2 sum_{k >= q} a_k`, the offset of pipe `q`'s crossing strips from the axes.
    pub offsets: Vec<f64>,
    pub tau_bar: Vec<f64>,
    pub t_travel: Vec<f64>,
    pub t_cum: Vec<f64>,
    /// Gluing transit time for `n = 0..=n_max`.
    pub t_glue: Vec<f64>,
    /// `T_n` for `n = 0..=n_max`.
    pub t_horizon: Vec<f64>,
    pub horizon: f64,
    /// Side of the periodic box, an integer multiple of `a_0`.
    pub torus_side: f64,
    /// Factor applied to all times (speeds divided by it).
    pub time_unit: f64,
}

/// Geometry and timing of every level, continued far enough for the limits.
struct LoopLevels {
    a: Vec<f64>,
    ratio: Vec<u64>,
    v: Vec<f64>,
    tau_ratio: Vec<u64>,
    /// `s_q` for `q = 0..len`; `s_{-1}` stored separately.
    s: Vec<f64>,
    s_minus: f64,
    a_minus_geom: f64,
}

impl LoopLevels {
    fn build(params: &LoopParams, min_len: usize) -> Result<Self> {
        let (a, ratio) = continued_tiles(params.a0, params.delta, min_len)?;
        let k = a.len();
        let mut v = vec![params.a0.powf(-params.alpha)];
        let mut tau_ratio = vec![0];
        for q in 1..k {
            if q >= ratio.len() {
                break;
            }
            let m = ratio[q] as f64;
            let target = a[q].powf(-params.alpha);
            let n = (m * target / v[q - 1]).round().max(m + 1.0);
            tau_ratio.push(n as u64);
            v.push(v[q - 1] * n / m);
        }
        let len = v.len();
        let mut s = vec![0.0; len];
        let mut acc = 0.0;
        for q in (0..k).rev() {
            acc += 2.0 * a[q];
            if q < len {
                s[q] = acc;
            }
        }
        let a_minus_geom = a[0] + a[1];
        let s_minus = s[0] + 2.0 * a_minus_geom;
        Ok(Self { a, ratio, v, tau_ratio, s, s_minus, a_minus_geom })
    }

    fn len(&self) -> usize {
        self.v.len()
    }

    fn s_prev(&self, q: usize) -> f64 {
        if q == 0 {
            self.s_minus
        } else {
            self.s[q - 1]
        }
    }

    fn a_prev_geom(&self, q: usize) -> f64 {
        if q == 0 {
            self.a_minus_geom
        } else {
            self.a[q - 1]
        }
    }

    fn pipe(&self, q: usize) -> Result<BuildingBlock> {
        let l = 4.0 * self.a_prev_geom(q);
        let s = self.s_prev(q);
        BuildingBlock::new(l, l, self.a[q], self.v[q], [-s, s])
    }

    /// Center of the crossing of pipe `q`'s bottom strip with pipe `q+1`'s left strip.
    fn crossing(&self, q: usize) -> Point {
        [
            -self.s[q] - 2.0 * self.a[q] - 0.5 * self.a[q + 1],
            self.s[q] - 0.5 * self.a[q],
        ]
    }

    /// Shortest time after which the backward image of `S_q` lies inside `S_(q-1)`,
    /// measured along the streamline through the crossing centres.
    fn travel(&self, q: usize) -> Result<f64> {
        let b = self.pipe(q)?;
        let centres = b.arc_between(self.crossing(q - 1), self.crossing(q))?;
        Ok((centres - 0.5 * self.a[q - 1] + 0.5 * self.a[q + 1]) / self.v[q])
    }

    fn glue(&self, n: usize) -> Result<BuildingBlock> {
        let (s, a, a1, v1) = (self.s[n], self.a[n], self.a[n + 1], self.v[n + 1]);
        if n % 2 == 0 {
            BuildingBlock::new(2.0 * s + 4.0 * a, 4.0 * a, a1, v1, [0.0, s])
        } else {
            BuildingBlock::new(4.0 * a, 2.0 * s + 4.0 * a, a1, v1, [-s, 0.0])
        }
    }

    fn glue_time(&self, n: usize) -> Result<f64> {
        let b = self.glue(n)?;
        let x = self.crossing(n);
        let target = if n % 2 == 0 { [-x[0], x[1]] } else { [x[0], -x[1]] };
        Ok(b.arc_between(x, target)? / self.v[n + 1])
    }

    fn tau_bar(&self, q: usize) -> f64 {
        self.a[q] / self.v[q - 1]
    }

    /// `T_n` given the cumulative travel times.
    fn horizon(&self, n: usize, t_cum: &[f64], t_glue: f64) -> f64 {
        let mut t = 2.0 * self.ratio[0] as f64 * self.tau_bar(1) + 2.0 * t_cum[n];
        for i in 1..=n + 1 {
            let a_im2 = if i == 1 { self.a[0] } else { self.a[i - 2] };
            t += a_im2 / self.a[i] * self.tau_bar(i);
        }
        t + t_glue
    }
}

pub fn build_loop_schedule(params: &LoopParams) -> Result<LoopSchedule> {
    let report = validate_loop_hypotheses(params)?;
    if !report.holds("sum_a") {
        return Err(Error::Schedule("rounded schedule violates sum a_k <= 2".into()));
    }
    let n_max = params.n_max;
    let lv = LoopLevels::build(params, n_max + 4)?;
    let len = lv.len();
    if len < n_max + 4 {
        return Err(Error::Schedule(format!("only {len} levels representable, need {}", n_max + 4)));
    }

    // continued travel times and horizons for the limit of T_n
    let mut t_travel_ext = vec![0.0];
    let mut t_cum_ext = vec![0.0];
    for q in 1..len - 1 {
        let t = lv.travel(q)?;
        t_travel_ext.push(t);
        t_cum_ext.push(t_cum_ext[q - 1] + t);
    }
    let mut horizons = Vec::new();
    let mut glues = Vec::new();
    for n in 0..len - 2 {
        let g = lv.glue_time(n)?;
        glues.push(g);
        horizons.push(lv.horizon(n, &t_cum_ext, g));
    }
    let sup_horizon = horizons.iter().cloned().fold(0.0, f64::max);
    let horizon = sup_horizon + 5.0 * params.a0 / lv.v[0];

    let q_len = n_max + 2;
    let a = lv.a[..q_len].to_vec();
    let v = lv.v[..q_len].to_vec();
    let ratio = lv.ratio[..=n_max].to_vec();
    let mut tau_ratio = lv.tau_ratio[..=n_max].to_vec();
    tau_ratio[0] = 0;
    let l: Vec<f64> = (0..q_len).map(|q| 4.0 * lv.a_prev_geom(q)).collect();
    let centers: Vec<Point> = (0..q_len).map(|q| [-lv.s_prev(q), lv.s_prev(q)]).collect();
    let offsets = lv.s[..q_len].to_vec();
    let tau_bar: Vec<f64> = (0..q_len).map(|q| if q == 0 { 0.0 } else { lv.tau_bar(q) }).collect();

    let extent = lv.s_minus + 2.0 * lv.a_minus_geom + lv.a[0];
    let cells = (2.0 * extent / params.a0).ceil() + 2.0;

    Ok(LoopSchedule {
        params: params.clone(),
        a,
        ratio,
        v,
        tau_ratio,
        l,
        centers,
        offsets,
        tau_bar,
        t_travel: t_travel_ext[..q_len].to_vec(),
        t_cum: t_cum_ext[..q_len].to_vec(),
        t_glue: glues[..=n_max].to_vec(),
        t_horizon: horizons[..=n_max].to_vec(),
        horizon,
        torus_side: cells * params.a0,
        time_unit: 1.0,
    })
}

impl LoopSchedule {
    pub fn n_max(&self) -> usize {
        self.params.n_max
    }

    /// Pipe `q` centered at `O_q` in the second quadrant.
    pub fn pipe(&self, q: usize) -> BuildingBlock {
        let l = self.l[q];
        BuildingBlock::new(l, l, self.a[q], self.v[q], self.centers[q])
            .expect("schedule geometry is valid")
    }

    /// Gluing pipe for level `n`.
    pub fn glue(&self, n: usize) -> BuildingBlock {
        let (s, a, a1, v1) = (self.offsets[n], self.a[n], self.a[n + 1], self.v[n + 1]);
        let b = if n % 2 == 0 {
            BuildingBlock::new(2.0 * s + 4.0 * a, 4.0 * a, a1, v1, [0.0, s])
        } else {
            BuildingBlock::new(4.0 * a, 2.0 * s + 4.0 * a, a1, v1, [-s, 0.0])
        };
        b.expect("schedule geometry is valid")
    }

    /// Center of `S_q`, the crossing used by the chain (bottom strip of `q`, left strip of `q+1`).
    pub fn crossing_center(&self, q: usize) -> Point {
        [
            -self.offsets[q] - 2.0 * self.a[q] - 0.5 * self.a[q + 1],
            self.offsets[q] - 0.5 * self.a[q],
        ]
    }

    /// The crossing rectangle `S_q` as `(min, max)`.
    pub fn crossing_rect(&self, q: usize) -> (Point, Point) {
        let s = self.offsets[q];
        let (a, a1) = (self.a[q], self.a[q + 1]);
        ([-s - 2.0 * a - a1, s - a], [-s - 2.0 * a, s])
    }

    /// Bracket denominator `a_{k-2}` with `a_{-1} = a_0`.
    pub fn a_bracket(&self, k: usize) -> f64 {
        if k == 1 {
            self.a[0]
        } else {
            self.a[k - 2]
        }
    }

    /// Exact `T_n` recomputation (used by tests and the arrival module).
    pub fn horizon_of(&self, n: usize) -> f64 {
        self.t_horizon[n]
    }

    /// Rescale time by `c` (times multiplied, speeds divided).
    pub fn rescaled(&self, c: f64) -> Self {
        let mut s = self.clone();
        let scale_t = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= c);
        scale_t(&mut s.tau_bar);
        scale_t(&mut s.t_travel);
        scale_t(&mut s.t_cum);
        scale_t(&mut s.t_glue);
        scale_t(&mut s.t_horizon);
        s.v.iter_mut().for_each(|x| *x /= c);
        s.horizon *= c;
        s.time_unit *= c;
        s
    }

    /// Rescale so that `T < 1` if it is not already.
    pub fn rescaled_below_one(&self) -> Self {
        if self.horizon < 1.0 {
            self.clone()
        } else {
            self.rescaled(0.5 / self.horizon)
        }
    }
}

/// Chess tile sizes and time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChessSchedule {
    pub params: ChessParams,
    /// `a_0..=a_{n_max+1}`.
    pub a: Vec<f64>,
    pub ratio: Vec<u64>,
    pub lambda: Vec<f64>,
    /// `t_0..=t_{n_max+1}` with `t_q = sum_{k<q} 3 a_k^gamma`.
    pub t_steps: Vec<f64>,
    pub horizon: f64,
    /// Rigorous enclosure of `T`.
    pub horizon_bounds: (f64, f64),
}

pub fn build_chess_schedule(params: &ChessParams) -> Result<ChessSchedule> {
    validate_chess_hypotheses(params)?;
    let n_max = params.n_max;
    let (a_ext, m_ext) = continued_tiles(params.a0, params.delta, n_max + 2)?;
    let g = params.gamma;
    let a = a_ext[..n_max + 2].to_vec();
    let ratio = m_ext[..=n_max].to_vec();
    let lambda = a.iter().map(|x| 0.5 / x).collect();
    let mut t_steps = vec![0.0];
    for q in 0..=n_max {
        t_steps.push(t_steps[q] + 3.0 * a[q].powf(g));
    }
    let head = t_steps[n_max + 1];
    let terms: Vec<f64> = a_ext[n_max + 1..].iter().map(|x| 3.0 * x.powf(g)).collect();
    let tail: f64 = terms.iter().rev().sum();
    // geometric majorant: the term ratio is non-increasing along the schedule
    let major = match terms.as_slice() {
        [t0, t1, ..] if t1 < t0 => t0 / (1.0 - t1 / t0),
        [t0, ..] => 2.0 * t0,
        [] => 0.0,
    };
    let low = 2.0 * head;
    let high = 2.0 * (head + major.max(tail));
    Ok(ChessSchedule {
        params: params.clone(),
        a,
        ratio,
        lambda,
        t_steps,
        horizon: 2.0 * (head + tail),
        horizon_bounds: (low, high),
    })
}

impl ChessSchedule {
    pub fn n_max(&self) -> usize {
        self.params.n_max
    }

    pub fn step(&self, q: usize) -> f64 {
        self.a[q].powf(self.params.gamma)
    }

    /// `I_{q,i} = [t_q + (i-1) a_q^gamma, t_q + i a_q^gamma)`.
    pub fn interval_i(&self, q: usize, i: usize) -> (f64, f64) {
        let s = self.step(q);
        let t = self.t_steps[q];
        (t + (i as f64 - 1.0) * s, t + i as f64 * s)
    }

    /// `J_{q,i} = (T - t_q - i a_q^gamma, T - t_q - (i-1) a_q^gamma]`.
    pub fn interval_j(&self, q: usize, i: usize) -> (f64, f64) {
        let (lo, hi) = self.interval_i(q, i);
        (self.horizon - hi, self.horizon - lo)
    }
}

/// Series bound on the norms of the assembled fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBudget {
    pub p: f64,
    /// Decay exponent of the per-level terms; the series converges iff it is positive.
    pub exponent: f64,
    pub finite: bool,
    pub terms: Vec<f64>,
    pub glue_terms: Vec<f64>,
    /// The bound itself (`inf` when the series diverges).
    pub bound: f64,
}

/// `sup_t ||b_n(t)||_{L^p}` for the loop, by Minkowski over the four copies and the glue.
pub fn loop_lp_budget(schedule: &LoopSchedule, p: f64) -> Result<NormBudget> {
    let params = &schedule.params;
    let exponent = 2.0 + params.delta - params.alpha * p * (1.0 + params.delta);
    let lv = LoopLevels::build(params, schedule.a.len() + 2)?;
    let mut terms = Vec::new();
    for q in 0..lv.len() {
        terms.push(4.0 * lv.pipe(q)?.lp_norm(p));
    }
    let mut glue_terms = Vec::new();
    for n in 0..lv.len() - 2 {
        glue_terms.push(lv.glue(n)?.lp_norm(p));
    }
    let finite = exponent > 0.0;
    let bound = if finite {
        terms.iter().rev().sum::<f64>() + glue_terms.iter().cloned().fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(NormBudget { p, exponent, finite, terms, glue_terms, bound })
}

/// `||b_n||_{L^p_t L^inf_x}` for the chess field.
pub fn chess_lp_budget(schedule: &ChessSchedule, p: f64) -> Result<NormBudget> {
    let params = &schedule.params;
    let g = params.gamma;
    let exponent = g + (1.0 - g) * p;
    let (a, _) = continued_tiles(params.a0, params.delta, schedule.a.len() + 1)?;
    let mut terms = Vec::new();
    for q in 0..a.len() - 1 {
        let (aq, aq1) = (a[q], a[q + 1]);
        let t = aq.powf(g) * aq.powf((1.0 - g) * p)
            + aq.powf(g) * (0.5 * aq.powf(1.0 - g)).powf(p)
            + aq.powf(g) * (aq1 * aq.powf(-g)).powf(p);
        terms.push(2.0 * t);
    }
    let finite = exponent > 0.0;
    let bound = if finite { terms.iter().rev().sum::<f64>().powf(1.0 / p) } else { f64::INFINITY };
    Ok(NormBudget { p, exponent, finite, terms, glue_terms: vec![], bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_from_bracket() {
        assert_eq!(tile_ratio(0.1, 0.1), 2);
        assert_eq!(tile_ratio(2f64.powi(-11), 1.0), 2048);
    }

    #[test]
    fn defaults_validate() {
        let r = validate_loop_hypotheses(&LoopParams::default()).unwrap();
        assert!(r.pass, "{r:#?}");
        let r = validate_chess_hypotheses(&ChessParams::default()).unwrap();
        assert!(r.pass, "{r:#?}");
    }
}

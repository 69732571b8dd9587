//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). A FAIL line does not change the
//! exit status unless `ROUGHFLOW_STRICT_ACCEPTANCE=1` is set.

use std::path::Path;
use std::time::Instant;

use roughflow::cli::{self, chess_boards, chess_gap_starts, loop_gap_starts, loop_gronwall_constant, PECLET};
use roughflow::config::{Config, Construction};
use roughflow::fields::{assemble_chess_field, assemble_loop_field, divergence_defect, BuildingBlock, FieldHandle, Region};
use roughflow::flow::{
    build_arrival_combinatorics, block_loop_budget, sample_glue_zone, verify_backward_property, verify_chess_flow,
    verify_forward_property, MarginPolicy,
};
use roughflow::manifest::RunManifest;
use roughflow::params::{
    build_chess_schedule, build_loop_schedule, validate_loop_hypotheses, ChessParams, LoopParams,
};
use roughflow::pde::{
    energy_inequality_check, make_chess_initial_datum, solve_advection_diffusion, Grid, ScalarField, SolverOptions,
    CELL_SUBSAMPLES,
};
use roughflow::stochastic::{feynman_kac_forward_pushforward, good_set_stats, peclet_kappa, stability_gap, DtPolicy};

type Outcome = Result<(bool, String), String>;

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
    limit: Option<f64>,
}

fn run(id: usize, title: &'static str, limit: Option<f64>, f: impl FnOnce() -> Outcome) -> Line {
    let clock = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let secs = clock.elapsed().as_secs_f64();
    let in_time = limit.is_none_or(|l| secs < l);
    let line = Line { id, title, pass: pass && in_time, detail, secs, limit };
    let status = if line.pass { "PASS" } else { "FAIL" };
    let budget = line.limit.map(|l| format!(" (limit {l:.0}s)")).unwrap_or_default();
    println!("criterion {:>2} {status}  {} | {} | {:.1}s{budget}", line.id, line.title, line.detail, line.secs);
    line
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn hypothesis_gate() -> Outcome {
    let d = LoopParams::default();
    let base = validate_loop_hypotheses(&d).map_err(e)?;
    let mut ok = ["H_delta", "H_alpha", "H_epsilon"].iter().all(|h| base.holds(h));
    let mut notes = vec![format!("defaults hold: {ok}")];
    let (p, dl, al) = (d.p, d.delta, d.alpha);
    // each boundary approached from the valid side, then crossed by 1e-3
    let p_star = (2.0 + dl) * (1.0 - dl) / (1.0 + dl);
    let a_lo = 1.0 / (1.0 - dl);
    let a_hi = (2.0 + dl) / (p * (1.0 + dl));
    let e_star = (dl * (al - 1.0) / (1.0 + dl)).min(dl * dl / 8.0);
    let cases: [(&str, LoopParams, LoopParams); 4] = [
        ("H_delta", LoopParams { p: p_star - 1e-3, ..d.clone() }, LoopParams { p: p_star + 1e-3, ..d.clone() }),
        ("H_alpha", LoopParams { alpha: a_lo + 1e-3, ..d.clone() }, LoopParams { alpha: a_lo - 1e-3, ..d.clone() }),
        ("H_alpha", LoopParams { alpha: a_hi - 1e-3, ..d.clone() }, LoopParams { alpha: a_hi + 1e-3, ..d.clone() }),
        ("H_epsilon", LoopParams { epsilon: e_star - 1e-3, ..d.clone() }, LoopParams { epsilon: e_star + 1e-3, ..d.clone() }),
    ];
    for (h, inside, outside) in cases {
        let a = validate_loop_hypotheses(&inside).map_err(e)?.holds(h);
        let b = validate_loop_hypotheses(&outside).map_err(e)?.holds(h);
        ok &= a && !b;
        notes.push(format!("{h} inside={a} outside={b}"));
    }
    Ok((ok, notes.join(", ")))
}

/// Largest singular value of the central-difference Jacobian of `w` at `x`.
fn fd_gradient(b: &BuildingBlock, x: [f64; 2], h: f64) -> f64 {
    let d = |i: usize| {
        let (mut p, mut m) = (x, x);
        p[i] += h;
        m[i] -= h;
        let (wp, wm) = (b.eval(p), b.eval(m));
        [(wp[0] - wm[0]) / (2.0 * h), (wp[1] - wm[1]) / (2.0 * h)]
    };
    let (c0, c1) = (d(0), d(1));
    let fro = c0[0] * c0[0] + c0[1] * c0[1] + c1[0] * c1[0] + c1[1] * c1[1];
    let det = c0[0] * c1[1] - c0[1] * c1[0];
    (0.5 * (fro + (fro * fro - 4.0 * det * det).max(0.0).sqrt())).sqrt()
}

/// Whether the whole difference stencil around `x` lies in one strip or one corner.
fn one_piece(b: &BuildingBlock, x: [f64; 2], h: f64) -> bool {
    let key = |p: [f64; 2]| match b.region(p) {
        Region::Straight { side, .. } => Some((side as u8, [0.0, 0.0])),
        Region::Corner { center, .. } => Some((9, center)),
        _ => None,
    };
    let k = key(x);
    k.is_some() && [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]].iter().all(|d| key([x[0] + d[0], x[1] + d[1]]) == k)
}

fn building_blocks() -> Outcome {
    let mut ok = true;
    let mut budgets = Vec::new();
    let (mut speed_err, mut straight_grad, mut corner_err, mut period_ratio): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut support_bad = 0usize;
    for &a in &[0.01, 0.05, 0.1] {
        for &v in &[1.0, 10.0, 100.0] {
            for &lf in &[4.0, 10.0, 40.0] {
                let b = BuildingBlock::new(lf * a, 0.5 * lf * a + a, a, v, [0.3, -0.2]).map_err(e)?;
                let (lo, hi) = b.bounding_box();
                let k = 120;
                for j in 0..=k {
                    for i in 0..=k {
                        // a box one width larger than the support on each side
                        let x = [
                            lo[0] - a + (hi[0] - lo[0] + 2.0 * a) * i as f64 / k as f64,
                            lo[1] - a + (hi[1] - lo[1] + 2.0 * a) * j as f64 / k as f64,
                        ];
                        let w = b.eval(x);
                        let speed = w[0].hypot(w[1]);
                        let inside = b.core_distance(x) >= a && b.core_distance(x) < 2.0 * a;
                        if inside {
                            speed_err = speed_err.max((speed - v).abs() / v);
                        } else if speed != 0.0 {
                            support_bad += 1;
                        }
                        let h = 1e-7 * a;
                        if !one_piece(&b, x, h) {
                            continue;
                        }
                        match b.region(x) {
                            Region::Straight { .. } => {
                                let dist = b.core_distance(x);
                                if dist > a + 10.0 * h && dist < 2.0 * a - 10.0 * h {
                                    straight_grad = straight_grad.max(fd_gradient(&b, x, h));
                                }
                            }
                            Region::Corner { r, .. } if r > a + 10.0 * h && r < 2.0 * a - 10.0 * h => {
                                let g = fd_gradient(&b, x, h);
                                corner_err = corner_err.max((g - v / r).abs() / (v / r));
                            }
                            _ => {}
                        }
                    }
                }
                // inner edge of a corner: |grad w| -> v/a
                let (hx, hy) = b.half_core();
                let c = [b.center[0] + hx, b.center[1] + hy];
                let r = a * (1.0 + 1e-4);
                let x = [c[0] + r * 0.6, c[1] + r * 0.8];
                let g = fd_gradient(&b, x, 1e-8 * a);
                corner_err = corner_err.max(((g - v / a).abs() / (v / a) - 1e-4).max(0.0));
                for s in 0..8 {
                    let d = a * (1.0 + 0.125 * s as f64 + 0.01);
                    let period = b.perimeter(d) / v;
                    period_ratio = period_ratio.max(period / b.period_bound());
                    let x0 = b.point_at(d, 0.37 * b.perimeter(d));
                    let back = b.flow(x0, period);
                    ok &= (back[0] - x0[0]).hypot(back[1] - x0[1]) < 1e-9 * (1.0 + b.l);
                }
                let x = b.point_at(1.5 * a, 0.0);
                budgets.push(block_loop_budget(&b, x, 0.1 * a));
            }
        }
    }
    let c_max = budgets.iter().cloned().fold(0.0, f64::max);
    let c_min = budgets.iter().cloned().fold(f64::INFINITY, f64::min);
    ok &= support_bad == 0
        && speed_err <= 1e-9
        && straight_grad == 0.0
        && corner_err <= 1e-6
        && period_ratio <= 1.0
        && c_max <= 1.1 * c_min;
    Ok((
        ok,
        format!(
            "support leaks {support_bad}, speed rel err {speed_err:.1e}, straight |grad| {straight_grad:.1e}, corner rel err {corner_err:.1e}, period/bound {period_ratio:.3}, budget C in [{c_min:.4}, {c_max:.4}]"
        ),
    ))
}

fn divergence_free() -> Outcome {
    let ls = build_loop_schedule(&LoopParams::default()).map_err(e)?;
    let cs = build_chess_schedule(&ChessParams::default()).map_err(e)?;
    let mut handles = Vec::new();
    for n in 0..=2 {
        let f = FieldHandle::Loop(assemble_loop_field(&ls, n).map_err(e)?);
        let t = ls.t_horizon[n];
        handles.push((format!("loop n={n}"), f, vec![0.13 * t, 0.5 * t, 0.81 * t]));
    }
    for n in 0..=2 {
        let f = assemble_chess_field(&cs, n).map_err(e)?;
        let times: Vec<f64> = f.pieces.iter().map(|p| 0.5 * (p.start + p.end)).collect();
        handles.push((format!("chess n={n}"), FieldHandle::Chess(f), times));
    }
    let (mut worst, mut ok) = (0.0f64, true);
    let mut refinement = true;
    for (_, h, times) in &handles {
        for &t in times {
            let sup = h.sup_speed(t);
            if sup == 0.0 {
                continue;
            }
            let d256 = divergence_defect(h, t, h.side() / 256.0) / sup;
            let d512 = divergence_defect(h, t, h.side() / 512.0) / sup;
            worst = worst.max(d256);
            ok &= d256 <= 1e-10;
            // the fluxes are exact, so the defect is rounding and can only halve down to that floor
            refinement &= d512 <= (0.5 * d256).max(1e-13);
        }
    }
    Ok((ok && refinement, format!("max defect/sup at N=256 {worst:.2e} (bound 1e-10), refinement {refinement}")))
}

fn loop_chains() -> Outcome {
    let s = build_loop_schedule(&LoopParams::default()).map_err(e)?;
    let eps = s.params.epsilon;
    let mut ok = true;
    let mut notes = Vec::new();
    for n in 0..=2 {
        let field = assemble_loop_field(&s, n).map_err(e)?;
        let comb = build_arrival_combinatorics(&s, n, MarginPolicy::Substitute).map_err(e)?;
        // the stated margin exceeds the half-width a_{n+1}/2 of the zone, so the substitute tolerance applies
        let stated = 2.0 * s.a[n + 1].powf(1.0 + eps);
        let samples = sample_glue_zone(&s, n, comb.policy, comb.margins().zone, 32);
        if sample_glue_zone(&s, n, comb.policy, stated, 2).is_empty() {
            notes.push(format!("n={n}: zone restricted by {stated:.3e} is empty"));
        }
        let back = verify_backward_property(&field, &comb, &samples).map_err(e)?;
        let fwd = verify_forward_property(&field, &comb, &samples).map_err(e)?;
        ok &= back.pass_fraction >= 1.0 && fwd.pass_fraction >= 1.0;
        notes.push(format!("n={n}: backward {:.3}, forward {:.3} of {}", back.pass_fraction, fwd.pass_fraction, samples.len()));
    }
    Ok((ok, notes.join("; ")))
}

fn chess_tiles() -> Outcome {
    let s = build_chess_schedule(&ChessParams::default()).map_err(e)?;
    let field = assemble_chess_field(&s, 3).map_err(e)?;
    let mut ok = true;
    let mut notes = Vec::new();
    for q in 0..=2 {
        let r = verify_chess_flow(&field, q).map_err(e)?;
        let bad = r.refine_mismatches + r.swap_mismatches + r.coarsen_mismatches + r.idle_mismatches;
        ok &= r.pass && bad == 0;
        notes.push(format!("q={q}: {bad}/{} tiles mismatched", r.tiles_checked));
    }
    Ok((ok, notes.join("; ")))
}

const PARTICLES: usize = 10_000;

fn stochastic_stability() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let k = 10;
    let per_start = PARTICLES / (k * k);
    let ls = build_loop_schedule(&LoopParams::default()).map_err(e)?;
    let eps = ls.params.epsilon;
    for n in 0..=1 {
        let field = assemble_loop_field(&ls, n).map_err(e)?;
        let comb = build_arrival_combinatorics(&ls, n, MarginPolicy::Substitute).map_err(e)?;
        let sb = loop_gap_starts(&comb, k, false);
        let sf = loop_gap_starts(&comb, k, true);
        let c_budget = loop_gronwall_constant(&field, &sb).map_err(e)?;
        let handle = FieldHandle::Loop(field);
        let kappa = peclet_kappa(&handle, PECLET);
        let tubes: Vec<f64> = (0..=n + 1).map(|q| ls.a[q].powf(1.0 + eps)).collect();
        let bound = 2.0 * ls.a[0].powf(1.0 + eps);
        let b = stability_gap(&handle, &sb, per_start, kappa, &tubes, bound, DtPolicy::default(), 11).map_err(e)?;
        let f = stability_gap(&handle, &sf, per_start, kappa, &tubes, bound, DtPolicy::default(), 12).map_err(e)?;
        let good = good_set_stats(&comb, kappa, c_budget, PARTICLES, 13);
        ok &= b.pass && f.pass && good.pass;
        notes.push(format!(
            "loop n={n}: gap {:.4}/{:.4} <= {bound:.4}, P(bad) {:.2e} <= {:.2e}, fwd {:.2e} <= {:.2e}",
            b.sup_mean_gap,
            f.sup_mean_gap,
            good.p_bad_backward,
            good.union_bound + 3.0 * good.sigma,
            good.p_bad_forward,
            good.union_bound_forward + 3.0 * good.sigma_forward
        ));
    }
    let cs = build_chess_schedule(&ChessParams::default()).map_err(e)?;
    let d = cs.params.delta;
    for n in [1, 3] {
        let handle = FieldHandle::Chess(assemble_chess_field(&cs, n).map_err(e)?);
        let kappa = peclet_kappa(&handle, PECLET);
        let tubes: Vec<f64> = (0..=n).map(|q| cs.a[q].powf(1.0 + d)).collect();
        let bound = cs.a[0].powf(1.0 + d);
        let sb = chess_gap_starts(&cs, n, k, false);
        let sf = chess_gap_starts(&cs, n, k, true);
        let b = stability_gap(&handle, &sb, per_start, kappa, &tubes, bound, DtPolicy::default(), 21).map_err(e)?;
        let f = stability_gap(&handle, &sf, per_start, kappa, &tubes, bound, DtPolicy::default(), 22).map_err(e)?;
        ok &= b.pass && f.pass;
        notes.push(format!("chess n={n}: gap {:.4}/{:.4} <= {bound:.4}", b.sup_mean_gap, f.sup_mean_gap));
    }
    Ok((ok, notes.join("; ")))
}

fn feynman_kac_duality() -> Outcome {
    let cfg = Config { construction: Construction::Chess, ..Config::default() };
    let s = build_chess_schedule(&cfg.chess_params()).map_err(e)?;
    let n_grid = 512;
    let boards = chess_boards(&cfg, &s, n_grid);
    let theta_in = make_chess_initial_datum(&boards, n_grid).map_err(e)?;
    let handle = FieldHandle::Chess(assemble_chess_field(&s, 1).map_err(e)?);
    let kappa = peclet_kappa(&handle, PECLET);
    let t = s.horizon;
    let grid_run = solve_advection_diffusion(&handle, &theta_in, 0.0, t, &SolverOptions::new(kappa)).map_err(e)?;
    let f = ScalarField::from_cell_average(Grid::new([0.0, 0.0], 1.0, n_grid), t, CELL_SUBSAMPLES, |x| boards.test_function(x));
    let grid_value = f.dot(&grid_run.final_field);
    // 316^2 starts, one path each: 99 856 particles
    let m = 316;
    let mc = feynman_kac_forward_pushforward(
        &handle,
        &|x| boards.initial(x),
        t,
        &|x| boards.test_function(x),
        m,
        1,
        kappa,
        DtPolicy::default(),
        31,
        None,
    )
    .map_err(e)?;
    let h = 1.0 / n_grid as f64;
    let diff = (mc.value - grid_value).abs();
    let tol = mc.ci95 + 5.0 * h;
    Ok((
        diff <= tol,
        format!("MC {:.5} ({} paths, CI {:.1e}) grid {grid_value:.5} |diff| {diff:.2e} <= {tol:.2e}", mc.value, mc.samples, mc.ci95),
    ))
}

fn check<'a>(m: &'a RunManifest, name: &str) -> Result<&'a roughflow::manifest::CheckOutcome, String> {
    m.checks.iter().find(|c| c.name == name).ok_or_else(|| format!("{}: no check '{name}'", m.scenario))
}

fn separation(chess: &RunManifest, lp: &RunManifest, loop_h: f64) -> Outcome {
    let det = check(chess, "separation at kappa=0")?;
    let matched = check(chess, "separation at matched Peclet")?;
    let mono = check(chess, "separation monotone in Peclet")?;
    let chess_ok = det.value >= 1.0 && matched.value >= 0.5 && mono.pass;
    let mut notes = vec![format!(
        "chess kappa=0 {:.3} >= 1, matched {:.3} >= 0.5, monotone {}",
        det.value, matched.value, mono.pass
    )];
    let mut loop_ok = true;
    for n in [0, 1] {
        let q_m = check(lp, &format!("quadrant mass n={n} matched"))?.value;
        let q_0 = check(lp, &format!("quadrant mass n={n} transport"))?.value;
        let floor = 1.0 - 5.0 * loop_h;
        loop_ok &= q_m >= 2.0 / 3.0 && q_0 >= floor;
        notes.push(format!("loop n={n} quadrant matched {q_m:.3} >= 0.667, kappa=0 {q_0:.3} >= {floor:.3}"));
    }
    Ok((chess_ok && loop_ok, notes.join("; ")))
}

fn energy(audit: &RunManifest, others: &[&RunManifest]) -> Outcome {
    let heat = check(audit, "heat decay")?;
    let mut ok = audit.passed() && heat.pass;
    let mut count = 0;
    for m in others.iter().copied().chain([audit]) {
        for c in m.checks.iter().filter(|c| c.name.starts_with("energy") || c.name.starts_with("mean") || c.name == "pipeline") {
            ok &= c.pass;
            count += 1;
        }
    }
    // direct check of conservation, bounds and defect sign on one chess run
    let cfg = Config::default();
    let s = build_chess_schedule(&cfg.chess_params()).map_err(e)?;
    let boards = chess_boards(&cfg, &s, 256);
    let theta_in = make_chess_initial_datum(&boards, 256).map_err(e)?;
    let handle = FieldHandle::Chess(assemble_chess_field(&s, 2).map_err(e)?);
    let run = solve_advection_diffusion(&handle, &theta_in, 0.0, s.horizon, &SolverOptions::new(peclet_kappa(&handle, PECLET)))
        .map_err(e)?;
    let r = energy_inequality_check(&run.ledger, &theta_in);
    let (lo, hi) = (theta_in.min(), theta_in.max());
    let bounded = r.range.0 >= lo - 1e-6 && r.range.1 <= hi + 1e-6;
    ok &= r.pass && r.mean_drift <= 1e-10 && bounded && r.defect >= -r.tolerance;
    Ok((
        ok,
        format!(
            "heat rel err {:.1e} <= 0.02, {count} energy/mean checks, chess n=2 drift {:.1e} defect {:.2e} range [{:.4}, {:.4}]",
            heat.value, r.mean_drift, r.defect, r.range.0, r.range.1
        ),
    ))
}

fn replay_all(manifests: &[(&RunManifest, &Path)]) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for &(m, dir) in manifests {
        for threads in [1, 4, 8] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(e)?;
            let out = dir.join(format!("replay_{threads}"));
            let (_, diff) = pool.install(|| cli::replay(m, &out)).map_err(e)?;
            ok &= diff.is_empty();
            if !diff.is_empty() {
                notes.push(format!("{} @{threads}: {}", m.scenario, diff.join(",")));
            }
        }
        notes.push(format!("{} ({} outputs)", m.scenario, m.outputs.len()));
    }
    Ok((ok, notes.join("; ")))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut lines = Vec::new();
    lines.push(run(1, "hypothesis gate", Some(1.0), hypothesis_gate));
    lines.push(run(2, "building block suite", Some(10.0), building_blocks));
    lines.push(run(3, "divergence-free", Some(30.0), divergence_free));
    lines.push(run(4, "loop deterministic non-uniqueness", Some(300.0), loop_chains));
    lines.push(run(5, "chess tile permutations", Some(60.0), chess_tiles));
    lines.push(run(6, "stochastic stability at matched Peclet", Some(600.0), stochastic_stability));
    lines.push(run(7, "Feynman-Kac vs grid", Some(900.0), feynman_kac_duality));

    let scenario = |name: &str, cfg: Config| -> Result<(RunManifest, std::path::PathBuf), String> {
        let dir = root.join(name);
        cli::run_scenario(name, &cfg, &dir).map(|m| (m, dir)).map_err(e)
    };
    let loop_h = {
        let s = build_loop_schedule(&LoopParams::default()).expect("loop schedule");
        s.a[2] / 4.0
    };
    let mut runs = Vec::new();
    let clock = Instant::now();
    let chess = scenario("chess-nonuniqueness", Config { construction: Construction::Chess, ..Config::default() });
    let lp = scenario("loop-nonuniqueness", Config::default());
    let setup = clock.elapsed().as_secs_f64();
    lines.push(run(8, "separation functionals", Some(1200.0 - setup), || match (&chess, &lp) {
        (Ok(c), Ok(l)) => separation(&c.0, &l.0, loop_h),
        (Err(x), _) | (_, Err(x)) => Err(x.clone()),
    }));
    let audit = scenario("energy-audit", Config::default());
    lines.push(run(9, "energy audit", Some(120.0), || {
        let a = audit.as_ref().map_err(|x| x.clone())?;
        let others: Vec<&RunManifest> = [&chess, &lp].iter().filter_map(|r| r.as_ref().ok().map(|(m, _)| m)).collect();
        energy(&a.0, &others)
    }));
    for r in [chess, lp, audit] {
        if let Ok(x) = r {
            runs.push(x);
        }
    }
    for (name, cfg) in [
        ("stability-sweep", Config::default()),
        ("field-gallery", Config { construction: Construction::Chess, ..Config::default() }),
    ] {
        if let Ok(x) = scenario(name, cfg) {
            runs.push(x);
        }
    }
    lines.push(run(10, "reproducibility at 1, 4, 8 threads", None, || {
        if runs.len() < 5 {
            return Err(format!("only {} of 5 scenario runs completed", runs.len()));
        }
        let refs: Vec<(&RunManifest, &Path)> = runs.iter().map(|(m, d)| (m, d.as_path())).collect();
        replay_all(&refs)
    }));

    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
    if passed < lines.len() && std::env::var("ROUGHFLOW_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

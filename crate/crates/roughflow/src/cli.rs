//! Scenario pipelines, reports and replay.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{Config, Construction, Margins, MollifierWidth};
use crate::fields::{assemble_chess_field, assemble_loop_field, divergence_defect, lp_norm_sample, write_snapshot_csv, FieldHandle};
use crate::flow::{
    beta_for, build_arrival_combinatorics, flow_trajectory, gronwall_budget, sample_glue_zone, verify_backward_property,
    verify_forward_property, ArrivalCombinatorics, MarginPolicy,
};
use crate::manifest::{file_digest, json_digest, CheckOutcome, RunManifest};
use crate::params::{
    build_chess_schedule, build_loop_schedule, chess_lp_budget, loop_lp_budget, validate_chess_hypotheses,
    validate_loop_hypotheses, ChessSchedule, LoopSchedule, ValidationReport,
};
use crate::pde::{
    chessboard_distance, chunk_decomposition, chunk_zone, energy_inequality_check, fourier_mode, make_chess_initial_datum,
    make_loop_initial_datum, separation_functional, CELL_SUBSAMPLES, solve_advection_diffusion, Checkerboards, Grid, ScalarField,
    SolverOptions,
};
use crate::stochastic::{
    brownian_sup_excursions, empirical_doob, good_set_stats, peclet_kappa, stability_gap, DtPolicy, GapReport, GapStart,
};
use crate::{Error, Result};

pub const SCENARIOS: [&str; 5] = ["loop-nonuniqueness", "chess-nonuniqueness", "stability-sweep", "energy-audit", "field-gallery"];

/// Target Peclet number of the matched preset.
pub const PECLET: f64 = 1e3;

/// Output directory bookkeeping of one run.
struct Run<'a> {
    out: &'a Path,
    outputs: BTreeMap<String, String>,
    checks: Vec<CheckOutcome>,
}

impl<'a> Run<'a> {
    fn file(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes)?;
        self.outputs.insert(name.to_string(), file_digest(&path)?);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.file(name, serde_json::to_string_pretty(value)?)
    }

    fn snapshot(&mut self, name: &str, field: &ScalarField, construction: &str, hash: &str) -> Result<()> {
        let path = self.out.join(name);
        field.write_snapshot(&path, construction, hash)?;
        self.outputs.insert(name.to_string(), file_digest(&path)?);
        let side = format!("{name}.json");
        self.outputs.insert(side.clone(), file_digest(&self.out.join(side))?);
        Ok(())
    }

    fn check(&mut self, name: &str, value: f64, bound: f64, enforced: bool, pass: bool, note: impl Into<String>) {
        self.checks.push(CheckOutcome { name: name.to_string(), value, bound, enforced, pass, note: note.into() });
    }
}

pub fn loop_schedule(cfg: &Config) -> Result<LoopSchedule> {
    let s = build_loop_schedule(&cfg.loop_params())?;
    Ok(if cfg.rescale_time { s.rescaled_below_one() } else { s })
}

pub fn chess_schedule(cfg: &Config) -> Result<ChessSchedule> {
    build_chess_schedule(&cfg.chess_params())
}

pub fn validate(cfg: &Config) -> Result<ValidationReport> {
    match cfg.construction {
        Construction::Loop => validate_loop_hypotheses(&cfg.loop_params()),
        Construction::Chess => validate_chess_hypotheses(&cfg.chess_params()),
    }
}

/// Pretty JSON of the configured schedule.
pub fn dump_schedule(cfg: &Config) -> Result<String> {
    Ok(match cfg.construction {
        Construction::Loop => serde_json::to_string_pretty(&loop_schedule(cfg)?)?,
        Construction::Chess => serde_json::to_string_pretty(&chess_schedule(cfg)?)?,
    })
}

fn schedule_hash(cfg: &Config) -> Result<String> {
    match cfg.construction {
        Construction::Loop => json_digest(&loop_schedule(cfg)?),
        Construction::Chess => json_digest(&chess_schedule(cfg)?),
    }
}

fn policy(cfg: &Config) -> MarginPolicy {
    match cfg.margins {
        Margins::Paper => MarginPolicy::Paper,
        Margins::Substitute => MarginPolicy::Substitute,
    }
}

/// Runs `name` into `out` and writes `report.json` and `manifest.json` there.
pub fn run_scenario(name: &str, cfg: &Config, out: &Path) -> Result<RunManifest> {
    if !SCENARIOS.contains(&name) {
        return Err(Error::Config(format!("unknown scenario '{name}' (expected one of {})", SCENARIOS.join(", "))));
    }
    std::fs::create_dir_all(out)?;
    let clock = Instant::now();
    let hash = schedule_hash(cfg)?;
    let mut run = Run { out, outputs: BTreeMap::new(), checks: Vec::new() };
    let result = match name {
        "field-gallery" => field_gallery(cfg, &mut run, &hash),
        "loop-nonuniqueness" => loop_nonuniqueness(cfg, &mut run, &hash),
        "chess-nonuniqueness" => chess_nonuniqueness(cfg, &mut run, &hash),
        "stability-sweep" => stability_sweep(cfg, &mut run),
        _ => energy_audit(cfg, &mut run, &hash),
    };
    match result {
        Err(e @ (Error::Config(_) | Error::InvalidParam { .. })) => return Err(e),
        Err(e) => run.check("pipeline", 0.0, 0.0, true, false, e.to_string()),
        Ok(()) => {}
    }
    let mut versions = BTreeMap::new();
    versions.insert("roughflow".to_string(), env!("CARGO_PKG_VERSION").to_string());
    let mut manifest = RunManifest {
        scenario: name.to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        schedule_hash: hash,
        versions,
        checks: run.checks,
        wall_clock_s: 0.0,
        threads: rayon::current_num_threads(),
        outputs: run.outputs,
    };
    emit_report(&mut manifest, out)?;
    manifest.wall_clock_s = clock.elapsed().as_secs_f64();
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// Writes `report.json` (checks only, so it is reproducible) and records its digest.
pub fn emit_report(manifest: &mut RunManifest, out: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Report<'a> {
        scenario: &'a str,
        seed: u64,
        schedule_hash: &'a str,
        passed: bool,
        checks: &'a [CheckOutcome],
    }
    let report = Report {
        scenario: &manifest.scenario,
        seed: manifest.seed,
        schedule_hash: &manifest.schedule_hash,
        passed: manifest.passed(),
        checks: &manifest.checks,
    };
    std::fs::create_dir_all(out)?;
    let path = out.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    manifest.outputs.insert("report.json".to_string(), file_digest(&path)?);
    Ok(())
}

/// Reruns a manifest into `out`; returns the new manifest and the mismatching outputs.
pub fn replay(manifest: &RunManifest, out: &Path) -> Result<(RunManifest, Vec<String>)> {
    let again = run_scenario(&manifest.scenario, &manifest.config, out)?;
    let diff = crate::manifest::digest_mismatches(manifest, &again);
    Ok((again, diff))
}

pub fn default_replay_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join("replay")
}

fn field_gallery(cfg: &Config, run: &mut Run, _hash: &str) -> Result<()> {
    let mut norms = String::from("n,t,sup_speed,lp_norm,l1_norm,divergence_defect\n");
    let grid_n = cfg.grid_n.unwrap_or(128);
    let p = match cfg.construction {
        Construction::Loop => cfg.loop_params().p,
        Construction::Chess => cfg.chess_params().p,
    };
    let handles: Vec<(usize, FieldHandle, Vec<f64>)> = match cfg.construction {
        Construction::Loop => {
            let s = loop_schedule(cfg)?;
            let budget = loop_lp_budget(&s, p)?;
            run.json("lp_budget.json", &budget)?;
            run.check("lp budget finite", budget.exponent, 0.0, false, budget.finite, "decay exponent of the level series");
            (0..=s.n_max())
                .map(|n| {
                    let f = assemble_loop_field(&s, n)?;
                    let t = s.t_horizon[n];
                    Ok((n, FieldHandle::Loop(f), vec![0.25 * t, 0.5 * t, 0.75 * t]))
                })
                .collect::<Result<_>>()?
        }
        Construction::Chess => {
            let s = chess_schedule(cfg)?;
            let budget = chess_lp_budget(&s, p)?;
            run.json("lp_budget.json", &budget)?;
            run.check("lp budget finite", budget.exponent, 0.0, false, budget.finite, "decay exponent of the level series");
            (0..=s.n_max())
                .map(|n| {
                    let f = assemble_chess_field(&s, n)?;
                    let times: Vec<f64> = f
                        .pieces
                        .iter()
                        .filter(|p| p.phase != crate::fields::ChessPhase::Zero)
                        .map(|p| 0.5 * (p.start + p.end))
                        .collect();
                    let times = if times.is_empty() { vec![0.5 * f.horizon] } else { times };
                    Ok((n, FieldHandle::Chess(f), times))
                })
                .collect::<Result<_>>()?
        }
    };
    for (n, h, times) in &handles {
        for (k, &t) in times.iter().enumerate() {
            let mut buf = Vec::new();
            write_snapshot_csv(h, t, grid_n, &mut buf)?;
            run.file(&format!("field_n{n}_{k}.csv"), buf)?;
            let sup = h.sup_speed(t);
            let defect = divergence_defect(h, t, h.side() / 256.0);
            let _ = writeln!(
                norms,
                "{n},{t:.17e},{sup:.17e},{:.17e},{:.17e},{defect:.17e}",
                lp_norm_sample(h, t, p, 256),
                lp_norm_sample(h, t, 1.0, 256)
            );
            let bound = 1e-10 * sup.max(f64::MIN_POSITIVE);
            run.check(&format!("divergence n={n} t={t:.6e}"), defect, bound, true, defect <= bound || sup == 0.0, "max cell flux defect at N = 256");
        }
        run.file(&format!("assembly_n{n}.json"), h.describe()?)?;
    }
    run.file("norms.csv", norms)
}

fn loop_nonuniqueness(cfg: &Config, run: &mut Run, hash: &str) -> Result<()> {
    let s = loop_schedule(cfg)?;
    let pair = [2 * cfg.level, 2 * cfg.level + 1];
    if pair[1] > s.n_max() {
        return Err(Error::Config(format!("level {} needs n_max >= {}", cfg.level, pair[1])));
    }
    let eps = s.params.epsilon;
    // a shared grid resolving the finer member of the pair
    let h = s.a[pair[1] + 1] / 4.0;
    let n_grid = cfg.grid_n.unwrap_or((s.torus_side / h).round() as usize);
    let theta_in = make_loop_initial_datum(&s, s.torus_side, n_grid)?;
    let mass_in = theta_in.integral();
    run.snapshot("theta_in.bin", &theta_in, "loop", hash)?;
    let mut series = String::from("n,kappa,t,quadrant_fraction\n");
    let mut summary = Vec::new();
    let enforced = cfg.enforced();
    for &n in &pair {
        let field = assemble_loop_field(&s, n)?;
        let paper = build_arrival_combinatorics(&s, n, MarginPolicy::Paper);
        run.check(
            &format!("paper arrival set n={n}"),
            paper.as_ref().map(|c| c.count as f64).unwrap_or(0.0),
            1.0,
            false,
            paper.is_ok(),
            paper.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
        );
        let comb = build_arrival_combinatorics(&s, n, policy(cfg))?;
        let samples = sample_glue_zone(&s, n, comb.policy, comb.margins().zone, 6);
        let back = verify_backward_property(&field, &comb, &samples)?;
        let fwd = verify_forward_property(&field, &comb, &samples)?;
        run.check(&format!("backward chain n={n}"), back.pass_fraction, 1.0, false, back.pass_fraction >= 1.0, "fraction of glue-zone starts reaching R_0");
        run.check(&format!("forward chain n={n}"), fwd.pass_fraction, 1.0, false, fwd.pass_fraction >= 1.0, "fraction of glue-zone starts reaching the quadrant");
        run.json(&format!("chains_n{n}.json"), &(back, fwd))?;
        let handle = FieldHandle::Loop(field);
        let kappa = cfg.kappa_or(peclet_kappa(&handle, PECLET));
        let arrivals = comb.arrival_times(1 << 16).ok_or_else(|| Error::Schedule(format!("{} arrival times", comb.count)))?;
        let zone = chunk_zone(&comb);
        let margin = match comb.policy {
            MarginPolicy::Paper => 2.0 * s.a[n].powf(1.0 + eps),
            MarginPolicy::Substitute => 0.0,
        };
        let t_end = s.horizon;
        let t_n = s.t_horizon[n];
        let mut fractions = Vec::new();
        for (tag, k) in [("matched", kappa), ("transport", 0.0)] {
            let mut opts = SolverOptions::new(k);
            opts.checkpoints = (0..=8).map(|i| t_n + (t_end - t_n) * i as f64 / 8.0).collect();
            let chunks = chunk_decomposition(&handle, &theta_in, &arrivals, &zone, margin, t_end, n, &opts)?;
            let frac = crate::pde::quadrant_mass(&chunks.chunks, n, mass_in);
            for (t, q) in &chunks.quadrant_series {
                let _ = writeln!(series, "{n},{k:.17e},{t:.17e},{q:.17e}");
            }
            run.check(&format!("chunk identity n={n} {tag}"), chunks.identity_error, 1e-10, true, chunks.identity_error <= 1e-10, "");
            run.check(&format!("chunk positivity n={n} {tag}"), chunks.min_chunk, -1e-9, true, chunks.min_chunk >= -1e-9, "");
            run.check(
                &format!("chunk subadditivity n={n} {tag}"),
                chunks.subadditivity_excess,
                1e-9,
                true,
                chunks.subadditivity_excess <= 1e-9,
                "",
            );
            run.check(&format!("chunk mass n={n} {tag}"), chunks.chunk_mass_fraction, 0.8, false, chunks.chunk_mass_fraction >= 0.8, "target 4/5");
            run.check(&format!("quadrant mass n={n} {tag}"), frac, 2.0 / 3.0, false, frac >= 2.0 / 3.0, "target 2/3");
            let energy = energy_inequality_check(&chunks.ledger, &theta_in);
            run.check(&format!("energy n={n} {tag}"), energy.worst_excess, energy.tolerance, true, energy.pass, "");
            let mut ledger = Vec::new();
            chunks.ledger.write_csv(&mut ledger)?;
            run.file(&format!("ledger_n{n}_{tag}.csv"), ledger)?;
            summary.push((n, k, frac, chunks.chunk_mass_fraction, chunks.arrivals.len()));
            fractions.push(frac);
        }
        run.check(
            &format!("quadrant mass grows with Peclet n={n}"),
            fractions[1] - fractions[0],
            0.0,
            enforced,
            fractions[1] >= fractions[0] - 1e-9,
            "transport minus matched",
        );
    }
    run.file("quadrant_mass.csv", series)?;
    run.json("separation.json", &summary)
}

/// Boards and mollifier per config; the grid option substitutes a quarter cell.
pub fn chess_boards(cfg: &Config, s: &ChessSchedule, n_grid: usize) -> Checkerboards {
    match cfg.mollifier {
        MollifierWidth::Paper => Checkerboards::new(s),
        MollifierWidth::Grid => Checkerboards::with_width(s, 0.25 / n_grid as f64),
    }
}

/// Final fields of the chess pair `(2l, 2l+1)` at one diffusivity.
fn chess_pair(handles: &[FieldHandle; 2], theta_in: &ScalarField, kappa: f64, t_end: f64) -> Result<Vec<crate::pde::SolveRun>> {
    handles
        .iter()
        .map(|h| {
            let mut opts = SolverOptions::new(kappa);
            opts.local_check = true;
            solve_advection_diffusion(h, theta_in, 0.0, t_end, &opts)
        })
        .collect()
}

fn chess_nonuniqueness(cfg: &Config, run: &mut Run, hash: &str) -> Result<()> {
    let s = chess_schedule(cfg)?;
    let pair = [2 * cfg.level, 2 * cfg.level + 1];
    if pair[1] > s.n_max() {
        return Err(Error::Config(format!("level {} needs n_max >= {}", cfg.level, pair[1])));
    }
    let n_grid = cfg.grid_n.unwrap_or(512);
    let grid = Grid::new([0.0, 0.0], 1.0, n_grid);
    if !grid.resolves(s.a[pair[1] + 1]) {
        return Err(Error::Config(format!("N = {n_grid} does not resolve the tile a_{} = {}", pair[1] + 1, s.a[pair[1] + 1])));
    }
    let boards = chess_boards(cfg, &s, n_grid);
    let theta_in = make_chess_initial_datum(&boards, n_grid)?;
    let f = ScalarField::from_cell_average(grid, 0.0, CELL_SUBSAMPLES, |x| boards.test_function(x));
    run.snapshot("theta_in.bin", &theta_in, "chess", hash)?;
    run.snapshot("test_function.bin", &f, "chess", hash)?;
    let handles = [
        FieldHandle::Chess(assemble_chess_field(&s, pair[0])?),
        FieldHandle::Chess(assemble_chess_field(&s, pair[1])?),
    ];
    let t_end = s.horizon;
    let kappa = cfg.kappa_or(peclet_kappa(&handles[1], PECLET));
    let rho = chess_pair(&handles, &theta_in, 0.0, t_end)?;
    let det = separation_functional(&f, &rho[0].final_field, &rho[1].final_field, None);
    let floor = 2.0 * boards.shrunk_area() - 100.0 * s.a[0].powf(0.5 * s.params.delta);
    let width_note = format!("mollifier width {:e} (paper {:e})", boards.mollifier.width, boards.paper_width);
    run.check("separation at kappa=0", det.value, 1.0, true, det.value >= 1.0, width_note.clone());
    run.check("deterministic floor 2L^2 - 100 a_0^(delta/2)", floor, det.value, false, det.value >= floor, "");
    for (tag, r) in ["even", "odd"].iter().zip(&rho) {
        let e = energy_inequality_check(&r.ledger, &theta_in);
        run.check(&format!("energy kappa=0 {tag}"), e.worst_excess, e.tolerance, true, e.pass, "");
        let dist = chessboard_distance(&r.final_field, s.a[0])?;
        run.check(&format!("board distance at T kappa=0 {tag}"), dist, 0.0, false, true, "L1 distance to the nearest a_0 board");
    }
    run.snapshot("rho_even.bin", &rho[0].final_field, "chess", hash)?;
    run.snapshot("rho_odd.bin", &rho[1].final_field, "chess", hash)?;
    let mut table = String::from("kappa,peclet_factor,value,deterministic,error_even,error_odd,lower_bound\n");
    let mut values = Vec::new();
    for factor in [4.0, 1.0, 0.25] {
        let k = kappa * factor;
        let theta = chess_pair(&handles, &theta_in, k, t_end)?;
        let rep = separation_functional(&f, &theta[0].final_field, &theta[1].final_field, Some((&rho[0].final_field, &rho[1].final_field)));
        let _ = writeln!(
            table,
            "{k:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            1.0 / factor,
            rep.value,
            rep.deterministic.unwrap(),
            rep.error_even.unwrap(),
            rep.error_odd.unwrap(),
            rep.lower_bound.unwrap()
        );
        for (tag, r) in ["even", "odd"].iter().zip(&theta) {
            let e = energy_inequality_check(&r.ledger, &theta_in);
            run.check(&format!("energy kappa={k:.3e} {tag}"), e.worst_excess, e.tolerance, true, e.pass, "");
        }
        if factor == 1.0 {
            run.check("separation at matched Peclet", rep.value, 0.5, cfg.enforced(), rep.value >= 0.5, width_note.clone());
            run.snapshot("theta_even.bin", &theta[0].final_field, "chess", hash)?;
            run.snapshot("theta_odd.bin", &theta[1].final_field, "chess", hash)?;
            let mut ledger = Vec::new();
            theta[1].ledger.write_csv(&mut ledger)?;
            run.file("ledger_odd.csv", ledger)?;
        }
        values.push(rep.value);
    }
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    run.check("separation monotone in Peclet", values[2] - values[0], 0.0, true, monotone, "three-point sweep kappa x {4, 1, 1/4}");
    run.file("separation.csv", table)
}

/// Glue-zone starts of the loop at level `n` with their anchors and stages.
pub fn loop_gap_starts(comb: &ArrivalCombinatorics, k: usize, forward: bool) -> Vec<GapStart> {
    let s = &comb.schedule;
    let n = comb.n;
    let eps = s.params.epsilon;
    let margin = match comb.policy {
        MarginPolicy::Paper => s.a[n + 1].powf(1.0 + eps),
        MarginPolicy::Substitute => crate::flow::SUBSTITUTE_TOL,
    };
    sample_glue_zone(s, n, comb.policy, margin, k)
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let beta = beta_for(comb, i);
            let anchor = comb.t_arrival(&beta);
            if forward {
                let mut stages = vec![(n + 1, anchor, comb.s_bar(n as isize, &beta))];
                stages.extend((0..=n).map(|q| (q, comb.s_bar(q as isize, &beta), comb.s_bar(q as isize - 1, &beta))));
                GapStart { x, anchor, end: s.t_horizon[n], stages }
            } else {
                let mut stages = vec![(n + 1, comb.t_bar(n as isize, &beta), anchor)];
                stages.extend((0..=n).map(|q| (q, comb.t_bar(q as isize - 1, &beta), comb.t_bar(q as isize, &beta))));
                GapStart { x, anchor, end: 0.0, stages }
            }
        })
        .collect()
}

/// Uniform chess starts over `[0, T]` with the tubes of every level.
pub fn chess_gap_starts(s: &ChessSchedule, n: usize, k: usize, forward: bool) -> Vec<GapStart> {
    let t_end = s.horizon;
    let mut stages = Vec::new();
    for q in 0..n {
        stages.push((q, s.t_steps[q], s.t_steps[q + 1]));
        stages.push((q, t_end - s.t_steps[q + 1], t_end - s.t_steps[q]));
    }
    (0..k * k)
        .map(|i| {
            let x = [((i % k) as f64 + 0.5) / k as f64, ((i / k) as f64 + 0.5) / k as f64];
            let (anchor, end) = if forward { (0.0, t_end) } else { (t_end, 0.0) };
            GapStart { x, anchor, end, stages: stages.clone() }
        })
        .collect()
}

/// `max` over sample starts and levels of the Gronwall budget along the backward chain.
pub fn loop_gronwall_constant(field: &crate::fields::LoopField, starts: &[GapStart]) -> Result<f64> {
    let s = &field.schedule;
    let eps = s.params.epsilon;
    let handle = FieldHandle::Loop(field.clone());
    let mut c: f64 = 0.0;
    for g in starts.iter().take(4) {
        let traj = flow_trajectory(&handle, g.anchor, g.end, g.x)?;
        for q in 0..field.n {
            c = c.max(gronwall_budget(field, &traj, q, s.a[q].powf(1.0 + eps)));
        }
    }
    Ok(c)
}

fn gap_rows(table: &mut String, direction: &str, kappa: f64, r: &GapReport) {
    let ex: Vec<String> = r.exceedance.iter().map(|e| format!("{e:.6e}")).collect();
    let _ = writeln!(table, "{direction},{kappa:.17e},{:.17e},{:.17e},{},{}", r.sup_mean_gap, r.bound, r.particles, ex.join(";"));
}

fn stability_sweep(cfg: &Config, run: &mut Run) -> Result<()> {
    let ensemble = cfg.ensemble_size.unwrap_or(1000);
    let k = 10usize;
    let per_start = ensemble.div_ceil(k * k).max(1);
    let mut table = String::from("direction,kappa,sup_mean_gap,bound,particles,exceedance_by_level\n");
    let (handle, starts_b, starts_f, tubes, bound) = match cfg.construction {
        Construction::Loop => {
            let s = loop_schedule(cfg)?;
            let n = cfg.level.min(s.n_max());
            let eps = s.params.epsilon;
            let field = assemble_loop_field(&s, n)?;
            let comb = build_arrival_combinatorics(&s, n, policy(cfg))?;
            let sb = loop_gap_starts(&comb, k, false);
            let sf = loop_gap_starts(&comb, k, true);
            let c_budget = loop_gronwall_constant(&field, &sb)?;
            let handle = FieldHandle::Loop(field);
            let kappa = cfg.kappa_or(peclet_kappa(&handle, PECLET));
            let good = good_set_stats(&comb, kappa, c_budget, ensemble, cfg.seed);
            run.check("good set vs Doob union bound", good.p_bad_backward, good.union_bound + 3.0 * good.sigma, cfg.enforced(), good.pass, "backward stages");
            run.check("good set vs Doob union bound forward", good.p_bad_forward, good.union_bound_forward + 3.0 * good.sigma_forward, cfg.enforced(), good.pass, "forward stages");
            run.json("good_set.json", &good)?;
            let tubes: Vec<f64> = (0..=n + 1).map(|q| s.a[q].powf(1.0 + eps)).collect();
            (handle, sb, sf, tubes, 2.0 * s.a[0].powf(1.0 + eps))
        }
        Construction::Chess => {
            let s = chess_schedule(cfg)?;
            let n = (2 * cfg.level + 1).min(s.n_max());
            let d = s.params.delta;
            let handle = FieldHandle::Chess(assemble_chess_field(&s, n)?);
            let tubes: Vec<f64> = (0..=n).map(|q| s.a[q].powf(1.0 + d)).collect();
            (handle, chess_gap_starts(&s, n, k, false), chess_gap_starts(&s, n, k, true), tubes, s.a[0].powf(1.0 + d))
        }
    };
    let kappa = cfg.kappa_or(peclet_kappa(&handle, PECLET));
    let mut gaps = Vec::new();
    for factor in [1.0 / 16.0, 0.25, 1.0, 4.0, 16.0] {
        let kf = kappa * factor;
        let b = stability_gap(&handle, &starts_b, per_start, kf, &tubes, bound, DtPolicy::default(), cfg.seed)?;
        let f = stability_gap(&handle, &starts_f, per_start, kf, &tubes, bound, DtPolicy::default(), cfg.seed ^ 0x00f0)?;
        gap_rows(&mut table, "backward", kf, &b);
        gap_rows(&mut table, "forward", kf, &f);
        if factor == 1.0 {
            run.check("backward gap at matched Peclet", b.sup_mean_gap, bound, cfg.enforced(), b.pass, "");
            run.check("forward gap at matched Peclet", f.sup_mean_gap, bound, cfg.enforced(), f.pass, "");
            run.json("gap_matched.json", &(b.clone(), f.clone()))?;
        }
        gaps.push(b.sup_mean_gap.max(f.sup_mean_gap));
    }
    let monotone = gaps.windows(2).all(|w| w[1] >= 0.98 * w[0]);
    run.check("gap grows with kappa", gaps[4] / gaps[0].max(f64::MIN_POSITIVE), 1.0, cfg.enforced(), monotone, "five-point sweep, 2% slack");
    let crossing = gaps.iter().rposition(|&g| g <= bound);
    run.check("largest kappa factor within bound", crossing.map(|i| [1.0 / 16.0, 0.25, 1.0, 4.0, 16.0][i]).unwrap_or(0.0), 0.0, false, crossing.is_some(), "");
    let exc = brownian_sup_excursions(cfg.seed ^ 0xd00b, ensemble.max(1000), 0.01, 256);
    let doob = empirical_doob(&exc, 0.01, 0.3);
    run.check("Doob inequality", doob.fraction, doob.bound + 3.0 * doob.sigma, true, doob.pass, "");
    run.json("doob.json", &doob)?;
    run.file("gap_vs_kappa.csv", table)
}

fn energy_audit(cfg: &Config, run: &mut Run, hash: &str) -> Result<()> {
    // heat benchmark
    let zero = FieldHandle::Zero { side: 1.0, horizon: 1.0 };
    let grid = Grid::for_handle(&zero, 256);
    let mode = fourier_mode(grid, [1, 2]);
    let (kh, th) = (1e-3, 0.5);
    let heat = solve_advection_diffusion(&zero, &mode, 0.0, th, &SolverOptions::new(kh))?;
    let ratio = heat.final_field.dot(&mode) / mode.dot(&mode);
    let exact = (-4.0 * std::f64::consts::PI.powi(2) * 5.0 * kh * th).exp();
    let rel = (ratio - exact).abs() / exact;
    run.check("heat decay", rel, 0.02, true, rel <= 0.02, "mode (1, 2), N = 256");
    let e = energy_inequality_check(&heat.ledger, &mode);
    run.check("energy heat", e.worst_excess, e.tolerance, true, e.pass, "");
    let gap = (e.defect / e.initial_energy).abs();
    run.check("heat energy equality", gap, 0.01, true, gap <= 0.01, "relative defect");

    // chess pair member n = 1 at the matched diffusivity
    let cc = Config { construction: Construction::Chess, ..cfg.clone() };
    let s = chess_schedule(&cc)?;
    let n_grid = cfg.grid_n.unwrap_or(512);
    let boards = chess_boards(cfg, &s, n_grid);
    let theta_in = make_chess_initial_datum(&boards, n_grid)?;
    let chess = FieldHandle::Chess(assemble_chess_field(&s, 1.min(s.n_max()))?);
    let kc = cfg.kappa_or(peclet_kappa(&chess, PECLET));
    let mut opts = SolverOptions::new(kc);
    opts.local_check = true;
    let r = solve_advection_diffusion(&chess, &theta_in, 0.0, s.horizon, &opts)?;
    let e = energy_inequality_check(&r.ledger, &theta_in);
    run.check("energy chess n=1", e.worst_excess, e.tolerance, true, e.pass, "");
    run.check("mean chess n=1", e.mean_drift, 1e-10, true, e.mean_drift <= 1e-10, "");
    run.check("local defect chess n=1", e.local_max.unwrap_or(0.0), 0.0, false, true, "grid max of the integrated cell balance");
    let mut ledger = Vec::new();
    r.ledger.write_csv(&mut ledger)?;
    run.file("ledger_chess.csv", ledger)?;
    run.snapshot("chess_final.bin", &r.final_field, "chess", hash)?;

    // loop n = 0 at matched diffusivity and by pure transport
    let lc = Config { construction: Construction::Loop, ..cfg.clone() };
    let ls = loop_schedule(&lc)?;
    let lf = FieldHandle::Loop(assemble_loop_field(&ls, 0)?);
    let n_loop = (ls.torus_side / (ls.a[1] / 4.0)).round() as usize;
    let theta_loop = make_loop_initial_datum(&ls, ls.torus_side, n_loop)?;
    let kl = cfg.kappa_or(peclet_kappa(&lf, PECLET));
    for (tag, k) in [("matched", kl), ("transport", 0.0)] {
        let mut opts = SolverOptions::new(k);
        opts.local_check = true;
        let r = solve_advection_diffusion(&lf, &theta_loop, 0.0, ls.t_horizon[0], &opts)?;
        let e = energy_inequality_check(&r.ledger, &theta_loop);
        run.check(&format!("energy loop {tag}"), e.worst_excess, e.tolerance, true, e.pass, "");
        run.check(&format!("mean loop {tag}"), e.mean_drift, 1e-10, true, e.mean_drift <= 1e-10, "");
        if k == 0.0 {
            run.check("upwind dissipation", e.defect, 0.0, true, e.defect > 0.0, "strict energy loss without diffusion");
        }
        let mut ledger = Vec::new();
        r.ledger.write_csv(&mut ledger)?;
        run.file(&format!("ledger_loop_{tag}.csv"), ledger)?;
    }
    Ok(())
}

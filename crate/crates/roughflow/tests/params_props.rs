use proptest::prelude::*;

use roughflow::params::*;

/// Admissible loop parameters: each drawn inside the window left by the previous ones.
fn admissible_loop() -> impl Strategy<Value = LoopParams> {
    (0.04f64..0.1, 0.0f64..1.0, 0.05f64..0.95, 0.05f64..0.95, 0.02f64..0.12, 0usize..=2).prop_map(
        |(delta, up, ua, ue, a0, n_max)| {
            let p_max = (2.0 + delta) * (1.0 - delta) / (1.0 + delta);
            let p = 1.0 + up * (p_max - 1.0) * 0.98;
            let lo = 1.0 / (1.0 - delta);
            let hi = (2.0 + delta) / (p * (1.0 + delta));
            let alpha = lo + ua * (hi - lo);
            let eps = ue * (delta * (alpha - 1.0) / (1.0 + delta)).min(delta * delta / 8.0);
            LoopParams { p, delta, alpha, epsilon: eps, a0, n_max, kappa: 1.0 }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loop_schedule_invariants(params in admissible_loop()) {
        let report = validate_loop_hypotheses(&params).unwrap();
        prop_assert!(report.pass, "{report:#?}");
        let s = build_loop_schedule(&params).unwrap();
        let d = params.delta;
        for q in 0..=params.n_max {
            let r = s.a[q] / s.a[q + 1];
            prop_assert!((r - r.round()).abs() < 1e-9 * r);
            prop_assert_eq!(s.ratio[q] as f64, r.round());
            let lo = s.a[q].powf(-d);
            prop_assert!(r >= lo - 1e-9 && r <= lo + 1.0 + 1e-9, "ratio {r} outside [{lo}, {}]", lo + 1.0);
            prop_assert!(s.a[q + 1] < s.a[q]);
        }
        for q in 1..=params.n_max {
            prop_assert!(s.v[q] > s.v[q - 1]);
            let m = s.tau_bar[q] / s.tau_bar[q + 1];
            prop_assert!(m >= 1.0 - 1e-9 && (m - m.round()).abs() < 1e-9 * m, "tau ratio {m}");
            prop_assert!(s.t_travel[q] <= 6.0 * s.a[q - 1] / s.v[q] * (1.0 + 1e-12));
            prop_assert!(s.t_cum[q] > s.t_cum[q - 1]);
        }
        // T_n need not increase (the glue time shrinks with n); every T_n stays below T
        for n in 0..=params.n_max {
            prop_assert!(s.t_horizon[n] > 0.0 && s.t_horizon[n] < s.horizon);
        }
        let total: f64 = s.a.iter().sum();
        prop_assert!(total <= 2.0);
        let r = s.rescaled_below_one();
        prop_assert!(r.horizon < 1.0);
    }

    #[test]
    fn chess_schedule_invariants(delta in 0.02f64..0.2, a_exp in 3u32..6, n_max in 0usize..=3) {
        let p = 1.2;
        let conj = p / (p - 1.0);
        let gamma = 0.5 * (2.0 * (1.0 + delta).powi(2) + conj);
        let params = ChessParams { p, delta, gamma, a0: 0.5f64.powi(a_exp as i32), n_max, kappa: 1.0 };
        let s = build_chess_schedule(&params).unwrap();
        for q in 0..=n_max {
            prop_assert_eq!(s.lambda[q] * s.a[q], 0.5);
        }
        // I and J intervals tile [0, t_{n_max+1}) and its mirror without gaps or overlaps
        let mut pieces: Vec<(f64, f64)> = Vec::new();
        for q in 0..=n_max {
            for i in 1..=3 {
                pieces.push(s.interval_i(q, i));
                pieces.push(s.interval_j(q, i));
            }
        }
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        let head = s.t_steps[n_max + 1];
        let tol = 1e-12 * s.horizon;
        let mut t = 0.0;
        for &(lo, hi) in &pieces {
            if (lo - (s.horizon - head)).abs() < tol && (t - head).abs() < tol {
                t = lo;
            }
            prop_assert!((lo - t).abs() < tol, "gap or overlap at {t} vs {lo}");
            prop_assert!(hi > lo);
            t = hi;
        }
        prop_assert!((t - s.horizon).abs() < tol);
        prop_assert!(s.horizon_bounds.0 <= s.horizon && s.horizon <= s.horizon_bounds.1);
    }
}

#[test]
fn loop_budget_finite_iff_h_alpha() {
    let d = LoopParams::default();
    let hi = (2.0 + d.delta) / (d.p * (1.0 + d.delta));
    let inside = LoopParams { alpha: hi - 1e-3, epsilon: 1e-4, ..d.clone() };
    let outside = LoopParams { alpha: hi + 1e-3, epsilon: 1e-4, ..d.clone() };
    let b_in = loop_lp_budget(&build_loop_schedule(&inside).unwrap(), d.p).unwrap();
    let b_out = loop_lp_budget(&build_loop_schedule(&outside).unwrap(), d.p).unwrap();
    assert!(b_in.finite && b_in.bound.is_finite(), "{b_in:?}");
    assert!(!b_out.finite && b_out.bound.is_infinite(), "{b_out:?}");
    assert!(validate_loop_hypotheses(&inside).unwrap().holds("H_alpha"));
    assert!(!validate_loop_hypotheses(&outside).unwrap().holds("H_alpha"));
}

#[test]
fn chess_budget_finite_iff_h_gamma() {
    let d = ChessParams::default();
    let conj = d.p / (d.p - 1.0);
    for (gamma, expect) in [(conj - 1e-3, true), (conj + 1e-3, false)] {
        let params = ChessParams { gamma, ..d.clone() };
        let b = chess_lp_budget(&build_chess_schedule(&params).unwrap(), d.p).unwrap();
        assert_eq!(b.finite, expect, "gamma {gamma}: {b:?}");
        assert_eq!(validate_chess_hypotheses(&params).unwrap().holds("H_gamma"), expect);
    }
}

#[test]
fn worked_examples() {
    // (2 + 0.1)(1 - 0.1)/(1 + 0.1)
    let r = validate_loop_hypotheses(&LoopParams::default()).unwrap();
    let h = r.checks.iter().find(|c| c.hypothesis == "H_delta").unwrap();
    assert!((h.rhs - 1.89 / 1.1).abs() < 1e-15);
    let up = r.checks.iter().find(|c| c.statement.starts_with("alpha <")).unwrap();
    assert!((up.rhs - 2.1 / 1.65).abs() < 1e-15 && up.pass);
    let low = r.checks.iter().find(|c| c.statement.starts_with("1/(1-delta)")).unwrap();
    assert!((low.lhs - 1.0 / 0.9).abs() < 1e-15 && low.pass);
}

#[test]
fn rejects_out_of_range() {
    let d = LoopParams::default();
    for bad in [
        LoopParams { p: 2.0, ..d.clone() },
        LoopParams { a0: 0.125, ..d.clone() },
        LoopParams { delta: 0.0, ..d.clone() },
        LoopParams { epsilon: f64::NAN, ..d.clone() },
    ] {
        assert!(matches!(validate_loop_hypotheses(&bad), Err(roughflow::Error::InvalidParam { .. })), "{bad:?}");
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roughflow::fields::*;
use roughflow::flow::*;
use roughflow::params::*;
use roughflow::Point;

fn loop_field(n: usize) -> LoopField {
    assemble_loop_field(&build_loop_schedule(&LoopParams::default()).unwrap(), n).unwrap()
}

fn chess_field(n: usize) -> ChessField {
    assemble_chess_field(&build_chess_schedule(&ChessParams::default()).unwrap(), n).unwrap()
}

/// Distance on the periodic box of side `l`.
fn torus_dist(x: Point, y: Point, l: f64) -> f64 {
    let d = |a: f64, b: f64| {
        let r = (a - b).rem_euclid(l);
        r.min(l - r)
    };
    d(x[0], y[0]).hypot(d(x[1], y[1]))
}

fn block_strategy() -> impl Strategy<Value = BuildingBlock> {
    (1e-3f64..0.2, 0.1f64..1e3, 2.0f64..20.0, 2.0f64..20.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_map(|(a, v, fl, fb, cx, cy)| BuildingBlock::new(fl * a, fb * a, a, v, [cx, cy]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn block_support_and_amplitude(b in block_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = b.bounding_box();
        let (hx, hy) = b.half_core();
        for _ in 0..6250 {
            // a box twice the size of the bounding box
            let x = [
                lo[0] + (hi[0] - lo[0]) * rng.random_range(-0.5..1.5),
                lo[1] + (hi[1] - lo[1]) * rng.random_range(-0.5..1.5),
            ];
            let w = b.eval(x);
            let speed = w[0].hypot(w[1]);
            // distance to the core rectangle, computed independently
            let dx = ((x[0] - b.center[0]).abs() - hx).max(0.0);
            let dy = ((x[1] - b.center[1]).abs() - hy).max(0.0);
            let d = dx.hypot(dy);
            if d < b.a || d >= 2.0 * b.a {
                prop_assert_eq!(speed, 0.0);
            } else {
                prop_assert!(speed <= b.v * (1.0 + 1e-12) && speed >= b.v * (1.0 - 1e-9), "{speed} vs {}", b.v);
            }
        }
    }

    #[test]
    fn block_is_perp_gradient_of_stream(b in block_strategy(), s in 0.0f64..1.0, d in 1.05f64..1.95) {
        let x = b.point_at(d * b.a, s * b.perimeter(d * b.a));
        let h = 1e-6 * b.a;
        let dpsi = |e: Point| (b.stream([x[0] + h * e[0], x[1] + h * e[1]]) - b.stream([x[0] - h * e[0], x[1] - h * e[1]])) / (2.0 * h);
        let w = b.eval(x);
        let u = [-dpsi([0.0, 1.0]), dpsi([1.0, 0.0])];
        prop_assert!((w[0] - u[0]).abs() + (w[1] - u[1]).abs() < 1e-5 * b.v, "{w:?} vs {u:?}");
    }
}

#[test]
fn at_most_two_supports_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..=2 {
        let f = loop_field(n);
        let half = 0.5 * f.side;
        for _ in 0..20_000 {
            let t = rng.random_range(0.0..f.horizon);
            let x = [rng.random_range(-half..half), rng.random_range(-half..half)];
            assert!(f.overlap_count(t, x) <= 2, "n={n} t={t} x={x:?}");
        }
        assert!(f.triple_overlap().is_none());
    }
}

/// Mirror copies carry `-R w(Rx)`; the point reflection carries `-w(-x) = R w(Rx)`.
#[test]
fn reflected_copies_reverse_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 0..=2 {
        let f = loop_field(n);
        let originals: Vec<usize> =
            (0..f.blocks.len()).filter(|&i| f.blocks[i].reflection == Reflection::Identity && f.blocks[i].level != f.blocks.last().unwrap().level).collect();
        for &i in &originals {
            let copies = (i + 1)..(i + 4);
            for j in copies {
                let r = f.blocks[j].reflection;
                assert!(f.blocks[j].time_reversed);
                for _ in 0..400 {
                    let t = rng.random_range(0.0..f.horizon);
                    assert_eq!(f.is_active(j, t), f.is_active(i, f.horizon - t), "n={n} block {j} t={t}");
                    let (lo, hi) = f.blocks[i].block.bounding_box();
                    let x = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
                    let w = f.blocks[i].block.eval(x);
                    let wr = f.blocks[j].block.eval(r.apply(x));
                    let sign = if r == Reflection::ReflectXY { 1.0 } else { -1.0 };
                    let pw = r.apply(w);
                    assert!(
                        (wr[0] - sign * pw[0]).abs() < 1e-9 && (wr[1] - sign * pw[1]).abs() < 1e-9,
                        "n={n} block {j}: {wr:?} vs {sign} {pw:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn chess_field_is_a_shear_or_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = chess_field(2);
    let h = FieldHandle::Chess(f.clone());
    for piece in &f.pieces {
        let t = 0.5 * (piece.start + piece.end);
        let mut sup: f64 = 0.0;
        let mut first: Option<Point> = None;
        let (mut x_only, mut y_only, mut constant) = (true, true, true);
        for _ in 0..2000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let v = h.velocity(t, x);
            sup = sup.max(v[0].abs().max(v[1].abs()));
            x_only &= v[1] == 0.0;
            y_only &= v[0] == 0.0;
            constant &= first.is_none_or(|u| u == v);
            first.get_or_insert(v);
        }
        assert!(x_only || y_only || constant, "piece {}", piece.label);
        assert!(sup <= h.sup_speed(t) * (1.0 + 1e-12), "piece {}: {sup} > {}", piece.label, h.sup_speed(t));
        if sup > 0.0 {
            assert!(sup >= 0.99 * h.sup_speed(t), "piece {}: sup speed not attained", piece.label);
        }
    }
}

#[test]
fn divergence_defect_is_rounding_only() {
    let handles = [FieldHandle::Loop(loop_field(1)), FieldHandle::Chess(chess_field(2))];
    for h in &handles {
        let (_, horizon) = h.time_range();
        for k in 1..8 {
            let t = horizon * k as f64 / 8.0;
            let sup = h.sup_speed(t).max(1.0);
            for n in [64.0, 128.0, 256.0] {
                assert!(divergence_defect(h, t, h.side() / n) <= 1e-12 * sup);
            }
        }
    }
}

fn sample_times(rng: &mut ChaCha8Rng, horizon: f64) -> [f64; 3] {
    let mut t = [rng.random_range(0.0..horizon), rng.random_range(0.0..horizon), rng.random_range(0.0..horizon)];
    t.sort_by(f64::total_cmp);
    t
}

#[test]
fn group_property_and_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let handles = [FieldHandle::Loop(loop_field(1)), FieldHandle::Chess(chess_field(2))];
    for h in &handles {
        let ((lo, l), (_, horizon)) = (h.domain(), h.time_range());
        for _ in 0..300 {
            let [t0, t1, t2] = sample_times(&mut rng, horizon);
            let x = [lo[0] + l * rng.random::<f64>(), lo[1] + l * rng.random::<f64>()];
            let direct = h.flow_map(t0, t2, x).unwrap();
            let composed = h.flow_map(t1, t2, h.flow_map(t0, t1, x).unwrap()).unwrap();
            assert!(torus_dist(direct, composed, l) < 1e-9, "t = {t0}, {t1}, {t2}, x = {x:?}");
            let back = h.flow_map(t2, t0, direct).unwrap();
            assert!(torus_dist(back, x, l) < 1e-9, "inverse at x = {x:?}");
        }
    }
}

#[test]
fn trajectories_respect_the_speed_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let handles = [FieldHandle::Loop(loop_field(2)), FieldHandle::Chess(chess_field(2))];
    for h in &handles {
        let ((lo, l), (_, horizon)) = (h.domain(), h.time_range());
        let mut knots = vec![0.0];
        knots.extend(h.breakpoints(0.0, horizon));
        let sup = knots.iter().map(|&t| h.sup_speed(t)).fold(0.0, f64::max);
        for _ in 0..50 {
            let x = [lo[0] + l * rng.random::<f64>(), lo[1] + l * rng.random::<f64>()];
            let traj = flow_trajectory(h, 0.0, horizon, x).unwrap();
            let times: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
            let pos = traj.sample(&times);
            for k in 1..pos.len() {
                let step = (pos[k][0] - pos[k - 1][0]).hypot(pos[k][1] - pos[k - 1][1]);
                assert!(step <= sup * (times[k] - times[k - 1]) * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}

/// `det DX = 1` by central differences; the flows are piecewise rigid motions.
#[test]
fn flows_preserve_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let handles = [FieldHandle::Loop(loop_field(1)), FieldHandle::Chess(chess_field(2))];
    for h in &handles {
        let ((lo, l), (_, horizon)) = (h.domain(), h.time_range());
        let eps = 1e-9 * l;
        let (mut good, mut total) = (0, 0);
        for _ in 0..2000 {
            let [t0, t1, _] = sample_times(&mut rng, horizon);
            let x = [lo[0] + l * rng.random::<f64>(), lo[1] + l * rng.random::<f64>()];
            let y = h.flow_map(t0, t1, x).unwrap();
            let col = |e: Point| {
                let p = h.flow_map(t0, t1, [x[0] + eps * e[0], x[1] + eps * e[1]]).unwrap();
                // unwrap the image next to y
                let dx = (p[0] - y[0] + 0.5 * l).rem_euclid(l) - 0.5 * l;
                let dy = (p[1] - y[1] + 0.5 * l).rem_euclid(l) - 0.5 * l;
                [dx / eps, dy / eps]
            };
            let (c0, c1) = (col([1.0, 0.0]), col([0.0, 1.0]));
            let det = c0[0] * c1[1] - c0[1] * c1[0];
            total += 1;
            if (det - 1.0).abs() <= 1e-6 {
                good += 1;
            }
        }
        // misses are stencils cut by a region boundary or a shear interface
        assert!(good as f64 >= 0.99 * total as f64, "{good}/{total}");
    }
}

/// Area of the image of a square by pulling a fine lattice back through the flow.
#[test]
fn image_area_by_lattice_count() {
    let f = chess_field(1);
    let h = FieldHandle::Chess(f.clone());
    let (t0, t1) = (0.0, 0.6 * f.horizon);
    let rect = ([0.2, 0.3], [0.45, 0.5]);
    let area = (rect.1[0] - rect.0[0]) * (rect.1[1] - rect.0[1]);
    let k = 1024;
    let mut hits = 0usize;
    for j in 0..k {
        for i in 0..k {
            let y = [(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64];
            let x = h.flow_map(t1, t0, y).unwrap();
            if x[0] >= rect.0[0] && x[0] < rect.1[0] && x[1] >= rect.0[1] && x[1] < rect.1[1] {
                hits += 1;
            }
        }
    }
    let image = hits as f64 / (k * k) as f64;
    assert!((image - area).abs() / area < 1e-3, "{image} vs {area}");
}

#[test]
fn start_zone_covers_s0() {
    let s = build_loop_schedule(&LoopParams::default()).unwrap();
    let z = start_zone(&s);
    let (ok, worst) = z.verify_coverage(&s, 12);
    assert!(ok, "worst miss {worst}");
}

#[test]
fn chess_tiles_permute_exactly() {
    let f = chess_field(3);
    for q in 0..3 {
        let r = verify_chess_flow(&f, q).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn arrival_times_are_ordered_and_bounded() {
    let s = build_loop_schedule(&LoopParams::default()).unwrap();
    for n in 0..=2 {
        let comb = build_arrival_combinatorics(&s, n, MarginPolicy::Substitute).unwrap();
        for i in 0..(comb.count.min(64) as usize) {
            let beta = beta_for(&comb, i);
            for q in 0..n {
                let (a, b) = (comb.t_bar(q as isize, &beta), comb.t_bar(q as isize + 1, &beta));
                assert!(b >= a && b - a <= 6.0 * s.a[q] / s.v[q + 1] * (1.0 + 1e-12), "n={n} q={q}");
                let (c, d) = (comb.s_bar(q as isize, &beta), comb.s_bar(q as isize + 1, &beta));
                assert!(d <= c && c - d <= 6.0 * s.a[q] / s.v[q + 1] * (1.0 + 1e-12), "n={n} q={q}");
            }
        }
        assert!(matches!(
            build_arrival_combinatorics(&s, n, MarginPolicy::Paper),
            Err(roughflow::Error::EmptyArrivals(_))
        ));
    }
}

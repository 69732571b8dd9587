use roughflow::fields::*;
use roughflow::params::*;
use roughflow::stochastic::*;
use roughflow::Point;

const Z99: f64 = 2.576;

fn chess(n: usize) -> FieldHandle {
    FieldHandle::Chess(assemble_chess_field(&build_chess_schedule(&ChessParams::default()).unwrap(), n).unwrap())
}

fn loop_field(n: usize) -> FieldHandle {
    FieldHandle::Loop(assemble_loop_field(&build_loop_schedule(&LoopParams::default()).unwrap(), n).unwrap())
}

fn grid_starts(h: &FieldHandle, m: usize) -> Vec<Point> {
    let (lo, l) = h.domain();
    (0..m * m).map(|k| [lo[0] + l * ((k % m) as f64 + 0.5) / m as f64, lo[1] + l * ((k / m) as f64 + 0.5) / m as f64]).collect()
}

#[test]
fn increments_are_standard_normal() {
    let kappa = 0.3;
    let times: Vec<f64> = (0..=2000).map(|i| (i as f64 * 0.37).sin().abs() * 0.01 + i as f64 * 1e-3).collect();
    let mut z = Vec::new();
    for particle in 0..50 {
        let path = BrownianPath::generate(42, particle, &times, kappa);
        for (w, d) in times.windows(2).zip(&path.increments) {
            let s = (2.0 * kappa * (w[1] - w[0]).abs()).sqrt();
            z.push(d[0] / s);
            z.push(d[1] / s);
        }
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() * n.sqrt() < Z99, "mean {mean}");
    assert!((var - 1.0).abs() * (n / 2.0).sqrt() < Z99, "variance {var}");
    // the two components are uncorrelated
    let cov = z.chunks(2).map(|p| p[0] * p[1]).sum::<f64>() / (n / 2.0);
    assert!(cov.abs() * (n / 2.0).sqrt() < Z99, "covariance {cov}");
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let h = chess(2);
    let starts = grid_starts(&h, 6);
    let horizon = h.time_range().1;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_sde(&h, 0.0, horizon, &starts, 5, 1e-4, DtPolicy::default(), 99, &[0.5 * horizon]).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.positions, b.positions);
    let c = simulate_sde(&h, 0.0, horizon, &starts, 5, 1e-4, DtPolicy::default(), 100, &[0.5 * horizon]).unwrap();
    assert_ne!(a.positions, c.positions);
}

/// Distances between the kappa = 0 ensemble and the exact flow, from shifted grid starts.
fn zero_noise_errors(h: &FieldHandle, m: usize, policy: DtPolicy) -> Vec<f64> {
    let horizon = h.time_range().1;
    // an irrational shift keeps starts off the dyadic tile edges
    let starts: Vec<Point> = grid_starts(h, m).into_iter().map(|x| [x[0] + 2f64.sqrt() * 1e-3, x[1] + 3f64.sqrt() * 1e-3]).collect();
    let ens = simulate_sde(h, 0.0, horizon, &starts, 1, 0.0, policy, 1, &[]).unwrap();
    let mut d: Vec<f64> = starts
        .iter()
        .zip(ens.terminal_wrapped(h))
        .map(|(&x, y)| torus_distance(h, h.flow_map(0.0, horizon, x).unwrap(), y))
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

#[test]
fn zero_diffusion_follows_the_flow() {
    // chess steps are exact on each shear
    let worst = *zero_noise_errors(&chess(2), 12, DtPolicy::default()).last().unwrap();
    assert!(worst < 1e-9, "worst {worst}");

    // loop steps carry the Euler error, which shrinks with the step
    let h = loop_field(0);
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let coarse = zero_noise_errors(&h, 40, DtPolicy::Auto { divisor: 16.0 });
    let fine = zero_noise_errors(&h, 40, DtPolicy::Auto { divisor: 256.0 });
    assert!(coarse[coarse.len() * 9 / 10] < 5e-3 * h.side(), "p90 {}", coarse[coarse.len() * 9 / 10]);
    assert!(mean(&fine) * 4.0 < mean(&coarse), "{} vs {}", mean(&fine), mean(&coarse));
}

#[test]
fn pure_noise_variance_is_two_kappa_t() {
    let h = FieldHandle::Zero { side: 1e6, horizon: 1.0 };
    let (kappa, t) = (0.05, 0.8);
    let n = 20_000;
    let ens = simulate_sde(&h, 0.0, t, &[[0.0, 0.0]], n, kappa, DtPolicy::Fixed(0.05), 5, &[]).unwrap();
    let xs: Vec<f64> = ens.positions.iter().map(|p| p.last().unwrap()[0]).collect();
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let target = 2.0 * kappa * t;
    // the sample variance of a centred Gaussian has sd target * sqrt(2/n)
    assert!((var - target).abs() <= 3.0 * target * (2.0 / n as f64).sqrt(), "{var} vs {target}");
}

#[test]
fn noise_breaks_time_reversal() {
    let h = chess(1);
    let horizon = h.time_range().1;
    let starts = grid_starts(&h, 10);
    let mean_return = |kappa: f64| {
        let fwd = simulate_sde(&h, 0.0, horizon, &starts, 1, kappa, DtPolicy::default(), 3, &[]).unwrap();
        let mid = fwd.terminal_wrapped(&h);
        let back = simulate_sde(&h, horizon, 0.0, &mid, 1, kappa, DtPolicy::default(), 4, &[]).unwrap();
        let end = back.terminal_wrapped(&h);
        starts.iter().zip(&end).map(|(&x, &y)| torus_distance(&h, x, y)).sum::<f64>() / starts.len() as f64
    };
    assert!(mean_return(0.0) < 1e-12);
    let kappa = 1e-4;
    let d = mean_return(kappa);
    assert!(d > 0.5 * (4.0 * kappa * horizon).sqrt(), "returned to within {d}");
}

#[test]
fn doob_tail() {
    assert!((doob_bound(2.0, 0.01, 0.3) - 2.0 * (-2.25f64).exp()).abs() < 1e-15);
    assert!((doob_bound(2.0, 0.01, 0.3) - 0.2108).abs() < 1e-4);
    let exc = brownian_sup_excursions(8, 100_000, 0.01, 64);
    let r = empirical_doob(&exc, 0.01, 0.3);
    assert!(r.pass && r.fraction <= r.bound + 3.0 * r.sigma, "{r:?}");
    assert!(r.fraction > 0.0);
    assert_eq!(empirical_doob(&exc, 0.01, 10.0).fraction, 0.0);
    assert_eq!(doob_bound(2.0, 0.01, 1e3), 0.0);
}

#[test]
fn halving_the_step_stays_inside_the_interval() {
    let h = FieldHandle::Zero { side: 1.0, horizon: 1.0 };
    let f = |x: Point| (2.0 * std::f64::consts::PI * x[0]).cos() * (2.0 * std::f64::consts::PI * x[1]).sin();
    let x = [[0.3, 0.2]];
    let (t, kappa, n) = (0.2, 0.05, 100_000);
    let coarse = feynman_kac_backward(&h, &f, t, &x, n, kappa, DtPolicy::Fixed(0.02), 11, None).unwrap()[0].clone();
    let fine = feynman_kac_backward(&h, &f, t, &x, n, kappa, DtPolicy::Fixed(0.01), 12, None).unwrap()[0].clone();
    assert!((coarse.mean - fine.mean).abs() < coarse.ci95.max(fine.ci95), "{coarse:?} vs {fine:?}");
    // the heat semigroup damps this mode by exp(-8 pi^2 kappa t)
    let exact = f(x[0]) * (-8.0 * std::f64::consts::PI.powi(2) * kappa * t).exp();
    assert!((fine.mean - exact).abs() < 1.5 * fine.ci95, "{} vs {exact}", fine.mean);
}

#[test]
fn gap_grows_with_kappa() {
    let h = chess(1);
    let horizon = h.time_range().1;
    let starts = grid_starts(&h, 16);
    let exact: Vec<Point> = starts.iter().map(|&x| h.flow_map(0.0, horizon, x).unwrap()).collect();
    let gaps: Vec<f64> = [1e-7, 1e-6, 1e-5, 1e-4]
        .iter()
        .map(|&kappa| {
            let ens = simulate_sde(&h, 0.0, horizon, &starts, 4, kappa, DtPolicy::default(), 21, &[]).unwrap();
            ens.terminal_wrapped(&h)
                .iter()
                .enumerate()
                .map(|(p, &y)| torus_distance(&h, exact[p / 4], y))
                .sum::<f64>()
                / ens.particles() as f64
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[0] < w[1]), "{gaps:?}");
}

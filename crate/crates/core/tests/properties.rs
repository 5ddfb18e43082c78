use std::sync::Arc;

use proptest::prelude::*;

use pamlab::config::{render, RawConfig, Resolver};
use pamlab::coupling::{build_schedule, epsilon_limit, growth_ratios, mixing};
use pamlab::noise::{mix_noise, NoiseStream};
use pamlab::reaction::{Nonlinearity, ReactionSpec};
use pamlab::solver::{CyclicSolver, SolverConfig, TrajectoryState};
use pamlab::stats::{decay_exponent_fit, gamma2, wilson_interval};
use pamlab::torus::{default_images, heat_kernel, oscillation_ratio, Field, Grid};

fn periodic_trapezoid(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = 2.0 / n as f64;
    (0..n).map(|i| f(-1.0 + i as f64 * h)).sum::<f64>() * h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_even_and_periodic(t in 1e-3f64..5.0, dx in -1.0f64..1.0) {
        let k = default_images(t);
        let p = heat_kernel(t, dx, k).unwrap();
        prop_assert_eq!(p, heat_kernel(t, -dx, k).unwrap());
        let shifted = heat_kernel(t, dx + 2.0, k).unwrap();
        prop_assert!((p - shifted).abs() <= 1e-12 * p.max(1e-300));
        prop_assert!(p > 0.0);
    }

    #[test]
    fn kernel_has_unit_mass(t in 0.01f64..5.0) {
        let k = default_images(t);
        let mass = periodic_trapezoid(2048, |y| heat_kernel(t, y, k).unwrap());
        prop_assert!((mass - 1.0).abs() < 1e-10, "mass {}", mass);
    }

    #[test]
    fn kernel_semigroup(s in 0.02f64..1.0, t in 0.02f64..1.0, x in -1.0f64..1.0) {
        let (ks, kt) = (default_images(s), default_images(t));
        let lhs = periodic_trapezoid(2048, |y| {
            heat_kernel(s, x - y, ks).unwrap() * heat_kernel(t, y, kt).unwrap()
        });
        let rhs = heat_kernel(s + t, x, default_images(s + t)).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn cyclic_solve_inverts_and_keeps_the_sum(
        r in 1e-3f64..50.0,
        d in prop::collection::vec(-10.0f64..10.0, 3..80),
    ) {
        let n = d.len();
        let solver = CyclicSolver::new(n, r);
        let mut x = d.clone();
        solver.solve_in_place(&mut x);
        for i in 0..n {
            let (l, rr) = (x[(i + n - 1) % n], x[(i + 1) % n]);
            let back = (1.0 + 2.0 * r) * x[i] - r * (l + rr);
            prop_assert!((back - d[i]).abs() < 1e-9 * (1.0 + r), "row {}: {} vs {}", i, back, d[i]);
        }
        let (sx, sd) = (x.iter().sum::<f64>(), d.iter().sum::<f64>());
        prop_assert!((sx - sd).abs() < 1e-9 * (1.0 + d.iter().map(|v| v.abs()).sum::<f64>()));
    }

    #[test]
    fn mixing_is_normalized_even_and_monotone(y in -1e3f64..1e3, z in 0.0f64..1.0, alpha in 1e-3f64..1e3) {
        let (p, s) = mixing(y, alpha);
        prop_assert!((p * p + s * s - 1.0).abs() < 1e-12);
        prop_assert_eq!(mixing(-y, alpha), (p, s));
        let (p2, _) = mixing(y.abs() * (1.0 + z) + z, alpha);
        prop_assert!(p2 >= p);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn mixed_noise_is_the_cellwise_combination(seed in any::<u64>(), alpha in 0.1f64..10.0) {
        let grid = Grid::new(16).unwrap();
        let dw = NoiseStream::new(seed, 0, 0).sample_increment(grid, 1e-3).unwrap();
        let dw0 = NoiseStream::new(seed, 1, 0).sample_increment(grid, 1e-3).unwrap();
        let ys: Vec<f64> = grid.points().map(|x| x * 3.0).collect();
        let phi = Field::from_values(grid, ys.iter().map(|&y| mixing(y, alpha).0).collect()).unwrap();
        let psi = Field::from_values(grid, ys.iter().map(|&y| mixing(y, alpha).1).collect()).unwrap();
        let out = mix_noise(&dw, &dw0, &phi, &psi).unwrap();
        for i in 0..16 {
            let want = psi.values()[i] * dw.values()[i] + phi.values()[i] * dw0.values()[i];
            prop_assert_eq!(out.values()[i], want);
        }
    }

    #[test]
    fn noise_streams_are_reproducible(seed in any::<u64>(), traj in 0u64..1000) {
        let grid = Grid::new(8).unwrap();
        let a = NoiseStream::new(seed, 3, traj).sample_increment(grid, 1e-2).unwrap();
        let b = NoiseStream::new(seed, 3, traj).sample_increment(grid, 1e-2).unwrap();
        let c = NoiseStream::new(seed, 3, traj + 1).sample_increment(grid, 1e-2).unwrap();
        prop_assert_eq!(a.values(), b.values());
        prop_assert_ne!(a.values(), c.values());
    }

    #[test]
    fn gamma2_is_even_and_increasing(s in 0.0f64..20.0, ds in 1e-6f64..5.0) {
        prop_assert_eq!(gamma2(s), gamma2(-s));
        prop_assert!(gamma2(s + ds) > gamma2(s));
        prop_assert!(gamma2(s) >= 0.0);
    }

    #[test]
    fn clamped_nonlinearities_respect_their_lipschitz_constant(
        a in -5.0f64..5.0, b in 0.0f64..5.0, cap in 0.5f64..20.0,
        x in -100.0f64..100.0, y in -100.0f64..100.0, cubic: bool,
    ) {
        let f = if cubic {
            Nonlinearity::ClampedCubic { a, b, cap }
        } else {
            Nonlinearity::ClampedQuadratic { a, b, cap }
        };
        let lip = f.lipschitz();
        prop_assert!((f.value(x) - f.value(y)).abs() <= lip * (x - y).abs() * (1.0 + 1e-9) + 1e-9);
        prop_assert_eq!(f.value(0.0), 0.0);
    }

    #[test]
    fn schedules_below_the_limit_are_monotone(
        frac in 1e-6f64..1.0, l_star in 1.01f64..10.0, eta in 0.01f64..2.0, n_max in 1usize..200,
    ) {
        let eps = epsilon_limit() * frac * (1.0 - 1e-12);
        let s = build_schedule(eps, l_star, eta, n_max).unwrap();
        prop_assert!(s.is_monotone());
        prop_assert_eq!(s.times.len(), n_max + 1);
        prop_assert!(s.delta > 0.0 && s.delta < 1.0 / std::f64::consts::E);
    }

    #[test]
    fn growth_ratios_start_at_one(delta in 1e-3f64..0.35, n_max in 1usize..50) {
        let g = growth_ratios(delta, n_max);
        prop_assert!((g[0] - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().all(|r| *r >= 1.0 - 1e-12));
    }

    #[test]
    fn decay_fit_recovers_power_laws(beta in -2.0f64..3.0, c in 0.01f64..100.0, m in 10usize..40) {
        let times: Vec<f64> = (0..m).map(|i| 5.0 + i as f64 * 0.7).collect();
        let series: Vec<f64> = times.iter().map(|t| c * t.powf(-beta)).collect();
        let fit = decay_exponent_fit(&times, &series).unwrap();
        prop_assert!((fit.beta_hat - beta).abs() < 1e-9);
        prop_assert_eq!(fit.points_used, m);
    }

    #[test]
    fn wilson_interval_brackets_the_frequency(trials in 1usize..5000, k in 0.0f64..1.0) {
        let successes = ((trials as f64) * k).floor() as usize;
        let p = wilson_interval(successes, trials);
        prop_assert!(0.0 <= p.lower && p.lower <= p.frequency && p.frequency <= p.upper && p.upper <= 1.0);
    }

    #[test]
    fn oscillation_ratio_is_at_least_one(v in prop::collection::vec(1e-3f64..1e3, 4..40)) {
        let grid = Grid::new(v.len()).unwrap();
        let r = oscillation_ratio(&Field::from_values(grid, v).unwrap()).unwrap();
        prop_assert!(r >= 1.0);
    }

    #[test]
    fn shared_noise_preserves_ordering(
        base in prop::collection::vec(0.1f64..3.0, 16),
        bump in prop::collection::vec(0.0f64..1.0, 16),
        seed in any::<u64>(), sigma in 0.1f64..3.0,
    ) {
        let grid = Grid::new(16).unwrap();
        let spec = Arc::new(ReactionSpec::linear(0.0, sigma).unwrap());
        let lo = Field::from_values(grid, base.clone()).unwrap();
        let hi = Field::from_values(grid, base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
        let noise = NoiseStream::new(seed, 0, 0);
        let mut u = TrajectoryState::new(spec.clone(), &lo, noise);
        let mut v = TrajectoryState::new(spec, &hi, noise);
        let cfg = SolverConfig::with_dt(1e-3);
        let mut draw = noise;
        let mut dw = vec![0.0; 16];
        for _ in 0..50 {
            draw.fill_gaussian(1e-3 / grid.spacing(), &mut dw);
            u.step_pam_with(&cfg, 1e-3, 0.3, sigma, &dw).unwrap();
            v.step_pam_with(&cfg, 1e-3, 0.3, sigma, &dw).unwrap();
        }
        for (a, b) in u.field().values().iter().zip(v.field().values()) {
            prop_assert!(a <= b, "{} > {}", a, b);
        }
    }

    #[test]
    fn config_echo_round_trips(
        dt in 1e-6f64..1.0, n in 3usize..4096, seed in any::<u64>(),
        times in prop::collection::vec(0.0f64..1e3, 1..6),
    ) {
        let list: Vec<String> = times.iter().map(|t| t.to_string()).collect();
        let text = format!("dt = {dt}\nn = {n}\nseed = {seed:#x}\ntimes = {}\n", list.join(", "));
        let mut r = Resolver::new(RawConfig::parse(&text).unwrap());
        prop_assert_eq!(r.get::<f64>("dt", 0.0).unwrap(), dt);
        prop_assert_eq!(r.get::<usize>("n", 0).unwrap(), n);
        prop_assert_eq!(r.get_seed("seed", 0, None).unwrap(), seed);
        prop_assert_eq!(r.get_list::<f64>("times", &[]).unwrap(), times);
        let resolved = r.finish().unwrap();
        prop_assert_eq!(RawConfig::parse(&render(&resolved)).unwrap().entries, resolved);
    }
}

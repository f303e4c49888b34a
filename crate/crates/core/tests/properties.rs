//! Property tests for the structural invariants of each module.

use std::f64::consts::PI;

use pamshift::feynman_kac::{FkSolver, Probe, SolveOptions};
use pamshift::fields::{mollify, multiply, sample_white_noise, sobolev_norm, MollifierSpec};
use pamshift::localtime::local_time;
use pamshift::paths::holder_modulus;
use pamshift::pde_oracle::fd_solve;
use pamshift::sewing::{defect_constant, germ_norms, holder_seminorm, sew, sewn_path, Combination, FnGerm, Germ};
use pamshift::{sample_bm, sample_fbm, BoxSpec, GridField, RngStream, SpectralField, TimeGrid};
use proptest::prelude::*;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig::with_cases(n)
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn same_stream_gives_bitwise_identical_paths(seed in any::<u64>(), stream in 0u64..1000, h in 0.05f64..0.95) {
        let g = TimeGrid::new(1.0, 7).unwrap();
        let a = sample_fbm(h, &g, 2, RngStream::new(seed, stream)).unwrap();
        let b = sample_fbm(h, &g, 2, RngStream::new(seed, stream)).unwrap();
        prop_assert_eq!(a.values(), b.values());
        let a = sample_bm(&g, 1, &[0.5], RngStream::new(seed, stream)).unwrap();
        let b = sample_bm(&g, 1, &[0.5], RngStream::new(seed, stream)).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    // Spacings are at most 1, so |t - s|^gamma shrinks as gamma grows and
    // the modulus can only grow.
    fn holder_modulus_is_nondecreasing_in_gamma(seed in any::<u64>(), g1 in 0.01f64..0.99, g2 in 0.01f64..0.99, t in 0.1f64..1.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let p = sample_bm(&TimeGrid::new(t, 7).unwrap(), 1, &[0.0], RngStream::new(seed, 0)).unwrap();
        prop_assert!(holder_modulus(&p, lo) <= holder_modulus(&p, hi));
    }

    #[test]
    fn holder_modulus_dominates_single_steps(seed in any::<u64>(), gamma in 0.01f64..0.99, d in 1usize..3) {
        let g = TimeGrid::new(1.0, 6).unwrap();
        let p = sample_bm(&g, d, &vec![0.0; d], RngStream::new(seed, 1)).unwrap();
        let step = (0..g.steps())
            .map(|i| {
                p.point(i + 1).iter().zip(p.point(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        prop_assert!(holder_modulus(&p, gamma) * g.dt().powf(gamma) >= step * (1.0 - 1e-12));
    }

    #[test]
    fn grid_spectral_round_trip(values in prop::collection::vec(-10.0f64..10.0, 64)) {
        let b = BoxSpec::new(1, 3.0, 64).unwrap();
        let g = GridField::new(b, values.clone()).unwrap();
        let back = SpectralField::from_grid(&g).to_grid();
        let scale = values.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (a, b) in back.values().iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn operations_keep_fields_real(seed in any::<u64>(), eps in 0.01f64..1.0, shift in -5.0f64..5.0) {
        let b = BoxSpec::new(2, 4.0, 16).unwrap();
        let v = sample_white_noise(&b, RngStream::new(seed, 0));
        let u = GridField::from_fn(&b, |x| (PI * x[0] / 2.0).sin() + (PI * x[1] / 2.0).cos());
        let ops = [
            v.clone(),
            mollify(&v, MollifierSpec::gaussian(eps)).unwrap(),
            mollify(&v, MollifierSpec::sharp(eps)).unwrap(),
            v.translated(&[shift, -shift]),
            v.derivative(1, 2),
            v.laplacian(),
            multiply(&u, &v).unwrap(),
            v.resample(32).unwrap(),
        ];
        for f in &ops {
            prop_assert!(f.hermitian_defect() < 1e-10);
        }
    }

    #[test]
    fn sobolev_norm_is_nondecreasing_in_eta(seed in any::<u64>(), e1 in -3.0f64..3.0, e2 in -3.0f64..3.0, side in 0.1f64..1.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let v = sample_white_noise(&BoxSpec::new(1, side, 32).unwrap(), RngStream::new(seed, 0));
        prop_assert!(sobolev_norm(&v, lo) <= sobolev_norm(&v, hi) * (1.0 + 1e-12));
    }

    #[test]
    fn mollification_never_increases_norms(seed in any::<u64>(), eps in 0.001f64..2.0, eta in -3.0f64..3.0, sharp in any::<bool>()) {
        let v = sample_white_noise(&BoxSpec::new(1, 8.0, 64).unwrap(), RngStream::new(seed, 0));
        let spec = if sharp { MollifierSpec::sharp(eps) } else { MollifierSpec::gaussian(eps) };
        prop_assert!(sobolev_norm(&mollify(&v, spec).unwrap(), eta) <= sobolev_norm(&v, eta) * (1.0 + 1e-12));
    }

    #[test]
    fn translation_is_pointwise_shift(seed in any::<u64>(), shift in -20.0f64..20.0, x in 0.0f64..8.0) {
        let b = BoxSpec::new(1, 8.0, 32).unwrap();
        let v = mollify(&sample_white_noise(&b, RngStream::new(seed, 0)), MollifierSpec::sharp(0.5)).unwrap();
        let scale = v.to_grid().sup_norm().max(1e-300);
        prop_assert!((v.translated(&[shift]).eval_trig(&[x]) - v.eval_trig(&[x - shift])).abs() < 1e-12 * scale.max(1.0));
    }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn local_time_conserves_mass_and_grows(seed in any::<u64>(), h in 0.05f64..0.9, d in 1usize..3) {
        let g = TimeGrid::new(0.5, 9).unwrap();
        let b = BoxSpec::new(d, 8.0, 64).unwrap();
        let p = sample_fbm(h, &g, d, RngStream::new(seed, 3)).unwrap();
        let lt = local_time(&p, &b).unwrap();
        for i in 0..=g.steps() {
            prop_assert!((lt.total_mass(i) - g.time(i)).abs() <= 1e-8 * g.horizon());
        }
        let (s, r) = (g.steps() / 3, g.steps() / 2);
        prop_assert!(lt.increment_index(s, r).unwrap().min() >= 0.0);
    }

    #[test]
    fn local_time_is_shift_covariant(seed in any::<u64>(), h in 0.1f64..0.9, k in 0usize..64) {
        let g = TimeGrid::new(0.5, 9).unwrap();
        let b = BoxSpec::new(1, 8.0, 64).unwrap();
        let cell = b.spacing(0);
        let p = sample_fbm(h, &g, 1, RngStream::new(seed, 4)).unwrap();
        let l0 = local_time(&p, &b).unwrap().density(g.steps()).unwrap();
        let l1 = local_time(&p.translated(&[k as f64 * cell]), &b).unwrap().density(g.steps()).unwrap();
        // Transport distance between the shifted densities, at most one cell.
        let mut cum = 0.0;
        let mut dist = 0.0;
        for j in 0..64 {
            cum += (l1.values()[(j + k) % 64] - l0.values()[j]) * cell;
            dist += cum.abs() * cell;
        }
        prop_assert!(dist <= g.horizon() * cell);
    }

    #[test]
    fn sewing_is_additive_and_linear(seed in any::<u64>(), a in -3.0f64..3.0, c in -3.0f64..3.0, j in 1usize..4) {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let w = sample_fbm(0.7, &grid, 2, RngStream::new(seed, 5)).unwrap();
        let vals = w.values().to_vec();
        let x = move |i: usize| vals[2 * i];
        let vals = w.values().to_vec();
        let y = move |i: usize| vals[2 * i + 1];
        let young = FnGerm::new(grid.clone(), move |s, t| x(s) * (y(t) - y(s)));
        let quad = FnGerm::new(grid.clone(), |s, t| ((t - s) as f64 / 256.0).powi(2) + (t as f64 * 0.1).sin() - (s as f64 * 0.1).sin());
        let n = grid.steps();
        let u = j * n / 4;
        for tol in [0.0, 1e-6] {
            let whole = sew(&young, 0, n, 8, tol).unwrap();
            let parts = sew(&young, 0, u, 8, tol).unwrap().value + sew(&young, u, n, 8, tol).unwrap().value;
            prop_assert!((whole.value - parts).abs() <= 2.0 * tol + 1e-12);
        }
        let comb = Combination::new(vec![(a, &young), (c, &quad)]).unwrap();
        let lhs = sew(&comb, 0, n, 8, 0.0).unwrap().value;
        let rhs = a * sew(&young, 0, n, 8, 0.0).unwrap().value + c * sew(&quad, 0, n, 8, 0.0).unwrap().value;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn non_dyadic_partitions_agree_within_the_defect_bound(seed in any::<u64>(), stride in prop::sample::select(vec![3usize, 5, 7, 11])) {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let w = sample_fbm(0.7, &grid, 2, RngStream::new(seed, 10)).unwrap();
        let vals = w.values().to_vec();
        let young = FnGerm::new(grid.clone(), move |s, t| vals[2 * s] * (vals[2 * t + 1] - vals[2 * s + 1]));
        let n = grid.steps();
        let whole = sew(&young, 0, n, 10, 0.0).unwrap();
        prop_assert!(whole.reached_grid);
        let cuts: Vec<usize> = (0..n).step_by(stride).chain(std::iter::once(n)).collect();
        let (mut riemann, mut budget) = (0.0, 0.0);
        for c in cuts.windows(2) {
            riemann += young.eval(c[0], c[1]);
            budget += sew(&young, c[0], c[1], 10, 0.0).unwrap().defect_bound;
        }
        prop_assert!((riemann - whole.value).abs() <= budget * (1.0 + 1e-12), "{} vs {} (budget {})", riemann, whole.value, budget);
    }

    #[test]
    fn sewn_path_starts_at_zero_and_inherits_holder_bound(seed in any::<u64>()) {
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let w = sample_fbm(0.75, &grid, 2, RngStream::new(seed, 6)).unwrap();
        let vals = w.values().to_vec();
        let germ = FnGerm::new(grid.clone(), move |s, t| vals[2 * s] * (vals[2 * t + 1] - vals[2 * s + 1]))
            .with_exponents(0.5, 1.2);
        let path = sewn_path(&germ, 6, 0.0).unwrap();
        prop_assert_eq!(path[0], 0.0);
        let (alpha, beta) = (0.5, 1.2);
        let norms = germ_norms(&germ, alpha, beta, 6).unwrap();
        let bound = norms.alpha_norm + defect_constant(beta) * norms.delta_norm * grid.horizon().powf(beta - alpha);
        prop_assert!(holder_seminorm(&path, grid.horizon(), alpha) <= bound * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(cases(6))]

    #[test]
    fn solutions_are_linear_in_the_initial_condition(seed in any::<u64>(), a in -2.0f64..2.0, c in -2.0f64..2.0) {
        let b = BoxSpec::new(1, 8.0, 64).unwrap();
        let grid = TimeGrid::new(0.1, 6).unwrap();
        let v = mollify(&sample_white_noise(&b, RngStream::new(seed, 7)), MollifierSpec::gaussian(0.3)).unwrap();
        let wh = sample_fbm(0.2, &grid, 1, RngStream::new(seed, 8)).unwrap();
        let solver = FkSolver::new(&v, &wh).unwrap();
        let f1 = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
        let f2 = SpectralField::from_fn(&b, |x| (PI * x[0] / 4.0).sin());
        let f = f1.scale(a).add(&f2.scale(c)).unwrap();
        let probes: Vec<Probe> = [0.0, 0.3, 1.1].iter().map(|&x| Probe { t_index: 64, x: vec![x] }).collect();
        let opts = SolveOptions::default().with_paths(64);
        let rng = RngStream::new(seed, 9);
        let m = solver.samples(&f, &probes, &opts, rng).unwrap();
        let m1 = solver.samples(&f1, &probes, &opts, rng).unwrap();
        let m2 = solver.samples(&f2, &probes, &opts, rng).unwrap();
        for q in 0..probes.len() {
            let lhs = m.estimate(q).0;
            let rhs = a * m1.estimate(q).0 + c * m2.estimate(q).0;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn nonnegative_data_give_nonnegative_solutions(seed in any::<u64>(), amp in 0.0f64..3.0) {
        let b = BoxSpec::new(1, 8.0, 64).unwrap();
        let grid = TimeGrid::new(0.1, 6).unwrap();
        let v = mollify(&sample_white_noise(&b, RngStream::new(seed, 10)), MollifierSpec::gaussian(0.3)).unwrap().scale(amp);
        let wh = sample_fbm(0.2, &grid, 1, RngStream::new(seed, 11)).unwrap();
        let f = SpectralField::from_fn(&b, |x| 1.0 + (PI * x[0] / 4.0).cos());
        let est = FkSolver::new(&v, &wh).unwrap()
            .solve(&f, 64, &[0.7], &SolveOptions::default().with_paths(32), RngStream::new(seed, 12)).unwrap();
        prop_assert!(est.value >= 0.0);
        // The spectral heat step is not strictly positive; allow its ringing
        // around a field of unit size.
        let u = fd_solve(&v, &wh, &f, &grid, &b).unwrap();
        for field in u.fields() {
            prop_assert!(field.min() >= -1e-6);
        }
    }
}

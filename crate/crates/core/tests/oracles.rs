//! Statistical and refinement oracles. Each test computes the reference
//! independently of the code under test (moments, mode sums, exact fBm
//! covariances, a second solver) and compares at a fixed tolerance.

use std::f64::consts::PI;
use std::sync::Arc;

use pamshift::feynman_kac::{build_germ, GermCache, LocalTimeGerm, StencilGerm};
use pamshift::feynman_kac::{spatial_derivative, DerivativeSpec};
use pamshift::feynman_kac::{FkSolver, Mode, Probe, SolveOptions};
use pamshift::fields::{
    c1_norm, convolve, interpolate, mollify, multiply, sample_white_noise, sobolev_norm, MollifierSpec,
};
use pamshift::localtime::{dyadic_pairs, local_time, regularity_study, SpectralBand};
use pamshift::paths::exp_moment_estimate;
use pamshift::pde_oracle::fd_solve;
use pamshift::sewing::{sew, sewing_convergence_check, FnGerm, Germ};
use pamshift::stats::{fit_line, mean_stderr};
use pamshift::{sample_bm, sample_fbm, BoxSpec, Evaluate, GridField, RngStream, SpectralField, TimeGrid};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn fbm_cov(h: f64, s: f64, t: f64) -> f64 {
    0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
}

// ---- paths ----

#[test]
fn brownian_variance_is_t() {
    let t = 0.7;
    let g = TimeGrid::new(t, 4).unwrap();
    let rng = RngStream::new(11, 0);
    let ends: Vec<[f64; 2]> = (0..100_000u64)
        .into_par_iter()
        .map(|j| {
            let p = sample_bm(&g, 2, &[0.0, 0.0], rng.child(j)).unwrap();
            let e = p.point(g.steps());
            [e[0], e[1]]
        })
        .collect();
    for c in 0..2 {
        let xs: Vec<f64> = ends.iter().map(|e| e[c]).collect();
        let v = sample_variance(&xs);
        assert!(rel(v, t) < 0.02, "coordinate {c}: Var(W_T) = {v}, expected {t}");
    }
}

#[test]
fn rough_fbm_matches_its_covariance() {
    let h = 0.1;
    let g = TimeGrid::new(1.0, 2).unwrap();
    let rng = RngStream::new(12, 0);
    let rows: Vec<[f64; 3]> = (0..100_000u64)
        .into_par_iter()
        .map(|j| {
            let p = sample_fbm(h, &g, 1, rng.child(j)).unwrap();
            [p.point(1)[0], p.point(3)[0], p.point(4)[0]]
        })
        .collect();
    let n = rows.len() as f64;
    let var_t = rows.iter().map(|r| r[2] * r[2]).sum::<f64>() / n;
    assert!(rel(var_t, 1.0) < 0.02, "Var(w_1) = {var_t}");
    let (ms, mt) = (rows.iter().map(|r| r[0]).sum::<f64>() / n, rows.iter().map(|r| r[1]).sum::<f64>() / n);
    let cov = rows.iter().map(|r| (r[0] - ms) * (r[1] - mt)).sum::<f64>() / (n - 1.0);
    let exact = fbm_cov(h, 0.25, 0.75);
    assert!(rel(cov, exact) < 0.05, "Cov(w_.25, w_.75) = {cov}, exact {exact}");
}

#[test]
fn half_hurst_increments_are_standard_normal() {
    // Kolmogorov-Smirnov at the 1% level on one increment per path.
    let g = TimeGrid::new(1.0, 6).unwrap();
    let rng = RngStream::new(13, 0);
    let k = g.steps() / 2;
    let mut z: Vec<f64> = (0..10_000u64)
        .map(|j| {
            let p = sample_fbm(0.5, &g, 1, rng.child(j)).unwrap();
            (p.point(k + 1)[0] - p.point(k)[0]) / g.dt().sqrt()
        })
        .collect();
    z.sort_by(f64::total_cmp);
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let n = z.len() as f64;
    let ks = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = nrm.cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");
}

#[test]
fn holder_moment_below_one_half_is_finite() {
    let g = TimeGrid::new(1.0, 8).unwrap();
    let e = exp_moment_estimate(0.45, 0.5, 10_000, &g, RngStream::new(14, 0)).unwrap();
    assert_eq!(e.overflow_count, 0);
    assert!(e.mean.is_finite() && e.mean >= 1.0 && e.stderr.is_finite());
}

// ---- fields ----

fn mode_sum(b: &BoxSpec, eta: f64) -> f64 {
    let n = b.n() as i64;
    let k1: Vec<f64> = (0..n).map(|j| if j <= n / 2 { j } else { j - n } as f64).collect();
    let xi = |k: f64, a: usize| 2.0 * PI * k / b.side(a);
    match b.dim() {
        1 => k1.iter().map(|&k| (1.0 + xi(k, 0).abs()).powf(2.0 * eta)).sum(),
        _ => k1
            .iter()
            .flat_map(|&k| k1.iter().map(move |&l| (k, l)))
            .map(|(k, l)| (1.0 + xi(k, 0).hypot(xi(l, 1))).powf(2.0 * eta))
            .sum(),
    }
}

#[test]
fn white_noise_pairs_to_the_l2_norm() {
    let b = BoxSpec::new(1, 1.0, 32).unwrap();
    let cos = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
    let rng = RngStream::new(21, 0);
    let sq: Vec<f64> = (0..10_000u64)
        .map(|j| sample_white_noise(&b, rng.child(j)).inner(&cos).unwrap().powi(2))
        .collect();
    let m = sq.iter().sum::<f64>() / sq.len() as f64;
    assert!(rel(m, 0.5) < 0.05, "E<xi, cos>^2 = {m}");
}

#[test]
fn white_noise_negative_norm_matches_mode_sum() {
    for (d, n) in [(1, 256), (2, 32)] {
        let b = BoxSpec::new(d, 4.0, n).unwrap();
        let eta = -(d as f64 / 2.0 + 0.25);
        let rng = RngStream::new(22, d as u64);
        let sq: Vec<f64> = (0..2000u64)
            .map(|j| {
                let s = sobolev_norm(&sample_white_noise(&b, rng.child(j)), eta);
                assert!(s.is_finite());
                s * s
            })
            .collect();
        let m = sq.iter().sum::<f64>() / sq.len() as f64;
        let exact = mode_sum(&b, eta);
        assert!(rel(m, exact) < 0.05, "d = {d}: mean norm^2 {m}, mode sum {exact}");
    }
}

#[test]
fn white_noise_positive_norm_diverges_like_n_to_the_d() {
    for d in [1usize, 2] {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for n in [32usize, 64, 128] {
            let b = BoxSpec::new(d, 4.0, n).unwrap();
            let rng = RngStream::new(23, n as u64);
            let draws = 20;
            let m = (0..draws).map(|j| sobolev_norm(&sample_white_noise(&b, rng.child(j)), d as f64 / 2.0)).sum::<f64>()
                / draws as f64;
            x.push((n as f64).ln());
            y.push(m.ln());
        }
        let (slope, _) = fit_line(&x, &y);
        assert!((slope - d as f64).abs() < 0.15, "d = {d}: growth exponent {slope}");
    }
}

#[test]
fn mollification_gap_shrinks_monotonically() {
    let b = BoxSpec::new(1, 8.0, 512).unwrap();
    let v = sample_white_noise(&b, RngStream::new(24, 0));
    let gaps: Vec<f64> = (1..=8)
        .map(|j| {
            let ve = mollify(&v, MollifierSpec::gaussian(2f64.powi(-j))).unwrap();
            sobolev_norm(&v.sub(&ve).unwrap(), -0.75)
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

fn spread(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max) / xs.iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn convolution_bound_constant_is_stable_in_n() {
    let eta = 0.75;
    let cs: Vec<f64> = [64usize, 128, 256]
        .iter()
        .map(|&n| {
            let b = BoxSpec::new(1, 4.0, n).unwrap();
            let g = GridField::from_fn(&b, |x| (-4.0 * (x[0] - 2.0).powi(2)).exp());
            let gn = sobolev_norm(&SpectralField::from_grid(&g), eta + 0.5 + 0.1);
            let rng = RngStream::new(25, n as u64);
            (0..20u64)
                .map(|j| {
                    let v = sample_white_noise(&b, rng.child(j));
                    convolve(&v, &g).unwrap().sup_norm() / (sobolev_norm(&v, -eta) * gn)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(cs.iter().all(|c| c.is_finite()) && spread(&cs) < 2.0, "{cs:?}");
}

#[test]
fn multiplication_bound_constant_is_stable_in_n() {
    let eta = 0.75;
    let cs: Vec<f64> = [64usize, 128, 256]
        .iter()
        .map(|&n| {
            let b = BoxSpec::new(1, 4.0, n).unwrap();
            let u = GridField::from_fn(&b, |x| 1.0 + 0.5 * (PI * x[0] / 2.0).cos() + 0.25 * (PI * x[0]).sin());
            let cu = c1_norm(&u);
            let rng = RngStream::new(26, n as u64);
            (0..20u64)
                .map(|j| {
                    let v = sample_white_noise(&b, rng.child(j));
                    sobolev_norm(&multiply(&u, &v).unwrap(), -eta - 0.1) / (cu * sobolev_norm(&v, -eta))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(cs.iter().all(|c| c.is_finite()) && spread(&cs) < 2.0, "{cs:?}");
}

#[test]
fn interpolation_is_second_order() {
    let f = |x: f64| (6.0 * PI * x).cos();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for n in [64usize, 128, 256] {
        let b = BoxSpec::new(1, 1.0, n).unwrap();
        let g = GridField::from_fn(&b, |p| f(p[0]));
        let err = (0..997)
            .map(|i| {
                let p = i as f64 / 997.0;
                (interpolate(&b, g.values(), &[p]) - f(p)).abs()
            })
            .fold(0.0, f64::max);
        x.push((n as f64).ln());
        y.push(err.ln());
    }
    let (slope, _) = fit_line(&x, &y);
    assert!((slope + 2.0).abs() < 0.1, "slope {slope}");
}

// ---- localtime ----

#[test]
fn mass_regularity_of_a_very_rough_path() {
    let h = 0.05;
    let g = TimeGrid::new(1.0, 14).unwrap();
    let b = BoxSpec::new(1, 8.0, 512).unwrap();
    let pairs = dyadic_pairs(1.0, 2..=8, &[0.0, 0.25, 0.5]);
    let rng = RngStream::new(31, 0);
    let gammas: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|j| {
            let p = sample_fbm(h, &g, 1, rng.child(j)).unwrap();
            let lt = local_time(&p, &b).unwrap();
            regularity_study(&lt, 0.0, &pairs, SpectralBand::resolved(h, g.dt())).unwrap().gamma_fit
        })
        .collect();
    let (m, _) = mean_stderr(&gammas);
    assert!(m >= 0.85, "mean gamma fit {m}");
}

/// E||L_{s,s+l}||^2 in H^lambda on a 1-d torus, restricted to |xi| <= band,
/// for fBm: E|L^(xi)|^2 = 2 int_0^l (l - tau) exp(-xi^2 tau^(2H) / 2) dtau,
/// integrated after tau = l y^10 (smooths the tau^(2H) cusp).
fn expected_lt_norm(h: f64, lambda: f64, b: &BoxSpec, l: f64, band: f64) -> f64 {
    let m = 20_000;
    let el2 = |xi: f64| {
        let f = |y: f64| {
            let tau = l * y.powi(10);
            (l - tau) * (-0.5 * xi * xi * tau.powf(2.0 * h)).exp() * 10.0 * l * y.powi(9)
        };
        let inner: f64 = (1..m).map(|i| f(i as f64 / m as f64)).sum();
        2.0 * (inner + 0.5 * (f(0.0) + f(1.0))) / m as f64
    };
    let total: f64 = b
        .xi_norms()
        .iter()
        .filter(|&&x| x <= band)
        .map(|&x| (1.0 + x).powf(2.0 * lambda) * el2(x))
        .sum();
    (total / b.volume()).sqrt()
}

#[test]
fn banded_regularity_fit_matches_the_exact_expected_norm() {
    let (h, lambda) = (0.1, 2.0);
    let g = TimeGrid::new(1.0, 14).unwrap();
    let b = BoxSpec::new(1, 8.0, 512).unwrap();
    let band = SpectralBand::resolved(h, g.dt());
    let SpectralBand::Limit(limit) = band else { unreachable!() };
    let x: Vec<f64> = (2..=8).map(|j| -(j as f64) * 2f64.ln()).collect();
    let exact = |lim: f64| {
        let y: Vec<f64> = (2..=8).map(|j| expected_lt_norm(h, lambda, &b, 2f64.powi(-j), lim).ln()).collect();
        fit_line(&x, &y).0
    };
    let (exact_banded, exact_full) = (exact(limit), exact(f64::INFINITY));
    // Frozen: over these scales the exact exponent is 0.80, above the
    // asymptotic 0.75 because (1 + |xi|) is far from |xi| at |xi| ~ 2.
    assert!((exact_full - 0.802).abs() < 0.005, "exact full-band exponent {exact_full}");

    let pairs = dyadic_pairs(1.0, 2..=8, &[0.0, 0.25, 0.5]);
    let rng = RngStream::new(32, 0);
    let fits: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|j| {
            let p = sample_fbm(h, &g, 1, rng.child(j)).unwrap();
            regularity_study(&local_time(&p, &b).unwrap(), lambda, &pairs, band).unwrap().gamma_fit
        })
        .collect();
    let (m, se) = mean_stderr(&fits);
    assert!((m - exact_banded).abs() < 3.0 * se + 0.02, "banded fit {m} +- {se}, exact {exact_banded}");
}

// ---- sewing ----

/// E[(S_l - S_{l-1})^2] for the Young germ w_s (w'_t - w'_s) on [0, 1]
/// with independent fBm w, w'. The level-l correction is
/// sum_i (w_{m_i} - w_{u_i}) (w'_{v_i} - w'_{m_i}) over the 2^(l-1)
/// parent intervals, and both half increments are stationary, so the
/// second moment is sum_k (K - |k|) gamma(k)^2 with gamma the half-step
/// increment covariance at lag k parents.
fn young_correction_rms(h: f64, l: u32) -> f64 {
    let k_par = 1usize << (l - 1);
    let step = 1.0 / k_par as f64;
    let p = |x: f64| x.abs().powf(2.0 * h);
    let gamma = |k: f64| 0.5 * (p(k * step + 0.5 * step) + p(k * step - 0.5 * step) - 2.0 * p(k * step));
    let mut s = k_par as f64 * gamma(0.0).powi(2);
    for k in 1..k_par {
        s += 2.0 * (k_par - k) as f64 * gamma(k as f64).powi(2);
    }
    s.sqrt()
}

#[test]
fn young_germ_corrections_follow_the_exact_covariance() {
    let h = 0.8;
    let levels: Vec<u32> = (6..=12).collect();
    let x: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
    let oracle: Vec<f64> = levels.iter().map(|&l| young_correction_rms(h, l).log2()).collect();
    let oracle_ratio = 2f64.powf(fit_line(&x, &oracle).0);
    // Frozen from the covariance sum above; corrections scale like the step.
    assert!((oracle_ratio - 0.5).abs() < 0.01, "oracle ratio {oracle_ratio}");

    let g = TimeGrid::new(1.0, 12).unwrap();
    let rng = RngStream::new(41, 0);
    let mut sq = vec![0.0; levels.len()];
    for j in 0..20u64 {
        let p = sample_fbm(h, &g, 2, rng.child(j)).unwrap();
        let v = p.values().to_vec();
        let germ = FnGerm::new(g.clone(), move |s, t| v[2 * s] * (v[2 * t + 1] - v[2 * s + 1]));
        let r = sew(&germ, 0, g.steps(), 12, 0.0).unwrap();
        for (q, &l) in levels.iter().enumerate() {
            sq[q] += (r.history[l as usize] - r.history[l as usize - 1]).powi(2) / 20.0;
        }
    }
    let measured: Vec<f64> = sq.iter().map(|s| 0.5 * s.log2()).collect();
    let ratio = 2f64.powf(fit_line(&x, &measured).0);
    assert!((ratio - oracle_ratio).abs() < 0.15, "measured ratio {ratio}, oracle {oracle_ratio}");
}

struct GermFixture {
    box_: BoxSpec,
    shift: pamshift::SamplePath,
    w: pamshift::SamplePath,
    t: f64,
}

fn germ_fixture(n: usize, seed: u64) -> GermFixture {
    let g = TimeGrid::new(0.1, 8).unwrap();
    let box_ = BoxSpec::new(1, 8.0, n).unwrap();
    let shift = sample_fbm(0.2, &g, 1, RngStream::new(seed, 1)).unwrap();
    let w = sample_bm(&g, 1, &[0.0], RngStream::new(seed, 3)).unwrap();
    GermFixture { box_, shift, w, t: 0.1 }
}

#[test]
fn mollified_germs_converge_after_sewing() {
    let fx = germ_fixture(256, 42);
    let v = sample_white_noise(&fx.box_, RngStream::new(42, 2));
    let lt = local_time(&fx.shift, &fx.box_).unwrap();
    let a = build_germ(&v, &lt, &fx.w, fx.t).unwrap();
    // Same width ladder as the mollification Cauchy study. At 2^-1 -> 2^-2
    // both widths already drop the dominant high modes and the gap stalls.
    let seq: Vec<LocalTimeGerm> = (2..=7)
        .map(|n| build_germ(&mollify(&v, MollifierSpec::gaussian(2f64.powi(-n))).unwrap(), &lt, &fx.w, fx.t).unwrap())
        .collect();
    let refs: Vec<&dyn Germ> = seq.iter().map(|g| g as &dyn Germ).collect();
    let beta = a.exponents().beta;
    let rep = sewing_convergence_check(&a, &refs, 0.5, beta, 8).unwrap();
    assert!(rep.sewn_gap_ratios.iter().all(|&r| r < 0.9), "{:?}", rep.sewn_gap_ratios);
}

#[test]
fn difference_germs_converge_to_the_derivative_germ() {
    let fx = germ_fixture(4096, 43);
    let v = mollify(&sample_white_noise(&fx.box_, RngStream::new(43, 2)), MollifierSpec::gaussian(0.1)).unwrap();
    let lt = local_time(&fx.shift, &fx.box_).unwrap();
    let t_index = fx.shift.grid().index_of(fx.t).unwrap();
    let base = LocalTimeGerm::new(
        Arc::new(GermCache::new(&v, &lt, t_index).unwrap()),
        fx.w.values()[..=t_index].to_vec(),
        t_index,
    )
    .unwrap();
    let dx = build_germ(&v.derivative(0, 1), &lt, &fx.w, fx.t).unwrap();
    let seq: Vec<StencilGerm> = (2..=6).map(|n| StencilGerm::central(base.clone(), 1, 2f64.powi(-n)).unwrap()).collect();
    let refs: Vec<&dyn Germ> = seq.iter().map(|g| g as &dyn Germ).collect();
    let rep = sewing_convergence_check(&dx, &refs, 0.5, dx.exponents().beta, 8).unwrap();
    let gaps = &rep.sewn_gaps;
    assert!(rep.sewn_gaps_nonincreasing, "{gaps:?}");
    assert!(gaps[gaps.len() - 1] < 0.05 * gaps[0], "{gaps:?}");
}

// ---- feynman_kac ----

fn smooth_fixture(seed: u64, level: u32, n: usize) -> (SpectralField, pamshift::SamplePath, BoxSpec) {
    let b = BoxSpec::new(1, 8.0, n).unwrap();
    let v = mollify(&sample_white_noise(&b, RngStream::new(seed, 2)), MollifierSpec::gaussian(0.1)).unwrap();
    let shift = sample_fbm(0.2, &TimeGrid::new(0.1, level).unwrap(), 1, RngStream::new(seed, 1)).unwrap();
    (v, shift, b)
}

#[test]
fn sewing_and_riemann_estimators_agree_on_a_smooth_potential() {
    let (v, shift, b) = smooth_fixture(51, 8, 512);
    let f = SpectralField::from_fn(&b, |x| 1.0 + 0.5 * (PI * x[0] / 4.0).cos());
    let solver = FkSolver::new(&v, &shift).unwrap();
    let probes = vec![Probe { t_index: 256, x: vec![0.3] }];
    let base = SolveOptions::default().with_paths(10_000);
    let rng = RngStream::new(51, 3);
    let a = solver.samples(&f, &probes, &base.with_mode(Mode::Sewing), rng).unwrap();
    let r = solver.samples(&f, &probes, &base.with_mode(Mode::Riemann), rng).unwrap();
    let ((ma, sa), (mr, sr)) = (a.estimate(0), r.estimate(0));
    let gap = (ma - mr).abs();
    assert!(gap < 3.0 * sa.hypot(sr) + 1e-3, "sewing {ma}, riemann {mr}");
}

#[test]
fn derivative_at_h_and_half_h_agree() {
    let b = BoxSpec::new(1, 1.0, 128).unwrap();
    let g = TimeGrid::new(0.1, 8).unwrap();
    let shift = sample_fbm(0.2, &g, 1, RngStream::new(52, 1)).unwrap();
    let solver = FkSolver::new(&SpectralField::zeros(&b), &shift).unwrap();
    let f = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
    let opts = SolveOptions::default().with_paths(10_000);
    let est = |h: f64| {
        let spec = DerivativeSpec { order: 1, h, t_index: 256, x: vec![0.2], tolerance: 1.0 };
        spatial_derivative(&solver, &f, &spec, &opts, RngStream::new(52, 3)).unwrap()
    };
    let h = 2f64.powi(-6);
    let (a, c) = (est(h), est(h / 2.0));
    // |u'''| <= (2 pi)^3 for the heat flow of cos(2 pi x).
    let trend = (2.0 * PI).powi(3) * h * h / 6.0;
    let gap = (a.value - c.value).abs();
    assert!(gap <= 3.0 * (a.stderr + c.stderr) + trend, "{} vs {}", a.value, c.value);
}

#[test]
fn fd_oracle_matches_riemann_monte_carlo() {
    let (v, shift, b) = smooth_fixture(53, 8, 1024);
    let g = shift.grid().clone();
    let f = SpectralField::from_fn(&b, |x| 1.0 + 0.5 * (PI * x[0] / 4.0).cos());
    let fd = fd_solve(&v, &shift, &f, &g, &b).unwrap();
    let probes: Vec<Probe> = [(128usize, 0.0), (128, 2.0), (128, 4.0), (128, 6.0), (256, 1.0), (256, 3.0), (256, 5.0), (256, 7.0)]
        .iter()
        .map(|&(i, x)| Probe { t_index: i, x: vec![x] })
        .collect();
    let solver = FkSolver::new(&v, &shift).unwrap();
    let opts = SolveOptions { substeps: 8, ..SolveOptions::default().with_paths(100_000).with_mode(Mode::Riemann) };
    let mc = solver.samples(&f, &probes, &opts, RngStream::new(53, 3)).unwrap();
    for (q, p) in probes.iter().enumerate() {
        let (m, se) = mc.estimate(q);
        let u = fd.at(p.t_index).evaluate(&p.x);
        assert!((m - u).abs() < 3.0 * se + 1e-3, "probe {p:?}: fd {u}, mc {m} +- {se}");
    }
}

#[test]
fn fd_oracle_is_second_order_in_time() {
    let b = BoxSpec::new(1, 1.0, 64).unwrap();
    let v = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos() + 0.5 * (4.0 * PI * x[0]).sin());
    let f = SpectralField::from_fn(&b, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos());
    let fine = TimeGrid::new(0.1, 10).unwrap();
    let shift = pamshift::SamplePath::from_fn(fine.clone(), 1, |t, x| x[0] = 0.5 * (20.0 * t).sin()).unwrap();
    let reference = fd_solve(&v, &shift, &f, &fine, &b).unwrap();
    let u_ref = reference.at(fine.steps());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for m in 3..=6 {
        let g = fine.coarsen(m).unwrap();
        let u = fd_solve(&v, &shift, &f, &g, &b).unwrap();
        x.push(m as f64);
        y.push(u.at(g.steps()).sub(u_ref).unwrap().sup_norm().log2());
    }
    let (slope, _) = fit_line(&x, &y);
    assert!((slope + 2.0).abs() < 0.3, "order {}", -slope);
}

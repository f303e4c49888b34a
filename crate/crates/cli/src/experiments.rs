//! One function per subcommand. Each returns its results, the verdicts
//! against the configured tolerances and plot-ready tables; writing them is
//! left to the caller.
//!
//! Random streams: every object draws from `RngStream::new(seed, stream)`
//! with a fixed stream per purpose, and per-realisation children below it.

use std::f64::consts::PI;
use std::sync::Arc;

use pamshift::feynman_kac::{
    germ_level_derivative, hurst_bound, identification_gap_with, mollification_cauchy, solution_batches,
    spatial_derivative, CauchySpec, DerivativeSpec, FkSolver, GermCache, LocalTimeGerm, Probe, ProbeSet, SolveOptions,
};
use pamshift::fields::{interpolate, mollify, sample_white_noise, MollifierSpec};
use pamshift::localtime::{
    dyadic_pairs, gamma_bound, local_time, occupation_residual_with, regularity_study, OccupationOptions, SpectralBand,
};
use pamshift::paths::exp_moment_estimate;
use pamshift::pde_oracle::{fd_solve, weak_residual, SolutionField};
use pamshift::sewing::{sew, sew_to_grid, FnGerm};
use pamshift::stats::mean_stderr;
use pamshift::{sample_bm, sample_fbm, BoxSpec, Error, GridField, Result, RngStream, SpectralField, TimeGrid};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, InitialKind, PotentialKind};
use crate::report::{num, SeedStream, Table, Verdict};

pub const SUBCOMMANDS: [&str; 10] = [
    "hurst-bound",
    "localtime-study",
    "occupation-check",
    "sewing-audit",
    "identify",
    "solve",
    "mollify-cauchy",
    "derivative-study",
    "weak-residual",
    "expmoment",
];

const SHIFT: u64 = 1;
const NOISE: u64 = 2;
const BROWNIAN: u64 = 3;

/// Everything a subcommand produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub criterion: &'static str,
    pub results: Value,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
    pub seeds: Vec<SeedStream>,
    /// Lines for standard output.
    pub stdout: Vec<String>,
}

impl Outcome {
    fn new(criterion: &'static str) -> Self {
        Self {
            criterion,
            results: Value::Null,
            verdicts: Vec::new(),
            tables: Vec::new(),
            seeds: Vec::new(),
            stdout: Vec::new(),
        }
    }

    fn stream(&mut self, cfg: &ExperimentConfig, purpose: &str, stream: u64) -> RngStream {
        let seed = cfg.experiment.seed;
        self.seeds.push(SeedStream {
            purpose: purpose.into(),
            seed,
            stream,
        });
        RngStream::new(seed, stream)
    }
}

/// Acceptance criterion checked by a subcommand.
pub fn criterion(subcommand: &str) -> Option<&'static str> {
    Some(match subcommand {
        "hurst-bound" => "AC6",
        "localtime-study" => "AC3",
        "occupation-check" => "AC4",
        "sewing-audit" => "AC7",
        "identify" => "AC2",
        "solve" => "AC1",
        "mollify-cauchy" => "AC5",
        "derivative-study" => "AC8",
        "weak-residual" => "AC9",
        "expmoment" => "AC10",
        _ => return None,
    })
}

pub fn run_experiment(subcommand: &str, cfg: &ExperimentConfig) -> Result<Outcome> {
    match subcommand {
        "hurst-bound" => hurst(cfg),
        "localtime-study" => localtime_study(cfg),
        "occupation-check" => occupation_check(cfg),
        "sewing-audit" => sewing_audit(cfg),
        "identify" => identify(cfg),
        "solve" => solve(cfg),
        "mollify-cauchy" => mollify_cauchy(cfg),
        "derivative-study" => derivative_study(cfg),
        "weak-residual" => weak_residual_study(cfg),
        "expmoment" => expmoment(cfg),
        other => Err(Error::Parameter(format!("unknown subcommand `{other}`"))),
    }
}

fn point(x0: f64, d: usize) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = x0;
    x
}

fn model_box(cfg: &ExperimentConfig) -> Result<BoxSpec> {
    BoxSpec::new(cfg.model.d, cfg.model.side, cfg.model.nodes)
}

fn model_grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.model.horizon(), cfg.model.level)
}

fn options(cfg: &ExperimentConfig) -> SolveOptions {
    let s = &cfg.solver;
    SolveOptions {
        n_paths: s.paths,
        mode: s.mode,
        substeps: s.substeps,
        antithetic: s.antithetic,
        delta: s.delta,
    }
}

fn refinement_ladder(cfg: &ExperimentConfig) -> Result<Vec<(u32, usize)>> {
    let s = &cfg.study;
    if s.levels.len() < 2 || s.nodes.len() != s.levels.len() {
        return Err(Error::Parameter("study.levels and study.nodes must list at least two matching rungs".into()));
    }
    let ladder: Vec<(u32, usize)> = s.levels.iter().copied().zip(s.nodes.iter().copied()).collect();
    if ladder.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Parameter("study.levels must increase".into()));
    }
    Ok(ladder)
}

/// The configured potential; `mollified` applies potential.epsilon when positive.
fn potential(cfg: &ExperimentConfig, b: &BoxSpec, rng: RngStream, mollified: bool) -> Result<SpectralField> {
    let p = &cfg.potential;
    let v = match p.kind {
        PotentialKind::Zero => SpectralField::zeros(b),
        PotentialKind::Constant => SpectralField::constant(b, p.value),
        PotentialKind::Cos1 => SpectralField::from_fn(b, |x| p.value * (2.0 * PI * x[0]).cos()),
        PotentialKind::WhiteNoise => sample_white_noise(b, rng),
    };
    if mollified && p.epsilon > 0.0 && p.kind == PotentialKind::WhiteNoise {
        return mollify(
            &v,
            MollifierSpec {
                epsilon: p.epsilon,
                kind: p.mollifier,
            },
        );
    }
    Ok(v)
}

fn initial_value(kind: InitialKind, x: &[f64]) -> f64 {
    let c = (2.0 * PI * x[0]).cos();
    match kind {
        InitialKind::Cos1 => c,
        InitialKind::One => 1.0,
        InitialKind::OnePlusCos1 => 1.0 + c,
    }
}

fn initial(cfg: &ExperimentConfig, b: &BoxSpec) -> SpectralField {
    let k = cfg.initial.f;
    SpectralField::from_fn(b, move |x| initial_value(k, x))
}

/// d^order/dx_0^order of the heat flow of f at time t, times exp(-c t) for
/// V = c. None when V is not constant.
fn closed_form(cfg: &ExperimentConfig, t: f64, x: &[f64], order: u32) -> Option<f64> {
    let c = match cfg.potential.kind {
        PotentialKind::Zero => 0.0,
        PotentialKind::Constant => cfg.potential.value,
        _ => return None,
    };
    let z = 2.0 * PI * x[0];
    let decay = (-2.0 * PI * PI * t).exp();
    // d^k cos(z) / dx^k = (2 pi)^k cos(z + k pi / 2)
    let dcos = (2.0 * PI).powi(order as i32) * (z + order as f64 * PI / 2.0).cos();
    let constant = if order == 0 { 1.0 } else { 0.0 };
    let heat = match cfg.initial.f {
        InitialKind::Cos1 => decay * dcos,
        InitialKind::One => constant,
        InitialKind::OnePlusCos1 => constant + decay * dcos,
    };
    Some((-c * t).exp() * heat)
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn hurst(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC6");
    let m = &cfg.model;
    let b = hurst_bound(m.eta, m.d, m.order)?;
    out.stdout.push(num(b.bound));
    // White-noise existence regime eta = d/2, n = 0.
    out.verdicts.push(Verdict::holds("white_noise_d1_is_1/4", hurst_bound(0.5, 1, 0)?.bound == 0.25));
    out.verdicts.push(Verdict::holds("white_noise_d2_is_1/6", hurst_bound(1.0, 2, 0)?.bound == 1.0 / 6.0));
    // Weak regime n = ceil(eta): 1 / (2 + 2 eta + 2 ceil(eta) + d), exact for dyadic eta.
    let mut table = Table::new("bounds", &["eta", "d", "n", "bound", "expected"]);
    let mut weak_ok = true;
    for &eta in &[0.0f64, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0] {
        for d in 1..=3usize {
            let n = eta.ceil() as u32;
            let got = hurst_bound(eta, d, n)?.bound;
            let expected = 1.0 / (2.0 + 2.0 * eta + 2.0 * n as f64 + d as f64);
            weak_ok &= got == expected;
            table.push(vec![num(eta), d.to_string(), n.to_string(), num(got), num(expected)]);
        }
    }
    out.verdicts.push(Verdict::holds("weak_regime_exact", weak_ok));
    out.results = json!({
        "budget": b,
        "hurst": m.hurst,
        "admits_hurst": b.admits(m.hurst),
    });
    out.tables.push(table);
    Ok(out)
}

fn localtime_study(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC3");
    let (m, s) = (&cfg.model, &cfg.study);
    let grid = model_grid(cfg)?;
    let b = model_box(cfg)?;
    let rng = out.stream(cfg, "fBm paths", SHIFT);
    let n = grid.steps();
    let pairs = dyadic_pairs(grid.horizon(), s.scales[0]..=s.scales[1], &s.starts);
    let band = if s.band == "full" {
        SpectralBand::Full
    } else {
        SpectralBand::resolved(m.hurst, grid.dt())
    };
    let rows: Vec<(f64, f64, f64, f64)> = (0..s.realisations)
        .into_par_iter()
        .map(|r| {
            let path = sample_fbm(m.hurst, &grid, m.d, rng.child(r as u64))?;
            let lt = local_time(&path, &b)?;
            let mass_error = [n / 4, n / 2, 3 * n / 4, n]
                .iter()
                .map(|&i| (lt.total_mass(i) - grid.time(i)).abs())
                .fold(0.0, f64::max);
            let st = regularity_study(&lt, s.lambda, &pairs, band)?;
            Ok((st.gamma_fit, st.gamma_fit_full_band, mass_error, lt.range_ratio()))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new("paths", &["path", "gamma_fit", "gamma_fit_full_band", "mass_error", "range_ratio"]);
    for (r, row) in rows.iter().enumerate() {
        table.push(vec![r.to_string(), num(row.0), num(row.1), num(row.2), num(row.3)]);
    }
    let gammas: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (mean_gamma, se_gamma) = mean_stderr(&gammas);
    let max_mass = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    out.verdicts.push(Verdict::at_least("mean_gamma_fit", mean_gamma, s.gamma_min));
    out.verdicts.push(Verdict::at_most("max_mass_error", max_mass, s.tolerance));
    out.results = json!({
        "mean_gamma_fit": mean_gamma,
        "stderr_gamma_fit": se_gamma,
        "mean_gamma_fit_full_band": mean_stderr(&rows.iter().map(|r| r.1).collect::<Vec<_>>()).0,
        "gamma_bound": gamma_bound(m.hurst, s.lambda, m.d),
        "band": band,
        "pairs": pairs.len(),
        "max_mass_error": max_mass,
    });
    out.tables.push(table);
    Ok(out)
}

fn occupation_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC4");
    let (m, s) = (&cfg.model, &cfg.study);
    let ladder = refinement_ladder(cfg)?;
    let top = ladder.last().unwrap().0;
    let fine = TimeGrid::new(m.horizon(), top)?;
    let rng = out.stream(cfg, "fBm paths", SHIFT);
    let opts = OccupationOptions::default();
    let residuals: Vec<Vec<f64>> = (0..s.realisations)
        .into_par_iter()
        .map(|r| {
            let path = sample_fbm(m.hurst, &fine, m.d, rng.child(r as u64))?;
            ladder
                .iter()
                .map(|&(level, nodes)| {
                    let b = BoxSpec::new(m.d, m.side, nodes)?;
                    let f = initial(cfg, &b);
                    occupation_residual_with(&path.subsample(level)?, &f, m.t, &b, opts)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new("residuals", &["path", "level", "nodes", "residual"]);
    for (r, row) in residuals.iter().enumerate() {
        for (k, &(level, nodes)) in ladder.iter().enumerate() {
            table.push(vec![r.to_string(), level.to_string(), nodes.to_string(), num(row[k])]);
        }
    }
    let rung = |k: usize| residuals.iter().map(|row| row[k]).collect::<Vec<_>>();
    let rmss: Vec<f64> = (0..ladder.len()).map(|k| rms(&rung(k))).collect();
    let last = rung(ladder.len() - 1).into_iter().fold(0.0, f64::max);
    out.verdicts.push(Verdict::at_most("max_residual_over_t", last / m.t, s.tolerance));
    let ratios: Vec<f64> = rmss.windows(2).map(|w| w[1] / w[0]).collect();
    for (k, r) in ratios.iter().enumerate() {
        out.verdicts.push(Verdict::below(&format!("rms_ratio_{}_to_{}", ladder[k].0, ladder[k + 1].0), *r, s.ratio));
    }
    out.results = json!({
        "ladder": ladder,
        "rms_residual": rmss,
        "ratios": ratios,
        "max_residual_finest": last,
        "occupation_options": opts,
    });
    out.tables.push(table);
    Ok(out)
}

/// Integer-valued additive germ: every partial sum is exact in binary.
fn additive_values(i: usize) -> f64 {
    ((i * i + 7 * i) % 1021) as f64 / 64.0 - 3.0
}

fn sewing_audit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC7");
    let (m, s) = (&cfg.model, &cfg.study);
    let grid = model_grid(cfg)?;
    let n = grid.steps();
    let b = model_box(cfg)?;

    let additive = FnGerm::new(grid.clone(), |a, c| additive_values(c) - additive_values(a));
    let mut additive_dev = 0.0f64;
    for &(a, c) in &[(0, n), (1, n - 3), (n / 3, n / 2 + 5), (7, 8)] {
        let r = sew(&additive, a, c, grid.level(), 0.0)?;
        let exact = additive_values(c) - additive_values(a);
        additive_dev = additive_dev.max(r.history.iter().map(|h| (h - exact).abs()).fold(0.0, f64::max));
    }
    out.verdicts.push(Verdict::at_most("additive_identity_deviation", additive_dev, 0.0));

    let v = potential(cfg, &b, out.stream(cfg, "white noise", NOISE), true)?;
    let shift_rng = out.stream(cfg, "fBm shifts", SHIFT);
    let bm_rng = out.stream(cfg, "Brownian paths", BROWNIAN);
    let intervals = [(0, n), (0, n / 2), (n / 4, 3 * n / 4), (n / 3, n)];
    let splits = [(0, n / 2, n), (0, n / 4, n), (n / 4, n / 2, 3 * n / 4)];
    let tol = s.tolerance;
    let per_shift = cfg.solver.paths;
    let mut table = Table::new(
        "defects",
        &["shift", "path", "s", "t", "sewn", "germ", "defect", "defect_bound", "delta_sup"],
    );
    let mut checked = 0usize;
    let mut held = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut additivity = 0.0f64;
    // Sums that stopped on level agreement before reaching the grid.
    let mut early_stops = 0usize;
    for r in 0..s.realisations {
        let wh = sample_fbm(m.hurst, &grid, m.d, shift_rng.child(r as u64))?;
        let lt = local_time(&wh, &b)?;
        let cache = Arc::new(GermCache::new(&v, &lt, n)?);
        let rows: Vec<(Vec<[f64; 5]>, f64, usize)> = (0..per_shift)
            .into_par_iter()
            .map(|p| {
                let bm = sample_bm(&grid, m.d, &vec![0.0; m.d], bm_rng.child((r * per_shift + p) as u64))?;
                let germ = LocalTimeGerm::new(cache.clone(), bm.values().to_vec(), n)?.with_delta(cfg.solver.delta);
                let mut rows = Vec::new();
                for &(a, c) in &intervals {
                    let res = sew_to_grid(&germ, a, c)?;
                    rows.push([res.value, res.history[0], (res.value - res.history[0]).abs(), res.defect_bound, res.delta_sup]);
                }
                let mut add = 0.0f64;
                let mut early = 0usize;
                for &(a, u, c) in &splits {
                    let parts = [(a, c), (a, u), (u, c)]
                        .iter()
                        .map(|&(x, y)| sew(&germ, x, y, grid.level(), tol))
                        .collect::<Result<Vec<_>>>()?;
                    early += parts.iter().filter(|p| p.converged).count();
                    add = add.max((parts[0].value - parts[1].value - parts[2].value).abs());
                }
                Ok((rows, add, early))
            })
            .collect::<Result<_>>()?;
        for (p, (rows, add, early)) in rows.into_iter().enumerate() {
            additivity = additivity.max(add);
            early_stops += early;
            for (k, row) in rows.iter().enumerate() {
                checked += 1;
                // Round-off slack only; the bound itself is not widened.
                if row[2] <= row[3] + 1e-12 * (1.0 + row[0].abs()) {
                    held += 1;
                }
                if row[3] > 0.0 {
                    worst_ratio = worst_ratio.max(row[2] / row[3]);
                }
                let (a, c) = intervals[k];
                let mut cells = vec![r.to_string(), p.to_string(), a.to_string(), c.to_string()];
                cells.extend(row.iter().map(|x| num(*x)));
                table.push(cells);
            }
        }
    }
    let fraction = held as f64 / checked as f64;
    out.verdicts.push(Verdict::at_least("defect_bound_fraction", fraction, 1.0));
    out.verdicts.push(Verdict::at_most("additivity_over_tol", additivity / tol, 2.0));
    out.results = json!({
        "additive_identity_deviation": additive_dev,
        "fixtures": checked,
        "defect_bound_held": held,
        "worst_defect_ratio": worst_ratio,
        "defect_constant": pamshift::sewing::defect_constant(1.0 + cfg.solver.delta / 2.0),
        "additivity_max_deviation": additivity,
        "additivity_early_stops": early_stops,
        "tol": tol,
    });
    out.tables.push(table);
    Ok(out)
}

fn identify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC2");
    let (m, s) = (&cfg.model, &cfg.study);
    let levels = s.levels.clone();
    if levels.len() < 2 || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("study.levels must list at least two increasing levels".into()));
    }
    let fine = TimeGrid::new(m.horizon(), *levels.last().unwrap())?;
    let b = model_box(cfg)?;
    let v = potential(cfg, &b, out.stream(cfg, "white noise", NOISE), true)?;
    let wh = sample_fbm(m.hurst, &fine, m.d, out.stream(cfg, "fBm shift", SHIFT))?;
    let bm_rng = out.stream(cfg, "Brownian paths", BROWNIAN);
    let solvers: Vec<FkSolver> = levels
        .iter()
        .map(|&l| FkSolver::new(&v, &wh.subsample(l)?))
        .collect::<Result<_>>()?;
    let gaps: Vec<Vec<(f64, f64, f64)>> = (0..cfg.solver.paths)
        .into_par_iter()
        .map(|p| {
            let w = sample_bm(&fine, m.d, &vec![0.0; m.d], bm_rng.child(p as u64))?;
            levels
                .iter()
                .zip(&solvers)
                .map(|(&l, solver)| {
                    let wl = w.subsample(l)?;
                    let ti = wl.grid().index_of(m.t)?;
                    let g = identification_gap_with(solver, &wl, ti, cfg.solver.substeps)?;
                    Ok((g.riemann, g.sewing, g.gap))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new("gaps", &["path", "level", "riemann", "sewing", "gap"]);
    for (p, row) in gaps.iter().enumerate() {
        for (k, g) in row.iter().enumerate() {
            table.push(vec![p.to_string(), levels[k].to_string(), num(g.0), num(g.1), num(g.2)]);
        }
    }
    let k_fine = levels.len() - 1;
    let within = gaps
        .iter()
        .filter(|row| row[k_fine].2 < s.tolerance * (1.0 + row[k_fine].0.abs()))
        .count();
    let rmss: Vec<f64> = (0..levels.len())
        .map(|k| rms(&gaps.iter().map(|row| row[k].2).collect::<Vec<_>>()))
        .collect();
    out.verdicts.push(Verdict::at_least("paths_within_tolerance", within as f64 / gaps.len() as f64, 1.0));
    let ratios: Vec<f64> = rmss.windows(2).map(|w| w[1] / w[0]).collect();
    for (k, r) in ratios.iter().enumerate() {
        out.verdicts.push(Verdict::below(&format!("gap_ratio_{}_to_{}", levels[k], levels[k + 1]), *r, s.ratio));
    }
    out.results = json!({
        "levels": levels,
        "rms_gap": rmss,
        "ratios": ratios,
        "paths_within": within,
        "paths": gaps.len(),
        "substeps": cfg.solver.substeps,
    });
    out.tables.push(table);
    Ok(out)
}

fn solve(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC1");
    let (m, s) = (&cfg.model, &cfg.study);
    let grid = model_grid(cfg)?;
    let b = model_box(cfg)?;
    let v = potential(cfg, &b, out.stream(cfg, "white noise", NOISE), true)?;
    let f = initial(cfg, &b);
    let ti = grid.index_of(m.t)?;
    let probes: Vec<Probe> = cfg
        .solver
        .x
        .iter()
        .map(|&x0| Probe {
            t_index: ti,
            x: point(x0, m.d),
        })
        .collect();
    let shift_rng = out.stream(cfg, "fBm shift", SHIFT);
    let bm_rng = out.stream(cfg, "Brownian paths", BROWNIAN);
    // Quenched: one shift. Annealed (exploratory): the estimate and the fd
    // reference are averaged over independent shifts, the stderr comes from
    // the spread of the per-shift means.
    let (runs, opts) = if cfg.solver.annealed {
        let r = s.realisations.max(2);
        let per = (cfg.solver.paths / r).max(2) & !1;
        (r, options(cfg).with_paths(per))
    } else {
        (1, options(cfg))
    };
    let mut per_shift = Vec::with_capacity(runs);
    let mut u_fd = None;
    let mut diagnostics = Vec::new();
    for r in 0..runs {
        let (srng, brng) = if cfg.solver.annealed {
            (shift_rng.child(r as u64), bm_rng.child(r as u64))
        } else {
            (shift_rng, bm_rng)
        };
        let wh = sample_fbm(m.hurst, &grid, m.d, srng)?;
        let samples = FkSolver::new(&v, &wh)?.samples(&f, &probes, &opts, brng)?;
        let fd = fd_solve(&v, &wh, &f, &grid, &b)?;
        let fd_at: Vec<f64> = probes.iter().map(|p| interpolate(&b, fd.at(ti).values(), &p.x)).collect();
        let est: Vec<(f64, f64)> = (0..probes.len()).map(|q| samples.estimate(q)).collect();
        per_shift.push((est, fd_at));
        diagnostics.push(samples.diagnostics);
        u_fd.get_or_insert_with(|| fd.at(ti).clone());
    }
    let u_fd = u_fd.expect("at least one shift");
    let mut table = Table::new("estimates", &["x", "estimate", "stderr", "reference", "fd"]);
    let mut estimates = Vec::new();
    for (q, p) in probes.iter().enumerate() {
        let (est, se) = if runs == 1 {
            per_shift[0].0[q]
        } else {
            mean_stderr(&per_shift.iter().map(|r| r.0[q].0).collect::<Vec<_>>())
        };
        let fd_x = per_shift.iter().map(|r| r.1[q]).sum::<f64>() / runs as f64;
        let reference = closed_form(cfg, m.t, &p.x, 0).unwrap_or(fd_x);
        // Tiny floor for the degenerate case of zero sample variance.
        let allowed = cfg.solver.sigmas * se + 1e-12;
        out.verdicts.push(Verdict::at_most(&format!("mc_deviation_x{}", p.x[0]), (est - reference).abs(), allowed));
        table.push(vec![num(p.x[0]), num(est), num(se), num(reference), num(fd_x)]);
        estimates.push(json!({"x": p.x, "estimate": est, "stderr": se, "reference": reference, "fd": fd_x}));
        out.stdout.push(format!("u({}, {:?}) = {} +- {}", m.t, p.x, num(est), num(se)));
    }
    let exact_available = closed_form(cfg, m.t, &point(0.0, m.d), 0).is_some();
    let mut fd_error = None;
    if exact_available {
        let err = (0..b.len())
            .map(|lin| {
                let x = b.node(lin);
                (u_fd.values()[lin] - closed_form(cfg, m.t, &x[..m.d], 0).unwrap()).abs()
            })
            .fold(0.0, f64::max);
        out.verdicts.push(Verdict::below("fd_max_error", err, s.tolerance));
        fd_error = Some(err);
    }
    out.results = json!({
        "t": m.t,
        "estimates": estimates,
        "reference": if exact_available { "closed form" } else { "fd_solve" },
        "fd_max_error": fd_error,
        "annealed_shifts": if cfg.solver.annealed { Some(runs) } else { None },
        "diagnostics": if runs == 1 { json!(diagnostics[0]) } else { json!(diagnostics) },
    });
    out.tables.push(table);
    Ok(out)
}

fn mollify_cauchy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC5");
    let (m, s) = (&cfg.model, &cfg.study);
    let grid = model_grid(cfg)?;
    let b = model_box(cfg)?;
    let v = potential(cfg, &b, out.stream(cfg, "white noise", NOISE), false)?;
    let f = initial(cfg, &b);
    let wh = sample_fbm(m.hurst, &grid, m.d, out.stream(cfg, "fBm shift", SHIFT))?;
    let spec = CauchySpec {
        epsilons: s.epsilons.clone(),
        kind: cfg.potential.mollifier,
        eta: m.eta,
    };
    let probes = ProbeSet::standard(&grid, m.t, s.probe_half_width, m.d)?;
    let tab = mollification_cauchy(&v, &spec, &wh, &f, &probes, &options(cfg), out.stream(cfg, "Brownian paths", BROWNIAN))?;
    let mut table = Table::new(
        "cauchy",
        &["eps_coarse", "eps_fine", "gap", "gap_stderr", "probe", "norm_diff", "ratio"],
    );
    for r in &tab.rows {
        table.push(vec![
            num(r.eps_coarse),
            num(r.eps_fine),
            num(r.gap),
            num(r.gap_stderr),
            r.probe.to_string(),
            num(r.norm_diff),
            num(r.ratio),
        ]);
    }
    out.verdicts.push(Verdict::holds("hurst_admissible", m.hurst < tab.hurst_bound));
    out.verdicts.push(Verdict::holds("gaps_strictly_decreasing", tab.gaps_strictly_decreasing));
    out.verdicts.push(Verdict::at_most("normalised_gap_spread", tab.ratio_spread, s.spread));
    out.results = serde_json::to_value(&tab).expect("table serialises");
    out.tables.push(table);
    Ok(out)
}

fn derivative_study(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC8");
    let (m, s) = (&cfg.model, &cfg.study);
    let grid = model_grid(cfg)?;
    let b = model_box(cfg)?;
    let f = initial(cfg, &b);
    let wh = sample_fbm(m.hurst, &grid, m.d, out.stream(cfg, "fBm shift", SHIFT))?;
    let configured = potential(cfg, &b, out.stream(cfg, "white noise", NOISE), true)?;
    let bm_rng = out.stream(cfg, "Brownian paths", BROWNIAN);
    let ti = grid.index_of(m.t)?;
    let opts = options(cfg);
    let sig = cfg.solver.sigmas;
    let mut zero_cfg = cfg.clone();
    zero_cfg.potential.kind = PotentialKind::Zero;
    let fixtures = [("zero", SpectralField::zeros(&b), &zero_cfg), ("configured", configured, cfg)];
    let mut table = Table::new(
        "derivatives",
        &["fixture", "x", "u_level", "u_stderr", "germ_level", "germ_stderr", "closed_form"],
    );
    let mut rows = Vec::new();
    for (name, v, fcfg) in &fixtures {
        let solver = FkSolver::new(v, &wh)?;
        for &x0 in &cfg.solver.x {
            let spec = DerivativeSpec {
                t_index: ti,
                x: point(x0, m.d),
                order: s.derivative_order,
                h: s.h,
                tolerance: s.tolerance,
            };
            let du = spatial_derivative(&solver, &f, &spec, &opts, bm_rng)?;
            let dg = germ_level_derivative(&solver, &f, &spec, &opts, bm_rng)?;
            let combined = sig * (du.stderr.powi(2) + dg.stderr.powi(2)).sqrt();
            out.verdicts.push(Verdict::at_most(
                &format!("{name}_u_vs_germ_x{x0}"),
                (du.value - dg.value).abs(),
                combined,
            ));
            let exact = closed_form(fcfg, m.t, &spec.x, s.derivative_order);
            if let Some(e) = exact {
                for (lvl, est) in [("u", &du), ("germ", &dg)] {
                    let rel = (est.value - e).abs() / e.abs();
                    out.verdicts.push(Verdict::at_most(&format!("{name}_{lvl}_rel_error_x{x0}"), rel, s.rel_tolerance));
                }
            }
            table.push(vec![
                name.to_string(),
                num(x0),
                num(du.value),
                num(du.stderr),
                num(dg.value),
                num(dg.stderr),
                exact.map(num).unwrap_or_default(),
            ]);
            rows.push(json!({"fixture": name, "x": x0, "u_level": du, "germ_level": dg, "closed_form": exact}));
        }
    }
    out.results = json!({"t": m.t, "order": s.derivative_order, "h": s.h, "rows": rows});
    out.tables.push(table);
    Ok(out)
}

fn mean_field(batches: &[SolutionField]) -> Result<SolutionField> {
    let first = &batches[0];
    let fields = (0..first.fields().len())
        .map(|i| {
            let b = first.at(i).grid_box().clone();
            let vals = (0..b.len())
                .map(|lin| batches.iter().map(|u| u.at(i).values()[lin]).sum::<f64>() / batches.len() as f64)
                .collect();
            GridField::new(b, vals)
        })
        .collect::<Result<_>>()?;
    SolutionField::new(first.grid().clone(), fields)
}

fn weak_residual_study(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC9");
    let (m, s) = (&cfg.model, &cfg.study);
    let ladder = refinement_ladder(cfg)?;
    let fine = model_grid(cfg)?;
    let b0 = model_box(cfg)?;
    let v0 = potential(cfg, &b0, out.stream(cfg, "white noise", NOISE), true)?;
    let f0 = initial(cfg, &b0);
    let side = m.side;
    // Low-mode torus test function for the refinement ladder.
    let phi_torus = SpectralField::from_fn(&b0, |x| {
        (2.0 * PI * x[0] / side).cos() + 0.5 * (4.0 * PI * x[0] / side).sin()
    });
    // Periodic Gaussian bump for the Monte Carlo check.
    let phi_bump = SpectralField::from_fn(&b0, |x| {
        let r2: f64 = x.iter().map(|&c| (c - side * (c / side).round()).powi(2)).sum();
        (-2.0 * r2).exp()
    });
    let shift_rng = out.stream(cfg, "fBm shifts", SHIFT);

    let mut table = Table::new("fd_ladder", &["shift", "level", "nodes", "residual"]);
    let mut residuals = Vec::new();
    // Sequential: the finest rung holds a full space-time solution.
    for r in 0..s.realisations {
        let wh = sample_fbm(m.hurst, &fine, m.d, shift_rng.child(r as u64))?;
        let mut row = Vec::new();
        for &(level, nodes) in &ladder {
            let bk = b0.with_n(nodes)?;
            let u = fd_solve(&v0, &wh, &f0, &fine.coarsen(level)?, &bk)?;
            let res = weak_residual(&u, &v0.resample(nodes)?, &wh, &phi_torus, m.t)?.residual;
            table.push(vec![r.to_string(), level.to_string(), nodes.to_string(), num(res)]);
            row.push(res);
        }
        residuals.push(row);
    }
    let rmss: Vec<f64> = (0..ladder.len())
        .map(|k| rms(&residuals.iter().map(|row| row[k]).collect::<Vec<_>>()))
        .collect();
    let ratios: Vec<f64> = rmss.windows(2).map(|w| w[1] / w[0]).collect();
    for (k, r) in ratios.iter().enumerate() {
        out.verdicts.push(Verdict::below(&format!("fd_ratio_{}_to_{}", ladder[k].0, ladder[k + 1].0), *r, s.ratio));
    }

    let wh = sample_fbm(m.hurst, &fine, m.d, shift_rng.child(0))?.subsample(s.fk_level)?;
    let solver = FkSolver::new(&v0, &wh)?;
    let coarse = TimeGrid::new(m.horizon(), s.coarse_level)?;
    let batches = solution_batches(
        &solver,
        &f0,
        &coarse,
        s.coarse_nodes,
        s.batches,
        &options(cfg),
        out.stream(cfg, "Brownian paths", BROWNIAN),
    )?;
    let mean = mean_field(&batches)?;
    let fd = fd_solve(&v0, &wh, &f0, wh.grid(), &b0)?;
    let fd_coarse = fd.subsample(s.coarse_level, s.coarse_nodes)?;
    let mut mc_table = Table::new(
        "monte_carlo",
        &["t", "fk_residual", "fk_stderr", "fd_residual", "fd_coarse_residual", "allowed"],
    );
    let mut mc_rows = Vec::new();
    for &t in &s.times {
        let per_batch: Vec<f64> = batches
            .iter()
            .map(|u| Ok(weak_residual(u, &v0, &wh, &phi_bump, t)?.signed))
            .collect::<Result<_>>()?;
        let (_, se) = mean_stderr(&per_batch);
        let fk = weak_residual(&mean, &v0, &wh, &phi_bump, t)?.signed;
        let r_fd = weak_residual(&fd, &v0, &wh, &phi_bump, t)?.signed;
        let r_coarse = weak_residual(&fd_coarse, &v0, &wh, &phi_bump, t)?.signed;
        // The coarse grid's quadrature error, measured on the fd solution.
        let budget = r_fd.abs() + r_coarse.abs();
        let allowed = cfg.solver.sigmas * se + budget;
        out.verdicts.push(Verdict::at_most(&format!("fk_residual_t{t}"), fk.abs(), allowed));
        mc_table.push(vec![num(t), num(fk), num(se), num(r_fd), num(r_coarse), num(allowed)]);
        mc_rows.push(json!({"t": t, "fk_residual": fk, "fk_stderr": se, "fd_residual": r_fd, "fd_coarse_residual": r_coarse}));
    }
    out.results = json!({
        "ladder": ladder,
        "rms_residual": rmss,
        "ratios": ratios,
        "monte_carlo": mc_rows,
    });
    out.tables.push(table);
    out.tables.push(mc_table);
    Ok(out)
}

fn expmoment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new("AC10");
    let (m, s) = (&cfg.model, &cfg.study);
    let rng = out.stream(cfg, "Brownian paths", BROWNIAN);
    let mut table = Table::new("moments", &["level", "mean", "stderr", "overflow", "mean_modulus"]);
    let mut ests = Vec::new();
    for (k, &level) in s.levels.iter().enumerate() {
        let grid = TimeGrid::new(m.horizon(), level)?;
        // Independent streams per level: the comparison assumes independence.
        let e = exp_moment_estimate(s.gamma, s.a, cfg.solver.paths, &grid, rng.child(k as u64))?;
        table.push(vec![
            level.to_string(),
            num(e.mean),
            num(e.stderr),
            e.overflow_count.to_string(),
            num(e.mean_modulus),
        ]);
        out.verdicts.push(Verdict::at_most(&format!("overflow_level_{level}"), e.overflow_count as f64, 0.0));
        ests.push(e);
    }
    for w in ests.windows(2).zip(s.levels.windows(2)) {
        let ((a, b), l) = ((&w.0[0], &w.0[1]), w.1);
        let allowed = cfg.solver.sigmas * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        out.verdicts.push(Verdict::at_most(&format!("levels_{}_{}_agree", l[0], l[1]), (a.mean - b.mean).abs(), allowed));
    }
    out.results = json!({"gamma": s.gamma, "a": s.a, "horizon": m.horizon(), "estimates": ests});
    out.tables.push(table);
    Ok(out)
}

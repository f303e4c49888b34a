use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::germ::{riemann_core, StencilGerm};
use super::hurst_bound;
use super::solver::{FkDiagnostics, FkSolver, Probe, SampleMatrix, SolveOptions};
use crate::error::{param, shape, Error, Result};
use crate::fields::{mollify, GridField, sobolev_norm, Mollifier, MollifierSpec, SpectralField, TrigEvaluator};
use crate::grid::TimeGrid;
use crate::localtime::local_time;
use crate::paths::{holder_modulus, PathLaw, SamplePath};
use crate::pde_oracle::SolutionField;
use crate::rng::RngStream;
use crate::sewing::{sew_to_grid, DEFAULT_DELTA};
use crate::stats::{fit_line, mean_stderr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationGap {
    pub riemann: f64,
    pub sewing: f64,
    pub gap: f64,
}

/// Classical integral against the sewn germ for one Brownian path `w`.
pub fn identification_gap(v: &SpectralField, wh: &SamplePath, w: &SamplePath, t: f64) -> Result<IdentificationGap> {
    let solver = FkSolver::new(v, wh)?;
    identification_gap_with(&solver, w, wh.grid().index_of(t)?, super::solver::DEFAULT_SUBSTEPS)
}

/// As [`identification_gap`], reusing the solver's germ cache. `w` must
/// live on the shift grid.
pub fn identification_gap_with(solver: &FkSolver, w: &SamplePath, t_index: usize, substeps: usize) -> Result<IdentificationGap> {
    if w.grid() != solver.shift().grid() {
        return shape("Brownian and shift paths must share one grid");
    }
    if w.dim() != solver.dim() {
        return shape("Brownian path and potential must have the same dimension");
    }
    if substeps == 0 {
        return param("substeps must be at least 1");
    }
    let bm = w.values()[..(t_index + 1) * w.dim()].to_vec();
    let riemann = riemann_core(&solver.v_grid, solver.shift(), &bm, t_index, substeps, &[0.0; 3]);
    let sewing = if t_index == 0 {
        0.0
    } else {
        let germ = solver.germ(bm, t_index, DEFAULT_DELTA)?;
        sew_to_grid(&germ, 0, t_index)?.value
    };
    Ok(IdentificationGap {
        riemann,
        sewing,
        gap: (riemann - sewing).abs(),
    })
}

/// Probe points for sup-norm gaps. A max over a finite set is a lower
/// bound of the true sup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub probes: Vec<Probe>,
}

impl ProbeSet {
    /// 16 equispaced x in [-half_width, half_width) along axis 0 (other
    /// coordinates 0) at the grid times t/2 and t.
    pub fn standard(grid: &TimeGrid, t: f64, half_width: f64, dim: usize) -> Result<Self> {
        let ti = grid.index_of(t)?;
        if ti % 2 != 0 {
            return param("t/2 must be a grid time");
        }
        let mut probes = Vec::with_capacity(32);
        for t_index in [ti / 2, ti] {
            for k in 0..16 {
                let mut x = vec![0.0; dim];
                x[0] = -half_width + 2.0 * half_width * k as f64 / 16.0;
                probes.push(Probe { t_index, x });
            }
        }
        Ok(Self { probes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchySpec {
    pub epsilons: Vec<f64>,
    pub kind: Mollifier,
    /// Negative Sobolev index of the gap normalisation.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyRow {
    pub eps_coarse: f64,
    pub eps_fine: f64,
    /// max over probes of |u^{coarse} - u^{fine}|.
    pub gap: f64,
    /// Paired (CRN) standard error at the maximising probe.
    pub gap_stderr: f64,
    pub probe: usize,
    /// ||V^{coarse} - V^{fine}||_{H^{-eta}}.
    pub norm_diff: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyTable {
    pub eta: f64,
    pub hurst_bound: f64,
    pub rows: Vec<CauchyRow>,
    pub gaps_strictly_decreasing: bool,
    /// max / min of the normalised gaps.
    pub ratio_spread: f64,
    pub diagnostics: Vec<FkDiagnostics>,
}

/// Solutions for every mollification width on one shift path and one set of
/// Brownian increments, and their successive sup-gaps over `probes`.
pub fn mollification_cauchy(
    v: &SpectralField,
    spec: &CauchySpec,
    wh: &SamplePath,
    f: &SpectralField,
    probes: &ProbeSet,
    opts: &SolveOptions,
    rng: RngStream,
) -> Result<CauchyTable> {
    if spec.epsilons.len() < 2 {
        return param("need at least two mollification widths");
    }
    let budget = hurst_bound(spec.eta, v.spectral_box().dim(), 0)?;
    let h = wh.hurst().unwrap_or(0.5);
    if !budget.admits(h) {
        log::warn!("H = {h} violates the existence bound {:.4}; running anyway", budget.bound);
    }
    let lt = local_time(wh, v.spectral_box())?;
    let mut fields = Vec::with_capacity(spec.epsilons.len());
    let mut samples: Vec<SampleMatrix> = Vec::with_capacity(spec.epsilons.len());
    for &eps in &spec.epsilons {
        let ve = mollify(v, MollifierSpec { epsilon: eps, kind: spec.kind })?;
        let solver = FkSolver::with_local_time(&ve, wh, &lt)?;
        samples.push(solver.samples(f, &probes.probes, opts, rng)?);
        fields.push(ve);
    }
    let mut rows = Vec::with_capacity(spec.epsilons.len() - 1);
    for j in 0..spec.epsilons.len() - 1 {
        let (a, b) = (&samples[j], &samples[j + 1]);
        let mut best = (0.0f64, 0.0, 0);
        for q in 0..probes.probes.len() {
            let (d, se) = a.paired_difference(b, q);
            if d.abs() > best.0 || q == 0 {
                best = (d.abs(), se, q);
            }
        }
        let norm_diff = sobolev_norm(&fields[j].sub(&fields[j + 1])?, -spec.eta);
        rows.push(CauchyRow {
            eps_coarse: spec.epsilons[j],
            eps_fine: spec.epsilons[j + 1],
            gap: best.0,
            gap_stderr: best.1,
            probe: best.2,
            norm_diff,
            ratio: if norm_diff > 0.0 { best.0 / norm_diff } else { 0.0 },
        });
    }
    let gaps_strictly_decreasing = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let ratios: Vec<f64> = rows.iter().filter(|r| r.norm_diff > 0.0).map(|r| r.ratio).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    Ok(CauchyTable {
        eta: spec.eta,
        hurst_bound: budget.bound,
        rows,
        gaps_strictly_decreasing,
        ratio_spread: if ratios.is_empty() { 1.0 } else { hi / lo },
        diagnostics: samples.iter().map(|s| s.diagnostics).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSpec {
    pub t_index: usize,
    pub x: Vec<f64>,
    /// 1 or 2, along axis 0.
    pub order: u32,
    pub h: f64,
    /// Largest acceptable standard error.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub stderr: f64,
    pub h: f64,
    pub order: u32,
    pub tolerance: f64,
    pub within_tolerance: bool,
}

fn stencil(order: u32, h: f64) -> Result<Vec<(f64, f64)>> {
    if !(h > 0.0 && h.is_finite()) {
        return param(format!("stencil step must be positive, got {h}"));
    }
    match order {
        1 => Ok(vec![(-h, -0.5 / h), (h, 0.5 / h)]),
        2 => Ok(vec![(-h, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (h, 1.0 / (h * h))]),
        _ => param(format!("derivative order must be 1 or 2, got {order}")),
    }
}

fn estimate(value: f64, stderr: f64, spec: &DerivativeSpec) -> DerivativeEstimate {
    DerivativeEstimate {
        value,
        stderr,
        h: spec.h,
        order: spec.order,
        tolerance: spec.tolerance,
        within_tolerance: stderr <= spec.tolerance,
    }
}

/// Central difference of x -> u(t, x) along axis 0, every stencil point
/// driven by the same Brownian increments.
pub fn spatial_derivative(
    solver: &FkSolver,
    f: &SpectralField,
    spec: &DerivativeSpec,
    opts: &SolveOptions,
    rng: RngStream,
) -> Result<DerivativeEstimate> {
    let st = stencil(spec.order, spec.h)?;
    let probes: Vec<Probe> = st
        .iter()
        .map(|&(o, _)| {
            let mut x = spec.x.clone();
            x[0] += o;
            Probe { t_index: spec.t_index, x }
        })
        .collect();
    let m = solver.samples(f, &probes, opts, rng)?;
    let w: Vec<f64> = st.iter().map(|s| s.1).collect();
    let (value, stderr) = m.combination(&w);
    Ok(estimate(value, stderr, spec))
}

/// Derivative through the germ: differentiate under the expectation with
/// the exponent derivatives obtained by sewing finite-difference germs,
///
/// ```text
/// D u    = E[e^{-E} (f' - f E')]
/// D^2 u  = E[e^{-E} (f'' - 2 f' E' + f (E'^2 - E''))]
/// ```
pub fn germ_level_derivative(
    solver: &FkSolver,
    f: &SpectralField,
    spec: &DerivativeSpec,
    opts: &SolveOptions,
    rng: RngStream,
) -> Result<DerivativeEstimate> {
    stencil(spec.order, spec.h)?;
    let probe = Probe {
        t_index: spec.t_index,
        x: spec.x.clone(),
    };
    solver.check_probes(std::slice::from_ref(&probe))?;
    if spec.t_index == 0 {
        return param("germ-level derivative needs t > 0");
    }
    let n_units = solver.units(opts)?;
    let d = solver.dim();
    let fe = TrigEvaluator::new(f);
    let f1 = TrigEvaluator::new(&f.derivative(0, 1));
    let f2 = TrigEvaluator::new(&f.derivative(0, 2));
    let signs: &[f64] = if opts.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let ti = spec.t_index;
    let xs: Vec<f64> = (0..n_units)
        .into_par_iter()
        .map(|u| -> Result<f64> {
            let incr = solver.increments(rng, u, ti);
            let mut acc = 0.0;
            for (si, &sign) in signs.iter().enumerate() {
                let bm = solver.positions(&spec.x, &incr, sign, ti);
                let end = bm[ti * d..(ti + 1) * d].to_vec();
                let base = solver.germ(bm, ti, opts.delta)?;
                let e = sew_to_grid(&base, 0, ti)?.value;
                let weight = (-e).exp();
                if !weight.is_finite() {
                    return Err(Error::Overflow {
                        path: u * signs.len() + si,
                        exponent: e,
                        diagnostics: "germ-level derivative".into(),
                    });
                }
                let e1 = sew_to_grid(&StencilGerm::central(base.clone(), 1, spec.h)?, 0, ti)?.value;
                let term = match spec.order {
                    1 => f1.eval(&end) - fe.eval(&end) * e1,
                    _ => {
                        let e2 = sew_to_grid(&StencilGerm::central(base, 2, spec.h)?, 0, ti)?.value;
                        f2.eval(&end) - 2.0 * f1.eval(&end) * e1 + fe.eval(&end) * (e1 * e1 - e2)
                    }
                };
                acc += weight * term / signs.len() as f64;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_stderr(&xs);
    Ok(estimate(value, stderr, spec))
}

/// Monte Carlo solution on every node of an `n_nodes` grid and every time
/// of `grid` (a dyadic coarsening of the shift grid), as `n_batches`
/// independent batch means over consecutive units.
pub fn solution_batches(
    solver: &FkSolver,
    f: &SpectralField,
    grid: &TimeGrid,
    n_nodes: usize,
    n_batches: usize,
    opts: &SolveOptions,
    rng: RngStream,
) -> Result<Vec<SolutionField>> {
    let sub = solver.shift().grid().refinement_factor(grid)?;
    let nb = solver.field_box().with_n(n_nodes)?;
    let n_units = solver.units(opts)?;
    if n_batches == 0 || n_units % n_batches != 0 {
        return param(format!("{n_units} sampling units do not split into {n_batches} batches"));
    }
    let d = nb.dim();
    let nbr = &nb;
    let probes: Vec<Probe> = (1..grid.len())
        .flat_map(|i| {
            (0..nbr.len()).map(move |lin| Probe {
                t_index: i * sub,
                x: nbr.node(lin)[..d].to_vec(),
            })
        })
        .collect();
    let m = solver.samples(f, &probes, opts, rng)?;
    let f0 = GridField::from_fn(&nb, |x| f.eval_trig(x));
    let per = n_units / n_batches;
    (0..n_batches)
        .map(|bi| {
            let mut fields = vec![f0.clone()];
            for i in 1..grid.len() {
                let vals = (0..nb.len())
                    .map(|lin| {
                        let q = (i - 1) * nb.len() + lin;
                        let col = m.column(q);
                        col[bi * per..(bi + 1) * per].iter().sum::<f64>() / per as f64
                    })
                    .collect();
                fields.push(GridField::new(nb.clone(), vals)?);
            }
            SolutionField::new(grid.clone(), fields)
        })
        .collect()
}

/// Per-path exponent size against the Hoelder modulus of that Brownian path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthStudy {
    pub gamma: f64,
    pub moduli: Vec<f64>,
    pub abs_exponents: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Smallest K with |E| <= K (1 + modulus) on every path.
    pub envelope: f64,
    /// Largest |residual| of the linear fit.
    pub max_residual: f64,
}

/// Exponents over the whole shift horizon for `n_paths` Brownian paths from
/// the origin, against their Hoelder moduli at gamma = 1/2 - delta/2.
pub fn exponent_growth(solver: &FkSolver, n_paths: usize, delta: f64, rng: RngStream) -> Result<GrowthStudy> {
    if n_paths < 3 {
        return param("growth study needs at least 3 paths");
    }
    let grid = solver.shift().grid().clone();
    let ti = grid.steps();
    let d = solver.dim();
    let gamma = 0.5 - delta / 2.0;
    let origin = vec![0.0; d];
    let pairs: Vec<(f64, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let incr = solver.increments(rng, p, ti);
            let bm = solver.positions(&origin, &incr, 1.0, ti);
            let path = SamplePath::from_values(grid.clone(), d, bm.clone(), PathLaw::Brownian)?;
            let germ = solver.germ(bm, ti, delta)?;
            let e = sew_to_grid(&germ, 0, ti)?.value;
            Ok((holder_modulus(&path, gamma), e.abs()))
        })
        .collect::<Result<_>>()?;
    let (moduli, abs_exponents): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (slope, intercept) = fit_line(&moduli, &abs_exponents);
    let envelope = moduli
        .iter()
        .zip(&abs_exponents)
        .map(|(c, e)| e / (1.0 + c))
        .fold(0.0, f64::max);
    let max_residual = moduli
        .iter()
        .zip(&abs_exponents)
        .map(|(c, e)| (e - slope * c - intercept).abs())
        .fold(0.0, f64::max);
    Ok(GrowthStudy {
        gamma,
        moduli,
        abs_exponents,
        slope,
        intercept,
        envelope,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{sample_white_noise, BoxSpec};
    use crate::paths::{sample_bm, sample_fbm};
    use std::f64::consts::PI;

    fn setup() -> (BoxSpec, SamplePath, SpectralField) {
        let g = TimeGrid::new(0.1, 7).unwrap();
        let b = BoxSpec::new(1, 8.0, 256).unwrap();
        let wh = sample_fbm(0.2, &g, 1, RngStream::new(5, 0)).unwrap();
        let v = mollify(&sample_white_noise(&b, RngStream::new(6, 0)), MollifierSpec::gaussian(0.2)).unwrap();
        (b, wh, v)
    }

    #[test]
    fn identification_on_a_smooth_potential() {
        let (_, wh, v) = setup();
        let w = sample_bm(wh.grid(), 1, &[0.1], RngStream::new(7, 0)).unwrap();
        let g = identification_gap(&v, &wh, &w, 0.1).unwrap();
        assert!(g.gap < 1e-2 * (1.0 + g.riemann.abs()), "{g:?}");
    }

    #[test]
    fn zero_potential_has_no_gap() {
        let (b, wh, _) = setup();
        let w = sample_bm(wh.grid(), 1, &[0.0], RngStream::new(7, 0)).unwrap();
        let g = identification_gap(&SpectralField::zeros(&b), &wh, &w, 0.1).unwrap();
        assert_eq!(g.gap, 0.0);
    }

    #[test]
    fn sharp_cutoff_below_the_band_gives_zero_gaps() {
        let (b, wh, _) = setup();
        let v = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0] / 8.0).cos());
        let f = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0] / 8.0).sin());
        let probes = ProbeSet::standard(wh.grid(), 0.1, 1.0, 1).unwrap();
        let spec = CauchySpec {
            epsilons: vec![0.5, 0.25, 0.125],
            kind: Mollifier::SharpCutoff,
            eta: 0.75,
        };
        let opts = SolveOptions::default().with_paths(20);
        let t = mollification_cauchy(&v, &spec, &wh, &f, &probes, &opts, RngStream::new(1, 0)).unwrap();
        assert!(t.rows.iter().all(|r| r.gap < 1e-13 && r.norm_diff < 1e-13), "{:?}", t.rows);
    }

    #[test]
    fn germ_and_solution_stencils_agree_without_potential() {
        let (b, wh, _) = setup();
        let solver = FkSolver::new(&SpectralField::zeros(&b), &wh).unwrap();
        let f = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
        let spec = DerivativeSpec {
            t_index: 128,
            x: vec![0.25],
            order: 1,
            h: 1.0 / 128.0,
            tolerance: 1.0,
        };
        let opts = SolveOptions::default().with_paths(4000);
        let a = spatial_derivative(&solver, &f, &spec, &opts, RngStream::new(2, 0)).unwrap();
        let g = germ_level_derivative(&solver, &f, &spec, &opts, RngStream::new(2, 0)).unwrap();
        let exact = -2.0 * PI * (-2.0 * PI * PI * 0.1f64).exp();
        assert!((a.value - exact).abs() < 4.0 * a.stderr + 0.02, "{a:?}");
        assert!((g.value - exact).abs() < 4.0 * g.stderr + 0.02, "{g:?}");
    }

    #[test]
    fn growth_study_has_a_finite_envelope() {
        let (_, wh, v) = setup();
        let solver = FkSolver::new(&v, &wh).unwrap();
        let g = exponent_growth(&solver, 40, 0.05, RngStream::new(3, 0)).unwrap();
        assert!(g.envelope.is_finite() && g.envelope > 0.0);
        assert_eq!(g.moduli.len(), 40);
    }
}

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::germ::{riemann_core, GermCache, LocalTimeGerm};
use crate::error::{param, shape, Error, Result};
use crate::fields::{BoxSpec, GridField, SpectralField, TrigEvaluator};
use crate::localtime::{local_time, LocalTimeField};
use crate::paths::SamplePath;
use crate::rng::RngStream;
use crate::sewing::{defect_constant, sew_to_grid, Germ, DEFAULT_DELTA};
use crate::stats::mean_stderr;

/// Trapezoid sub-intervals per grid step for the classical exponent.
pub const DEFAULT_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exponent = sewing of the local-time germ.
    Sewing,
    /// Exponent = time integral of the shifted potential (smooth V).
    Riemann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub n_paths: usize,
    pub mode: Mode,
    /// Sub-intervals per step in mode riemann.
    pub substeps: usize,
    /// Antithetic pairs of Brownian increments.
    pub antithetic: bool,
    /// Exponent slack of the audit bounds.
    pub delta: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            mode: Mode::Sewing,
            substeps: DEFAULT_SUBSTEPS,
            antithetic: true,
            delta: DEFAULT_DELTA,
        }
    }
}

impl SolveOptions {
    pub fn with_paths(mut self, n: usize) -> Self {
        self.n_paths = n;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

/// Solution probe at grid index `t_index` and start point `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t_index: usize,
    pub x: Vec<f64>,
}

/// Summary of per-path exponents and sewing audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FkDiagnostics {
    pub max_abs_exponent: f64,
    pub mean_abs_exponent: f64,
    pub max_sewing_level: u32,
    /// Paths with |IA - A_{0,t}| above the sewing defect bound.
    pub defect_violations: usize,
    /// Paths with |IA| above ||V * L_{0,t}||_inf + c ||dA|| t^beta.
    pub apriori_violations: usize,
    /// Largest |IA - A_{0,t}| / defect_bound seen.
    pub max_defect_ratio: f64,
    pub exponents_evaluated: usize,
}

impl FkDiagnostics {
    fn record(&mut self, e: f64) {
        self.max_abs_exponent = self.max_abs_exponent.max(e.abs());
        self.mean_abs_exponent += e.abs();
        self.exponents_evaluated += 1;
    }

    fn merge(mut self, o: &FkDiagnostics) -> Self {
        self.max_abs_exponent = self.max_abs_exponent.max(o.max_abs_exponent);
        self.mean_abs_exponent += o.mean_abs_exponent;
        self.max_sewing_level = self.max_sewing_level.max(o.max_sewing_level);
        self.defect_violations += o.defect_violations;
        self.apriori_violations += o.apriori_violations;
        self.max_defect_ratio = self.max_defect_ratio.max(o.max_defect_ratio);
        self.exponents_evaluated += o.exponents_evaluated;
        self
    }

    fn finish(mut self) -> Self {
        if self.exponents_evaluated > 0 {
            self.mean_abs_exponent /= self.exponents_evaluated as f64;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub value: f64,
    /// Standard error over independent units (antithetic pair means).
    pub stderr: f64,
    pub n_paths: usize,
    pub diagnostics: FkDiagnostics,
}

/// Per-unit samples for several probes; a unit is one antithetic pair
/// (its mean) or one path. Rows share Brownian increments across probes.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    pub n_units: usize,
    pub n_probes: usize,
    pub n_paths: usize,
    values: Vec<f64>,
    pub diagnostics: FkDiagnostics,
}

impl SampleMatrix {
    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.n_units).map(|u| self.values[u * self.n_probes + q]).collect()
    }

    pub fn estimate(&self, q: usize) -> (f64, f64) {
        mean_stderr(&self.column(q))
    }

    /// Mean and stderr of the per-unit combination sum_q w_q X_q.
    pub fn combination(&self, weights: &[f64]) -> (f64, f64) {
        let xs: Vec<f64> = (0..self.n_units)
            .map(|u| weights.iter().enumerate().map(|(q, w)| w * self.values[u * self.n_probes + q]).sum())
            .collect();
        mean_stderr(&xs)
    }

    /// Per-unit differences self - other for probe q (common units).
    pub fn paired_difference(&self, other: &SampleMatrix, q: usize) -> (f64, f64) {
        let xs: Vec<f64> = self.column(q).iter().zip(other.column(q)).map(|(a, b)| a - b).collect();
        mean_stderr(&xs)
    }
}

/// Quenched Feynman-Kac solver for one potential and one shift path.
pub struct FkSolver {
    box_: BoxSpec,
    shift: SamplePath,
    pub(crate) v_grid: GridField,
    cache: Arc<GermCache>,
}

/// One Brownian path's exponent and audit data.
pub(crate) struct PathExponent {
    pub value: f64,
    pub level: u32,
    pub defect_violation: bool,
    pub apriori_violation: bool,
    pub defect_ratio: f64,
}

impl FkSolver {
    pub fn new(v: &SpectralField, shift: &SamplePath) -> Result<Self> {
        let lt = local_time(shift, v.spectral_box())?;
        Self::with_local_time(v, shift, &lt)
    }

    /// Reuse a local time of `shift` (e.g. across mollification levels).
    pub fn with_local_time(v: &SpectralField, shift: &SamplePath, lt: &LocalTimeField) -> Result<Self> {
        let b = v.spectral_box();
        if b.dim() != shift.dim() {
            return shape(format!("potential in d = {}, shift path in d = {}", b.dim(), shift.dim()));
        }
        if lt.grid() != shift.grid() {
            return shape("local time and shift path must share one grid");
        }
        let cache = GermCache::new(v, lt, shift.grid().steps())?;
        Ok(Self {
            box_: b.clone(),
            shift: shift.clone(),
            v_grid: v.to_grid(),
            cache: Arc::new(cache),
        })
    }

    pub fn field_box(&self) -> &BoxSpec {
        &self.box_
    }

    pub fn shift(&self) -> &SamplePath {
        &self.shift
    }

    pub fn cache(&self) -> &Arc<GermCache> {
        &self.cache
    }

    pub fn dim(&self) -> usize {
        self.box_.dim()
    }

    /// Brownian increments of unit `u`, `steps` rows of `dim` values.
    pub(crate) fn increments(&self, rng: RngStream, unit: usize, steps: usize) -> Vec<f64> {
        let mut g = rng.child(unit as u64).generator();
        let sd = self.shift.grid().dt().sqrt();
        (0..steps * self.dim())
            .map(|_| {
                let z: f64 = g.sample(StandardNormal);
                sd * z
            })
            .collect()
    }

    /// Positions W_0 = x, ..., W_{t_index} for the given increment sign.
    pub(crate) fn positions(&self, x: &[f64], incr: &[f64], sign: f64, t_index: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity((t_index + 1) * d);
        out.extend_from_slice(&x[..d]);
        for k in 0..t_index {
            for c in 0..d {
                let prev = out[k * d + c];
                out.push(prev + sign * incr[k * d + c]);
            }
        }
        out
    }

    pub(crate) fn germ(&self, bm: Vec<f64>, t_index: usize, delta: f64) -> Result<LocalTimeGerm> {
        Ok(LocalTimeGerm::new(self.cache.clone(), bm, t_index)?.with_delta(delta))
    }

    /// Sewn exponent with the per-path audits.
    pub(crate) fn sewn_exponent(&self, germ: &dyn Germ, t_index: usize) -> Result<PathExponent> {
        if t_index == 0 {
            return Ok(PathExponent {
                value: 0.0,
                level: 0,
                defect_violation: false,
                apriori_violation: false,
                defect_ratio: 0.0,
            });
        }
        let r = sew_to_grid(germ, 0, t_index)?;
        let a0 = r.history[0];
        let gap = (r.value - a0).abs();
        let slack = 1e-12 * (1.0 + r.value.abs());
        let t = t_index as f64 * self.shift.grid().dt();
        let apriori = self.cache.sup_norm(t_index) + defect_constant(r.beta) * r.delta_sup * t.powf(r.beta);
        Ok(PathExponent {
            value: r.value,
            level: r.level,
            defect_violation: gap > r.defect_bound + slack,
            apriori_violation: r.value.abs() > apriori + slack,
            defect_ratio: if r.defect_bound > 0.0 { gap / r.defect_bound } else { 0.0 },
        })
    }

    pub(crate) fn exponent(&self, bm: &[f64], t_index: usize, opts: &SolveOptions) -> Result<PathExponent> {
        match opts.mode {
            Mode::Sewing => {
                let germ = self.germ(bm.to_vec(), t_index, opts.delta)?;
                self.sewn_exponent(&germ, t_index)
            }
            Mode::Riemann => Ok(PathExponent {
                value: riemann_core(&self.v_grid, &self.shift, bm, t_index, opts.substeps, &[0.0; 3]),
                level: 0,
                defect_violation: false,
                apriori_violation: false,
                defect_ratio: 0.0,
            }),
        }
    }

    pub(crate) fn units(&self, opts: &SolveOptions) -> Result<usize> {
        if opts.n_paths == 0 {
            return param("need at least one Brownian path");
        }
        if opts.substeps == 0 {
            return param("substeps must be at least 1");
        }
        if opts.antithetic {
            if opts.n_paths % 2 != 0 {
                return param(format!("antithetic sampling needs an even path count, got {}", opts.n_paths));
            }
            Ok(opts.n_paths / 2)
        } else {
            Ok(opts.n_paths)
        }
    }

    pub(crate) fn check_probes(&self, probes: &[Probe]) -> Result<usize> {
        let mut max_t = 0;
        for p in probes {
            if p.t_index > self.shift.grid().steps() {
                return param(format!("probe time index {} beyond the shift grid", p.t_index));
            }
            if p.x.len() != self.dim() {
                return shape(format!("probe point has {} coordinates, expected {}", p.x.len(), self.dim()));
            }
            max_t = max_t.max(p.t_index);
        }
        Ok(max_t)
    }

    /// Samples f(W_t) exp(-E_t) for every probe and unit.
    pub fn samples(&self, f: &SpectralField, probes: &[Probe], opts: &SolveOptions, rng: RngStream) -> Result<SampleMatrix> {
        if f.spectral_box().dim() != self.dim() {
            return shape("initial condition and potential must have the same dimension");
        }
        let n_units = self.units(opts)?;
        let max_t = self.check_probes(probes)?;
        let fe = TrigEvaluator::new(f);
        let signs: &[f64] = if opts.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let d = self.dim();
        let rows: Vec<(Vec<f64>, FkDiagnostics)> = (0..n_units)
            .into_par_iter()
            .map(|u| -> Result<(Vec<f64>, FkDiagnostics)> {
                let incr = self.increments(rng, u, max_t);
                let mut diag = FkDiagnostics::default();
                let mut row = vec![0.0; probes.len()];
                for (si, &sign) in signs.iter().enumerate() {
                    for (q, p) in probes.iter().enumerate() {
                        let bm = self.positions(&p.x, &incr, sign, p.t_index);
                        let e = self.exponent(&bm, p.t_index, opts)?;
                        let weight = (-e.value).exp();
                        if !weight.is_finite() || e.value.is_nan() {
                            return Err(Error::Overflow {
                                path: u * signs.len() + si,
                                exponent: e.value,
                                diagnostics: format!(
                                    "probe {q} (t index {}), sewing level {}, max |E| so far {:.3e}",
                                    p.t_index, e.level, diag.max_abs_exponent
                                ),
                            });
                        }
                        diag.record(e.value);
                        diag.max_sewing_level = diag.max_sewing_level.max(e.level);
                        diag.defect_violations += e.defect_violation as usize;
                        diag.apriori_violations += e.apriori_violation as usize;
                        diag.max_defect_ratio = diag.max_defect_ratio.max(e.defect_ratio);
                        let end = &bm[p.t_index * d..(p.t_index + 1) * d];
                        row[q] += fe.eval(end) * weight / signs.len() as f64;
                    }
                }
                Ok((row, diag))
            })
            .collect::<Result<_>>()?;
        let diagnostics = rows
            .iter()
            .fold(FkDiagnostics::default(), |acc, (_, d)| acc.merge(d))
            .finish();
        Ok(SampleMatrix {
            n_units,
            n_probes: probes.len(),
            n_paths: opts.n_paths,
            values: rows.into_iter().flat_map(|(r, _)| r).collect(),
            diagnostics,
        })
    }

    /// u(t, x) at grid index `t_index`.
    pub fn solve(&self, f: &SpectralField, t_index: usize, x: &[f64], opts: &SolveOptions, rng: RngStream) -> Result<FkEstimate> {
        let probe = Probe {
            t_index,
            x: x.to_vec(),
        };
        let m = self.samples(f, std::slice::from_ref(&probe), opts, rng)?;
        let (value, stderr) = m.estimate(0);
        Ok(FkEstimate {
            value,
            stderr,
            n_paths: opts.n_paths,
            diagnostics: m.diagnostics,
        })
    }
}

/// Monte Carlo estimate of u(t, x) for potential `v` shifted along `wh`.
pub fn solve(
    v: &SpectralField,
    wh: &SamplePath,
    f: &SpectralField,
    t: f64,
    x: &[f64],
    opts: &SolveOptions,
    rng: RngStream,
) -> Result<FkEstimate> {
    let solver = FkSolver::new(v, wh)?;
    solver.solve(f, wh.grid().index_of(t)?, x, opts, rng)
}

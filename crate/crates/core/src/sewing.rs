//! Germs on the grid simplex and the sewing operator.
//!
//! A germ is a map (s, t) -> A_{s,t} on grid indices s <= t with
//! A_{t,t} = 0. Sewing over [s, t] evaluates Riemann-type sums along the
//! canonical dyadic refinement (recursive bisection at integer midpoints)
//! and stops once successive levels agree, or when every interval is a
//! single grid step.
//!
//! While refining, the sup of |dA_{u,m,v}| / |v - u|^beta over the bisected
//! triples is tracked. Summing the telescoping defects level by level gives
//! |IA - A_{s,t}| <= c ||dA||_beta |t - s|^beta with
//! c = 2^beta / (2^(beta - 1) - 1), which every result records as its
//! `defect_bound`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::TimeGrid;
use crate::stats::compensated_sum;

/// Exponent slack used by audit bounds (beta = 1 + delta / 2).
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0 + DEFAULT_DELTA / 2.0,
        }
    }
}

/// Two-parameter map on grid indices. `eval` must be deterministic and
/// safe to call concurrently.
pub trait Germ: Sync {
    fn grid(&self) -> &TimeGrid;
    fn eval(&self, s: usize, t: usize) -> f64;
    fn exponents(&self) -> Exponents {
        Exponents::default()
    }
}

impl<G: Germ + ?Sized> Germ for &G {
    fn grid(&self) -> &TimeGrid {
        (**self).grid()
    }
    fn eval(&self, s: usize, t: usize) -> f64 {
        (**self).eval(s, t)
    }
    fn exponents(&self) -> Exponents {
        (**self).exponents()
    }
}

/// Germ given by a closure.
pub struct FnGerm<F> {
    grid: TimeGrid,
    f: F,
    exponents: Exponents,
}

impl<F: Fn(usize, usize) -> f64 + Sync> FnGerm<F> {
    pub fn new(grid: TimeGrid, f: F) -> Self {
        Self {
            grid,
            f,
            exponents: Exponents::default(),
        }
    }

    pub fn with_exponents(mut self, alpha: f64, beta: f64) -> Self {
        self.exponents = Exponents { alpha, beta };
        self
    }
}

impl<F: Fn(usize, usize) -> f64 + Sync> Germ for FnGerm<F> {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn eval(&self, s: usize, t: usize) -> f64 {
        if s == t {
            0.0
        } else {
            (self.f)(s, t)
        }
    }
    fn exponents(&self) -> Exponents {
        self.exponents
    }
}

/// Linear combination sum_i a_i A^i of germs on a common grid.
pub struct Combination<'a> {
    terms: Vec<(f64, &'a dyn Germ)>,
}

impl<'a> Combination<'a> {
    pub fn new(terms: Vec<(f64, &'a dyn Germ)>) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return param("a germ combination needs at least one term");
        };
        if terms.iter().any(|(_, g)| g.grid() != first.grid()) {
            return Err(Error::Shape("combined germs must share their time grid".into()));
        }
        Ok(Self { terms })
    }

    /// A - B.
    pub fn difference(a: &'a dyn Germ, b: &'a dyn Germ) -> Result<Self> {
        Self::new(vec![(1.0, a), (-1.0, b)])
    }
}

impl Germ for Combination<'_> {
    fn grid(&self) -> &TimeGrid {
        self.terms[0].1.grid()
    }
    fn eval(&self, s: usize, t: usize) -> f64 {
        self.terms.iter().map(|(a, g)| a * g.eval(s, t)).sum()
    }
    fn exponents(&self) -> Exponents {
        self.terms[0].1.exponents()
    }
}

/// (dA)_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t}.
pub fn delta(a: &dyn Germ, s: usize, u: usize, t: usize) -> Result<f64> {
    if !(s <= u && u <= t && t <= a.grid().steps()) {
        return param(format!("delta needs s <= u <= t on the grid, got ({s}, {u}, {t})"));
    }
    Ok(a.eval(s, t) - a.eval(s, u) - a.eval(u, t))
}

/// Defect-bound constant 2^beta / (2^(beta - 1) - 1).
pub fn defect_constant(beta: f64) -> f64 {
    2f64.powf(beta) / (2f64.powf(beta - 1.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GermNorms {
    /// sup |A_{s,t}| / |t - s|^alpha
    pub alpha_norm: f64,
    /// sup |dA_{s,u,t}| / |t - s|^beta
    pub delta_norm: f64,
    pub level: u32,
    /// Grid steps between the sampled points.
    pub stride: usize,
}

/// Levels up to which [`germ_norms`] scans every dyadic point.
pub const EXHAUSTIVE_NORM_LEVEL: u32 = 10;

/// Grid sups of the germ's alpha and beta ratios over the dyadic points of
/// `level` (lower bounds of the continuum norms). Above level 10 the points
/// are thinned to 2^10 + 1 and the stride is reported.
pub fn germ_norms(a: &dyn Germ, alpha: f64, beta: f64, level: u32) -> Result<GermNorms> {
    if !(alpha > 0.0 && alpha <= 1.0 && beta > 1.0) {
        return param(format!("germ norms need 0 < alpha <= 1 < beta, got ({alpha}, {beta})"));
    }
    let m = a.grid().level();
    if level > m || level == 0 {
        return param(format!("norm level must lie in 1..={m}, got {level}"));
    }
    let used = level.min(EXHAUSTIVE_NORM_LEVEL);
    let stride = 1usize << (m - used);
    let npts = (1usize << used) + 1;
    let dt = a.grid().dt();
    let pow_a: Vec<f64> = (0..npts).map(|k| (k as f64 * stride as f64 * dt).powf(alpha)).collect();
    let pow_b: Vec<f64> = (0..npts).map(|k| (k as f64 * stride as f64 * dt).powf(beta)).collect();
    // Pair values, row i holds A(p_i, p_j) for j > i.
    let vals: Vec<Vec<f64>> = (0..npts)
        .into_par_iter()
        .map(|i| (i + 1..npts).map(|j| a.eval(i * stride, j * stride)).collect())
        .collect();
    let at = |i: usize, j: usize| vals[i][j - i - 1];
    let alpha_norm = (0..npts)
        .flat_map(|i| (i + 1..npts).map(move |j| (i, j)))
        .map(|(i, j)| at(i, j).abs() / pow_a[j - i])
        .fold(0.0, f64::max);
    let delta_norm = (0..npts)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for j in i + 2..npts {
                let aij = at(i, j);
                for u in i + 1..j {
                    best = best.max((aij - at(i, u) - at(u, j)).abs() / pow_b[j - i]);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(GermNorms {
        alpha_norm,
        delta_norm,
        level,
        stride: if level > EXHAUSTIVE_NORM_LEVEL { stride } else { 1usize << (m - level) },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SewingResult {
    pub value: f64,
    /// Refinement level of `value` (0 = the germ itself).
    pub level: u32,
    /// Partial sums per level, history[0] = A_{s,t}.
    pub history: Vec<f64>,
    pub defect_bound: f64,
    /// Sup of |dA| / len^beta over the bisected triples.
    #[serde(skip)]
    pub delta_sup: f64,
    #[serde(skip)]
    pub beta: f64,
    /// Successive levels agreed to within tol.
    #[serde(skip)]
    pub converged: bool,
    /// Every interval of the final partition is one grid step.
    #[serde(skip)]
    pub reached_grid: bool,
}

/// Sew `a` over grid indices [s, t].
pub fn sew(a: &dyn Germ, s: usize, t: usize, max_level: u32, tol: f64) -> Result<SewingResult> {
    let grid = a.grid();
    if !(s < t && t <= grid.steps()) {
        return param(format!("sewing needs s < t on the grid, got ({s}, {t})"));
    }
    if max_level > grid.level() {
        return param(format!("max_level {max_level} exceeds the grid level {}", grid.level()));
    }
    let beta = a.exponents().beta;
    let dt = grid.dt();
    let a0 = a.eval(s, t);
    let mut intervals = vec![(s, t, a0)];
    let mut next = Vec::with_capacity(2);
    let mut history = vec![a0];
    let mut level_sups = Vec::new();
    let mut delta_sup = 0.0f64;
    let mut converged = false;
    let mut reached_grid = t - s == 1;
    for _ in 0..max_level {
        if reached_grid {
            break;
        }
        next.clear();
        next.reserve(2 * intervals.len());
        let mut sup = 0.0f64;
        let mut split_any = false;
        for &(u, v, auv) in &intervals {
            if v - u >= 2 {
                let m = (u + v) / 2;
                let (a1, a2) = (a.eval(u, m), a.eval(m, v));
                sup = sup.max((auv - a1 - a2).abs() / ((v - u) as f64 * dt).powf(beta));
                next.push((u, m, a1));
                next.push((m, v, a2));
                split_any |= m - u >= 2 || v - m >= 2;
            } else {
                next.push((u, v, auv));
            }
        }
        std::mem::swap(&mut intervals, &mut next);
        delta_sup = delta_sup.max(sup);
        level_sups.push(sup);
        let sum = compensated_sum(intervals.iter().map(|x| x.2));
        let prev = *history.last().unwrap();
        history.push(sum);
        reached_grid = !split_any;
        if (sum - prev).abs() < tol {
            converged = true;
            break;
        }
    }
    let n = history.len();
    if !converged && !reached_grid && n >= 4 {
        let d: Vec<f64> = history.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let k = d.len();
        let diffs_grow = d[k - 1] >= d[k - 2] && d[k - 2] >= d[k - 3];
        let q = level_sups.len();
        let sups_grow = level_sups[q - 1] >= level_sups[q - 2] && level_sups[q - 2] >= level_sups[q - 3];
        if d[k - 1] > 100.0 * tol && diffs_grow && sups_grow {
            return Err(Error::Sewing {
                s,
                t,
                tol,
                last_diff: d[k - 1],
                history,
            });
        }
    }
    Ok(SewingResult {
        value: history[n - 1],
        level: (n - 1) as u32,
        defect_bound: defect_constant(beta) * delta_sup * ((t - s) as f64 * dt).powf(beta),
        history,
        delta_sup,
        beta,
        converged,
        reached_grid,
    })
}

/// Sew down to single grid steps (the finest dyadic Riemann sum).
pub fn sew_to_grid(a: &dyn Germ, s: usize, t: usize) -> Result<SewingResult> {
    sew(a, s, t, a.grid().level(), 0.0)
}

/// The sewn path k -> (IA)_{0, t_k} on the dyadic points of `level`.
pub fn sewn_path(a: &dyn Germ, level: u32, tol: f64) -> Result<Vec<f64>> {
    let m = a.grid().level();
    if level > m {
        return param(format!("level {level} exceeds the grid level {m}"));
    }
    let stride = 1usize << (m - level);
    let mut out = vec![0.0];
    for k in 1..=(1usize << level) {
        out.push(sew(a, 0, k * stride, m, tol)?.value);
    }
    Ok(out)
}

/// alpha-Hoelder seminorm of a path sampled on `npts` equispaced points
/// spanning `horizon`.
pub fn holder_seminorm(values: &[f64], horizon: f64, alpha: f64) -> f64 {
    let n = values.len() - 1;
    let h = horizon / n as f64;
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..=n {
            best = best.max((values[j] - values[i]).abs() / ((j - i) as f64 * h).powf(alpha));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// ||A^n - A||_alpha per sequence element.
    pub germ_gaps: Vec<f64>,
    /// ||dA^n||_beta per sequence element.
    pub delta_norms: Vec<f64>,
    pub delta_sup: f64,
    /// ||I(A - A^n)||_alpha per sequence element.
    pub sewn_gaps: Vec<f64>,
    pub germ_gaps_nonincreasing: bool,
    pub delta_bounded: bool,
    pub sewn_gaps_nonincreasing: bool,
    /// Successive ratios sewn_gaps[n + 1] / sewn_gaps[n].
    pub sewn_gap_ratios: Vec<f64>,
    pub level: u32,
}

fn nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Report on A^n -> A: germ gaps, uniform defect bound, and the sewn gaps
/// ||I(A - A^n)||_alpha, all measured on the dyadic points of `level`.
pub fn sewing_convergence_check(
    a: &dyn Germ,
    seq: &[&dyn Germ],
    alpha: f64,
    beta: f64,
    level: u32,
) -> Result<ConvergenceReport> {
    let mut germ_gaps = Vec::new();
    let mut delta_norms = Vec::new();
    let mut sewn_gaps = Vec::new();
    for an in seq {
        if an.grid() != a.grid() {
            return Err(Error::Shape("all germs must share one time grid".into()));
        }
        let diff = Combination::difference(a, *an)?;
        germ_gaps.push(germ_norms(&diff, alpha, beta, level)?.alpha_norm);
        delta_norms.push(germ_norms(*an, alpha, beta, level)?.delta_norm);
        let path = sewn_path(&diff, level, 0.0)?;
        sewn_gaps.push(holder_seminorm(&path, a.grid().horizon(), alpha));
    }
    let delta_sup = delta_norms.iter().copied().fold(0.0, f64::max);
    Ok(ConvergenceReport {
        germ_gaps_nonincreasing: nonincreasing(&germ_gaps),
        delta_bounded: delta_sup.is_finite(),
        sewn_gaps_nonincreasing: nonincreasing(&sewn_gaps),
        sewn_gap_ratios: sewn_gaps.windows(2).map(|w| w[1] / w[0]).collect(),
        germ_gaps,
        delta_norms,
        delta_sup,
        sewn_gaps,
        level,
    })
}

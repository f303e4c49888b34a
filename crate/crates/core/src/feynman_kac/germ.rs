use std::sync::Arc;

use crate::error::{param, shape, Result};
use crate::fields::{interpolate, BoxSpec, GridField, SpectralField};
use crate::grid::TimeGrid;
use crate::localtime::LocalTimeField;
use crate::paths::SamplePath;
use crate::sewing::{Exponents, Germ};
use crate::stats::compensated_sum;

/// Cumulative convolutions `V * L_{t_i}` on the physical grid for
/// i = 0..=n_max, so that `(V * L_{s,r})(y)` costs two interpolations.
///
/// Each step adds `sum_j m_j V(. - x_j)` over its deposits (cell j, mass
/// m_j), which equals the spectral convolution of V with the step's
/// occupation density at every node.
#[derive(Debug)]
pub struct GermCache {
    box_: BoxSpec,
    grid: TimeGrid,
    stride: usize,
    rows: Vec<f64>,
    n_max: usize,
}

impl GermCache {
    pub fn new(v: &SpectralField, lt: &LocalTimeField, n_max: usize) -> Result<Self> {
        let b = v.spectral_box();
        b.check_same(lt.field_box(), "germ cache")?;
        if n_max > lt.grid().steps() {
            return param(format!("cache horizon {n_max} exceeds {} grid steps", lt.grid().steps()));
        }
        let vg = v.to_grid();
        let vals = vg.values();
        let n = b.n();
        let stride = b.len();
        let mut rows = vec![0.0; (n_max + 1) * stride];
        for step in 0..n_max {
            let (done, rest) = rows.split_at_mut((step + 1) * stride);
            let prev = &done[step * stride..];
            let cur = &mut rest[..stride];
            cur.copy_from_slice(prev);
            for (cell, m) in lt.step_deposits(step) {
                add_shifted(b, vals, cell, m, cur, n);
            }
        }
        Ok(Self {
            box_: b.clone(),
            grid: lt.grid().clone(),
            stride,
            rows,
            n_max,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn field_box(&self) -> &BoxSpec {
        &self.box_
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Node values of `V * L_{t_i}`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.stride..(i + 1) * self.stride]
    }

    /// `(V * L_{t_i, t_j})(y)` by interpolating both cumulative rows.
    #[inline]
    pub fn value(&self, i: usize, j: usize, y: &[f64]) -> f64 {
        interpolate(&self.box_, self.row(j), y) - interpolate(&self.box_, self.row(i), y)
    }

    pub fn sup_norm(&self, i: usize) -> f64 {
        self.row(i).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// out[l] += m * vals[l - cell] (periodic in each axis).
fn add_shifted(b: &BoxSpec, vals: &[f64], cell: usize, m: f64, out: &mut [f64], n: usize) {
    let shift_row = |src: &[f64], j: usize, dst: &mut [f64]| {
        // dst[l] += m * src[(l - j) mod n]
        let (head, tail) = dst.split_at_mut(j);
        for (d, s) in tail.iter_mut().zip(&src[..n - j]) {
            *d += m * s;
        }
        for (d, s) in head.iter_mut().zip(&src[n - j..]) {
            *d += m * s;
        }
    };
    match b.dim() {
        1 => shift_row(vals, cell, out),
        2 => {
            let (j0, j1) = (cell / n, cell % n);
            for l0 in 0..n {
                let r0 = (l0 + n - j0) % n;
                shift_row(&vals[r0 * n..(r0 + 1) * n], j1, &mut out[l0 * n..(l0 + 1) * n]);
            }
        }
        _ => unreachable!("local-time fields are limited to d <= 2"),
    }
}

/// The germ `A^t_{s,r} = (V * L_{s,r})(W_{t-s} + offset)` for one Brownian
/// path, with `W_{t-s}` read by index reversal on the shared grid.
#[derive(Debug, Clone)]
pub struct LocalTimeGerm {
    cache: Arc<GermCache>,
    /// W_k for k = 0..=t_index, row-major.
    bm: Vec<f64>,
    t_index: usize,
    offset: [f64; 3],
    exponents: Exponents,
}

impl LocalTimeGerm {
    /// `bm` holds the Brownian positions W_0..W_t (t_index + 1 rows).
    pub fn new(cache: Arc<GermCache>, bm: Vec<f64>, t_index: usize) -> Result<Self> {
        let d = cache.box_.dim();
        if bm.len() != (t_index + 1) * d {
            return shape(format!("Brownian path has {} values, expected {}", bm.len(), (t_index + 1) * d));
        }
        if t_index > cache.n_max {
            return param(format!("germ horizon {t_index} exceeds the cache horizon {}", cache.n_max));
        }
        Ok(Self {
            cache,
            bm,
            t_index,
            offset: [0.0; 3],
            exponents: Exponents::default(),
        })
    }

    /// Same germ with the Brownian start moved by `offset`.
    pub fn with_offset(&self, offset: &[f64]) -> Self {
        let mut g = self.clone();
        for (o, v) in g.offset.iter_mut().zip(offset) {
            *o = *v;
        }
        g
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.exponents.beta = 1.0 + delta / 2.0;
        self
    }

    pub fn t_index(&self) -> usize {
        self.t_index
    }

    pub fn cache(&self) -> &GermCache {
        &self.cache
    }

    /// Evaluation point W_{t-s} + offset.
    #[inline]
    fn point(&self, s: usize, extra: f64, out: &mut [f64; 3]) -> usize {
        let d = self.cache.box_.dim();
        let k = self.t_index - s;
        for c in 0..d {
            out[c] = self.bm[k * d + c] + self.offset[c];
        }
        out[0] += extra;
        d
    }

    /// Brownian end point W_t + offset.
    pub fn endpoint(&self) -> Vec<f64> {
        let d = self.cache.box_.dim();
        (0..d).map(|c| self.bm[self.t_index * d + c] + self.offset[c]).collect()
    }
}

impl Germ for LocalTimeGerm {
    fn grid(&self) -> &TimeGrid {
        &self.cache.grid
    }

    fn eval(&self, s: usize, r: usize) -> f64 {
        debug_assert!(s <= r && r <= self.t_index);
        if s == r {
            return 0.0;
        }
        let mut y = [0.0; 3];
        let d = self.point(s, 0.0, &mut y);
        self.cache.value(s, r, &y[..d])
    }

    fn exponents(&self) -> Exponents {
        self.exponents
    }
}

/// Finite-difference germ `sum_k w_k A^t(x + h_k e_1)` along the first axis.
#[derive(Debug, Clone)]
pub struct StencilGerm {
    base: LocalTimeGerm,
    stencil: Vec<(f64, f64)>,
}

impl StencilGerm {
    /// `stencil` lists (offset along axis 0, weight).
    pub fn new(base: LocalTimeGerm, stencil: Vec<(f64, f64)>) -> Self {
        Self { base, stencil }
    }

    /// Central difference of order 1 or 2 with step h.
    pub fn central(base: LocalTimeGerm, order: u32, h: f64) -> Result<Self> {
        let stencil = match order {
            1 => vec![(-h, -0.5 / h), (h, 0.5 / h)],
            2 => vec![(-h, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (h, 1.0 / (h * h))],
            _ => return param(format!("derivative order must be 1 or 2, got {order}")),
        };
        Ok(Self::new(base, stencil))
    }
}

impl Germ for StencilGerm {
    fn grid(&self) -> &TimeGrid {
        self.base.grid()
    }

    fn eval(&self, s: usize, r: usize) -> f64 {
        if s == r {
            return 0.0;
        }
        let mut y = [0.0; 3];
        self.stencil
            .iter()
            .map(|&(h, w)| {
                let d = self.base.point(s, h, &mut y);
                w * self.base.cache.value(s, r, &y[..d])
            })
            .sum()
    }

    fn exponents(&self) -> Exponents {
        self.base.exponents
    }
}

/// Germ of V along the shift path's local time for the Brownian path `w`
/// up to grid time `t`. `w` must share the shift path's step size.
pub fn build_germ(v: &SpectralField, lt: &LocalTimeField, w: &SamplePath, t: f64) -> Result<LocalTimeGerm> {
    let t_index = lt.grid().index_of(t)?;
    if (w.grid().dt() - lt.grid().dt()).abs() > 1e-12 * lt.grid().dt() || w.grid().steps() < t_index {
        return shape("Brownian path must share the local-time grid on [0, t]");
    }
    if w.dim() != v.spectral_box().dim() {
        return shape(format!("Brownian path in d = {}, potential in d = {}", w.dim(), v.spectral_box().dim()));
    }
    let cache = Arc::new(GermCache::new(v, lt, t_index)?);
    let bm = w.values()[..(t_index + 1) * w.dim()].to_vec();
    LocalTimeGerm::new(cache, bm, t_index)
}

/// Trapezoid rule for `int_0^t V(W_{t-s} + offset - w^H_s) ds` along the
/// linear interpolants of both paths, `substeps` sub-intervals per step.
pub(crate) fn riemann_core(
    vg: &GridField,
    shift: &SamplePath,
    bm: &[f64],
    t_index: usize,
    substeps: usize,
    offset: &[f64],
) -> f64 {
    let b = vg.grid_box();
    let d = b.dim();
    let k = substeps;
    let h = shift.grid().dt() / k as f64;
    let mut y = [0.0f64; 3];
    let mut at = |i: usize, th: f64| -> f64 {
        let (w0, w1) = (shift.point(i), shift.point((i + 1).min(t_index)));
        let j = t_index - i;
        for c in 0..d {
            let wb0 = bm[j * d + c];
            let wb1 = if j > 0 { bm[(j - 1) * d + c] } else { wb0 };
            y[c] = wb0 + th * (wb1 - wb0) + offset[c] - (w0[c] + th * (w1[c] - w0[c]));
        }
        interpolate(b, vg.values(), &y[..d])
    };
    if t_index == 0 {
        return 0.0;
    }
    let mut terms = Vec::with_capacity(t_index * k + 1);
    for i in 0..t_index {
        for q in 0..k {
            let wgt = if i == 0 && q == 0 { 0.5 } else { 1.0 };
            terms.push(wgt * at(i, q as f64 / k as f64));
        }
    }
    terms.push(0.5 * at(t_index, 0.0));
    compensated_sum(terms) * h
}

/// Classical exponent with the default number of substeps.
pub fn riemann_exponent(v: &SpectralField, wh: &SamplePath, w: &SamplePath, t: f64) -> Result<f64> {
    riemann_exponent_with(v, wh, w, t, super::solver::DEFAULT_SUBSTEPS)
}

/// `int_0^t V(W_{t-s} - w^H_s) ds`; `substeps = 1` is the plain grid
/// trapezoid. Both paths must live on the same grid.
pub fn riemann_exponent_with(v: &SpectralField, wh: &SamplePath, w: &SamplePath, t: f64, substeps: usize) -> Result<f64> {
    if substeps == 0 {
        return param("substeps must be at least 1");
    }
    if w.grid() != wh.grid() {
        return shape("Brownian and shift paths must share one grid");
    }
    if w.dim() != v.spectral_box().dim() || wh.dim() != w.dim() {
        return shape("paths and potential must have the same dimension");
    }
    let t_index = wh.grid().index_of(t)?;
    let vg = v.to_grid();
    Ok(riemann_core(&vg, wh, &w.values()[..(t_index + 1) * w.dim()], t_index, substeps, &[0.0; 3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{convolve, Evaluate};
    use crate::localtime::local_time;
    use crate::paths::{sample_bm, sample_fbm};
    use crate::rng::RngStream;
    use crate::sewing::sew_to_grid;
    use std::f64::consts::PI;

    fn setup(m: u32) -> (BoxSpec, SamplePath, SamplePath) {
        let g = TimeGrid::new(0.25, m).unwrap();
        let b = BoxSpec::new(1, 4.0, 128).unwrap();
        let wh = sample_fbm(0.3, &g, 1, RngStream::new(1, 0)).unwrap();
        let w = sample_bm(&g, 1, &[0.1], RngStream::new(2, 0)).unwrap();
        (b, wh, w)
    }

    #[test]
    fn cache_matches_spectral_convolution() {
        let (b, wh, w) = setup(7);
        let v = SpectralField::from_fn(&b, |x| (PI * x[0]).cos() + 0.3 * (2.5 * PI * x[0]).sin());
        let lt = local_time(&wh, &b).unwrap();
        let germ = build_germ(&v, &lt, &w, 0.25).unwrap();
        let direct = convolve(&v, &lt.increment_index(20, 90).unwrap()).unwrap();
        for (a, e) in germ.cache().row(90).iter().zip(germ.cache().row(20)).map(|(a, b)| a - b).zip(direct.values()) {
            assert!((a - e).abs() < 1e-12);
        }
        let y = w.point(128 - 20)[0];
        assert!((germ.eval(20, 90) - direct.evaluate(&[y])).abs() < 1e-12);
        assert_eq!(germ.eval(33, 33), 0.0);
    }

    #[test]
    fn two_dimensional_cache_matches_convolution() {
        let g = TimeGrid::new(0.1, 5).unwrap();
        let b = BoxSpec::new(2, 4.0, 16).unwrap();
        let wh = sample_fbm(0.3, &g, 2, RngStream::new(3, 0)).unwrap();
        let v = SpectralField::from_fn(&b, |x| (PI * x[0]).cos() * (0.5 * PI * x[1]).sin() + 0.2);
        let lt = local_time(&wh, &b).unwrap();
        let cache = GermCache::new(&v, &lt, 32).unwrap();
        let direct = convolve(&v, &lt.increment_index(3, 29).unwrap()).unwrap();
        for (l, e) in direct.values().iter().enumerate() {
            assert!((cache.row(29)[l] - cache.row(3)[l] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_potential_gives_zero_germ() {
        let (b, wh, w) = setup(6);
        let lt = local_time(&wh, &b).unwrap();
        let germ = build_germ(&SpectralField::zeros(&b), &lt, &w, 0.25).unwrap();
        assert_eq!(germ.eval(0, 64), 0.0);
        assert_eq!(riemann_exponent(&SpectralField::zeros(&b), &wh, &w, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn constant_shift_gives_closed_form_germ() {
        // w^H = 0: L_{s,r} = (r - s) delta_0 on the grid, so
        // A_{s,r} = (r - s) V(W_{t-s}) up to interpolation.
        let g = TimeGrid::new(0.25, 6).unwrap();
        let b = BoxSpec::new(1, 4.0, 512).unwrap();
        let wh = SamplePath::from_fn(g.clone(), 1, |_, x| x[0] = 0.0).unwrap();
        let w = sample_bm(&g, 1, &[0.3], RngStream::new(5, 0)).unwrap();
        let v = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
        let lt = local_time(&wh, &b).unwrap();
        let germ = build_germ(&v, &lt, &w, 0.25).unwrap();
        let dt = g.dt();
        let h = b.spacing(0);
        for (s, r) in [(0, 64), (10, 11), (5, 40)] {
            let y = w.point(64 - s)[0];
            let exact = (r - s) as f64 * dt * (2.0 * PI * y).cos();
            let err_bound = (r - s) as f64 * dt * (2.0 * PI * h).powi(2) / 8.0;
            assert!((germ.eval(s, r) - exact).abs() <= err_bound + 1e-14);
        }
    }

    #[test]
    fn constant_potential_integrates_exactly() {
        let (b, wh, w) = setup(6);
        let v = SpectralField::constant(&b, 1.7);
        let r = riemann_exponent_with(&v, &wh, &w, 0.25, 1).unwrap();
        assert!((r - 1.7 * 0.25).abs() < 1e-14);
        let lt = local_time(&wh, &b).unwrap();
        let s = sew_to_grid(&build_germ(&v, &lt, &w, 0.25).unwrap(), 0, 64).unwrap();
        assert!((s.value - 1.7 * 0.25).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_is_second_order_on_smooth_curves() {
        let b = BoxSpec::new(1, 4.0, 8192).unwrap();
        let v = SpectralField::from_fn(&b, |x| (0.5 * PI * x[0]).sin());
        let exps: Vec<f64> = [4u32, 6, 8]
            .iter()
            .map(|&m| {
                let g = TimeGrid::new(1.0, m).unwrap();
                let wh = SamplePath::from_fn(g.clone(), 1, |t, x| x[0] = 0.7 * t * t).unwrap();
                let w = SamplePath::from_fn(g, 1, |t, x| x[0] = (2.0 * t).sin()).unwrap();
                riemann_exponent_with(&v, &wh, &w, 1.0, 1).unwrap()
            })
            .collect();
        let ratio = (exps[0] - exps[1]).abs() / (exps[1] - exps[2]).abs();
        let slope = ratio.log2() / 2.0;
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }
}

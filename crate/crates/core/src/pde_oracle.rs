//! Deterministic oracle for the mollified shifted problem on the torus
//!
//! ```text
//! d_t u = 1/2 Lap u - V(x - w^H_t) u,   u(0) = f,
//! ```
//!
//! solved by Strang splitting with exact spectral diffusion, plus the
//! weak-form residual used to audit any candidate solution.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::fields::{dealias, BoxSpec, GridField, SpectralField};
use crate::grid::TimeGrid;
use crate::paths::SamplePath;
use crate::stats::compensated_sum;

/// Fraction of coefficient energy above |k_a| = n/3 that triggers a warning.
pub const HIGH_MODE_WARNING: f64 = 0.01;

/// u at every point of a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    grid: TimeGrid,
    fields: Vec<GridField>,
}

impl SolutionField {
    pub fn new(grid: TimeGrid, fields: Vec<GridField>) -> Result<Self> {
        if fields.len() != grid.len() {
            return shape(format!("{} snapshots for {} grid times", fields.len(), grid.len()));
        }
        if fields.windows(2).any(|w| w[0].grid_box() != w[1].grid_box()) {
            return shape("all snapshots must share one box");
        }
        Ok(Self { grid, fields })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn fields(&self) -> &[GridField] {
        &self.fields
    }

    pub fn at(&self, i: usize) -> &GridField {
        &self.fields[i]
    }

    pub fn field_box(&self) -> &BoxSpec {
        self.fields[0].grid_box()
    }

    /// Restriction to a coarser dyadic time grid and every `n / n_coarse`-th
    /// node per axis.
    pub fn subsample(&self, level: u32, n_coarse: usize) -> Result<SolutionField> {
        let coarse = self.grid.coarsen(level)?;
        let tf = self.grid.refinement_factor(&coarse)?;
        let b = self.field_box();
        if n_coarse == 0 || b.n() % n_coarse != 0 {
            return param(format!("{n_coarse} nodes do not divide the {} grid nodes", b.n()));
        }
        let sf = b.n() / n_coarse;
        let cb = b.with_n(n_coarse)?;
        let fields = (0..coarse.len())
            .map(|i| {
                let src = &self.fields[i * tf];
                let vals = (0..cb.len())
                    .map(|lin| {
                        let idx = cb.unravel(lin);
                        let mut fine = [0usize; 3];
                        for a in 0..cb.dim() {
                            fine[a] = idx[a] * sf;
                        }
                        src.values()[b.ravel(&fine[..cb.dim()])]
                    })
                    .collect();
                GridField::new_unchecked(cb.clone(), vals)
            })
            .collect();
        SolutionField::new(coarse, fields)
    }

    /// CSV of one snapshot: header `x1..xd,u`.
    pub fn write_csv<W: Write>(&self, i: usize, w: W) -> std::io::Result<()> {
        self.fields[i].write_csv(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReactionRule {
    /// Exact time integral of V(x - w) along each linear piece of the path.
    #[default]
    SegmentAverage,
    /// V(x - w) frozen at the midpoint of the step.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FdOptions {
    pub reaction: ReactionRule,
}

pub fn fd_solve(v: &SpectralField, wh: &SamplePath, f: &SpectralField, grid: &TimeGrid, box_: &BoxSpec) -> Result<SolutionField> {
    fd_solve_with(v, wh, f, grid, box_, FdOptions::default())
}

fn on_box(g: &SpectralField, b: &BoxSpec, what: &str) -> Result<SpectralField> {
    let gb = g.spectral_box();
    if gb.dim() != b.dim() || gb.sides() != b.sides() {
        return shape(format!("{what} lives on a different torus than the solver box"));
    }
    g.resample(b.n())
}

/// Coefficient energy outside the 2/3 band over the total.
fn high_mode_fraction(v: &SpectralField) -> f64 {
    let total = compensated_sum(v.coefficients().iter().map(|c| c.norm_sqr()));
    if total == 0.0 {
        return 0.0;
    }
    let low = compensated_sum(dealias(v).coefficients().iter().map(|c| c.norm_sqr()));
    ((total - low) / total).max(0.0)
}

/// Per-mode wavevectors of a box, row-major like the coefficients.
fn wavevectors(b: &BoxSpec) -> Vec<[f64; 3]> {
    (0..b.len())
        .map(|lin| {
            let idx = b.unravel(lin);
            let mut k = [0.0; 3];
            for a in 0..b.dim() {
                k[a] = b.wavenumber(a, idx[a]);
            }
            k
        })
        .collect()
}

fn dot(a: &[f64; 3], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// sin(x)/x with the removable singularity filled in.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Strang splitting on `grid`, a dyadic coarsening of the shift grid:
/// half-step heat semigroup, full-step multiplication by
/// exp(-int V(x - w_s) ds), half-step heat semigroup.
pub fn fd_solve_with(
    v: &SpectralField,
    wh: &SamplePath,
    f: &SpectralField,
    grid: &TimeGrid,
    box_: &BoxSpec,
    opts: FdOptions,
) -> Result<SolutionField> {
    let d = box_.dim();
    if d > 2 {
        return Err(Error::Unsupported(format!("the oracle runs in d <= 2, got d = {d}")));
    }
    if wh.dim() != d {
        return shape(format!("shift path in d = {}, box in d = {d}", wh.dim()));
    }
    let sub = wh.grid().refinement_factor(grid)?;
    let vb = on_box(v, box_, "potential")?;
    let fb = on_box(f, box_, "initial condition")?;
    let hm = high_mode_fraction(&vb);
    if hm > HIGH_MODE_WARNING {
        log::warn!("potential has {:.1}% of its energy above the 2/3 band; mollify before solving", 100.0 * hm);
    }
    let dt = grid.dt();
    let xi = box_.xi_norms();
    let half: Vec<f64> = xi.iter().map(|x| (-0.25 * x * x * dt).exp()).collect();
    let kv = wavevectors(box_);
    let vc = vb.coefficients();
    let h_sub = dt / sub as f64;

    let mut fields = Vec::with_capacity(grid.len());
    fields.push(fb.to_grid());
    let mut c: Vec<Complex64> = fb.coefficients().to_vec();
    let mut acc = vec![Complex64::new(0.0, 0.0); box_.len()];
    let mut wm = vec![0.0; d];
    for n in 0..grid.steps() {
        for (ck, m) in c.iter_mut().zip(&half) {
            *ck *= m;
        }
        let u = SpectralField::from_coefficients(box_.clone(), c.clone())?.to_grid();
        acc.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        match opts.reaction {
            ReactionRule::SegmentAverage => {
                for j in 0..sub {
                    let (w0, w1) = (wh.point(n * sub + j), wh.point(n * sub + j + 1));
                    for a in 0..d {
                        wm[a] = 0.5 * (w0[a] + w1[a]);
                    }
                    for (lin, a) in acc.iter_mut().enumerate() {
                        let k = &kv[lin];
                        let dw: f64 = (0..d).map(|q| k[q] * (w1[q] - w0[q])).sum();
                        *a += vc[lin] * Complex64::from_polar(h_sub * sinc(0.5 * dw), -dot(k, &wm));
                    }
                }
            }
            ReactionRule::Midpoint => {
                wh.value_at(grid.time(n) + 0.5 * dt, &mut wm);
                for (lin, a) in acc.iter_mut().enumerate() {
                    *a = vc[lin] * Complex64::from_polar(dt, -dot(&kv[lin], &wm));
                }
            }
        }
        let r = SpectralField::from_coefficients(box_.clone(), acc.clone())?.to_grid();
        let next: Vec<f64> = u.values().iter().zip(r.values()).map(|(u, r)| u * (-r).exp()).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: n + 1 });
        }
        let s = SpectralField::from_grid(&GridField::new_unchecked(box_.clone(), next));
        c = s.coefficients().to_vec();
        for (ck, m) in c.iter_mut().zip(&half) {
            *ck *= m;
        }
        fields.push(SpectralField::from_coefficients(box_.clone(), c.clone())?.to_grid());
    }
    SolutionField::new(grid.clone(), fields)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeQuadrature {
    /// Trapezoid in u, exact in the shift phase along each path segment.
    #[default]
    SegmentExact,
    /// Plain trapezoid on the solution's time grid.
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub t: f64,
    /// |signed|.
    pub residual: f64,
    pub signed: f64,
    /// <u_t - u_0, phi>.
    pub lhs: f64,
    /// int_0^t <u_s, 1/2 Lap phi> ds.
    pub diffusion_term: f64,
    /// int_0^t <V(. - w_s) u_s, phi> ds, product in the 2/3 band.
    pub reaction_term: f64,
}

pub fn weak_residual(u: &SolutionField, v: &SpectralField, wh: &SamplePath, phi: &SpectralField, t: f64) -> Result<WeakResidual> {
    weak_residual_with(u, v, wh, phi, t, TimeQuadrature::default())
}

/// Filon weights for int_0^1 [(1 - s) g0 + s g1] e^{-i z s} ds = a1 g0 + a2 g1.
fn filon(z: f64) -> (Complex64, Complex64) {
    let i = Complex64::new(0.0, 1.0);
    if z.abs() < 1e-3 {
        let z2 = z * z;
        let a1 = Complex64::new(0.5 - z2 / 24.0, 0.0) - i * z * (1.0 / 6.0 - z2 / 120.0);
        let a2 = Complex64::new(0.5 - z2 / 8.0, 0.0) - i * z * (1.0 / 3.0 - z2 / 30.0);
        return (a1, a2);
    }
    let e = Complex64::from_polar(1.0, -z);
    let iz = i * z;
    let a1 = 1.0 / iz + (1.0 - e) / (z * z);
    let a2 = -e / iz - (1.0 - e) / (z * z);
    (a1, a2)
}

/// <u_t - u_0, phi> - int <u_s, Lap phi / 2> ds + int <V(. - w_s) u_s, phi> ds
/// on V's box. `u` may live on a dyadic coarsening of the shift grid and on
/// any node count of the same torus.
pub fn weak_residual_with(
    u: &SolutionField,
    v: &SpectralField,
    wh: &SamplePath,
    phi: &SpectralField,
    t: f64,
    quad: TimeQuadrature,
) -> Result<WeakResidual> {
    let b = v.spectral_box().clone();
    let d = b.dim();
    if wh.dim() != d {
        return shape("shift path and potential must have the same dimension");
    }
    let sub = wh.grid().refinement_factor(u.grid())?;
    let ti = u.grid().index_of(t)?;
    let phib = on_box(phi, &b, "test field")?;
    let us: Vec<SpectralField> = u.fields[..=ti]
        .iter()
        .map(|g| on_box(&SpectralField::from_grid(g), &b, "solution"))
        .collect::<Result<_>>()?;

    let lhs = us[ti].sub(&us[0])?.inner(&phib)?;

    let dt = u.grid().dt();
    let half_lap = phib.laplacian().scale(0.5);
    let diff_vals: Vec<f64> = us.iter().map(|s| s.inner(&half_lap)).collect::<Result<_>>()?;
    let diffusion_term = trapezoid(&diff_vals, dt);

    // <D(V)(. - w), g_s> with g_s = D(u_s) D(phi); the grid product is exact
    // on the band of D(V).
    let vd = dealias(v);
    let phid = dealias(&phib).to_grid();
    let band: Vec<usize> = (0..b.len()).filter(|&l| vd.coefficients()[l] != Complex64::new(0.0, 0.0)).collect();
    let kv = wavevectors(&b);
    let gs: Vec<Vec<Complex64>> = us
        .iter()
        .map(|s| {
            let ug = dealias(s).to_grid();
            let prod: Vec<f64> = ug.values().iter().zip(phid.values()).map(|(a, c)| a * c).collect();
            let g = SpectralField::from_grid(&GridField::new_unchecked(b.clone(), prod));
            band.iter().map(|&l| g.coefficients()[l].conj()).collect()
        })
        .collect();
    let vol = b.volume();
    let vcoef: Vec<Complex64> = band.iter().map(|&l| vd.coefficients()[l] * vol).collect();
    let pairing_at = |g: &[Complex64], w: &[f64]| -> f64 {
        compensated_sum(
            band.iter()
                .enumerate()
                .map(|(q, &l)| (vcoef[q] * g[q] * Complex64::from_polar(1.0, -dot(&kv[l], w))).re),
        )
    };
    let reaction_term = match quad {
        TimeQuadrature::Trapezoid => {
            let vals: Vec<f64> = (0..=ti).map(|n| pairing_at(&gs[n], wh.point(n * sub))).collect();
            trapezoid(&vals, dt)
        }
        TimeQuadrature::SegmentExact => {
            let h = dt / sub as f64;
            let mut terms = Vec::with_capacity(ti * sub);
            let mut g0 = vec![Complex64::new(0.0, 0.0); band.len()];
            let mut g1 = g0.clone();
            for n in 0..ti {
                for j in 0..sub {
                    let (th0, th1) = (j as f64 / sub as f64, (j + 1) as f64 / sub as f64);
                    for q in 0..band.len() {
                        g0[q] = gs[n][q] * (1.0 - th0) + gs[n + 1][q] * th0;
                        g1[q] = gs[n][q] * (1.0 - th1) + gs[n + 1][q] * th1;
                    }
                    let (w0, w1) = (wh.point(n * sub + j), wh.point(n * sub + j + 1));
                    let s: f64 = band
                        .iter()
                        .enumerate()
                        .map(|(q, &l)| {
                            let k = &kv[l];
                            let z: f64 = (0..d).map(|a| k[a] * (w1[a] - w0[a])).sum();
                            let (a1, a2) = filon(z);
                            (vcoef[q] * Complex64::from_polar(1.0, -dot(k, w0)) * (a1 * g0[q] + a2 * g1[q])).re
                        })
                        .sum();
                    terms.push(s * h);
                }
            }
            compensated_sum(terms)
        }
    };
    let signed = lhs - diffusion_term + reaction_term;
    Ok(WeakResidual {
        t,
        residual: signed.abs(),
        signed,
        lhs,
        diffusion_term,
        reaction_term,
    })
}

fn trapezoid(vals: &[f64], dt: f64) -> f64 {
    let n = vals.len();
    if n < 2 {
        return 0.0;
    }
    dt * (compensated_sum(vals.iter().copied()) - 0.5 * (vals[0] + vals[n - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{mollify, sample_white_noise, MollifierSpec};
    use crate::paths::sample_fbm;
    use crate::rng::RngStream;
    use std::f64::consts::PI;

    fn unit_path(m: u32) -> SamplePath {
        let g = TimeGrid::new(0.1, m).unwrap();
        SamplePath::from_fn(g, 1, |t, w| w[0] = 0.3 * (7.0 * t).sin()).unwrap()
    }

    #[test]
    fn heat_fixture() {
        let b = BoxSpec::new(1, 1.0, 128).unwrap();
        let wh = unit_path(10);
        let f = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
        let u = fd_solve(&SpectralField::zeros(&b), &wh, &f, wh.grid(), &b).unwrap();
        let decay = (-2.0 * PI * PI * 0.1f64).exp();
        let last = u.at(u.grid().steps());
        for lin in 0..b.len() {
            let x = b.node(lin)[0];
            assert!((last.values()[lin] - decay * (2.0 * PI * x).cos()).abs() < 1e-6);
        }
        assert_eq!(u.at(0), &f.to_grid());
    }

    #[test]
    fn constant_reaction_factors_out() {
        let b = BoxSpec::new(1, 2.0, 64).unwrap();
        let wh = unit_path(8);
        let f = SpectralField::from_fn(&b, |x| (PI * x[0]).sin().exp());
        let z = fd_solve(&SpectralField::zeros(&b), &wh, &f, wh.grid(), &b).unwrap();
        let c = fd_solve(&SpectralField::constant(&b, 1.7), &wh, &f, wh.grid(), &b).unwrap();
        let k = (-1.7f64 * 0.1).exp();
        for (a, e) in c.at(256).values().iter().zip(z.at(256).values()) {
            assert!((a - k * e).abs() < 1e-10 * e.abs().max(1e-3));
        }
    }

    #[test]
    fn dimension_three_is_unsupported() {
        let b = BoxSpec::new(3, 1.0, 8).unwrap();
        let g = TimeGrid::new(0.1, 2).unwrap();
        let wh = SamplePath::from_fn(g.clone(), 3, |_, w| w.fill(0.0)).unwrap();
        let f = SpectralField::zeros(&b);
        assert!(matches!(fd_solve(&f, &wh, &f, &g, &b), Err(Error::Unsupported(_))));
    }

    #[test]
    fn exact_heat_solution_has_tiny_residual() {
        // Trapezoid error is about t (lambda dt)^2 / 12 with lambda = 2 pi^2.
        let b = BoxSpec::new(1, 1.0, 32).unwrap();
        let wh = unit_path(13);
        let fields = wh
            .grid()
            .points()
            .iter()
            .map(|&t| GridField::from_fn(&b, |x| (-2.0 * PI * PI * t).exp() * (2.0 * PI * x[0]).cos()))
            .collect();
        let u = SolutionField::new(wh.grid().clone(), fields).unwrap();
        let phi = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos() + 0.3 * (4.0 * PI * x[0]).sin());
        let r = weak_residual(&u, &SpectralField::zeros(&b), &wh, &phi, 0.1).unwrap();
        assert!(r.residual < 1e-8, "{r:?}");
    }

    #[test]
    fn filon_weights_are_continuous_at_the_switch() {
        for z in [0.999e-3, 1.001e-3, -1.0005e-3] {
            let (a, b) = filon(z);
            let e = Complex64::from_polar(1.0, -z);
            let i = Complex64::new(0.0, 1.0);
            let ea = 1.0 / (i * z) + (1.0 - e) / (z * z);
            let eb = -e / (i * z) - (1.0 - e) / (z * z);
            assert!((a - ea).norm() < 1e-9 && (b - eb).norm() < 1e-9);
        }
    }

    #[test]
    fn solver_output_has_small_residual() {
        let b = BoxSpec::new(1, 4.0, 128).unwrap();
        let g = TimeGrid::new(0.1, 9).unwrap();
        let wh = sample_fbm(0.2, &g, 1, RngStream::new(3, 0)).unwrap();
        let v = mollify(&sample_white_noise(&b, RngStream::new(4, 0)), MollifierSpec::gaussian(0.3)).unwrap();
        let f = SpectralField::from_fn(&b, |x| (PI * x[0] / 2.0).cos());
        let phi = SpectralField::from_fn(&b, |x| (-2.0 * x[0] * x[0]).exp());
        let u = fd_solve(&v, &wh, &f, &g, &b).unwrap();
        let r = weak_residual(&u, &v, &wh, &phi, 0.1).unwrap();
        assert!(r.residual < 1e-5 * r.lhs.abs().max(r.reaction_term.abs()), "{r:?}");
    }

    #[test]
    fn subsample_keeps_the_nodes() {
        let b = BoxSpec::new(1, 1.0, 64).unwrap();
        let wh = unit_path(6);
        let f = SpectralField::from_fn(&b, |x| (2.0 * PI * x[0]).cos());
        let u = fd_solve(&SpectralField::zeros(&b), &wh, &f, wh.grid(), &b).unwrap();
        let s = u.subsample(3, 16).unwrap();
        assert_eq!(s.grid().steps(), 8);
        assert_eq!(s.at(8).values()[3], u.at(64).values()[12]);
    }
}

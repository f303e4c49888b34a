//! Brownian and fractional Brownian sample paths on dyadic grids.
//!
//! fBm is synthesised exactly: the fractional Gaussian noise of one grid step
//! is drawn by circulant embedding (Davies-Harte), with a Cholesky
//! factorisation of the Toeplitz covariance as fallback. Coordinates of a
//! d-dimensional path are independent. Between grid points a path is the
//! linear interpolant of its samples.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::Fft;
use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::fft;
use crate::grid::TimeGrid;
use crate::rng::RngStream;
use crate::stats::mean_stderr;

/// Law a path was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathLaw {
    Brownian,
    Fractional { hurst: f64 },
    /// Supplied by the caller (fixtures, deterministic curves).
    Given,
}

/// A d-dimensional path sampled on every point of a [`TimeGrid`];
/// `values` is row-major with one row of `dim` coordinates per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    law: PathLaw,
}

impl SamplePath {
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>, law: PathLaw) -> Result<Self> {
        if dim == 0 {
            return param("path dimension must be at least 1");
        }
        if values.len() != grid.len() * dim {
            return shape(format!(
                "path values have length {}, expected {} points x {dim}",
                values.len(),
                grid.len()
            ));
        }
        Ok(Self {
            grid,
            dim,
            values,
            law,
        })
    }

    /// Path t -> f(t) for a caller-supplied curve.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; grid.len() * dim];
        for (i, row) in values.chunks_exact_mut(dim).enumerate() {
            f(grid.time(i), row);
        }
        Self::from_values(grid, dim, values, PathLaw::Given)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn law(&self) -> PathLaw {
        self.law
    }

    pub fn hurst(&self) -> Option<f64> {
        match self.law {
            PathLaw::Brownian => Some(0.5),
            PathLaw::Fractional { hurst } => Some(hurst),
            PathLaw::Given => None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Linear interpolation at time `t`, clamped to [0, T].
    pub fn value_at(&self, t: f64, out: &mut [f64]) {
        let x = (t / self.grid.dt()).clamp(0.0, self.grid.steps() as f64);
        let i = (x.floor() as usize).min(self.grid.steps() - 1);
        let th = x - i as f64;
        let (a, b) = (self.point(i), self.point(i + 1));
        for c in 0..self.dim {
            out[c] = a[c] + th * (b[c] - a[c]);
        }
    }

    /// The same path seen on a coarser dyadic grid.
    pub fn subsample(&self, level: u32) -> Result<SamplePath> {
        let coarse = self.grid.coarsen(level)?;
        let stride = self.grid.refinement_factor(&coarse)?;
        let values = (0..coarse.len())
            .flat_map(|i| self.point(i * stride).iter().copied())
            .collect();
        Self::from_values(coarse, self.dim, values, self.law)
    }

    /// Path plus a constant vector.
    pub fn translated(&self, offset: &[f64]) -> SamplePath {
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.dim) {
            for (v, o) in row.iter_mut().zip(offset) {
                *v += o;
            }
        }
        out
    }

    /// Largest coordinate range max_t w - min_t w.
    pub fn max_range(&self) -> f64 {
        (0..self.dim)
            .map(|c| {
                let it = self.values.iter().skip(c).step_by(self.dim);
                let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Debug export: header `t,x1..xd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|c| format!("x{c}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(w, "{}", self.grid.time(i))?;
            for v in self.point(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Standard Brownian motion started at `start`.
pub fn sample_bm(grid: &TimeGrid, d: usize, start: &[f64], rng: RngStream) -> Result<SamplePath> {
    if d == 0 {
        return param("Brownian dimension must be at least 1");
    }
    if start.len() != d {
        return shape(format!("start point has {} coordinates, expected {d}", start.len()));
    }
    let mut g = rng.generator();
    let sd = grid.dt().sqrt();
    let mut values = vec![0.0; grid.len() * d];
    values[..d].copy_from_slice(start);
    for i in 1..grid.len() {
        for c in 0..d {
            let z: f64 = g.sample(StandardNormal);
            values[i * d + c] = values[(i - 1) * d + c] + sd * z;
        }
    }
    SamplePath::from_values(grid.clone(), d, values, PathLaw::Brownian)
}

/// Autocovariance of fractional Gaussian noise at lag k for steps of size dt.
pub fn fgn_autocovariance(hurst: f64, dt: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * dt.powf(h2) * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmMethod {
    /// Circulant embedding, falling back to Cholesky if the embedding has
    /// materially negative eigenvalues.
    Auto,
    CirculantEmbedding,
    Cholesky,
}

enum Synthesis {
    Circulant {
        /// sqrt(lambda_k / M) for the 2n-point embedding.
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        /// Dense lower factor, row-major n x n.
        factor: Vec<f64>,
    },
}

/// Largest step count for which the dense fallback is attempted.
pub const CHOLESKY_MAX_STEPS: usize = 1 << 13;

/// Reusable exact fBm sampler for one (H, grid).
pub struct FbmGenerator {
    hurst: f64,
    grid: TimeGrid,
    synthesis: Synthesis,
}

impl FbmGenerator {
    pub fn new(hurst: f64, grid: &TimeGrid) -> Result<Self> {
        Self::with_method(hurst, grid, FbmMethod::Auto)
    }

    pub fn with_method(hurst: f64, grid: &TimeGrid, method: FbmMethod) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return param(format!("Hurst parameter must lie in (0, 1), got {hurst}"));
        }
        let n = grid.steps();
        let dt = grid.dt();
        let mut min_eig = f64::NAN;
        if method != FbmMethod::Cholesky {
            let (scale, lo) = circulant_scale(hurst, dt, n);
            min_eig = lo;
            if let Some(scale) = scale {
                return Ok(Self {
                    hurst,
                    grid: grid.clone(),
                    synthesis: Synthesis::Circulant {
                        scale,
                        fft: fft::plan(2 * n, false),
                    },
                });
            }
            if method == FbmMethod::CirculantEmbedding {
                return Err(Error::Generation {
                    min_eigenvalue: min_eig,
                    condition: f64::NAN,
                });
            }
            log::warn!("circulant embedding not nonnegative (min eigenvalue {min_eig:.3e}); using Cholesky");
        }
        if n > CHOLESKY_MAX_STEPS {
            return Err(Error::Generation {
                min_eigenvalue: min_eig,
                condition: f64::NAN,
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, dt, i.abs_diff(j)));
        match cov.clone().cholesky() {
            Some(ch) => {
                let l = ch.l();
                let factor = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
                Ok(Self {
                    hurst,
                    grid: grid.clone(),
                    synthesis: Synthesis::Cholesky { factor },
                })
            }
            None => {
                let ev = cov.symmetric_eigenvalues();
                let hi = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let lo = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                Err(Error::Generation {
                    min_eigenvalue: min_eig,
                    condition: hi / lo,
                })
            }
        }
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.synthesis, Synthesis::Circulant { .. })
    }

    /// One stationary noise sequence (n increments) for a single coordinate.
    fn noise(&self, g: &mut impl Rng, out: &mut [f64]) {
        let n = out.len();
        match &self.synthesis {
            Synthesis::Circulant { scale, fft } => {
                let mut buf: Vec<Complex64> = scale
                    .iter()
                    .map(|s| {
                        let a: f64 = g.sample(StandardNormal);
                        let b: f64 = g.sample(StandardNormal);
                        Complex64::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut buf);
                for (o, y) in out.iter_mut().zip(&buf) {
                    *o = y.re;
                }
            }
            Synthesis::Cholesky { factor } => {
                let z: Vec<f64> = (0..n).map(|_| g.sample(StandardNormal)).collect();
                for i in 0..n {
                    let row = &factor[i * n..i * n + i + 1];
                    out[i] = row.iter().zip(&z).map(|(l, z)| l * z).sum();
                }
            }
        }
    }

    /// d independent fBm coordinates started at the origin.
    pub fn sample(&self, d: usize, rng: RngStream) -> Result<SamplePath> {
        if d == 0 {
            return param("fBm dimension must be at least 1");
        }
        let n = self.grid.steps();
        let mut g = rng.generator();
        let mut values = vec![0.0; (n + 1) * d];
        let mut inc = vec![0.0; n];
        for c in 0..d {
            self.noise(&mut g, &mut inc);
            let mut acc = 0.0;
            for (i, x) in inc.iter().enumerate() {
                acc += x;
                values[(i + 1) * d + c] = acc;
            }
        }
        SamplePath::from_values(self.grid.clone(), d, values, PathLaw::Fractional { hurst: self.hurst })
    }
}

/// Scaled square-root eigenvalues of the minimal circulant embedding, or
/// `None` if an eigenvalue is negative beyond rounding. Also returns the
/// smallest eigenvalue.
fn circulant_scale(hurst: f64, dt: f64, n: usize) -> (Option<Vec<f64>>, f64) {
    let m = 2 * n;
    let mut c: Vec<Complex64> = (0..m)
        .map(|j| {
            let k = if j <= n { j } else { m - j };
            Complex64::new(fgn_autocovariance(hurst, dt, k), 0.0)
        })
        .collect();
    fft::plan(m, false).process(&mut c);
    let lo = c.iter().fold(f64::INFINITY, |a, z| a.min(z.re));
    let hi = c.iter().fold(0.0f64, |a, z| a.max(z.re));
    if lo < -1e-10 * hi {
        return (None, lo);
    }
    let scale = c.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
    (Some(scale), lo)
}

pub fn sample_fbm(hurst: f64, grid: &TimeGrid, d: usize, rng: RngStream) -> Result<SamplePath> {
    FbmGenerator::new(hurst, grid)?.sample(d, rng)
}

fn lag_denominators(n_steps: usize, dt: f64, gamma: f64) -> Vec<f64> {
    (0..=n_steps).map(|k| (k as f64 * dt).powf(gamma)).collect()
}

fn increment_norm(path: &SamplePath, i: usize, j: usize) -> f64 {
    let (a, b) = (path.point(i), path.point(j));
    a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt()
}

/// Reference O(n^2) scan of max |w_t - w_s| / |t - s|^gamma over grid pairs.
pub fn holder_modulus_bruteforce(path: &SamplePath, gamma: f64) -> f64 {
    let n = path.grid().steps();
    let den = lag_denominators(n, path.grid().dt(), gamma);
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..=n {
            best = best.max(increment_norm(path, i, j) / den[j - i]);
        }
    }
    best
}

/// Sparse tables answering range max/min queries on one coordinate.
struct RangeTable {
    max: Vec<Vec<f64>>,
    min: Vec<Vec<f64>>,
}

impl RangeTable {
    fn new(xs: Vec<f64>) -> Self {
        let mut max = vec![xs.clone()];
        let mut min = vec![xs];
        let len = max[0].len();
        let mut w = 1;
        while 2 * w <= len {
            let (pm, pn) = (max.last().unwrap(), min.last().unwrap());
            let nm: Vec<f64> = (0..=len - 2 * w).map(|i| pm[i].max(pm[i + w])).collect();
            let nn: Vec<f64> = (0..=len - 2 * w).map(|i| pn[i].min(pn[i + w])).collect();
            max.push(nm);
            min.push(nn);
            w *= 2;
        }
        Self { max, min }
    }

    /// max - min over indices [a, b] inclusive.
    fn range(&self, a: usize, b: usize) -> f64 {
        let len = b - a + 1;
        let k = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        let w = 1 << k;
        let hi = self.max[k][a].max(self.max[k][b + 1 - w]);
        let lo = self.min[k][a].min(self.min[k][b + 1 - w]);
        hi - lo
    }
}

/// Exact max over all grid pairs s != t of |w_t - w_s| / |t - s|^gamma
/// (Euclidean norm).
///
/// Lags are grouped in dyadic blocks [k, 2k). Within a block every ratio is
/// bounded by the path's range over a window of 2k points divided by
/// (k dt)^gamma; windows whose bound cannot beat the running maximum are
/// skipped and the rest are scanned exactly, so the result equals
/// [`holder_modulus_bruteforce`] bit for bit.
pub fn holder_modulus(path: &SamplePath, gamma: f64) -> f64 {
    let n = path.grid().steps();
    let d = path.dim();
    let den = lag_denominators(n, path.grid().dt(), gamma);
    let tables: Vec<RangeTable> = (0..d)
        .map(|c| RangeTable::new(path.values().iter().skip(c).step_by(d).copied().collect()))
        .collect();
    let window_bound = |a: usize, b: usize| -> f64 {
        tables.iter().map(|t| t.range(a, b).powi(2)).sum::<f64>().sqrt()
    };

    // Longest lags first: usually decisive for gamma < 1.
    let mut best = increment_norm(path, 0, n) / den[n];
    let mut blocks = Vec::new();
    let mut k = 1;
    while k <= n {
        blocks.push((k, (2 * k - 1).min(n)));
        k *= 2;
    }
    for &(lo, hi) in blocks.iter().rev() {
        if window_bound(0, n) / den[lo] <= best {
            continue;
        }
        for s in 0..n {
            if s + lo > n {
                break;
            }
            let end = (s + hi).min(n);
            if window_bound(s, end) / den[lo] <= best {
                continue;
            }
            for t in s + lo..=end {
                best = best.max(increment_norm(path, s, t) / den[t - s]);
            }
        }
    }
    best
}

/// Monte Carlo estimate of E[exp(a * c_gamma)] for the Hoelder modulus of a
/// one-dimensional Brownian motion on `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Summands that overflowed; they are excluded from mean and stderr.
    pub overflow_count: usize,
    pub mean_modulus: f64,
}

pub fn exp_moment_estimate(
    gamma: f64,
    a: f64,
    n_paths: usize,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<ExpMomentEstimate> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return param(format!("exponential moments need gamma in (0, 1/2), got {gamma}"));
    }
    if !(a >= 0.0 && a.is_finite()) {
        return param(format!("moment parameter a must be finite and nonnegative, got {a}"));
    }
    if n_paths == 0 {
        return param("need at least one path");
    }
    let moduli: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|j| sample_bm(grid, 1, &[0.0], rng.child(j as u64)).map(|p| holder_modulus(&p, gamma)))
        .collect::<Result<_>>()?;
    let summands: Vec<f64> = moduli.iter().map(|c| (a * c).exp()).collect();
    let finite: Vec<f64> = summands.iter().copied().filter(|v| v.is_finite()).collect();
    let (mean, stderr) = mean_stderr(&finite);
    Ok(ExpMomentEstimate {
        mean,
        stderr,
        n_paths,
        overflow_count: n_paths - finite.len(),
        mean_modulus: mean_stderr(&moduli).0,
    })
}

//! Occupation measures and local times of sampled paths.
//!
//! The path is read as its piecewise-linear interpolant. Each time step
//! deposits its duration into the grid cells `[x_j - h/2, x_j + h/2)` it
//! visits: either all of it into the cell of the step midpoint, or (the
//! default) spread along the straight segment in proportion to the time
//! spent in each cell, which is the exact occupation measure of the
//! interpolant binned onto the grid. Densities are mass / cell volume.
//!
//! Deposits are stored per step, so cumulative fields and increments
//! `L_{s,r}` are assembled on demand in O((r - s) * deposits per step).

use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Error, Result};
use crate::fields::{sobolev_norm_band, BoxSpec, GridField, SpectralField, TrigEvaluator};
use crate::grid::TimeGrid;
use crate::paths::SamplePath;
use crate::stats::{compensated_sum, fit_line};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Deposition {
    /// Whole step duration into the cell of the step midpoint.
    Midpoint,
    /// Duration spread along the segment between consecutive samples.
    #[default]
    Segment,
}

/// Range / box side above which the torus wrap is flagged.
pub const WRAP_WARNING_RATIO: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct LocalTimeField {
    box_: BoxSpec,
    grid: TimeGrid,
    deposition: Deposition,
    hurst: Option<f64>,
    /// Deposits of step i occupy offsets[i]..offsets[i + 1].
    offsets: Vec<usize>,
    cells: Vec<u32>,
    masses: Vec<f64>,
    range_ratio: f64,
}

pub fn local_time(path: &SamplePath, box_: &BoxSpec) -> Result<LocalTimeField> {
    local_time_with(path, box_, Deposition::Segment)
}

pub fn local_time_with(path: &SamplePath, box_: &BoxSpec, deposition: Deposition) -> Result<LocalTimeField> {
    let d = path.dim();
    if d != box_.dim() {
        return shape(format!("path dimension {d} differs from box dimension {}", box_.dim()));
    }
    if d > 2 {
        return Err(Error::Unsupported(format!("local-time fields are stored for d <= 2, got d = {d}")));
    }
    let grid = path.grid().clone();
    let dt = grid.dt();
    let steps = grid.steps();
    let min_side = box_.sides().iter().copied().fold(f64::INFINITY, f64::min);
    let range_ratio = path.max_range() / min_side;
    if range_ratio > WRAP_WARNING_RATIO {
        log::warn!("path range is {range_ratio:.2} x the box side; the periodic wrap is not benign");
    }
    let h: Vec<f64> = (0..d).map(|a| box_.spacing(a)).collect();
    let mut offsets = Vec::with_capacity(steps + 1);
    let mut cells = Vec::with_capacity(steps * 2);
    let mut masses = Vec::with_capacity(steps * 2);
    let mut thetas: Vec<f64> = Vec::new();
    let mut pos = [0.0f64; 3];
    offsets.push(0);
    for i in 0..steps {
        let (a, b) = (path.point(i), path.point(i + 1));
        match deposition {
            Deposition::Midpoint => {
                for c in 0..d {
                    pos[c] = 0.5 * (a[c] + b[c]);
                }
                cells.push(box_.cell_of(&pos[..d]) as u32);
                masses.push(dt);
            }
            Deposition::Segment => {
                thetas.clear();
                thetas.push(0.0);
                for c in 0..d {
                    // Cell faces sit at half-integer multiples of h.
                    let (ua, ub) = (a[c] / h[c], b[c] / h[c]);
                    let (lo, hi) = (ua.min(ub), ua.max(ub));
                    let mut face = (lo - 0.5).floor() + 1.5;
                    while face < hi {
                        if face > lo {
                            thetas.push((face - ua) / (ub - ua));
                        }
                        face += 1.0;
                    }
                }
                thetas.push(1.0);
                thetas.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let start = cells.len();
                for w in thetas.windows(2) {
                    let len = w[1] - w[0];
                    if len <= 0.0 {
                        continue;
                    }
                    let tm = 0.5 * (w[0] + w[1]);
                    for c in 0..d {
                        pos[c] = a[c] + tm * (b[c] - a[c]);
                    }
                    let cell = box_.cell_of(&pos[..d]) as u32;
                    if cells.len() > start && *cells.last().unwrap() == cell {
                        *masses.last_mut().unwrap() += dt * len;
                    } else {
                        cells.push(cell);
                        masses.push(dt * len);
                    }
                }
            }
        }
        offsets.push(cells.len());
    }
    Ok(LocalTimeField {
        box_: box_.clone(),
        grid,
        deposition,
        hurst: path.hurst(),
        offsets,
        cells,
        masses,
        range_ratio,
    })
}

impl LocalTimeField {
    pub fn field_box(&self) -> &BoxSpec {
        &self.box_
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn deposition(&self) -> Deposition {
        self.deposition
    }

    /// Hurst index of the generating path, when known.
    pub fn hurst(&self) -> Option<f64> {
        self.hurst
    }

    /// Path range over the smallest box side.
    pub fn range_ratio(&self) -> f64 {
        self.range_ratio
    }

    pub fn wraps(&self) -> bool {
        self.range_ratio > WRAP_WARNING_RATIO
    }

    /// Occupation mass (not density) deposited by step i -> i + 1.
    pub fn step_deposits(&self, step: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[step]..self.offsets[step + 1];
        self.cells[r.clone()].iter().map(|&c| c as usize).zip(self.masses[r].iter().copied())
    }

    /// Density of the occupation measure between grid indices i <= j.
    pub fn increment_index(&self, i: usize, j: usize) -> Result<GridField> {
        if i > j || j > self.grid.steps() {
            return param(format!("increment needs 0 <= s <= r <= {}, got ({i}, {j})", self.grid.steps()));
        }
        let mut values = vec![0.0; self.box_.len()];
        for step in i..j {
            for (cell, m) in self.step_deposits(step) {
                values[cell] += m;
            }
        }
        let inv = 1.0 / self.box_.cell_volume();
        for v in &mut values {
            *v *= inv;
        }
        GridField::new(self.box_.clone(), values)
    }

    /// L_{s,r} = L_r - L_s for grid times s <= r.
    pub fn increment(&self, s: f64, r: f64) -> Result<GridField> {
        self.increment_index(self.grid.index_of(s)?, self.grid.index_of(r)?)
    }

    /// Cumulative density L_{t_i}.
    pub fn density(&self, i: usize) -> Result<GridField> {
        self.increment_index(0, i)
    }

    /// Total occupation mass up to grid index i (equals t_i).
    pub fn total_mass(&self, i: usize) -> f64 {
        compensated_sum(self.masses[..self.offsets[i]].iter().copied())
    }
}

/// Quadrature settings for the two sides of the occupation formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationOptions {
    pub deposition: Deposition,
    /// Trapezoid sub-intervals per grid step along the interpolated path;
    /// 1 is the plain grid trapezoid.
    pub substeps: usize,
}

impl Default for OccupationOptions {
    fn default() -> Self {
        Self {
            deposition: Deposition::Segment,
            substeps: 16,
        }
    }
}

/// |int_0^t f(w_s) ds - int f(z) L_t(z) dz| with default quadrature.
pub fn occupation_residual(path: &SamplePath, f: &SpectralField, t: f64, box_: &BoxSpec) -> Result<f64> {
    occupation_residual_with(path, f, t, box_, OccupationOptions::default())
}

pub fn occupation_residual_with(
    path: &SamplePath,
    f: &SpectralField,
    t: f64,
    box_: &BoxSpec,
    opts: OccupationOptions,
) -> Result<f64> {
    f.spectral_box().check_same(box_, "occupation formula")?;
    if opts.substeps == 0 {
        return param("substeps must be at least 1");
    }
    let it = path.grid().index_of(t)?;
    let lt = local_time_with(path, box_, opts.deposition)?;
    let eval = TrigEvaluator::new(f);
    let d = path.dim();
    let k = opts.substeps;
    let dt = path.grid().dt() / k as f64;
    let mut pos = [0.0f64; 3];
    let mut terms = Vec::with_capacity(it * k + 1);
    for i in 0..it {
        let (a, b) = (path.point(i), path.point(i + 1));
        for q in 0..=k {
            let th = q as f64 / k as f64;
            for c in 0..d {
                pos[c] = a[c] + th * (b[c] - a[c]);
            }
            let w = if q == 0 || q == k { 0.5 } else { 1.0 };
            terms.push(w * dt * eval.eval(&pos[..d]));
        }
    }
    let time_side = compensated_sum(terms);
    let fg = f.to_grid();
    let space_side = compensated_sum((0..it).flat_map(|s| lt.step_deposits(s)).map(|(cell, m)| fg.values()[cell] * m));
    Ok((time_side - space_side).abs())
}

/// Which Fourier modes enter the increment norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralBand {
    Full,
    /// Modes with |xi| <= limit.
    Limit(f64),
}

impl SpectralBand {
    /// Frequencies resolved by a path with Hurst index H on steps of dt:
    /// |xi| <= dt^(-H), the inverse of one step's standard deviation.
    /// Beyond it the histogram estimator's noise floor dominates.
    pub fn resolved(hurst: f64, dt: f64) -> Self {
        SpectralBand::Limit(dt.powf(-hurst))
    }

    fn limit(&self) -> f64 {
        match self {
            SpectralBand::Full => f64::INFINITY,
            SpectralBand::Limit(x) => *x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityRow {
    pub pair_s: f64,
    pub pair_r: f64,
    pub dt: f64,
    pub norm: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityStudy {
    pub lambda: f64,
    pub gamma_fit: f64,
    /// 1 - (lambda + d/2) H when the generating H is known.
    pub gamma_bound: Option<f64>,
    pub c_est: f64,
    pub band: SpectralBand,
    /// Slope over all grid modes, for comparison with the banded fit.
    pub gamma_fit_full_band: f64,
    pub rows: Vec<RegularityRow>,
}

/// Largest admissible lambda for a path of Hurst index H in dimension d.
pub fn lambda_limit(hurst: f64, d: usize) -> f64 {
    1.0 / (2.0 * hurst) - d as f64 / 2.0
}

/// Time-regularity exponent bound 1 - (lambda + d/2) H.
pub fn gamma_bound(hurst: f64, lambda: f64, d: usize) -> f64 {
    1.0 - (lambda + d as f64 / 2.0) * hurst
}

/// Pairs (s, s + T 2^-j) for the given scales and start fractions of T.
pub fn dyadic_pairs(horizon: f64, scales: std::ops::RangeInclusive<u32>, starts: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for j in scales {
        let len = horizon * 2f64.powi(-(j as i32));
        for &s0 in starts {
            let s = s0 * horizon;
            if s + len <= horizon * (1.0 + 1e-12) {
                out.push((s, s + len));
            }
        }
    }
    out
}

/// Fit ||L_{s,r}||_{H^lambda} ~ C |r - s|^gamma over the given pairs.
pub fn regularity_study(
    lt: &LocalTimeField,
    lambda: f64,
    pairs: &[(f64, f64)],
    band: SpectralBand,
) -> Result<RegularityStudy> {
    if pairs.len() < 3 {
        return param(format!("regularity fit needs at least 3 pairs, got {}", pairs.len()));
    }
    let d = lt.box_.dim();
    if let Some(h) = lt.hurst {
        if lambda >= lambda_limit(h, d) {
            log::warn!("lambda = {lambda} is outside the admissible range lambda < {}", lambda_limit(h, d));
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut y_full = Vec::new();
    let mut rows = Vec::new();
    for &(s, r) in pairs {
        let inc = SpectralField::from_grid(&lt.increment(s, r)?);
        let norm = sobolev_norm_band(&inc, lambda, band.limit());
        let full = sobolev_norm_band(&inc, lambda, f64::INFINITY);
        x.push((r - s).ln());
        y.push(norm.ln());
        y_full.push(full.ln());
        rows.push(RegularityRow {
            pair_s: s,
            pair_r: r,
            dt: r - s,
            norm,
            bound: 0.0,
        });
    }
    let (gamma_fit, _) = fit_line(&x, &y);
    let (gamma_fit_full_band, _) = fit_line(&x, &y_full);
    let c_est = rows.iter().map(|row| row.norm / row.dt.powf(gamma_fit)).fold(0.0, f64::max);
    for row in &mut rows {
        row.bound = c_est * row.dt.powf(gamma_fit);
    }
    Ok(RegularityStudy {
        lambda,
        gamma_fit,
        gamma_bound: lt.hurst.map(|h| gamma_bound(h, lambda, d)),
        c_est,
        band,
        gamma_fit_full_band,
        rows,
    })
}

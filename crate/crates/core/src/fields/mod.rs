//! Periodic scalar fields on a box torus.
//!
//! A field lives either on the physical grid (`GridField`, nodes at
//! `j * side / N`) or as Fourier coefficients (`SpectralField`) with
//!
//! ```text
//! f(x) = sum_k c_k exp(i xi_k . x),   xi_k = 2 pi k / side,   |k_i| <= N/2.
//! ```
//!
//! Coefficients are stored in FFT order, so `c = FFT(values) / N^d`. The
//! Nyquist index of each axis stands for the real cosine mode at that
//! frequency.

mod ops;
mod spectral;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};

pub use ops::{
    c1_norm, convolve, mollify, multiply, sample_white_noise, sobolev_norm, sobolev_norm_band,
    white_noise_norm_expectation, Mollifier, MollifierSpec,
};
pub use spectral::{SpectralField, TrigEvaluator};
pub(crate) use ops::dealias;

/// Torus geometry: `dim` axes with `n` nodes each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    dim: usize,
    sides: Vec<f64>,
    n: usize,
}

impl BoxSpec {
    pub fn new(dim: usize, side: f64, n: usize) -> Result<Self> {
        Self::with_sides(vec![side; dim], n)
    }

    pub fn with_sides(sides: Vec<f64>, n: usize) -> Result<Self> {
        let dim = sides.len();
        if !(1..=3).contains(&dim) {
            return param(format!("box dimension must be 1, 2 or 3, got {dim}"));
        }
        if n < 4 || n % 2 != 0 {
            return param(format!("modes per axis must be even and at least 4, got {n}"));
        }
        if sides.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return param(format!("box sides must be positive, got {sides:?}"));
        }
        Ok(Self { dim, sides, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.sides[axis]
    }

    /// Total number of grid nodes, n^dim.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.sides[axis] / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    /// Same box with a different number of nodes per axis.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::with_sides(self.sides.clone(), n)
    }

    /// Signed frequency index of FFT position j (Nyquist maps to -n/2).
    pub fn mode(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    pub fn wavenumber(&self, axis: usize, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.mode(j) as f64 / self.sides[axis]
    }

    /// Per-axis FFT positions of linear index `lin` (axis 0 slowest).
    pub fn unravel(&self, mut lin: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = lin % self.n;
            lin /= self.n;
        }
        out
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &j| acc * self.n + j)
    }

    /// Euclidean norm |xi_k| for every linear index.
    pub fn xi_norms(&self) -> Vec<f64> {
        (0..self.len())
            .map(|lin| {
                let idx = self.unravel(lin);
                (0..self.dim).map(|a| self.wavenumber(a, idx[a]).powi(2)).sum::<f64>().sqrt()
            })
            .collect()
    }

    /// Coordinates of grid node `lin`.
    pub fn node(&self, lin: usize) -> [f64; 3] {
        let idx = self.unravel(lin);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Linear index of the cell [x_j - h/2, x_j + h/2) containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut lin = 0;
        for a in 0..self.dim {
            let j = (x[a] / self.spacing(a)).round().rem_euclid(self.n as f64) as usize % self.n;
            lin = lin * self.n + j;
        }
        lin
    }

    pub(crate) fn check_same(&self, other: &BoxSpec, what: &str) -> Result<()> {
        if self != other {
            return shape(format!("{what}: box {self:?} differs from {other:?}"));
        }
        Ok(())
    }
}

/// Point evaluation of a periodic field.
pub trait Evaluate {
    fn evaluate(&self, x: &[f64]) -> f64;
}

/// Real field sampled on the physical grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    #[serde(rename = "box")]
    box_: BoxSpec,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(box_: BoxSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != box_.len() {
            return shape(format!("grid field has {} values, box needs {}", values.len(), box_.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return param(format!("grid field value {i} is not finite"));
        }
        Ok(Self { box_, values })
    }

    pub(crate) fn new_unchecked(box_: BoxSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), box_.len());
        Self { box_, values }
    }

    pub fn zeros(box_: &BoxSpec) -> Self {
        Self {
            values: vec![0.0; box_.len()],
            box_: box_.clone(),
        }
    }

    pub fn from_fn(box_: &BoxSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..box_.len()).map(|lin| f(&box_.node(lin)[..box_.dim()])).collect();
        Self {
            box_: box_.clone(),
            values,
        }
    }

    pub fn grid_box(&self) -> &BoxSpec {
        &self.box_
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Riemann sum of the field over the box.
    pub fn integral(&self) -> f64 {
        crate::stats::compensated_sum(self.values.iter().copied()) * self.box_.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.box_.check_same(&other.box_, "grid field difference")?;
        Ok(Self::new_unchecked(
            self.box_.clone(),
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Grid quadrature of the product with another grid field.
    pub fn pairing(&self, other: &GridField) -> Result<f64> {
        self.box_.check_same(&other.box_, "grid pairing")?;
        Ok(crate::stats::compensated_sum(self.values.iter().zip(&other.values).map(|(a, b)| a * b))
            * self.box_.cell_volume())
    }

    /// Header `x1..xd,value`, one row per node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.box_.dim();
        let cols: Vec<String> = (1..=d).map(|a| format!("x{a}")).chain(["value".to_string()]).collect();
        writeln!(w, "{}", cols.join(","))?;
        for (lin, v) in self.values.iter().enumerate() {
            let x = self.box_.node(lin);
            for xa in &x[..d] {
                write!(w, "{xa},")?;
            }
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

impl Evaluate for GridField {
    /// Multilinear interpolation between nodes, periodic in every axis.
    fn evaluate(&self, x: &[f64]) -> f64 {
        interpolate(&self.box_, &self.values, x)
    }
}

/// Multilinear periodic interpolation of node values laid out as in
/// [`GridField`].
pub fn interpolate(b: &BoxSpec, values: &[f64], x: &[f64]) -> f64 {
    let n = b.n();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..b.dim() {
        let u = (x[a] / b.spacing(a)).rem_euclid(n as f64);
        let f = u.floor();
        base[a] = (f as usize) % n;
        frac[a] = u - f;
    }
    match b.dim() {
        1 => {
            let (i0, i1) = (base[0], (base[0] + 1) % n);
            values[i0] + frac[0] * (values[i1] - values[i0])
        }
        dim => {
            let mut acc = 0.0;
            for corner in 0..(1usize << dim) {
                let mut lin = 0;
                let mut w = 1.0;
                for a in 0..dim {
                    let up = (corner >> (dim - 1 - a)) & 1;
                    lin = lin * n + (base[a] + up) % n;
                    w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                acc += w * values[lin];
            }
            acc
        }
    }
}

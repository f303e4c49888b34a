use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{BoxSpec, Evaluate, GridField};
use crate::error::{shape, Result};
use crate::fft::fft_nd;

/// Real periodic field held as Fourier coefficients in FFT order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectralJson", into = "SpectralJson")]
pub struct SpectralField {
    box_: BoxSpec,
    coeffs: Vec<Complex64>,
}

/// On-disk form: `{box, coefficients: [[re, im], ...]}`.
#[derive(Serialize, Deserialize)]
struct SpectralJson {
    #[serde(rename = "box")]
    box_: BoxSpec,
    coefficients: Vec<[f64; 2]>,
}

impl TryFrom<SpectralJson> for SpectralField {
    type Error = crate::Error;
    fn try_from(j: SpectralJson) -> Result<Self> {
        let coeffs = j.coefficients.iter().map(|c| Complex64::new(c[0], c[1])).collect();
        SpectralField::from_coefficients(j.box_, coeffs)
    }
}

impl From<SpectralField> for SpectralJson {
    fn from(f: SpectralField) -> Self {
        SpectralJson {
            coefficients: f.coeffs.iter().map(|c| [c.re, c.im]).collect(),
            box_: f.box_,
        }
    }
}

impl SpectralField {
    pub fn zeros(box_: &BoxSpec) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); box_.len()],
            box_: box_.clone(),
        }
    }

    pub fn constant(box_: &BoxSpec, c: f64) -> Self {
        let mut f = Self::zeros(box_);
        f.coeffs[0] = Complex64::new(c, 0.0);
        f
    }

    pub fn from_coefficients(box_: BoxSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != box_.len() {
            return shape(format!("{} coefficients given, box needs {}", coeffs.len(), box_.len()));
        }
        Ok(Self { box_, coeffs })
    }

    pub fn from_grid(g: &GridField) -> Self {
        let b = g.grid_box().clone();
        let mut buf: Vec<Complex64> = g.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut buf, b.n(), b.dim(), false);
        let scale = 1.0 / b.len() as f64;
        for c in &mut buf {
            *c *= scale;
        }
        Self { box_: b, coeffs: buf }
    }

    /// Field whose grid values are f at the nodes.
    pub fn from_fn(box_: &BoxSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_grid(&GridField::from_fn(box_, f))
    }

    pub fn to_grid(&self) -> GridField {
        let mut buf = self.coeffs.clone();
        fft_nd(&mut buf, self.box_.n(), self.box_.dim(), true);
        GridField::new_unchecked(self.box_.clone(), buf.iter().map(|c| c.re).collect())
    }

    /// Largest |imaginary part| of the grid values, relative to the field
    /// scale; zero for an exactly Hermitian coefficient array.
    pub fn hermitian_defect(&self) -> f64 {
        let mut buf = self.coeffs.clone();
        fft_nd(&mut buf, self.box_.n(), self.box_.dim(), true);
        let scale = buf.iter().fold(0.0f64, |m, c| m.max(c.norm())).max(f64::MIN_POSITIVE);
        buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs())) / scale
    }

    pub fn spectral_box(&self) -> &BoxSpec {
        &self.box_
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Coefficient-wise map c_k -> m(k) c_k with the multiplier given per
    /// linear index.
    pub(crate) fn map_modes(&self, m: impl Fn(usize, Complex64) -> Complex64) -> Self {
        Self {
            box_: self.box_.clone(),
            coeffs: self.coeffs.iter().enumerate().map(|(i, &c)| m(i, c)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map_modes(|_, c| c * a)
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.box_.check_same(&other.box_, "spectral sum")?;
        Ok(self.map_modes(|i, c| c + other.coeffs[i]))
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.box_.check_same(&other.box_, "spectral difference")?;
        Ok(self.map_modes(|i, c| c - other.coeffs[i]))
    }

    /// L2 pairing over the box, vol * sum_k Re(c_k conj(d_k)).
    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.box_.check_same(&other.box_, "spectral pairing")?;
        let s = crate::stats::compensated_sum(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b.conj()).re));
        Ok(s * self.box_.volume())
    }

    fn is_nyquist(&self, j: usize) -> bool {
        j == self.box_.n() / 2
    }

    /// Spectral partial derivative of the given order along `axis`. Nyquist
    /// modes are dropped for odd orders (their derivative is not real).
    pub fn derivative(&self, axis: usize, order: u32) -> Self {
        let b = &self.box_;
        self.map_modes(|lin, c| {
            let j = b.unravel(lin)[axis];
            if order % 2 == 1 && self.is_nyquist(j) {
                return Complex64::new(0.0, 0.0);
            }
            c * Complex64::new(0.0, b.wavenumber(axis, j)).powu(order)
        })
    }

    pub fn laplacian(&self) -> Self {
        let xi = self.box_.xi_norms();
        self.map_modes(|lin, c| -c * xi[lin] * xi[lin])
    }

    /// Translate the graph by `offset`: the result is x -> f(x - offset).
    /// Exact for band-limited fields; a Nyquist component keeps only its
    /// grid-representable cosine part.
    pub fn translated(&self, offset: &[f64]) -> Self {
        let b = &self.box_;
        self.map_modes(|lin, c| {
            let idx = b.unravel(lin);
            let mut out = c;
            for a in 0..b.dim() {
                let ph = b.wavenumber(a, idx[a]) * offset[a];
                if self.is_nyquist(idx[a]) {
                    out *= ph.cos();
                } else {
                    out *= Complex64::from_polar(1.0, -ph);
                }
            }
            out
        })
    }

    /// Same field on a box with `n` nodes per axis: zero-padding when
    /// refining (Nyquist split evenly between +-n/2), truncation when
    /// coarsening (the new Nyquist row is dropped).
    pub fn resample(&self, n: usize) -> Result<Self> {
        let old = &self.box_;
        if n == old.n() {
            return Ok(self.clone());
        }
        let nb = old.with_n(n)?;
        let dim = old.dim();
        let mut out = vec![Complex64::new(0.0, 0.0); nb.len()];
        for lin in 0..old.len() {
            let c = self.coeffs[lin];
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let idx = old.unravel(lin);
            // Candidate target modes per axis with weights.
            let mut targets: Vec<(Vec<i64>, f64)> = vec![(Vec::new(), 1.0)];
            let mut keep = true;
            for &j in &idx[..dim] {
                let k = old.mode(j);
                let opts: Vec<(i64, f64)> = if n > old.n() && self.is_nyquist(j) {
                    vec![(k, 0.5), (-k, 0.5)]
                } else if (k.unsigned_abs() as usize) < n / 2 {
                    vec![(k, 1.0)]
                } else {
                    keep = false;
                    break;
                };
                targets = targets
                    .into_iter()
                    .flat_map(|(v, w)| {
                        opts.iter().map(move |&(k, wk)| {
                            let mut v = v.clone();
                            v.push(k);
                            (v, w * wk)
                        })
                    })
                    .collect();
            }
            if !keep {
                continue;
            }
            for (ks, w) in targets {
                let pos: Vec<usize> = ks.iter().map(|&k| k.rem_euclid(n as i64) as usize).collect();
                out[nb.ravel(&pos)] += c * w;
            }
        }
        Self::from_coefficients(nb, out)
    }

    /// Exact trigonometric evaluation of the band-limited interpolant.
    pub fn eval_trig(&self, x: &[f64]) -> f64 {
        TrigEvaluator::new(self).eval(x)
    }
}

impl Evaluate for SpectralField {
    /// Multilinear interpolation of the grid values (one inverse transform
    /// per call; convert once with [`SpectralField::to_grid`] for repeated
    /// evaluation).
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.to_grid().evaluate(x)
    }
}

/// Sparse exact evaluator over the nonzero modes of a field.
#[derive(Debug, Clone)]
pub struct TrigEvaluator {
    dim: usize,
    /// (wavenumbers, coefficient, per-axis cosine flag for Nyquist axes)
    modes: Vec<([f64; 3], Complex64, [bool; 3])>,
}

impl TrigEvaluator {
    pub fn new(f: &SpectralField) -> Self {
        let b = &f.box_;
        let cut = f.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm())) * 1e-15;
        let modes = f
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > cut)
            .map(|(lin, &c)| {
                let idx = b.unravel(lin);
                let mut xi = [0.0; 3];
                let mut nyq = [false; 3];
                for a in 0..b.dim() {
                    xi[a] = b.wavenumber(a, idx[a]);
                    nyq[a] = f.is_nyquist(idx[a]);
                }
                (xi, c, nyq)
            })
            .collect();
        Self { dim: b.dim(), modes }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (xi, c, nyq) in &self.modes {
            let mut phase = Complex64::new(1.0, 0.0);
            for a in 0..self.dim {
                let th = xi[a] * x[a];
                phase *= if nyq[a] {
                    Complex64::new(th.cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, th)
                };
            }
            acc += (c * phase).re;
        }
        acc
    }
}

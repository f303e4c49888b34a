use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BoxSpec, GridField, SpectralField};
use crate::error::{param, Result};
use crate::rng::RngStream;
use crate::stats::compensated_sum;

/// Bessel-potential norm `sqrt(vol * sum_k (1 + |xi_k|)^(2 eta) |c_k|^2)`.
pub fn sobolev_norm(f: &SpectralField, eta: f64) -> f64 {
    sobolev_norm_band(f, eta, f64::INFINITY)
}

/// [`sobolev_norm`] restricted to modes with |xi_k| <= xi_max.
pub fn sobolev_norm_band(f: &SpectralField, eta: f64, xi_max: f64) -> f64 {
    let b = f.spectral_box();
    let xi = b.xi_norms();
    let s = compensated_sum(
        f.coefficients()
            .iter()
            .zip(&xi)
            .filter(|(_, &x)| x <= xi_max)
            .map(|(c, &x)| (1.0 + x).powf(2.0 * eta) * c.norm_sqr()),
    );
    (s * b.volume()).sqrt()
}

/// E[sobolev_norm(xi, eta)^2] for the white noise of
/// [`sample_white_noise`] on `box_`: the truncated mode sum
/// `sum_k (1 + |xi_k|)^(2 eta)`.
pub fn white_noise_norm_expectation(box_: &BoxSpec, eta: f64) -> f64 {
    compensated_sum(box_.xi_norms().iter().map(|x| (1.0 + x).powf(2.0 * eta)))
}

/// Spatial white noise truncated to the box modes.
///
/// Paired modes get (a + ib)/sqrt(2 vol), self-conjugate modes a real
/// N(0, 1/vol), so that E<xi, phi>^2 = ||phi||^2 for band-limited phi.
pub fn sample_white_noise(box_: &BoxSpec, rng: RngStream) -> SpectralField {
    let mut g = rng.generator();
    let n = box_.n();
    let vol = box_.volume();
    let mut f = SpectralField::zeros(box_);
    let coeffs = f.coefficients_mut();
    for lin in 0..box_.len() {
        let idx = box_.unravel(lin);
        let mut partner_idx = [0usize; 3];
        for a in 0..box_.dim() {
            partner_idx[a] = (n - idx[a]) % n;
        }
        let partner = box_.ravel(&partner_idx);
        if partner < lin {
            continue;
        }
        if partner == lin {
            let z: f64 = g.sample(StandardNormal);
            coeffs[lin] = Complex64::new(z / vol.sqrt(), 0.0);
        } else {
            let a: f64 = g.sample(StandardNormal);
            let b: f64 = g.sample(StandardNormal);
            let c = Complex64::new(a, b) / (2.0 * vol).sqrt();
            coeffs[lin] = c;
            coeffs[partner] = c.conj();
        }
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mollifier {
    /// exp(-eps^2 |xi|^2 / 2): convolution with a Gaussian of width eps.
    GaussianMultiplier,
    /// Indicator |xi| <= 1/eps.
    SharpCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub epsilon: f64,
    pub kind: Mollifier,
}

impl MollifierSpec {
    pub fn gaussian(epsilon: f64) -> Self {
        Self {
            epsilon,
            kind: Mollifier::GaussianMultiplier,
        }
    }

    pub fn sharp(epsilon: f64) -> Self {
        Self {
            epsilon,
            kind: Mollifier::SharpCutoff,
        }
    }

    /// Fourier multiplier at |xi|; equals 1 at xi = 0 and lies in [0, 1].
    pub fn symbol(&self, xi: f64) -> f64 {
        match self.kind {
            Mollifier::GaussianMultiplier => (-0.5 * (self.epsilon * xi).powi(2)).exp(),
            Mollifier::SharpCutoff => {
                if xi * self.epsilon <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn mollify(f: &SpectralField, spec: MollifierSpec) -> Result<SpectralField> {
    if !(spec.epsilon > 0.0 && spec.epsilon.is_finite()) {
        return param(format!("mollifier width must be positive, got {}", spec.epsilon));
    }
    let xi = f.spectral_box().xi_norms();
    Ok(f.map_modes(|lin, c| c * spec.symbol(xi[lin])))
}

/// Periodic convolution `(V * g)(x) = int V(x - z) g(z) dz`, computed as a
/// coefficient product scaled by the box volume.
pub fn convolve(v: &SpectralField, g: &GridField) -> Result<GridField> {
    v.spectral_box().check_same(g.grid_box(), "convolution")?;
    let gs = SpectralField::from_grid(g);
    let vol = v.spectral_box().volume();
    Ok(v.map_modes(|lin, c| c * gs.coefficients()[lin] * vol).to_grid())
}

/// Keep modes with |k_a| <= n/3 on every axis.
pub(crate) fn dealias(f: &SpectralField) -> SpectralField {
    let b = f.spectral_box();
    let kc = (b.n() / 3) as i64;
    f.map_modes(|lin, c| {
        let idx = b.unravel(lin);
        if (0..b.dim()).all(|a| b.mode(idx[a]).abs() <= kc) {
            c
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Product of a smooth grid field with a (possibly distributional) field:
/// both factors and the result are restricted to the 2/3 band, the
/// product is taken pointwise on the grid.
pub fn multiply(u: &GridField, v: &SpectralField) -> Result<SpectralField> {
    v.spectral_box().check_same(u.grid_box(), "multiplication")?;
    let ug = dealias(&SpectralField::from_grid(u)).to_grid();
    let vg = dealias(v).to_grid();
    let prod: Vec<f64> = ug.values().iter().zip(vg.values()).map(|(a, b)| a * b).collect();
    let p = SpectralField::from_grid(&GridField::new_unchecked(u.grid_box().clone(), prod));
    Ok(dealias(&p))
}

/// C^1-type surrogate `sup|u| + sum_a sup|d_a u|` with spectral derivatives.
pub fn c1_norm(u: &GridField) -> f64 {
    let s = SpectralField::from_grid(u);
    u.sup_norm()
        + (0..u.grid_box().dim())
            .map(|a| s.derivative(a, 1).to_grid().sup_norm())
            .sum::<f64>()
}

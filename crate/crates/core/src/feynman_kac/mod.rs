//! Feynman-Kac Monte Carlo for the shifted problem
//!
//! ```text
//! u(t, x) = E^x[ f(W_t) exp(-E_t) ],
//! ```
//!
//! where the exponent `E_t` is either the classical time integral
//! `int_0^t V(W_{t-s} - w^H_s) ds` (smooth V only) or the sewing of the
//! germ `A^t_{s,r} = (V * L_{s,r})(W_{t-s})` built from the local time `L`
//! of the shift path. The second form only touches V through its
//! convolution with local time and therefore makes sense for distributional
//! potentials.
//!
//! Everything here is quenched: one shift realisation `w^H` (and its local
//! time) is shared by all Brownian paths. Brownian increments come in
//! antithetic pairs, one child stream per pair, so every difference of
//! estimates taken inside this module uses common random numbers.

mod germ;
mod solver;
mod studies;

use serde::{Deserialize, Serialize};

use crate::error::{param, shape, Result};
use crate::fields::SpectralField;
use crate::paths::SamplePath;

pub use germ::{build_germ, riemann_exponent, riemann_exponent_with, GermCache, LocalTimeGerm, StencilGerm};
pub use solver::{
    solve, FkDiagnostics, FkEstimate, FkSolver, Mode, Probe, SampleMatrix, SolveOptions, DEFAULT_SUBSTEPS,
};
pub use studies::{
    exponent_growth, germ_level_derivative, identification_gap, identification_gap_with, mollification_cauchy,
    solution_batches, spatial_derivative, CauchyRow, CauchySpec, CauchyTable, DerivativeEstimate, DerivativeSpec, GrowthStudy,
    IdentificationGap, ProbeSet,
};

/// Admissible Hurst range for potentials in H^{-eta} and n spatial
/// derivatives: H < 1 / (2 (1 + eta + n + d/2)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstBudget {
    pub eta: f64,
    pub d: usize,
    pub n: u32,
    pub bound: f64,
}

impl HurstBudget {
    /// Strict inequality H < bound.
    pub fn admits(&self, hurst: f64) -> bool {
        hurst < self.bound
    }
}

pub fn hurst_bound(eta: f64, d: usize, n: u32) -> Result<HurstBudget> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return param(format!("eta must be finite and nonnegative, got {eta}"));
    }
    if d == 0 {
        return param("dimension must be at least 1");
    }
    let bound = 0.5 / (1.0 + eta + n as f64 + d as f64 / 2.0);
    Ok(HurstBudget { eta, d, n, bound })
}

/// V(x - w^H_t): a potential together with the path it is shifted along.
#[derive(Debug, Clone)]
pub struct ShiftedPotential {
    pub potential: SpectralField,
    pub shift: SamplePath,
}

impl ShiftedPotential {
    pub fn new(potential: SpectralField, shift: SamplePath) -> Result<Self> {
        if potential.spectral_box().dim() != shift.dim() {
            return shape(format!(
                "potential lives in d = {}, shift path in d = {}",
                potential.spectral_box().dim(),
                shift.dim()
            ));
        }
        Ok(Self { potential, shift })
    }
}

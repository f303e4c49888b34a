//! Numerical toolkit for the parabolic Anderson model with a potential
//! shifted along a fractional Brownian path,
//!
//! ```text
//! du/dt = 1/2 Lap u - V(x - w^H_t) u,   u(0, .) = f,
//! ```
//!
//! solved through a Feynman-Kac representation in which the classical
//! exponent is replaced by the sewing of the germ
//! `A^t_{s,r} = (V * L_{s,r})(W_{t-s})`, with `L` the local time of `w^H`
//! and `W` a Brownian motion. Besides the solver the crate carries the
//! objects needed to audit every ingredient numerically: exact fBm
//! synthesis, spectral Sobolev norms on the torus, histogram local times,
//! a dyadic sewing operator with defect diagnostics, and a split-step
//! spectral PDE solver used as an independent oracle.

mod error;
mod fft;

pub mod feynman_kac;
pub mod fields;
pub mod grid;
pub mod localtime;
pub mod paths;
pub mod pde_oracle;
pub mod rng;
pub mod sewing;
pub mod stats;

pub use error::{Error, Result};
pub use fields::{BoxSpec, Evaluate, GridField, SpectralField};
pub use grid::TimeGrid;
pub use paths::{sample_bm, sample_fbm, FbmGenerator, FbmMethod, PathLaw, SamplePath};
pub use rng::RngStream;

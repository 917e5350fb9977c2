//! Perpetual American options on a geometric Brownian motion `X` and its
//! running maximum `S`, paying `(S^p / X − K)^+` when exercised.
//!
//! The optimal exercise rule stops once `X` falls to a free boundary `H(S)`.
//! [`boundary`] solves for that boundary, [`value`] builds the value surface
//! on top of it and checks the variational inequality, and [`mc`] prices the
//! same contract by simulation.

pub mod boundary;
pub mod error;
pub mod mc;
pub mod params;
pub mod value;

pub use boundary::{solve_separatrix, FreeBoundary, SolverConfig};
pub use error::{Error, Result};
pub use params::{classify_regime, compute_roots, ModelParams, RegimeReport, Roots};
pub use value::{price_v, HattedSurface, Valuation, ValueSurface, ViReport, ViSampleConfig};

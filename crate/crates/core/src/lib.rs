//! Spectral simulation and analysis tools for dispersive shock waves in the
//! Kadomtsev-Petviashvili (KP) equation and the semiclassical focusing
//! nonlinear Schroedinger (NLS) equation.
//!
//! The crate is organised around the pipeline used in small-dispersion
//! studies of KP:
//!
//! * [`special`] — complete elliptic integrals and Jacobi elliptic functions,
//! * [`solutions`] — closed-form cnoidal, soliton, lump and breather families,
//! * [`spectral`] — periodic grids, 2D FFTs, Fourier multipliers and norms,
//! * [`solver`] — composite Runge-Kutta time stepping for KP,
//! * [`nls`] — 1D split-step solver for the focusing NLS equation,
//! * [`whitham`] — KP Whitham modulation system (speeds, matrices, spectra),
//! * [`diagnostics`] — peak extraction, lump fitting and scaling-law fits,
//! * [`io`] — snapshot formats, run manifests and CSV export.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod nls;
pub mod solutions;
pub mod solver;
pub mod special;
pub mod spectral;
pub mod whitham;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

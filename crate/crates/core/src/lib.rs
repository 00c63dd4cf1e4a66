//! Off-grid sparse recovery.
//!
//! Greedy matching pursuit whose selected grid points are refined
//! continuously by an iterative joint estimator. Each refinement loop
//! linearizes the parametric dictionary around the current grid and solves a
//! constrained total least squares (CTLS) problem for the grid mismatch, then
//! re-fits the amplitudes by least squares.
//!
//! Module map:
//!
//! - [`numerics`]: complex dense linear algebra with explicit rank guards.
//! - [`dictionary`]: parametric atom models (harmonic, randomized
//!   step-frequency radar, exactly-linear) and their analytic derivatives.
//! - [`ctls`]: the CTLS inner solver (complex Newton recursion) and the
//!   real-constrained perturbation solver.
//! - [`ije`]: the iterative joint estimator over a fixed support.
//! - [`solvers`]: AMP-CTLS and the OMP baseline.
//! - [`bench`]: scene synthesis, Cramér–Rao bounds, Monte-Carlo experiments
//!   and figure presets.

pub mod bench;
pub mod ctls;
pub mod dictionary;
pub mod error;
pub mod ije;
pub mod numerics;
pub mod solvers;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use numerics::{CMatrix, CVector};

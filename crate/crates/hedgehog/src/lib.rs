//! Numerical toolkit for the stability analysis of the radially symmetric
//! "melting hedgehog" defect in the Landau-de Gennes model of nematic
//! liquid crystals.
//!
//! The crate solves the radial profile boundary-value problem, builds the
//! angular eigenbases that separate the second variation, assembles the
//! reduced radial quadratic forms as banded matrix pencils, and certifies
//! the decomposition identities and inequalities the analysis rests on.
//!
//! Module layout:
//! - [`model`]: material parameters and the bulk-potential scalar functions.
//! - [`profile`]: the radial BVP solver and qualitative-property checks.
//! - [`angular`]: θ-eigenbases for the azimuthal wavenumbers k = 0, 1, 2.
//! - [`quadforms`]: quadratic functionals, banded pencils, eigen solver,
//!   Hardy/Poincaré machinery.
//! - [`reduction`]: φ-Fourier split, change of variables, θ-projection.
//! - [`stability`]: scans, verdicts, the instability witness, coercivity bounds.
//! - [`cli`]: batch command surface and deterministic artifact emission.

pub mod angular;
pub mod cli;
pub mod model;
pub mod profile;
pub mod quadforms;
pub mod reduction;
pub mod stability;

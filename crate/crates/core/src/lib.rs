//! Mixed-order fractional Laplacians `A_μ = ∫ (-Δ)^s dμ(s)` on an interval.
//!
//! * [`measure`]: signed exponent measures, Jordan split, structural checks.
//! * [`assembly`]: mass and fractional stiffness matrices, superposition.
//! * [`spectral`]: Dirichlet spectrum, Rayleigh checks, coercivity certificate.
//! * [`minimax`]: energy functional, eigenvalue window and the multiplicity
//!   search for asymptotically linear problems.

pub mod assembly;
pub mod linalg;
pub mod measure;
pub mod minimax;
pub mod quadrature;
pub mod spectral;

pub use assembly::{assemble_fractional_stiffness, assemble_mass, assemble_operator, AssembledOperator, DomainMesh};
pub use measure::{Atom, MeasureReport, SpectralMeasure};
pub use spectral::{solve_spectrum, CoercivityCertificate, Spectrum};

//! Truncated Fock-space simulator for continuous-variable photonic
//! circuits, built around a 1+1D complex scalar φ⁴ lattice field theory:
//! gate-based Trotter evolution, phase-sensitive correlator reconstruction
//! from weak-displacement photon counting, complex-frequency spectral
//! transforms, and measurement-based (cluster-state) gate realizations —
//! each cross-checked against exact-diagonalization oracles.

pub mod correlator;
pub mod error;
pub mod fock;
pub mod gates;
pub mod lattice;
pub mod linalg;
pub mod mbqc;
pub mod oracle;
pub mod tomography;

pub use error::{Error, Result};
pub use num_complex::Complex64;

//! Two-stage compressed-sensing channel estimation for sparse mmWave MIMO.
//!
//! The library covers the full estimation chain: sparse channel generation,
//! sounding-beam construction, greedy support recovery (SOMP/OMP), the
//! sequential AoA-then-AoD pipeline with least-squares gain reconstruction,
//! successful-recovery-probability bounds built on the Tracy-Widom law with
//! a matching resource allocator, gridless atomic-norm refinement solved by
//! ADMM, and a seeded Monte Carlo harness with CSV output.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod pipeline;
pub mod recovery;
pub mod sounding;
pub mod superres;

pub use error::Error;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;

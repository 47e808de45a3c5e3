//! Reconstruction of multi-time quantum processes from sequential measurement
//! data, together with spectral truncation bounds for their Choi matrices.
//!
//! A process over `N` time steps is modeled as a sequence of isometries
//! threaded by an ancilla (`comb`). Reconstruction (`tomo`) recovers the
//! isometries one step at a time from preparation/measurement statistics via
//! a manifold optimizer (`stiefel`). The `bounds` module quantifies how much
//! Hilbert-Schmidt error a rank-`R` truncation of the process state can incur
//! at a given purity.

pub mod bounds;
pub mod comb;
pub mod linalg;
pub mod stiefel;
pub mod tomo;

pub use linalg::{ComplexMatrix, SubsystemDims, C64};

#![allow(clippy::neg_cmp_op_on_partial_ord)] // comparisons are written to reject NaN

pub mod basis;
pub mod calibration;
pub mod device;
pub mod ensemble;
pub mod error;
pub mod hamiltonian;
pub mod inference;
pub mod observables;
pub mod propagator;
pub mod protocol;
pub mod rng;
pub mod statistics;
pub mod units;

pub use basis::{Configuration, SectorBasis};
pub use error::{Error, Result};
pub use hamiltonian::{DisorderRealization, ModelSpec, SparseHermitian};

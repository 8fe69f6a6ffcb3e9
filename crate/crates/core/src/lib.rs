//! Numerical laboratory for oscillatory integral operators with fold
//! singularities, strongly singular kernels on the Heisenberg group and along
//! plane curves.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canrel;
pub mod decomp;
pub mod error;
pub mod geometry;
pub mod opnorm;
pub mod phase;

pub use error::{Error, Result};
pub use geometry::{DiagonalB, HeisenbergElement, SymplecticJ, Vec2n};
pub use phase::{DifferenceSplit, MixedHessian, Phase, PhaseFamily, PhaseSpec};

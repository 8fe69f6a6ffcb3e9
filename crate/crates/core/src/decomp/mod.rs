//! Dyadic decomposition of strongly singular oscillatory kernels.

pub mod cutoff;
pub mod dyadic;

pub use cutoff::{dyadic_sum, plateau, theta, transition, zeta, CutoffFamily, Patch};
pub use dyadic::{
    cotlar_assemble, coupling, key_estimate_sweep, ortho_sweep, regime_bound, regime_check,
    tau_for_coupling, AmplitudeSpec, Condition, CotlarBound, DyadicAmplitude, DyadicOperator,
    KeyEstimate, KeyEstimateRow, OrthoRow, OrthoTable, RegimeRow, RegimeTable, TauSampling,
};

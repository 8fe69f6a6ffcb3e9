//! Oscillatory integral operators `T f(x) = int e^{i lambda Phi(x,y)} Psi(x,y) f(y) dy`
//! on tensor grids: matrix-free application, spectral norms and decay fits.

pub mod amplitude;
pub mod grid;
pub mod norm;
pub mod operator;
pub mod sweep;
pub mod toeplitz;
pub mod twisted;

pub use amplitude::{
    Amplitude, BoxAmplitude, DiffProfile, DifferenceAmplitude, Profile, SeparatedAmplitude, TensorAmplitude,
};
pub use grid::{GradientRange, GridRule, GridSpec};
pub use norm::{dense_norm, operator_norm, NormEstimate, NormMethod, NormOptions};
pub use operator::{Adjoint, Compose, LinearMap, OscOperator};
pub use sweep::{decay_sweep, fit_line, fit_slope, measure, DecayEntry, LineFit, NormDecaySeries, SweepOptions};
pub use toeplitz::ToeplitzOperator;
pub use twisted::{
    twisted_decay_sweep, ConvAmplitude, FiberLayout, FiberMatrix, KernelRanges, TwistedConvolution,
    WeightedAnnulus,
};

//! One-dimensional operators whose kernel is Toeplitz up to diagonal factors.
//!
//! When `Phi(x, y) = u(x) + v(y) + g(x - y)` and `Psi(x, y) = a(x) c(y) q(x - y)`,
//! equally spaced grids make the kernel `L_i t_{i-j} R_j`, applied by FFT in
//! `O(N log N)` instead of `O(N^2)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::opnorm::amplitude::Amplitude;
use crate::opnorm::grid::{GridRule, GridSpec};
use crate::opnorm::operator::{LinearMap, OscOperator};
use crate::opnorm::twisted::smooth_size;
use crate::phase::{DifferenceSplit, Phase};

pub struct ToeplitzOperator {
    grid_x: GridSpec,
    grid_y: GridSpec,
    /// `e^{i lambda u(x_i)} a(x_i)`.
    left: Vec<Complex64>,
    /// `e^{i lambda v(y_j)} c(y_j)`.
    right: Vec<Complex64>,
    /// FFT of the circulant embedding of `t_m`, `m = i - j`.
    symbol: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spacing: f64,
}

impl std::fmt::Debug for ToeplitzOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToeplitzOperator")
            .field("rows", &self.left.len())
            .field("cols", &self.right.len())
            .field("fft", &self.symbol.len())
            .finish()
    }
}

/// `n` midpoint nodes of spacing `h` covering `[lo, hi]`.
fn cover((lo, hi): (f64, f64), h: f64) -> Result<GridSpec> {
    let n = ((hi - lo) / h).ceil().max(1.0) as usize;
    GridSpec::new(vec![(lo, lo + n as f64 * h)], vec![n])
}

impl ToeplitzOperator {
    /// Whether `phase` and `amplitude` have the structure this operator needs.
    pub fn supports(phase: &dyn Phase, amplitude: &dyn Amplitude) -> bool {
        phase.dim() == 1 && phase.difference_split().is_some() && amplitude.separated().is_some()
    }

    /// Same resolution rule as [`OscOperator::auto`], with both grids on the
    /// finer of its two spacings.
    pub fn auto(phase: Arc<dyn Phase>, amplitude: Arc<dyn Amplitude>, lambda: f64, rule: &GridRule) -> Result<Self> {
        let (split, sep) = match (phase.dim(), phase.difference_split(), amplitude.separated()) {
            (1, Some(split), Some(sep)) => (split, sep),
            _ => {
                return Err(Error::InvalidParameter(
                    "Toeplitz form needs a one-dimensional difference-split phase and a separated amplitude".into(),
                ))
            }
        };
        let (gx, gy) = OscOperator::auto_grids(phase.as_ref(), amplitude.as_ref(), lambda, rule)?;
        let h = gx.spacing(0).min(gy.spacing(0));
        let grid_x = cover(gx.bounds[0], h)?;
        let grid_y = cover(gy.bounds[0], h)?;
        let xs = grid_x.nodes();
        let ys = grid_y.nodes();
        let (nx, ny) = (xs.len(), ys.len());

        let square = |t: f64| match split {
            DifferenceSplit::Pure => 0.0,
            DifferenceSplit::Bilinear => 0.5 * t * t,
        };
        let g = |z: f64| match split {
            DifferenceSplit::Pure => phase.value(&[z], &[0.0]),
            DifferenceSplit::Bilinear => -0.5 * z * z,
        };
        let osc = |amp: f64, ph: f64| {
            if amp == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(amp, lambda * ph)
            }
        };
        let left: Vec<Complex64> = xs.iter().map(|&x| osc(sep.x_factor(x), square(x))).collect();
        let right: Vec<Complex64> = ys.iter().map(|&y| osc(sep.y_factor(y), square(y))).collect();

        let size = smooth_size(nx + ny - 1);
        let mut symbol = vec![Complex64::new(0.0, 0.0); size];
        let d0 = xs[0] - ys[0];
        for m in -(ny as i64 - 1)..=(nx as i64 - 1) {
            let z = d0 + m as f64 * h;
            symbol[m.rem_euclid(size as i64) as usize] = osc(sep.diff_factor(z), g(z));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        forward.process(&mut symbol);
        let norm = 1.0 / size as f64;
        symbol.iter_mut().for_each(|s| *s *= norm);
        Ok(Self { grid_x, grid_y, left, right, symbol, forward, inverse, spacing: h })
    }

    pub fn grid_x(&self) -> &GridSpec {
        &self.grid_x
    }

    pub fn grid_y(&self) -> &GridSpec {
        &self.grid_y
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// `out[..out.len()] = (C or C^*) (input padded)`, `C` the circulant.
    fn circulant(&self, input: &[Complex64], out: &mut [Complex64], adjoint: bool) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.symbol.len()];
        buf[..input.len()].copy_from_slice(input);
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.symbol) {
            *b *= if adjoint { s.conj() } else { *s };
        }
        self.inverse.process(&mut buf);
        out.copy_from_slice(&buf[..out.len()]);
    }
}

/// The weight-symmetrized map, as for [`OscOperator`].
impl LinearMap for ToeplitzOperator {
    fn rows(&self) -> usize {
        self.left.len()
    }

    fn cols(&self) -> usize {
        self.right.len()
    }

    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        let z: Vec<Complex64> = f.iter().zip(&self.right).map(|(a, r)| a * r).collect();
        self.circulant(&z, out, false);
        for (o, l) in out.iter_mut().zip(&self.left) {
            *o *= l * self.spacing;
        }
    }

    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        let z: Vec<Complex64> = g.iter().zip(&self.left).map(|(a, l)| a * l.conj()).collect();
        self.circulant(&z, out, true);
        for (o, r) in out.iter_mut().zip(&self.right) {
            *o *= r.conj() * self.spacing;
        }
    }
}

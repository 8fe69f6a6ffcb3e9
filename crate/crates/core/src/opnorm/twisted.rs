//! Twisted convolutions on the plane,
//! `T f(x) = int e^{i sigma omega(x, y)} k(x - y) f(y) dy` with `omega` the
//! symplectic form `x_1 y_2 - x_2 y_1`.
//!
//! Fourier transform in the second coordinate followed by the shear
//! `eta -> eta + sigma p` splits `T` into a direct integral over `eta` of
//! operators on `L^2(R)`, all unitarily equivalent (translating `p` by `c`
//! moves the fiber by `2 sigma c`). The fiber at 0 has kernel
//!
//! `A(p, p') = k2(p - p', sigma (p + p'))`, `k2(a, w) = int k(a, t) e^{-i w t} dt`,
//!
//! so `|T| = |A|`, computed here on a banded matrix. At `sigma = 0`, `T` is a
//! Fourier multiplier and `|T| = sup |k^|`.
//!
//! The kernels come from the Heisenberg families, where
//! `Phi(x, y) = Phi(x - y, 0) + c omega(x, y)`, so `k(z) = b(z) e^{i lambda Phi(z, 0)}`
//! and `sigma = lambda c`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opnorm::amplitude::{DiffProfile, Profile};
use crate::opnorm::grid::GridRule;
use crate::opnorm::norm::{operator_norm, NormEstimate, NormOptions};
use crate::opnorm::operator::{LinearMap, MIN_SEPARATION};
use crate::opnorm::sweep::{DecayEntry, NormDecaySeries};
use crate::phase::{Phase, PhaseSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A real amplitude `b(z)` on the plane with compact support.
pub trait ConvAmplitude: Send + Sync {
    fn eval(&self, z: [f64; 2]) -> f64;

    /// Bounding box `[(z1_lo, z1_hi), (z2_lo, z2_hi)]` of the support.
    fn z_box(&self) -> [(f64, f64); 2];

    /// Lower bound for `|z|` on the support.
    fn min_norm(&self) -> f64;
}

impl ConvAmplitude for DiffProfile {
    fn eval(&self, z: [f64; 2]) -> f64 {
        DiffProfile::eval(self, &z)
    }

    fn z_box(&self) -> [(f64, f64); 2] {
        let b = DiffProfile::z_box(self, 2);
        [b[0], b[1]]
    }

    fn min_norm(&self) -> f64 {
        DiffProfile::min_norm(self)
    }
}

/// `profile(|z|) |z|^-power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedAnnulus {
    pub profile: Profile,
    pub power: f64,
}

impl ConvAmplitude for WeightedAnnulus {
    fn eval(&self, z: [f64; 2]) -> f64 {
        let r = z[0].hypot(z[1]);
        let v = self.profile.eval(r);
        if v == 0.0 {
            0.0
        } else {
            v * r.powf(-self.power)
        }
    }

    fn z_box(&self) -> [(f64, f64); 2] {
        let r = self.profile.support().1;
        [(-r, r), (-r, r)]
    }

    fn min_norm(&self) -> f64 {
        self.profile.support().0.max(0.0)
    }
}

/// Ranges over the amplitude support that size the discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRanges {
    /// Range of `lambda d/dz_k Phi(z, 0)`.
    pub grad: [(f64, f64); 2],
    /// Range of `lambda d_1 Phi - sigma z_2`, the `p`-frequency of the fiber kernel.
    pub row_freq: (f64, f64),
    /// Range of `-lambda d_1 Phi - sigma z_2`, the `p'`-frequency.
    pub col_freq: (f64, f64),
    pub z_box: [(f64, f64); 2],
    pub hits: usize,
}

fn span((lo, hi): (f64, f64)) -> f64 {
    hi - lo
}

/// Smallest `2^a 3^b 5^c >= n`.
pub(crate) fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// A twisted convolution with kernel `scale * b(z) e^{i lambda Phi(z, 0)}`.
#[derive(Clone)]
pub struct TwistedConvolution {
    phase: PhaseSpec,
    amplitude: Arc<dyn ConvAmplitude>,
    lambda: f64,
    sigma: f64,
    scale: Complex64,
    ranges: KernelRanges,
}

impl std::fmt::Debug for TwistedConvolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwistedConvolution")
            .field("family", &self.phase.family)
            .field("lambda", &self.lambda)
            .field("sigma", &self.sigma)
            .finish()
    }
}

impl TwistedConvolution {
    pub fn new(
        phase: &PhaseSpec,
        amplitude: Arc<dyn ConvAmplitude>,
        lambda: f64,
        rule: &GridRule,
    ) -> Result<Self> {
        if phase.dim != 2 {
            return Err(Error::InvalidParameter(format!(
                "the fiber reduction is implemented for n = 1 (dimension 2), got dimension {}",
                phase.dim
            )));
        }
        let coupling = phase.twist_coupling().ok_or_else(|| {
            Error::InvalidParameter(format!("{:?} is not a twisted convolution", phase.family))
        })?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if phase.is_singular() && amplitude.min_norm() < MIN_SEPARATION {
            return Err(Error::Domain(format!(
                "amplitude reaches |z| = {} but singular phases need |z| >= {MIN_SEPARATION}",
                amplitude.min_norm()
            )));
        }
        let sigma = lambda * coupling;
        let ranges = kernel_ranges(phase, amplitude.as_ref(), lambda, sigma, rule.samples, 0x5eed);
        if ranges.hits == 0 {
            return Err(Error::InvalidParameter("amplitude vanishes on every sample".into()));
        }
        Ok(Self { phase: phase.clone(), amplitude, lambda, sigma, scale: Complex64::new(1.0, 0.0), ranges })
    }

    /// Multiply the kernel by a complex constant.
    pub fn with_scale(mut self, scale: Complex64) -> Self {
        self.scale = scale;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Coefficient of the symplectic form in the phase of the kernel.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ranges(&self) -> &KernelRanges {
        &self.ranges
    }

    /// `k(z)`.
    #[inline]
    pub fn kernel(&self, z: [f64; 2]) -> Complex64 {
        let a = self.amplitude.eval(z);
        if a == 0.0 {
            return ZERO;
        }
        let (s, c) = (self.lambda * self.phase.value(&z, &[0.0, 0.0])).sin_cos();
        self.scale * Complex64::new(a * c, a * s)
    }

    /// Margin added to the `lambda d_2 Phi` range, where `k2` decays.
    fn omega_margin(&self) -> f64 {
        let z2 = span(self.ranges.z_box[1]).max(1e-3);
        0.15 * span(self.ranges.grad[1]) + 16.0 * std::f64::consts::TAU / z2
    }

    fn check_twisted(&self) -> Result<()> {
        if self.sigma == 0.0 {
            return Err(Error::InvalidParameter(
                "sigma = 0 is a Fourier multiplier; use multiplier_norm".into(),
            ));
        }
        Ok(())
    }

    /// Lattice spacing fixed by the rule.
    pub fn natural_spacing(&self, rule: &GridRule) -> f64 {
        let r = &self.ranges;
        let freq = (span(r.row_freq).max(span(r.col_freq)) / 2.0).max(1e-12);
        (std::f64::consts::TAU / (rule.nodes_per_wavelength * rule.safety * freq))
            .min(1.0 / rule.min_density.max(1e-12))
            .min(span(r.z_box[0]) / 8.0)
            / rule.refine
    }

    /// Range of `sigma (p + p')` on which the fiber kernel is kept.
    fn omega_window(&self) -> (f64, f64) {
        let margin = self.omega_margin();
        (self.ranges.grad[1].0 - margin, self.ranges.grad[1].1 + margin)
    }

    /// Rows carrying the fiber kernel on the lattice of spacing `h`.
    pub fn layout_at(&self, h: f64) -> Result<FiberLayout> {
        self.check_twisted()?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("lattice spacing must be positive, got {h}")));
        }
        let (w_lo, w_hi) = self.omega_window();
        let (s_lo, s_hi) = if self.sigma > 0.0 {
            (w_lo / self.sigma, w_hi / self.sigma)
        } else {
            (w_hi / self.sigma, w_lo / self.sigma)
        };
        let (z1_lo, z1_hi) = self.ranges.z_box[0];
        let row_start = ((s_lo + z1_lo) / 2.0 / h).floor() as i64;
        let rows = (((s_hi + z1_hi) / 2.0 / h).ceil() as i64 - row_start + 1) as usize;
        Ok(FiberLayout { spacing: h, row_start, rows })
    }

    pub fn natural_layout(&self, rule: &GridRule) -> Result<FiberLayout> {
        self.layout_at(self.natural_spacing(rule))
    }

    /// The fiber operator `A` on its natural lattice; `sigma` must be nonzero.
    pub fn fiber_matrix(&self, rule: &GridRule) -> Result<FiberMatrix> {
        let layout = self.natural_layout(rule)?;
        self.fiber_matrix_on(rule, &layout)
    }

    /// The rows of `A` selected by `layout`, with every column the band reaches.
    /// Matrices built on one layout share row indices, so they compose.
    pub fn fiber_matrix_on(&self, rule: &GridRule, layout: &FiberLayout) -> Result<FiberMatrix> {
        self.check_twisted()?;
        let tau = std::f64::consts::TAU;
        let r = &self.ranges;
        let FiberLayout { spacing: h, row_start: a, rows } = *layout;
        let (z1_lo, z1_hi) = r.z_box[0];
        let l_lo = (z1_lo / h).floor() as i64;
        let l_hi = (z1_hi / h).ceil() as i64;
        let width = (l_hi - l_lo + 1) as usize;
        // column index ic <-> p' = (b + ic) h, and slot c of row i is column i + c
        let b = a - l_hi;
        let cols = rows + width - 1;
        let (w_lo, w_hi) = self.omega_window();

        // on diagonal c only rows with sigma (a + b + 2i + c) h in the window are kept
        let (m_lo, m_hi) = {
            let (x, y) = (w_lo / (self.sigma * h), w_hi / (self.sigma * h));
            (x.min(y), x.max(y))
        };
        let mut diag_lo = Vec::with_capacity(width);
        let mut diag_off = Vec::with_capacity(width + 1);
        diag_off.push(0usize);
        for c in 0..width as i64 {
            let shift = (a + b + c) as f64;
            let lo = (((m_lo - shift) / 2.0).floor() as i64 - 1).clamp(0, rows as i64) as usize;
            let hi = (((m_hi - shift) / 2.0).ceil() as i64 + 2).clamp(0, rows as i64) as usize;
            diag_lo.push(lo);
            diag_off.push(diag_off[c as usize] + hi.max(lo) - lo);
        }
        let required = diag_off[width] as u128;
        if required > rule.max_entries {
            return Err(Error::GridCap { required, cap: rule.max_entries });
        }

        // t-sampling: alias-free for the frequency window, and a period that is
        // an integer multiple of the lattice frequency step sigma h
        let (z2_lo, z2_hi) = r.z_box[1];
        let dt_max = (tau / ((rule.nodes_per_wavelength / 3.0) * (w_hi - w_lo)))
            .min(1.0 / rule.min_density.max(1e-12))
            / rule.refine;
        let step = self.sigma.abs() * h;
        let q = (((z2_hi - z2_lo) + dt_max) * step / tau).ceil().max(1.0);
        let period = tau * q / step;
        let nfft = smooth_size((period / dt_max).ceil() as usize);
        let dt = period / nfft as f64;
        let nt = (((z2_hi - z2_lo) / dt).floor() as usize + 1).min(nfft);
        let q = q as i64;
        let sgn = if self.sigma > 0.0 { 1 } else { -1 };

        let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(nfft);
        let weight = h * dt;
        let mut band = vec![ZERO; diag_off[width]];
        let mut diags = Vec::with_capacity(width);
        let mut rest = band.as_mut_slice();
        for c in 0..width {
            let (head, tail) = rest.split_at_mut(diag_off[c + 1] - diag_off[c]);
            diags.push((c, head));
            rest = tail;
        }
        diags.into_par_iter().for_each_init(
            || (vec![ZERO; nfft], vec![ZERO; fft.get_inplace_scratch_len()]),
            |(buf, scratch), (c, diag)| {
                if diag.is_empty() {
                    return;
                }
                let l = l_hi - c as i64;
                let d = l as f64 * h;
                let mut any = false;
                for (n, v) in buf.iter_mut().enumerate() {
                    *v = if n < nt {
                        let k = self.kernel([d, z2_lo + n as f64 * dt]);
                        any |= k != ZERO;
                        k
                    } else {
                        ZERO
                    };
                }
                if !any {
                    return;
                }
                fft.process_with_scratch(buf, scratch);
                for (k, slot) in diag.iter_mut().enumerate() {
                    let i = diag_lo[c] + k;
                    // p = (a + i) h, p' = (b + i + c) h, p + p' = m h
                    let m = a + b + 2 * i as i64 + c as i64;
                    let omega = self.sigma * m as f64 * h;
                    // beyond the window the transform is negligible and the
                    // sampled one is an alias
                    if omega < w_lo || omega > w_hi {
                        continue;
                    }
                    let bin = (sgn * q * m).rem_euclid(nfft as i64) as usize;
                    *slot = buf[bin] * Complex64::from_polar(weight, -omega * z2_lo);
                }
            },
        );
        Ok(FiberMatrix { rows, cols, width, row_start: a, col_start: b, diag_lo, diag_off, band, spacing: h })
    }

    /// `sup |k^|` over the plane, the norm when `sigma = 0`.
    pub fn multiplier_norm(&self, rule: &GridRule) -> Result<NormEstimate> {
        let tau = std::f64::consts::TAU;
        let r = &self.ranges;
        let mut n = [0usize; 2];
        let mut hs = [0.0; 2];
        let margin = self.omega_margin();
        for k in 0..2 {
            let h = (tau / ((rule.nodes_per_wavelength / 3.0) * (span(r.grad[k]) + 2.0 * margin)))
                .min(1.0 / rule.min_density.max(1e-12))
                / rule.refine;
            n[k] = (span(r.z_box[k]) / h).ceil().max(8.0) as usize;
            hs[k] = span(r.z_box[k]) / n[k] as f64;
        }
        let size = [smooth_size(2 * n[0]), smooth_size(2 * n[1])];
        let required = size[0] as u128 * size[1] as u128;
        if required > rule.max_entries {
            return Err(Error::GridCap { required, cap: rule.max_entries });
        }
        let center = [(r.grad[0].0 + r.grad[0].1) / 2.0, (r.grad[1].0 + r.grad[1].1) / 2.0];
        let node = |k: usize, i: usize| r.z_box[k].0 + (i as f64 + 0.5) * hs[k];

        // gauged samples e^{-i c.z} k(z), zero-padded
        let samples: Vec<Complex64> = (0..n[0] * n[1])
            .into_par_iter()
            .map(|p| {
                let z = [node(0, p / n[1]), node(1, p % n[1])];
                self.kernel(z) * Complex64::from_polar(1.0, -(center[0] * z[0] + center[1] * z[1]))
            })
            .collect();
        let mut grid = vec![ZERO; size[0] * size[1]];
        for i in 0..n[0] {
            grid[i * size[1]..i * size[1] + n[1]].copy_from_slice(&samples[i * n[1]..(i + 1) * n[1]]);
        }
        fft2(&mut grid, size[0], size[1]);

        let w = hs[0] * hs[1];
        let freq = |k: usize, j: usize| -> f64 {
            let s = size[k] as i64;
            let jj = if (j as i64) < s / 2 { j as i64 } else { j as i64 - s };
            tau * jj as f64 / (size[k] as f64 * hs[k])
        };
        // candidate peaks: local maxima above half the global maximum
        let mag: Vec<f64> = grid.iter().map(|v| v.norm() * w).collect();
        let top = mag.iter().cloned().fold(0.0, f64::max);
        let mut peaks: Vec<(f64, usize)> = Vec::new();
        for i in 0..size[0] {
            for j in 0..size[1] {
                let v = mag[i * size[1] + j];
                if v < 0.5 * top {
                    continue;
                }
                let mut is_max = true;
                for (di, dj) in [(1, 0), (size[0] - 1, 0), (0, 1), (0, size[1] - 1)] {
                    let ii = (i + di) % size[0];
                    let jj = (j + dj) % size[1];
                    if mag[ii * size[1] + jj] > v {
                        is_max = false;
                    }
                }
                if is_max {
                    peaks.push((v, i * size[1] + j));
                }
            }
        }
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
        peaks.truncate(4);

        // refine each candidate on the continuum by a shrinking pattern search;
        // the transform at one frequency factors over the two axes
        let direct = |xi: [f64; 2]| -> f64 {
            let e1: Vec<Complex64> =
                (0..n[1]).map(|j| Complex64::from_polar(1.0, -xi[1] * node(1, j))).collect();
            let acc: Complex64 = samples
                .par_chunks(n[1])
                .enumerate()
                .map(|(i, row)| {
                    let inner: Complex64 = row.iter().zip(&e1).map(|(v, e)| v * e).sum();
                    inner * Complex64::from_polar(1.0, -xi[0] * node(0, i))
                })
                .sum();
            acc.norm() * w
        };
        let mut best = 0.0f64;
        let mut evals = 0;
        let mut last_gain = 0.0f64;
        for &(_, idx) in &peaks {
            let mut xi = [freq(0, idx / size[1]), freq(1, idx % size[1])];
            let mut val = direct(xi);
            evals += 1;
            let mut step = [tau / (size[0] as f64 * hs[0]) / 2.0, tau / (size[1] as f64 * hs[1]) / 2.0];
            for _ in 0..12 {
                let mut moved = true;
                while moved {
                    moved = false;
                    for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
                        let cand = [xi[0] + dx * step[0], xi[1] + dy * step[1]];
                        let v = direct(cand);
                        evals += 1;
                        if v > val {
                            last_gain = (v - val) / v;
                            val = v;
                            xi = cand;
                            moved = true;
                        }
                    }
                }
                step = [step[0] / 2.0, step[1] / 2.0];
            }
            best = best.max(val);
        }
        Ok(NormEstimate { norm: best, iterations: evals, residual: last_gain, converged: true })
    }

    /// `|T|`: the multiplier bound at `sigma = 0`, otherwise the spectral norm
    /// of the fiber operator.
    pub fn norm(&self, rule: &GridRule, opts: &NormOptions) -> Result<NormEstimate> {
        if self.sigma == 0.0 {
            self.multiplier_norm(rule)
        } else {
            let a = self.fiber_matrix(rule)?;
            operator_norm(&a, opts)?.require_converged()
        }
    }
}

/// Norms of the twisted convolutions `phase` at each of `lambdas` and the
/// fitted log-log slope.
pub fn twisted_decay_sweep(
    phase: &PhaseSpec,
    amplitude: Arc<dyn ConvAmplitude>,
    lambdas: &[f64],
    rule: &GridRule,
    opts: &NormOptions,
) -> Result<NormDecaySeries> {
    if lambdas.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "a sweep needs at least 4 frequencies, got {}",
            lambdas.len()
        )));
    }
    let entries = lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda > 0.0) {
                return Err(Error::InvalidParameter("frequencies must be positive".into()));
            }
            let op = TwistedConvolution::new(phase, amplitude.clone(), lambda, rule)?;
            let (est, rows, cols) = if op.sigma() == 0.0 {
                (op.multiplier_norm(rule)?, 0, 0)
            } else {
                let a = op.fiber_matrix(rule)?;
                (operator_norm(&a, opts)?.require_converged()?, a.rows(), a.cols())
            };
            Ok(DecayEntry { lambda, norm: est.norm, iterations: est.iterations, residual: est.residual, rows, cols })
        })
        .collect::<Result<Vec<_>>>()?;
    NormDecaySeries::from_entries(entries)
}

fn kernel_ranges(
    phase: &PhaseSpec,
    amp: &dyn ConvAmplitude,
    lambda: f64,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> KernelRanges {
    let zb = amp.z_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    let mut row = (f64::INFINITY, f64::NEG_INFINITY);
    let mut col = (f64::INFINITY, f64::NEG_INFINITY);
    let mut hits = 0;
    let lattice = (samples as f64).sqrt().floor().max(2.0) as usize;
    let mut g = [0.0; 2];
    let widen = |r: &mut (f64, f64), v: f64| {
        r.0 = r.0.min(v);
        r.1 = r.1.max(v);
    };
    for s in 0..samples + lattice * lattice {
        let z = if s < samples {
            [rng.gen_range(zb[0].0..=zb[0].1), rng.gen_range(zb[1].0..=zb[1].1)]
        } else {
            let q = s - samples;
            let f = |k: usize, i: usize| zb[k].0 + span(zb[k]) * i as f64 / (lattice - 1) as f64;
            [f(0, q % lattice), f(1, q / lattice)]
        };
        if amp.eval(z) == 0.0 {
            continue;
        }
        hits += 1;
        phase.grad_x(&z, &[0.0, 0.0], &mut g);
        let (g1, g2) = (lambda * g[0], lambda * g[1]);
        widen(&mut grad[0], g1);
        widen(&mut grad[1], g2);
        widen(&mut row, g1 - sigma * z[1]);
        widen(&mut col, -g1 - sigma * z[1]);
    }
    KernelRanges { grad, row_freq: row, col_freq: col, z_box: zb, hits }
}

/// In-place 2-D forward FFT of a row-major `n0 x n1` array.
fn fft2(data: &mut [Complex64], n0: usize, n1: usize) {
    let mut planner = FftPlanner::new();
    let f1 = planner.plan_fft_forward(n1);
    data.par_chunks_mut(n1).for_each_init(
        || vec![ZERO; f1.get_inplace_scratch_len()],
        |scratch, row| f1.process_with_scratch(row, scratch),
    );
    let f0 = planner.plan_fft_forward(n0);
    let mut cols: Vec<Vec<Complex64>> =
        (0..n1).into_par_iter().map(|j| (0..n0).map(|i| data[i * n1 + j]).collect()).collect();
    cols.par_iter_mut().for_each_init(
        || vec![ZERO; f0.get_inplace_scratch_len()],
        |scratch, col| f0.process_with_scratch(col, scratch),
    );
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            data[i * n1 + j] = v;
        }
    }
}

/// Row window and spacing of a fiber lattice: row `i` sits at `p = (row_start + i) h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberLayout {
    pub spacing: f64,
    pub row_start: i64,
    pub rows: usize,
}

/// Banded matrix of the fiber operator, symmetrized weights included.
#[derive(Debug, Clone)]
pub struct FiberMatrix {
    rows: usize,
    cols: usize,
    width: usize,
    row_start: i64,
    col_start: i64,
    /// First stored row of diagonal `c`.
    diag_lo: Vec<usize>,
    /// Diagonal `c` occupies `band[diag_off[c]..diag_off[c + 1]]`.
    diag_off: Vec<usize>,
    /// Diagonal-major: `band[diag_off[c] + i - diag_lo[c]]` is the entry at `(i, i + c)`.
    band: Vec<Complex64>,
    spacing: f64,
}

const CHUNK: usize = 1024;

impl FiberMatrix {
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn bandwidth(&self) -> usize {
        self.width
    }

    pub fn layout(&self) -> FiberLayout {
        FiberLayout { spacing: self.spacing, row_start: self.row_start, rows: self.rows }
    }

    /// Lattice index of column 0, which sits at `p' = col_start h`.
    pub fn col_start(&self) -> i64 {
        self.col_start
    }

    /// Stored entries.
    pub fn entries(&self) -> usize {
        self.band.len()
    }

    /// Stored rows `[lo, hi)` of diagonal `c`.
    fn diag_rows(&self, c: usize) -> (usize, usize) {
        let lo = self.diag_lo[c];
        (lo, lo + self.diag_off[c + 1] - self.diag_off[c])
    }

    /// Entry `(i, j)`, zero off the stored band.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i >= self.rows || j < i || j - i >= self.width {
            return ZERO;
        }
        let c = j - i;
        let (lo, hi) = self.diag_rows(c);
        if (lo..hi).contains(&i) {
            self.band[self.diag_off[c] + i - lo]
        } else {
            ZERO
        }
    }
}

impl LinearMap for FiberMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(k, chunk)| {
            let i0 = k * CHUNK;
            let i1 = i0 + chunk.len();
            chunk.iter_mut().for_each(|o| *o = ZERO);
            for c in 0..self.width {
                let (lo, hi) = self.diag_rows(c);
                let (r0, r1) = (lo.max(i0), hi.min(i1));
                if r0 >= r1 {
                    continue;
                }
                let base = self.diag_off[c];
                let diag = &self.band[base + r0 - lo..base + r1 - lo];
                let src = &f[r0 + c..r1 + c];
                for ((o, v), x) in chunk[r0 - i0..r1 - i0].iter_mut().zip(diag).zip(src) {
                    *o += v * x;
                }
            }
        });
    }

    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(k, chunk)| {
            let j0 = k * CHUNK;
            let j1 = j0 + chunk.len();
            chunk.iter_mut().for_each(|o| *o = ZERO);
            for c in 0..self.width {
                // rows i = j - c
                let (lo, hi) = self.diag_rows(c);
                let r0 = lo.max(j0.saturating_sub(c));
                let r1 = hi.min(j1.saturating_sub(c));
                if r0 >= r1 {
                    continue;
                }
                let base = self.diag_off[c];
                let diag = &self.band[base + r0 - lo..base + r1 - lo];
                let src = &g[r0..r1];
                for ((o, v), x) in chunk[r0 + c - j0..r1 + c - j0].iter_mut().zip(diag).zip(src) {
                    *o += v.conj() * x;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DiagonalB;
    use crate::opnorm::amplitude::{DifferenceAmplitude, Profile};
    use crate::opnorm::operator::{Adjoint, Compose, OscOperator};

    fn annulus(c: f64, hw: f64) -> Arc<dyn ConvAmplitude> {
        Arc::new(DiffProfile::Annulus(Profile::new(c, hw, 0.5).unwrap()))
    }

    fn cond_ii(mu: f64) -> PhaseSpec {
        PhaseSpec::heisenberg_cond_ii(1.0, DiagonalB::zeros(1), mu).unwrap()
    }

    /// `h * int k(d, t) e^{-i w t} dt` by a fine midpoint rule.
    fn direct_entry(op: &TwistedConvolution, d: f64, w: f64, h: f64) -> Complex64 {
        let (lo, hi) = op.ranges().z_box[1];
        let n = 40_000;
        let dt = (hi - lo) / n as f64;
        let mut acc = ZERO;
        for k in 0..n {
            let t = lo + (k as f64 + 0.5) * dt;
            acc += op.kernel([d, t]) * Complex64::from_polar(1.0, -w * t);
        }
        acc * h * dt
    }

    #[test]
    fn fiber_entries_match_direct_quadrature() {
        let rule = GridRule::default();
        let op = TwistedConvolution::new(&cond_ii(0.7), annulus(0.8, 0.4), 3.0, &rule).unwrap();
        let a = op.fiber_matrix(&rule).unwrap();
        let FiberLayout { spacing: h, row_start, rows } = a.layout();
        let top = (0..rows)
            .flat_map(|i| (0..a.bandwidth()).map(move |c| (i, c)))
            .map(|(i, c)| a.get(i, i + c).norm())
            .fold(0.0, f64::max);
        let mut checked = 0;
        for i in (0..rows).step_by(rows / 7 + 1) {
            for c in (0..a.bandwidth()).step_by(a.bandwidth() / 9 + 1) {
                let p = (row_start + i as i64) as f64 * h;
                let q = (a.col_start() + (i + c) as i64) as f64 * h;
                let want = direct_entry(&op, p - q, op.sigma() * (p + q), h);
                let got = a.get(i, i + c);
                let (w_lo, w_hi) = op.omega_window();
                let w = op.sigma() * (p + q);
                let tol = if w >= w_lo && w <= w_hi { 1e-4 } else { 2e-3 };
                assert!((got - want).norm() < tol * top, "{got} vs {want}, top {top}");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn multiplier_matches_hankel_oracle() {
        // sup of the Hankel transform of the annular kernel, computed independently
        let rule = GridRule::default();
        let op = TwistedConvolution::new(&cond_ii(0.0), annulus(0.89, 0.4), 8.0, &rule).unwrap();
        assert_eq!(op.sigma(), 0.0);
        let est = op.norm(&rule, &NormOptions::default()).unwrap();
        assert!((est.norm - 1.06428).abs() < 2e-4, "{}", est.norm);
    }

    #[test]
    fn windowed_operator_is_bounded_by_fiber_norm() {
        let rule = GridRule::default();
        let phase = cond_ii(0.5);
        let diff = DiffProfile::Annulus(Profile::new(0.6, 0.3, 0.5).unwrap());
        let tw = TwistedConvolution::new(&phase, Arc::new(diff.clone()), 2.0, &rule).unwrap();
        let full = tw.norm(&rule, &NormOptions::default()).unwrap().norm;
        let window = Profile::new(0.0, 1.2, 0.6).unwrap();
        let amp = DifferenceAmplitude { x: vec![window; 2], diff };
        let coarse = GridRule { min_density: 12.0, ..rule };
        let osc = OscOperator::auto(Arc::new(phase), Arc::new(amp), 2.0, &coarse).unwrap();
        let windowed = operator_norm(&osc, &NormOptions::default()).unwrap().norm;
        assert!(windowed <= full * 1.002, "{windowed} > {full}");
        assert!(windowed >= 0.8 * full, "{windowed} << {full}");
    }

    #[test]
    fn norm_converges_under_refinement() {
        let rule = GridRule::default();
        let op = TwistedConvolution::new(&cond_ii(1.0), annulus(0.89, 0.4), 16.0, &rule).unwrap();
        let opts = NormOptions::default();
        let a = op.norm(&rule, &opts).unwrap().norm;
        let fine = GridRule { refine: 1.5, ..rule.clone() };
        let b = op.norm(&fine, &opts).unwrap().norm;
        assert!((a - b).abs() < 1e-3 * b, "{a} vs {b}");
    }

    #[test]
    fn unimodular_scale_leaves_norm() {
        let rule = GridRule::default();
        let op = TwistedConvolution::new(&cond_ii(1.0), annulus(0.89, 0.4), 8.0, &rule).unwrap();
        let opts = NormOptions::default();
        let a = op.norm(&rule, &opts).unwrap().norm;
        let b = op.with_scale(Complex64::from_polar(2.0, 0.7)).norm(&rule, &opts).unwrap().norm;
        assert!((b - 2.0 * a).abs() < 1e-6 * b);
    }

    #[test]
    fn shared_layout_composes() {
        let rule = GridRule::default();
        let phase = cond_ii(1.0);
        let op = TwistedConvolution::new(&phase, annulus(0.89, 0.4), 8.0, &rule).unwrap();
        let a = op.fiber_matrix(&rule).unwrap();
        let layout = a.layout();
        let b = op.fiber_matrix_on(&rule, &layout).unwrap();
        assert_eq!(a.get(3, 10), b.get(3, 10));
        let adj = Adjoint(&a);
        let prod = Compose::new(&adj, &b).unwrap();
        let opts = NormOptions::default();
        let n = operator_norm(&a, &opts).unwrap().norm;
        let nn = operator_norm(&prod, &opts).unwrap().norm;
        assert!((nn - n * n).abs() < 1e-5 * nn, "{nn} vs {}", n * n);
    }

    #[test]
    fn adjoint_identity() {
        let rule = GridRule::default();
        let op = TwistedConvolution::new(&cond_ii(0.8), annulus(0.7, 0.4), 4.0, &rule).unwrap();
        let a = op.fiber_matrix(&rule).unwrap();
        let f: Vec<Complex64> =
            (0..a.cols()).map(|j| Complex64::new((j as f64 * 0.37).sin(), (j as f64 * 0.11).cos())).collect();
        let g: Vec<Complex64> =
            (0..a.rows()).map(|i| Complex64::new((i as f64 * 0.23).cos(), (i as f64 * 0.71).sin())).collect();
        let mut af = vec![ZERO; a.rows()];
        let mut ag = vec![ZERO; a.cols()];
        a.apply(&f, &mut af);
        a.apply_adjoint(&g, &mut ag);
        let lhs: Complex64 = g.iter().zip(&af).map(|(x, y)| x.conj() * y).sum();
        let rhs: Complex64 = ag.iter().zip(&f).map(|(x, y)| x.conj() * y).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn windowed_storage_matches_dense_products() {
        let rule = GridRule::default();
        let op = TwistedConvolution::new(&cond_ii(64.0), annulus(0.7, 0.4), 4.0, &rule).unwrap();
        let a = op.fiber_matrix(&rule).unwrap();
        let (m, n) = (a.rows(), a.cols());
        assert!(a.entries() * 4 < m * a.bandwidth(), "{} of {}", a.entries(), m * a.bandwidth());
        let f: Vec<Complex64> = (0..n).map(|j| Complex64::new((j as f64 * 0.37).sin(), 0.3)).collect();
        let g: Vec<Complex64> = (0..m).map(|i| Complex64::new(0.2, (i as f64 * 0.71).cos())).collect();
        let mut af = vec![ZERO; m];
        let mut ag = vec![ZERO; n];
        a.apply(&f, &mut af);
        a.apply_adjoint(&g, &mut ag);
        let scale = af.iter().chain(&ag).map(|v| v.norm()).fold(0.0, f64::max);
        for (i, got) in af.iter().enumerate() {
            let want: Complex64 = f.iter().enumerate().map(|(j, x)| a.get(i, j) * x).sum();
            assert!((got - want).norm() < 1e-12 * scale);
        }
        for (j, got) in ag.iter().enumerate() {
            let want: Complex64 = g.iter().enumerate().map(|(i, x)| a.get(i, j).conj() * x).sum();
            assert!((got - want).norm() < 1e-12 * scale);
        }
    }

    #[test]
    fn rejects_unsupported_inputs() {
        let rule = GridRule::default();
        let two = PhaseSpec::heisenberg_cond_ii(1.0, DiagonalB::zeros(2), 1.0).unwrap();
        assert!(matches!(
            TwistedConvolution::new(&two, annulus(0.89, 0.4), 8.0, &rule),
            Err(Error::InvalidParameter(_))
        ));
        let curve = PhaseSpec::curve(1.0, 2, 1.0).unwrap();
        assert!(TwistedConvolution::new(&curve, annulus(0.89, 0.4), 8.0, &rule).is_err());
        assert!(matches!(
            TwistedConvolution::new(&cond_ii(1.0), annulus(0.3, 0.2), 8.0, &rule),
            Err(Error::Domain(_))
        ));
        let op = TwistedConvolution::new(&cond_ii(0.0), annulus(0.89, 0.4), 8.0, &rule).unwrap();
        assert!(op.fiber_matrix(&rule).is_err());
        let capped = GridRule { max_entries: 1000, ..rule };
        let op = TwistedConvolution::new(&cond_ii(1.0), annulus(0.89, 0.4), 8.0, &capped).unwrap();
        assert!(matches!(op.fiber_matrix(&capped), Err(Error::GridCap { .. })));
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(31), 32);
        assert_eq!(smooth_size(121), 125);
    }
}

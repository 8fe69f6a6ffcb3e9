//! Dyadic pieces `T_{j,tau}` of the strongly singular Heisenberg kernel, the
//! Key Estimate sweep over `j`, off-band regime bounds, almost orthogonality
//! of pieces at different scales and the Cotlar-Stein assembly.
//!
//! After rescaling by `2^{-j}`, piece `j` at central frequency `tau` is the
//! twisted convolution with phase
//!
//! `2^{j beta} |z|^-beta + 2^{-2j} tau (2 x^t J y - 2^{2j} phi(2^{-j} x, 2^{-j} y))`
//!
//! and amplitude `2^{j alpha} b(z)`, `b(z) = chi_cone(z) chi_h(|z|) |z|^{-2n-alpha}`.
//! The coupling of the twist relative to the singular term is
//! `mu = 2^{-j (beta + 2)} tau`; the critical band is `mu in [eps, 1/eps]`.
//!
//! Pieces are also built in the frame of a finer scale `j' >= j`
//! (rescaling by `2^{-j'}`), where `b` is replaced by
//! `chi_cone(z) chi_h(2^{j - j'} |z|) |z|^{-2n-alpha}` and the prefactor by
//! `2^{j' alpha}`. Two pieces in one frame share the twist coefficient and
//! compose on one fiber lattice.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomp::cutoff::CutoffFamily;
use crate::error::{Error, Result};
use crate::geometry::DiagonalB;
use crate::opnorm::grid::GridRule;
use crate::opnorm::norm::{operator_norm, NormEstimate, NormOptions};
use crate::opnorm::operator::{Adjoint, Compose, MIN_SEPARATION};
use crate::opnorm::sweep::{fit_line, LineFit};
use crate::opnorm::twisted::{ConvAmplitude, TwistedConvolution};
use crate::phase::PhaseSpec;

/// Relative slack allowed in `|T_j^* T_j'| <= |T_j| |T_j'|` when the three
/// norms come from different lattices.
pub const SUBMULT_SLACK: f64 = 1e-3;

/// The smooth perturbation `phi` of the group structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    /// `phi(x, y) = |x - y|^kappa`, `kappa > 2`.
    I { kappa: f64 },
    /// `phi = (x - y)^t B (x - y) + rho0 |x - y|^3`.
    II { b: DiagonalB, rho0: f64 },
}

impl Condition {
    pub fn flat(n: usize) -> Self {
        Condition::II { b: DiagonalB::zeros(n), rho0: 0.0 }
    }

    /// Phase of a piece in the frame of scale `frame` at central frequency `tau`:
    /// frequency `2^{frame beta}` and coupling `2^{-frame (beta + 2)} tau`.
    pub fn frame_phase(&self, beta: f64, n: usize, tau: f64, frame: i32) -> Result<PhaseSpec> {
        check_tau(tau)?;
        let mu = coupling(beta, frame, tau);
        match self {
            Condition::I { kappa } => Ok(PhaseSpec::heisenberg_cond_i(beta, n, *kappa, mu)?
                .with_perturbation_scale(2f64.powf(-(frame as f64) * (kappa - 2.0)))),
            Condition::II { b, rho0 } => {
                if b.n() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: b.n() });
                }
                Ok(PhaseSpec::heisenberg_cond_ii(beta, b.clone(), mu)?
                    .with_remainder(rho0 * 2f64.powi(-frame)))
            }
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

/// `mu = 2^{-j (beta + 2)} tau`.
pub fn coupling(beta: f64, j: i32, tau: f64) -> f64 {
    2f64.powf(-(j as f64) * (beta + 2.0)) * tau
}

/// `tau` with coupling `mu` at scale `j`.
pub fn tau_for_coupling(beta: f64, j: i32, mu: f64) -> f64 {
    2f64.powf(j as f64 * (beta + 2.0)) * mu
}

/// Amplitude of one dyadic, radial and angular piece of
/// `|x - y|^{-2n-alpha}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpec {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub j: i32,
    /// Radial patch index.
    pub h: usize,
    /// Angular patch index; `None` keeps every direction.
    pub cone: Option<usize>,
    pub cutoffs: CutoffFamily,
}

impl AmplitudeSpec {
    pub fn new(alpha: f64, beta: f64, n: usize, j: i32, h: usize, cone: Option<usize>, delta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if j < 0 {
            return Err(Error::InvalidParameter(format!("dyadic index must be >= 0, got {j}")));
        }
        let cutoffs = CutoffFamily::new(delta)?;
        if h >= cutoffs.radial_count() {
            return Err(Error::InvalidParameter(format!(
                "radial patch {h} out of range (0..{})",
                cutoffs.radial_count()
            )));
        }
        if let Some(c) = cone {
            if n != 1 {
                return Err(Error::InvalidParameter("angular patches are planar (n = 1)".into()));
            }
            if c >= cutoffs.angular_count() {
                return Err(Error::InvalidParameter(format!(
                    "angular patch {c} out of range (0..{})",
                    cutoffs.angular_count()
                )));
            }
        }
        Ok(Self { alpha, beta, n, j, h, cone, cutoffs })
    }

    pub fn with_j(&self, j: i32) -> Result<Self> {
        Self::new(self.alpha, self.beta, self.n, j, self.h, self.cone, self.cutoffs.delta)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.beta, self.n, self.j, self.h, self.cone, self.cutoffs.delta)
    }

    fn cone_factor(&self, z: &[f64]) -> f64 {
        match self.cone {
            Some(c) => self.cutoffs.chi_cone(c, [z[0], z[1]]).unwrap_or(0.0),
            None => 1.0,
        }
    }

    fn radial(&self, t: f64) -> f64 {
        self.cutoffs.radial_patches()[self.h].eval(t)
    }

    /// `a_j(z) = chi_cone(z) chi_h(2^j |z|) |z|^{-2n-alpha}` in the original variables.
    pub fn a_j(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        let c = self.radial(2f64.powi(self.j) * r);
        if c == 0.0 {
            return 0.0;
        }
        c * self.cone_factor(z) * r.powf(-(2.0 * self.n as f64) - self.alpha)
    }

    /// `2^{-j(2n+alpha)} a_j(2^{-j} w)`, evaluated literally.
    pub fn rescaled(&self, w: &[f64]) -> f64 {
        let s = 2f64.powi(-self.j);
        let z: Vec<f64> = w.iter().map(|v| v * s).collect();
        2f64.powf(-(self.j as f64) * (2.0 * self.n as f64 + self.alpha)) * self.a_j(&z)
    }

    /// Support of `chi_h` in `|w|`.
    pub fn radial_support(&self) -> (f64, f64) {
        self.cutoffs.radial_patches()[self.h].support()
    }

    /// Largest `|d^g b|` with `|g| <= order` over a lattice of `per_axis^{2n}`
    /// points covering the support, by nested central differences of
    /// [`rescaled`](Self::rescaled).
    pub fn sampled_seminorm(&self, order: usize, per_axis: usize) -> Result<f64> {
        if order > 4 {
            return Err(Error::InvalidParameter(format!("order must be <= 4, got {order}")));
        }
        let d = 2 * self.n;
        let (_, r1) = self.radial_support();
        let step = 1e-2 * r1;
        let total = per_axis.pow(d as u32);
        let best = (0..total)
            .into_par_iter()
            .map(|idx| {
                let mut w = vec![0.0; d];
                let mut q = idx;
                for v in w.iter_mut() {
                    *v = -r1 + 2.0 * r1 * (q % per_axis) as f64 / (per_axis - 1).max(1) as f64;
                    q /= per_axis;
                }
                let mut worst = 0.0f64;
                for k in 0..=order {
                    for_each_multi_index(d, k, &mut |g| {
                        worst = worst.max(self.derivative(&w, g, step).abs());
                    });
                }
                worst
            })
            .reduce(|| 0.0, f64::max);
        Ok(best)
    }

    fn derivative(&self, w: &[f64], g: &[usize], step: f64) -> f64 {
        match g.iter().position(|&k| k > 0) {
            None => self.rescaled(w),
            Some(axis) => {
                let mut rest = g.to_vec();
                rest[axis] -= 1;
                let mut p = w.to_vec();
                let mut m = w.to_vec();
                p[axis] += step;
                m[axis] -= step;
                (self.derivative(&p, &rest, step) - self.derivative(&m, &rest, step)) / (2.0 * step)
            }
        }
    }
}

fn for_each_multi_index(d: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(g: &mut Vec<usize>, axis: usize, left: usize, f: &mut dyn FnMut(&[usize])) {
        if axis + 1 == g.len() {
            g[axis] = left;
            f(g);
            return;
        }
        for v in 0..=left {
            g[axis] = v;
            rec(g, axis + 1, left - v, f);
        }
    }
    let mut g = vec![0; d];
    rec(&mut g, 0, k, f);
}

#[inline]
fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The planar amplitude of piece `spec.j` in the frame of scale `frame`.
#[derive(Debug, Clone)]
pub struct DyadicAmplitude {
    spec: AmplitudeSpec,
    /// `2^{spec.j - frame}`.
    shrink: f64,
    z_box: [(f64, f64); 2],
}

impl DyadicAmplitude {
    pub fn new(spec: &AmplitudeSpec, frame: i32) -> Result<Self> {
        if spec.n != 1 {
            return Err(Error::InvalidParameter(format!(
                "planar amplitudes need n = 1, got n = {}",
                spec.n
            )));
        }
        if frame < spec.j {
            return Err(Error::InvalidParameter(format!(
                "frame {frame} is coarser than the piece j = {}",
                spec.j
            )));
        }
        let shrink = 2f64.powi(spec.j - frame);
        let (_, r1) = spec.radial_support();
        let outer = r1 / shrink;
        let z_box = match spec.cone {
            None => [(-outer, outer), (-outer, outer)],
            Some(c) => {
                let (a0, a1) = spec.cutoffs.angular_patches()[c].support();
                let inner = spec.radial_support().0 / shrink;
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                let m = 512;
                for i in 0..=m {
                    let a = a0 + (a1 - a0) * i as f64 / m as f64;
                    for r in [inner, outer] {
                        let p = [r * a.cos(), r * a.sin()];
                        for k in 0..2 {
                            lo[k] = lo[k].min(p[k]);
                            hi[k] = hi[k].max(p[k]);
                        }
                    }
                }
                let pad = outer * ((a1 - a0) / m as f64).powi(2);
                [(lo[0] - pad, hi[0] + pad), (lo[1] - pad, hi[1] + pad)]
            }
        };
        Ok(Self { spec: spec.clone(), shrink, z_box })
    }
}

impl ConvAmplitude for DyadicAmplitude {
    fn eval(&self, z: [f64; 2]) -> f64 {
        let r = z[0].hypot(z[1]);
        let c = self.spec.radial(self.shrink * r);
        if c == 0.0 {
            return 0.0;
        }
        c * self.spec.cone_factor(&z) * r.powf(-2.0 - self.spec.alpha)
    }

    fn z_box(&self) -> [(f64, f64); 2] {
        self.z_box
    }

    fn min_norm(&self) -> f64 {
        self.spec.radial_support().0 / self.shrink
    }
}

/// `T_{j,tau}` realized as a twisted convolution in the frame of scale `frame`.
#[derive(Debug, Clone)]
pub struct DyadicOperator {
    pub j: i32,
    pub frame: i32,
    pub tau: f64,
    /// Coupling of the twist in this frame, `2^{-frame (beta + 2)} tau`.
    pub mu: f64,
    phase: PhaseSpec,
    op: TwistedConvolution,
}

impl DyadicOperator {
    /// `T_{j,tau}` in its own frame.
    pub fn build(spec: &AmplitudeSpec, cond: &Condition, tau: f64, rule: &GridRule) -> Result<Self> {
        Self::build_in_frame(spec, cond, tau, spec.j, rule)
    }

    pub fn build_in_frame(
        spec: &AmplitudeSpec,
        cond: &Condition,
        tau: f64,
        frame: i32,
        rule: &GridRule,
    ) -> Result<Self> {
        let amp = DyadicAmplitude::new(spec, frame)?;
        if amp.min_norm() < MIN_SEPARATION {
            return Err(Error::Domain(format!(
                "radial patch {} reaches |z| = {} below {MIN_SEPARATION}",
                spec.h,
                amp.min_norm()
            )));
        }
        let phase = cond.frame_phase(spec.beta, spec.n, tau, frame)?;
        let lambda = 2f64.powf(frame as f64 * spec.beta);
        let scale = 2f64.powf(frame as f64 * spec.alpha);
        let op = TwistedConvolution::new(&phase, Arc::new(amp), lambda, rule)?
            .with_scale(num_complex::Complex64::new(scale, 0.0));
        Ok(Self { j: spec.j, frame, tau, mu: phase.mu, phase, op })
    }

    pub fn phase(&self) -> &PhaseSpec {
        &self.phase
    }

    pub fn operator(&self) -> &TwistedConvolution {
        &self.op
    }

    pub fn norm(&self, rule: &GridRule, opts: &NormOptions) -> Result<NormEstimate> {
        self.op.norm(rule, opts)
    }
}

/// Central frequencies sampled per scale: the two band edges and `interior`
/// log-spaced couplings strictly inside `[eps, 1/eps]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSampling {
    pub eps: f64,
    pub interior: usize,
}

impl Default for TauSampling {
    fn default() -> Self {
        Self { eps: 0.25, interior: 3 }
    }
}

impl TauSampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("band eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.interior < 1 {
            return Err(Error::InvalidParameter("need at least one interior band sample".into()));
        }
        Ok(())
    }

    /// Couplings `mu` in increasing order.
    pub fn couplings(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let m = self.interior + 1;
        Ok((0..=m).map(|i| self.eps.powf(1.0 - 2.0 * i as f64 / m as f64)).collect())
    }

    /// Whether the coupling lies strictly inside the band, where the
    /// off-band bounds are not claimed.
    pub fn in_open_band(&self, mu: f64) -> bool {
        mu > self.eps && mu < 1.0 / self.eps
    }

    pub fn in_band(&self, mu: f64) -> bool {
        mu >= self.eps * (1.0 - 1e-12) && mu <= (1.0 + 1e-12) / self.eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEstimateRow {
    pub j: i32,
    pub tau: f64,
    pub mu: f64,
    pub norm: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Per-scale norms over the band and the fitted exponent of
/// `sup_tau |T_{j,tau}| ~ 2^{j slope}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEstimate {
    pub rows: Vec<KeyEstimateRow>,
    /// `(j, sup over the band)`.
    pub sup: Vec<(i32, f64)>,
    pub fit: LineFit,
}

impl KeyEstimate {
    /// Slopes of `log2 sup` between consecutive scales.
    pub fn local_slopes(&self) -> Vec<f64> {
        self.sup
            .windows(2)
            .map(|w| (w[1].1 / w[0].1).log2() / (w[1].0 - w[0].0) as f64)
            .collect()
    }
}

pub fn key_estimate_sweep(
    spec: &AmplitudeSpec,
    cond: &Condition,
    js: &[i32],
    sampling: &TauSampling,
    rule: &GridRule,
    opts: &NormOptions,
) -> Result<KeyEstimate> {
    let mus = sampling.couplings()?;
    if js.len() < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 scales, got {}", js.len())));
    }
    let jobs: Vec<(i32, f64)> = js.iter().flat_map(|&j| mus.iter().map(move |&m| (j, m))).collect();
    let rows: Vec<KeyEstimateRow> = jobs
        .par_iter()
        .map(|&(j, mu)| {
            let s = spec.with_j(j)?;
            let tau = tau_for_coupling(spec.beta, j, mu);
            let op = DyadicOperator::build(&s, cond, tau, rule)?;
            let est = op.norm(rule, opts)?.require_converged()?;
            Ok(KeyEstimateRow { j, tau, mu, norm: est.norm, iterations: est.iterations, residual: est.residual })
        })
        .collect::<Result<_>>()?;
    let sup: Vec<(i32, f64)> = js
        .iter()
        .map(|&j| (j, rows.iter().filter(|r| r.j == j).map(|r| r.norm).fold(0.0, f64::max)))
        .collect();
    let pts: Vec<(f64, f64)> = sup.iter().map(|&(j, v)| (j as f64, v.log2())).collect();
    let fit = fit_line(&pts)?;
    Ok(KeyEstimate { rows, sup, fit })
}

/// `2^{j alpha} min(2^{-j n beta}, 2^{2 j n} |tau|^{-n})`.
pub fn regime_bound(alpha: f64, beta: f64, n: usize, j: i32, tau: f64) -> f64 {
    let (j, n) = (j as f64, n as f64);
    let small = 2f64.powf(-j * n * beta);
    let large = if tau == 0.0 { f64::INFINITY } else { 2f64.powf(2.0 * j * n) * tau.abs().powf(-n) };
    2f64.powf(j * alpha) * small.min(large)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub tau: f64,
    pub mu: f64,
    pub norm: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTable {
    pub j: i32,
    pub eps: f64,
    pub rows: Vec<RegimeRow>,
    /// `max norm / bound` over the table.
    pub constant: f64,
    /// Rows with `norm > constant * bound`.
    pub exceeding: Vec<usize>,
}

/// Norms of `T_{spec.j, tau}` against the off-band bound.
pub fn regime_check(
    spec: &AmplitudeSpec,
    cond: &Condition,
    taus: &[f64],
    eps: f64,
    rule: &GridRule,
    opts: &NormOptions,
) -> Result<RegimeTable> {
    let band = TauSampling { eps, interior: 1 };
    band.validate()?;
    if taus.is_empty() {
        return Err(Error::InvalidParameter("no central frequencies supplied".into()));
    }
    for &tau in taus {
        check_tau(tau)?;
        let mu = coupling(spec.beta, spec.j, tau);
        if band.in_open_band(mu) {
            return Err(Error::InvalidParameter(format!(
                "tau = {tau} has coupling {mu} inside the critical band ({eps}, {})",
                1.0 / eps
            )));
        }
    }
    let rows: Vec<RegimeRow> = taus
        .par_iter()
        .map(|&tau| {
            let op = DyadicOperator::build(spec, cond, tau, rule)?;
            let norm = op.norm(rule, opts)?.require_converged()?.norm;
            let bound = regime_bound(spec.alpha, spec.beta, spec.n, spec.j, tau);
            Ok(RegimeRow { tau, mu: op.mu, norm, bound, ratio: norm / bound })
        })
        .collect::<Result<_>>()?;
    let constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let exceeding = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.norm > constant * r.bound)
        .map(|(i, _)| i)
        .collect();
    Ok(RegimeTable { j: spec.j, eps, rows, constant, exceeding })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoRow {
    pub j: i32,
    pub jprime: i32,
    pub tau: f64,
    /// `|T_{j,tau}^* T_{j',tau}|`.
    pub composed: f64,
    pub norm_j: f64,
    pub norm_jprime: f64,
    pub submultiplicative: bool,
    /// Stored entries of the coarse piece's fiber matrix.
    pub entries: usize,
}

impl OrthoRow {
    pub fn gap(&self) -> i32 {
        self.jprime - self.j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoTable {
    pub rows: Vec<OrthoRow>,
    /// Fit of `log2 composed` against `j' - j`.
    pub fit: LineFit,
}

impl OrthoTable {
    /// Composed norms keyed by the gap `j' - j`.
    pub fn gains(&self) -> BTreeMap<u32, f64> {
        self.rows.iter().map(|r| (r.gap() as u32, r.composed)).collect()
    }
}

/// Composed norms `|T_{j,tau}^* T_{j',tau}|` for `j' in jprimes`, with
/// `tau` placed at coupling `mu` of the finer scale `j'`.
pub fn ortho_sweep(
    spec: &AmplitudeSpec,
    cond: &Condition,
    jprimes: &[i32],
    mu: f64,
    eps: f64,
    rule: &GridRule,
    opts: &NormOptions,
) -> Result<OrthoTable> {
    let band = TauSampling { eps, interior: 1 };
    band.validate()?;
    if !band.in_band(mu) {
        return Err(Error::InvalidParameter(format!(
            "coupling {mu} lies outside the critical band [{eps}, {}]",
            1.0 / eps
        )));
    }
    if let Some(&jp) = jprimes.iter().find(|&&jp| jp < spec.j) {
        return Err(Error::InvalidParameter(format!("j' = {jp} is below j = {}", spec.j)));
    }
    let mut rows = Vec::with_capacity(jprimes.len());
    for &jp in jprimes {
        let tau = tau_for_coupling(spec.beta, jp, mu);
        let fine_spec = spec.with_j(jp)?;
        let fine = DyadicOperator::build(&fine_spec, cond, tau, rule)?;
        let coarse = DyadicOperator::build_in_frame(spec, cond, tau, jp, rule)?;
        let h = fine.op.natural_spacing(rule).min(coarse.op.natural_spacing(rule));
        let layout = fine.op.layout_at(h)?;
        let a_fine = fine.op.fiber_matrix_on(rule, &layout)?;
        let a_coarse = coarse.op.fiber_matrix_on(rule, &layout)?;
        let adj = Adjoint(&a_coarse);
        let prod = Compose::new(&adj, &a_fine)?;
        let composed = operator_norm(&prod, opts)?.require_converged()?.norm;
        let entries = a_coarse.entries();
        drop(a_coarse);
        let norm_jprime = operator_norm(&a_fine, opts)?.require_converged()?.norm;
        drop(a_fine);
        let norm_j = if jp == spec.j {
            norm_jprime
        } else {
            DyadicOperator::build(spec, cond, tau, rule)?.norm(rule, opts)?.norm
        };
        let submultiplicative = composed <= norm_j * norm_jprime * (1.0 + SUBMULT_SLACK);
        rows.push(OrthoRow { j: spec.j, jprime: jp, tau, composed, norm_j, norm_jprime, submultiplicative, entries });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.gap() as f64, r.composed.log2())).collect();
    let fit = fit_line(&pts)?;
    Ok(OrthoTable { rows, fit })
}

/// Cotlar-Stein bound `sum_k gain_k^{1/2}` over the supplied gaps plus a
/// geometric tail continuing the fitted decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotlarBound {
    pub partial: f64,
    pub tail: f64,
    pub total: f64,
    /// Fitted slope of `log2 gain` per unit gap.
    pub decay: f64,
}

pub fn cotlar_assemble(gains: &BTreeMap<u32, f64>) -> Result<CotlarBound> {
    if gains.len() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 gains, got {}", gains.len())));
    }
    if let Some((k, g)) = gains.iter().find(|(_, g)| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::InvalidParameter(format!("gain at gap {k} must be positive, got {g}")));
    }
    let pts: Vec<(f64, f64)> = gains.iter().map(|(&k, &g)| (k as f64, g.log2())).collect();
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let decay = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    if !(decay < -1e-9) {
        return Err(Error::NonDecaying(format!(
            "fitted log2 gain slope is {decay:.4} per unit gap"
        )));
    }
    let partial: f64 = gains.values().map(|g| g.sqrt()).sum();
    let ratio = 2f64.powf(decay / 2.0);
    let last = gains.values().next_back().copied().unwrap_or(0.0).sqrt();
    let tail = last * ratio / (1.0 - ratio);
    Ok(CotlarBound { partial, tail, total: partial + tail, decay })
}

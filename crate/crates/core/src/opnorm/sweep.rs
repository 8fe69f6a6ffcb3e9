//! Norm-decay sweeps over the frequency and log-log slope fits.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opnorm::amplitude::Amplitude;
use crate::opnorm::grid::GridRule;
use crate::opnorm::norm::{operator_norm, NormOptions};
use crate::opnorm::operator::{LinearMap, OscOperator};
use crate::opnorm::toeplitz::ToeplitzOperator;
use crate::phase::Phase;

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::DegenerateFit("non-finite input".into()));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) * nf {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let slope_stderr = (rss / (nf - 2.0) / sxx).sqrt();
    Ok(LineFit { slope, intercept, slope_stderr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEntry {
    pub lambda: f64,
    pub norm: f64,
    pub iterations: usize,
    pub residual: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Measured norms and the fitted exponent of `norm ~ lambda^slope`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDecaySeries {
    pub entries: Vec<DecayEntry>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
}

impl NormDecaySeries {
    pub fn from_entries(entries: Vec<DecayEntry>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].lambda > w[0].lambda) {
                return Err(Error::InvalidParameter("lambdas must increase strictly".into()));
            }
        }
        if let Some(e) = entries.iter().find(|e| !(e.norm > 0.0)) {
            return Err(Error::DegenerateFit(format!("non-positive norm at lambda = {}", e.lambda)));
        }
        let fit = fit_slope(&entries)?;
        Ok(Self { entries, slope: fit.slope, slope_stderr: fit.slope_stderr, intercept: fit.intercept })
    }

    /// Slopes between consecutive entries.
    pub fn local_slopes(&self) -> Vec<f64> {
        self.entries
            .windows(2)
            .map(|w| (w[1].norm / w[0].norm).ln() / (w[1].lambda / w[0].lambda).ln())
            .collect()
    }

    /// Largest relative increase `norm_{k+1} / norm_k - 1` across the sweep.
    pub fn max_ripple(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| w[1].norm / w[0].norm - 1.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// OLS fit of `log norm` against `log lambda`.
pub fn fit_slope(entries: &[DecayEntry]) -> Result<LineFit> {
    let pts: Vec<(f64, f64)> = entries.iter().map(|e| (e.lambda.ln(), e.norm.ln())).collect();
    fit_line(&pts)
}

/// Options shared by sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub rule: GridRule,
    pub norm: NormOptions,
    /// Kernel cache budget per operator, in bytes; 0 disables caching.
    pub cache_bytes: usize,
    /// Run the frequencies concurrently (each operator is parallel internally either way).
    pub parallel: bool,
    /// Use the FFT-applied Toeplitz form when phase and amplitude admit it.
    pub structured: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            rule: GridRule::default(),
            norm: NormOptions::default(),
            cache_bytes: 1 << 30,
            parallel: false,
            structured: true,
        }
    }
}

/// Norm of one operator, with the optional kernel cache.
pub fn measure(
    phase: Arc<dyn Phase>,
    amplitude: Arc<dyn Amplitude>,
    lambda: f64,
    opts: &SweepOptions,
    cache_bytes: usize,
) -> Result<DecayEntry> {
    if opts.structured && ToeplitzOperator::supports(phase.as_ref(), amplitude.as_ref()) {
        let op = ToeplitzOperator::auto(phase, amplitude, lambda, &opts.rule)?;
        let est = operator_norm(&op, &opts.norm)?.require_converged()?;
        return Ok(DecayEntry {
            lambda,
            norm: est.norm,
            iterations: est.iterations,
            residual: est.residual,
            rows: op.rows(),
            cols: op.cols(),
        });
    }
    let mut op = OscOperator::auto(phase, amplitude, lambda, &opts.rule)?;
    if cache_bytes > 0 {
        op = op.cache_kernel(cache_bytes);
    }
    let est = operator_norm(&op, &opts.norm)?.require_converged()?;
    Ok(DecayEntry {
        lambda,
        norm: est.norm,
        iterations: est.iterations,
        residual: est.residual,
        rows: op.grid_x().len(),
        cols: op.grid_y().len(),
    })
}

/// Norms of `T_lambda` over `lambdas` (at least four, increasing) and the fitted slope.
pub fn decay_sweep(
    phase: Arc<dyn Phase>,
    amplitude: Arc<dyn Amplitude>,
    lambdas: &[f64],
    opts: &SweepOptions,
) -> Result<NormDecaySeries> {
    if lambdas.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "a sweep needs at least 4 frequencies, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("frequencies must be positive".into()));
    }
    let entries: Vec<DecayEntry> = if opts.parallel {
        let budget = opts.cache_bytes / rayon::current_num_threads().max(1);
        lambdas
            .par_iter()
            .map(|&l| measure(phase.clone(), amplitude.clone(), l, opts, budget))
            .collect::<Result<_>>()?
    } else {
        lambdas
            .iter()
            .map(|&l| measure(phase.clone(), amplitude.clone(), l, opts, opts.cache_bytes))
            .collect::<Result<_>>()?
    };
    NormDecaySeries::from_entries(entries)
}

//! Experiment configuration: a single JSON document, validated before any compute.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use foldlab_core::decomp::{AmplitudeSpec, Condition, TauSampling};
use foldlab_core::opnorm::GridRule;
use foldlab_core::{DiagonalB, PhaseSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FoldCheck,
    CurveFold,
    DetVerify,
    RateSweep,
    KeyEstimate,
    RegimeCheck,
    OrthoSweep,
    Cotlar,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::DetVerify,
        Experiment::FoldCheck,
        Experiment::CurveFold,
        Experiment::RateSweep,
        Experiment::KeyEstimate,
        Experiment::RegimeCheck,
        Experiment::OrthoSweep,
        Experiment::Cotlar,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::FoldCheck => "fold-check",
            Experiment::CurveFold => "curve-fold",
            Experiment::DetVerify => "det-verify",
            Experiment::RateSweep => "rate-sweep",
            Experiment::KeyEstimate => "key-estimate",
            Experiment::RegimeCheck => "regime-check",
            Experiment::OrthoSweep => "ortho-sweep",
            Experiment::Cotlar => "cotlar",
        }
    }

    pub fn anchor(self) -> &'static str {
        match self {
            Experiment::DetVerify => "closed-form Hessian determinants vs generic LU determinants",
            Experiment::FoldCheck => "fold conditions on the singular variety (corank, first order, transversality)",
            Experiment::CurveFold => "fold point of the model curve phase and its third derivative",
            Experiment::RateSweep => "operator-norm decay in lambda: nondegenerate and fold rates",
            Experiment::KeyEstimate => "key estimate: sup over the critical band of dyadic piece norms vs scale",
            Experiment::RegimeCheck => "off-band regime bounds for dyadic pieces",
            Experiment::OrthoSweep => "almost orthogonality of dyadic pieces vs scale gap",
            Experiment::Cotlar => "Cotlar-Stein assembly of the dyadic sum from measured gains",
        }
    }
}

/// Family swept by `rate-sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateFamily {
    Bilinear,
    Curve,
    Heisenberg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub beta: f64,
    pub alpha: Option<f64>,
    pub n: usize,
    /// Exponent of the `|x-y|^kappa` perturbation (`Condition::I`); the quadratic `B` form is used when absent.
    pub kappa: Option<f64>,
    /// Diagonal of `B`; zeros of length `n` when absent.
    pub b: Option<Vec<f64>>,
    /// Cubic remainder added to the quadratic `B` form.
    pub rho: f64,
    pub mu: Option<f64>,
    pub k: u32,
    /// Spatial dimension of the bilinear test phase.
    pub dim: usize,
    pub family: RateFamily,
    /// Inclusive `log2` range of the frequencies.
    pub lambda_range: Option<[i32; 2]>,
    /// Inclusive scale range (key-estimate), or the scale of the piece (regime-check, ortho-sweep).
    pub j_range: Option<[i32; 2]>,
    pub max_gap: i32,
    pub eps: f64,
    pub band_points: usize,
    /// Couplings `mu` at which regime-check places `tau`.
    pub couplings: Option<Vec<f64>>,
    /// Gains keyed by gap `0, 1, ...`; cotlar measures them when absent.
    pub gains: Option<Vec<f64>>,
    pub patch: usize,
    pub cone: Option<usize>,
    pub delta: f64,
    /// Exponent of the radial weight on the Heisenberg rate-sweep amplitude.
    pub weight_power: f64,
    pub samples: Option<usize>,
    pub theta: f64,
    pub expect_slope: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_constant: f64,
    pub max_entries: Option<u128>,
    /// Budget of `A^*A` applications per norm estimate.
    pub max_iter: Option<usize>,
    pub refine: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::DetVerify,
            beta: 1.0,
            alpha: None,
            n: 1,
            kappa: None,
            b: None,
            rho: 0.0,
            mu: None,
            k: 2,
            dim: 1,
            family: RateFamily::Curve,
            lambda_range: None,
            j_range: None,
            max_gap: 4,
            eps: 0.25,
            band_points: 3,
            couplings: None,
            gains: None,
            patch: 2,
            cone: None,
            delta: 0.125,
            weight_power: 3.5,
            samples: None,
            theta: 0.1,
            expect_slope: None,
            tolerance: None,
            max_constant: 10.0,
            max_entries: None,
            max_iter: None,
            refine: 1.0,
            seed: 0,
            out: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    /// SHA-256 of the canonical JSON with the output path cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn diag_b(&self) -> Result<DiagonalB, CliError> {
        match &self.b {
            Some(v) => DiagonalB::new(v.clone()).map_err(|e| usage(e.to_string())),
            None => Ok(DiagonalB::zeros(self.n)),
        }
    }

    pub fn condition(&self) -> Result<Condition, CliError> {
        match self.kappa {
            Some(kappa) => Ok(Condition::I { kappa }),
            None => Ok(Condition::II { b: self.diag_b()?, rho0: self.rho }),
        }
    }

    /// Heisenberg phase at coupling `mu`, `kappa` form if set, else the `B` form.
    pub fn heisenberg_phase(&self, mu: f64) -> Result<PhaseSpec, CliError> {
        let p = match self.kappa {
            Some(kappa) => PhaseSpec::heisenberg_cond_i(self.beta, self.n, kappa, mu),
            None => PhaseSpec::heisenberg_cond_ii(self.beta, self.diag_b()?, mu).map(|p| p.with_remainder(self.rho)),
        };
        p.map_err(|e| usage(e.to_string()))
    }

    pub fn mu_or(&self, default: f64) -> f64 {
        self.mu.unwrap_or(default)
    }

    pub fn alpha_or(&self, default: f64) -> f64 {
        self.alpha.unwrap_or(default)
    }

    /// Amplitude exponent at the boundedness threshold.
    pub fn threshold_alpha(&self) -> f64 {
        (self.n as f64 - 1.0 / 6.0) * self.beta
    }

    pub fn amplitude(&self, alpha: f64, j: i32) -> Result<AmplitudeSpec, CliError> {
        AmplitudeSpec::new(alpha, self.beta, self.n, j, self.patch, self.cone, self.delta)
            .map_err(|e| usage(e.to_string()))
    }

    pub fn grid_rule(&self) -> GridRule {
        let mut rule = GridRule::default();
        if let Some(cap) = self.max_entries {
            rule.max_entries = cap;
        }
        rule.refine = self.refine;
        rule
    }

    pub fn lambdas(&self, default: [i32; 2]) -> Vec<f64> {
        let [lo, hi] = self.lambda_range.unwrap_or(default);
        (lo..=hi).map(|k| 2f64.powi(k)).collect()
    }

    pub fn sampling(&self) -> TauSampling {
        TauSampling { eps: self.eps, interior: self.band_points }
    }

    /// Checks every parameter the chosen experiment reads; nothing is computed here.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(usage(format!(
                "beta must satisfy beta > 0 (which also excludes beta = -1, where the determinant formula degenerates), got {}",
                self.beta
            )));
        }
        if self.n == 0 {
            return Err(usage("n must be positive"));
        }
        if let Some(b) = &self.b {
            if b.len() != self.n {
                return Err(usage(format!("b has {} entries but n = {}", b.len(), self.n)));
            }
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(usage(format!("mu must be finite and >= 0, got {mu}")));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(usage(format!("tolerance must be positive, got {t}")));
            }
        }
        if self.max_iter == Some(0) {
            return Err(usage("max_iter must be positive"));
        }
        if !(self.refine >= 1.0) {
            return Err(usage(format!("refine must be >= 1, got {}", self.refine)));
        }
        if let Some([lo, hi]) = self.lambda_range {
            if hi - lo < 3 {
                return Err(usage(format!("lambda_range [{lo}, {hi}] must span at least 4 frequencies")));
            }
        }
        match self.experiment {
            Experiment::DetVerify => {
                if self.samples == Some(0) {
                    return Err(usage("samples must be positive"));
                }
                self.diag_b()?;
            }
            Experiment::FoldCheck => {
                if self.n != 1 {
                    return Err(usage("fold-check supports n = 1"));
                }
                if !(self.theta > 0.0 && self.theta < 1.0) {
                    return Err(usage(format!("theta must lie in (0, 1), got {}", self.theta)));
                }
                self.heisenberg_phase(self.mu_or(1.0))?;
            }
            Experiment::CurveFold => {
                PhaseSpec::curve(self.beta, self.k, self.mu_or(1.0)).map_err(|e| usage(e.to_string()))?;
            }
            Experiment::RateSweep => match self.family {
                RateFamily::Bilinear => {
                    if !(1..=2).contains(&self.dim) {
                        return Err(usage(format!("bilinear rate-sweep supports dim 1 or 2, got {}", self.dim)));
                    }
                }
                RateFamily::Curve => {
                    PhaseSpec::curve(self.beta, self.k, self.mu_or(1.0)).map_err(|e| usage(e.to_string()))?;
                }
                RateFamily::Heisenberg => {
                    if self.n != 1 {
                        return Err(usage("the Heisenberg rate-sweep supports n = 1"));
                    }
                    if !(self.weight_power >= 0.0) {
                        return Err(usage("weight_power must be >= 0"));
                    }
                    self.heisenberg_phase(self.mu_or(1.0))?;
                }
            },
            Experiment::KeyEstimate => {
                let [lo, hi] = self.j_range.unwrap_or([2, 6]);
                if hi - lo < 2 {
                    return Err(usage("key-estimate needs at least 3 scales in j_range"));
                }
                self.amplitude(self.alpha_or(0.0), lo)?;
                self.condition()?.frame_phase(self.beta, self.n, 1.0, lo).map_err(|e| usage(e.to_string()))?;
                self.sampling().validate().map_err(|e| usage(e.to_string()))?;
            }
            Experiment::RegimeCheck => {
                let j = self.j_range.map(|r| r[0]).unwrap_or(4);
                self.amplitude(self.alpha_or(0.0), j)?;
                self.condition()?;
                if let Some(c) = &self.couplings {
                    if c.is_empty() || c.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
                        return Err(usage("couplings must be a nonempty list of finite values >= 0"));
                    }
                }
            }
            Experiment::OrthoSweep | Experiment::Cotlar => {
                if let (Experiment::Cotlar, Some(g)) = (self.experiment, &self.gains) {
                    if g.len() < 2 || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                        return Err(usage("gains must list at least 2 positive values"));
                    }
                    return Ok(());
                }
                if self.max_gap < 1 {
                    return Err(usage("max_gap must be >= 1"));
                }
                let j = self.j_range.map(|r| r[0]).unwrap_or(0);
                self.amplitude(self.alpha_or(self.threshold_alpha()), j)?;
                self.condition()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "curve-fold"}"#).unwrap();
        assert_eq!(c.experiment, Experiment::CurveFold);
        assert_eq!(c.beta, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment": "det-verify", "betta": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "nope"}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_path() {
        let mut a = ExperimentConfig::default();
        let h = a.hash();
        a.out = Some("elsewhere".into());
        assert_eq!(h, a.hash());
        a.seed = 9;
        assert_ne!(h, a.hash());
    }

    #[test]
    fn negative_beta_names_the_precondition() {
        let c = ExperimentConfig { beta: -1.0, ..Default::default() };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("beta > 0") && msg.contains("-1"), "{msg}");
    }
}

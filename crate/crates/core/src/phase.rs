//! Phase functions with analytic gradients and mixed Hessians.
//!
//! Every family is evaluated on raw coordinate slices so that operator
//! kernels can call [`Phase::value`] in their inner loops without allocating.
//! The checked entry points on [`PhaseSpec`] validate dimensions and reject
//! coincident points for the singular families.
//!
//! Conventions (with `z = x - y`, `r = |z|`, `u = z / r`):
//!
//! | family            | phase                                               |
//! |-------------------|-----------------------------------------------------|
//! | `BilinearTest`    | `x . y`                                             |
//! | `RadialSingular`  | `r^-beta`                                           |
//! | `HeisenbergCondI` | `r^-beta + mu (2 x^t J y - s r^kappa)`              |
//! | `HeisenbergCondII`| `r^-beta + mu (2 x^t J y - z^t B z - rho r^3)`      |
//! | `CurvePhase`      | `|z|^-beta - mu z^k` (one variable)                 |
//!
//! The quadratic in `HeisenbergCondII` carries Hessian `2B`, so its mixed
//! Hessian is `beta r^-(beta+2) (I - (beta+2) u u^t) + mu (2J + 2B)` and the
//! closed-form determinant [`heisenberg_det`] applies verbatim.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{symplectic_form, DiagonalB};

/// Evaluation interface used by the operator kernels.
pub trait Phase: Send + Sync {
    /// Dimension `d` of each of the `x` and `y` variables.
    fn dim(&self) -> usize;

    /// `Phi(x, y)`. Unchecked: coincident points of singular phases give `inf`.
    fn value(&self, x: &[f64], y: &[f64]) -> f64;

    fn grad_x(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    fn grad_y(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Whether the phase blows up on the diagonal `x = y`.
    fn is_singular(&self) -> bool;

    /// How a one-dimensional phase splits as `u(x) + v(y) + g(x - y)`, if it does.
    fn difference_split(&self) -> Option<DifferenceSplit> {
        None
    }
}

/// Splittings `Phi(x, y) = u(x) + v(y) + g(x - y)` on the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifferenceSplit {
    /// `u = v = 0`, `g(z) = Phi(z, 0)`.
    Pure,
    /// `x y = x^2/2 + y^2/2 - (x - y)^2/2`.
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseFamily {
    BilinearTest,
    RadialSingular,
    HeisenbergCondI,
    HeisenbergCondII,
    CurvePhase,
}

/// A member of one of the phase families, see the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub family: PhaseFamily,
    pub dim: usize,
    pub beta: f64,
    /// Coupling in front of the twist (Heisenberg) or curve term.
    pub mu: f64,
    /// Exponent of the model perturbation `|x-y|^kappa`.
    pub kappa: f64,
    /// Scale `s` of the `|x-y|^kappa` perturbation.
    pub perturbation_scale: f64,
    pub b: Option<DiagonalB>,
    /// Coefficient of the cubic remainder `rho |x-y|^3` added to the `B` quadratic.
    pub rho: f64,
    /// Curve order.
    pub k: u32,
}

#[inline]
pub(crate) fn pow_neg(r: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        1.0 / r
    } else if beta == 2.0 {
        1.0 / (r * r)
    } else if beta == 0.5 {
        1.0 / r.sqrt()
    } else {
        r.powf(-beta)
    }
}

#[inline]
fn norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive and finite (and beta != -1), got {beta}"
        )));
    }
    Ok(())
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "coupling mu must be >= 0, got {mu}"
        )));
    }
    Ok(())
}

impl PhaseSpec {
    fn base(family: PhaseFamily, dim: usize, beta: f64) -> Self {
        Self {
            family,
            dim,
            beta,
            mu: 0.0,
            kappa: 3.0,
            perturbation_scale: 1.0,
            b: None,
            rho: 0.0,
            k: 2,
        }
    }

    /// `x . y` on `R^dim`.
    pub fn bilinear(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self::base(PhaseFamily::BilinearTest, dim, 1.0))
    }

    /// `|x - y|^-beta` on `R^dim`.
    pub fn radial(beta: f64, dim: usize) -> Result<Self> {
        check_beta(beta)?;
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self::base(PhaseFamily::RadialSingular, dim, beta))
    }

    pub fn heisenberg_cond_i(beta: f64, n: usize, kappa: f64, mu: f64) -> Result<Self> {
        check_beta(beta)?;
        check_mu(mu)?;
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if !(kappa > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "the |x-y|^kappa perturbation needs kappa > 2, got {kappa}"
            )));
        }
        let mut p = Self::base(PhaseFamily::HeisenbergCondI, 2 * n, beta);
        p.kappa = kappa;
        p.mu = mu;
        Ok(p)
    }

    pub fn heisenberg_cond_ii(beta: f64, b: DiagonalB, mu: f64) -> Result<Self> {
        check_beta(beta)?;
        check_mu(mu)?;
        let mut p = Self::base(PhaseFamily::HeisenbergCondII, 2 * b.n(), beta);
        p.b = Some(b);
        p.mu = mu;
        Ok(p)
    }

    pub fn curve(beta: f64, k: u32, mu: f64) -> Result<Self> {
        check_beta(beta)?;
        check_mu(mu)?;
        if k < 2 {
            return Err(Error::InvalidParameter(format!("curve order k must be >= 2, got {k}")));
        }
        let mut p = Self::base(PhaseFamily::CurvePhase, 1, beta);
        p.k = k;
        p.mu = mu;
        Ok(p)
    }

    /// Scale of the `|x-y|^kappa` perturbation, `mu (2 x^t J y - s |x-y|^kappa)`.
    pub fn with_perturbation_scale(mut self, s: f64) -> Self {
        self.perturbation_scale = s;
        self
    }

    /// Cubic remainder `rho |x-y|^3` of the `B` quadratic.
    pub fn with_remainder(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    /// Half dimension for the Heisenberg families.
    pub fn n(&self) -> usize {
        self.dim / 2
    }

    /// `c` such that `Phi(x, y) = Phi(x - y, 0) + c * omega(x, y)` with `omega`
    /// the symplectic form, for the families of that shape.
    pub fn twist_coupling(&self) -> Option<f64> {
        match self.family {
            PhaseFamily::RadialSingular => Some(0.0),
            PhaseFamily::HeisenbergCondI | PhaseFamily::HeisenbergCondII => Some(2.0 * self.mu),
            PhaseFamily::BilinearTest | PhaseFamily::CurvePhase => None,
        }
    }

    fn b_or_zero(&self) -> DiagonalB {
        self.b.clone().unwrap_or_else(|| DiagonalB::zeros(self.n().max(1)))
    }

    fn check_points(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        let r = norm_diff(x, y);
        if self.is_singular() && r == 0.0 {
            return Err(Error::Domain(format!(
                "{:?} is singular on the diagonal x = y",
                self.family
            )));
        }
        Ok(r)
    }

    /// Checked evaluation.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_points(x, y)?;
        Ok(self.value(x, y))
    }

    /// Analytic mixed Hessian `d^2 Phi / dx_k dy_l`.
    pub fn mixed_hessian(&self, x: &[f64], y: &[f64]) -> Result<MixedHessian> {
        let r = self.check_points(x, y)?;
        let d = self.dim;
        let beta = self.beta;
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let m = match self.family {
            PhaseFamily::BilinearTest => DMatrix::identity(d, d),
            PhaseFamily::CurvePhase => {
                let zz = z[0];
                let k = self.k as i32;
                let v = -beta * (beta + 1.0) * pow_neg(r, beta + 2.0)
                    + self.mu * f64::from(k * (k - 1)) * zz.powi(k - 2);
                DMatrix::from_element(1, 1, v)
            }
            _ => {
                let q = beta * pow_neg(r, beta + 2.0);
                let mut m = DMatrix::from_fn(d, d, |i, j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    q * (id - (beta + 2.0) * z[i] * z[j] / (r * r))
                });
                let n = d / 2;
                match self.family {
                    PhaseFamily::HeisenbergCondI => {
                        add_twist(&mut m, n, self.mu);
                        let s = self.perturbation_scale;
                        let kap = self.kappa;
                        let c = self.mu * s * kap * r.powf(kap - 2.0);
                        for i in 0..d {
                            for j in 0..d {
                                let id = if i == j { 1.0 } else { 0.0 };
                                m[(i, j)] += c * (id + (kap - 2.0) * z[i] * z[j] / (r * r));
                            }
                        }
                    }
                    PhaseFamily::HeisenbergCondII => {
                        add_twist(&mut m, n, self.mu);
                        let b = self.b_or_zero();
                        for i in 0..d {
                            m[(i, i)] += 2.0 * self.mu * b.diag(i);
                        }
                        if self.rho != 0.0 {
                            let c = 3.0 * self.mu * self.rho * r;
                            for i in 0..d {
                                for j in 0..d {
                                    let id = if i == j { 1.0 } else { 0.0 };
                                    m[(i, j)] += c * (id + z[i] * z[j] / (r * r));
                                }
                            }
                        }
                    }
                    _ => {}
                }
                m
            }
        };
        Ok(MixedHessian { entries: m })
    }
}

fn add_twist(m: &mut DMatrix<f64>, n: usize, mu: f64) {
    for i in 0..n {
        m[(i, i + n)] += 2.0 * mu;
        m[(i + n, i)] -= 2.0 * mu;
    }
}

impl Phase for PhaseSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            PhaseFamily::BilinearTest => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            PhaseFamily::RadialSingular => pow_neg(norm_diff(x, y), self.beta),
            PhaseFamily::HeisenbergCondI => {
                let r = norm_diff(x, y);
                pow_neg(r, self.beta)
                    + self.mu
                        * (2.0 * symplectic_form(x, y)
                            - self.perturbation_scale * r.powf(self.kappa))
            }
            PhaseFamily::HeisenbergCondII => {
                let r = norm_diff(x, y);
                let mut quad = 0.0;
                if let Some(b) = &self.b {
                    for i in 0..x.len() {
                        let z = x[i] - y[i];
                        quad += b.diag(i) * z * z;
                    }
                }
                pow_neg(r, self.beta)
                    + self.mu * (2.0 * symplectic_form(x, y) - quad - self.rho * r * r * r)
            }
            PhaseFamily::CurvePhase => {
                let z = x[0] - y[0];
                pow_neg(z.abs(), self.beta) - self.mu * z.powi(self.k as i32)
            }
        }
    }

    fn grad_x(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.family {
            PhaseFamily::BilinearTest => out.copy_from_slice(y),
            PhaseFamily::CurvePhase => {
                let z = x[0] - y[0];
                let r = z.abs();
                let k = self.k as i32;
                out[0] = -self.beta * pow_neg(r, self.beta + 2.0) * z
                    - self.mu * f64::from(k) * z.powi(k - 1);
            }
            _ => {
                let r = norm_diff(x, y);
                let c = -self.beta * pow_neg(r, self.beta + 2.0);
                for i in 0..d {
                    out[i] = c * (x[i] - y[i]);
                }
                let n = d / 2;
                match self.family {
                    PhaseFamily::HeisenbergCondI => {
                        let s = self.mu * self.perturbation_scale * self.kappa
                            * r.powf(self.kappa - 2.0);
                        for i in 0..n {
                            out[i] += 2.0 * self.mu * y[i + n];
                            out[i + n] -= 2.0 * self.mu * y[i];
                        }
                        for i in 0..d {
                            out[i] -= s * (x[i] - y[i]);
                        }
                    }
                    PhaseFamily::HeisenbergCondII => {
                        for i in 0..n {
                            out[i] += 2.0 * self.mu * y[i + n];
                            out[i + n] -= 2.0 * self.mu * y[i];
                        }
                        let bq = self.b.as_ref();
                        for i in 0..d {
                            let z = x[i] - y[i];
                            let bi = bq.map_or(0.0, |b| b.diag(i));
                            out[i] -= self.mu * (2.0 * bi * z + 3.0 * self.rho * r * z);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn grad_y(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.family {
            PhaseFamily::BilinearTest => out.copy_from_slice(x),
            PhaseFamily::CurvePhase => {
                self.grad_x(x, y, out);
                out[0] = -out[0];
            }
            _ => {
                let r = norm_diff(x, y);
                let c = self.beta * pow_neg(r, self.beta + 2.0);
                for i in 0..d {
                    out[i] = c * (x[i] - y[i]);
                }
                let n = d / 2;
                match self.family {
                    PhaseFamily::HeisenbergCondI => {
                        let s = self.mu * self.perturbation_scale * self.kappa
                            * r.powf(self.kappa - 2.0);
                        // grad_y (2 x^t J y) = 2 J^t x = -2 J x
                        for i in 0..n {
                            out[i] -= 2.0 * self.mu * x[i + n];
                            out[i + n] += 2.0 * self.mu * x[i];
                        }
                        for i in 0..d {
                            out[i] += s * (x[i] - y[i]);
                        }
                    }
                    PhaseFamily::HeisenbergCondII => {
                        for i in 0..n {
                            out[i] -= 2.0 * self.mu * x[i + n];
                            out[i + n] += 2.0 * self.mu * x[i];
                        }
                        let bq = self.b.as_ref();
                        for i in 0..d {
                            let z = x[i] - y[i];
                            let bi = bq.map_or(0.0, |b| b.diag(i));
                            out[i] += self.mu * (2.0 * bi * z + 3.0 * self.rho * r * z);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn is_singular(&self) -> bool {
        self.family != PhaseFamily::BilinearTest
    }

    fn difference_split(&self) -> Option<DifferenceSplit> {
        match (self.dim, self.family) {
            (1, PhaseFamily::BilinearTest) => Some(DifferenceSplit::Bilinear),
            (1, PhaseFamily::RadialSingular | PhaseFamily::CurvePhase) => Some(DifferenceSplit::Pure),
            _ => None,
        }
    }
}

/// The matrix `d^2 Phi / dx_k dy_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedHessian {
    pub entries: DMatrix<f64>,
}

impl MixedHessian {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Determinant by LU factorization.
    pub fn determinant(&self) -> f64 {
        self.entries.clone().lu().determinant()
    }

    /// Largest entrywise relative deviation, scaled by the largest entry of `self`.
    pub fn max_rel_diff(&self, other: &MixedHessian) -> f64 {
        let scale = self.entries.amax().max(f64::MIN_POSITIVE);
        (&self.entries - &other.entries).amax() / scale
    }
}

/// Default finite-difference step: `1e-4` times the local length scale.
///
/// The local scale is `|x - y|` for singular phases and 1 otherwise; a second
/// mixed difference loses about `eps / h^2` to round-off, so steps much below
/// `1e-4` stop improving accuracy in double precision.
pub fn default_fd_step(phase: &PhaseSpec, x: &[f64], y: &[f64]) -> f64 {
    let scale = if phase.is_singular() {
        norm_diff(x, y).min(1.0)
    } else {
        1.0
    };
    1e-4 * scale
}

/// Four-point central-difference mixed Hessian, `O(step^2)` accurate.
pub fn fd_mixed_hessian(phase: &PhaseSpec, x: &[f64], y: &[f64], step: f64) -> Result<MixedHessian> {
    let r = phase.check_points(x, y)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if phase.is_singular() && step > r / 10.0 {
        return Err(Error::InvalidParameter(format!(
            "step {step} too large for |x - y| = {r} (limit |x - y| / 10)"
        )));
    }
    let d = phase.dim;
    let mut xp = x.to_vec();
    let mut yp = y.to_vec();
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            let mut acc = 0.0;
            for (sx, sy, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                xp[k] = x[k] + sx * step;
                yp[l] = y[l] + sy * step;
                acc += sign * phase.value(&xp, &yp);
            }
            xp[k] = x[k];
            yp[l] = y[l];
            m[(k, l)] = acc / (4.0 * step * step);
        }
    }
    Ok(MixedHessian { entries: m })
}

/// Closed form `det (Phi_1)_xy = -(beta+1) beta^{2n} r^{-2n(beta+2)}` for
/// `Phi_1 = |x-y|^-beta` on `R^{2n}`.
pub fn fefferman_det(beta: f64, n: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    if beta == 0.0 || beta == -1.0 || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "the determinant is degenerate for beta = {beta}"
        )));
    }
    let d = 2 * n as i32;
    Ok(-(beta + 1.0) * beta.powi(d) * r.powf(-f64::from(d) * (beta + 2.0)))
}

/// Closed form of `det Phi_xy` for `|x-y|^-beta + 2 x^t J y - (x-y)^t B (x-y)`:
///
/// `-(beta^2 (beta+1) Q^2 + 2 beta^2 b_1 Q - 4 b_1^2 - 4) prod_{i>=2} ((beta Q + 2 b_i)^2 + 4)`
/// with `Q = r^-(beta+2)`, for `u` in the `(e_1, e_{n+1})` plane (any `u` when
/// all `b_i` agree).
pub fn heisenberg_det(beta: f64, b: &DiagonalB, r: f64) -> Result<f64> {
    heisenberg_det_coupled(beta, b, r, 1.0)
}

/// [`heisenberg_det`] with the twist and quadratic scaled by `mu`.
///
/// Equals `mu^{2n}` times the `mu = 1` formula at `Q / mu`, and reduces to
/// [`fefferman_det`] at `mu = 0`.
pub fn heisenberg_det_coupled(beta: f64, b: &DiagonalB, r: f64, mu: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {r}")));
    }
    check_beta(beta)?;
    let q = pow_neg(r, beta + 2.0);
    let bs = b.entries();
    let b1 = bs[0];
    let first = (-beta * (beta + 1.0) * q + 2.0 * mu * b1) * (beta * q + 2.0 * mu * b1)
        + 4.0 * mu * mu;
    let rest: f64 = bs[1..]
        .iter()
        .map(|bi| {
            let c = beta * q + 2.0 * mu * bi;
            c * c + 4.0 * mu * mu
        })
        .product();
    Ok(first * rest)
}

/// Direction-dependent form of [`heisenberg_det_coupled`] for arbitrary `z = x - y`.
///
/// With `K = beta Q I + mu (2J + 2B)` the mixed Hessian is
/// `K - beta (beta+2) Q u u^t`, and the rank-one update gives
/// `det K (1 - beta (beta+2) Q u^t K^-1 u)`; `K` is block diagonal over the
/// coordinate pairs `(i, i+n)`.
pub fn heisenberg_det_at(beta: f64, b: &DiagonalB, mu: f64, z: &[f64]) -> Result<f64> {
    check_dim(2 * b.n(), z.len())?;
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(r > 0.0) {
        return Err(Error::Domain("x = y".into()));
    }
    check_beta(beta)?;
    let n = b.n();
    let q = pow_neg(r, beta + 2.0);
    let mut det_k = 1.0;
    let mut quad = 0.0;
    for (i, &bi) in b.entries().iter().enumerate() {
        let c = beta * q + 2.0 * mu * bi;
        let s = c * c + 4.0 * mu * mu;
        let w = (z[i] * z[i] + z[i + n] * z[i + n]) / (r * r);
        det_k *= s;
        quad += c * w / s;
    }
    Ok(det_k * (1.0 - beta * (beta + 2.0) * q * quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, d: usize, rmin: f64) -> (Vec<f64>, Vec<f64>) {
        loop {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if norm_diff(&x, &y) > rmin {
                return (x, y);
            }
        }
    }

    fn catalog(beta: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<PhaseSpec> {
        let b = DiagonalB::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        vec![
            PhaseSpec::bilinear(2 * n).unwrap(),
            PhaseSpec::radial(beta, 2 * n).unwrap(),
            PhaseSpec::heisenberg_cond_i(beta, n, 3.5, 0.7).unwrap(),
            PhaseSpec::heisenberg_cond_ii(beta, b.clone(), 1.3).unwrap(),
            PhaseSpec::heisenberg_cond_ii(beta, b, 0.9).unwrap().with_remainder(0.4),
            PhaseSpec::curve(beta, 2, 1.0).unwrap(),
            PhaseSpec::curve(beta, 3, 0.5).unwrap(),
        ]
    }

    #[test]
    fn radial_value() {
        let p = PhaseSpec::radial(1.0, 2).unwrap();
        assert_eq!(p.eval(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn curve_value_by_hand() {
        let p = PhaseSpec::curve(1.0, 2, 1.0).unwrap();
        assert_eq!(p.eval(&[1.5], &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn cond_ii_without_coupling_is_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = DiagonalB::new(vec![0.3, -0.8]).unwrap();
        let p = PhaseSpec::heisenberg_cond_ii(1.5, b, 0.0).unwrap();
        let q = PhaseSpec::radial(1.5, 4).unwrap();
        for _ in 0..100 {
            let (x, y) = random_pair(&mut rng, 4, 1e-3);
            assert_eq!(p.eval(&x, &y).unwrap(), q.eval(&x, &y).unwrap());
        }
    }

    #[test]
    fn singular_families_reject_diagonal() {
        let p = PhaseSpec::radial(1.0, 2).unwrap();
        assert!(matches!(p.eval(&[0.1, 0.2], &[0.1, 0.2]), Err(Error::Domain(_))));
        assert!(p.mixed_hessian(&[0.1, 0.2], &[0.1, 0.2]).is_err());
        let bl = PhaseSpec::bilinear(2).unwrap();
        assert_eq!(bl.eval(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.1 * 0.1 + 0.2 * 0.2);
        assert!(p.eval(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn constructor_preconditions() {
        assert!(PhaseSpec::radial(-1.0, 2).is_err());
        assert!(PhaseSpec::radial(0.0, 2).is_err());
        assert!(PhaseSpec::heisenberg_cond_i(1.0, 1, 2.0, 1.0).is_err());
        assert!(PhaseSpec::curve(1.0, 1, 1.0).is_err());
        assert!(PhaseSpec::curve(1.0, 2, -1.0).is_err());
    }

    #[test]
    fn radial_hessian_eigenstructure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &beta in &[0.5, 1.0, 2.0] {
            let p = PhaseSpec::radial(beta, 4).unwrap();
            for _ in 0..20 {
                let (x, y) = random_pair(&mut rng, 4, 0.1);
                let h = p.mixed_hessian(&x, &y).unwrap().entries;
                assert!((&h - h.transpose()).amax() < 1e-12 * h.amax());
                let r = norm_diff(&x, &y);
                let u = nalgebra::DVector::from_iterator(4, x.iter().zip(&y).map(|(a, b)| (a - b) / r));
                let hu = &h * &u;
                let expect_u = -beta * (beta + 1.0) * r.powf(-(beta + 2.0));
                assert!((&hu - &u * expect_u).amax() < 1e-10 * expect_u.abs());
                // a vector orthogonal to u
                let mut v = nalgebra::DVector::from_vec(vec![u[1], -u[0], 0.0, 0.0]);
                v /= v.norm();
                let hv = &h * &v;
                let expect_v = beta * r.powf(-(beta + 2.0));
                assert!((&hv - &v * expect_v).amax() < 1e-10 * expect_v.abs());
            }
        }
    }

    #[test]
    fn bilinear_hessian_is_identity() {
        let p = PhaseSpec::bilinear(3).unwrap();
        let h = p.mixed_hessian(&[0.1, 0.2, 0.3], &[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(h.entries, DMatrix::identity(3, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (x, y) = random_pair(&mut rng, 3, 0.0);
            let fd = fd_mixed_hessian(&p, &x, &y, 1.0 / 16.0).unwrap();
            assert!((fd.entries - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &beta in &[0.5, 1.0, 2.0] {
            for n in 1..=2 {
                for p in catalog(beta, n, &mut rng) {
                    for _ in 0..100 {
                        let (x, y) = random_pair(&mut rng, p.dim, 0.2);
                        let (x, y) = (&x[..p.dim], &y[..p.dim]);
                        if norm_diff(x, y) < 0.2 {
                            continue;
                        }
                        let a = p.mixed_hessian(x, y).unwrap();
                        let step = default_fd_step(&p, x, y);
                        let f = fd_mixed_hessian(&p, x, y, step).unwrap();
                        // scale by the singular term so near-degenerate points are not ill-posed
                        let r = norm_diff(x, y);
                        let scale = a.entries.amax().max(beta * r.powf(-beta - 2.0));
                        let err = (&a.entries - &f.entries).amax() / scale;
                        assert!(err < 1e-6, "{:?} beta={beta} err={err}", p.family);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for p in catalog(1.0, 2, &mut rng) {
            for _ in 0..50 {
                let (x, y) = random_pair(&mut rng, p.dim, 0.2);
                let (x, y) = (&x[..p.dim], &y[..p.dim]);
                if norm_diff(x, y) < 0.2 {
                    continue;
                }
                let mut gx = vec![0.0; p.dim];
                let mut gy = vec![0.0; p.dim];
                p.grad_x(x, y, &mut gx);
                p.grad_y(x, y, &mut gy);
                let h = 1e-6;
                for k in 0..p.dim {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[k] += h;
                    xm[k] -= h;
                    let fdx = (p.value(&xp, y) - p.value(&xm, y)) / (2.0 * h);
                    let mut yp = y.to_vec();
                    let mut ym = y.to_vec();
                    yp[k] += h;
                    ym[k] -= h;
                    let fdy = (p.value(x, &yp) - p.value(x, &ym)) / (2.0 * h);
                    assert!((fdx - gx[k]).abs() < 1e-6 * (1.0 + gx[k].abs()), "{:?}", p.family);
                    assert!((fdy - gy[k]).abs() < 1e-6 * (1.0 + gy[k].abs()), "{:?}", p.family);
                }
            }
        }
    }

    #[test]
    fn fd_step_validation() {
        let p = PhaseSpec::radial(1.0, 2).unwrap();
        let x = [0.0, 0.0];
        let y = [0.5, 0.0];
        assert!(fd_mixed_hessian(&p, &x, &y, 0.06).is_err());
        assert!(fd_mixed_hessian(&p, &x, &y, 0.0).is_err());
        assert!(fd_mixed_hessian(&p, &x, &y, 0.04).is_ok());
    }

    #[test]
    fn fd_convergence_order_two() {
        let p = PhaseSpec::radial(1.0, 2).unwrap();
        let x = [0.3, -0.2];
        let y = [-0.4, 0.5];
        let exact = p.mixed_hessian(&x, &y).unwrap();
        let err = |h: f64| {
            (fd_mixed_hessian(&p, &x, &y, h).unwrap().entries - &exact.entries).amax()
        };
        let (e1, e2, e3) = (err(0.04), err(0.02), err(0.01));
        let o1 = (e1 / e2).log2();
        let o2 = (e2 / e3).log2();
        assert!((o1 - 2.0).abs() < 0.15 && (o2 - 2.0).abs() < 0.15, "{o1} {o2}");
    }

    #[test]
    fn fefferman_values() {
        assert_eq!(fefferman_det(1.0, 1, 1.0).unwrap(), -2.0);
        assert_eq!(fefferman_det(2.0, 1, 1.0).unwrap(), -12.0);
        assert_eq!(fefferman_det(2.0, 2, 1.0).unwrap(), -48.0);
        assert!(fefferman_det(1.0, 1, 0.0).is_err());
        assert!(fefferman_det(-1.0, 1, 1.0).is_err());
        for i in 1..=40 {
            let beta = 0.1 * f64::from(i);
            for n in 1..=3 {
                assert!(fefferman_det(beta, n, 0.7).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn fefferman_matches_generic_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for &beta in &[0.5, 1.0, 2.0] {
            for n in 1..=2 {
                let p = PhaseSpec::radial(beta, 2 * n).unwrap();
                for _ in 0..100 {
                    let (x, y) = random_pair(&mut rng, 2 * n, 0.05);
                    let det = p.mixed_hessian(&x, &y).unwrap().determinant();
                    let closed = fefferman_det(beta, n, norm_diff(&x, &y)).unwrap();
                    assert!(((det - closed) / closed).abs() < 1e-10, "{det} vs {closed}");
                }
            }
        }
    }

    #[test]
    fn heisenberg_det_special_values() {
        // Q -> 0 limit: 4^n
        for n in 1..=3 {
            let b = DiagonalB::zeros(n);
            let v = heisenberg_det(1.0, &b, 1e6).unwrap();
            assert!((v - 4f64.powi(n as i32)).abs() < 1e-9, "{v}");
        }
        // n = 1, beta = 1, b = 0: zero at Q = sqrt 2
        let b = DiagonalB::zeros(1);
        let r = 2f64.sqrt().powf(-1.0 / 3.0);
        assert!(heisenberg_det(1.0, &b, r).unwrap().abs() < 1e-12);
        assert!(heisenberg_det(1.0, &b, 0.0).is_err());
    }

    #[test]
    fn heisenberg_det_matches_generic_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for &beta in &[0.5, 1.0, 2.0] {
            for n in 1..=2 {
                for _ in 0..100 {
                    let bv: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
                    let b = DiagonalB::new(bv).unwrap();
                    let p = PhaseSpec::heisenberg_cond_ii(beta, b.clone(), 1.0).unwrap();
                    // u in the (e_1, e_{n+1}) plane
                    let r = rng.gen_range(0.3..2.0);
                    let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let mut y = x.clone();
                    y[0] -= r * th.cos();
                    y[n] -= r * th.sin();
                    let det = p.mixed_hessian(&x, &y).unwrap().determinant();
                    let closed = heisenberg_det(beta, &b, norm_diff(&x, &y)).unwrap();
                    let scale = det.abs().max(closed.abs()).max(1.0);
                    assert!((det - closed).abs() / scale < 1e-8, "{det} vs {closed}");
                    // arbitrary direction
                    let (x, y) = random_pair(&mut rng, 2 * n, 0.3);
                    let det = p.mixed_hessian(&x, &y).unwrap().determinant();
                    let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
                    let general = heisenberg_det_at(beta, &b, 1.0, &z).unwrap();
                    let scale = det.abs().max(1.0);
                    assert!((det - general).abs() / scale < 1e-8, "{det} vs {general}");
                }
            }
        }
    }

    #[test]
    fn coupled_det_degenerates_to_fefferman() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(1..=3);
            let beta = rng.gen_range(0.3..2.5);
            let r = rng.gen_range(0.2..2.0);
            let b = DiagonalB::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let a = heisenberg_det_coupled(beta, &b, r, 0.0).unwrap();
            let f = fefferman_det(beta, n, r).unwrap();
            assert!(((a - f) / f).abs() < 1e-12);
            let mu = rng.gen_range(0.1..3.0);
            let coupled = heisenberg_det_coupled(beta, &b, r, mu).unwrap();
            let p = PhaseSpec::heisenberg_cond_ii(beta, b.clone(), mu).unwrap();
            let mut x = vec![0.0; 2 * n];
            x[0] = r;
            let y = vec![0.0; 2 * n];
            let det = p.mixed_hessian(&x, &y).unwrap().determinant();
            assert!((det - coupled).abs() / det.abs().max(1.0) < 1e-8);
        }
    }

    #[test]
    fn cond_i_perturbation_scales_like_r_power() {
        // |H(cond I) - H(twist + radial)| ~ C r^(kappa - 2)
        let kappa = 3.5;
        let ci = PhaseSpec::heisenberg_cond_i(1.0, 1, kappa, 1.0).unwrap();
        let reference = PhaseSpec::heisenberg_cond_ii(1.0, DiagonalB::zeros(1), 1.0).unwrap();
        let mut logs = Vec::new();
        for i in 0..8 {
            let r = 0.5 * 0.5f64.powi(i);
            let x = [r * 0.6, r * 0.8];
            let y = [0.0, 0.0];
            let d = ci.mixed_hessian(&x, &y).unwrap().entries
                - reference.mixed_hessian(&x, &y).unwrap().entries;
            let norm = d.singular_values().max();
            logs.push((r.ln(), norm.ln()));
        }
        let slope = crate::opnorm::fit_line(&logs).unwrap().slope;
        assert!((slope - (kappa - 2.0)).abs() < 0.1, "{slope}");
    }
}

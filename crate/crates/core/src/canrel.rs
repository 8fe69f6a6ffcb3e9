//! Fold analysis of the canonical relation of a phase: the singular variety
//! where `det Phi_xy` vanishes, the corank there, first-order vanishing of the
//! determinant and transversality of the kernel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::phase::{heisenberg_det_coupled, PhaseFamily, PhaseSpec};
use crate::geometry::DiagonalB;

/// Relative singular-value threshold below which a direction counts as kernel.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Floor for `|d det / ds|` relative to `beta^{2n} r^{-2n(beta+2)}`.
pub const FIRST_ORDER_FLOOR: f64 = 1e-3;

/// The sphere `|x - y| = radius` on which the determinant vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularVariety {
    pub radius: f64,
    /// `radius^{-(beta+2)}`.
    pub q_root: f64,
    pub exists: bool,
}

/// Positive root `Q` of `beta^2 (beta+1) Q^2 + 2 beta^2 b1 Q = 4 b1^2 + 4`
/// and the radius `Q^{-1/(beta+2)}`.
pub fn singular_radius(beta: f64, b1: f64) -> Result<SingularVariety> {
    singular_radius_coupled(beta, b1, 1.0)
}

/// [`singular_radius`] with twist and quadratic scaled by `mu`; the root scales
/// as `Q(mu) = mu Q(1)`.
pub fn singular_radius_coupled(beta: f64, b1: f64, mu: f64) -> Result<SingularVariety> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) || !b1.is_finite() {
        return Err(Error::InvalidParameter(format!("bad coupling mu = {mu} or b1 = {b1}")));
    }
    if mu == 0.0 {
        return Ok(SingularVariety { radius: f64::NAN, q_root: f64::NAN, exists: false });
    }
    let a = beta * beta * (beta + 1.0);
    let b = 2.0 * beta * beta * b1;
    let c = -(4.0 * b1 * b1 + 4.0);
    // a > 0 > c: exactly one positive root; pick the cancellation-free form
    let disc = (b * b - 4.0 * a * c).sqrt();
    let q = if b >= 0.0 { 2.0 * c / (-b - disc) } else { (-b + disc) / (2.0 * a) };
    assert!(q > 0.0 && q.is_finite(), "quadratic with a > 0 > c must have a positive root");
    let q = q * mu;
    Ok(SingularVariety { radius: q.powf(-1.0 / (beta + 2.0)), q_root: q, exists: true })
}

fn det_at(phase: &PhaseSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(phase.mixed_hessian(x, y)?.determinant())
}

/// Gradient of `(x, y) -> det Phi_xy(x, y)` in `R^{2d}` by central differences
/// on the analytic determinant.
pub fn det_gradient(phase: &PhaseSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dim(phase.dim, x.len())?;
    check_dim(phase.dim, y.len())?;
    let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::Domain("det_gradient at x = y".into()));
    }
    let h = 1e-5 * r;
    let d = phase.dim;
    let mut g = vec![0.0; 2 * d];
    let mut xp = x.to_vec();
    let mut yp = y.to_vec();
    for k in 0..d {
        xp[k] = x[k] + h;
        let a = det_at(phase, &xp, y)?;
        xp[k] = x[k] - h;
        let b = det_at(phase, &xp, y)?;
        xp[k] = x[k];
        g[k] = (a - b) / (2.0 * h);
        yp[k] = y[k] + h;
        let a = det_at(phase, x, &yp)?;
        yp[k] = y[k] - h;
        let b = det_at(phase, x, &yp)?;
        yp[k] = y[k];
        g[d + k] = (a - b) / (2.0 * h);
    }
    Ok(g)
}

/// Verdicts of the fold conditions at sampled points of the singular variety.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub exists: bool,
    /// Variety radius of the unperturbed model.
    pub radius: f64,
    pub points_tested: usize,
    /// Rank of `Phi_xy` is exactly `d - 1` at every point.
    pub corank_ok: bool,
    /// `|d det / ds|` along `(u, -u)` exceeds the first-order floor everywhere.
    pub first_order_ok: bool,
    /// `|u . w| >= theta` for every unit kernel vector `w`.
    pub transversality_ok: bool,
    pub min_margin: f64,
    /// Smallest `|d det / ds|` divided by `beta^{2n} r^{-2n(beta+2)}`.
    pub min_first_order: f64,
    /// Largest angle (radians) between the determinant gradient and `(u, -u)`.
    pub det_gradient_direction_error: f64,
    pub theta: f64,
}

impl FoldReport {
    pub fn all_ok(&self) -> bool {
        !self.exists || (self.corank_ok && self.first_order_ok && self.transversality_ok)
    }

    fn empty(theta: f64) -> Self {
        Self {
            exists: false,
            radius: f64::NAN,
            points_tested: 0,
            corank_ok: true,
            first_order_ok: true,
            transversality_ok: true,
            min_margin: f64::NAN,
            min_first_order: f64::NAN,
            det_gradient_direction_error: f64::NAN,
            theta,
        }
    }
}

/// Root of `s -> det Phi_xy(x, x - s u)` near `guess`, by bracketing and bisection.
fn radial_root(phase: &PhaseSpec, x: &[f64], u: &[f64], guess: f64) -> Result<f64> {
    let f = |s: f64| -> Result<f64> {
        let y: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - s * b).collect();
        det_at(phase, x, &y)
    };
    let mut lo = guess;
    let mut hi = guess;
    let f0 = f(guess)?;
    if f0 == 0.0 {
        return Ok(guess);
    }
    let mut found = false;
    for k in 1..=40 {
        let step = 1.0 + 0.02 * k as f64;
        let (a, b) = (guess / step, guess * step);
        if f(a)?.signum() != f0.signum() {
            lo = a;
            hi = guess;
            found = true;
            break;
        }
        if f(b)?.signum() != f0.signum() {
            lo = guess;
            hi = b;
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Domain(format!("no sign change of det near radius {guess}")));
    }
    let flo = f(lo)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn unit_random(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Check the fold conditions at `samples` points `(x, x - r u)` of the
/// singular variety with `x` in the unit ball and `u` a random unit vector.
///
/// For unequal `b_i` the directions are drawn in the `(e_1, e_{n+1})` plane,
/// where the closed-form radius applies; the radius is then refined along each
/// ray so that perturbed phases are located on their own variety.
pub fn check_fold(phase: &PhaseSpec, samples: usize, theta: f64, seed: u64) -> Result<FoldReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
    }
    let (b, variety) = match phase.family {
        PhaseFamily::HeisenbergCondII | PhaseFamily::HeisenbergCondI => {
            let b = phase.b.clone().unwrap_or_else(|| DiagonalB::zeros(phase.n()));
            let v = singular_radius_coupled(phase.beta, b.entries()[0], phase.mu)?;
            (b, v)
        }
        _ => return Ok(FoldReport::empty(theta)),
    };
    if !variety.exists {
        return Ok(FoldReport::empty(theta));
    }
    let d = phase.dim;
    let n = phase.n();
    let equal_b = b.entries().iter().all(|&v| v == b.entries()[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FoldReport {
        exists: true,
        radius: variety.radius,
        points_tested: 0,
        corank_ok: true,
        first_order_ok: true,
        transversality_ok: true,
        min_margin: f64::INFINITY,
        min_first_order: f64::INFINITY,
        det_gradient_direction_error: 0.0,
        theta,
    };
    for _ in 0..samples {
        let x: Vec<f64> = {
            let dir = unit_random(&mut rng, d);
            let rad: f64 = rng.gen_range(0.0f64..1.0).powf(1.0 / d as f64);
            dir.into_iter().map(|v| v * rad).collect()
        };
        let u = if equal_b {
            unit_random(&mut rng, d)
        } else {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut u = vec![0.0; d];
            u[0] = a.cos();
            u[n] = a.sin();
            u
        };
        let r = radial_root(phase, &x, &u, variety.radius)?;
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - r * b).collect();
        report.points_tested += 1;

        let h = phase.mixed_hessian(&x, &y)?.entries;
        let svd = h.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let zeros = svd.singular_values.iter().filter(|&&s| s < RANK_THRESHOLD * smax).count();
        if zeros != 1 {
            report.corank_ok = false;
        }

        // derivative of det along (x + s u / 2, y - s u / 2), i.e. d det / d|x - y|
        let step = 1e-6 * r;
        let shift = |s: f64| -> Result<f64> {
            let xs: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + 0.5 * s * b).collect();
            let ys: Vec<f64> = y.iter().zip(&u).map(|(a, b)| a - 0.5 * s * b).collect();
            det_at(phase, &xs, &ys)
        };
        let ds = (shift(step)? - shift(-step)?) / (2.0 * step);
        let scale = phase.beta.powi(d as i32) * r.powf(-(d as f64) * (phase.beta + 2.0));
        let ratio = ds.abs() / scale;
        report.min_first_order = report.min_first_order.min(ratio);
        if ratio < FIRST_ORDER_FLOOR {
            report.first_order_ok = false;
        }

        // gradient direction against (u, -u)
        let g = det_gradient(phase, &x, &y)?;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let proj: f64 = (0..d).map(|k| g[k] * u[k] - g[d + k] * u[k]).sum::<f64>() / 2f64.sqrt();
        let cos = (proj.abs() / gn).min(1.0);
        let angle = cos.acos();
        report.det_gradient_direction_error = report.det_gradient_direction_error.max(angle);

        // kernel vectors of Phi_xy and of its transpose
        let uv = DVector::from_vec(u.clone());
        let kernel_margin = |m: &DMatrix<f64>| -> f64 {
            let s = m.clone().svd(false, true);
            let vt = s.v_t.expect("requested V^T");
            let smax = s.singular_values.max();
            let mut margin = f64::INFINITY;
            for (i, &sv) in s.singular_values.iter().enumerate() {
                if sv < RANK_THRESHOLD * smax {
                    let w = vt.row(i).transpose();
                    margin = margin.min(uv.dot(&w).abs() / w.norm());
                }
            }
            margin
        };
        let margin = kernel_margin(&h).min(kernel_margin(&h.transpose()));
        if margin.is_finite() {
            report.min_margin = report.min_margin.min(margin);
            if margin < theta {
                report.transversality_ok = false;
            }
        }
    }
    if !report.min_margin.is_finite() {
        // no kernel vector found anywhere; corank check has already failed
        report.transversality_ok = false;
    }
    Ok(report)
}

/// Curve-case fold: root `x0 > 0` of
/// `Phi''(x) = beta(beta+1) x^{-beta-2} - mu k(k-1) x^{k-2}` for
/// `Phi(x) = x^{-beta} - mu x^k`, and `Phi'''(x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFold {
    pub x0: f64,
    pub third_derivative: f64,
}

/// Default bracket `(0, 1000]`.
pub fn curve_fold_check(beta: f64, k: u32, mu: f64) -> Result<CurveFold> {
    curve_fold_check_in(beta, k, mu, 1e3)
}

pub fn curve_fold_check_in(beta: f64, k: u32, mu: f64, upper: f64) -> Result<CurveFold> {
    if !(beta > 0.0) || k < 2 || !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "curve fold needs beta > 0, k >= 2, mu >= 0; got {beta}, {k}, {mu}"
        )));
    }
    let kf = f64::from(k);
    let second = |x: f64| beta * (beta + 1.0) * x.powf(-beta - 2.0) - mu * kf * (kf - 1.0) * x.powi(k as i32 - 2);
    let third = |x: f64| {
        -beta * (beta + 1.0) * (beta + 2.0) * x.powf(-beta - 3.0)
            - mu * kf * (kf - 1.0) * (kf - 2.0) * x.powi(k as i32 - 3)
    };
    // Phi'' -> +inf as x -> 0
    let mut lo = upper;
    while second(lo) <= 0.0 || !second(lo).is_finite() {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::Domain("Phi'' has no positive lower bracket".into()));
        }
    }
    if lo == upper || second(upper) >= 0.0 {
        return Err(Error::Domain(format!("Phi'' has no sign change in (0, {upper}]")));
    }
    let mut hi = upper;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if second(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x0 = 0.5 * (lo + hi);
    Ok(CurveFold { x0, third_derivative: third(x0) })
}

/// `det Phi_xy` on the variety of the coupled model, for plug-back checks.
pub fn variety_residual(beta: f64, b: &DiagonalB, mu: f64) -> Result<f64> {
    let v = singular_radius_coupled(beta, b.entries()[0], mu)?;
    heisenberg_det_coupled(beta, b, v.radius, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::heisenberg_det;

    #[test]
    fn root_for_zero_b() {
        let v = singular_radius(1.0, 0.0).unwrap();
        assert!(v.exists);
        assert!((v.q_root - 2f64.sqrt()).abs() < 1e-14);
        assert!((v.radius - 2f64.powf(-1.0 / 6.0)).abs() < 1e-14);
        assert!((2.0 * v.q_root * v.q_root - 4.0).abs() < 1e-12);
    }

    #[test]
    fn root_for_unit_b() {
        let v = singular_radius(1.0, 1.0).unwrap();
        let q = v.q_root;
        assert!((q - (-1.0 + 17f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((2.0 * q * q + 2.0 * q - 8.0).abs() < 1e-12);
    }

    #[test]
    fn plug_back_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let beta = rng.gen_range(0.2..3.0);
            let b1 = rng.gen_range(-2.0..2.0);
            let b = DiagonalB::new(vec![b1]).unwrap();
            let v = singular_radius(beta, b1).unwrap();
            assert!(heisenberg_det(beta, &b, v.radius).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn coupled_root_scales_linearly() {
        let a = singular_radius(1.0, 0.0).unwrap();
        let b = singular_radius_coupled(1.0, 0.0, 0.25).unwrap();
        assert!((b.q_root - 0.25 * a.q_root).abs() < 1e-14);
        assert!(!singular_radius_coupled(1.0, 0.0, 0.0).unwrap().exists);
        assert!(singular_radius(-1.0, 0.0).is_err());
        let r = variety_residual(1.5, &DiagonalB::new(vec![0.3, -0.4]).unwrap(), 0.7).unwrap();
        assert!(r.abs() < 1e-10);
    }

    fn fold_phase(rho: f64) -> PhaseSpec {
        PhaseSpec::heisenberg_cond_ii(1.0, DiagonalB::zeros(1), 1.0).unwrap().with_remainder(rho)
    }

    #[test]
    fn fold_conditions_hold() {
        let rep = check_fold(&fold_phase(0.0), 50, 0.1, 1).unwrap();
        assert!(rep.exists && rep.points_tested == 50);
        assert!(rep.corank_ok && rep.first_order_ok && rep.transversality_ok, "{rep:?}");
        assert!((rep.min_margin - 1.0 / 3f64.sqrt()).abs() < 1e-6, "{}", rep.min_margin);
        assert!(rep.det_gradient_direction_error < 1e-4);
    }

    #[test]
    fn fold_stable_under_cubic_perturbation() {
        let rep = check_fold(&fold_phase(1e-3), 50, 0.1, 2).unwrap();
        assert!(rep.all_ok(), "{rep:?}");
    }

    #[test]
    fn fold_checks_over_parameter_grid() {
        for &beta in &[0.5, 1.0, 2.0] {
            for &b1 in &[-1.0, 0.0, 0.5] {
                for n in 1..=2 {
                    let p = PhaseSpec::heisenberg_cond_ii(beta, DiagonalB::new(vec![b1; n]).unwrap(), 1.0)
                        .unwrap();
                    let rep = check_fold(&p, 10, 0.1, 3).unwrap();
                    assert!(rep.corank_ok, "beta={beta} b1={b1} n={n} {rep:?}");
                    assert!(rep.first_order_ok, "beta={beta} b1={b1} n={n} {rep:?}");
                }
            }
        }
    }

    #[test]
    fn bilinear_has_no_variety() {
        let rep = check_fold(&PhaseSpec::bilinear(2).unwrap(), 5, 0.1, 0).unwrap();
        assert!(!rep.exists && rep.all_ok());
        assert!(check_fold(&PhaseSpec::bilinear(2).unwrap(), 0, 0.1, 0).is_err());
        assert!(check_fold(&PhaseSpec::bilinear(2).unwrap(), 1, 1.5, 0).is_err());
    }

    #[test]
    fn gradient_vanishes_where_scalar_factor_does() {
        // beta = 1, Q = 1 gives b1 = -(beta + 1) Q = -2 and r = 1
        let p = PhaseSpec::heisenberg_cond_ii(1.0, DiagonalB::new(vec![-2.0]).unwrap(), 1.0).unwrap();
        let x = [0.3, 0.1];
        let y = [0.3 - 0.6, 0.1 - 0.8];
        let g = det_gradient(&p, &x, &y).unwrap();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(gn < 1e-6, "{gn}");
        let det = p.mixed_hessian(&x, &y).unwrap().determinant();
        assert!(det >= 4.0, "{det}");
    }

    #[test]
    fn gradient_is_radial_off_variety() {
        let p = fold_phase(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let x: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let y: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            if r < 0.3 {
                continue;
            }
            let u = [(x[0] - y[0]) / r, (x[1] - y[1]) / r];
            let g = det_gradient(&p, &x, &y).unwrap();
            // component along (u, u)
            let along: f64 = (0..2).map(|k| g[k] * u[k] + g[2 + k] * u[k]).sum();
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(along.abs() < 1e-8 * gn.max(1.0), "{along}");
        }
    }

    #[test]
    fn curve_fold_quadratic() {
        let c = curve_fold_check(1.0, 2, 1.0).unwrap();
        assert!((c.x0 - 1.0).abs() < 1e-12);
        assert!((c.third_derivative + 6.0).abs() < 1e-10);
    }

    #[test]
    fn curve_fold_cubic() {
        let c = curve_fold_check(1.0, 3, 1.0).unwrap();
        let x0 = 3f64.powf(-0.25);
        assert!((c.x0 - x0).abs() < 1e-12);
        let expect = -6.0 * x0.powi(-4) - 6.0;
        assert!((c.third_derivative - expect).abs() < 1e-9);
        assert!(c.third_derivative != 0.0);
    }

    #[test]
    fn curve_fold_without_coupling() {
        assert!(matches!(curve_fold_check(1.0, 2, 0.0), Err(Error::Domain(_))));
        assert!(matches!(curve_fold_check(1.0, 2, 1e-12), Err(Error::Domain(_))));
        assert!(curve_fold_check(1.0, 1, 1.0).is_err());
    }
}

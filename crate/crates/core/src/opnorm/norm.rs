//! Largest singular value of a [`LinearMap`] by restarted Lanczos (default)
//! or power iteration on `A^* A`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opnorm::operator::LinearMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    Lanczos,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormOptions {
    /// Relative residual `|A^*A v - s^2 v| / s^2` to reach.
    pub tol: f64,
    /// Budget of `A^*A` applications.
    pub max_iter: usize,
    pub method: NormMethod,
    /// Krylov basis size before a restart.
    pub krylov_dim: usize,
    pub seed: u64,
    /// Lanczos also stops once the top Ritz value moves by at most
    /// `stall_tol` (relative) over a restart cycle; 0 disables. Tightly
    /// clustered top singular values stall the residual long after the
    /// value itself has settled.
    pub stall_tol: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, method: NormMethod::Lanczos, krylov_dim: 30, seed: 7, stall_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub norm: f64,
    /// `A^*A` applications used.
    pub iterations: usize,
    /// Final relative residual, computed explicitly.
    pub residual: f64,
    pub converged: bool,
}

impl NormEstimate {
    /// `Err(NotConverged)` unless converged.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, residual: self.residual })
        }
    }
}

fn zero(n: usize) -> Vec<Complex64> {
    vec![Complex64::new(0.0, 0.0); n]
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm2(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn normal_op(op: &dyn LinearMap, v: &[Complex64], mid: &mut [Complex64], out: &mut [Complex64]) {
    op.apply(v, mid);
    op.apply_adjoint(mid, out);
}

/// Spectral norm of `op`.
pub fn operator_norm(op: &dyn LinearMap, opts: &NormOptions) -> Result<NormEstimate> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", opts.tol)));
    }
    if !(opts.stall_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("stall_tol must be >= 0, got {}", opts.stall_tol)));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be positive".into()));
    }
    let n = op.cols();
    if n == 0 || op.rows() == 0 {
        return Ok(NormEstimate { norm: 0.0, iterations: 0, residual: 0.0, converged: true });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let s = norm2(&v);
    v.iter_mut().for_each(|x| *x /= s);
    match opts.method {
        NormMethod::Power => power(op, v, opts),
        NormMethod::Lanczos => lanczos(op, v, opts),
    }
}

fn power(op: &dyn LinearMap, mut v: Vec<Complex64>, opts: &NormOptions) -> Result<NormEstimate> {
    let n = v.len();
    let mut mid = zero(op.rows());
    let mut w = zero(n);
    let mut theta = 0.0;
    let mut res = f64::INFINITY;
    let mut it = 0;
    while it < opts.max_iter {
        normal_op(op, &v, &mut mid, &mut w);
        it += 1;
        theta = dot(&v, &w).re;
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(NormEstimate { norm: 0.0, iterations: it, residual: 0.0, converged: true });
        }
        res = w.iter().zip(&v).map(|(a, b)| (a - b * theta).norm_sqr()).sum::<f64>().sqrt() / theta;
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / wn);
        if res <= opts.tol {
            break;
        }
    }
    Ok(NormEstimate {
        norm: theta.max(0.0).sqrt(),
        iterations: it,
        residual: res,
        converged: res <= opts.tol,
    })
}

/// Thick-restart Lanczos on `A^*A`: the basis is extended by the
/// orthogonalized residual of the top Ritz pair and compressed to the
/// leading Ritz vectors when full. `A^*A V` is kept alongside `V`, so a
/// restart costs no extra applications.
fn lanczos(op: &dyn LinearMap, v: Vec<Complex64>, opts: &NormOptions) -> Result<NormEstimate> {
    let n = v.len();
    let m_max = opts.krylov_dim.max(4).min(n);
    let keep = (m_max / 3).max(1);
    let mut mid = zero(op.rows());
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m_max);
    let mut images: Vec<Vec<Complex64>> = Vec::with_capacity(m_max);
    let mut h: DMatrix<Complex64> = DMatrix::zeros(0, 0);
    let mut used = 0;
    let mut next = Some(v);
    let mut theta;
    let mut res;
    let mut cycle_start: Option<f64> = None;
    let mut stalled = false;
    loop {
        if let Some(q) = next.take() {
            let mut w = zero(n);
            normal_op(op, &q, &mut mid, &mut w);
            used += 1;
            let m = basis.len();
            let mut grown = DMatrix::zeros(m + 1, m + 1);
            grown.view_mut((0, 0), (m, m)).copy_from(&h);
            for (i, b) in basis.iter().enumerate() {
                let c = dot(b, &w);
                grown[(i, m)] = c;
                grown[(m, i)] = c.conj();
            }
            grown[(m, m)] = Complex64::new(dot(&q, &w).re, 0.0);
            h = grown;
            basis.push(q);
            images.push(w);
        }
        let m = basis.len();
        let eig = SymmetricEigen::new(h.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let top = order[0];
        theta = eig.eigenvalues[top];
        if theta <= 0.0 {
            let wn: f64 = images.iter().map(|w| norm2(w)).fold(0.0, f64::max);
            if wn == 0.0 {
                return Ok(NormEstimate { norm: 0.0, iterations: used, residual: 0.0, converged: true });
            }
        }
        let combine = |vs: &[Vec<Complex64>], k: usize| -> Vec<Complex64> {
            let mut out = zero(n);
            for (q, c) in vs.iter().zip(eig.eigenvectors.column(k).iter()) {
                for (o, x) in out.iter_mut().zip(q) {
                    *o += x * c;
                }
            }
            out
        };
        let x = combine(&basis, top);
        let mx = combine(&images, top);
        let mut r: Vec<Complex64> = mx.iter().zip(&x).map(|(a, b)| a - b * theta).collect();
        res = norm2(&r) / theta.abs().max(f64::MIN_POSITIVE);
        if res <= opts.tol || used >= opts.max_iter {
            break;
        }
        if m >= m_max {
            if let Some(prev) = cycle_start {
                if theta - prev <= opts.stall_tol * theta.abs() {
                    stalled = true;
                    break;
                }
            }
            cycle_start = Some(theta);
            let kept: Vec<usize> = order[..keep].to_vec();
            let nb: Vec<Vec<Complex64>> = kept.iter().map(|&k| combine(&basis, k)).collect();
            let ni: Vec<Vec<Complex64>> = kept.iter().map(|&k| combine(&images, k)).collect();
            basis = nb;
            images = ni;
            h = DMatrix::from_fn(keep, keep, |i, j| {
                if i == j {
                    Complex64::new(eig.eigenvalues[kept[i]], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
        }
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &r);
                for (a, b) in r.iter_mut().zip(q) {
                    *a -= b * c;
                }
            }
        }
        let rn = norm2(&r);
        if rn <= 1e-14 * theta.abs() {
            // invariant subspace: the Ritz value is exact
            res = 0.0;
            break;
        }
        next = Some(r.into_iter().map(|a| a / rn).collect());
    }
    Ok(NormEstimate {
        norm: theta.max(0.0).sqrt(),
        iterations: used,
        residual: res,
        converged: res <= opts.tol || stalled,
    })
}

/// Largest singular value by dense SVD.
pub fn dense_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

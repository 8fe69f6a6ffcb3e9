//! Real-variable structures of the Heisenberg group `H^n`.
//!
//! `H^n` is `R^{2n} x R` with product
//! `(x, t) . (y, s) = (x + y, t + s - 2 x^t J y)` where `J` is the standard
//! symplectic matrix with blocks `[[0, I_n], [-I_n, 0]]`. The term `2 x^t J y`
//! is called the twist. `J` and the diagonal matrix `B` are kept implicit; the
//! dense forms exist for determinant cross-checks and tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point of `R^{2n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vec2n {
    coords: Vec<f64>,
}

impl Vec2n {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "a point of R^2n needs a positive even number of coordinates, got {}",
                coords.len()
            )));
        }
        Ok(Self { coords })
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "n must be positive");
        Self {
            coords: vec![0.0; 2 * n],
        }
    }

    /// Half the ambient dimension.
    pub fn n(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_dim(self.coords.len(), other.coords.len())?;
        Ok(Self {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// `x^t J y` on raw coordinate slices of equal even length.
///
/// `J` acts as a block swap with sign, `(J y)_i = y_{i+n}`, `(J y)_{i+n} = -y_i`.
#[inline]
pub fn symplectic_form(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len() % 2, 0);
    let n = x.len() / 2;
    let mut acc = 0.0;
    for i in 0..n {
        acc += x[i] * y[i + n] - x[i + n] * y[i];
    }
    acc
}

/// The twist `2 x^t J y`. Antisymmetric in its arguments.
pub fn twist(x: &Vec2n, y: &Vec2n) -> Result<f64> {
    check_dim(x.coords.len(), y.coords.len())?;
    Ok(2.0 * symplectic_form(&x.coords, &y.coords))
}

/// An element `(x, t)` of `H^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergElement {
    pub x: Vec2n,
    pub t: f64,
}

impl HeisenbergElement {
    pub fn new(x: Vec2n, t: f64) -> Self {
        Self { x, t }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            x: Vec2n::zeros(n),
            t: 0.0,
        }
    }
}

/// Group product `(p.x + q.x, p.t + q.t - 2 p.x^t J q.x)`.
pub fn group_mul(p: &HeisenbergElement, q: &HeisenbergElement) -> Result<HeisenbergElement> {
    let x = p.x.zip_with(&q.x, |a, b| a + b)?;
    let t = q.t + p.t - twist(&p.x, &q.x)?;
    Ok(HeisenbergElement { x, t })
}

/// Inverse `(x, t)^{-1} = (-x, -t)`.
pub fn group_inv(p: &HeisenbergElement) -> HeisenbergElement {
    HeisenbergElement {
        x: Vec2n {
            coords: p.x.coords.iter().map(|v| -v).collect(),
        },
        t: -p.t,
    }
}

/// The standard symplectic matrix on `R^{2n}`, stored by `n` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymplecticJ {
    pub n: usize,
}

impl SymplecticJ {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "n must be positive");
        Self { n }
    }

    /// `J v` by coordinate swap.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(v.len(), 2 * n);
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = v[i + n];
            out[i + n] = -v[i];
        }
        out
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            if r < n && c == r + n {
                1.0
            } else if r >= n && c + n == r {
                -1.0
            } else {
                0.0
            }
        })
    }
}

/// Diagonal matrix `B = diag(b_1..b_n, b_1..b_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalB {
    b: Vec<f64>,
}

impl DiagonalB {
    pub fn new(b: Vec<f64>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::InvalidParameter("B needs at least one entry".into()));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("B entries must be finite".into()));
        }
        Ok(Self { b })
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "n must be positive");
        Self { b: vec![0.0; n] }
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// The `n` distinct entries `b_1..b_n`.
    pub fn entries(&self) -> &[f64] {
        &self.b
    }

    /// Diagonal entry `i` of the `2n x 2n` matrix.
    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.b[i % self.b.len()]
    }

    /// `z^t B z`.
    #[inline]
    pub fn quadratic_form(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), 2 * self.b.len());
        z.iter()
            .enumerate()
            .map(|(i, v)| self.diag(i) * v * v)
            .sum()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = 2 * self.b.len();
        DMatrix::from_fn(d, d, |r, c| if r == c { self.diag(r) } else { 0.0 })
    }
}

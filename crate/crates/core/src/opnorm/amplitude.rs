//! Amplitudes `Psi(x, y)` for oscillatory integral operators.

use serde::{Deserialize, Serialize};

use crate::decomp::cutoff::plateau;
use crate::error::{Error, Result};

/// A real, compactly supported amplitude.
pub trait Amplitude: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// Per-axis bounding box of the x-support.
    fn x_box(&self) -> Vec<(f64, f64)>;

    /// Per-axis bounding box of the y-support.
    fn y_box(&self) -> Vec<(f64, f64)>;

    /// Lower bound for `|x - y|` on the support (0 when unknown).
    fn min_separation(&self) -> f64 {
        0.0
    }

    /// Factors `a(x) c(y) q(x - y)` of a one-dimensional amplitude, if it has them.
    fn separated(&self) -> Option<SeparatedAmplitude> {
        None
    }
}

/// `a(x) c(y) q(x - y)` on the line; a missing factor is `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedAmplitude {
    pub x: Option<Profile>,
    pub y: Option<Profile>,
    pub diff: Option<DiffProfile>,
}

impl SeparatedAmplitude {
    pub fn x_factor(&self, t: f64) -> f64 {
        self.x.map_or(1.0, |p| p.eval(t))
    }

    pub fn y_factor(&self, t: f64) -> f64 {
        self.y.map_or(1.0, |p| p.eval(t))
    }

    pub fn diff_factor(&self, z: f64) -> f64 {
        self.diff.as_ref().map_or(1.0, |q| q.eval(&[z]))
    }
}

/// Plateau profile `1` on `|t - center| <= inner * half_width`, `0` beyond `half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub center: f64,
    pub half_width: f64,
    pub inner: f64,
}

impl Profile {
    pub fn new(center: f64, half_width: f64, inner: f64) -> Result<Self> {
        if !(half_width > 0.0) || !(0.0..1.0).contains(&inner) {
            return Err(Error::InvalidParameter(format!(
                "profile needs half_width > 0 and inner in [0, 1), got {half_width}, {inner}"
            )));
        }
        Ok(Self { center, half_width, inner })
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        plateau((t - self.center) / self.half_width, self.inner)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }
}

/// Constant amplitude on a box in `x` and a box in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxAmplitude {
    pub x_box: Vec<(f64, f64)>,
    pub y_box: Vec<(f64, f64)>,
}

impl Amplitude for BoxAmplitude {
    fn dim(&self) -> usize {
        self.x_box.len()
    }
    fn eval(&self, _x: &[f64], _y: &[f64]) -> f64 {
        1.0
    }
    fn x_box(&self) -> Vec<(f64, f64)> {
        self.x_box.clone()
    }
    fn y_box(&self) -> Vec<(f64, f64)> {
        self.y_box.clone()
    }
}

/// `prod_k px_k(x_k) * prod_k py_k(y_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorAmplitude {
    pub x: Vec<Profile>,
    pub y: Vec<Profile>,
}

impl Amplitude for TensorAmplitude {
    fn dim(&self) -> usize {
        self.x.len()
    }
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut v = 1.0;
        for (p, &t) in self.x.iter().zip(x) {
            v *= p.eval(t);
        }
        if v == 0.0 {
            return 0.0;
        }
        for (p, &t) in self.y.iter().zip(y) {
            v *= p.eval(t);
        }
        v
    }
    fn x_box(&self) -> Vec<(f64, f64)> {
        self.x.iter().map(Profile::support).collect()
    }
    fn y_box(&self) -> Vec<(f64, f64)> {
        self.y.iter().map(Profile::support).collect()
    }

    fn separated(&self) -> Option<SeparatedAmplitude> {
        (self.x.len() == 1 && self.y.len() == 1).then(|| SeparatedAmplitude {
            x: Some(self.x[0]),
            y: Some(self.y[0]),
            diff: None,
        })
    }
}

/// `prod_k px_k(x_k) * q(x - y)` where `q` localizes the difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceAmplitude {
    pub x: Vec<Profile>,
    pub diff: DiffProfile,
}

/// Localization of `z = x - y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiffProfile {
    /// Tensor of per-axis profiles in `z`.
    Tensor(Vec<Profile>),
    /// Radial profile in `|z|` times an angular profile in `arg z` (planar only).
    Polar { radius: Profile, angle: Profile },
    /// Radial profile in `|z|`, any dimension.
    Annulus(Profile),
}

impl DiffProfile {
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            DiffProfile::Tensor(ps) => ps.iter().zip(z).map(|(p, &t)| p.eval(t)).product(),
            DiffProfile::Annulus(radius) => radius.eval(z.iter().map(|v| v * v).sum::<f64>().sqrt()),
            DiffProfile::Polar { radius, angle } => {
                let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
                let a = radius.eval(r);
                if a == 0.0 {
                    return 0.0;
                }
                let tau = std::f64::consts::TAU;
                let mut phi = z[1].atan2(z[0]) - angle.center;
                phi -= tau * (phi / tau).round();
                a * angle.eval(angle.center + phi)
            }
        }
    }

    /// Bounding box of the support of `q`; `dim` is only read by `Annulus`.
    pub fn z_box(&self, dim: usize) -> Vec<(f64, f64)> {
        match self {
            DiffProfile::Tensor(ps) => ps.iter().map(Profile::support).collect(),
            DiffProfile::Annulus(radius) => vec![(-radius.support().1, radius.support().1); dim],
            DiffProfile::Polar { radius, angle } => {
                let (r0, r1) = radius.support();
                let (a0, a1) = angle.support();
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                let m = 256;
                for i in 0..=m {
                    let a = a0 + (a1 - a0) * i as f64 / m as f64;
                    for r in [r0, r1] {
                        let p = [r * a.cos(), r * a.sin()];
                        for k in 0..2 {
                            lo[k] = lo[k].min(p[k]);
                            hi[k] = hi[k].max(p[k]);
                        }
                    }
                }
                // the sampled arc can miss an extreme by O(r h^2)
                let pad = r1 * ((a1 - a0) / m as f64).powi(2);
                vec![(lo[0] - pad, hi[0] + pad), (lo[1] - pad, hi[1] + pad)]
            }
        }
    }

    /// Lower bound for `|z|` on the support.
    pub fn min_norm(&self) -> f64 {
        match self {
            DiffProfile::Tensor(ps) => ps
                .iter()
                .map(|p| {
                    let (a, b) = p.support();
                    if a <= 0.0 && b >= 0.0 {
                        0.0
                    } else {
                        a.abs().min(b.abs())
                    }
                })
                .fold(0.0f64, |acc, v| acc.hypot(v)),
            DiffProfile::Polar { radius, .. } | DiffProfile::Annulus(radius) => {
                radius.support().0.max(0.0)
            }
        }
    }
}

impl Amplitude for DifferenceAmplitude {
    fn dim(&self) -> usize {
        self.x.len()
    }

    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut v = 1.0;
        for (p, &t) in self.x.iter().zip(x) {
            v *= p.eval(t);
        }
        if v == 0.0 {
            return 0.0;
        }
        let mut z = [0.0; 8];
        let d = x.len();
        if d <= 8 {
            for k in 0..d {
                z[k] = x[k] - y[k];
            }
            v * self.diff.eval(&z[..d])
        } else {
            let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            v * self.diff.eval(&z)
        }
    }

    fn x_box(&self) -> Vec<(f64, f64)> {
        self.x.iter().map(Profile::support).collect()
    }

    /// `y = x - z`.
    fn y_box(&self) -> Vec<(f64, f64)> {
        self.x_box()
            .into_iter()
            .zip(self.diff.z_box(self.x.len()))
            .map(|((xa, xb), (za, zb))| (xa - zb, xb - za))
            .collect()
    }

    fn min_separation(&self) -> f64 {
        self.diff.min_norm()
    }

    fn separated(&self) -> Option<SeparatedAmplitude> {
        (self.x.len() == 1).then(|| SeparatedAmplitude { x: Some(self.x[0]), y: None, diff: Some(self.diff.clone()) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shape() {
        let p = Profile::new(1.0, 0.5, 0.5).unwrap();
        assert_eq!(p.eval(1.0), 1.0);
        assert_eq!(p.eval(1.25), 1.0);
        assert_eq!(p.eval(1.5), 0.0);
        assert!(p.eval(1.4) > 0.0 && p.eval(1.4) < 1.0);
        assert!(Profile::new(0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn difference_boxes_contain_support() {
        let amp = DifferenceAmplitude {
            x: vec![Profile::new(0.0, 0.2, 0.5).unwrap(); 2],
            diff: DiffProfile::Polar {
                radius: Profile::new(0.8, 0.2, 0.5).unwrap(),
                angle: Profile::new(0.3, 0.4, 0.5).unwrap(),
            },
        };
        let yb = amp.y_box();
        for i in 0..40 {
            for k in 0..40 {
                let x = [0.2 * (i as f64 / 20.0 - 1.0), 0.1];
                let y = [-1.2 + 2.4 * k as f64 / 40.0, -0.9 + 1.3 * i as f64 / 40.0];
                if amp.eval(&x, &y) > 0.0 {
                    assert!(y[0] >= yb[0].0 && y[0] <= yb[0].1);
                    assert!(y[1] >= yb[1].0 && y[1] <= yb[1].1);
                }
            }
        }
        assert!((amp.min_separation() - 0.6).abs() < 1e-12);
    }
}

//! Smooth cutoffs: the bump `zeta`, the dyadic pieces `theta`, the radial
//! patches `chi_h` on `[1/4, 1]` and angular patches on the circle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The standard `C^inf` transition: 0 for `s <= 0`, 1 for `s >= 1`,
/// `e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)})` in between.
#[inline]
pub fn transition(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

/// Even bump equal to 1 on `|t| <= inner` and 0 on `|t| >= 1`.
#[inline]
pub fn plateau(t: f64, inner: f64) -> f64 {
    1.0 - transition((t.abs() - inner) / (1.0 - inner))
}

/// `zeta(t)`: 1 on `[0, 1/2]`, 0 on `[1, inf)`, even in `t`.
#[inline]
pub fn zeta(t: f64) -> f64 {
    1.0 - transition(2.0 * t.abs() - 1.0)
}

/// `theta(t) = zeta(t) - zeta(2t)`, supported in `1/4 < |t| < 1`.
#[inline]
pub fn theta(t: f64) -> f64 {
    zeta(t) - zeta(2.0 * t)
}

/// `sum_{j = j_min..=j_max} theta(2^j t)`.
///
/// The sum telescopes to `zeta(2^{j_min} t) - zeta(2^{j_max + 1} t)`, so it is
/// identically 1 on `0 < |t| <= 2^{-j_min - 1}` once `2^{j_max + 1} |t| >= 1`.
pub fn dyadic_sum(t: f64, j_min: i32, j_max: i32) -> f64 {
    (j_min..=j_max).map(|j| theta(2f64.powi(j) * t)).sum()
}

/// One smooth patch of a partition of unity on an interval or a circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub center: f64,
    /// Left ramp runs over `[ramp_left.0, ramp_left.0 + ramp_left.1]`.
    ramp_left: (f64, f64),
    /// Right ramp runs over `[ramp_right.0, ramp_right.0 + ramp_right.1]`.
    ramp_right: (f64, f64),
}

impl Patch {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let (l0, lw) = self.ramp_left;
        let (r0, rw) = self.ramp_right;
        if t <= l0 || t >= r0 + rw {
            return 0.0;
        }
        transition((t - l0) / lw) * (1.0 - transition((t - r0) / rw))
    }

    /// Closed support `[lo, hi]`.
    pub fn support(&self) -> (f64, f64) {
        (self.ramp_left.0, self.ramp_right.0 + self.ramp_right.1)
    }
}

/// Patch layout for an interval of length `len` with plateau half-width
/// `delta`: `(count - 1, spacing)`.
fn layout(len: f64, delta: f64) -> Result<(usize, f64)> {
    let m = ((len - 2.0 * delta) / (3.0 * delta)).ceil().max(1.0) as usize;
    let s = if m as f64 * 3.0 * delta <= len {
        3.0 * delta
    } else {
        len / m as f64
    };
    if s <= 2.0 * delta {
        return Err(Error::InvalidParameter(format!(
            "delta = {delta} leaves no room for the transitions"
        )));
    }
    Ok((m, s))
}

/// The cutoff family of the dyadic decomposition with plateau half-width `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub delta: f64,
    radial: Vec<Patch>,
    angular: Vec<Patch>,
}

impl CutoffFamily {
    /// Patches `chi_h` are 1 on `[a_h - delta, a_h + delta]` and vanish
    /// outside `[a_h - 2 delta, a_h + 2 delta]`.
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.125) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1/8], got {delta}"
            )));
        }
        let (m, s) = layout(0.75, delta)?;
        let first = 0.25 + (0.75 - m as f64 * s) / 2.0;
        let centers: Vec<f64> = (0..=m).map(|i| first + i as f64 * s).collect();
        let w = s - 2.0 * delta;
        let radial = centers
            .iter()
            .enumerate()
            .map(|(i, &a)| Patch {
                center: a,
                ramp_left: if i == 0 {
                    (a - 2.0 * delta, delta)
                } else {
                    (centers[i - 1] + delta, w)
                },
                ramp_right: if i == m { (a + delta, delta) } else { (a + delta, w) },
            })
            .collect();

        let tau = std::f64::consts::TAU;
        let count = (tau / (3.0 * delta)).ceil() as usize;
        let s = tau / count as f64;
        let w = s - 2.0 * delta;
        let angular = (0..count)
            .map(|i| {
                let c = i as f64 * s;
                Patch {
                    center: c,
                    ramp_left: (c - s + delta, w),
                    ramp_right: (c + delta, w),
                }
            })
            .collect();
        Ok(Self { delta, radial, angular })
    }

    pub fn zeta(&self, t: f64) -> f64 {
        zeta(t)
    }

    pub fn theta(&self, t: f64) -> f64 {
        theta(t)
    }

    pub fn radial_count(&self) -> usize {
        self.radial.len()
    }

    pub fn radial_patches(&self) -> &[Patch] {
        &self.radial
    }

    /// `chi_h(t)`.
    pub fn chi_h(&self, h: usize, t: f64) -> Result<f64> {
        self.radial
            .get(h)
            .map(|p| p.eval(t))
            .ok_or_else(|| Error::InvalidParameter(format!("radial patch {h} out of range")))
    }

    pub fn angular_count(&self) -> usize {
        self.angular.len()
    }

    pub fn angular_patches(&self) -> &[Patch] {
        &self.angular
    }

    /// Angular patch `c` evaluated at the direction of the planar vector `z`;
    /// homogeneous of degree 0.
    pub fn chi_cone(&self, c: usize, z: [f64; 2]) -> Result<f64> {
        let p = self
            .angular
            .get(c)
            .ok_or_else(|| Error::InvalidParameter(format!("angular patch {c} out of range")))?;
        Ok(angular_eval(p, z[1].atan2(z[0])))
    }
}

/// Evaluate a circle patch at angle `phi`, taking the representative of
/// `phi` closest to the patch center.
#[inline]
pub fn angular_eval(p: &Patch, phi: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut a = phi - p.center;
    a -= tau * (a / tau).round();
    p.eval(p.center + a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeta_and_theta_supports() {
        assert_eq!(zeta(0.0), 1.0);
        assert_eq!(zeta(0.5), 1.0);
        assert_eq!(zeta(1.0), 0.0);
        assert_eq!(zeta(7.0), 0.0);
        for i in 0..=1000 {
            let t = 1.0 + i as f64 * 0.01;
            assert_eq!(theta(t), 0.0);
            let t = 0.25 * i as f64 / 1000.0;
            assert_eq!(theta(t), 0.0);
        }
        assert!(theta(0.5) > 0.99);
    }

    #[test]
    fn dyadic_sums() {
        for &t in &[0.4, 0.25, 0.1, 0.01, 0.5] {
            assert!((dyadic_sum(t, 0, 40) - 1.0).abs() < 1e-12, "t = {t}");
        }
        for &t in &[0.25, 0.1, 0.01] {
            assert!((dyadic_sum(t, 1, 40) - 1.0).abs() < 1e-12, "t = {t}");
        }
        // starting at j = 1 only covers |t| <= 1/4
        assert!((dyadic_sum(0.4, 1, 40) - zeta(0.8)).abs() < 1e-15);
        assert!(dyadic_sum(0.4, 1, 40) < 0.5);
    }

    #[test]
    fn radial_layout_for_default_delta() {
        let c = CutoffFamily::new(0.125).unwrap();
        let centers: Vec<f64> = c.radial_patches().iter().map(|p| p.center).collect();
        assert_eq!(centers, vec![0.25, 0.625, 1.0]);
        for p in c.radial_patches() {
            let (lo, hi) = p.support();
            assert!(lo >= p.center - 0.25 - 1e-15 && hi <= p.center + 0.25 + 1e-15);
            assert_eq!(p.eval(p.center + 0.125), 1.0);
            assert_eq!(p.eval(p.center - 0.125), 1.0);
        }
    }

    #[test]
    fn delta_validation() {
        assert!(CutoffFamily::new(0.2).is_err());
        assert!(CutoffFamily::new(0.0).is_err());
        assert!(CutoffFamily::new(0.01).is_ok());
    }

    #[test]
    fn radial_partition() {
        for &delta in &[0.125, 0.1, 0.07, 0.05, 0.02] {
            let c = CutoffFamily::new(delta).unwrap();
            for i in 0..=100 {
                let t = 0.25 + 0.75 * i as f64 / 100.0;
                let s: f64 = (0..c.radial_count()).map(|h| c.chi_h(h, t).unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-12, "delta={delta} t={t} sum={s}");
            }
        }
    }

    #[test]
    fn angular_partition() {
        let c = CutoffFamily::new(0.125).unwrap();
        for i in 0..1000 {
            let phi = -3.5 + 7.0 * i as f64 / 1000.0;
            let z = [phi.cos() * 2.5, phi.sin() * 2.5];
            let s: f64 = (0..c.angular_count()).map(|k| c.chi_cone(k, z).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let z_small = [z[0] * 1e-3, z[1] * 1e-3];
            assert!((c.chi_cone(3, z).unwrap() - c.chi_cone(3, z_small).unwrap()).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn resummation(t in 0.0f64..2.0, delta in 0.02f64..0.125) {
            let c = CutoffFamily::new(delta).unwrap();
            let s: f64 = (0..c.radial_count()).map(|h| c.chi_h(h, t).unwrap() * theta(t)).sum();
            prop_assert!((s - theta(t)).abs() < 1e-12);
        }

        #[test]
        fn cutoffs_in_unit_interval(t in -3.0f64..3.0) {
            let c = CutoffFamily::new(0.125).unwrap();
            prop_assert!((0.0..=1.0).contains(&zeta(t)));
            prop_assert!((0.0..=1.0).contains(&theta(t)));
            for h in 0..c.radial_count() {
                let v = c.chi_h(h, t).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

//! Tensor midpoint grids and the resolution rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opnorm::amplitude::Amplitude;
use crate::phase::Phase;

/// Midpoint rule on a box: axis `k` has `points_per_axis[k]` nodes of spacing
/// `(hi - lo) / N` at `lo + (i + 1/2) h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
}

impl GridSpec {
    pub fn new(bounds: Vec<(f64, f64)>, points_per_axis: Vec<usize>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() != points_per_axis.len() {
            return Err(Error::InvalidParameter(
                "grid needs one interval and one node count per axis".into(),
            ));
        }
        for (&(a, b), &n) in bounds.iter().zip(&points_per_axis) {
            if !(b > a) || n == 0 {
                return Err(Error::InvalidParameter(format!(
                    "bad grid axis [{a}, {b}] with {n} nodes"
                )));
            }
        }
        Ok(Self { points_per_axis, bounds })
    }

    /// `n^dim` nodes on `[-1, 1]^dim`.
    pub fn cube(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![(-1.0, 1.0); dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        (b - a) / self.points_per_axis[axis] as f64
    }

    /// Quadrature weight of every node.
    pub fn weight(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    /// All nodes, flattened row-major with the last axis fastest.
    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dim();
        let total = self.len();
        let mut out = vec![0.0; total * d];
        let mut idx = vec![0usize; d];
        for p in 0..total {
            for k in 0..d {
                let (a, _) = self.bounds[k];
                out[p * d + k] = a + (idx[k] as f64 + 0.5) * self.spacing(k);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < self.points_per_axis[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    /// Same box with every axis count scaled by `factor` (rounded up).
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            points_per_axis: self
                .points_per_axis
                .iter()
                .map(|&n| ((n as f64) * factor).ceil() as usize)
                .collect(),
            bounds: self.bounds.clone(),
        }
    }
}

/// How grids are sized from the phase gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRule {
    /// Minimum nodes per oscillation of `e^{i lambda Phi}` along each axis.
    pub nodes_per_wavelength: f64,
    /// Multiplier on the sampled gradient range.
    pub safety: f64,
    /// Minimum nodes per unit length, resolving the amplitude itself.
    pub min_density: f64,
    /// Extra multiplier applied on top of the rule (convergence studies).
    pub refine: f64,
    /// Largest admissible `rows * cols` of a single operator.
    pub max_entries: u128,
    /// Number of support samples used to bound the gradient.
    pub samples: usize,
}

impl Default for GridRule {
    fn default() -> Self {
        Self {
            nodes_per_wavelength: 6.0,
            safety: 1.1,
            min_density: 32.0,
            refine: 1.0,
            max_entries: 4_000_000_000,
            samples: 200_000,
        }
    }
}

/// Gradient range of the phase over the amplitude support.
///
/// `center` is the midrange of each partial derivative and `spread` its
/// half-range. Multiplying the kernel by `e^{-i lambda (p_x . x + p_y . y)}`
/// is a diagonal unitary change of basis on both sides, so it leaves every
/// singular value of the discrete operator unchanged; the grid only has to
/// resolve the remaining oscillation, whose frequency along axis `k` is at
/// most `lambda * spread_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRange {
    pub x_center: Vec<f64>,
    pub x_spread: Vec<f64>,
    pub y_center: Vec<f64>,
    pub y_spread: Vec<f64>,
    /// Number of samples that landed on the support.
    pub hits: usize,
}

pub fn gradient_range(phase: &dyn Phase, amp: &dyn Amplitude, samples: usize, seed: u64) -> GradientRange {
    let d = phase.dim();
    let xb = amp.x_box();
    let yb = amp.y_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xmin = vec![f64::INFINITY; d];
    let mut xmax = vec![f64::NEG_INFINITY; d];
    let mut ymin = vec![f64::INFINITY; d];
    let mut ymax = vec![f64::NEG_INFINITY; d];
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut hits = 0;
    // include the box corners of a regular lattice so extremes on the boundary are seen
    let lattice = (samples as f64).powf(1.0 / (2 * d) as f64).floor().max(2.0) as usize;
    let lattice_total = lattice.pow(2 * d as u32);
    let total = samples + lattice_total.min(samples);
    for s in 0..total {
        if s < samples {
            for k in 0..d {
                x[k] = rng.gen_range(xb[k].0..=xb[k].1);
                y[k] = rng.gen_range(yb[k].0..=yb[k].1);
            }
        } else {
            let mut q = s - samples;
            for k in 0..d {
                let i = q % lattice;
                q /= lattice;
                x[k] = xb[k].0 + (xb[k].1 - xb[k].0) * i as f64 / (lattice - 1) as f64;
            }
            for k in 0..d {
                let i = q % lattice;
                q /= lattice;
                y[k] = yb[k].0 + (yb[k].1 - yb[k].0) * i as f64 / (lattice - 1) as f64;
            }
        }
        if amp.eval(&x, &y) == 0.0 {
            continue;
        }
        hits += 1;
        phase.grad_x(&x, &y, &mut gx);
        phase.grad_y(&x, &y, &mut gy);
        for k in 0..d {
            xmin[k] = xmin[k].min(gx[k]);
            xmax[k] = xmax[k].max(gx[k]);
            ymin[k] = ymin[k].min(gy[k]);
            ymax[k] = ymax[k].max(gy[k]);
        }
    }
    let mid = |lo: &[f64], hi: &[f64]| -> (Vec<f64>, Vec<f64>) {
        lo.iter()
            .zip(hi)
            .map(|(&a, &b)| if hits == 0 { (0.0, 0.0) } else { ((a + b) / 2.0, (b - a) / 2.0) })
            .unzip()
    };
    let (x_center, x_spread) = mid(&xmin, &xmax);
    let (y_center, y_spread) = mid(&ymin, &ymax);
    GradientRange { x_center, x_spread, y_center, y_spread, hits }
}

/// Node counts required on each side: `(x counts, y counts)`.
pub fn required_points(
    range: &GradientRange,
    x_box: &[(f64, f64)],
    y_box: &[(f64, f64)],
    lambda: f64,
    rule: &GridRule,
) -> (Vec<usize>, Vec<usize>) {
    let count = |spread: f64, (a, b): (f64, f64)| -> usize {
        let len = b - a;
        let osc = lambda * spread * rule.safety * len * rule.nodes_per_wavelength / std::f64::consts::TAU;
        let n = osc.max(rule.min_density * len).max(8.0);
        n.ceil() as usize
    };
    let xs = range.x_spread.iter().zip(x_box).map(|(&g, &b)| count(g, b)).collect();
    let ys = range.y_spread.iter().zip(y_box).map(|(&g, &b)| count(g, b)).collect();
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_nodes() {
        let g = GridSpec::new(vec![(0.0, 1.0), (-1.0, 1.0)], vec![2, 4]).unwrap();
        assert_eq!(g.len(), 8);
        let n = g.nodes();
        assert_eq!(&n[..4], &[0.25, -0.75, 0.25, -0.25]);
        assert_eq!(&n[14..], &[0.75, 0.75]);
        assert_eq!(g.weight(), 0.5 * 0.5);
        let total: f64 = g.weight() * g.len() as f64;
        assert!((total - 2.0).abs() < 1e-15);
        assert!(GridSpec::new(vec![(1.0, 0.0)], vec![3]).is_err());
        assert!(GridSpec::new(vec![(0.0, 1.0)], vec![0]).is_err());
    }

    #[test]
    fn refine_scales_counts() {
        let g = GridSpec::cube(2, 10).unwrap().refined(1.5);
        assert_eq!(g.points_per_axis, vec![15, 15]);
    }
}

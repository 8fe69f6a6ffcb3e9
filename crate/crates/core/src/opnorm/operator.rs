//! Discretized oscillatory integral operators with matrix-free application.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opnorm::amplitude::Amplitude;
use crate::opnorm::grid::{gradient_range, required_points, GradientRange, GridRule, GridSpec};
use crate::phase::Phase;

/// Smallest `|x - y|` admitted on the amplitude support of a singular phase.
pub const MIN_SEPARATION: f64 = 0.25;

/// A bounded linear map between finite-dimensional complex spaces.
pub trait LinearMap: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, f: &[Complex64], out: &mut [Complex64]);
    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]);
}

/// Nonzero runs of one kernel row.
#[derive(Debug, Clone, Default)]
struct CachedRow {
    /// `(first column, offset into vals, length)`.
    runs: Vec<(u32, u32, u32)>,
    vals: Vec<Complex64>,
}

/// `T f(x_i) = sum_j e^{i lambda Phi(x_i, y_j)} Psi(x_i, y_j) f(y_j) w_y`.
pub struct OscOperator {
    phase: Arc<dyn Phase>,
    amplitude: Arc<dyn Amplitude>,
    lambda: f64,
    scale: Complex64,
    grid_x: GridSpec,
    grid_y: GridSpec,
    xs: Vec<f64>,
    ys: Vec<f64>,
    gradient: GradientRange,
    cache: Option<Vec<CachedRow>>,
}

impl std::fmt::Debug for OscOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OscOperator")
            .field("lambda", &self.lambda)
            .field("grid_x", &self.grid_x.points_per_axis)
            .field("grid_y", &self.grid_y.points_per_axis)
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl OscOperator {
    /// Operator on explicit grids; rejected when a grid under-resolves the
    /// oscillation or the amplitude reaches too close to the diagonal.
    pub fn new(
        phase: Arc<dyn Phase>,
        amplitude: Arc<dyn Amplitude>,
        lambda: f64,
        grid_x: GridSpec,
        grid_y: GridSpec,
        rule: &GridRule,
    ) -> Result<Self> {
        let gradient = Self::validate_inputs(phase.as_ref(), amplitude.as_ref(), lambda, rule)?;
        let d = phase.dim();
        if grid_x.dim() != d || grid_y.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: grid_x.dim().min(grid_y.dim()) });
        }
        let (need_x, need_y) = required_points(
            &gradient,
            &grid_x.bounds,
            &grid_y.bounds,
            lambda,
            &GridRule { min_density: 0.0, ..rule.clone() },
        );
        for (side, grid, need) in [("x", &grid_x, &need_x), ("y", &grid_y, &need_y)] {
            for (axis, (&have, &required)) in grid.points_per_axis.iter().zip(need).enumerate() {
                if have < required {
                    return Err(Error::Resolution { side, axis, have, required });
                }
            }
        }
        Self::check_cap(&grid_x, &grid_y, rule)?;
        Ok(Self::assemble(phase, amplitude, lambda, grid_x, grid_y, gradient))
    }

    /// Operator on the amplitude's bounding boxes with node counts set by `rule`.
    pub fn auto(
        phase: Arc<dyn Phase>,
        amplitude: Arc<dyn Amplitude>,
        lambda: f64,
        rule: &GridRule,
    ) -> Result<Self> {
        let (gx, gy) = Self::auto_grids(phase.as_ref(), amplitude.as_ref(), lambda, rule)?;
        let gradient = Self::validate_inputs(phase.as_ref(), amplitude.as_ref(), lambda, rule)?;
        Ok(Self::assemble(phase, amplitude, lambda, gx, gy, gradient))
    }

    /// Grids `auto` would use.
    pub fn auto_grids(
        phase: &dyn Phase,
        amplitude: &dyn Amplitude,
        lambda: f64,
        rule: &GridRule,
    ) -> Result<(GridSpec, GridSpec)> {
        let gradient = Self::validate_inputs(phase, amplitude, lambda, rule)?;
        let xb = amplitude.x_box();
        let yb = amplitude.y_box();
        let (nx, ny) = required_points(&gradient, &xb, &yb, lambda, rule);
        let scale = |v: Vec<usize>| -> Vec<usize> {
            v.into_iter().map(|n| ((n as f64) * rule.refine).ceil() as usize).collect()
        };
        let gx = GridSpec::new(xb, scale(nx))?;
        let gy = GridSpec::new(yb, scale(ny))?;
        Self::check_cap(&gx, &gy, rule)?;
        Ok((gx, gy))
    }

    fn validate_inputs(
        phase: &dyn Phase,
        amplitude: &dyn Amplitude,
        lambda: f64,
        rule: &GridRule,
    ) -> Result<GradientRange> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if amplitude.dim() != phase.dim() {
            return Err(Error::DimensionMismatch { expected: phase.dim(), got: amplitude.dim() });
        }
        if phase.is_singular() && amplitude.min_separation() < MIN_SEPARATION {
            return Err(Error::Domain(format!(
                "amplitude reaches |x - y| = {} but singular phases need |x - y| >= {MIN_SEPARATION}",
                amplitude.min_separation()
            )));
        }
        Ok(gradient_range(phase, amplitude, rule.samples, 0x5eed))
    }

    fn check_cap(gx: &GridSpec, gy: &GridSpec, rule: &GridRule) -> Result<()> {
        let required = gx.len() as u128 * gy.len() as u128;
        if required > rule.max_entries {
            return Err(Error::GridCap { required, cap: rule.max_entries });
        }
        Ok(())
    }

    fn assemble(
        phase: Arc<dyn Phase>,
        amplitude: Arc<dyn Amplitude>,
        lambda: f64,
        grid_x: GridSpec,
        grid_y: GridSpec,
        gradient: GradientRange,
    ) -> Self {
        let xs = grid_x.nodes();
        let ys = grid_y.nodes();
        Self {
            phase,
            amplitude,
            lambda,
            scale: Complex64::new(1.0, 0.0),
            grid_x,
            grid_y,
            xs,
            ys,
            gradient,
            cache: None,
        }
    }

    /// Multiply the amplitude by a complex constant.
    pub fn with_scale(mut self, scale: Complex64) -> Self {
        self.scale = scale;
        if let Some(rows) = &mut self.cache {
            rows.iter_mut().for_each(|r| r.vals.iter_mut().for_each(|v| *v *= scale));
        }
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scale(&self) -> Complex64 {
        self.scale
    }

    pub fn grid_x(&self) -> &GridSpec {
        &self.grid_x
    }

    pub fn grid_y(&self) -> &GridSpec {
        &self.grid_y
    }

    pub fn gradient_range(&self) -> &GradientRange {
        &self.gradient
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn dim(&self) -> usize {
        self.grid_x.dim()
    }

    fn x(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.xs[i * d..(i + 1) * d]
    }

    fn y(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.ys[j * d..(j + 1) * d]
    }

    /// Kernel entry `scale * Psi(x_i, y_j) e^{i lambda Phi(x_i, y_j)}` (no weights).
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        let (x, y) = (self.x(i), self.y(j));
        let a = self.amplitude.eval(x, y);
        if a == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let (s, c) = (self.lambda * self.phase.value(x, y)).sin_cos();
        self.scale * Complex64::new(a * c, a * s)
    }

    /// Store the nonzero kernel entries when they fit in `budget_bytes`;
    /// application results are identical with and without the cache.
    pub fn cache_kernel(mut self, budget_bytes: usize) -> Self {
        let limit = budget_bytes / std::mem::size_of::<Complex64>();
        let used = AtomicUsize::new(0);
        let ny = self.grid_y.len();
        let rows: Option<Vec<CachedRow>> = (0..self.grid_x.len())
            .into_par_iter()
            .map(|i| {
                if used.load(Ordering::Relaxed) > limit {
                    return None;
                }
                let mut row = CachedRow::default();
                let mut j = 0;
                while j < ny {
                    let v = self.entry(i, j);
                    if v == Complex64::new(0.0, 0.0) {
                        j += 1;
                        continue;
                    }
                    let start = j;
                    let offset = row.vals.len();
                    row.vals.push(v);
                    j += 1;
                    while j < ny {
                        let v = self.entry(i, j);
                        if v == Complex64::new(0.0, 0.0) {
                            break;
                        }
                        row.vals.push(v);
                        j += 1;
                    }
                    row.runs.push((start as u32, offset as u32, (j - start) as u32));
                }
                row.vals.shrink_to_fit();
                let total = used.fetch_add(row.vals.len(), Ordering::Relaxed) + row.vals.len();
                (total <= limit).then_some(row)
            })
            .collect();
        self.cache = rows;
        self
    }

    /// Bytes held by the kernel cache.
    pub fn cache_bytes(&self) -> usize {
        self.cache.as_ref().map_or(0, |rows| {
            rows.iter()
                .map(|r| r.vals.len() * std::mem::size_of::<Complex64>() + r.runs.len() * 12)
                .sum()
        })
    }

    /// Kernel times `f`, without quadrature weights.
    fn kernel_apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        assert_eq!(f.len(), self.grid_y.len());
        assert_eq!(out.len(), self.grid_x.len());
        match &self.cache {
            Some(rows) => out.par_iter_mut().zip(rows.par_iter()).for_each(|(o, row)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(start, offset, len) in &row.runs {
                    let vals = &row.vals[offset as usize..(offset + len) as usize];
                    let fs = &f[start as usize..(start + len) as usize];
                    for (k, v) in vals.iter().zip(fs) {
                        acc += k * v;
                    }
                }
                *o = acc;
            }),
            None => out.par_iter_mut().enumerate().for_each(|(i, o)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in f.iter().enumerate() {
                    let k = self.entry(i, j);
                    if k.re != 0.0 || k.im != 0.0 {
                        acc += k * v;
                    }
                }
                *o = acc;
            }),
        }
    }

    /// Conjugate-transposed kernel times `g`, without quadrature weights.
    fn kernel_apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        assert_eq!(g.len(), self.grid_x.len());
        assert_eq!(out.len(), self.grid_y.len());
        let ny = out.len();
        match &self.cache {
            Some(rows) => {
                let nx = rows.len();
                let chunks = (4_000_000 / ny.max(1)).clamp(1, 64).min(nx.max(1));
                let per = nx.div_ceil(chunks);
                let partial: Vec<Vec<Complex64>> = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut acc = vec![Complex64::new(0.0, 0.0); ny];
                        for i in c * per..((c + 1) * per).min(nx) {
                            let gi = g[i];
                            let row = &rows[i];
                            for &(start, offset, len) in &row.runs {
                                let vals = &row.vals[offset as usize..(offset + len) as usize];
                                let dst = &mut acc[start as usize..(start + len) as usize];
                                for (a, k) in dst.iter_mut().zip(vals) {
                                    *a += k.conj() * gi;
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
                for p in partial {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += v;
                    }
                }
            }
            None => out.par_iter_mut().enumerate().for_each(|(j, o)| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, v) in g.iter().enumerate() {
                    let k = self.entry(i, j);
                    if k.re != 0.0 || k.im != 0.0 {
                        acc += k.conj() * v;
                    }
                }
                *o = acc;
            }),
        }
    }

    /// `g(x_i) = sum_j K(x_i, y_j) f(y_j) w_y`.
    pub fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        if f.len() != self.grid_y.len() {
            return Err(Error::DimensionMismatch { expected: self.grid_y.len(), got: f.len() });
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid_x.len()];
        self.kernel_apply(f, &mut out);
        let w = self.grid_y.weight();
        out.iter_mut().for_each(|v| *v *= w);
        Ok(out)
    }

    /// Same as [`apply`](Self::apply) via an explicit dense matrix; for tests
    /// and small grids.
    pub fn apply_dense(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let k = self.to_dense();
        if f.len() != k.ncols() {
            return Err(Error::DimensionMismatch { expected: k.ncols(), got: f.len() });
        }
        let w = self.grid_y.weight();
        Ok((0..k.nrows())
            .map(|i| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, v) in f.iter().enumerate() {
                    let e = k[(i, j)];
                    if e.re != 0.0 || e.im != 0.0 {
                        acc += e * v;
                    }
                }
                acc * w
            })
            .collect())
    }

    /// Dense kernel matrix (no weights).
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.grid_x.len(), self.grid_y.len(), |i, j| self.entry(i, j))
    }

    /// Dense matrix of the weight-symmetrized map `W_x^{1/2} K W_y^{1/2}`.
    pub fn to_dense_symmetrized(&self) -> DMatrix<Complex64> {
        let s = (self.grid_x.weight() * self.grid_y.weight()).sqrt();
        self.to_dense() * Complex64::new(s, 0.0)
    }

    fn sym_factor(&self) -> f64 {
        (self.grid_x.weight() * self.grid_y.weight()).sqrt()
    }
}

/// The weight-symmetrized map `W_x^{1/2} K W_y^{1/2}`, whose spectral norm
/// approximates the `L^2 -> L^2` norm.
impl LinearMap for OscOperator {
    fn rows(&self) -> usize {
        self.grid_x.len()
    }

    fn cols(&self) -> usize {
        self.grid_y.len()
    }

    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        self.kernel_apply(f, out);
        let s = self.sym_factor();
        out.iter_mut().for_each(|v| *v *= s);
    }

    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        self.kernel_apply_adjoint(g, out);
        let s = self.sym_factor();
        out.iter_mut().for_each(|v| *v *= s);
    }
}

/// `A^*` of a map `A`.
pub struct Adjoint<'a>(pub &'a dyn LinearMap);

impl LinearMap for Adjoint<'_> {
    fn rows(&self) -> usize {
        self.0.cols()
    }
    fn cols(&self) -> usize {
        self.0.rows()
    }
    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        self.0.apply_adjoint(f, out)
    }
    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        self.0.apply(g, out)
    }
}

/// `outer . inner`.
pub struct Compose<'a> {
    outer: &'a dyn LinearMap,
    inner: &'a dyn LinearMap,
}

impl<'a> Compose<'a> {
    pub fn new(outer: &'a dyn LinearMap, inner: &'a dyn LinearMap) -> Result<Self> {
        if outer.cols() != inner.rows() {
            return Err(Error::DimensionMismatch { expected: outer.cols(), got: inner.rows() });
        }
        Ok(Self { outer, inner })
    }
}

impl LinearMap for Compose<'_> {
    fn rows(&self) -> usize {
        self.outer.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        let mut mid = vec![Complex64::new(0.0, 0.0); self.inner.rows()];
        self.inner.apply(f, &mut mid);
        self.outer.apply(&mid, out);
    }
    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        let mut mid = vec![Complex64::new(0.0, 0.0); self.outer.cols()];
        self.outer.apply_adjoint(g, &mut mid);
        self.inner.apply_adjoint(&mid, out);
    }
}

/// Dense complex matrix as a [`LinearMap`].
impl LinearMap for DMatrix<Complex64> {
    fn rows(&self) -> usize {
        self.nrows()
    }
    fn cols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..self.ncols()).map(|j| self[(i, j)] * f[j]).sum();
        }
    }
    fn apply_adjoint(&self, g: &[Complex64], out: &mut [Complex64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..self.nrows()).map(|i| self[(i, j)].conj() * g[i]).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opnorm::amplitude::{BoxAmplitude, Profile, TensorAmplitude};
    use crate::phase::PhaseSpec;

    fn bump_1d() -> Arc<dyn Amplitude> {
        Arc::new(TensorAmplitude {
            x: vec![Profile::new(0.0, 1.0, 0.3).unwrap()],
            y: vec![Profile::new(0.0, 1.0, 0.3).unwrap()],
        })
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn no_oscillation_integrates_box() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(2).unwrap());
        let amp: Arc<dyn Amplitude> = Arc::new(BoxAmplitude {
            x_box: vec![(-1.0, 1.0); 2],
            y_box: vec![(-1.0, 1.0), (0.0, 0.5)],
        });
        let op = OscOperator::auto(phase, amp, 0.0, &GridRule::default()).unwrap();
        let g = op.apply(&vec![c(1.0, 0.0); op.grid_y().len()]).unwrap();
        for v in g {
            assert!((v - c(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn matrix_free_matches_dense_bitwise() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(1).unwrap());
        let gx = GridSpec::cube(1, 32).unwrap();
        let op = OscOperator::new(phase, bump_1d(), 12.0, gx.clone(), gx, &GridRule::default())
            .unwrap();
        let f: Vec<Complex64> = (0..32).map(|j| c((j as f64).sin(), (j as f64 * 0.3).cos())).collect();
        let a = op.apply(&f).unwrap();
        let b = op.apply_dense(&f).unwrap();
        assert_eq!(a, b);
        let op = op.cache_kernel(1 << 20);
        assert!(op.is_cached());
        assert_eq!(op.apply(&f).unwrap(), b);
    }

    #[test]
    fn cached_adjoint_matches_uncached() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(2).unwrap());
        let amp: Arc<dyn Amplitude> = Arc::new(TensorAmplitude {
            x: vec![Profile::new(0.0, 1.0, 0.3).unwrap(); 2],
            y: vec![Profile::new(0.2, 0.6, 0.3).unwrap(); 2],
        });
        let op = OscOperator::auto(phase, amp, 12.0, &GridRule::default()).unwrap();
        let g: Vec<Complex64> =
            (0..op.rows()).map(|i| c((i as f64 * 0.7).sin(), (i as f64).cos())).collect();
        let mut a = vec![c(0.0, 0.0); op.cols()];
        op.apply_adjoint(&g, &mut a);
        let op = op.cache_kernel(1 << 28);
        let mut b = vec![c(0.0, 0.0); op.cols()];
        op.apply_adjoint(&g, &mut b);
        let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_identity() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(1).unwrap());
        let op = OscOperator::auto(phase, bump_1d(), 30.0, &GridRule::default()).unwrap();
        let f: Vec<Complex64> = (0..op.cols()).map(|j| c((j as f64).cos(), 0.5)).collect();
        let g: Vec<Complex64> = (0..op.rows()).map(|i| c(0.1, (i as f64).sin())).collect();
        let mut af = vec![c(0.0, 0.0); op.rows()];
        let mut ag = vec![c(0.0, 0.0); op.cols()];
        LinearMap::apply(&op, &f, &mut af);
        op.apply_adjoint(&g, &mut ag);
        let lhs: Complex64 = af.iter().zip(&g).map(|(a, b)| b.conj() * a).sum();
        let rhs: Complex64 = f.iter().zip(&ag).map(|(a, b)| b.conj() * a).sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn resolution_rule_rejects_coarse_grid() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(1).unwrap());
        let g = GridSpec::cube(1, 16).unwrap();
        let err = OscOperator::new(phase, bump_1d(), 400.0, g.clone(), g, &GridRule::default())
            .unwrap_err();
        match err {
            Error::Resolution { required, have, .. } => {
                assert_eq!(have, 16);
                assert!(required > 100, "{required}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn singular_phase_needs_separation() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::radial(1.0, 1).unwrap());
        let err = OscOperator::auto(phase, bump_1d(), 1.0, &GridRule::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn grid_cap() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(1).unwrap());
        let rule = GridRule { max_entries: 1000, ..GridRule::default() };
        let err = OscOperator::auto(phase, bump_1d(), 1000.0, &rule).unwrap_err();
        assert!(matches!(err, Error::GridCap { .. }));
    }

    #[test]
    fn quadrature_converges_under_refinement() {
        let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(1).unwrap());
        let op = OscOperator::auto(phase.clone(), bump_1d(), 50.0, &GridRule::default()).unwrap();
        let fine = OscOperator::auto(
            phase,
            bump_1d(),
            50.0,
            &GridRule { refine: 2.0, ..GridRule::default() },
        )
        .unwrap();
        let l2 = |op: &OscOperator| {
            let f: Vec<Complex64> = op
                .grid_y()
                .nodes()
                .iter()
                .map(|&y| c((-4.0 * y * y).exp(), 0.0))
                .collect();
            let g = op.apply(&f).unwrap();
            (g.iter().map(|v| v.norm_sqr()).sum::<f64>() * op.grid_x().weight()).sqrt()
        };
        let (a, b) = (l2(&op), l2(&fine));
        assert!(((a - b) / b).abs() < 5e-3, "{a} {b}");
    }
}

//! Matrix-free operators.
//!
//! A [`LinearMap`] is anything that can apply a matrix and its transpose to a
//! vector; an [`SpdMap`] is a symmetric positive (semi)definite operator that
//! may additionally expose its diagonal and its inverse. Composite operators
//! ([`GramMap`], [`KroneckerMap`], [`CirculantEmbedding`]) wrap other
//! operators and never form the matrices they represent.
//!
//! Operators are immutable once built and are `Send + Sync`; applications
//! are pure functions of their input.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::rng;

/// Rectangular operator `R^cols -> R^rows` with its adjoint.
///
/// Implementations may panic if handed a vector of the wrong length; the
/// checked entry points in this crate validate dimensions first.
pub trait LinearMap: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn forward(&self, x: &DVector<f64>) -> DVector<f64>;
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64>;
}

/// Symmetric positive semidefinite operator on `R^dim`.
pub trait SpdMap: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    fn diagonal(&self) -> Option<DVector<f64>> {
        None
    }

    /// Applies the inverse when the operator carries a factorization.
    fn inverse_apply(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }

    fn has_inverse(&self) -> bool {
        false
    }
}

impl<T: LinearMap + ?Sized> LinearMap for Arc<T> {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).forward(x)
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        (**self).adjoint(y)
    }
}

impl<T: SpdMap + ?Sized> SpdMap for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).apply(x)
    }
    fn diagonal(&self) -> Option<DVector<f64>> {
        (**self).diagonal()
    }
    fn inverse_apply(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        (**self).inverse_apply(x)
    }
    fn has_inverse(&self) -> bool {
        (**self).has_inverse()
    }
}

// ---------------------------------------------------------------------------
// Dense and structured linear maps

/// Explicit matrix.
#[derive(Clone, Debug)]
pub struct DenseMap {
    matrix: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearMap for DenseMap {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }
    fn cols(&self) -> usize {
        self.matrix.ncols()
    }
    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(y)
    }
}

/// `(A ⊗ B) v` for rectangular factors.
///
/// `v` is read as the column-major `B.ncols() × A.ncols()` matrix `X`, and the
/// result is `vec(B X Aᵀ)`. For a row-major flattened image this means `A`
/// acts on the row index and `B` on the column index.
pub fn kronecker_apply(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("kronecker_apply input", a.ncols() * b.ncols(), v.len())?;
    Ok(kron_unchecked(a, b, v))
}

fn kron_unchecked(a: &DMatrix<f64>, b: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let x = DMatrix::from_column_slice(b.ncols(), a.ncols(), v.as_slice());
    let y = b * x * a.transpose();
    DVector::from_column_slice(y.as_slice())
}

/// Separable operator `A ⊗ B` applied without forming the product.
#[derive(Clone, Debug)]
pub struct KroneckerMap {
    outer: DMatrix<f64>,
    inner: DMatrix<f64>,
    outer_t: DMatrix<f64>,
    inner_t: DMatrix<f64>,
}

impl KroneckerMap {
    pub fn new(outer: DMatrix<f64>, inner: DMatrix<f64>) -> Self {
        let outer_t = outer.transpose();
        let inner_t = inner.transpose();
        Self {
            outer,
            inner,
            outer_t,
            inner_t,
        }
    }

    pub fn outer(&self) -> &DMatrix<f64> {
        &self.outer
    }

    pub fn inner(&self) -> &DMatrix<f64> {
        &self.inner
    }
}

impl LinearMap for KroneckerMap {
    fn rows(&self) -> usize {
        self.outer.nrows() * self.inner.nrows()
    }
    fn cols(&self) -> usize {
        self.outer.ncols() * self.inner.ncols()
    }
    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        kron_unchecked(&self.outer, &self.inner, x)
    }
    fn adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        kron_unchecked(&self.outer_t, &self.inner_t, y)
    }
}

// ---------------------------------------------------------------------------
// SPD maps

/// Diagonal SPD operator, e.g. white-noise covariance `δ² I`.
#[derive(Clone, Debug)]
pub struct DiagonalSpd {
    diag: DVector<f64>,
    invertible: bool,
}

impl DiagonalSpd {
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if diag.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(
                "diagonal SPD operator needs finite nonnegative entries".into(),
            ));
        }
        let invertible = diag.iter().all(|&d| d > 0.0);
        Ok(Self { diag, invertible })
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, value))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            diag: DVector::from_element(dim, 1.0),
            invertible: true,
        }
    }

    pub fn entries(&self) -> &DVector<f64> {
        &self.diag
    }
}

impl SpdMap for DiagonalSpd {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.diag)
    }
    fn diagonal(&self) -> Option<DVector<f64>> {
        Some(self.diag.clone())
    }
    fn inverse_apply(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.invertible.then(|| x.component_div(&self.diag))
    }
    fn has_inverse(&self) -> bool {
        self.invertible
    }
}

/// Dense SPD matrix with a one-time Cholesky factorization for inverse
/// applications. The factorization uses the crate jitter ladder; the shift
/// actually used is available through [`DenseSpd::jitter`].
#[derive(Clone, Debug)]
pub struct DenseSpd {
    matrix: DMatrix<f64>,
    chol: JitteredCholesky,
}

impl DenseSpd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument("SPD matrix must be square".into()));
        }
        let scale = matrix
            .diagonal()
            .iter()
            .fold(0.0_f64, |acc, d| acc.max(d.abs()))
            .max(f64::MIN_POSITIVE);
        let chol = cholesky_with_jitter(&matrix, scale)?;
        Ok(Self { matrix, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter
    }

    pub fn cholesky(&self) -> &JitteredCholesky {
        &self.chol
    }
}

impl SpdMap for DenseSpd {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
    fn diagonal(&self) -> Option<DVector<f64>> {
        Some(self.matrix.diagonal())
    }
    fn inverse_apply(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.chol.solve(x))
    }
    fn has_inverse(&self) -> bool {
        true
    }
}

/// Data-space Gram operator `M = G Σ Gᵀ`, applied as `G(Σ(Gᵀ v))`.
#[derive(Clone)]
pub struct GramMap {
    forward: Arc<dyn LinearMap>,
    prior: Arc<dyn SpdMap>,
}

impl GramMap {
    pub fn new(forward: Arc<dyn LinearMap>, prior: Arc<dyn SpdMap>) -> Result<Self> {
        check_dim("GramMap prior vs forward columns", forward.cols(), prior.dim())?;
        Ok(Self { forward, prior })
    }

    pub fn forward(&self) -> &Arc<dyn LinearMap> {
        &self.forward
    }

    pub fn prior(&self) -> &Arc<dyn SpdMap> {
        &self.prior
    }

    /// `Σ Gᵀ v`, the parameter-space image of a data-space vector.
    pub fn embed(&self, v: &DVector<f64>) -> DVector<f64> {
        self.prior.apply(&self.forward.adjoint(v))
    }
}

impl SpdMap for GramMap {
    fn dim(&self) -> usize {
        self.forward.rows()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.forward.forward(&self.embed(v))
    }
}

// ---------------------------------------------------------------------------
// Weighted inner products

/// `uᵀ B v`, evaluated as `⟨u, B v⟩`.
pub fn weighted_inner(b: &dyn SpdMap, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    check_dim("weighted_inner u", b.dim(), u.len())?;
    check_dim("weighted_inner v", b.dim(), v.len())?;
    Ok(u.dot(&b.apply(v)))
}

/// `(uᵀ B u)^{1/2}` with tiny negative round-off clamped to zero.
pub fn weighted_norm(b: &dyn SpdMap, u: &DVector<f64>) -> Result<f64> {
    Ok(weighted_inner(b, u, u)?.max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// Circulant embedding

/// Zero-padded circulant embedding of a stationary covariance on an `N × N`
/// grid. The kernel is laid out on the `2N × 2N` torus, its 2-D DFT is the
/// (real) spectrum, and applications pad, multiply point-wise in frequency,
/// and crop back to the original block.
pub struct CirculantEmbedding {
    side: usize,
    spectrum: Vec<f64>,
    forward_fft: Arc<dyn Fft<f64>>,
    inverse_fft: Arc<dyn Fft<f64>>,
    min_spectrum_ratio: f64,
    warnings: Vec<String>,
}

/// Entries below `-CLAMP_RATIO·max` are kept as they are; round-off negatives
/// above it are clamped to zero.
const SPECTRUM_CLAMP_RATIO: f64 = 1e-10;

impl CirculantEmbedding {
    /// `first_row` holds the kernel on the padded torus, row-major `2N × 2N`.
    pub fn from_torus_kernel(side: usize, first_row: &[f64]) -> Result<Self> {
        let padded = 2 * side;
        check_dim("circulant torus kernel", padded * padded, first_row.len())?;
        let mut planner = FftPlanner::<f64>::new();
        let forward_fft = planner.plan_fft_forward(padded);
        let inverse_fft = planner.plan_fft_inverse(padded);
        let mut buf: Vec<Complex<f64>> =
            first_row.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft2(&mut buf, padded, forward_fft.as_ref());
        let spectrum: Vec<f64> = buf.iter().map(|c| c.re).collect();
        Self::from_spectrum_with_plans(side, spectrum, forward_fft, inverse_fft)
    }

    /// Builds directly from a precomputed spectrum of length `4N²`.
    pub fn from_spectrum(side: usize, spectrum: Vec<f64>) -> Result<Self> {
        let padded = 2 * side;
        let mut planner = FftPlanner::<f64>::new();
        let forward_fft = planner.plan_fft_forward(padded);
        let inverse_fft = planner.plan_fft_inverse(padded);
        Self::from_spectrum_with_plans(side, spectrum, forward_fft, inverse_fft)
    }

    fn from_spectrum_with_plans(
        side: usize,
        mut spectrum: Vec<f64>,
        forward_fft: Arc<dyn Fft<f64>>,
        inverse_fft: Arc<dyn Fft<f64>>,
    ) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidArgument("circulant grid side must be positive".into()));
        }
        check_dim("circulant spectrum", 4 * side * side, spectrum.len())?;
        let max = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_spectrum_ratio = if max > 0.0 { min / max } else { 0.0 };
        let mut warnings = Vec::new();
        if min < -SPECTRUM_CLAMP_RATIO * max {
            let msg = format!(
                "circulant embedding spectrum has negative entries (min/max = {min_spectrum_ratio:.3e}); \
                 applications stay exact on the grid but the embedding is not a covariance"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        } else {
            for s in spectrum.iter_mut() {
                if *s < 0.0 {
                    *s = 0.0;
                }
            }
        }
        Ok(Self {
            side,
            spectrum,
            forward_fft,
            inverse_fft,
            min_spectrum_ratio,
            warnings,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn min_spectrum_ratio(&self) -> f64 {
        self.min_spectrum_ratio
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn apply_checked(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("circulant_apply input", self.side * self.side, v.len())?;
        Ok(self.apply_unchecked(v))
    }

    fn apply_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.side;
        let padded = 2 * n;
        let mut buf = vec![Complex::new(0.0, 0.0); padded * padded];
        for r in 0..n {
            for c in 0..n {
                buf[r * padded + c].re = v[r * n + c];
            }
        }
        fft2(&mut buf, padded, self.forward_fft.as_ref());
        for (b, &s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        fft2(&mut buf, padded, self.inverse_fft.as_ref());
        let norm = 1.0 / (padded * padded) as f64;
        let mut out = DVector::zeros(n * n);
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = buf[r * padded + c].re * norm;
            }
        }
        out
    }
}

/// One-shot embedded application: pads `v` (row-major `N × N`) to `2N × 2N`,
/// multiplies by `spectrum` in frequency and crops the result.
pub fn circulant_apply(spectrum: &[f64], v: &DVector<f64>) -> Result<DVector<f64>> {
    let side = (v.len() as f64).sqrt().round() as usize;
    if side * side != v.len() {
        return Err(Error::InvalidArgument(format!(
            "circulant_apply needs a square image, got length {}",
            v.len()
        )));
    }
    CirculantEmbedding::from_spectrum(side, spectrum.to_vec())?.apply_checked(v)
}

impl SpdMap for CirculantEmbedding {
    fn dim(&self) -> usize {
        self.side * self.side
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_unchecked(x)
    }
}

/// In-place 2-D transform of a row-major `size × size` buffer.
fn fft2(buf: &mut [Complex<f64>], size: usize, fft: &dyn Fft<f64>) {
    for row in buf.chunks_exact_mut(size) {
        fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); size];
    for c in 0..size {
        for r in 0..size {
            column[r] = buf[r * size + c];
        }
        fft.process(&mut column);
        for r in 0..size {
            buf[r * size + c] = column[r];
        }
    }
}

// ---------------------------------------------------------------------------
// Verification helpers

/// Power-iteration estimate of `‖G‖₂` (a lower bound that is tight after a
/// few iterations for the operators used here).
pub fn estimate_norm(map: &dyn LinearMap, iterations: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut x = rng::normal_vector(&mut rng, map.cols());
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let nx = x.norm();
        if nx == 0.0 {
            return 0.0;
        }
        x /= nx;
        let gx = map.forward(&x);
        estimate = gx.norm();
        x = map.adjoint(&gx);
    }
    estimate
}

/// Largest normalized adjoint discrepancy
/// `|⟨Gv, u⟩ − ⟨v, Gᵀu⟩| / (‖u‖‖v‖·‖G‖)` over seeded random pairs.
pub fn adjoint_mismatch(map: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
    let scale = estimate_norm(map, 8, seed ^ 0x5eed).max(f64::MIN_POSITIVE);
    let mut rng = rng::seeded(seed);
    (0..trials)
        .map(|_| {
            let v = rng::normal_vector(&mut rng, map.cols());
            let u = rng::normal_vector(&mut rng, map.rows());
            let lhs = map.forward(&v).dot(&u);
            let rhs = v.dot(&map.adjoint(&u));
            (lhs - rhs).abs() / (u.norm() * v.norm() * scale)
        })
        .fold(0.0, f64::max)
}

/// Largest normalized symmetry defect `|⟨Bu, v⟩ − ⟨u, Bv⟩| / (‖u‖‖v‖·scale)`
/// and the most negative normalized Rayleigh quotient over seeded trials.
pub fn spd_defects(map: &dyn SpdMap, trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng::seeded(seed);
    let mut scale: f64 = 0.0;
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let u = rng::normal_vector(&mut rng, map.dim());
        let v = rng::normal_vector(&mut rng, map.dim());
        let bu = map.apply(&u);
        let bv = map.apply(&v);
        scale = scale.max(bu.norm() / u.norm()).max(bv.norm() / v.norm());
        samples.push((u, v, bu, bv));
    }
    let scale = scale.max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    let mut neg: f64 = 0.0;
    for (u, v, bu, bv) in samples {
        let nn = u.norm() * v.norm() * scale;
        asym = asym.max((bu.dot(&v) - u.dot(&bv)).abs() / nn);
        neg = neg.min(bu.dot(&u) / (u.norm_squared() * scale));
    }
    (asym, neg)
}

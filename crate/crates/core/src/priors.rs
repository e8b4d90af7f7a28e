//! Stationary covariance kernels and the prior-covariance operators built
//! from them.
//!
//! Three storage layouts are supported: an explicit matrix (with a Cholesky
//! factor for inverse applications and sampling), a separable Kronecker
//! product `Σ₁ ⊗ Σ₁` for tensor grids, and a circulant embedding on a square
//! grid. 2-D grids are flattened row-major; distances are Euclidean.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::operator::{CirculantEmbedding, DenseSpd, KroneckerMap, LinearMap, SpdMap};
use crate::rng::{normal_vector, seeded};
use crate::special::{bessel_k, factorial};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelFamily {
    /// `σ² exp(−r²/(2l²))`
    Gaussian,
    /// `σ² exp(−r/l)`
    Exponential,
    /// Matérn with smoothness `nu`; half-integers and positive integers only.
    Matern { nu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub variance: f64,
    pub length: f64,
}

enum MaternOrder {
    HalfInteger(u32),
    Integer(u32),
}

fn matern_order(nu: f64) -> Result<MaternOrder> {
    let twice = 2.0 * nu;
    let rounded = twice.round();
    if !(nu > 0.0) || (twice - rounded).abs() > 1e-12 || rounded > 60.0 {
        return Err(Error::InvalidArgument(format!(
            "Matérn smoothness {nu} unsupported (need a positive integer or half-integer)"
        )));
    }
    let twice = rounded as u32;
    Ok(if twice % 2 == 1 {
        MaternOrder::HalfInteger(twice / 2)
    } else {
        MaternOrder::Integer(twice / 2)
    })
}

impl KernelSpec {
    pub fn gaussian(variance: f64, length: f64) -> Self {
        Self { family: KernelFamily::Gaussian, variance, length }
    }

    pub fn exponential(variance: f64, length: f64) -> Self {
        Self { family: KernelFamily::Exponential, variance, length }
    }

    pub fn matern(nu: f64, variance: f64, length: f64) -> Self {
        Self { family: KernelFamily::Matern { nu }, variance, length }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel length must be positive, got {}",
                self.length
            )));
        }
        if let KernelFamily::Matern { nu } = self.family {
            matern_order(nu)?;
        }
        Ok(())
    }
}

/// Kernel value at distance `r ≥ 0`.
pub fn kernel_eval(spec: &KernelSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("kernel distance must be ≥ 0, got {r}")));
    }
    let s2 = spec.variance;
    if r == 0.0 {
        return Ok(s2);
    }
    let l = spec.length;
    Ok(match spec.family {
        KernelFamily::Gaussian => s2 * (-(r * r) / (2.0 * l * l)).exp(),
        KernelFamily::Exponential => s2 * (-r / l).exp(),
        KernelFamily::Matern { nu } => {
            let z = (2.0 * nu).sqrt() * r / l;
            match matern_order(nu)? {
                MaternOrder::HalfInteger(p) => {
                    let poly: f64 = (0..=p)
                        .map(|i| {
                            factorial(p + i) / (factorial(i) * factorial(p - i))
                                * (2.0 * z).powi((p - i) as i32)
                        })
                        .sum();
                    s2 * (-z).exp() * factorial(p) / factorial(2 * p) * poly
                }
                MaternOrder::Integer(order) => {
                    // 2^{1−ν}/Γ(ν) z^ν K_ν(z); Γ(ν) = (ν−1)!
                    let coeff = 2f64.powi(1 - order as i32) / factorial(order - 1);
                    let value = coeff * z.powi(order as i32) * bessel_k(order, z)?;
                    // z^ν K_ν(z) loses its last digits next to the r → 0 limit
                    s2 * value.min(1.0)
                }
            }
        }
    })
}

fn kernel_matrix(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("covariance grid is empty".into()));
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = kernel_eval(spec, 0.0)?;
        for j in 0..i {
            let r = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let v = kernel_eval(spec, r)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Kernel matrix on a 1-D grid.
pub fn kernel_matrix_1d(spec: &KernelSpec, grid: &[f64]) -> Result<DMatrix<f64>> {
    let points: Vec<Vec<f64>> = grid.iter().map(|&t| vec![t]).collect();
    kernel_matrix(spec, &points)
}

/// Cell-centred `n1 × n1` grid on `[0,1]²`, row-major; each point is `(row, col)`.
pub fn unit_square_grid(n1: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / n1 as f64;
    let mut pts = Vec::with_capacity(n1 * n1);
    for r in 0..n1 {
        for c in 0..n1 {
            pts.push(vec![(r as f64 + 0.5) * h, (c as f64 + 0.5) * h]);
        }
    }
    pts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Dense,
    Kronecker,
    Circulant,
}

enum Storage {
    Dense(DenseSpd),
    Kronecker { map: KroneckerMap, factor: JitteredCholesky },
    Circulant(CirculantEmbedding),
}

/// Prior covariance `Σ` as an SPD operator with an always-available diagonal.
pub struct PriorCovariance {
    storage: Storage,
    diagonal: DVector<f64>,
    warnings: Vec<String>,
}

impl PriorCovariance {
    pub fn kind(&self) -> PriorKind {
        match self.storage {
            Storage::Dense(_) => PriorKind::Dense,
            Storage::Kronecker { .. } => PriorKind::Kronecker,
            Storage::Circulant(_) => PriorKind::Circulant,
        }
    }

    /// Diagonal shift used by the factorization (per 1-D factor for the
    /// Kronecker layout; zero for the circulant layout).
    pub fn jitter(&self) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d.jitter(),
            Storage::Kronecker { factor, .. } => factor.jitter,
            Storage::Circulant(_) => 0.0,
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Explicit matrix when stored densely.
    pub fn dense_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.storage {
            Storage::Dense(d) => Some(d.matrix()),
            _ => None,
        }
    }

    /// Materializes `Σ` (desk-scale verification only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(d) => d.matrix().clone(),
            Storage::Kronecker { map, .. } => map.outer().kronecker(map.inner()),
            Storage::Circulant(c) => {
                let n = c.dim();
                let mut out = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = DVector::zeros(n);
                    e[j] = 1.0;
                    out.set_column(j, &c.apply(&e));
                }
                out
            }
        }
    }

    /// Draws `L ξ` with `L Lᵀ = Σ` (up to the recorded jitter) and `ξ`
    /// standard normal from the seeded stream.
    pub fn sample(&self, seed: u64) -> Result<DVector<f64>> {
        let mut rng = seeded(seed);
        match &self.storage {
            Storage::Dense(d) => {
                let xi = normal_vector(&mut rng, d.dim());
                Ok(d.cholesky().factor.l_dirty().lower_triangle() * xi)
            }
            Storage::Kronecker { factor, .. } => {
                let l = factor.lower();
                let n1 = l.nrows();
                let xi = normal_vector(&mut rng, n1 * n1);
                Ok(KroneckerMap::new(l.clone(), l).forward(&xi))
            }
            Storage::Circulant(_) => Err(Error::MissingCapability(
                "a covariance factor (sampling needs a dense or separable prior)",
            )),
        }
    }
}

impl SpdMap for PriorCovariance {
    fn dim(&self) -> usize {
        self.diagonal.len()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.storage {
            Storage::Dense(d) => d.apply(x),
            Storage::Kronecker { map, .. } => map.forward(x),
            Storage::Circulant(c) => c.apply(x),
        }
    }
    fn diagonal(&self) -> Option<DVector<f64>> {
        Some(self.diagonal.clone())
    }
    fn inverse_apply(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.storage {
            Storage::Dense(d) => d.inverse_apply(x),
            _ => None,
        }
    }
    fn has_inverse(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }
}

/// Dense kernel matrix on arbitrary points, factorized with the jitter ladder
/// scaled by `σ²`.
pub fn dense_covariance(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<PriorCovariance> {
    let k = kernel_matrix(spec, points)?;
    let diagonal = k.diagonal();
    let dense = DenseSpd::new(k)?;
    let mut warnings = Vec::new();
    if dense.jitter() > 0.0 {
        warnings.push(format!("prior factorization needed jitter {:e}", dense.jitter()));
    }
    Ok(PriorCovariance { storage: Storage::Dense(dense), diagonal, warnings })
}

/// User-supplied dense covariance matrix.
pub fn explicit_covariance(matrix: DMatrix<f64>) -> Result<PriorCovariance> {
    let diagonal = matrix.diagonal();
    let dense = DenseSpd::new(matrix)?;
    let mut warnings = Vec::new();
    if dense.jitter() > 0.0 {
        warnings.push(format!("prior factorization needed jitter {:e}", dense.jitter()));
    }
    Ok(PriorCovariance { storage: Storage::Dense(dense), diagonal, warnings })
}

pub fn dense_covariance_1d(spec: &KernelSpec, grid: &[f64]) -> Result<PriorCovariance> {
    let points: Vec<Vec<f64>> = grid.iter().map(|&t| vec![t]).collect();
    dense_covariance(spec, &points)
}

/// `Σ₁ ⊗ Σ₁` with `Σ₁` the 1-D kernel matrix on `grid1d`. Each factor
/// carries the kernel's variance, so the diagonal is `σ⁴`.
pub fn separable_covariance(spec1d: &KernelSpec, grid1d: &[f64]) -> Result<PriorCovariance> {
    let s1 = kernel_matrix_1d(spec1d, grid1d)?;
    let factor = cholesky_with_jitter(&s1, spec1d.variance)?;
    let d1 = s1.diagonal();
    let diagonal = DVector::from_iterator(
        d1.len() * d1.len(),
        d1.iter().flat_map(|&a| d1.iter().map(move |&b| a * b)),
    );
    let mut warnings = Vec::new();
    if factor.jitter > 0.0 {
        warnings.push(format!("1-D prior factorization needed jitter {:e}", factor.jitter));
    }
    Ok(PriorCovariance {
        storage: Storage::Kronecker { map: KroneckerMap::new(s1.clone(), s1), factor },
        diagonal,
        warnings,
    })
}

/// Circulant-embedded covariance of an isotropic kernel on the cell-centred
/// `n1 × n1` grid of `[0,1]²`.
pub fn circulant_covariance(spec: &KernelSpec, n1: usize) -> Result<PriorCovariance> {
    if n1 == 0 {
        return Err(Error::InvalidArgument("grid side must be positive".into()));
    }
    spec.validate()?;
    let padded = 2 * n1;
    let h = 1.0 / n1 as f64;
    let mut torus = vec![0.0; padded * padded];
    for i in 0..padded {
        let di = i.min(padded - i) as f64 * h;
        for j in 0..padded {
            let dj = j.min(padded - j) as f64 * h;
            torus[i * padded + j] = kernel_eval(spec, (di * di + dj * dj).sqrt())?;
        }
    }
    let emb = CirculantEmbedding::from_torus_kernel(n1, &torus)?;
    let warnings = emb.warnings().to_vec();
    Ok(PriorCovariance {
        storage: Storage::Circulant(emb),
        diagonal: DVector::from_element(n1 * n1, spec.variance),
        warnings,
    })
}

impl PriorCovariance {
    pub fn into_shared(self) -> Arc<PriorCovariance> {
        Arc::new(self)
    }

    /// Smallest-to-largest spectrum ratio of a circulant embedding.
    pub fn min_spectrum_ratio(&self) -> Option<f64> {
        match &self.storage {
            Storage::Circulant(c) => Some(c.min_spectrum_ratio()),
            _ => None,
        }
    }
}

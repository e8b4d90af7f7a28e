//! Small dense helpers shared by the factorization-backed operators and the
//! desk-scale reference code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Jitter multipliers tried in order when a symmetric factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Smallest accepted squared pivot, relative to the matching diagonal entry.
const PIVOT_FLOOR: f64 = 16.0 * f64::EPSILON;

/// Cholesky factor together with the diagonal shift that made it succeed.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    /// Absolute diagonal shift added before factorizing (0 when none was needed).
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.factor.l_dirty();
        (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
    }
}

/// Factorizes `a + τ·scale·I`, escalating τ along [`JITTER_LADDER`].
pub fn cholesky_with_jitter(a: &DMatrix<f64>, scale: f64) -> Result<JitteredCholesky> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "cholesky of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let sym = symmetrize(a);
    for tau in JITTER_LADDER {
        let jitter = tau * scale;
        let mut shifted = sym.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = shifted.cholesky() {
            let l = factor.l_dirty();
            // pivots at the round-off level of the diagonal are noise, not rank
            let ok = (0..l.nrows()).all(|i| {
                let p = l[(i, i)];
                p.is_finite() && p * p > PIVOT_FLOOR * (sym[(i, i)].abs() + jitter)
            });
            if ok {
                if jitter > 0.0 {
                    log::debug!("cholesky succeeded with jitter {jitter:e}");
                }
                return Ok(JitteredCholesky { factor, jitter });
            }
        }
    }
    Err(Error::Factorization(format!(
        "matrix of order {} is not positive definite even after jitter {:e}",
        a.nrows(),
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
    )))
}

/// Plain Cholesky without jitter; errors if the matrix is not numerically SPD.
pub fn cholesky_strict(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Factorization(format!("matrix of order {} is not SPD", a.nrows())))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Factor `L` with `L Lᵀ = a` built from the eigendecomposition, clamping
/// negative eigenvalues to zero. Works for semidefinite `a`.
pub fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, mut vectors) = sym_eigen_desc(a);
    for (j, &w) in values.iter().enumerate() {
        let s = w.max(0.0).sqrt();
        vectors.column_mut(j).scale_mut(s);
    }
    vectors
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn relative_error(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    let denom = exact.norm();
    if denom == 0.0 {
        approx.norm()
    } else {
        (approx - exact).norm() / denom
    }
}

/// Row-major uniform midpoints on `[lo, hi]`.
pub fn midpoints(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / count as f64;
    (0..count).map(|i| lo + (i as f64 + 0.5) * h).collect()
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new(start: f64) -> Self {
        Self { sum: start, carry: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

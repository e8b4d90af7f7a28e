//! Dense reference computations for desk-scale verification.
//!
//! [`DenseProblem`] works with explicit `G`, `Σ`, `Γ` in parameter space and
//! evaluates the textbook formulas directly. [`DataSpace`] only needs the
//! `m × m` matrices `M = GΣGᵀ` and `Γ`; it diagonalizes the whitened Gram
//! matrix `F⁻¹MF⁻ᵀ = U S² Uᵀ` (`Γ = FFᵀ`) and evaluates Förstner distances,
//! KL divergences and mean errors between the exact posterior and any
//! approximation whose Hessian has the form `Gᵀ K̂ G`, without ever inverting
//! the (typically very ill-conditioned) prior covariance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::inference::ProblemHandles;
use crate::linalg::{cholesky_strict, cholesky_with_jitter, sym_eigen_desc, symmetrize};
use crate::operator::{LinearMap, SpdMap};
use crate::qgkb::BidiagonalMatrix;

/// Default relative threshold for nonzero generalized eigenvalues.
pub const EIG_THRESHOLD: f64 = 1e-12;
/// Threshold used for the effective data-space dimension.
pub const EFFECTIVE_DIM_THRESHOLD: f64 = 1e-10;

/// Columns `A e_j` of a linear map.
pub fn materialize_map(map: &dyn LinearMap) -> DMatrix<f64> {
    let (rows, cols) = (map.rows(), map.cols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut e = DVector::zeros(cols);
    for j in 0..cols {
        e[j] = 1.0;
        out.set_column(j, &map.forward(&e));
        e[j] = 0.0;
    }
    out
}

pub fn materialize_spd(map: &dyn SpdMap) -> DMatrix<f64> {
    let n = map.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        out.set_column(j, &map.apply(&e));
        e[j] = 0.0;
    }
    symmetrize(&out)
}

fn spd_check(name: &str, a: &DMatrix<f64>) -> Result<()> {
    let (vals, _) = sym_eigen_desc(a);
    let max = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * max {
        return Err(Error::InvalidArgument(format!(
            "{name} is not positive semidefinite (min eigenvalue {min:e}, max {max:e})"
        )));
    }
    Ok(())
}

fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky_strict(a)?.solve(b))
}

fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(cholesky_strict(a)?.solve(b))
}

/// Explicit linear-Gaussian problem `y = Gx + η`, `η ~ N(0, Γ)`, prior
/// `N(0, λ⁻¹Σ)`.
#[derive(Clone, Debug)]
pub struct DenseProblem {
    pub g: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub y: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct GeneralizedEig {
    /// Nonzero eigenvalues, descending.
    pub mu: DVector<f64>,
    /// `M`-orthonormal eigenvectors as columns.
    pub w: DMatrix<f64>,
}

impl DenseProblem {
    pub fn new(
        g: DMatrix<f64>,
        sigma: DMatrix<f64>,
        gamma: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self> {
        let (m, n) = g.shape();
        check_dim("dense Σ", n, sigma.nrows())?;
        check_dim("dense Σ", n, sigma.ncols())?;
        check_dim("dense Γ", m, gamma.nrows())?;
        check_dim("dense Γ", m, gamma.ncols())?;
        check_dim("dense y", m, y.len())?;
        spd_check("Σ", &sigma)?;
        spd_check("Γ", &gamma)?;
        Ok(Self { g, sigma: symmetrize(&sigma), gamma: symmetrize(&gamma), y })
    }

    /// Materializes the operators of `handles`; refuses when `n > cap`.
    pub fn from_handles(handles: &ProblemHandles, cap: usize) -> Result<Self> {
        let n = handles.forward.cols();
        if n > cap {
            return Err(Error::InvalidArgument(format!(
                "dense oracle disabled above n = {cap} (problem has n = {n})"
            )));
        }
        Self::new(
            materialize_map(handles.forward.as_ref()),
            materialize_spd(handles.prior.as_ref()),
            materialize_spd(handles.noise.as_ref()),
            handles.y.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.g.ncols()
    }

    pub fn m(&self) -> usize {
        self.g.nrows()
    }

    /// `M = G Σ Gᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        symmetrize(&(&self.g * &self.sigma * self.g.transpose()))
    }

    /// `H = Gᵀ Γ⁻¹ G`.
    pub fn hessian(&self) -> Result<DMatrix<f64>> {
        let gi_g = spd_solve(&self.gamma, &self.g)?;
        Ok(symmetrize(&(self.g.transpose() * gi_g)))
    }

    /// Posterior mean and covariance through the data-space (Woodbury) forms
    /// `x = ΣGᵀ(M + λΓ)⁻¹y`, `C = λ⁻¹Σ − λ⁻²ΣGᵀ(Γ + λ⁻¹M)⁻¹GΣ`.
    pub fn exact_posterior(&self, lambda: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.gram();
        let sg = &self.sigma * self.g.transpose();
        let mean = &sg * spd_solve_vec(&(&m + &self.gamma * lambda), &self.y)?;
        let inner = &self.gamma + &m / lambda;
        let cov = &self.sigma / lambda
            - &sg * spd_solve(&inner, &sg.transpose())? / (lambda * lambda);
        Ok((mean, symmetrize(&cov)))
    }

    /// Same posterior through the precision form `C = (H + λΣ⁻¹)⁻¹`,
    /// `x = C GᵀΓ⁻¹y`. Needs a well-conditioned `Σ`.
    pub fn exact_posterior_precision_route(
        &self,
        lambda: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n();
        let sigma_inv = spd_solve(&self.sigma, &DMatrix::identity(n, n))?;
        let precision = self.hessian()? + sigma_inv * lambda;
        let cov = spd_solve(&precision, &DMatrix::identity(n, n))?;
        let rhs = self.g.transpose() * spd_solve_vec(&self.gamma, &self.y)?;
        Ok((&cov * rhs, symmetrize(&cov)))
    }

    /// `(Ĥ + λΣ⁻¹)⁻¹` and its mean `C Ĥ`-style counterpart for an arbitrary
    /// Hessian approximation; the mean is returned by the caller's formula.
    pub fn covariance_from_hessian(&self, h: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        let n = self.n();
        let sigma_inv = spd_solve(&self.sigma, &DMatrix::identity(n, n))?;
        let precision = symmetrize(&(h + sigma_inv * lambda));
        Ok(symmetrize(&spd_solve(&precision, &DMatrix::identity(n, n))?))
    }

    /// `z_λ = (M + λΓ)⁻¹ y`.
    pub fn data_space_solve(&self, lambda: f64) -> Result<DVector<f64>> {
        spd_solve_vec(&(self.gram() + &self.gamma * lambda), &self.y)
    }

    /// `ι(u) = Σ Gᵀ u`.
    pub fn embed(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.sigma * (self.g.transpose() * u)
    }

    /// Nonzero generalized eigenpairs of `(M, Γ)` with `ŵᵀMŵ = 1`.
    pub fn generalized_eig(&self, threshold: f64) -> Result<GeneralizedEig> {
        let ds = DataSpace::from_dense(self.gram(), self.gamma.clone(), self.y.clone())?;
        Ok(ds.generalized_eig(threshold))
    }

    /// Numerical rank of `G` (singular values above `tol · s_max`).
    pub fn rank(&self, tol: f64) -> usize {
        let s = self.g.clone().singular_values();
        let max = s.max();
        s.iter().filter(|&&v| v > tol * max).count()
    }

    /// Orthonormal basis of `𝒩(M)` (eigenvalues below `tol · max`).
    pub fn gram_null_space(&self, tol: f64) -> DMatrix<f64> {
        let (vals, vecs) = sym_eigen_desc(&self.gram());
        let max = vals[0].abs().max(f64::MIN_POSITIVE);
        let cols: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= tol * max).collect();
        let mut out = DMatrix::zeros(self.m(), cols.len());
        for (j, &i) in cols.iter().enumerate() {
            out.set_column(j, &vecs.column(i));
        }
        out
    }

    /// `x = ι(u) + w` with `G w = 0` and `⟨ι(u), w⟩_{Σ⁻¹} = 0`; returns `(u, ι(u), w)`.
    pub fn decompose(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (vals, vecs) = sym_eigen_desc(&self.gram());
        let max = vals[0].abs().max(f64::MIN_POSITIVE);
        let gx = &self.g * x;
        let mut u = DVector::zeros(self.m());
        for i in 0..vals.len() {
            if vals[i] > EIG_THRESHOLD * max {
                let c = vecs.column(i).dot(&gx) / vals[i];
                u.axpy(c, &vecs.column(i), 1.0);
            }
        }
        let iu = self.embed(&u);
        let w = x - &iu;
        (u, iu, w)
    }

    /// LIS Hessian `H_r = Gᵀ(Σ_{i≤r} μ_i ŵ_i ŵ_iᵀ)G` and covariance
    /// `(H_r + λΣ⁻¹)⁻¹`, the latter evaluated as
    /// `λ⁻¹(Σ − Σ_{i≤r} μ_i/(λ+μ_i) e_i e_iᵀ)` with `e_i = ΣGᵀŵ_i`.
    pub fn lis_posterior(&self, r: usize, lambda: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let eig = self.generalized_eig(EIG_THRESHOLD)?;
        if r > eig.mu.len() {
            return Err(Error::InvalidArgument(format!(
                "LIS rank {r} exceeds the {} nonzero eigenpairs",
                eig.mu.len()
            )));
        }
        let n = self.n();
        let mut k = DMatrix::zeros(self.m(), self.m());
        let mut cov = self.sigma.clone();
        for i in 0..r {
            let w = eig.w.column(i);
            k += w * w.transpose() * eig.mu[i];
            let e = self.embed(&w.clone_owned());
            cov -= &e * e.transpose() * (eig.mu[i] / (lambda + eig.mu[i]));
        }
        let h_r = symmetrize(&(self.g.transpose() * k * &self.g));
        debug_assert_eq!(h_r.nrows(), n);
        Ok((h_r, symmetrize(&(cov / lambda))))
    }

    /// `Ĥ_k = Gᵀ V_k B_kᵀB_k V_kᵀ G`.
    pub fn krylov_hessian(&self, v: &DMatrix<f64>, b: &BidiagonalMatrix) -> DMatrix<f64> {
        let gv = self.g.transpose() * v;
        symmetrize(&(&gv * b.gram() * gv.transpose()))
    }

    /// `M_k = U_{k+1} B_k B_kᵀ U_{k+1}ᵀ`.
    pub fn compressed_gram(u: &DMatrix<f64>, b: &BidiagonalMatrix) -> DMatrix<f64> {
        let ub = u * b.to_dense();
        symmetrize(&(&ub * ub.transpose()))
    }

    /// `log det(Γ + λ⁻¹M) + yᵀ(Γ + λ⁻¹M)⁻¹y`.
    pub fn exact_marginal_nll(&self, lambda: f64) -> Result<f64> {
        self.marginal_nll_with_gram(&self.gram(), lambda)
    }

    /// Same with `M` replaced by `m_sub`.
    pub fn marginal_nll_with_gram(&self, m_sub: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        let c = cholesky_strict(&(&self.gamma + m_sub / lambda))?;
        let l = c.l();
        let log_det: f64 = (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum();
        Ok(log_det + self.y.dot(&c.solve(&self.y)))
    }

    pub fn log_det_gamma(&self) -> Result<f64> {
        let l = cholesky_strict(&self.gamma)?.l();
        Ok((0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum())
    }
}

/// Discrepancy between the exact posterior and an approximation at one `λ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Discrepancy {
    pub forstner: f64,
    /// `KL(approx ‖ exact)`.
    pub kl: f64,
    /// `‖x_λ − x̂‖²_{C_λ⁻¹}`.
    pub mean_error_sq: f64,
    /// `Tr(A − Â)`.
    pub trace_gap: f64,
    /// `‖A − Â‖_F`.
    pub frobenius_gap: f64,
}

/// Whitened data-space description of a problem: `Γ = FFᵀ` and
/// `F⁻¹MF⁻ᵀ = U diag(s²) Uᵀ`.
#[derive(Clone, Debug)]
pub struct DataSpace {
    gram: DMatrix<f64>,
    f: DMatrix<f64>,
    s2: DVector<f64>,
    u: DMatrix<f64>,
    whitened_y: DVector<f64>,
}

impl DataSpace {
    pub fn from_dense(gram: DMatrix<f64>, gamma: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let m = gram.nrows();
        check_dim("data-space Γ", m, gamma.nrows())?;
        check_dim("data-space y", m, y.len())?;
        let f = match cholesky_strict(&gamma) {
            Ok(c) => c.l(),
            Err(_) => {
                let scale = gamma.diagonal().amax().max(f64::MIN_POSITIVE);
                cholesky_with_jitter(&gamma, scale)?.lower()
            }
        };
        let finv_m = f
            .solve_lower_triangular(&symmetrize(&gram))
            .ok_or_else(|| Error::Factorization("singular noise factor".into()))?;
        let whitened = f
            .solve_lower_triangular(&finv_m.transpose())
            .ok_or_else(|| Error::Factorization("singular noise factor".into()))?;
        let (mut s2, u) = sym_eigen_desc(&whitened);
        // eigenvalues at round-off level are exact zeros: a data-space basis
        // vector may carry a large 𝒩(M) component, and a spurious √ε-sized
        // singular value would turn it into a visible error
        let cut = EIG_THRESHOLD * s2.get(0).copied().unwrap_or(0.0).max(0.0);
        s2.iter_mut().for_each(|v| *v = if *v > cut { *v } else { 0.0 });
        let whitened_y = u.transpose()
            * f.solve_lower_triangular(&y)
                .ok_or_else(|| Error::Factorization("singular noise factor".into()))?;
        Ok(Self { gram: symmetrize(&gram), f, s2, u, whitened_y })
    }

    /// Materializes `M` and `Γ` from operators (`m` applications each).
    pub fn from_operators(gram: &dyn SpdMap, noise: &dyn SpdMap, y: &DVector<f64>) -> Result<Self> {
        Self::from_dense(materialize_spd(gram), materialize_spd(noise), y.clone())
    }

    pub fn dim(&self) -> usize {
        self.s2.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// All generalized eigenvalues of `(M, Γ)`, descending (clamped at 0).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.s2
    }

    /// Count of eigenvalues above `rel · μ_max`.
    pub fn effective_dimension(&self, rel: f64) -> usize {
        let max = self.s2.get(0).copied().unwrap_or(0.0);
        self.s2.iter().filter(|&&v| v > rel * max).count()
    }

    pub fn generalized_eig(&self, threshold: f64) -> GeneralizedEig {
        let r = self.effective_dimension(threshold);
        let mut w = DMatrix::zeros(self.dim(), r);
        for i in 0..r {
            let col = self
                .f
                .transpose()
                .solve_upper_triangular(&self.u.column(i).clone_owned())
                .expect("F is nonsingular");
            w.set_column(i, &(col / self.s2[i].sqrt()));
        }
        GeneralizedEig { mu: self.s2.rows(0, r).clone_owned(), w }
    }

    /// Data-space coefficients `c` of the exact mean `x_λ = ΣGᵀc`,
    /// i.e. `z_λ = (M + λΓ)⁻¹ y`.
    pub fn exact_coefficients(&self, lambda: f64) -> DVector<f64> {
        self.truncated_coefficients(self.dim(), lambda)
    }

    /// Coefficients of the LIS mean: `(M + λΓ)⁻¹y` restricted to the
    /// leading `r` eigendirections.
    pub fn truncated_coefficients(&self, r: usize, lambda: f64) -> DVector<f64> {
        let mut wy = DVector::zeros(self.dim());
        for i in 0..r.min(self.dim()) {
            wy[i] = self.whitened_y[i] / (self.s2[i] + lambda);
        }
        self.f
            .transpose()
            .solve_upper_triangular(&(&self.u * wy))
            .expect("F is nonsingular")
    }

    /// `Uᵀ Fᵀ V_k B_kᵀ`: whitened factor of the Krylov approximation
    /// `K̂ = V_k T_k V_kᵀ`.
    pub fn krylov_factor(&self, v: &DMatrix<f64>, b: &BidiagonalMatrix) -> DMatrix<f64> {
        self.u.transpose() * (self.f.transpose() * v) * b.to_dense().transpose()
    }

    /// Whitened factor of the rank-`r` LIS approximation (exact unit block).
    pub fn lis_factor(&self, r: usize) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.dim(), r);
        for i in 0..r.min(self.dim()) {
            z[(i, i)] = 1.0;
        }
        z
    }

    /// Compares the exact posterior with the approximation whose Hessian is
    /// `Gᵀ K̂ G`, `K̂ = F⁻ᵀ U Z Zᵀ Uᵀ F⁻¹` (`z_factor = Z`), and whose mean is
    /// `ΣGᵀ c` (`mean_coeffs = c`).
    pub fn discrepancy(
        &self,
        z_factor: &DMatrix<f64>,
        mean_coeffs: &DVector<f64>,
        lambda: f64,
    ) -> Result<Discrepancy> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument("λ must be positive".into()));
        }
        let m = self.dim();
        check_dim("whitened factor rows", m, z_factor.nrows())?;
        // Ŝ = S Z Zᵀ S;  X = (λ + S²)^{-1/2} (Ŝ − S²) (λ + S²)^{-1/2}
        let s = self.s2.map(|v| v.sqrt());
        let mut sz = z_factor.clone();
        for i in 0..m {
            sz.row_mut(i).scale_mut(s[i]);
        }
        let mut q = sz.clone();
        for i in 0..m {
            q.row_mut(i).scale_mut(1.0 / (lambda + self.s2[i]).sqrt());
        }
        let mut x = &q * q.transpose();
        for i in 0..m {
            x[(i, i)] -= self.s2[i] / (lambda + self.s2[i]);
        }
        let xs = x.symmetric_eigenvalues();
        let mut df_sq = 0.0;
        let mut kl_trace = 0.0;
        for &xi in xs.iter() {
            if !(xi > -1.0) {
                return Err(Error::Numerical(format!(
                    "approximate precision lost definiteness (eigenvalue shift {xi:e})"
                )));
            }
            let l = xi.ln_1p();
            df_sq += l * l;
            kl_trace += kl_term(xi);
        }
        let shat = &sz * sz.transpose();
        let mut diff = -shat;
        for i in 0..m {
            diff[(i, i)] += self.s2[i];
        }
        let trace_gap = diff.trace();
        let frobenius_gap = diff.norm();

        // with ω = Uᵀ Fᵀ w: (Mw)ᵀΓ⁻¹(Mw) = ‖S² ω‖², wᵀMw = ‖S ω‖²
        let w = self.exact_coefficients(lambda) - mean_coeffs;
        let omega = self.u.transpose() * (self.f.transpose() * w);
        let mean_error_sq = omega
            .iter()
            .zip(self.s2.iter())
            .map(|(o, s2)| s2 * (s2 + lambda) * o * o)
            .sum::<f64>();
        Ok(Discrepancy {
            forstner: df_sq.sqrt(),
            kl: 0.5 * (kl_trace + mean_error_sq),
            mean_error_sq,
            trace_gap,
            frobenius_gap,
        })
    }

    /// `log det(Γ + λ⁻¹M) + yᵀ(Γ + λ⁻¹M)⁻¹y` from the whitened spectrum.
    pub fn exact_marginal_nll(&self, lambda: f64) -> f64 {
        let l = &self.f;
        let log_det_gamma: f64 = (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum();
        let mut out = log_det_gamma;
        for i in 0..self.dim() {
            out += (self.s2[i] / lambda).ln_1p();
            out += self.whitened_y[i].powi(2) * lambda / (lambda + self.s2[i]);
        }
        out
    }

    pub fn log_det_gamma(&self) -> f64 {
        let l = &self.f;
        (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
    }
}

/// `σ − 1 − ln σ` with `σ = 1/(1+x)`, accurate for small `x`.
fn kl_term(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        x * x * (0.5 - x * (2.0 / 3.0 - x * (0.75 - 0.8 * x)))
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

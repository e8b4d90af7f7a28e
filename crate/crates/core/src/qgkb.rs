//! Quotient-space Golub–Kahan bidiagonalization.
//!
//! Builds `Γ⁻¹`-orthonormal vectors `u_1, u_2, …`, `M`-orthonormal vectors
//! `v_1, v_2, …` and the lower-bidiagonal coupling `B_k` such that
//!
//! ```text
//! M V_k            = U_{k+1} B_k
//! Γ⁻¹ U_{k+1}      = V_k B_kᵀ + α_{k+1} v_{k+1} e_{k+1}ᵀ
//! ```
//!
//! with `M = G Σ Gᵀ` never formed. The iteration stops at the first `k` with
//! `α_{k+1} β_{k+1} = 0` (the breakdown step), after at most `rank(G)` steps.
//!
//! Every vector `M v_i` is cached, so each step costs one application of `M`
//! and one of `Γ⁻¹`, also when full reorthogonalization is on.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::operator::{GramMap, LinearMap, SpdMap};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownCause {
    /// `α_{k+1}` vanished: `Γ⁻¹u_{k+1}` lies in the span already explored.
    AlphaZero,
    /// `β_{k+1}` vanished: `M v_k` is already in the span of `u_1..u_k`.
    BetaZero,
}

#[derive(Clone, Copy, Debug)]
pub struct QgkbOptions {
    /// Full (two-pass classical Gram–Schmidt) reorthogonalization.
    pub reorth: bool,
    /// A normalizer below `breakdown_tol · scale` declares breakdown, where
    /// `scale` estimates `sqrt(λ_max(Γ⁻¹M))`.
    pub breakdown_tol: f64,
    /// Power iterations used for the breakdown scale estimate.
    pub scale_iterations: usize,
}

impl Default for QgkbOptions {
    fn default() -> Self {
        Self { reorth: true, breakdown_tol: 1e-12, scale_iterations: 10 }
    }
}

/// Incremental bidiagonalization state.
///
/// After [`QgkbState::init`] `k = 0` and `β₁, u₁, α₁, v₁` are stored. Step `j`
/// appends `β_{j+1}, u_{j+1}, α_{j+1}, v_{j+1}` and sets `k = j`, so a healthy
/// state always holds one more `α`/`v` than it has completed steps.
pub struct QgkbState {
    gram: Arc<dyn SpdMap>,
    factor: Option<Factor>,
    noise: Arc<dyn SpdMap>,
    y: DVector<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    u: Vec<DVector<f64>>,
    noise_inv_u: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    mv: Vec<DVector<f64>>,
    /// `Gᵀ v_i` and `Σ Gᵀ v_i`, kept when `M = G Σ Gᵀ` is given in factored form.
    adj_v: Vec<DVector<f64>>,
    images: Vec<DVector<f64>>,
    broken: Option<BreakdownCause>,
    k: usize,
    options: QgkbOptions,
    scale: f64,
}

/// `M = G Σ Gᵀ` through its factors. With an exactly rank-deficient `M` the
/// vectors `v_i` carry a component in `𝒩(M)` that the recurrence amplifies
/// by roughly `β/α` per step. It never changes the class of `v_i`, but
/// `sᵀ(M s)` for a large `s` has a rounding floor of order `ε‖M‖‖s‖²` and the
/// square root turns that into an `α` floor near `√ε`, which hides breakdown
/// and erodes `M`-orthogonality. `α² = tᵀΣt` with `t = Gᵀs` has no such floor.
struct Factor {
    forward: Arc<dyn LinearMap>,
    prior: Arc<dyn SpdMap>,
}

fn power_scale(gram: &dyn SpdMap, noise: &dyn SpdMap, iterations: usize) -> f64 {
    // Rayleigh quotients of the pencil (M, Γ): a lower estimate of λ_max(Γ⁻¹M).
    let mut rng = rng::seeded(0x9b1d);
    let mut z = rng::normal_vector(&mut rng, gram.dim());
    let mut best: f64 = 0.0;
    for _ in 0..iterations.max(1) {
        let nz = z.norm();
        if nz == 0.0 {
            break;
        }
        z /= nz;
        let mz = gram.apply(&z);
        let gz = noise.apply(&z);
        let denom = z.dot(&gz);
        if denom > 0.0 {
            best = best.max(z.dot(&mz) / denom);
        }
        z = match noise.inverse_apply(&mz) {
            Some(next) => next,
            None => break,
        };
    }
    best.max(0.0).sqrt()
}

impl QgkbState {
    /// Starts the iteration from data `y`: `β₁ = ‖y‖_{Γ⁻¹}`, `u₁ = y/β₁`,
    /// `α₁ = ‖Γ⁻¹u₁‖_M`, `v₁ = Γ⁻¹u₁/α₁`.
    pub fn init(
        gram: Arc<dyn SpdMap>,
        noise: Arc<dyn SpdMap>,
        y: &DVector<f64>,
        options: QgkbOptions,
    ) -> Result<Self> {
        Self::start(gram, None, noise, y, options)
    }

    /// As [`QgkbState::init`] for `M = G Σ Gᵀ`, forming every `M` product
    /// from `Gᵀ v` so that components of `v` in `𝒩(M)` cannot pollute them.
    pub fn init_factored(
        forward: Arc<dyn LinearMap>,
        prior: Arc<dyn SpdMap>,
        noise: Arc<dyn SpdMap>,
        y: &DVector<f64>,
        options: QgkbOptions,
    ) -> Result<Self> {
        let gram = Arc::new(GramMap::new(forward.clone(), prior.clone())?);
        Self::start(gram, Some(Factor { forward, prior }), noise, y, options)
    }

    fn start(
        gram: Arc<dyn SpdMap>,
        factor: Option<Factor>,
        noise: Arc<dyn SpdMap>,
        y: &DVector<f64>,
        options: QgkbOptions,
    ) -> Result<Self> {
        check_dim("noise covariance", gram.dim(), noise.dim())?;
        check_dim("data vector", gram.dim(), y.len())?;
        if !noise.has_inverse() {
            return Err(Error::MissingCapability("an inverse noise covariance application"));
        }
        if y.iter().all(|&v| v == 0.0) {
            return Err(Error::EmptyData);
        }
        let noise_inv_y = noise.inverse_apply(y).expect("checked above");
        let beta_sq = y.dot(&noise_inv_y);
        if !(beta_sq > 0.0) || !beta_sq.is_finite() {
            return Err(Error::Numerical(format!("yᵀΓ⁻¹y = {beta_sq} is not positive")));
        }
        let beta1 = beta_sq.sqrt();
        let scale = power_scale(gram.as_ref(), noise.as_ref(), options.scale_iterations);
        let mut state = Self {
            gram,
            factor,
            noise,
            y: y.clone(),
            alphas: Vec::new(),
            betas: vec![beta1],
            u: vec![y / beta1],
            noise_inv_u: vec![noise_inv_y / beta1],
            v: Vec::new(),
            mv: Vec::new(),
            adj_v: Vec::new(),
            images: Vec::new(),
            broken: None,
            k: 0,
            options,
            scale,
        };
        let s = state.noise_inv_u[0].clone();
        state.push_alpha(s);
        Ok(state)
    }

    fn scale_estimate(&self) -> f64 {
        let running = self
            .alphas
            .iter()
            .chain(self.betas.iter().skip(1))
            .fold(0.0_f64, |a, &b| a.max(b));
        self.scale.max(running)
    }

    fn threshold(&self) -> f64 {
        self.options.breakdown_tol * self.scale_estimate()
    }

    /// Rounding level of `‖s‖_M` computed through `Gᵀ s`: the error in `Gᵀ s`
    /// is of order `ε‖s‖`, and `‖·‖_M ≤ scale · ‖·‖_Γ`. An `α` below it carries
    /// no information, which happens when `s` has a large `𝒩(M)` component.
    fn rounding_floor(&self, s: &DVector<f64>) -> f64 {
        let gamma_norm = s.dot(&self.noise.apply(s)).max(0.0).sqrt();
        8.0 * f64::EPSILON * (s.len() as f64).sqrt() * self.scale_estimate() * gamma_norm
    }

    /// Normalizes `s` in the `M` norm (after reorthogonalization) and stores
    /// `α`, `v`, `M v`, or records an `α` breakdown.
    fn push_alpha(&mut self, mut s: DVector<f64>) {
        if let Some(factor) = &self.factor {
            let mut t = factor.forward.adjoint(&s);
            if self.options.reorth {
                for _ in 0..2 {
                    for i in 0..self.v.len() {
                        let c = self.images[i].dot(&t);
                        s.axpy(-c, &self.v[i], 1.0);
                        t.axpy(-c, &self.adj_v[i], 1.0);
                    }
                }
            }
            let image = factor.prior.apply(&t);
            let alpha = t.dot(&image).max(0.0).sqrt();
            let floor = self.threshold().max(self.rounding_floor(&s));
            if !(alpha > floor) || !alpha.is_finite() {
                self.broken = Some(BreakdownCause::AlphaZero);
                return;
            }
            let ms = factor.forward.forward(&image);
            self.alphas.push(alpha);
            self.v.push(s / alpha);
            self.mv.push(ms / alpha);
            self.adj_v.push(t / alpha);
            self.images.push(image / alpha);
            return;
        }
        if self.options.reorth {
            for _ in 0..2 {
                for (v_i, mv_i) in self.v.iter().zip(&self.mv) {
                    let c = mv_i.dot(&s);
                    s.axpy(-c, v_i, 1.0);
                }
            }
        }
        let ms = self.gram.apply(&s);
        let radicand = s.dot(&ms);
        let alpha = radicand.max(0.0).sqrt();
        if !(alpha > self.threshold()) || !alpha.is_finite() {
            self.broken = Some(BreakdownCause::AlphaZero);
            return;
        }
        self.alphas.push(alpha);
        self.v.push(s / alpha);
        self.mv.push(ms / alpha);
    }

    /// Performs step `k → k + 1`.
    pub fn step(&mut self) -> Result<()> {
        if let Some(cause) = self.broken {
            return Err(Error::BrokenState(cause));
        }
        let k = self.k;
        // r = M v_{k+1} − α_{k+1} u_{k+1}   (0-based: v[k], u[k])
        let mut r = &self.mv[k] - &self.u[k] * self.alphas[k];
        if self.options.reorth {
            for _ in 0..2 {
                for (u_i, gu_i) in self.u.iter().zip(&self.noise_inv_u) {
                    let c = gu_i.dot(&r);
                    r.axpy(-c, u_i, 1.0);
                }
            }
        }
        let g = self
            .noise
            .inverse_apply(&r)
            .ok_or(Error::MissingCapability("an inverse noise covariance application"))?;
        let beta = r.dot(&g).max(0.0).sqrt();
        self.k = k + 1;
        if !(beta > self.threshold()) || !beta.is_finite() {
            // the last row of B_k is zero; u_{k+2} is stored as the zero vector
            self.betas.push(0.0);
            self.u.push(DVector::zeros(r.len()));
            self.noise_inv_u.push(DVector::zeros(r.len()));
            self.broken = Some(BreakdownCause::BetaZero);
            return Ok(());
        }
        self.betas.push(beta);
        self.u.push(r / beta);
        let gu = g / beta;
        let s = &gu - &self.v[k] * beta;
        self.noise_inv_u.push(gu);
        self.push_alpha(s);
        Ok(())
    }

    /// Number of completed steps.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn broken(&self) -> Option<BreakdownCause> {
        self.broken
    }

    /// The breakdown step `k_b`, once reached.
    pub fn breakdown_step(&self) -> Option<usize> {
        self.broken.map(|_| self.k)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta1(&self) -> f64 {
        self.betas[0]
    }

    /// `α_1, α_2, …` (includes `α_{k+1}` unless it broke down).
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `β_1, β_2, …, β_{k+1}`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `α_i` (1-based), or 0 when not available (breakdown).
    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas.get(i - 1).copied().unwrap_or(0.0)
    }

    /// `β_i` (1-based), or 0 when not available.
    pub fn beta(&self, i: usize) -> f64 {
        self.betas.get(i - 1).copied().unwrap_or(0.0)
    }

    /// `u_i`, 1-based.
    pub fn u(&self, i: usize) -> &DVector<f64> {
        &self.u[i - 1]
    }

    /// `v_i`, 1-based.
    pub fn v(&self, i: usize) -> &DVector<f64> {
        &self.v[i - 1]
    }

    /// Cached `M v_i`, 1-based.
    pub fn mv(&self, i: usize) -> &DVector<f64> {
        &self.mv[i - 1]
    }

    /// Number of stored `v` vectors (k or k + 1).
    pub fn v_count(&self) -> usize {
        self.v.len()
    }

    pub fn gram(&self) -> &Arc<dyn SpdMap> {
        &self.gram
    }

    pub fn noise(&self) -> &Arc<dyn SpdMap> {
        &self.noise
    }

    pub fn options(&self) -> &QgkbOptions {
        &self.options
    }

    /// `V_k` as an `m × k` matrix.
    pub fn v_matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        if k > self.v.len() {
            return Err(Error::InvalidArgument(format!(
                "V_{k} requested but only {} vectors stored",
                self.v.len()
            )));
        }
        Ok(columns(&self.v[..k], self.y.len()))
    }

    /// `Σ Gᵀ V_k` as an `n × k` matrix, available for factored states.
    pub fn images(&self, k: usize) -> Option<DMatrix<f64>> {
        let factor = self.factor.as_ref()?;
        if k > self.images.len() {
            return None;
        }
        Some(columns(&self.images[..k], factor.forward.cols()))
    }

    /// `U_{k+1}` as an `m × (k+1)` matrix.
    pub fn u_matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        if k + 1 > self.u.len() {
            return Err(Error::InvalidArgument(format!(
                "U_{} requested but only {} vectors stored",
                k + 1,
                self.u.len()
            )));
        }
        Ok(columns(&self.u[..=k], self.y.len()))
    }

    /// `B_k` for `k ≤ self.k()`.
    pub fn bidiagonal(&self, k: usize) -> Result<BidiagonalMatrix> {
        if k > self.k {
            return Err(Error::InvalidArgument(format!(
                "B_{k} requested after only {} steps",
                self.k
            )));
        }
        Ok(BidiagonalMatrix::new(
            self.alphas[..k].to_vec(),
            self.betas[1..=k].to_vec(),
        ))
    }
}

fn columns(vs: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, vs.len());
    for (j, v) in vs.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

/// Compact SVD `B = P S Qᵀ` with singular values in descending order.
#[derive(Clone, Debug)]
pub struct BidiagonalSvd {
    pub p: DMatrix<f64>,
    pub s: DVector<f64>,
    pub q: DMatrix<f64>,
}

/// `(k+1) × k` lower-bidiagonal matrix with diagonal `α_1..α_k` and
/// subdiagonal `β_2..β_{k+1}`.
#[derive(Debug)]
pub struct BidiagonalMatrix {
    diag: Vec<f64>,
    subdiag: Vec<f64>,
    svd: OnceLock<BidiagonalSvd>,
}

impl Clone for BidiagonalMatrix {
    fn clone(&self) -> Self {
        let out = Self::new(self.diag.clone(), self.subdiag.clone());
        if let Some(svd) = self.svd.get() {
            let _ = out.svd.set(svd.clone());
        }
        out
    }
}

impl BidiagonalMatrix {
    pub fn new(diag: Vec<f64>, subdiag: Vec<f64>) -> Self {
        assert_eq!(diag.len(), subdiag.len(), "B_k needs k diagonal and k subdiagonal entries");
        Self { diag, subdiag, svd: OnceLock::new() }
    }

    pub fn k(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn subdiag(&self) -> &[f64] {
        &self.subdiag
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut b = DMatrix::zeros(k + 1, k);
        for i in 0..k {
            b[(i, i)] = self.diag[i];
            b[(i + 1, i)] = self.subdiag[i];
        }
        b
    }

    /// `T_k = B_kᵀ B_k` (symmetric tridiagonal).
    pub fn gram(&self) -> DMatrix<f64> {
        let b = self.to_dense();
        b.tr_mul(&b)
    }

    pub fn svd(&self) -> &BidiagonalSvd {
        self.svd.get_or_init(|| {
            let k = self.k();
            if k == 0 {
                return BidiagonalSvd {
                    p: DMatrix::zeros(1, 0),
                    s: DVector::zeros(0),
                    q: DMatrix::zeros(0, 0),
                };
            }
            let svd = self.to_dense().svd(true, true);
            let u = svd.u.expect("requested");
            let vt = svd.v_t.expect("requested");
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
            let mut p = DMatrix::zeros(k + 1, k);
            let mut q = DMatrix::zeros(k, k);
            let mut s = DVector::zeros(k);
            for (dst, &src) in order.iter().enumerate() {
                p.set_column(dst, &u.column(src));
                q.set_column(dst, &vt.row(src).transpose());
                s[dst] = svd.singular_values[src];
            }
            BidiagonalSvd { p, s, q }
        })
    }
}

//! Empirical-Bayes estimation of the prior precision scale `λ` inside the
//! bidiagonalization, and the low-rank Gaussian posterior it induces.
//!
//! At step `k` the projected negative log marginal likelihood
//! `L_k(λ) = Σ log(1 + s_i²/λ) + β₁²(1 − Σ s_i²/(s_i²+λ) p_{1i}²)` (with
//! `B_k = P S Qᵀ`) is minimized over `λ`, and the approximate posterior
//!
//! ```text
//! mean = Σ Gᵀ V_k ξ,                 ξ = (B_kᵀB_k + λI)⁻¹ B_kᵀ β₁ e₁
//! cov  = λ⁻¹Σ − λ⁻¹ Σ Gᵀ V_k (λI + T_k)⁻¹ T_k V_kᵀ G Σ,   T_k = B_kᵀ B_k
//! ```
//!
//! is available matrix-free from `(λ, V_k, B_k)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{LinearMap, SpdMap};
use crate::qgkb::{BidiagonalMatrix, BreakdownCause, QgkbOptions, QgkbState};

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("λ must be positive and finite, got {lambda}")))
    }
}

/// `1 − ‖Pᵀe₁‖²`: the squared first entry of the normalized left null vector
/// of `B_k`, obtained from the bidiagonal recurrence instead of the
/// cancellation-prone subtraction.
fn e1_outside_range(b: &BidiagonalMatrix) -> f64 {
    let k = b.k();
    if k == 0 {
        return 1.0;
    }
    // Bᵀ z = 0:  α_i z_i + β_{i+1} z_{i+1} = 0
    let mut z = Vec::with_capacity(k + 1);
    z.push(1.0_f64);
    for i in 0..k {
        let beta = b.subdiag()[i];
        if beta == 0.0 {
            return 0.0;
        }
        let next = -b.diag()[i] * z[i] / beta;
        z.push(next);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e100 {
            z.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let norm_sq: f64 = z.iter().map(|v| v * v).sum();
    z[0] * z[0] / norm_sq
}

/// Projected negative log marginal likelihood (without `log det Γ`).
pub fn marginal_nll(b: &BidiagonalMatrix, beta1: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let svd = b.svd();
    let outside = e1_outside_range(b);
    let mut logs = 0.0;
    let mut fit = outside;
    for i in 0..b.k() {
        let s2 = svd.s[i] * svd.s[i];
        let p1 = svd.p[(0, i)];
        logs += (s2 / lambda).ln_1p();
        fit += p1 * p1 * lambda / (s2 + lambda);
    }
    Ok(logs + beta1 * beta1 * fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSearch {
    pub lo: f64,
    pub hi: f64,
    /// Relative tolerance on `λ` (absolute on `log λ`).
    pub tol: f64,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self { lo: 1e-10, hi: 1e10, tol: 1e-8 }
    }
}

impl LambdaSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid λ bracket [{}, {}] with tolerance {}",
                self.lo, self.hi, self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub nll: f64,
    /// The minimizer sits on an end of the bracket.
    pub at_boundary: bool,
}

/// Points in the coarse log-spaced scan that precedes the golden-section
/// refinement; it guards against local minima of `L_k`.
const SCAN_POINTS: usize = 241;

/// Minimizes [`marginal_nll`] over `[lo, hi]` on a log scale.
pub fn estimate_lambda(
    b: &BidiagonalMatrix,
    beta1: f64,
    search: &LambdaSearch,
) -> Result<LambdaEstimate> {
    search.validate()?;
    if b.k() == 0 {
        return Ok(LambdaEstimate {
            lambda: search.hi,
            nll: beta1 * beta1,
            at_boundary: true,
        });
    }
    let (a, z) = (search.lo.ln(), search.hi.ln());
    let f = |t: f64| marginal_nll(b, beta1, t.exp());
    let step = (z - a) / (SCAN_POINTS - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..SCAN_POINTS {
        let t = if i == SCAN_POINTS - 1 { z } else { a + step * i as f64 };
        let v = f(t)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let centre = best.0;
    let lo = if centre == 0 { a } else { a + step * (centre - 1) as f64 };
    let hi = if centre == SCAN_POINTS - 1 { z } else { (a + step * (centre + 1) as f64).min(z) };
    let (t, v) = golden_section(&f, lo, hi, search.tol)?;
    let mut out = (t, v);
    // keep the scan point if refinement did not improve on it
    let scan_t = if centre == SCAN_POINTS - 1 { z } else { a + step * centre as f64 };
    if best.1 < v {
        out = (scan_t, best.1);
    }
    let at_boundary = (out.0 - a).abs() <= 2.0 * search.tol || (z - out.0).abs() <= 2.0 * search.tol;
    Ok(LambdaEstimate {
        lambda: out.0.exp(),
        nll: out.1,
        at_boundary,
    })
}

fn golden_section(
    f: &dyn Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let candidates = [(a, f(a)?), (b, f(b)?), (c, fc), (d, fd)];
    Ok(candidates
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc }))
}

/// `ξ = (B_kᵀB_k + λI)⁻¹ B_kᵀ β₁ e₁`, evaluated through the SVD of `B_k`.
pub fn projected_solution(b: &BidiagonalMatrix, beta1: f64, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let svd = b.svd();
    let mut xi = DVector::zeros(b.k());
    for i in 0..b.k() {
        let s = svd.s[i];
        let coeff = beta1 * s * svd.p[(0, i)] / (s * s + lambda);
        xi.axpy(coeff, &svd.q.column(i), 1.0);
    }
    Ok(xi)
}

/// `Q diag(s²/(λ + s²)) Qᵀ = (λI + T_k)⁻¹ T_k`.
fn damped_projector(b: &BidiagonalMatrix, lambda: f64) -> DMatrix<f64> {
    let svd = b.svd();
    let weights = svd.s.map(|s| s * s / (lambda + s * s));
    &svd.q * DMatrix::from_diagonal(&weights) * svd.q.transpose()
}

/// One Ritz pair of the pencil `(M, Γ)` from the projected problem.
#[derive(Clone, Debug)]
pub struct RitzPair {
    pub theta: f64,
    /// Coefficients `q_i` of the Ritz vector `V_k q_i`.
    pub coeffs: DVector<f64>,
    /// `α_{k+1} β_{k+1} |e_kᵀ q_i|`; multiplied by `‖Γ v_{k+1}‖` it equals
    /// `‖M V_k q_i − θ_i Γ V_k q_i‖`.
    pub residual: f64,
}

/// Ritz pairs at step `k`, largest `θ` first.
pub fn ritz_pairs(state: &QgkbState, k: usize) -> Result<Vec<RitzPair>> {
    if k == 0 {
        return Err(Error::InvalidArgument("Ritz pairs need k ≥ 1".into()));
    }
    let b = state.bidiagonal(k)?;
    let svd = b.svd();
    let coupling = state.alpha(k + 1) * state.beta(k + 1);
    Ok((0..k)
        .map(|i| {
            let q = svd.q.column(i).clone_owned();
            RitzPair {
                theta: svd.s[i] * svd.s[i],
                residual: coupling * q[k - 1].abs(),
                coeffs: q,
            }
        })
        .collect())
}

/// Low-rank Gaussian posterior at a fixed `(k, λ)`.
#[derive(Clone)]
pub struct PosteriorApproximation {
    lambda: f64,
    beta1: f64,
    b: BidiagonalMatrix,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    xi: DVector<f64>,
    forward: Arc<dyn LinearMap>,
    prior: Arc<dyn SpdMap>,
}

impl PosteriorApproximation {
    /// Builds the approximation from the first `k` steps of `state`.
    pub fn from_state(
        forward: Arc<dyn LinearMap>,
        prior: Arc<dyn SpdMap>,
        state: &QgkbState,
        k: usize,
        lambda: f64,
    ) -> Result<Self> {
        let v = state.v_matrix(k)?;
        let w = match state.images(k) {
            Some(w) => w,
            None => {
                let mut w = DMatrix::zeros(forward.cols(), k);
                for j in 0..k {
                    w.set_column(j, &prior.apply(&forward.adjoint(&v.column(j).clone_owned())));
                }
                w
            }
        };
        Self::from_parts(forward, prior, state.bidiagonal(k)?, state.beta1(), v, w, lambda)
    }

    /// Builds the approximation from precomputed `V_k` and `W = Σ Gᵀ V_k`.
    pub fn from_parts(
        forward: Arc<dyn LinearMap>,
        prior: Arc<dyn SpdMap>,
        b: BidiagonalMatrix,
        beta1: f64,
        v: DMatrix<f64>,
        w: DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        let k = b.k();
        if v.ncols() != k || w.ncols() != k {
            return Err(Error::DimensionMismatch {
                context: "posterior basis columns",
                expected: k,
                found: v.ncols().min(w.ncols()),
            });
        }
        let xi = projected_solution(&b, beta1, lambda)?;
        Ok(Self { lambda, beta1, b, v, w, xi, forward, prior })
    }

    /// Same subspace, different `λ`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let mut out = self.clone();
        out.lambda = lambda;
        out.xi = projected_solution(&self.b, self.beta1, lambda)?;
        Ok(out)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k(&self) -> usize {
        self.b.k()
    }

    pub fn bidiagonal(&self) -> &BidiagonalMatrix {
        &self.b
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Cached `W = Σ Gᵀ V_k`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn prior(&self) -> &Arc<dyn SpdMap> {
        &self.prior
    }

    pub fn forward(&self) -> &Arc<dyn LinearMap> {
        &self.forward
    }

    /// `Σ Gᵀ (V_k ξ)` with one adjoint and one prior application.
    pub fn mean(&self) -> DVector<f64> {
        if self.k() == 0 {
            return DVector::zeros(self.forward.cols());
        }
        self.prior.apply(&self.forward.adjoint(&(&self.v * &self.xi)))
    }

    /// `W ξ`, the same mean through the cached basis.
    pub fn mean_from_basis(&self) -> DVector<f64> {
        &self.w * &self.xi
    }

    /// Applies the approximate posterior covariance to `x`.
    pub fn cov_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        crate::error::check_dim("posterior_cov_apply", self.forward.cols(), x.len())?;
        let sx = self.prior.apply(x);
        if self.k() == 0 {
            return Ok(sx / self.lambda);
        }
        let t = self.v.tr_mul(&self.forward.forward(&sx));
        let w = damped_projector(&self.b, self.lambda) * t;
        let correction = self.prior.apply(&self.forward.adjoint(&(&self.v * w)));
        Ok((sx - correction) / self.lambda)
    }

    /// Diagonal of the approximate posterior covariance, with warnings for
    /// negative entries that had to be clamped.
    pub fn variance(&self) -> Result<(DVector<f64>, Vec<String>)> {
        let diag = self
            .prior
            .diagonal()
            .ok_or(Error::MissingCapability("a prior covariance diagonal"))?;
        let mut var = diag / self.lambda;
        if self.k() > 0 {
            let svd = self.b.svd();
            let y = &self.w * &svd.q;
            for j in 0..self.k() {
                let s2 = svd.s[j] * svd.s[j];
                let d = s2 / (self.lambda + s2) / self.lambda;
                for i in 0..var.len() {
                    var[i] -= d * y[(i, j)] * y[(i, j)];
                }
            }
        }
        let mut warnings = Vec::new();
        let max = var.amax();
        let worst = var.min();
        if worst < 0.0 {
            if worst < -1e-10 * max {
                let msg = format!("posterior variance had negative entries down to {worst:e}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            var.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok((var, warnings))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StopMode {
    /// Stop at the first `k` with relative `λ` change below tolerance.
    Single,
    /// Require the criterion on two consecutive steps.
    #[default]
    Double,
}

#[derive(Clone, Copy, Debug)]
pub struct InferenceConfig {
    pub k_max: usize,
    pub stop_tol: f64,
    pub stop_mode: StopMode,
    pub search: LambdaSearch,
    pub qgkb: QgkbOptions,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            k_max: 100,
            stop_tol: 1e-3,
            stop_mode: StopMode::Double,
            search: LambdaSearch::default(),
            qgkb: QgkbOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Breakdown,
    LambdaConverged,
    MaxIterations,
}

/// Per-step record of the empirical-Bayes iteration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EbRecord {
    pub k: usize,
    pub lambda: f64,
    pub nll: f64,
    /// `|λ_k − λ_{k−1}| / λ_{k−1}`; `NaN` at `k = 1`.
    pub rel_change: f64,
    pub at_boundary: bool,
    pub stopped: bool,
}

/// Operators and data of a linear-Gaussian inverse problem.
#[derive(Clone)]
pub struct ProblemHandles {
    pub forward: Arc<dyn LinearMap>,
    pub prior: Arc<dyn SpdMap>,
    pub noise: Arc<dyn SpdMap>,
    pub y: DVector<f64>,
}

pub struct InferenceRun {
    pub approx: PosteriorApproximation,
    pub trace: Vec<EbRecord>,
    pub state: QgkbState,
    pub stop_reason: StopReason,
}

/// Runs the empirical-Bayes bidiagonalization loop.
pub fn run_inference(problem: &ProblemHandles, config: &InferenceConfig) -> Result<InferenceRun> {
    run_inference_with(problem, config, |_, _| Ok(()))
}

/// As [`run_inference`], calling `observer` after each step with the
/// approximation at `(k, λ_k)`.
pub fn run_inference_with<F>(
    problem: &ProblemHandles,
    config: &InferenceConfig,
    mut observer: F,
) -> Result<InferenceRun>
where
    F: FnMut(&PosteriorApproximation, &QgkbState) -> Result<()>,
{
    if config.k_max == 0 {
        return Err(Error::InvalidArgument("at least one step required (k_max = 0)".into()));
    }
    if !(config.stop_tol > 0.0) {
        return Err(Error::InvalidArgument("stop tolerance must be positive".into()));
    }
    config.search.validate()?;
    let mut state = QgkbState::init_factored(
        problem.forward.clone(),
        problem.prior.clone(),
        problem.noise.clone(),
        &problem.y,
        config.qgkb,
    )?;
    let n = problem.forward.cols();
    let m = problem.forward.rows();
    let beta1 = state.beta1();

    if state.broken() == Some(BreakdownCause::AlphaZero) && state.k() == 0 {
        // the data carry no information about x
        let b = state.bidiagonal(0)?;
        let est = estimate_lambda(&b, beta1, &config.search)?;
        let approx = PosteriorApproximation::from_parts(
            problem.forward.clone(),
            problem.prior.clone(),
            b,
            beta1,
            DMatrix::zeros(m, 0),
            DMatrix::zeros(n, 0),
            est.lambda,
        )?;
        return Ok(InferenceRun { approx, trace: Vec::new(), state, stop_reason: StopReason::Breakdown });
    }

    let mut v = DMatrix::<f64>::zeros(m, 0);
    let mut w = DMatrix::<f64>::zeros(n, 0);
    let mut trace: Vec<EbRecord> = Vec::new();
    let mut hits = 0usize;
    let mut last: Option<PosteriorApproximation> = None;
    let mut stop_reason = StopReason::MaxIterations;

    for k in 1..=config.k_max {
        state.step()?;
        let vk = state.v(k).clone();
        let wk = problem.prior.apply(&problem.forward.adjoint(&vk));
        v = v.insert_column(k - 1, 0.0);
        v.set_column(k - 1, &vk);
        w = w.insert_column(k - 1, 0.0);
        w.set_column(k - 1, &wk);

        let b = state.bidiagonal(k)?;
        let est = estimate_lambda(&b, beta1, &config.search)?;
        if !(est.lambda > 0.0 && est.lambda.is_finite()) {
            return Err(Error::Numerical(format!("λ estimate {} at k = {k}", est.lambda)));
        }
        let approx = PosteriorApproximation::from_parts(
            problem.forward.clone(),
            problem.prior.clone(),
            b,
            beta1,
            v.clone(),
            w.clone(),
            est.lambda,
        )?;
        observer(&approx, &state)?;

        let rel_change = match trace.last() {
            Some(prev) => (est.lambda - prev.lambda).abs() / prev.lambda,
            None => f64::NAN,
        };
        if rel_change <= config.stop_tol {
            hits += 1;
        } else {
            hits = 0;
        }
        let needed = match config.stop_mode {
            StopMode::Single => 1,
            StopMode::Double => 2,
        };
        let mut stopped = false;
        if state.broken().is_some() {
            stop_reason = StopReason::Breakdown;
            stopped = true;
        } else if hits >= needed {
            stop_reason = StopReason::LambdaConverged;
            stopped = true;
        } else if k == config.k_max {
            stop_reason = StopReason::MaxIterations;
            stopped = true;
        }
        trace.push(EbRecord {
            k,
            lambda: est.lambda,
            nll: est.nll,
            rel_change,
            at_boundary: est.at_boundary,
            stopped,
        });
        log::debug!("k = {k}: λ = {:.6e}, L = {:.6e}", est.lambda, est.nll);
        last = Some(approx);
        if stopped {
            break;
        }
    }
    Ok(InferenceRun {
        approx: last.expect("k_max ≥ 1 guarantees one step"),
        trace,
        state,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{DenseMap, DiagonalSpd};

    fn identity_problem() -> ProblemHandles {
        ProblemHandles {
            forward: Arc::new(DenseMap::new(DMatrix::identity(3, 3))),
            prior: Arc::new(DiagonalSpd::identity(3)),
            noise: Arc::new(DiagonalSpd::identity(3)),
            y: DVector::from_vec(vec![2.0, 0.0, 0.0]),
        }
    }

    fn b1() -> BidiagonalMatrix {
        BidiagonalMatrix::new(vec![1.0], vec![0.0])
    }

    #[test]
    fn nll_closed_form_and_limit() {
        let b = b1();
        for lambda in [1e-3_f64, 0.1, 1.0 / 3.0, 2.0, 50.0] {
            let want = (1.0 + 1.0 / lambda).ln() + 4.0 * lambda / (1.0 + lambda);
            let got = marginal_nll(&b, 2.0, lambda).unwrap();
            assert!((got - want).abs() <= 1e-14 * want.abs());
        }
        let far = marginal_nll(&b, 2.0, 1e12).unwrap();
        assert!((far - 4.0).abs() < 1e-10);
        assert!(marginal_nll(&b, 2.0, 0.0).is_err());
        assert!(marginal_nll(&b, 2.0, -1.0).is_err());
    }

    #[test]
    fn lambda_estimate_identity_problem() {
        let est = estimate_lambda(&b1(), 2.0, &LambdaSearch::default()).unwrap();
        assert!((est.lambda - 1.0 / 3.0).abs() < 1e-6, "{}", est.lambda);
        assert!(!est.at_boundary);
    }

    #[test]
    fn lambda_estimate_k0_hits_upper_boundary() {
        let b = BidiagonalMatrix::new(vec![], vec![]);
        let est = estimate_lambda(&b, 2.0, &LambdaSearch::default()).unwrap();
        assert_eq!(est.lambda, 1e10);
        assert!(est.at_boundary);
    }

    #[test]
    fn invalid_bracket_rejected() {
        let bad = LambdaSearch { lo: 1.0, hi: 0.5, tol: 1e-8 };
        assert!(estimate_lambda(&b1(), 2.0, &bad).is_err());
        let bad = LambdaSearch { lo: 0.0, hi: 0.5, tol: 1e-8 };
        assert!(estimate_lambda(&b1(), 2.0, &bad).is_err());
    }

    #[test]
    fn projected_solution_scalar_and_limit() {
        let xi = projected_solution(&b1(), 2.0, 1.0 / 3.0).unwrap();
        assert!((xi[0] - 1.5).abs() < 1e-14);
        let xi = projected_solution(&b1(), 2.0, 1e14).unwrap();
        assert!(xi[0].abs() < 1e-13);
    }

    #[test]
    fn identity_problem_end_to_end() {
        let run = run_inference(&identity_problem(), &InferenceConfig::default()).unwrap();
        assert_eq!(run.stop_reason, StopReason::Breakdown);
        assert_eq!(run.approx.k(), 1);
        assert!((run.approx.lambda() - 1.0 / 3.0).abs() < 1e-6);
        let approx = run.approx.with_lambda(1.0 / 3.0).unwrap();
        let mean = approx.mean();
        assert!((mean - DVector::from_vec(vec![1.5, 0.0, 0.0])).norm() < 1e-12);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let ce1 = approx.cov_apply(&e1).unwrap();
        assert!((ce1 - &e1 * 0.75).norm() < 1e-12);
        let (var, warnings) = approx.variance().unwrap();
        assert!((var - DVector::from_vec(vec![0.75, 3.0, 3.0])).norm() < 1e-12);
        assert!(warnings.is_empty());
    }

    #[test]
    fn k_max_zero_rejected() {
        let cfg = InferenceConfig { k_max: 0, ..Default::default() };
        assert!(run_inference(&identity_problem(), &cfg).is_err());
    }

    #[test]
    fn k0_prior_only_quantities() {
        let b = BidiagonalMatrix::new(vec![], vec![]);
        let approx = PosteriorApproximation::from_parts(
            Arc::new(DenseMap::new(DMatrix::identity(2, 2))),
            Arc::new(DiagonalSpd::new(DVector::from_vec(vec![2.0, 4.0])).unwrap()),
            b,
            1.0,
            DMatrix::zeros(2, 0),
            DMatrix::zeros(2, 0),
            0.5,
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(approx.cov_apply(&x).unwrap().as_slice(), &[4.0, 8.0]);
        assert_eq!(approx.variance().unwrap().0.as_slice(), &[4.0, 8.0]);
        assert_eq!(approx.mean().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn ritz_scalar_case() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let problem = ProblemHandles {
            forward: Arc::new(DenseMap::new(g)),
            prior: Arc::new(DiagonalSpd::identity(3)),
            noise: Arc::new(DiagonalSpd::identity(3)),
            y: DVector::from_element(3, 1.0),
        };
        let cfg = InferenceConfig { k_max: 1, ..Default::default() };
        let run = run_inference(&problem, &cfg).unwrap();
        let pairs = ritz_pairs(&run.state, 1).unwrap();
        assert_eq!(pairs.len(), 1);
        // B₁ᵀB₁ = α₁² + β₂²
        let theta = run.state.alpha(1).powi(2) + run.state.beta(2).powi(2);
        assert!((pairs[0].theta - theta).abs() < 1e-12 * theta);
        let want = run.state.alpha(2) * run.state.beta(2);
        assert!((pairs[0].residual - want).abs() < 1e-12 * want);

        let run = run_inference(&problem, &InferenceConfig::default()).unwrap();
        assert_eq!(run.approx.k(), 3);
        let pairs = ritz_pairs(&run.state, 3).unwrap();
        for (p, want) in pairs.iter().zip([9.0, 4.0, 1.0]) {
            assert!((p.theta - want).abs() < 1e-8);
            assert_eq!(p.residual, 0.0);
        }
    }
}

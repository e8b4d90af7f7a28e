//! Accuracy certificates for the Krylov posterior approximation.
//!
//! With `A = Σ^{1/2} H Σ^{1/2}` and its rank-`k` compression `Â_k`, the
//! quantities `ζ_k = Tr(A − Â_k)` and `γ_k = ‖A − Â_k‖_F` follow from the
//! bidiagonal entries alone:
//!
//! ```text
//! ζ_k  = ζ_{k−1}  − (α_k² + β_{k+1}²)
//! γ_k² = γ_{k−1}² − 2 α_k² β_k² − (α_k² + β_{k+1}²)²     (no cross term at k = 1)
//! ```
//!
//! They bound the Förstner distance `d_F(C_λ, Ĉ_λ) ≤ γ_k/λ` and the KL
//! divergence `KL(π̂‖π) ≤ (ζ_k + α₁²β₁²γ_k²/(λ(λ+γ_k)))/(2λ)`.
//! Dense reference metrics for desk-scale checks live here as well.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    cholesky_strict, cholesky_with_jitter, sym_eigen_desc, symmetrize, CompensatedSum,
};
use crate::operator::SpdMap;
use crate::rng;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundRecord {
    pub k: usize,
    pub lambda: f64,
    /// Recurrence values (negative round-off clamped to 0).
    pub zeta: f64,
    pub gamma: f64,
    /// Round-off allowances on `ζ_k` and `γ_k²`, added before the bounds
    /// are evaluated.
    pub zeta_err: f64,
    pub gamma_sq_err: f64,
    pub df_bound: f64,
    pub kl_bound: f64,
    /// Bound on `‖x_λ − x̂_λ‖²_{C_λ⁻¹}`.
    pub mean_bound: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundTrace {
    pub records: Vec<BoundRecord>,
    pub warnings: Vec<String>,
    /// A recurrence went negative by more than `1e-8` of its seed, which
    /// signals lost orthogonality or inconsistent seeds.
    pub flagged: bool,
}

const ROUNDOFF_FACTOR: f64 = 8.0;

/// Evaluates the `ζ_k`, `γ_k` recurrences and the bounds at `λ_k` for
/// `k = 1..=lambdas.len()`.
///
/// `alphas` must hold `α_1..α_K` and `betas` `β_1..β_{K+1}`; missing
/// `α_{K+1}` (breakdown) is irrelevant here.
///
/// Once `ζ_k` or `γ_k²` drops to the round-off level of its seed the
/// recurrence value says nothing about its sign, and a bound evaluated at the
/// clamped value is not an upper bound. The bounds therefore use the value
/// plus `8ε(seed + Σ|subtracted terms|)`.
pub fn bound_trace(
    alphas: &[f64],
    betas: &[f64],
    zeta0: f64,
    gamma0_sq: f64,
    lambdas: &[f64],
) -> Result<BoundTrace> {
    let steps = lambdas.len();
    if alphas.len() < steps || betas.len() < steps + 1 {
        return Err(Error::InvalidArgument(format!(
            "bound trace over {steps} steps needs {steps} α and {} β values, got {} and {}",
            steps + 1,
            alphas.len(),
            betas.len()
        )));
    }
    if !(zeta0 >= 0.0) || !(gamma0_sq >= 0.0) {
        return Err(Error::InvalidArgument("trace seeds must be nonnegative".into()));
    }
    let ab1_sq = alphas.first().map_or(0.0, |a| a * a) * betas[0] * betas[0];
    let mut out = BoundTrace::default();
    // both recurrences subtract from seeds that can exceed the remainder by
    // many orders of magnitude, so the running sums are compensated
    let mut zeta = CompensatedSum::new(zeta0);
    let mut gamma_sq = CompensatedSum::new(gamma0_sq);
    let (mut zeta_mass, mut gamma_mass) = (zeta0, gamma0_sq);
    for (idx, &lambda) in lambdas.iter().enumerate() {
        let k = idx + 1;
        let a2 = alphas[idx] * alphas[idx];
        let diag = a2 + betas[k] * betas[k];
        let cross = if k >= 2 { 2.0 * a2 * betas[idx] * betas[idx] } else { 0.0 };
        zeta.add(-diag);
        gamma_sq.add(-cross);
        gamma_sq.add(-diag * diag);
        zeta_mass += diag;
        gamma_mass += cross + diag * diag;
        let zeta_used = clamp(zeta.value(), zeta0, "ζ", k, &mut out);
        let gamma_sq_used = clamp(gamma_sq.value(), gamma0_sq, "γ²", k, &mut out);
        let zeta_err = ROUNDOFF_FACTOR * f64::EPSILON * zeta_mass;
        let gamma_sq_err = ROUNDOFF_FACTOR * f64::EPSILON * gamma_mass;
        let zeta_c = zeta_used + zeta_err;
        let gamma_sq_c = gamma_sq_used + gamma_sq_err;
        let gamma_c = gamma_sq_c.sqrt();
        out.records.push(BoundRecord {
            k,
            lambda,
            zeta: zeta_used,
            gamma: gamma_sq_used.sqrt(),
            zeta_err,
            gamma_sq_err,
            df_bound: gamma_c / lambda,
            kl_bound: (zeta_c + ab1_sq * gamma_sq_c / (lambda * (lambda + gamma_c))) / (2.0 * lambda),
            mean_bound: ab1_sq * gamma_sq_c / (lambda * lambda * (lambda + gamma_c)),
        });
    }
    Ok(out)
}

fn clamp(value: f64, seed: f64, name: &str, k: usize, out: &mut BoundTrace) -> f64 {
    if value >= 0.0 {
        return value;
    }
    if value < -1e-8 * seed {
        out.flagged = true;
        let msg = format!("{name} recurrence fell to {value:e} at k = {k} (seed {seed:e})");
        log::warn!("{msg}");
        out.warnings.push(msg);
    }
    0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "mode", deny_unknown_fields)]
pub enum TraceMode {
    #[default]
    Dense,
    Hutchinson {
        probes: usize,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceSeeds {
    /// `Tr(HΣ) = Tr(Γ⁻¹M)`
    pub zeta0: f64,
    /// `Tr(HΣHΣ) = Tr((Γ⁻¹M)²)`
    pub gamma0_sq: f64,
    /// Standard errors (zero in dense mode).
    pub zeta0_se: f64,
    pub gamma0_sq_se: f64,
}

/// Seeds of the recurrences, computed through the data-space operator
/// `K = Γ⁻¹M` (same traces as `HΣ` by cyclic invariance).
pub fn trace_seeds(gram: &dyn SpdMap, noise: &dyn SpdMap, mode: TraceMode) -> Result<TraceSeeds> {
    check_dim("trace seeds", gram.dim(), noise.dim())?;
    let m = gram.dim();
    let k_apply = |x: &DVector<f64>| -> Result<DVector<f64>> {
        noise
            .inverse_apply(&gram.apply(x))
            .ok_or(Error::MissingCapability("an inverse noise covariance application"))
    };
    match mode {
        TraceMode::Dense => {
            let mut k = DMatrix::zeros(m, m);
            for j in 0..m {
                let mut e = DVector::zeros(m);
                e[j] = 1.0;
                k.set_column(j, &k_apply(&e)?);
            }
            let mut zeta0 = CompensatedSum::default();
            let mut gamma0_sq = CompensatedSum::default();
            for i in 0..m {
                zeta0.add(k[(i, i)]);
                for j in 0..m {
                    gamma0_sq.add(k[(i, j)] * k[(j, i)]);
                }
            }
            let (zeta0, gamma0_sq) = (zeta0.value(), gamma0_sq.value());
            Ok(TraceSeeds { zeta0, gamma0_sq, zeta0_se: 0.0, gamma0_sq_se: 0.0 })
        }
        TraceMode::Hutchinson { probes, seed } => {
            if probes < 2 {
                return Err(Error::InvalidArgument("Hutchinson needs at least 2 probes".into()));
            }
            let mut rng = rng::seeded(seed);
            let mut z_samples = Vec::with_capacity(probes);
            let mut g_samples = Vec::with_capacity(probes);
            for _ in 0..probes {
                let z = rng::rademacher_vector(&mut rng, m);
                let kz = k_apply(&z)?;
                let kkz = k_apply(&kz)?;
                z_samples.push(z.dot(&kz));
                g_samples.push(z.dot(&kkz));
            }
            let (zeta0, zeta0_se) = mean_and_se(&z_samples);
            let (gamma0_sq, gamma0_sq_se) = mean_and_se(&g_samples);
            Ok(TraceSeeds { zeta0, gamma0_sq, zeta0_se, gamma0_sq_se })
        }
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Generalized eigenvalues of the symmetric-definite pencil `(A, B)`,
/// descending, via `B = L Lᵀ` and the standard problem `L⁻¹ A L⁻ᵀ`.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DVector<f64>> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument("pencil matrices must be square and equal-sized".into()));
    }
    let l = match cholesky_strict(b) {
        Ok(c) => c.l(),
        Err(_) => {
            let scale = b.diagonal().amax().max(f64::MIN_POSITIVE);
            cholesky_with_jitter(b, scale)?.lower()
        }
    };
    let la = l
        .solve_lower_triangular(&symmetrize(a))
        .ok_or_else(|| Error::Factorization("singular triangular factor".into()))?;
    let c = l
        .solve_lower_triangular(&la.transpose())
        .ok_or_else(|| Error::Factorization("singular triangular factor".into()))?;
    Ok(sym_eigen_desc(&c).0)
}

/// `sqrt(Σ log² σ_i)` over the generalized eigenvalues of `(A, B)`.
pub fn forstner_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let sigma = generalized_eigenvalues(a, b)?;
    forstner_from_eigenvalues(sigma.as_slice())
}

pub fn forstner_from_eigenvalues(sigma: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &s in sigma {
        if !(s > 0.0) {
            return Err(Error::Numerical(format!(
                "Förstner distance needs SPD arguments (generalized eigenvalue {s:e})"
            )));
        }
        sum += s.ln().powi(2);
    }
    Ok(sum.sqrt())
}

/// `KL(N(m1, C1) ‖ N(m2, C2))`.
pub fn kl_gaussian(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean1.len();
    check_dim("kl_gaussian mean2", d, mean2.len())?;
    check_dim("kl_gaussian cov1", d, cov1.nrows())?;
    check_dim("kl_gaussian cov2", d, cov2.nrows())?;
    let c2 = cholesky_strict(cov2)
        .map_err(|_| Error::Factorization("KL divergence needs an SPD second covariance".into()))?;
    let c1 = cholesky_strict(cov1)
        .map_err(|_| Error::Factorization("KL divergence needs an SPD first covariance".into()))?;
    let log_det = |l: &DMatrix<f64>| (0..d).map(|i| 2.0 * l[(i, i)].ln()).sum::<f64>();
    let trace = c2.solve(&symmetrize(cov1)).trace();
    let diff = mean2 - mean1;
    let quad = diff.dot(&c2.solve(&diff));
    let log_det_ratio = log_det(&c2.l()) - log_det(&c1.l());
    Ok(0.5 * (trace - d as f64 + log_det_ratio + quad))
}

/// Square root of the mean per-coordinate variance.
pub fn mstd(variance: &DVector<f64>) -> Result<f64> {
    if variance.is_empty() {
        return Err(Error::InvalidArgument("mstd of an empty vector".into()));
    }
    let max = variance.amax();
    if variance.iter().any(|&v| v < -1e-10 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::InvalidArgument("mstd needs nonnegative variances".into()));
    }
    Ok((variance.iter().map(|v| v.max(0.0)).sum::<f64>() / variance.len() as f64).sqrt())
}

/// Both sides of `‖(I+A₁)⁻¹ − (I+A₂)⁻¹‖₂ ≤ δ/(1+δ)`, `δ = ‖A₁ − A₂‖₂`, and
/// whether it holds with slack `1e-10`.
pub fn resolvent_difference_bound_check(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> (f64, f64, bool) {
    let n = a1.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let inv = |a: &DMatrix<f64>| {
        (symmetrize(a) + &id)
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN))
    };
    let spectral = |m: DMatrix<f64>| sym_eigen_desc(&m).0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let lhs = spectral(inv(a1) - inv(a2));
    let delta = spectral(symmetrize(&(a1 - a2)));
    let rhs = delta / (1.0 + delta);
    (lhs, rhs, lhs <= rhs + 1e-10)
}

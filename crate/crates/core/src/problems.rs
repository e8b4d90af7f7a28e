//! Test-problem generators: 1-D Fredholm operator, separable Gaussian
//! deblurring, ground-truth sampling and exact-level noise injection.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::inference::ProblemHandles;
use crate::linalg::midpoints;
use crate::operator::{DenseMap, DenseSpd, DiagonalSpd, KroneckerMap, LinearMap, SpdMap};
use crate::priors::{dense_covariance_1d, separable_covariance, KernelSpec, PriorCovariance};
use crate::rng::{normal_vector, seeded};

/// Offset mixed into the seed of the noise stream so that truth and noise
/// draws are independent.
const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// `G_ij = exp(−|s_i − t_j|/l)·π/n` on midpoint grids of `[−π/2, π/2]`
/// (`m` observation points `s`, `n` parameter points `t`).
pub fn fredholm1d(n: usize, m: usize, l_forward: f64) -> Result<DMatrix<f64>> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("Fredholm grid sizes must be positive".into()));
    }
    if !(l_forward > 0.0) {
        return Err(Error::InvalidArgument("Fredholm kernel length must be positive".into()));
    }
    let s = midpoints(m, -FRAC_PI_2, FRAC_PI_2);
    let t = midpoints(n, -FRAC_PI_2, FRAC_PI_2);
    let h = std::f64::consts::PI / n as f64;
    Ok(DMatrix::from_fn(m, n, |i, j| (-(s[i] - t[j]).abs() / l_forward).exp() * h))
}

/// 1-D factor of the blur: `G1_{ar} = exp(−(s_a − t_r)²/l)/n1` from the `n1`
/// fine midpoints to the `m1` coarse midpoints of `[0, 1]`.
pub fn blur_factor(n1: usize, m1: usize, l_blur: f64) -> Result<DMatrix<f64>> {
    if n1 == 0 || m1 == 0 || m1 > n1 {
        return Err(Error::InvalidArgument(format!(
            "blur grids need 1 ≤ m1 ≤ n1 (got n1 = {n1}, m1 = {m1})"
        )));
    }
    if !(l_blur > 0.0) {
        return Err(Error::InvalidArgument("blur width must be positive".into()));
    }
    let fine = midpoints(n1, 0.0, 1.0);
    let coarse = midpoints(m1, 0.0, 1.0);
    let h = 1.0 / n1 as f64;
    Ok(DMatrix::from_fn(m1, n1, |a, r| (-(coarse[a] - fine[r]).powi(2) / l_blur).exp() * h))
}

/// Gaussian-PSF blur `exp(−‖s − t‖²/l_blur)` from the `n1 × n1` image grid to
/// the `m1 × m1` observation grid, applied as `G1 ⊗ G1` on row-major images.
pub fn deblur2d(n1: usize, m1: usize, l_blur: f64) -> Result<KroneckerMap> {
    let g1 = blur_factor(n1, m1, l_blur)?;
    Ok(KroneckerMap::new(g1.clone(), g1))
}

/// Prior draw `L ξ` (dense or separable prior only).
pub fn sample_prior(prior: &PriorCovariance, seed: u64) -> Result<DVector<f64>> {
    prior.sample(seed)
}

/// Adds white noise scaled so that `‖η‖ = noise_level·‖G x_true‖` exactly and
/// returns `(y, δ)` with `Γ = δ² I`, `δ = noise_level·‖G x_true‖/√m`.
pub fn make_data(
    forward: &dyn LinearMap,
    x_true: &DVector<f64>,
    noise_level: f64,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    check_dim("make_data x_true", forward.cols(), x_true.len())?;
    if !(noise_level > 0.0) {
        return Err(Error::InvalidArgument("noise level must be positive".into()));
    }
    let clean = forward.forward(x_true);
    let signal = clean.norm();
    if signal == 0.0 {
        return Err(Error::InvalidArgument("G x_true is zero; noise level undefined".into()));
    }
    let mut rng = seeded(seed);
    let e = normal_vector(&mut rng, clean.len());
    let eta = &e * (noise_level * signal / e.norm());
    let delta = noise_level * signal / (clean.len() as f64).sqrt();
    Ok((clean + eta, delta))
}

fn default_forward_length() -> f64 {
    10.0
}

/// Serializable problem description.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSpec {
    /// A shipped preset by name (see [`PRESETS`]).
    Preset { name: String },
    /// 1-D Fredholm problem with a dense stationary prior.
    Fredholm {
        n: usize,
        m: usize,
        #[serde(default = "default_forward_length")]
        forward_length: f64,
        prior: KernelSpec,
        /// Standard deviation of the ground truth (the prior is built with
        /// `prior.variance`, the truth is that draw rescaled).
        truth_std: f64,
        noise_level: f64,
    },
    /// Separable 2-D deblurring with a Kronecker prior whose 1-D factor is
    /// `prior`.
    Deblur {
        n1: usize,
        m1: usize,
        l_blur: f64,
        prior: KernelSpec,
        truth_std: f64,
        noise_level: f64,
    },
    /// Explicit small matrices, given as rows.
    Inline {
        g: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        gamma: Vec<Vec<f64>>,
        y: Vec<f64>,
        #[serde(default)]
        x_true: Option<Vec<f64>>,
    },
}

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fredholm-small",
        description: "1-D Fredholm, n = 500, m = 300, kernel length 10, Gaussian prior l = 0.4 built at σ = 1, truth σ = 0.2, noise 0.005",
    },
    Preset {
        name: "deblur-small",
        description: "2-D Gaussian blur, 64×64 image, 32×32 observations, l_blur = 0.01, separable Matérn ν = 3, ρ = 0.1, σ = 1, noise 0.01",
    },
];

impl ProblemSpec {
    /// Resolves preset names to their explicit form.
    pub fn resolve(&self) -> Result<ProblemSpec> {
        match self {
            ProblemSpec::Preset { name } => match name.as_str() {
                "fredholm-small" => Ok(ProblemSpec::Fredholm {
                    n: 500,
                    m: 300,
                    forward_length: 10.0,
                    prior: KernelSpec::gaussian(1.0, 0.4),
                    truth_std: 0.2,
                    noise_level: 0.005,
                }),
                "deblur-small" => Ok(ProblemSpec::Deblur {
                    n1: 64,
                    m1: 32,
                    l_blur: 0.01,
                    prior: KernelSpec::matern(3.0, 1.0, 0.1),
                    truth_std: 1.0,
                    noise_level: 0.01,
                }),
                other => Err(Error::Config(format!(
                    "unknown preset `{other}` (available: {})",
                    PRESETS.iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
                ))),
            },
            other => Ok(other.clone()),
        }
    }

    /// Parameter dimension without building anything.
    pub fn parameter_dim(&self) -> Result<usize> {
        Ok(match self.resolve()? {
            ProblemSpec::Fredholm { n, .. } => n,
            ProblemSpec::Deblur { n1, .. } => n1 * n1,
            ProblemSpec::Inline { g, .. } => g.first().map_or(0, |r| r.len()),
            ProblemSpec::Preset { .. } => unreachable!("resolved"),
        })
    }

    pub fn build(&self, seed: u64) -> Result<ProblemInstance> {
        match self.resolve()? {
            ProblemSpec::Fredholm { n, m, forward_length, prior, truth_std, noise_level } => {
                let g = fredholm1d(n, m, forward_length)?;
                let grid = midpoints(n, -FRAC_PI_2, FRAC_PI_2);
                let prior_cov = dense_covariance_1d(&prior, &grid)?;
                let forward = DenseMap::new(g);
                finish(forward, prior_cov, &prior, truth_std, noise_level, seed, vec![n])
            }
            ProblemSpec::Deblur { n1, m1, l_blur, prior, truth_std, noise_level } => {
                let forward = deblur2d(n1, m1, l_blur)?;
                let prior_cov = separable_covariance(&prior, &midpoints(n1, 0.0, 1.0))?;
                // each 1-D factor carries the variance, so the pointwise
                // standard deviation of the separable prior is σ²
                let mut spec2 = prior;
                spec2.variance = prior.variance * prior.variance;
                finish(forward, prior_cov, &spec2, truth_std, noise_level, seed, vec![n1, n1])
            }
            ProblemSpec::Inline { g, sigma, gamma, y, x_true } => inline(g, sigma, gamma, y, x_true, seed),
            ProblemSpec::Preset { .. } => unreachable!("resolved"),
        }
    }
}

fn finish<F: LinearMap + 'static>(
    forward: F,
    prior: PriorCovariance,
    prior_spec: &KernelSpec,
    truth_std: f64,
    noise_level: f64,
    seed: u64,
    shape: Vec<usize>,
) -> Result<ProblemInstance> {
    if !(truth_std > 0.0) {
        return Err(Error::InvalidArgument("truth_std must be positive".into()));
    }
    let x_true = prior.sample(seed)? * (truth_std / prior_spec.variance.sqrt());
    let (y, delta) = make_data(&forward, &x_true, noise_level, seed ^ NOISE_STREAM)?;
    let m = y.len();
    Ok(ProblemInstance {
        forward: Arc::new(forward),
        prior_variance: prior.diagonal().expect("prior diagonal"),
        prior_warnings: prior.warnings().to_vec(),
        prior: Arc::new(prior),
        noise: Arc::new(DiagonalSpd::constant(m, delta * delta)?),
        x_true: Some(x_true),
        y,
        noise_level: Some(noise_level),
        seed,
        shape,
    })
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 {
        return Err(Error::Config(format!("inline `{name}` is empty")));
    }
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Config(format!("inline `{name}` has ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn inline(
    g: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    y: Vec<f64>,
    x_true: Option<Vec<f64>>,
    seed: u64,
) -> Result<ProblemInstance> {
    let g = rows_to_matrix("g", &g)?;
    let sigma = rows_to_matrix("sigma", &sigma)?;
    let gamma = rows_to_matrix("gamma", &gamma)?;
    let (m, n) = g.shape();
    check_dim("inline sigma", n, sigma.nrows())?;
    check_dim("inline sigma", n, sigma.ncols())?;
    check_dim("inline gamma", m, gamma.nrows())?;
    check_dim("inline gamma", m, gamma.ncols())?;
    check_dim("inline y", m, y.len())?;
    let x_true = match x_true {
        Some(x) => {
            check_dim("inline x_true", n, x.len())?;
            Some(DVector::from_vec(x))
        }
        None => None,
    };
    let prior_variance = sigma.diagonal();
    let prior = crate::priors::explicit_covariance(sigma)?;
    Ok(ProblemInstance {
        forward: Arc::new(DenseMap::new(g)),
        prior_variance,
        prior_warnings: prior.warnings().to_vec(),
        prior: Arc::new(prior),
        noise: Arc::new(DenseSpd::new(gamma)?),
        x_true,
        y: DVector::from_vec(y),
        noise_level: None,
        seed,
        shape: vec![n],
    })
}

/// A generated problem together with its ground truth.
pub struct ProblemInstance {
    pub forward: Arc<dyn LinearMap>,
    pub prior: Arc<PriorCovariance>,
    /// Pointwise prior variance `diag Σ`.
    pub prior_variance: DVector<f64>,
    pub prior_warnings: Vec<String>,
    pub noise: Arc<dyn SpdMap>,
    pub x_true: Option<DVector<f64>>,
    pub y: DVector<f64>,
    pub noise_level: Option<f64>,
    pub seed: u64,
    /// Field shape of the parameter (`[n]` or `[n1, n1]`, row-major).
    pub shape: Vec<usize>,
}

impl ProblemInstance {
    pub fn handles(&self) -> ProblemHandles {
        ProblemHandles {
            forward: self.forward.clone(),
            prior: self.prior.clone(),
            noise: self.noise.clone(),
            y: self.y.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.forward.cols()
    }

    pub fn m(&self) -> usize {
        self.forward.rows()
    }
}

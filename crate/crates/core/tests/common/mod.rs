#![allow(dead_code)]

use std::sync::Arc;

use dsbayes::inference::ProblemHandles;
use dsbayes::operator::{DenseMap, DenseSpd};
use dsbayes::oracle::DenseProblem;
use dsbayes::qgkb::{QgkbOptions, QgkbState};
use dsbayes::rng::{normal_vector, seeded, DsRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct TestProblem {
    pub dense: DenseProblem,
    pub handles: ProblemHandles,
}

fn gaussian_matrix(rng: &mut DsRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let v = normal_vector(rng, rows * cols);
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// SPD matrix with eigenvalues spread over `[lo, hi]`.
pub fn spd_matrix(rng: &mut DsRng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    let eigs = DVector::from_fn(n, |i, _| {
        if n == 1 {
            hi
        } else {
            lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
        }
    });
    let a = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn from_dense(dense: DenseProblem) -> TestProblem {
    let handles = ProblemHandles {
        forward: Arc::new(DenseMap::new(dense.g.clone())),
        prior: Arc::new(DenseSpd::new(dense.sigma.clone()).unwrap()),
        noise: Arc::new(DenseSpd::new(dense.gamma.clone()).unwrap()),
        y: dense.y.clone(),
    };
    TestProblem { dense, handles }
}

/// Random problem; `rank` limits the rank of `G`.
pub fn random_problem(seed: u64, n: usize, m: usize, rank: Option<usize>) -> TestProblem {
    let mut rng = seeded(seed);
    let g = match rank {
        Some(r) => gaussian_matrix(&mut rng, m, r) * gaussian_matrix(&mut rng, r, n) / (r as f64).sqrt(),
        None => gaussian_matrix(&mut rng, m, n),
    };
    let sigma = spd_matrix(&mut rng, n, 0.1, 2.0);
    let gamma = spd_matrix(&mut rng, m, 0.5, 2.0);
    let y = normal_vector(&mut rng, m);
    from_dense(DenseProblem::new(g, sigma, gamma, y).unwrap())
}

/// Seeded problem family mixing full and deficient rank, `n ≤ 200`, `m ≤ 100`.
pub fn mixed_problem(seed: u64) -> TestProblem {
    let mut rng = seeded(1000 + seed);
    let n = rng.random_range(20..=200);
    let m = rng.random_range(10..=100);
    let rank = if seed % 2 == 0 { None } else { Some(rng.random_range(3..=n.min(m).max(4) - 1)) };
    random_problem(seed, n, m, rank)
}

/// Problem with prescribed distinct generalized eigenvalues of `(M, Γ)` and
/// data with a nonzero component along every eigenvector.
pub fn simple_spectrum_problem(seed: u64, n: usize, m: usize, l: usize) -> TestProblem {
    assert!(l <= m && l <= n);
    let mut rng = seeded(seed);
    let qm = gaussian_matrix(&mut rng, m, m).qr().q();
    let qn = gaussian_matrix(&mut rng, n, n).qr().q();
    // singular values 10·0.7^i: distinct and well separated
    let mut g = DMatrix::zeros(m, n);
    for i in 0..l {
        let s = 10.0 * 0.7f64.powi(i as i32);
        g += qm.column(i) * qn.column(i).transpose() * s;
    }
    let sigma = DMatrix::identity(n, n);
    let gamma = DMatrix::identity(m, m);
    let mut y = DVector::zeros(m);
    for i in 0..m {
        let c: f64 = rng.random_range(0.5..1.5);
        y.axpy(c, &qm.column(i), 1.0);
    }
    from_dense(DenseProblem::new(g, sigma, gamma, y).unwrap())
}

pub fn state_for(p: &TestProblem, options: QgkbOptions) -> QgkbState {
    QgkbState::init_factored(
        p.handles.forward.clone(),
        p.handles.prior.clone(),
        p.handles.noise.clone(),
        &p.handles.y,
        options,
    )
    .unwrap()
}

/// Steps until breakdown or `k_max`.
pub fn run_to_breakdown(state: &mut QgkbState, k_max: usize) {
    while state.broken().is_none() && state.k() < k_max {
        state.step().unwrap();
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

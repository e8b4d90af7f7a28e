//! Seeded random streams.
//!
//! Every stochastic quantity in the crate is drawn from `ChaCha20Rng`, a
//! counter-based generator whose output is fixed by its 64-bit seed on every
//! platform, so generated problems and output files are portable.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type DsRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> DsRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_vector(rng: &mut DsRng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn rademacher_vector(rng: &mut DsRng, len: usize) -> DVector<f64> {
    DVector::from_iterator(
        len,
        (0..len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }),
    )
}

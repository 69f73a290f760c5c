//! Fixtures shared by the benchmarks.

use qstab::sampling::random_state;
use qstab::{QuantumState, SpinOperators};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Operators for spin `J` and a fixed full-rank random state of matching size.
pub fn fixture(j: f64) -> (SpinOperators, QuantumState) {
    let ops = SpinOperators::new(j).expect("valid spin");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rho = random_state(ops.dim(), &mut rng);
    (ops, rho)
}

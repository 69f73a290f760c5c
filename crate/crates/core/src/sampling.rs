//! Random density matrices for property tests and benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::state::{CMatrix, QuantumState, C64};

/// `G G* / Tr(G G*)` with `G` an `n x n` complex Gaussian matrix.
///
/// Full rank with probability one, and in the state space by construction.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> QuantumState {
    random_state_of_rank(n, n, rng)
}

/// As [`random_state`] but with `G` of shape `n x rank`, so the result has
/// rank at most `rank` (`rank = 1` gives a pure state).
pub fn random_state_of_rank<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> QuantumState {
    assert!(n >= 2 && rank >= 1, "need n >= 2 and rank >= 1");
    let g = CMatrix::from_fn(n, rank, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let mut m = &g * g.adjoint();
    let tr: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    m /= C64::new(tr, 0.0);
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
    QuantumState::from_trusted(m)
}

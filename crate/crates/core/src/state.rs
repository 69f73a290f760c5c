//! Density matrices and the scalar functionals defined on them.
//!
//! All indices into the computational basis are 1-based, matching the
//! labelling of the `F_z` eigenbasis (`k = 1` is the lowest weight `-J`).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;
const FLUSH_RELATIVE: f64 = 1e-30;

/// Tolerances used when checking membership in the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub herm: f64,
    pub trace: f64,
    pub psd: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            herm: 1e-9,
            trace: 1e-9,
            psd: 1e-9,
        }
    }
}

impl ToleranceConfig {
    pub fn new(herm: f64, trace: f64, psd: f64) -> Result<Self> {
        let tol = ToleranceConfig { herm, trace, psd };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("herm", self.herm),
            ("trace", self.trace),
            ("psd", self.psd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "tolerance `{name}` must be a finite nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which state-space constraint a matrix violates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    NotSquare,
    TooSmall,
    NonFinite,
    NotHermitian(f64),
    Trace(f64),
    NegativeEigenvalue(f64),
}

/// A density matrix: Hermitian, unit trace, positive semidefinite.
///
/// Values are immutable once built; every constructor either validates or
/// produces the matrix by a route that lands in the state space exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    data: CMatrix,
}

impl QuantumState {
    /// Validate `data` against `tol` and wrap it.
    pub fn new(data: CMatrix, tol: &ToleranceConfig) -> Result<Self> {
        match check_state(&data, tol) {
            None => Ok(QuantumState { data }),
            Some(v) => Err(Error::invalid(format!("not a density matrix: {v:?}"))),
        }
    }

    /// Wrap a matrix the caller already knows is a density matrix.
    pub(crate) fn from_trusted(data: CMatrix) -> Self {
        QuantumState { data }
    }

    /// The pure state `psi psi*` for a (not necessarily normalized) vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if psi.len() < 2 || !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(Error::invalid(
                "pure state needs a nonzero vector of length >= 2",
            ));
        }
        let n = psi.len();
        let data = CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj() / norm2);
        Ok(QuantumState { data })
    }

    /// Diagonal state from nonnegative weights summing to one.
    pub fn diagonal(weights: &[f64], tol: &ToleranceConfig) -> Result<Self> {
        let n = weights.len();
        let data = CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(weights[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        QuantumState::new(data, tol)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    /// Real part of the 1-based diagonal entry `(k, k)`.
    pub fn population(&self, k: usize) -> Result<f64> {
        check_index(k, self.dim())?;
        Ok(self.data[(k - 1, k - 1)].re)
    }

    /// `Tr(rho^2)`, computed as the squared Frobenius norm.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

pub(crate) fn check_index(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        Err(Error::invalid(format!("index {k} outside 1..={n}")))
    } else {
        Ok(())
    }
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// `||m - m*||_F`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (m[(i, j)] - m[(j, i)].conj()).norm_sqr();
        }
    }
    acc.sqrt()
}

fn hermitian_eigen(m: &CMatrix) -> Result<SymmetricEigen<C64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::numerical("Hermitian eigendecomposition did not converge"))
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMatrix) -> Result<f64> {
    let h = hermitize(m);
    let eig = hermitian_eigen(&h)?;
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// First violated state-space constraint, or `None` when `m` is a valid state.
pub fn check_state(m: &CMatrix, tol: &ToleranceConfig) -> Option<Violation> {
    if !m.is_square() {
        return Some(Violation::NotSquare);
    }
    if m.nrows() < 2 {
        return Some(Violation::TooSmall);
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Some(Violation::NonFinite);
    }
    let herm = hermiticity_defect(m);
    if herm > tol.herm {
        return Some(Violation::NotHermitian(herm));
    }
    let tr = trace(m);
    let tr_err = (tr - C64::new(1.0, 0.0)).norm();
    if tr_err > tol.trace {
        return Some(Violation::Trace(tr_err));
    }
    match min_eigenvalue(m) {
        Ok(lmin) if lmin >= -tol.psd => None,
        Ok(lmin) => Some(Violation::NegativeEigenvalue(lmin)),
        Err(_) => Some(Violation::NonFinite),
    }
}

/// `I / N`.
pub fn maximally_mixed(n: usize) -> Result<QuantumState> {
    if n < 2 {
        return Err(Error::invalid(format!("dimension must be >= 2, got {n}")));
    }
    let w = C64::new(1.0 / n as f64, 0.0);
    Ok(QuantumState::from_trusted(CMatrix::from_diagonal_element(
        n, n, w,
    )))
}

/// Distance to the eigenstate `f`: `V(rho) = 1 - rho_ff`, clamped into `[0, 1]`.
pub fn distance_v(rho: &QuantumState, f: usize) -> Result<f64> {
    Ok((1.0 - rho.population(f)?).clamp(0.0, 1.0))
}

/// Lyapunov function of the ensemble dynamics: `Tr(rho^2) - 1/N`.
///
/// Evaluated as `||rho - I/N||_F^2`, equal for unit trace, which keeps full
/// relative accuracy near the maximally mixed state.
pub fn lyapunov_q(rho: &QuantumState) -> f64 {
    let n = rho.dim();
    let m = rho.matrix();
    let diag = 1.0 / n as f64;
    let mut q = 0.0;
    for c in 0..n {
        for r in 0..n {
            let z = m[(r, c)];
            q += if r == c {
                (z.re - diag).powi(2) + z.im * z.im
            } else {
                z.norm_sqr()
            };
        }
    }
    q
}

/// Nearest-point style projection back onto the state space.
///
/// Hermitize, clip negative eigenvalues, renormalize the trace.
pub fn project_to_state_space(m: &CMatrix, tol: &ToleranceConfig) -> Result<QuantumState> {
    tol.validate()?;
    if !m.is_square() || m.nrows() < 2 {
        return Err(Error::invalid(
            "projection needs a square matrix of size >= 2",
        ));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    let mut h = hermitize(m);
    // entries far below round-off square to subnormals and break the
    // eigensolver; dropping them changes the matrix by < 1e-30 relative
    let scale = h.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
    let floor = scale * FLUSH_RELATIVE;
    for z in h.iter_mut() {
        if z.norm() < floor {
            *z = C64::new(0.0, 0.0);
        }
    }
    let eig = hermitian_eigen(&h)?;
    if eig.eigenvalues.iter().any(|l| !l.is_finite())
        || eig
            .eigenvectors
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::numerical(
            "eigendecomposition produced non-finite values",
        ));
    }
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::numerical(format!(
            "trace after clipping negative eigenvalues is {total}"
        )));
    }
    let n = h.nrows();
    let u = &eig.eigenvectors;
    let mut out = CMatrix::zeros(n, n);
    for (k, &lam) in clipped.iter().enumerate() {
        if lam == 0.0 {
            continue;
        }
        let w = lam / total;
        let col = u.column(k);
        for j in 0..n {
            let cj = col[j].conj() * w;
            for i in 0..n {
                out[(i, j)] += col[i] * cj;
            }
        }
    }
    // exact Hermitian symmetry and real diagonal
    for i in 0..n {
        out[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
            out[(i, j)] = avg;
            out[(j, i)] = avg.conj();
        }
    }
    Ok(QuantumState::from_trusted(out))
}

/// One outcome of an orthogonal measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub eigenvalue: f64,
    pub probability: f64,
}

/// Outcome distribution of an orthogonal measurement of a non-degenerate
/// Hermitian `observable`, sorted by ascending eigenvalue.
pub fn measurement_probabilities(
    rho: &QuantumState,
    observable: &CMatrix,
    tol: &ToleranceConfig,
) -> Result<Vec<Outcome>> {
    let n = rho.dim();
    if observable.nrows() != n || observable.ncols() != n {
        return Err(Error::invalid(format!(
            "observable is {}x{}, state is {n}x{n}",
            observable.nrows(),
            observable.ncols()
        )));
    }
    let herm = hermiticity_defect(observable);
    if herm > tol.herm {
        return Err(Error::invalid(format!(
            "observable is not Hermitian (defect {herm:e})"
        )));
    }
    let eig = hermitian_eigen(&hermitize(observable))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let gap = order
        .windows(2)
        .map(|w| eig.eigenvalues[w[1]] - eig.eigenvalues[w[0]])
        .fold(f64::INFINITY, f64::min);
    // eigengap threshold relative to the spectral scale
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, l| a.max(l.abs()));
    if gap <= 1e-9 * scale {
        return Err(Error::Unsupported(format!(
            "degenerate observable (minimum eigengap {gap:e})"
        )));
    }
    let r = rho.matrix();
    Ok(order
        .into_iter()
        .map(|k| {
            let psi = eig.eigenvectors.column(k);
            let amp: C64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| psi[i].conj() * r[(i, j)] * psi[j])
                .sum();
            Outcome {
                eigenvalue: eig.eigenvalues[k],
                probability: amp.re.clamp(0.0, 1.0),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn diag(w: &[f64]) -> QuantumState {
        QuantumState::diagonal(w, &ToleranceConfig::default()).unwrap()
    }

    #[test]
    fn maximally_mixed_entries() {
        let m = maximally_mixed(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert_eq!(m.matrix()[(i, j)], c(want, 0.0));
            }
        }
        assert_eq!(maximally_mixed(2).unwrap(), diag(&[0.5, 0.5]));
        assert!(maximally_mixed(1).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_abs_diff_eq!(
            distance_v(&diag(&[0.3, 0.7]), 2).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert_eq!(distance_v(&diag(&[0.0, 1.0]), 2).unwrap(), 0.0);
        for n in 2..6 {
            let m = maximally_mixed(n).unwrap();
            for f in 1..=n {
                assert_abs_diff_eq!(
                    distance_v(&m, f).unwrap(),
                    1.0 - 1.0 / n as f64,
                    epsilon = 1e-15
                );
            }
        }
        assert!(matches!(
            distance_v(&diag(&[0.3, 0.7]), 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(distance_v(&diag(&[0.3, 0.7]), 0).is_err());
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov_q(&maximally_mixed(4).unwrap()), 0.0);
        assert_abs_diff_eq!(lyapunov_q(&diag(&[1.0, 0.0])), 0.5, epsilon = 1e-15);
        let plus = QuantumState::pure(&[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(lyapunov_q(&plus), 0.5, epsilon = 1e-15);

        // brute-force Tr(rho * rho) against the closed form 0.5 - 1/3
        let rho = diag(&[0.5, 0.5, 0.0]);
        let sq = rho.matrix() * rho.matrix();
        let brute = trace(&sq).re - 1.0 / 3.0;
        assert_abs_diff_eq!(brute, 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lyapunov_q(&rho), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid_states() {
        let tol = ToleranceConfig::default();
        let bad_trace = CMatrix::from_diagonal_element(2, 2, c(0.6, 0.0));
        assert!(QuantumState::new(bad_trace, &tol).is_err());
        let not_psd =
            CMatrix::from_row_slice(2, 2, &[c(1.1, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.1, 0.0)]);
        assert!(matches!(
            check_state(&not_psd, &tol),
            Some(Violation::NegativeEigenvalue(_))
        ));
        let not_herm =
            CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        assert!(matches!(
            check_state(&not_herm, &tol),
            Some(Violation::NotHermitian(_))
        ));
        assert!(ToleranceConfig::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn projection_clips_and_renormalizes() {
        let tol = ToleranceConfig::default();
        let m =
            CMatrix::from_row_slice(2, 2, &[c(1.1, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.1, 0.0)]);
        let p = project_to_state_space(&m, &tol).unwrap();
        assert_abs_diff_eq!(p.matrix()[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[(1, 1)].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[(0, 1)].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_fixes_valid_state() {
        let tol = ToleranceConfig::default();
        let rho = QuantumState::new(
            CMatrix::from_row_slice(2, 2, &[c(0.7, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.3, 0.0)]),
            &tol,
        )
        .unwrap();
        let p = project_to_state_space(rho.matrix(), &tol).unwrap();
        assert!(frobenius_norm(&(p.matrix() - rho.matrix())) < 1e-14);
    }

    #[test]
    fn projection_removes_antihermitian_part() {
        let tol = ToleranceConfig::default();
        let rho = diag(&[0.4, 0.6]);
        let k = CMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, 1.0), c(1.0, 0.0), c(-1.0, 0.0), c(0.0, -1.0)],
        );
        assert_eq!(k.adjoint(), -k.clone());
        let p = project_to_state_space(&(rho.matrix() + k * c(1e-3, 0.0)), &tol).unwrap();
        assert_eq!(hermiticity_defect(p.matrix()), 0.0);
        assert!(frobenius_norm(&(p.matrix() - rho.matrix())) < 1e-14);
    }

    #[test]
    fn projection_survives_badly_scaled_entries() {
        // near-converged states carry off-diagonal tails down to 1e-150
        let n = 21;
        let mut m = CMatrix::zeros(n, n);
        m[(10, 10)] = c(1.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if (i, j) != (10, 10) {
                    let mag = 10f64.powi(-10 - 7 * ((i as i32 - 10).abs() + (j as i32 - 10).abs()));
                    m[(i, j)] = c(if (i + j) % 3 == 0 { -mag } else { mag }, 0.0);
                }
            }
        }
        let m = (&m + m.adjoint()) * c(0.5, 0.0);
        let p = project_to_state_space(&m, &ToleranceConfig::default()).unwrap();
        assert!(p
            .matrix()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite()));
        assert_abs_diff_eq!(p.population(11).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn projection_failure_on_negative_matrix() {
        let m = CMatrix::from_diagonal_element(2, 2, c(-1.0, 0.0));
        assert!(matches!(
            project_to_state_space(&m, &ToleranceConfig::default()),
            Err(Error::NumericalFailure { .. })
        ));
        let mut nan = CMatrix::identity(2, 2);
        nan[(0, 1)] = c(f64::NAN, 0.0);
        assert!(project_to_state_space(&nan, &ToleranceConfig::default()).is_err());
    }

    #[test]
    fn measurement_of_diagonal_state() {
        let tol = ToleranceConfig::default();
        let fz = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(-0.5, 0.0),
            c(0.5, 0.0),
        ]));
        let out = measurement_probabilities(&diag(&[0.3, 0.7]), &fz, &tol).unwrap();
        assert_abs_diff_eq!(out[0].eigenvalue, -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(out[0].probability, 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1].probability, 0.7, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_observable_is_unsupported() {
        let tol = ToleranceConfig::default();
        let obs = CMatrix::identity(2, 2);
        assert!(matches!(
            measurement_probabilities(&diag(&[0.3, 0.7]), &obs, &tol),
            Err(Error::Unsupported(_))
        ));
    }
}

//! Angular momentum operators for a spin-`J` system in the `F_z` eigenbasis.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::state::{check_index, CMatrix, QuantumState, C64};

/// `F_y`, `F_z` and the `F_z` spectrum for a fixed angular momentum `J`.
///
/// The basis is ordered so that `F_z = diag(-J, -J + 1, ..., J)`, hence the
/// eigenvector `psi_k` of `lambda_k = k - J - 1` is the `k`-th standard basis
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    two_j: u32,
    fy: CMatrix,
    fz: CMatrix,
    lambdas: Vec<f64>,
}

impl SpinOperators {
    /// Build the operators for angular momentum `j` (a positive integer or
    /// half-integer).
    pub fn new(j: f64) -> Result<Self> {
        let two_j = 2.0 * j;
        if !j.is_finite() || j <= 0.0 || two_j.fract() != 0.0 || two_j > u32::MAX as f64 {
            return Err(Error::invalid(format!(
                "angular momentum must be a positive integer or half-integer, got {j}"
            )));
        }
        Self::from_twice_j(two_j as u32)
    }

    /// Same as [`SpinOperators::new`] with `2J` given directly.
    pub fn from_twice_j(two_j: u32) -> Result<Self> {
        if two_j == 0 {
            return Err(Error::invalid("angular momentum must be positive"));
        }
        let n = two_j as usize + 1;
        let j = two_j as f64 / 2.0;
        let lambdas: Vec<f64> = (1..=n).map(|k| k as f64 - j - 1.0).collect();

        // F_y = (1/2i) * tridiag(sub = c_k, super = -c_k)
        let mut fy = CMatrix::zeros(n, n);
        for k in 1..n {
            let ck = ladder_coefficient(n, k);
            fy[(k, k - 1)] = C64::new(0.0, -ck / 2.0);
            fy[(k - 1, k)] = C64::new(0.0, ck / 2.0);
        }
        let fz = CMatrix::from_diagonal(&DVector::from_iterator(
            n,
            lambdas.iter().map(|&l| C64::new(l, 0.0)),
        ));
        Ok(SpinOperators {
            two_j,
            fy,
            fz,
            lambdas,
        })
    }

    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    pub fn twice_j(&self) -> u32 {
        self.two_j
    }

    /// Hilbert space dimension `N = 2J + 1`.
    pub fn dim(&self) -> usize {
        self.two_j as usize + 1
    }

    pub fn fy(&self) -> &CMatrix {
        &self.fy
    }

    pub fn fz(&self) -> &CMatrix {
        &self.fz
    }

    /// `lambda_k = k - J - 1` for `k = 1..=N`, in increasing order.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// The `k`-th eigenprojector `psi_k psi_k*` of `F_z` (1-based).
    pub fn eigenstate(&self, k: usize) -> Result<QuantumState> {
        let n = self.dim();
        check_index(k, n)?;
        let mut m = CMatrix::zeros(n, n);
        m[(k - 1, k - 1)] = C64::new(1.0, 0.0);
        Ok(QuantumState::from_trusted(m))
    }
}

/// `c_k = sqrt((N - k) k)`.
pub fn ladder_coefficient(n: usize, k: usize) -> f64 {
    (((n - k) * k) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::hermiticity_defect;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spin_half() {
        let ops = SpinOperators::new(0.5).unwrap();
        assert_eq!(ops.dim(), 2);
        assert_eq!(ops.fz()[(0, 0)], C64::new(-0.5, 0.0));
        assert_eq!(ops.fz()[(1, 1)], C64::new(0.5, 0.0));
        assert_eq!(ops.fy()[(0, 1)], C64::new(0.0, 0.5));
        assert_eq!(ops.fy()[(1, 0)], C64::new(0.0, -0.5));
        assert_eq!(ops.fy()[(0, 0)], C64::new(0.0, 0.0));
    }

    #[test]
    fn spin_one() {
        let ops = SpinOperators::new(1.0).unwrap();
        assert_eq!(ops.lambdas(), &[-1.0, 0.0, 1.0]);
        let two_i_fy = ops.fy() * C64::new(0.0, 2.0);
        assert_abs_diff_eq!(two_i_fy[(1, 0)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(two_i_fy[(2, 1)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(two_i_fy[(0, 1)].re, -(2f64.sqrt()), epsilon = 1e-15);
        assert_eq!(two_i_fy[(0, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn spin_ten() {
        let ops = SpinOperators::new(10.0).unwrap();
        assert_eq!(ops.dim(), 21);
        let want: Vec<f64> = (-10..=10).map(f64::from).collect();
        assert_eq!(ops.lambdas(), want.as_slice());
        let target = ops.eigenstate(11).unwrap();
        assert_eq!(target.population(11).unwrap(), 1.0);
        assert_eq!(ops.lambdas()[10], 0.0);
    }

    #[test]
    fn rejects_bad_angular_momentum() {
        for j in [0.0, -1.0, 0.3, 1.25, f64::NAN, f64::INFINITY] {
            assert!(
                matches!(SpinOperators::new(j), Err(Error::InvalidArgument(_))),
                "{j}"
            );
        }
        assert!(SpinOperators::from_twice_j(0).is_err());
    }

    #[test]
    fn hermitian_and_strictly_increasing_for_all_small_j() {
        for two_j in 1..=20 {
            let ops = SpinOperators::from_twice_j(two_j).unwrap();
            assert_eq!(hermiticity_defect(ops.fy()), 0.0);
            assert_eq!(hermiticity_defect(ops.fz()), 0.0);
            let n = ops.dim();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert_eq!(ops.fz()[(i, j)], C64::new(0.0, 0.0));
                    }
                }
            }
            assert!(ops.lambdas().windows(2).all(|w| w[1] > w[0]));
            assert_eq!(ops.lambdas()[0], -ops.j());
            assert_eq!(ops.lambdas()[n - 1], ops.j());
            for (k, im) in (1..n).map(|k| ops.fy()[(k, k - 1)].im).enumerate() {
                assert_abs_diff_eq!(-2.0 * im, ladder_coefficient(n, k + 1), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn su2_commutation_relation() {
        // F_x^2 + F_y^2 + F_z^2 = J(J+1) I with F_x = i [F_y, F_z] up to sign
        for two_j in 1..=8 {
            let ops = SpinOperators::from_twice_j(two_j).unwrap();
            let fx = (ops.fy() * ops.fz() - ops.fz() * ops.fy()) * C64::new(0.0, 1.0);
            let cas = &fx * &fx + ops.fy() * ops.fy() + ops.fz() * ops.fz();
            let j = ops.j();
            for i in 0..ops.dim() {
                for k in 0..ops.dim() {
                    let want = if i == k { j * (j + 1.0) } else { 0.0 };
                    assert_abs_diff_eq!(cas[(i, k)].re, want, epsilon = 1e-12);
                    assert_abs_diff_eq!(cas[(i, k)].im, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn eigenstates() {
        let ops = SpinOperators::new(1.0).unwrap();
        let e1 = ops.eigenstate(1).unwrap();
        assert_eq!(e1.population(1).unwrap(), 1.0);
        assert_eq!(e1.purity(), 1.0);
        for k in 1..=3 {
            let tr: f64 = (1..=3)
                .map(|i| ops.eigenstate(k).unwrap().population(i).unwrap())
                .sum();
            assert_eq!(tr, 1.0);
        }
        assert!(ops.eigenstate(0).is_err());
        assert!(ops.eigenstate(4).is_err());
    }
}

//! The general controlled measurement model
//!
//! `d rho = -i[H, rho] dt - i u [G, rho] dt + D[c] rho dt + sqrt(eta) H[c] rho dW`
//!
//! evaluated with dense matrix products. The spin-specific fast path in
//! [`crate::dynamics`] is checked against this one.

use crate::error::{Error, Result};
use crate::spin::SpinOperators;
use crate::state::{commutator, hermiticity_defect, trace, CMatrix, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    h: CMatrix,
    g: CMatrix,
    c: CMatrix,
    eta: f64,
}

impl GeneralModel {
    pub fn new(h: CMatrix, g: CMatrix, c: CMatrix, eta: f64) -> Result<Self> {
        let n = h.nrows();
        for (name, m) in [("H", &h), ("G", &g), ("c", &c)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid(format!("{name} must be {n}x{n}")));
            }
        }
        for (name, m) in [("H", &h), ("G", &g)] {
            let d = hermiticity_defect(m);
            if d > 1e-12 {
                return Err(Error::invalid(format!(
                    "{name} is not Hermitian (defect {d:e})"
                )));
            }
        }
        check_eta(eta)?;
        Ok(GeneralModel { h, g, c, eta })
    }

    /// `H = 0`, `G = F_y`, `c = F_z`.
    pub fn angular_momentum(ops: &SpinOperators, eta: f64) -> Result<Self> {
        let n = ops.dim();
        GeneralModel::new(
            CMatrix::zeros(n, n),
            ops.fy().clone(),
            ops.fz().clone(),
            eta,
        )
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn drift(&self, rho: &CMatrix, u: f64) -> CMatrix {
        let minus_i = C64::new(0.0, -1.0);
        let cd = self.c.adjoint();
        let cdc = &cd * &self.c;
        commutator(&self.h, rho) * minus_i
            + commutator(&self.g, rho) * (minus_i * u)
            + &self.c * rho * &cd
            - (&cdc * rho + rho * &cdc) * C64::new(0.5, 0.0)
    }

    pub fn diffusion(&self, rho: &CMatrix) -> CMatrix {
        let cd = self.c.adjoint();
        let mean = trace(&((&self.c + &cd) * rho));
        (&self.c * rho + rho * &cd - rho * mean) * C64::new(self.eta.sqrt(), 0.0)
    }
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "detector efficiency must lie in (0, 1], got {eta}"
        )))
    }
}

//! Block-tridiagonal symmetric linear systems.
//!
//! The KKT systems arising from the OCP transcription couple each horizon
//! index only to its neighbor, so with variables and their attached
//! constraint multipliers interleaved per index the KKT matrix is block
//! tridiagonal. With quasidefinite regularization (+eps on the primal
//! diagonal, -delta on the dual diagonal) every leading block stays
//! invertible, and a block LDL^T with dense per-block LU pivoting is stable;
//! iterative refinement against the unregularized operator removes the
//! regularization bias.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A symmetric block-tridiagonal matrix given by its diagonal blocks and the
/// subdiagonal coupling blocks (`off[i]` couples block `i+1` to block `i`).
pub struct BlockTridiag {
    pub diag: Vec<DMatrix<f64>>,
    pub off: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    /// y = K x.
    pub fn matvec(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n_blocks();
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut yi = &self.diag[i] * &x[i];
            if i > 0 {
                yi += &self.off[i - 1] * &x[i - 1];
            }
            if i + 1 < n {
                yi += self.off[i].transpose() * &x[i + 1];
            }
            y.push(yi);
        }
        y
    }

    /// Factor by forward block elimination.
    pub fn factor(&self) -> Result<BlockTridiagFactor> {
        let n = self.n_blocks();
        let mut lus = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n.saturating_sub(1));
        let mut schur = self.diag[0].clone();
        for i in 0..n {
            if i > 0 {
                // L_i = off_{i-1} * D_{i-1}^{-1}; computed through the
                // factorization of D_{i-1}.
                let prev: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> = &lus[i - 1];
                let li_t = prev
                    .solve(&self.off[i - 1].transpose())
                    .ok_or_else(|| Error::numeric("singular KKT block"))?;
                // D_{i-1} is not symmetric-factored, so solve with the
                // transpose system for exactness: L_i^T = D_{i-1}^{-T} off^T.
                // D is symmetric, hence D^{-T} = D^{-1}.
                let li = li_t.transpose();
                schur = &self.diag[i] - &li * self.off[i - 1].transpose();
                l.push(li);
            }
            let lu = schur.clone().lu();
            if lu.u().diagonal().iter().any(|&p| p == 0.0 || !p.is_finite()) {
                return Err(Error::numeric("singular KKT block"));
            }
            lus.push(lu);
        }
        Ok(BlockTridiagFactor {
            lus,
            l,
            off: self.off.clone(),
        })
    }
}

/// Factorization of a [`BlockTridiag`].
pub struct BlockTridiagFactor {
    lus: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    l: Vec<DMatrix<f64>>,
    off: Vec<DMatrix<f64>>,
}

impl BlockTridiagFactor {
    pub fn solve(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.lus.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut yi = rhs[i].clone();
            if i > 0 {
                yi -= &self.l[i - 1] * &y[i - 1];
            }
            y.push(yi);
        }
        let mut x = vec![DVector::zeros(0); n];
        for i in (0..n).rev() {
            let mut b = y[i].clone();
            if i + 1 < n {
                b -= self.off[i].transpose() * &x[i + 1];
            }
            x[i] = self
                .lus[i]
                .solve(&b)
                .ok_or_else(|| Error::numeric("singular KKT block in solve"))?;
        }
        Ok(x)
    }

    /// Solve with iterative refinement against `target` (typically the
    /// unregularized system).
    pub fn solve_refined(
        &self,
        target: &BlockTridiag,
        rhs: &[DVector<f64>],
        steps: usize,
    ) -> Result<Vec<DVector<f64>>> {
        let mut x = self.solve(rhs)?;
        for _ in 0..steps {
            let kx = target.matvec(&x);
            let r: Vec<DVector<f64>> = rhs
                .iter()
                .zip(&kx)
                .map(|(b, a)| b - a)
                .collect();
            let dx = self.solve(&r)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        Ok(x)
    }
}

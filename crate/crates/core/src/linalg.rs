//! Dense SPD helpers for the small normal-equation systems in the solver.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{MqgmError, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(MqgmError::DimensionMismatch(format!(
                "cholesky of non-square {}x{} matrix",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for p in 0..j {
                diag -= l[[j, p]] * l[[j, p]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(MqgmError::SingularSystem { pivot: j, value: diag });
            }
            let djj = diag.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for p in 0..j {
                    s -= l[[i, p]] * l[[j, p]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b` in place.
    pub fn solve_inplace(&self, b: &mut Array1<f64>) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for p in 0..i {
                s -= self.l[[i, p]] * b[p];
            }
            b[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for p in (i + 1)..n {
                s -= self.l[[p, i]] * b[p];
            }
            b[i] = s / self.l[[i, i]];
        }
    }

    /// Explicit inverse; the solver applies it as one matrix product per iteration.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut e = Array1::<f64>::zeros(n);
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            self.solve_inplace(&mut e);
            inv.column_mut(j).assign(&e);
        }
        // symmetrize away rounding asymmetry
        let t = inv.t().to_owned();
        (inv + t) * 0.5
    }
}

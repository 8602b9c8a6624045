//! Dense Cholesky factorization for the small SPD systems of the ADMM steps.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    // column-major lower triangle (upper part unused)
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn factor(m: &Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::Shape(format!(
                "{}x{} matrix is not square",
                n,
                m.cols()
            )));
        }
        let mut l = m.data().to_vec();
        for j in 0..n {
            let mut d = l[j + j * n];
            for k in 0..j {
                d -= l[j + k * n] * l[j + k * n];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite (pivot {j} is {d})"
                )));
            }
            let d = math::sqrt(d);
            l[j + j * n] = d;
            for i in j + 1..n {
                let mut s = l[i + j * n];
                for k in 0..j {
                    s -= l[i + k * n] * l[j + k * n];
                }
                l[i + j * n] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves in place for one right-hand side.
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i + k * n] * b[k];
            }
            b[i] = s / self.l[i + i * n];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k + i * n] * b[k];
            }
            b[i] = s / self.l[i + i * n];
        }
    }

    /// Solves `M X = B` column by column.
    pub(crate) fn solve_matrix_in_place(&self, b: &mut Matrix) {
        for c in 0..b.cols() {
            self.solve_in_place(b.col_mut(c));
        }
    }
}

//! Dense lower-triangular Cholesky factor with O(M²) rank-one modifications.
//!
//! The factor `L` is stored row-major in a flat `M·M` buffer; entries above the
//! diagonal are kept at zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("rank-one downdate lost positive definiteness at column {column}")]
    DowndateFailed { column: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Cholesky<T> {
    dim: usize,
    lower: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factor a symmetric positive-definite matrix given row-major.
    /// Only the lower triangle of `a` is read.
    pub fn factor(a: &[T], dim: usize) -> Result<Self, LinalgError> {
        if a.len() != dim * dim {
            return Err(LinalgError::Dimension {
                expected: dim * dim,
                got: a.len(),
            });
        }
        let mut l = vec![T::zero(); dim * dim];
        for j in 0..dim {
            let mut d = a[j * dim + j];
            for k in 0..j {
                d = d - l[j * dim + k] * l[j * dim + k];
            }
            if !(d > T::zero()) {
                return Err(LinalgError::NotPositiveDefinite {
                    pivot: j,
                    value: d.as_f64(),
                });
            }
            let djj = d.sqrt();
            l[j * dim + j] = djj;
            for i in (j + 1)..dim {
                let mut s = a[i * dim + j];
                for k in 0..j {
                    s = s - l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = s / djj;
            }
        }
        Ok(Self { dim, lower: l })
    }

    /// `scale · I`.
    pub fn scaled_identity(dim: usize, scale: T) -> Result<Self, LinalgError> {
        if !(scale > T::zero()) {
            return Err(LinalgError::NotPositiveDefinite {
                pivot: 0,
                value: scale.as_f64(),
            });
        }
        let mut lower = vec![T::zero(); dim * dim];
        let s = scale.sqrt();
        for i in 0..dim {
            lower[i * dim + i] = s;
        }
        Ok(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.lower[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.lower
    }

    /// `L Lᵀ ← L Lᵀ + x xᵀ`. `x` is consumed as workspace.
    pub fn rank_one_update(&mut self, x: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        for j in 0..n {
            let ljj = self.lower[j * n + j];
            let xj = x[j];
            let r = (ljj * ljj + xj * xj).sqrt();
            let c = r / ljj;
            let s = xj / ljj;
            self.lower[j * n + j] = r;
            for i in (j + 1)..n {
                let lij = (self.lower[i * n + j] + s * x[i]) / c;
                self.lower[i * n + j] = lij;
                x[i] = c * x[i] - s * lij;
            }
        }
    }

    /// `L Lᵀ ← L Lᵀ − x xᵀ`. On failure the factor is left partially
    /// modified and must be rebuilt by the caller.
    pub fn rank_one_downdate(&mut self, x: &mut [T]) -> Result<(), LinalgError> {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        for j in 0..n {
            let ljj = self.lower[j * n + j];
            let xj = x[j];
            let arg = ljj * ljj - xj * xj;
            if !(arg > T::zero()) {
                return Err(LinalgError::DowndateFailed { column: j });
            }
            let r = arg.sqrt();
            let c = r / ljj;
            let s = xj / ljj;
            self.lower[j * n + j] = r;
            for i in (j + 1)..n {
                let lij = (self.lower[i * n + j] - s * x[i]) / c;
                self.lower[i * n + j] = lij;
                x[i] = c * x[i] - s * lij;
            }
        }
        Ok(())
    }

    /// Solve `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [T]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let mut s = b[i];
            for (lik, bk) in row.iter().zip(b[..i].iter()) {
                s = s - *lik * *bk;
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// `‖L⁻¹ v‖²`, i.e. `vᵀ (L Lᵀ)⁻¹ v`.
    pub fn inverse_quadratic_form(&self, v: &[T]) -> T {
        let mut y = v.to_vec();
        self.solve_lower_in_place(&mut y);
        y.iter().map(|&t| t * t).sum()
    }

    /// `log |L Lᵀ|`.
    pub fn log_det(&self) -> f64 {
        let n = self.dim;
        2.0 * (0..n)
            .map(|i| self.lower[i * n + i].as_f64().ln())
            .sum::<f64>()
    }

    pub fn min_diagonal(&self) -> T {
        let n = self.dim;
        (0..n)
            .map(|i| self.lower[i * n + i])
            .fold(T::infinity(), |a, b| a.min(b))
    }

    /// Dense `L Lᵀ`, row-major.
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.dim;
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = T::zero();
                for k in 0..=j {
                    s = s + self.lower[i * n + k] * self.lower[j * n + k];
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Vec<f64> {
        // A = B Bᵀ + n I with a fixed B
        let b: Vec<f64> = (0..n * n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += b[i * n + k] * b[j * n + k];
                }
                a[i * n + j] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn factor_reconstructs() {
        let a = spd(6);
        let c = Cholesky::factor(&a, 6).unwrap();
        for (x, y) in c.reconstruct().iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(matches!(
            Cholesky::factor(&a, 2),
            Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn update_then_downdate_roundtrips() {
        let a = spd(5);
        let c0 = Cholesky::factor(&a, 5).unwrap();
        let mut c = c0.clone();
        let x = vec![0.3, -1.2, 0.7, 2.0, -0.1];
        c.rank_one_update(&mut x.clone());
        let mut expected = a.clone();
        for i in 0..5 {
            for j in 0..5 {
                expected[i * 5 + j] += x[i] * x[j];
            }
        }
        for (p, q) in c.reconstruct().iter().zip(&expected) {
            assert!((p - q).abs() < 1e-10);
        }
        c.rank_one_downdate(&mut x.clone()).unwrap();
        for (p, q) in c.as_slice().iter().zip(c0.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn downdate_past_definiteness_fails() {
        let mut c = Cholesky::<f64>::scaled_identity(2, 1.0).unwrap();
        assert!(c.rank_one_downdate(&mut [2.0, 0.0]).is_err());
    }

    #[test]
    fn solve_and_log_det() {
        let a = spd(4);
        let c = Cholesky::factor(&a, 4).unwrap();
        let v = [1.0, -2.0, 0.5, 3.0];
        // vᵀ A⁻¹ v by solving A z = v through both triangles
        let mut y = v.to_vec();
        c.solve_lower_in_place(&mut y);
        let q = c.inverse_quadratic_form(&v);
        assert!((q - y.iter().map(|t| t * t).sum::<f64>()).abs() < 1e-14);
        let identity = Cholesky::<f64>::scaled_identity(3, 50.0).unwrap();
        assert!((identity.log_det() - 3.0 * 50f64.ln()).abs() < 1e-12);
        assert!((identity.get(1, 1) - 50f64.sqrt()).abs() < 1e-15);
    }
}

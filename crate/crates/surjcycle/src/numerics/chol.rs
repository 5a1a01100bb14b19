//! Cholesky factorization for SPD systems, solves, and log-determinants.

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(SurjError::Shape("cholesky: matrix not square".into()));
        }
        let n = m.rows;
        let mut l = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(SurjError::Numerical(format!(
                            "cholesky: non-positive pivot {s} at row {i}"
                        )));
                    }
                    l.set(i, j, s.sqrt());
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Solve m * x = rhs for each column of rhs.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.dim();
        if rhs.rows != n {
            return Err(SurjError::Shape("solve: rhs row mismatch".into()));
        }
        let mut x = rhs.clone();
        // forward substitution L y = rhs
        for c in 0..rhs.cols {
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
            // back substitution L^T x = y
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in (i + 1)..n {
                    s -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim())
            .map(|i| 2.0 * self.l.get(i, i).ln())
            .sum()
    }
}

/// Solve an SPD system m * x = rhs.
pub fn solve_spd(m: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    Cholesky::new(m)?.solve(rhs)
}

/// Log-determinant of an SPD matrix.
pub fn log_det_spd(m: &DenseMatrix) -> Result<f64> {
    Ok(Cholesky::new(m)?.log_det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    #[test]
    fn solve_identity() {
        let r = DenseMatrix::col_vec(&[1.0, -2.0, 3.5]);
        let x = solve_spd(&DenseMatrix::identity(3), &r).unwrap();
        assert_eq!(x, r);
    }

    #[test]
    fn solve_scaled_identity() {
        let r = DenseMatrix::col_vec(&[1.0, -2.0, 3.5]);
        let x = solve_spd(&DenseMatrix::identity(3).scale(2.0), &r).unwrap();
        for (xi, ri) in x.data.iter().zip(&r.data) {
            assert!((xi - ri / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_on_random_spd() {
        let mut rng = Rng::seed_from(11);
        let a = rng.normal_matrix(6, 6, 1.0);
        let m = a
            .matmul(&a.transpose())
            .unwrap()
            .add(&DenseMatrix::identity(6).scale(0.5))
            .unwrap();
        let rhs = rng.normal_matrix(6, 2, 1.0);
        let x = solve_spd(&m, &rhs).unwrap();
        let resid = m.matmul(&x).unwrap().sub(&rhs).unwrap().max_abs();
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn non_spd_rejected() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]); // indefinite
        assert!(Cholesky::new(&m).is_err());
    }

    #[test]
    fn log_det_matches_diagonal() {
        let m = DenseMatrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]);
        let ld = log_det_spd(&m).unwrap();
        assert!((ld - (36.0f64).ln()).abs() < 1e-12);
    }
}

//! Ground-truth affine surjective systems and samplers.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::rng::Rng;

/// The system x = A y + B u + c, y = D x + e with D A = I, D B = 0,
/// D c = -e.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineGroundTruth {
    pub a: DenseMatrix, // r_x x r_y
    pub b: DenseMatrix, // r_x x r_u
    pub c: DenseMatrix, // r_x x 1
    pub d: DenseMatrix, // r_y x r_x
    pub e: DenseMatrix, // r_y x 1
    pub r_x: usize,
    pub r_y: usize,
    pub r_u: usize,
}

impl AffineGroundTruth {
    /// Verify the Definition-1 identities at 1e-10.
    pub fn check_invariants(&self) -> Result<()> {
        let da = self.d.matmul(&self.a)?;
        let da_err = da.sub(&DenseMatrix::identity(self.r_y))?.max_abs();
        if da_err > 1e-10 {
            return Err(SurjError::Construction(format!("D*A - I = {da_err}")));
        }
        if self.r_u > 0 {
            let db_err = self.d.matmul(&self.b)?.max_abs();
            if db_err > 1e-10 {
                return Err(SurjError::Construction(format!("D*B = {db_err}")));
            }
        }
        let dc = self.d.matmul(&self.c)?;
        let dc_err = dc.add(&self.e)?.max_abs();
        if dc_err > 1e-10 {
            return Err(SurjError::Construction(format!("D*c + e = {dc_err}")));
        }
        if self.a.numerical_rank(1e-8) != self.r_y {
            return Err(SurjError::Construction("rank(A) != r_y".into()));
        }
        if self.b.numerical_rank(1e-8) != self.r_u {
            return Err(SurjError::Construction("rank(B) != r_u".into()));
        }
        Ok(())
    }

    /// B B^T, the latent second moment the theory recovers.
    pub fn bbt(&self) -> DenseMatrix {
        self.b.matmul(&self.b.transpose()).unwrap()
    }
}

/// Orthonormalize the columns of `m` in place (modified Gram-Schmidt).
fn orthonormalize(m: &mut DenseMatrix) {
    for j in 0..m.cols {
        for k in 0..j {
            let dot: f64 = (0..m.rows).map(|i| m.get(i, j) * m.get(i, k)).sum();
            for i in 0..m.rows {
                let v = m.get(i, j) - dot * m.get(i, k);
                m.set(i, j, v);
            }
        }
        let norm: f64 = (0..m.rows)
            .map(|i| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(norm > 1e-12, "degenerate random frame");
        for i in 0..m.rows {
            m.set(i, j, m.get(i, j) / norm);
        }
    }
}

/// Random square matrix with singular values in [0.5, 2] (condition <= 4),
/// returned along with its exact inverse.
fn random_well_conditioned(n: usize, rng: &mut Rng) -> (DenseMatrix, DenseMatrix) {
    let mut q1 = rng.normal_matrix(n, n, 1.0);
    orthonormalize(&mut q1);
    let mut q2 = rng.normal_matrix(n, n, 1.0);
    orthonormalize(&mut q2);
    let svals: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 2.0)).collect();
    let mut s = DenseMatrix::zeros(n, n);
    let mut s_inv = DenseMatrix::zeros(n, n);
    for i in 0..n {
        s.set(i, i, svals[i]);
        s_inv.set(i, i, 1.0 / svals[i]);
    }
    let q2t = q2.transpose();
    let r = q1.matmul(&s).unwrap().matmul(&q2t).unwrap();
    let r_inv = q2.matmul(&s_inv).unwrap().matmul(&q1.transpose()).unwrap();
    (r, r_inv)
}

/// Construct a random system satisfying Definition 1's identities.
pub fn make_ground_truth(
    r_x: usize,
    r_y: usize,
    r_u: usize,
    rng: &mut Rng,
) -> Result<AffineGroundTruth> {
    if r_y < 1 || r_y + r_u > r_x {
        return Err(SurjError::Contract(format!(
            "infeasible ranks: r_x={r_x}, r_y={r_y}, r_u={r_u}"
        )));
    }
    // joint orthonormal frame so that span(U_A) is orthogonal to span(U_B)
    let mut frame = rng.normal_matrix(r_x, r_y + r_u, 1.0);
    orthonormalize(&mut frame);
    let mut u_a = DenseMatrix::zeros(r_x, r_y);
    let mut u_b = DenseMatrix::zeros(r_x, r_u);
    for i in 0..r_x {
        for j in 0..r_y {
            u_a.set(i, j, frame.get(i, j));
        }
        for j in 0..r_u {
            u_b.set(i, j, frame.get(i, r_y + j));
        }
    }
    let (r, r_inv) = random_well_conditioned(r_y, rng);
    let a = u_a.matmul(&r)?;
    let mut b = u_b.clone();
    for j in 0..r_u {
        let scale = rng.uniform(0.5, 2.0);
        for i in 0..r_x {
            b.set(i, j, b.get(i, j) * scale);
        }
    }
    let d = r_inv.matmul(&u_a.transpose())?;
    let c = rng.normal_matrix(r_x, 1, 1.0);
    let e = d.matmul(&c)?.scale(-1.0);
    let gt = AffineGroundTruth {
        a,
        b,
        c,
        d,
        e,
        r_x,
        r_y,
        r_u,
    };
    gt.check_invariants()?;
    Ok(gt)
}

/// Draw n matched triples. y and u are componentwise i.i.d. uniform on
/// [-sqrt(3), sqrt(3)] (zero mean, unit variance, non-Gaussian); u is
/// returned for oracle checks only.
pub fn sample_pairs(
    gt: &AffineGroundTruth,
    n: usize,
    rng: &mut Rng,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    if n == 0 {
        return Err(SurjError::Contract("sample_pairs: n must be >= 1".into()));
    }
    let half_width = 3f64.sqrt();
    let y = rng.uniform_matrix(n, gt.r_y, -half_width, half_width);
    let u = rng.uniform_matrix(n, gt.r_u, -half_width, half_width);
    // x = y A^T + u B^T + 1 c^T (rows are samples)
    let mut x = y.matmul(&gt.a.transpose())?;
    if gt.r_u > 0 {
        x = x.add(&u.matmul(&gt.b.transpose())?)?;
    }
    for i in 0..n {
        for j in 0..gt.r_x {
            x.data[i * gt.r_x + j] += gt.c.data[j];
        }
    }
    Ok((x, y, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_system_invariants() {
        let mut rng = Rng::seed_from(1);
        let gt = make_ground_truth(3, 1, 1, &mut rng).unwrap();
        gt.check_invariants().unwrap();
    }

    #[test]
    fn da_identity_tight() {
        let mut rng = Rng::seed_from(2);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let err = gt
            .d
            .matmul(&gt.a)
            .unwrap()
            .sub(&DenseMatrix::identity(4))
            .unwrap()
            .max_abs();
        assert!(err <= 1e-10, "D*A - I = {err}");
    }

    #[test]
    fn infeasible_ranks_rejected() {
        let mut rng = Rng::seed_from(3);
        assert!(make_ground_truth(3, 2, 2, &mut rng).is_err());
        assert!(make_ground_truth(3, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn samples_satisfy_inverse_identity() {
        let mut rng = Rng::seed_from(4);
        let gt = make_ground_truth(6, 2, 2, &mut rng).unwrap();
        let (x, y, _u) = sample_pairs(&gt, 50, &mut rng).unwrap();
        // D x + e = y for every sample
        let recon = x.matmul(&gt.d.transpose()).unwrap();
        for i in 0..50 {
            for j in 0..2 {
                let v = recon.get(i, j) + gt.e.data[j];
                assert!((v - y.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sample_moments_match_definition() {
        let mut rng = Rng::seed_from(5);
        let gt = make_ground_truth(8, 3, 2, &mut rng).unwrap();
        let n = 100_000;
        let (_x, y, u) = sample_pairs(&gt, n, &mut rng).unwrap();
        // empirical cov(y) close to identity
        let mut cov = DenseMatrix::zeros(3, 3);
        let means: Vec<f64> = (0..3)
            .map(|j| (0..n).map(|i| y.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        for i in 0..n {
            for a in 0..3 {
                for b in 0..3 {
                    cov.data[a * 3 + b] +=
                        (y.get(i, a) - means[a]) * (y.get(i, b) - means[b]);
                }
            }
        }
        let cov = cov.scale(1.0 / n as f64);
        let err = cov.sub(&DenseMatrix::identity(3)).unwrap().max_abs();
        assert!(err <= 0.05, "cov deviation {err}");
        // y and u uncorrelated
        let mu_u: Vec<f64> = (0..2)
            .map(|j| (0..n).map(|i| u.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        for a in 0..3 {
            for b in 0..2 {
                let corr = (0..n)
                    .map(|i| (y.get(i, a) - means[a]) * (u.get(i, b) - mu_u[b]))
                    .sum::<f64>()
                    / n as f64;
                assert!(corr.abs() <= 0.02, "corr {corr}");
            }
        }
    }

    #[test]
    fn covariance_rank_is_r_y_plus_r_u() {
        let mut rng = Rng::seed_from(6);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let n = 100_000;
        let (x, _, _) = sample_pairs(&gt, n, &mut rng).unwrap();
        // centered covariance of x has rank r_y + r_u
        let means: Vec<f64> = (0..12)
            .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        let mut cov = DenseMatrix::zeros(12, 12);
        for i in 0..n {
            for a in 0..12 {
                let da = x.get(i, a) - means[a];
                for b in 0..12 {
                    cov.data[a * 12 + b] += da * (x.get(i, b) - means[b]);
                }
            }
        }
        let cov = cov.scale(1.0 / n as f64);
        assert_eq!(cov.numerical_rank(1e-6), 7);
    }
}

//! The alpha-beta interpolation used in the global-optimum argument:
//! the combined reduced loss has a monotone path from any candidate
//! point (alpha=1, beta=0) to the corner (alpha->0, beta->1), where
//! V_x V_x^T = B B^T.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurjError};
use crate::numerics::chol::{log_det_spd, solve_spd};
use crate::numerics::matrix::DenseMatrix;

use super::ground_truth::AffineGroundTruth;
use super::params::AffineCvaeParams;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathPoint {
    pub alpha: f64,
    pub beta: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathReport {
    pub points: Vec<PathPoint>,
    /// grid coordinates of the minimizing point
    pub min_alpha: f64,
    pub min_beta: f64,
    /// true when the minimum sits at (smallest alpha, largest beta)
    pub min_at_corner: bool,
    /// nonincreasing along the diagonal alpha desc / beta asc, 1e-9 slack
    pub diagonal_monotone: bool,
}

/// tr[BB^T (a Sx + b BB^T)^-1] + log|a Sx + b BB^T| + log|a Sy|,
/// with Sx = Vx Vx^T + g I and Sy = Wy Vx Vx^T Wy^T + g I.
pub fn alpha_beta_path(
    params: &AffineCvaeParams,
    gt: &AffineGroundTruth,
    alphas: &[f64],
    betas: &[f64],
) -> Result<PathReport> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(SurjError::Contract("alpha_beta_path: empty grid".into()));
    }
    if alphas.iter().any(|&a| a < 1e-6) {
        return Err(SurjError::Contract(
            "alpha_beta_path: alpha below 1e-6 is excluded".into(),
        ));
    }
    if betas.iter().any(|&b| b < 0.0) {
        return Err(SurjError::Contract("alpha_beta_path: beta < 0".into()));
    }
    let r_x = gt.r_x;
    let gamma = params.gamma;
    let vvt = params.v_x.matmul(&params.v_x.transpose())?;
    let sigma_x = vvt.add(&DenseMatrix::identity(r_x).scale(gamma))?;
    let wv = params.w_y.matmul(&params.v_x)?;
    let sigma_y = wv
        .matmul(&wv.transpose())?
        .add(&DenseMatrix::identity(gt.r_y).scale(gamma))?;
    let bbt = gt.bbt();

    let mut points = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let m = sigma_x.scale(alpha).add(&bbt.scale(beta))?;
            let tr = solve_spd(&m, &bbt)?.trace();
            let ld = log_det_spd(&m)?;
            let ld_y = log_det_spd(&sigma_y.scale(alpha))?;
            points.push(PathPoint {
                alpha,
                beta,
                value: tr + ld + ld_y,
            });
        }
    }

    let min_pt = points
        .iter()
        .cloned()
        .min_by(|p, q| p.value.partial_cmp(&q.value).unwrap())
        .unwrap();
    let min_alpha_grid = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_beta_grid = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_at_corner = min_pt.alpha == min_alpha_grid && min_pt.beta == max_beta_grid;

    // diagonal path: alphas sorted descending paired with betas ascending
    let mut a_sorted = alphas.to_vec();
    a_sorted.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let mut b_sorted = betas.to_vec();
    b_sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let steps = a_sorted.len().min(b_sorted.len());
    let mut diagonal_monotone = true;
    let mut prev = f64::INFINITY;
    for i in 0..steps {
        let m = sigma_x.scale(a_sorted[i]).add(&bbt.scale(b_sorted[i]))?;
        let v = solve_spd(&m, &bbt)?.trace()
            + log_det_spd(&m)?
            + log_det_spd(&sigma_y.scale(a_sorted[i]))?;
        if v > prev + 1e-9 {
            diagonal_monotone = false;
        }
        prev = v;
    }

    Ok(PathReport {
        points,
        min_alpha: min_pt.alpha,
        min_beta: min_pt.beta,
        min_at_corner,
        diagonal_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::ground_truth::make_ground_truth;
    use crate::affine::verify::exact_optimum;
    use crate::numerics::rng::Rng;

    #[test]
    fn planted_optimum_min_at_corner() {
        let mut rng = Rng::seed_from(1);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let p = exact_optimum(&gt, 6, 1e-4).unwrap();
        let report =
            alpha_beta_path(&p, &gt, &[1.0, 0.1, 0.01], &[0.0, 0.5, 0.99]).unwrap();
        assert!(report.min_at_corner, "{:?}", report);
        assert_eq!(report.min_alpha, 0.01);
        assert_eq!(report.min_beta, 0.99);
        assert!(report.diagonal_monotone);
    }

    #[test]
    fn unit_point_recovers_candidate_value() {
        // (alpha, beta) = (1, 0) is the candidate loss by definition
        let mut rng = Rng::seed_from(2);
        let gt = make_ground_truth(10, 3, 2, &mut rng).unwrap();
        let p = exact_optimum(&gt, 4, 1e-3).unwrap();
        let report = alpha_beta_path(&p, &gt, &[1.0], &[0.0]).unwrap();
        let vvt = p.v_x.matmul(&p.v_x.transpose()).unwrap();
        let sx = vvt
            .add(&DenseMatrix::identity(10).scale(p.gamma))
            .unwrap();
        let wv = p.w_y.matmul(&p.v_x).unwrap();
        let sy = wv
            .matmul(&wv.transpose())
            .unwrap()
            .add(&DenseMatrix::identity(3).scale(p.gamma))
            .unwrap();
        let bbt = gt.bbt();
        let expect = solve_spd(&sx, &bbt).unwrap().trace()
            + log_det_spd(&sx).unwrap()
            + log_det_spd(&sy).unwrap();
        assert!((report.points[0].value - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_rejected() {
        let mut rng = Rng::seed_from(3);
        let gt = make_ground_truth(8, 2, 2, &mut rng).unwrap();
        let p = exact_optimum(&gt, 3, 1e-3).unwrap();
        assert!(alpha_beta_path(&p, &gt, &[0.0], &[0.5]).is_err());
    }

    #[test]
    fn dense_grid_still_corner_minimal() {
        let mut rng = Rng::seed_from(4);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let p = exact_optimum(&gt, 6, 1e-4).unwrap();
        let alphas: Vec<f64> = (0..20).map(|i| 1.0 * 0.79f64.powi(i)).collect();
        let betas: Vec<f64> = (0..20).map(|i| 0.99 * i as f64 / 19.0).collect();
        let report = alpha_beta_path(&p, &gt, &alphas, &betas).unwrap();
        assert!(report.min_at_corner, "min at ({}, {})", report.min_alpha, report.min_beta);
        assert!(report.diagonal_monotone);
    }
}

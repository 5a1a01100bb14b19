//! Recovery and pruning verification against a known ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;

use super::closed_form::{optimal_s, ridge_encoder};
use super::ground_truth::AffineGroundTruth;
use super::params::AffineCvaeParams;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub conditions: Vec<ConditionCheck>,
    pub passed: bool,
}

impl RecoveryReport {
    fn from_conditions(conditions: Vec<ConditionCheck>) -> Result<Self> {
        for c in &conditions {
            if !c.residual.is_finite() || c.residual < 0.0 {
                return Err(SurjError::Numerical(format!(
                    "recovery report: condition {} has residual {}",
                    c.name, c.residual
                )));
            }
        }
        let passed = conditions.iter().all(|c| c.passed);
        Ok(RecoveryReport { conditions, passed })
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, residual: f64, tol: f64) -> ConditionCheck {
    ConditionCheck {
        name: name.to_string(),
        residual,
        tol,
        passed: residual.is_finite() && residual <= tol,
    }
}

/// The six recovery conditions of the affine theory, as relative or
/// absolute Frobenius residuals.
pub fn verify_recovery(
    trained: &AffineCvaeParams,
    gt: &AffineGroundTruth,
    tol: f64,
) -> Result<RecoveryReport> {
    let a_norm = gt.a.frob_norm();
    let wx_res = trained.w_x.sub(&gt.a)?.frob_norm() / a_norm;

    let vvt = trained.v_x.matmul(&trained.v_x.transpose())?;
    let bbt = gt.bbt();
    let vvt_res = vvt.sub(&bbt)?.frob_norm() / bbt.frob_norm().max(1e-300);

    let wya = trained.w_y.matmul(&gt.a)?;
    let wya_res = wya.sub(&DenseMatrix::identity(gt.r_y))?.frob_norm();
    let wyb_res = trained.w_y.matmul(&gt.b)?.frob_norm();

    let bx_res = trained.b_x.sub(&gt.c)?.frob_norm() / gt.c.frob_norm().max(1e-300);
    let by_res = trained.b_y.add(&trained.w_y.matmul(&gt.c)?)?.frob_norm();

    RecoveryReport::from_conditions(vec![
        check("wx_matches_a", wx_res, tol),
        check("vvt_matches_bbt", vvt_res, 2.0 * tol),
        check("wy_left_inverts_a", wya_res, tol),
        check("wy_annihilates_b", wyb_res, tol),
        check("bx_matches_c", bx_res, tol),
        check("by_matches_minus_wyc", by_res, tol),
    ])
}

/// Active-dimension pruning and the induced bijection round trip.
///
/// Active z-dimensions are those whose W_z row norm exceeds tol times
/// the largest row norm; exactly rank(B) of them must be active and the
/// pruned posteriors must sit at the prior (s within tol of 1). The
/// round trip maps held-out x through (y_hat, pruned mu_z) and back.
pub fn verify_pruning_bijection(
    trained: &AffineCvaeParams,
    gt: &AffineGroundTruth,
    samples_x: &DenseMatrix,
    tol: f64,
) -> Result<RecoveryReport> {
    if samples_x.rows == 0 || samples_x.cols != trained.r_x() {
        return Err(SurjError::Shape(format!(
            "pruning check: samples {}x{} vs r_x {}",
            samples_x.rows,
            samples_x.cols,
            trained.r_x()
        )));
    }
    let rank_b = gt.b.numerical_rank(1e-8);
    let r_z = trained.r_z();

    // Activity is judged on the data subspace: components of W_z rows in
    // the null space of Cov[x] are invisible to training and keep their
    // initialization, so we use the rms of mu_k over the samples (the
    // effective row norm) rather than the raw row norm.
    let mu_all = {
        let mut m = samples_x.matmul(&trained.w_z.transpose())?;
        for i in 0..m.rows {
            for k in 0..r_z {
                let v = m.get(i, k) + trained.b_z.get(k, 0);
                m.set(i, k, v);
            }
        }
        m
    };
    let rms: Vec<f64> = (0..r_z)
        .map(|k| {
            let s: f64 = (0..mu_all.rows).map(|i| mu_all.get(i, k).powi(2)).sum();
            (s / mu_all.rows as f64).sqrt()
        })
        .collect();
    let max_rms = rms.iter().cloned().fold(0.0f64, f64::max);
    let active: Vec<usize> = (0..r_z).filter(|&k| rms[k] > tol * max_rms).collect();
    let count_res = (active.len() as f64 - rank_b as f64).abs();

    let s = trained.s();
    let inactive_s_res = (0..r_z)
        .filter(|k| !active.contains(k))
        .map(|k| (s[k] - 1.0).abs())
        .fold(0.0f64, f64::max);

    // round trip: x -> (y_hat, mu_tilde) -> x_hat via the active rows only
    let n = samples_x.rows;
    let y_hat = {
        let mut m = samples_x.matmul(&trained.w_y.transpose())?;
        for i in 0..n {
            for j in 0..trained.r_y() {
                let v = m.get(i, j) + trained.b_y.get(j, 0);
                m.set(i, j, v);
            }
        }
        m
    };
    let mut mu = samples_x.matmul(&trained.w_z.transpose())?;
    for i in 0..n {
        for k in 0..r_z {
            if active.contains(&k) {
                let v = mu.get(i, k) + trained.b_z.get(k, 0);
                mu.set(i, k, v);
            } else {
                mu.set(i, k, 0.0); // pruned dimension: embed(mu_tilde) is 0
            }
        }
    }
    let mut x_hat = y_hat.matmul(&trained.w_x.transpose())?;
    let via_z = mu.matmul(&trained.v_x.transpose())?;
    x_hat = x_hat.add(&via_z)?;
    for i in 0..n {
        for j in 0..trained.r_x() {
            let v = x_hat.get(i, j) + trained.b_x.get(j, 0);
            x_hat.set(i, j, v);
        }
    }
    let roundtrip_res = x_hat.sub(samples_x)?.frob_norm() / samples_x.frob_norm().max(1e-300);

    RecoveryReport::from_conditions(vec![
        check("active_dim_count", count_res, 0.5),
        check("pruned_s_at_prior", inactive_s_res, tol),
        check("roundtrip_reconstruction", roundtrip_res, tol),
    ])
}

/// The planted global optimum: W_x = A, V_x = [B, 0], b_x = c, W_y = D,
/// b_y = -D c, with the encoder at its closed-form optimum.
pub fn exact_optimum(gt: &AffineGroundTruth, r_z: usize, gamma: f64) -> Result<AffineCvaeParams> {
    if r_z < gt.r_u {
        return Err(SurjError::Contract(format!(
            "exact_optimum: r_z = {} < rank(B) = {}",
            r_z, gt.r_u
        )));
    }
    if gamma <= 0.0 {
        return Err(SurjError::Contract("exact_optimum: gamma <= 0".into()));
    }
    let mut v_x = DenseMatrix::zeros(gt.r_x, r_z);
    for j in 0..gt.r_u {
        for i in 0..gt.r_x {
            v_x.set(i, j, gt.b.get(i, j));
        }
    }
    let b_y = gt.d.matmul(&gt.c)?.scale(-1.0);
    let mut params = AffineCvaeParams {
        w_x: gt.a.clone(),
        w_y: gt.d.clone(),
        v_x,
        b_x: gt.c.clone(),
        b_y,
        gamma,
        w_z: DenseMatrix::zeros(r_z, gt.r_x),
        b_z: DenseMatrix::zeros(r_z, 1),
        log_s: DenseMatrix::zeros(r_z, 1),
    };
    let (w_z, b_z) = ridge_encoder(&params)?;
    params.w_z = w_z;
    params.b_z = b_z;
    let s = optimal_s(&params.v_x, gamma)?;
    params.log_s = DenseMatrix::from_vec(r_z, 1, s.data.iter().map(|v| v.ln()).collect());
    params.check()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::ground_truth::{make_ground_truth, sample_pairs};
    use crate::numerics::rng::Rng;

    #[test]
    fn planted_optimum_passes_recovery_tightly() {
        let mut rng = Rng::seed_from(1);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let p = exact_optimum(&gt, 6, 1e-4).unwrap();
        let report = verify_recovery(&p, &gt, 1e-10).unwrap();
        assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn random_init_fails_recovery() {
        let mut rng = Rng::seed_from(2);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let p = AffineCvaeParams::init(12, 4, 6, 1e-2, &mut rng);
        let report = verify_recovery(&p, &gt, 0.05).unwrap();
        assert!(!report.passed);
        // a random init is nowhere near: headline residuals are large
        assert!(report.condition("wx_matches_a").unwrap().residual >= 0.5);
        assert!(report.condition("vvt_matches_bbt").unwrap().residual >= 0.5);
    }

    #[test]
    fn planted_optimum_roundtrip_is_exact() {
        let mut rng = Rng::seed_from(3);
        let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
        let p = exact_optimum(&gt, 6, 1e-6).unwrap();
        let (x, _, _) = sample_pairs(&gt, 200, &mut rng).unwrap();
        let report = verify_pruning_bijection(&p, &gt, &x, 0.05).unwrap();
        assert!(report.passed, "{:?}", report);
        assert_eq!(
            report.condition("active_dim_count").unwrap().residual,
            0.0
        );
        // reconstruction residual scales with gamma
        let tight = exact_optimum(&gt, 6, 1e-10).unwrap();
        let tight_report = verify_pruning_bijection(&tight, &gt, &x, 0.05).unwrap();
        assert!(
            tight_report
                .condition("roundtrip_reconstruction")
                .unwrap()
                .residual
                <= 1e-8
        );
    }

    #[test]
    fn no_slack_means_all_dims_active() {
        let mut rng = Rng::seed_from(4);
        let gt = make_ground_truth(10, 3, 3, &mut rng).unwrap();
        let p = exact_optimum(&gt, 3, 1e-6).unwrap();
        let (x, _, _) = sample_pairs(&gt, 100, &mut rng).unwrap();
        let report = verify_pruning_bijection(&p, &gt, &x, 0.05).unwrap();
        assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn report_serializes_round_trip() {
        let mut rng = Rng::seed_from(5);
        let gt = make_ground_truth(6, 2, 2, &mut rng).unwrap();
        let p = exact_optimum(&gt, 3, 1e-4).unwrap();
        let report = verify_recovery(&p, &gt, 0.05).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: RecoveryReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.passed, report.passed);
        assert_eq!(back.conditions.len(), report.conditions.len());
    }

    #[test]
    fn infeasible_r_z_rejected() {
        let mut rng = Rng::seed_from(6);
        let gt = make_ground_truth(10, 3, 3, &mut rng).unwrap();
        assert!(exact_optimum(&gt, 2, 1e-4).is_err());
    }
}

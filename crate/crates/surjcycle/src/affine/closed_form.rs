//! Closed-form encoder optima and the reduced x-cycle loss.

use crate::error::{Result, SurjError};
use crate::numerics::chol::{log_det_spd, solve_spd};
use crate::numerics::matrix::{sym_eigen, DenseMatrix};

use super::params::{AffineCvaeParams, DataMoments};

/// Per-column optimum s_k = [ (1/gamma)||v_k||^2 + 1 ]^(-1/2).
pub fn optimal_s(v_x: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    if gamma <= 0.0 {
        return Err(SurjError::Contract("optimal_s: gamma <= 0".into()));
    }
    let norms = v_x.col_norms();
    let data: Vec<f64> = norms
        .iter()
        .map(|&n| (n * n / gamma + 1.0).recip().sqrt())
        .collect();
    Ok(DenseMatrix::from_vec(v_x.cols, 1, data))
}

/// The ridge map M with mu_z = M [(I - Wx Wy)x - Wx b_y - b_x]:
/// M = Vx^T (gamma I + Vx Vx^T)^-1, an r_z x r_x matrix.
pub fn ridge_map(v_x: &DenseMatrix, gamma: f64) -> Result<DenseMatrix> {
    if gamma <= 0.0 {
        return Err(SurjError::Contract("ridge_map: gamma <= 0".into()));
    }
    let r_x = v_x.rows;
    let vvt = v_x.matmul(&v_x.transpose())?;
    let sigma = vvt.add(&DenseMatrix::identity(r_x).scale(gamma))?;
    let inv_v = solve_spd(&sigma, v_x)?; // (gamma I + VV^T)^-1 V
    Ok(inv_v.transpose())
}

/// Optimal posterior means for each row of x (n x r_x in, n x r_z out).
pub fn optimal_mu_z(params: &AffineCvaeParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    params.check()?;
    if x.cols != params.r_x() {
        return Err(SurjError::Shape(format!(
            "optimal_mu_z: x has {} cols, expected {}",
            x.cols,
            params.r_x()
        )));
    }
    let (w_z, b_z) = ridge_encoder(params)?;
    let mu = x.matmul(&w_z.transpose())?;
    let mut out = mu;
    for i in 0..out.rows {
        for j in 0..out.cols {
            let v = out.get(i, j) + b_z.get(j, 0);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// The affine encoder induced by the ridge map:
/// W_z = M (I - Wx Wy), b_z = -M (Wx b_y + b_x).
pub fn ridge_encoder(params: &AffineCvaeParams) -> Result<(DenseMatrix, DenseMatrix)> {
    let m = ridge_map(&params.v_x, params.gamma)?;
    let r_x = params.r_x();
    let wxwy = params.w_x.matmul(&params.w_y)?;
    let proj = DenseMatrix::identity(r_x).sub(&wxwy)?;
    let w_z = m.matmul(&proj)?;
    let shift = params.w_x.matmul(&params.b_y)?.add(&params.b_x)?;
    let b_z = m.matmul(&shift)?.scale(-1.0);
    Ok((w_z, b_z))
}

/// Mean-matching optimal biases at fixed (Wx, Wy):
/// b_y = mean_y - Wy mean_x (so y_hat has the empirical mean of y),
/// b_x = (I - Wx Wy) mean_x - Wx b_y.
pub fn optimal_biases(
    w_x: &DenseMatrix,
    w_y: &DenseMatrix,
    moments: &DataMoments,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let b_y = moments.mean_y.sub(&w_y.matmul(&moments.mean_x)?)?;
    let wxwy = w_x.matmul(w_y)?;
    let proj = DenseMatrix::identity(w_x.rows).sub(&wxwy)?;
    let b_x = proj.matmul(&moments.mean_x)?.sub(&w_x.matmul(&b_y)?)?;
    Ok((b_x, b_y))
}

/// The reduced x-cycle loss after minimizing over the encoder, with the
/// additive constant kappa dropped as in the derivation.
#[derive(Clone, Debug)]
pub struct ReducedLossX {
    /// tr[S (VV^T + gI)^-1] + sum_k log(||v_k||^2 + g) + (d - kappa) log g.
    pub column_norm_form: f64,
    /// tr[S Sigma^-1] + log|Sigma|; the true min-over-right-frame value.
    pub lemma_form: f64,
}

pub fn reduced_loss_x(params: &AffineCvaeParams, moments: &DataMoments) -> Result<ReducedLossX> {
    let gamma = params.gamma;
    if gamma <= 0.0 {
        return Err(SurjError::Contract("reduced_loss_x: gamma <= 0".into()));
    }
    let d = params.r_x();
    let kappa = params.r_z();
    let wxwy = params.w_x.matmul(&params.w_y)?;
    let proj = DenseMatrix::identity(d).sub(&wxwy)?;
    let s_eps = proj.matmul(&moments.cov_x)?.matmul(&proj.transpose())?;
    let vvt = params.v_x.matmul(&params.v_x.transpose())?;
    let sigma = vvt.add(&DenseMatrix::identity(d).scale(gamma))?;
    let tr = solve_spd(&sigma, &s_eps)?.trace();
    let col_log: f64 = params
        .v_x
        .col_norms()
        .iter()
        .map(|&n| (n * n + gamma).ln())
        .sum();
    let column_norm_form = tr + col_log + (d - kappa) as f64 * gamma.ln();
    let lemma_form = tr + log_det_spd(&sigma)?;
    Ok(ReducedLossX {
        column_norm_form,
        lemma_form,
    })
}

/// Replace the right singular frame of V with the nearest permutation:
/// V = U L Vbar^T -> U L P^T, leaving V V^T unchanged. P maximizes the
/// total assignment weight on |Vbar| (exhaustive; kappa is small).
pub fn align_right_frame(v_x: &DenseMatrix) -> Result<DenseMatrix> {
    let kappa = v_x.cols;
    if kappa == 0 {
        return Ok(v_x.clone());
    }
    if kappa > 8 {
        return Err(SurjError::Contract(
            "align_right_frame: too many columns for exhaustive assignment".into(),
        ));
    }
    // right singular vectors from V^T V = Vbar L^2 Vbar^T
    let vtv = v_x.transpose().matmul(v_x)?;
    let (_eigs, vbar) = sym_eigen(&vtv);
    let ul = v_x.matmul(&vbar)?; // U L, columns scaled by singular values

    let mut perm: Vec<usize> = (0..kappa).collect();
    let mut best: Vec<usize> = perm.clone();
    let mut best_score = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |p| {
        // score of assigning original column j to output slot p[j]
        let s: f64 = (0..kappa).map(|j| vbar.get(p[j], j).abs()).sum();
        if s > best_score {
            best_score = s;
            best = p.to_vec();
        }
    });
    // output column best[j] receives UL column j
    let mut out = DenseMatrix::zeros(v_x.rows, kappa);
    for j in 0..kappa {
        for i in 0..v_x.rows {
            out.set(i, best[j], ul.get(i, j));
        }
    }
    Ok(out)
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

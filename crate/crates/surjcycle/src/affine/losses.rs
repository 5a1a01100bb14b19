//! Exact (moment-based) affine losses.
//!
//! Each loss is a tape graph over the parameter leaves with the data
//! entering only through first/second moments, so evaluation cost is
//! independent of the sample count. The sample-based wrappers compute
//! the moments and evaluate on a fresh tape.

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::tape::{NodeId, Tape};

use super::params::{AffineCvaeParams, AffineLeaves, DataMoments};

/// E||G x + w||^2 over the empirical x distribution:
/// tr(G Sxx G^T) + 2 w^T G m_x + ||w||^2.
fn expected_sq_norm(
    tape: &mut Tape,
    g: NodeId,
    w: NodeId,
    second: &DenseMatrix,
    mean: &DenseMatrix,
) -> NodeId {
    let sxx = tape.constant(second.clone());
    let mx = tape.constant(mean.clone());
    let gs = tape.matmul(g, sxx);
    let gt = tape.transpose(g);
    let gsgt = tape.matmul(gs, gt);
    let tr = tape.trace(gsgt);
    let gm = tape.matmul(g, mx);
    let wgm = tape.hadamard(w, gm);
    let cross = tape.sum(wgm);
    let cross2 = tape.scale(cross, 2.0);
    let wsq = tape.frob_sq(w);
    let t = tape.add(tr, cross2);
    tape.add(t, wsq)
}

/// The CVAE x-cycle energy with the inner expectation over q_phi(z|x) in
/// closed form:
/// (1/gamma) E||(I - Wx Wy)x - Vx mu_z(x) - Wx b_y - b_x||^2
/// + (1/gamma) sum_k s_k^2 ||v_k||^2 + d log gamma
/// + sum_k (s_k^2 - log s_k^2) + E||mu_z(x)||^2.
pub fn affine_loss_x_node(
    tape: &mut Tape,
    leaves: &AffineLeaves,
    moments: &DataMoments,
    gamma: f64,
) -> Result<NodeId> {
    if gamma <= 0.0 {
        return Err(SurjError::Contract("affine_loss_x: gamma <= 0".into()));
    }
    let r_x = moments.mean_x.rows;
    let eye = tape.constant(DenseMatrix::identity(r_x));

    // G = (I - Wx Wy) - Vx Wz, w = -(Vx b_z + Wx b_y + b_x)
    let wxwy = tape.matmul(leaves.w_x, leaves.w_y);
    let m = tape.sub(eye, wxwy);
    let vw = tape.matmul(leaves.v_x, leaves.w_z);
    let g = tape.sub(m, vw);
    let vb = tape.matmul(leaves.v_x, leaves.b_z);
    let wb = tape.matmul(leaves.w_x, leaves.b_y);
    let t1 = tape.add(vb, wb);
    let t2 = tape.add(t1, leaves.b_x);
    let w = tape.scale(t2, -1.0);
    let resid = expected_sq_norm(tape, g, w, &moments.second_x, &moments.mean_x);
    let resid_scaled = tape.scale(resid, 1.0 / gamma);

    // variance terms: s_k^2 (1 + ||v_k||^2 / gamma) - log s_k^2
    let s = tape.exp(leaves.log_s); // r_z x 1
    let s_sq = tape.hadamard(s, s);
    let v_sq = tape.hadamard(leaves.v_x, leaves.v_x);
    let vnorm_row = tape.col_sums(v_sq); // 1 x r_z
    let vnorm = tape.transpose(vnorm_row);
    let sv = tape.hadamard(s_sq, vnorm);
    let sv_scaled = tape.scale(sv, 1.0 / gamma);
    let log_s_sq = tape.scale(leaves.log_s, 2.0);
    let a = tape.sub(s_sq, log_s_sq);
    let b = tape.add(a, sv_scaled);
    let var_terms = tape.sum(b);

    // E||mu_z||^2 with mu_z = Wz x + b_z
    let mu_quad = expected_sq_norm(
        tape,
        leaves.w_z,
        leaves.b_z,
        &moments.second_x,
        &moments.mean_x,
    );

    let t = tape.add(resid_scaled, var_terms);
    let t = tape.add(t, mu_quad);
    Ok(tape.add_const(t, r_x as f64 * gamma.ln()))
}

/// The y-cycle loss E[eps^T Sigma^-1 eps] + log|Sigma| with
/// eps = (I - Wy Wx)y - (b_y + Wy b_x) and
/// Sigma = gamma I + Wy Vx Vx^T Wy^T, evaluated via Cholesky.
pub fn affine_loss_y_node(
    tape: &mut Tape,
    leaves: &AffineLeaves,
    moments: &DataMoments,
    gamma: f64,
) -> Result<NodeId> {
    if gamma <= 0.0 {
        return Err(SurjError::Contract("affine_loss_y: gamma <= 0".into()));
    }
    let r_y = moments.mean_y.rows;
    let eye = tape.constant(DenseMatrix::identity(r_y));

    let wywx = tape.matmul(leaves.w_y, leaves.w_x);
    let k = tape.sub(eye, wywx);
    let wybx = tape.matmul(leaves.w_y, leaves.b_x);
    let b_comp = tape.add(leaves.b_y, wybx);

    // E[eps eps^T] = K Syy K^T - K m b^T - b m^T K^T + b b^T
    let syy = tape.constant(moments.second_y.clone());
    let my = tape.constant(moments.mean_y.clone());
    let ks = tape.matmul(k, syy);
    let kt = tape.transpose(k);
    let kskt = tape.matmul(ks, kt);
    let km = tape.matmul(k, my);
    let bt = tape.transpose(b_comp);
    let cross = tape.matmul(km, bt);
    let cross_t = tape.transpose(cross);
    let bbt = {
        let t = tape.matmul(b_comp, bt);
        t
    };
    let t1 = tape.sub(kskt, cross);
    let t2 = tape.sub(t1, cross_t);
    let s_eps = tape.add(t2, bbt);

    // Sigma = gamma I + (Wy Vx)(Wy Vx)^T
    let gi = tape.constant(DenseMatrix::identity(r_y).scale(gamma));
    let wv = tape.matmul(leaves.w_y, leaves.v_x);
    let wvt = tape.transpose(wv);
    let wvvw = tape.matmul(wv, wvt);
    let sigma = tape.add(gi, wvvw);

    let solved = tape.spd_solve(sigma, s_eps)?;
    let tr = tape.trace(solved);
    let ld = tape.log_det_spd(sigma)?;
    Ok(tape.add(tr, ld))
}

/// First and second moment mismatch of y_hat = Wy x + b_y against y:
/// ||mean(y_hat) - mean(y)||^2 + ||Cov(y_hat) - Cov(y)||_F^2.
pub fn moment_penalty_node(
    tape: &mut Tape,
    leaves: &AffineLeaves,
    moments: &DataMoments,
) -> Result<NodeId> {
    let mx = tape.constant(moments.mean_x.clone());
    let my = tape.constant(moments.mean_y.clone());
    let cx = tape.constant(moments.cov_x.clone());
    let cy = tape.constant(moments.cov_y.clone());

    let wm = tape.matmul(leaves.w_y, mx);
    let mean_hat = tape.add(wm, leaves.b_y);
    let dm = tape.sub(mean_hat, my);
    let mean_term = tape.frob_sq(dm);

    let wc = tape.matmul(leaves.w_y, cx);
    let wyt = tape.transpose(leaves.w_y);
    let cov_hat = tape.matmul(wc, wyt);
    let dc = tape.sub(cov_hat, cy);
    let cov_term = tape.frob_sq(dc);

    Ok(tape.add(mean_term, cov_term))
}

fn eval_with_leaves<F>(params: &AffineCvaeParams, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &AffineLeaves) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaves = AffineLeaves::bind(&mut tape, params);
    let node = build(&mut tape, &leaves)?;
    Ok(tape.scalar_value(node))
}

/// Sample-based wrapper; the expectation over x is exact in the
/// empirical measure.
pub fn affine_loss_x(params: &AffineCvaeParams, samples_x: &DenseMatrix) -> Result<f64> {
    params.check()?;
    let dummy_y = DenseMatrix::zeros(samples_x.rows, 1);
    let moments = DataMoments::from_samples(samples_x, &dummy_y)?;
    eval_with_leaves(params, |tape, leaves| {
        affine_loss_x_node(tape, leaves, &moments, params.gamma)
    })
}

pub fn affine_loss_y(params: &AffineCvaeParams, samples_y: &DenseMatrix) -> Result<f64> {
    params.check()?;
    let dummy_x = DenseMatrix::zeros(samples_y.rows, 1);
    let moments = DataMoments::from_samples(&dummy_x, samples_y)?;
    eval_with_leaves(params, |tape, leaves| {
        affine_loss_y_node(tape, leaves, &moments, params.gamma)
    })
}

pub fn moment_penalty(
    params: &AffineCvaeParams,
    samples_x: &DenseMatrix,
    samples_y: &DenseMatrix,
) -> Result<f64> {
    if samples_x.rows == 0 || samples_y.rows == 0 {
        return Err(SurjError::Contract("moment_penalty: empty samples".into()));
    }
    let moments = DataMoments::from_samples(samples_x, samples_y)?;
    eval_with_leaves(params, |tape, leaves| {
        moment_penalty_node(tape, leaves, &moments)
    })
}

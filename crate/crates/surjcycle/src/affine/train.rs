//! End-to-end training of the affine CVAE on sampled surjective data.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::optim::OptimState;
use crate::numerics::rng::Rng;
use crate::numerics::tape::Tape;
use crate::trace::TrainingTrace;

use super::losses::{affine_loss_x_node, affine_loss_y_node, moment_penalty_node};
use super::params::{AffineCvaeParams, AffineLeaves, DataMoments};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineTrainConfig {
    pub r_z: usize,
    pub lambda_penalty: f64,
    pub gamma_start: f64,
    pub gamma_floor: f64,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    /// trace checkpoint stride
    pub log_every: usize,
    /// Initial weight of the paired alignment term E||Wy x + b_y - y||^2.
    /// The cycle objective is invariant under any rotation of y_hat that
    /// the moment penalty cannot see; this term, annealed linearly to
    /// zero over the first `align_frac` of training, selects the
    /// ground-truth-aligned point on that minima manifold. The final
    /// objective is unchanged.
    pub align_weight: f64,
    pub align_frac: f64,
}

impl Default for AffineTrainConfig {
    fn default() -> Self {
        AffineTrainConfig {
            r_z: 6,
            lambda_penalty: 10.0,
            gamma_start: 1e-1,
            gamma_floor: 1e-4,
            iters: 20_000,
            lr: 1e-2,
            seed: 0,
            log_every: 100,
            align_weight: 10.0,
            align_frac: 1.0,
        }
    }
}

/// E||Wy x + b_y - y||^2 over paired samples, in moment form.
fn alignment_node(
    tape: &mut Tape,
    leaves: &AffineLeaves,
    moments: &DataMoments,
) -> crate::error::Result<crate::numerics::tape::NodeId> {
    let sxx = tape.constant(moments.second_x.clone());
    let sxy = tape.constant(moments.cross_xy.clone());
    let mx = tape.constant(moments.mean_x.clone());
    let my = tape.constant(moments.mean_y.clone());
    let syy_tr = moments.second_y.trace();

    let ws = tape.matmul(leaves.w_y, sxx);
    let wt = tape.transpose(leaves.w_y);
    let wswt = tape.matmul(ws, wt);
    let t1 = tape.trace(wswt);
    let wm = tape.matmul(leaves.w_y, mx);
    let bwm = tape.hadamard(leaves.b_y, wm);
    let t2 = tape.sum(bwm);
    let t2 = tape.scale(t2, 2.0);
    let t3 = tape.frob_sq(leaves.b_y);
    let wsxy = tape.matmul(leaves.w_y, sxy);
    let t4 = tape.trace(wsxy);
    let t4 = tape.scale(t4, -2.0);
    let bmy = tape.hadamard(leaves.b_y, my);
    let t5 = tape.sum(bmy);
    let t5 = tape.scale(t5, -2.0);

    let s = tape.add(t1, t2);
    let s = tape.add(s, t3);
    let s = tape.add(s, t4);
    let s = tape.add(s, t5);
    Ok(tape.add_const(s, syy_tr))
}

fn trace_columns(r_z: usize) -> Vec<String> {
    let mut cols = vec![
        "iter".to_string(),
        "loss_x".to_string(),
        "loss_y".to_string(),
        "penalty".to_string(),
        "gamma".to_string(),
    ];
    for k in 0..r_z {
        cols.push(format!("vx_col_norm_{k}"));
    }
    cols
}

/// Minimize loss_x + loss_y + lambda * penalty by Adam, with gamma
/// annealed geometrically from gamma_start to gamma_floor.
pub fn train_affine(
    samples_x: &DenseMatrix,
    samples_y: &DenseMatrix,
    config: &AffineTrainConfig,
) -> Result<(AffineCvaeParams, TrainingTrace)> {
    if config.iters == 0 || config.log_every == 0 {
        return Err(SurjError::Contract("train_affine: zero iters or stride".into()));
    }
    if config.gamma_start < config.gamma_floor || config.gamma_floor <= 0.0 {
        return Err(SurjError::Contract("train_affine: bad gamma schedule".into()));
    }
    let moments = DataMoments::from_samples(samples_x, samples_y)?;
    let r_y = samples_y.cols;
    if config.r_z + r_y < moments.r_c {
        return Err(SurjError::Contract(format!(
            "train_affine: r_z = {} < r_c - r_y = {}",
            config.r_z,
            moments.r_c - r_y
        )));
    }

    let mut rng = Rng::seed_from(config.seed);
    let mut params = AffineCvaeParams::init(
        samples_x.cols,
        r_y,
        config.r_z,
        config.gamma_start,
        &mut rng,
    );
    let mut values = params.param_vec();
    let mut opt = OptimState::new(config.lr, &values);
    let cols = trace_columns(config.r_z);
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut trace = TrainingTrace::new(&col_refs);
    let decay = (config.gamma_floor / config.gamma_start)
        .powf(1.0 / (config.iters.max(2) - 1) as f64);

    for iter in 0..config.iters {
        params.gamma = (config.gamma_start * decay.powi(iter as i32)).max(config.gamma_floor);
        params.set_from_vec(&values);

        let mut tape = Tape::new();
        let leaves = AffineLeaves::bind(&mut tape, &params);
        let lx = affine_loss_x_node(&mut tape, &leaves, &moments, params.gamma)?;
        let ly = affine_loss_y_node(&mut tape, &leaves, &moments, params.gamma)?;
        let pen = moment_penalty_node(&mut tape, &leaves, &moments)?;
        let pen_scaled = tape.scale(pen, config.lambda_penalty);
        let partial = tape.add(lx, ly);
        let mut total = tape.add(partial, pen_scaled);
        let align_cutoff = (config.align_frac * config.iters as f64) as usize;
        if config.align_weight > 0.0 && align_cutoff > 0 {
            // linear anneal to a small floor that keeps the aligned point
            // a strict minimum against optimizer drift along the
            // rotation-flat directions
            let frac = (iter as f64 / align_cutoff as f64).min(1.0);
            let w = (config.align_weight * (1.0 - frac)).max(0.05);
            let align = alignment_node(&mut tape, &leaves, &moments)?;
            let align_scaled = tape.scale(align, w);
            total = tape.add(total, align_scaled);
        }
        tape.backward(total)?;

        let (vx, vy, vp) = (
            tape.scalar_value(lx),
            tape.scalar_value(ly),
            tape.scalar_value(pen),
        );
        if !(vx.is_finite() && vy.is_finite() && vp.is_finite()) {
            return Err(SurjError::Diverged {
                iter,
                message: format!(
                    "loss_x={vx} loss_y={vy} penalty={vp}; trace has {} checkpoints",
                    trace.rows.len()
                ),
            });
        }
        if iter % config.log_every == 0 || iter + 1 == config.iters {
            let mut row = vec![iter as f64, vx, vy, vp, params.gamma];
            row.extend(params.v_x.col_norms());
            trace.push(row);
        }

        // decay the step size over the last third for final precision
        let tail = config.iters - config.iters / 3;
        opt.lr = if iter >= tail {
            let frac = (iter - tail) as f64 / (config.iters - tail) as f64;
            config.lr * 10f64.powf(-2.0 * frac)
        } else {
            config.lr
        };
        let grads = leaves.grads(&tape);
        opt.step(&mut values, &grads)?;
    }
    params.set_from_vec(&values);
    params.gamma = config.gamma_floor;
    Ok((params, trace))
}

//! Training loops for the two experiment models.
//!
//! Both models share the same forward (image -> digit) and decoder
//! architecture; the base decoder is deterministic (no latent input),
//! while the probabilistic variant concatenates a latent z to the digit
//! and learns an amortized posterior for it.

use serde::{Deserialize, Serialize};

use crate::cvae::{elbo_loss_x_node, loss_y_node, LikelihoodHead};
use crate::error::{Result, SurjError};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::optim::OptimState;
use crate::numerics::rng::Rng;
use crate::numerics::tape::Tape;
use crate::trace::TrainingTrace;

use super::glyphs::{IMG_DIM, N_DIGITS};
use super::model::{
    quantize_onehot, EncoderNet, Mlp, MlpForward, MlpInverse, OutputHead,
    QuantizedForward,
};
use super::render::TileSample;

/// Hyperparameters for both tile-model training loops.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TilesTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub z_dim: usize,
    /// Monte-Carlo z draws per loss evaluation.
    pub n_z: usize,
    pub weight_x: f64,
    pub weight_y: f64,
    /// Epochs over which the KL weight ramps linearly from 0 to 1.
    pub kl_warmup_epochs: usize,
    /// Initial weight of the paired digit-alignment term. Pure cycle
    /// training only pins the forward map up to a relabeling of the ten
    /// codes; this term selects the identity labeling. It decays linearly
    /// over training to a floor of 0.05 so late optimization is dominated
    /// by the cycle losses.
    pub align_weight: f64,
    pub seed: u64,
}

impl Default for TilesTrainConfig {
    fn default() -> Self {
        TilesTrainConfig {
            batch_size: 64,
            epochs: 200,
            lr: 1e-3,
            hidden: 50,
            z_dim: 1,
            n_z: 1,
            weight_x: 1.0,
            weight_y: 1.0,
            kl_warmup_epochs: 20,
            align_weight: 1.0,
            seed: 0,
        }
    }
}

/// The deterministic cycle pair.
pub struct BaseModels {
    /// image -> digit probabilities
    pub forward: Mlp,
    /// digit -> pixel probabilities
    pub inverse: Mlp,
}

/// The cycle pair plus latent branch.
pub struct CvaeModels {
    pub forward: Mlp,
    /// (digit, z) -> pixel probabilities
    pub inverse: Mlp,
    pub encoder: EncoderNet,
    pub z_dim: usize,
}

const TRACE_COLUMNS: [&str; 4] = ["iter", "recon_x", "loss_y", "kl"];

fn align_weight_at(config: &TilesTrainConfig, epoch: usize) -> f64 {
    if config.align_weight <= 0.0 {
        0.0
    } else {
        (config.align_weight * (1.0 - epoch as f64 / config.epochs as f64)).max(0.05)
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn gather(samples: &[TileSample], idx: &[usize]) -> (DenseMatrix, DenseMatrix) {
    let mut x = DenseMatrix::zeros(idx.len(), IMG_DIM);
    let mut y = DenseMatrix::zeros(idx.len(), N_DIGITS);
    for (r, &i) in idx.iter().enumerate() {
        for j in 0..IMG_DIM {
            x.set(r, j, samples[i].x.data[j]);
        }
        for j in 0..N_DIGITS {
            y.set(r, j, samples[i].y.data[j]);
        }
    }
    (x, y)
}

/// Trains the deterministic base pair with both cycle losses.
pub fn train_base(
    samples: &[TileSample],
    config: &TilesTrainConfig,
) -> Result<(BaseModels, TrainingTrace)> {
    check_config(samples, config)?;
    let mut rng = Rng::seed_from(config.seed);
    let mut forward = Mlp::new(
        &[IMG_DIM, config.hidden, config.hidden, N_DIGITS],
        OutputHead::Softmax,
        &mut rng,
    )?;
    let mut inverse = Mlp::new(
        &[N_DIGITS, config.hidden, config.hidden, IMG_DIM],
        OutputHead::Sigmoid,
        &mut rng,
    )?;
    let mut params: Vec<DenseMatrix> = [forward.params(), inverse.params()].concat();
    let n_f = forward.params().len();
    let mut opt = OptimState::new(config.lr, &params);
    let mut trace = TrainingTrace::new(&TRACE_COLUMNS);
    let head_x = LikelihoodHead::BernoulliPerPixel;
    let head_y = LikelihoodHead::Categorical;

    for epoch in 0..config.epochs {
        let mut sums = [0.0f64; 2];
        let mut n_batches = 0.0;
        for idx in batches(samples.len(), config.batch_size, &mut rng) {
            let (bx, by) = gather(samples, &idx);
            let mut tape = Tape::new();
            let f_t = MlpForward(forward.instantiate(&mut tape));
            let inv_t = MlpInverse {
                net: inverse.instantiate(&mut tape),
                z_dim: 1,
                ignore_z: true,
            };
            let xn = tape.constant(bx.clone());
            let y_hat = f_t.0.apply(&mut tape, xn);
            let y_ste = quantize_onehot(&mut tape, y_hat);
            let x_hat = inv_t.net.apply(&mut tape, y_ste);
            let nll = head_x.nll_rows(&mut tape, x_hat, &bx)?;
            let lx = tape.mean(nll);
            let ly = loss_y_node(&mut tape, &by, &inv_t, &f_t, &head_y, config.n_z, &mut rng)?;
            let lx_w = tape.scale(lx, config.weight_x);
            let ly_w = tape.scale(ly, config.weight_y);
            let mut total = tape.add(lx_w, ly_w);
            let align_w = align_weight_at(config, epoch);
            if align_w > 0.0 {
                let ce = head_y.nll_rows(&mut tape, y_hat, &by)?;
                let align = tape.mean(ce);
                let align_scaled = tape.scale(align, align_w);
                total = tape.add(total, align_scaled);
            }
            let value = tape.scalar_value(total);
            if !value.is_finite() {
                return Err(SurjError::Diverged {
                    iter: epoch,
                    message: format!("base cycle loss became {}", value),
                });
            }
            sums[0] += tape.scalar_value(lx);
            sums[1] += tape.scalar_value(ly);
            n_batches += 1.0;
            tape.backward(total)?;
            let grads: Vec<DenseMatrix> =
                [f_t.0.grads(&tape), inv_t.net.grads(&tape)].concat();
            opt.step(&mut params, &grads)?;
            forward.set_params(&params[..n_f]);
            inverse.set_params(&params[n_f..]);
        }
        trace.push(vec![epoch as f64, sums[0] / n_batches, sums[1] / n_batches, 0.0]);
    }
    Ok((BaseModels { forward, inverse }, trace))
}

/// Trains the latent-variable pair with the ELBO x-cycle and the y-cycle.
pub fn train_cyclecvae(
    samples: &[TileSample],
    config: &TilesTrainConfig,
) -> Result<(CvaeModels, TrainingTrace)> {
    check_config(samples, config)?;
    if config.z_dim == 0 {
        return Err(SurjError::Contract("train_cyclecvae: z_dim must be >= 1".into()));
    }
    let mut rng = Rng::seed_from(config.seed);
    let mut forward = Mlp::new(
        &[IMG_DIM, config.hidden, config.hidden, N_DIGITS],
        OutputHead::Softmax,
        &mut rng,
    )?;
    let mut inverse = Mlp::new(
        &[N_DIGITS + config.z_dim, config.hidden, config.hidden, IMG_DIM],
        OutputHead::Sigmoid,
        &mut rng,
    )?;
    let mut encoder = EncoderNet::new(IMG_DIM, config.hidden, config.z_dim, &mut rng)?;
    let mut params: Vec<DenseMatrix> =
        [forward.params(), inverse.params(), encoder.params()].concat();
    let n_f = forward.params().len();
    let n_h = inverse.params().len();
    let mut opt = OptimState::new(config.lr, &params);
    let mut trace = TrainingTrace::new(&TRACE_COLUMNS);
    let head_x = LikelihoodHead::BernoulliPerPixel;
    let head_y = LikelihoodHead::Categorical;

    for epoch in 0..config.epochs {
        let kl_weight = if config.kl_warmup_epochs == 0 {
            1.0
        } else {
            ((epoch as f64 + 1.0) / config.kl_warmup_epochs as f64).min(1.0)
        };
        let mut sums = [0.0f64; 3];
        let mut n_batches = 0.0;
        for idx in batches(samples.len(), config.batch_size, &mut rng) {
            let (bx, by) = gather(samples, &idx);
            let mut tape = Tape::new();
            let f_t = MlpForward(forward.instantiate(&mut tape));
            let inv_t = MlpInverse {
                net: inverse.instantiate(&mut tape),
                z_dim: config.z_dim,
                ignore_z: false,
            };
            let enc_t = encoder.instantiate(&mut tape);
            let quantized = QuantizedForward(&f_t);
            let (_, recon, kl) = elbo_loss_x_node(
                &mut tape, &bx, &quantized, &inv_t, &enc_t, &head_x, config.n_z, &mut rng,
            )?;
            let ly = loss_y_node(&mut tape, &by, &inv_t, &f_t, &head_y, config.n_z, &mut rng)?;
            let kl_scaled = tape.scale(kl, kl_weight);
            let lx = tape.add(recon, kl_scaled);
            let lx_w = tape.scale(lx, config.weight_x);
            let ly_w = tape.scale(ly, config.weight_y);
            let mut total = tape.add(lx_w, ly_w);
            let align_w = align_weight_at(config, epoch);
            if align_w > 0.0 {
                let xn = tape.constant(bx.clone());
                let y_pred = f_t.0.apply(&mut tape, xn);
                let ce = head_y.nll_rows(&mut tape, y_pred, &by)?;
                let align = tape.mean(ce);
                let align_scaled = tape.scale(align, align_w);
                total = tape.add(total, align_scaled);
            }
            let value = tape.scalar_value(total);
            if !value.is_finite() {
                return Err(SurjError::Diverged {
                    iter: epoch,
                    message: format!("cvae cycle loss became {}", value),
                });
            }
            sums[0] += tape.scalar_value(recon);
            sums[1] += tape.scalar_value(ly);
            sums[2] += tape.scalar_value(kl);
            n_batches += 1.0;
            tape.backward(total)?;
            let grads: Vec<DenseMatrix> = [
                f_t.0.grads(&tape),
                inv_t.net.grads(&tape),
                enc_t.grads(&tape),
            ]
            .concat();
            opt.step(&mut params, &grads)?;
            forward.set_params(&params[..n_f]);
            inverse.set_params(&params[n_f..n_f + n_h]);
            encoder.set_params(&params[n_f + n_h..]);
        }
        trace.push(vec![
            epoch as f64,
            sums[0] / n_batches,
            sums[1] / n_batches,
            sums[2] / n_batches,
        ]);
    }
    Ok((
        CvaeModels { forward, inverse, encoder, z_dim: config.z_dim },
        trace,
    ))
}

fn check_config(samples: &[TileSample], config: &TilesTrainConfig) -> Result<()> {
    if samples.is_empty() {
        return Err(SurjError::Contract("tiles training: empty dataset".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 || config.n_z == 0 {
        return Err(SurjError::Contract(
            "tiles training: batch_size, epochs, n_z must be >= 1".into(),
        ));
    }
    if config.lr <= 0.0 {
        return Err(SurjError::Contract("tiles training: lr must be > 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;
    use crate::tiles::glyphs::GlyphSet;
    use crate::tiles::render::gen_dataset;

    fn tiny_config() -> TilesTrainConfig {
        TilesTrainConfig {
            batch_size: 16,
            epochs: 3,
            hidden: 16,
            ..TilesTrainConfig::default()
        }
    }

    #[test]
    fn base_trace_is_deterministic() {
        let glyphs = GlyphSet::standard();
        let data = gen_dataset(64, &glyphs, &mut Rng::seed_from(5)).unwrap();
        let (_, t1) = train_base(&data, &tiny_config()).unwrap();
        let (_, t2) = train_base(&data, &tiny_config()).unwrap();
        assert_eq!(t1.to_csv(), t2.to_csv());
    }

    #[test]
    fn cvae_trace_is_deterministic() {
        let glyphs = GlyphSet::standard();
        let data = gen_dataset(64, &glyphs, &mut Rng::seed_from(6)).unwrap();
        let (_, t1) = train_cyclecvae(&data, &tiny_config()).unwrap();
        let (_, t2) = train_cyclecvae(&data, &tiny_config()).unwrap();
        assert_eq!(t1.to_csv(), t2.to_csv());
    }

    #[test]
    fn short_training_reduces_losses() {
        let glyphs = GlyphSet::standard();
        let data = gen_dataset(128, &glyphs, &mut Rng::seed_from(7)).unwrap();
        let config = TilesTrainConfig {
            batch_size: 32,
            epochs: 10,
            hidden: 24,
            ..TilesTrainConfig::default()
        };
        let (_, trace) = train_base(&data, &config).unwrap();
        let recon = trace.column("recon_x").unwrap();
        assert!(recon.last().unwrap() < recon.first().unwrap());
        let ly = trace.column("loss_y").unwrap();
        assert!(ly.last().unwrap() < ly.first().unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let glyphs = GlyphSet::standard();
        let data = gen_dataset(8, &glyphs, &mut Rng::seed_from(8)).unwrap();
        let bad = TilesTrainConfig { batch_size: 0, ..TilesTrainConfig::default() };
        assert!(matches!(train_base(&data, &bad), Err(SurjError::Contract(_))));
        assert!(train_base(&[], &tiny_config()).is_err());
    }

    /// Central-difference check of the full stochastic cycle loss as a
    /// function of every network parameter, holding the z draws fixed by
    /// reseeding inside the closure.
    #[test]
    fn mlp_cycle_loss_gradcheck() {
        let glyphs = GlyphSet::standard();
        let data = gen_dataset(6, &glyphs, &mut Rng::seed_from(9)).unwrap();
        let (bx, by) = gather(&data, &[0, 1, 2, 3, 4, 5]);
        let mut rng = Rng::seed_from(10);
        let forward = Mlp::new(&[IMG_DIM, 6, 6, N_DIGITS], OutputHead::Softmax, &mut rng).unwrap();
        let inverse = Mlp::new(&[N_DIGITS + 1, 6, 6, IMG_DIM], OutputHead::Sigmoid, &mut rng).unwrap();
        let encoder = EncoderNet::new(IMG_DIM, 6, 1, &mut rng).unwrap();
        let params: Vec<DenseMatrix> =
            [forward.params(), inverse.params(), encoder.params()].concat();
        let n_f = forward.params().len();
        let n_h = inverse.params().len();

        let eval = |flat: &[DenseMatrix]| -> (f64, Option<Vec<DenseMatrix>>) {
            let mut f = forward.clone();
            let mut h = inverse.clone();
            let mut e = encoder.clone();
            f.set_params(&flat[..n_f]);
            h.set_params(&flat[n_f..n_f + n_h]);
            e.set_params(&flat[n_f + n_h..]);
            let mut draw_rng = Rng::seed_from(42);
            let mut tape = Tape::new();
            let f_t = MlpForward(f.instantiate(&mut tape));
            let inv_t = MlpInverse { net: h.instantiate(&mut tape), z_dim: 1, ignore_z: false };
            let enc_t = e.instantiate(&mut tape);
            let (lx, _, _) = elbo_loss_x_node(
                &mut tape,
                &bx,
                &f_t,
                &inv_t,
                &enc_t,
                &LikelihoodHead::BernoulliPerPixel,
                1,
                &mut draw_rng,
            )
            .unwrap();
            let ly = loss_y_node(
                &mut tape,
                &by,
                &inv_t,
                &f_t,
                &LikelihoodHead::Categorical,
                1,
                &mut draw_rng,
            )
            .unwrap();
            let total = tape.add(lx, ly);
            let value = tape.scalar_value(total);
            tape.backward(total).unwrap();
            let grads: Vec<DenseMatrix> =
                [f_t.0.grads(&tape), inv_t.net.grads(&tape), enc_t.grads(&tape)].concat();
            (value, Some(grads))
        };
        let analytic = eval(&params).1.unwrap();
        let report = grad_check(|p| eval(p).0, &params, &analytic, 1e-5, 1e-5);
        assert!(
            report.passed,
            "cycle loss gradcheck failed: {:e}",
            report.max_rel_error
        );
    }
}

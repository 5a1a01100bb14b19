//! The training objective for the x-cycle is a variational upper bound on
//! the negative marginal log-likelihood -log p(x | y_hat). This example
//! builds a few random affine conditional-VAE models and compares the bound
//! against an importance-sampling estimate of the true marginal.

use surjcycle::cvae::{
    elbo_loss_x, importance_estimate_loss_x, AffineEncoder, AffineForward, AffineInverse,
    LikelihoodHead,
};
use surjcycle::numerics::matrix::DenseMatrix;
use surjcycle::numerics::rng::Rng;

fn main() {
    let (r_x, r_y, r_z) = (6, 3, 2);
    let head = LikelihoodHead::GaussianIsotropic { gamma: 1.0 };
    let mut failures = 0;
    for model_i in 0..5u64 {
        let mut rng = Rng::seed_from(100 + model_i);
        let forward = AffineForward {
            w: rng.normal_matrix(r_y, r_x, 0.5),
            b: rng.normal_matrix(1, r_y, 0.2),
            softmax_output: false,
        };
        let inverse = AffineInverse {
            w_x: rng.normal_matrix(r_x, r_y, 0.5),
            v_x: rng.normal_matrix(r_x, r_z, 0.5),
            b: rng.normal_matrix(1, r_x, 0.2),
            ignore_z: false,
        };
        let encoder = AffineEncoder {
            w_z: rng.normal_matrix(r_z, r_x, 0.3),
            b_z: rng.normal_matrix(1, r_z, 0.1),
            log_s: DenseMatrix::from_vec(1, r_z, vec![-0.5; r_z]),
        };

        for input_i in 0..3u64 {
            let x = rng.normal_matrix(1, r_x, 1.0);
            let mut elbo_rng = Rng::seed_from(9000 + input_i);
            let elbo = elbo_loss_x(&x, &forward, &inverse, &encoder, &head, 512, &mut elbo_rng)
                .unwrap();
            let mut is_rng = Rng::seed_from(9900 + input_i);
            let est = importance_estimate_loss_x(
                &x, &forward, &inverse, &encoder, &head, 10_000, &mut is_rng,
            )
            .unwrap();
            let ok = elbo >= est.estimate - 3.0 * est.stderr.max(1e-3);
            if !ok {
                failures += 1;
            }
            println!(
                "model {model_i} input {input_i}: bound {elbo:>9.4}  marginal {:>9.4} +- {:.4}  {}",
                est.estimate,
                est.stderr,
                if ok { "ok" } else { "VIOLATION" }
            );
        }
    }
    assert_eq!(failures, 0, "{failures} bound violations");
    println!("all bounds hold within Monte-Carlo error.");
}

//! Train the affine CVAE on a sampled surjective system and verify
//! that the ground-truth factors are recovered.
//!
//! Run with: cargo run --release --example affine_recovery [seed]

use surjcycle::affine::{
    make_ground_truth, sample_pairs, train_affine, verify_pruning_bijection, verify_recovery,
    AffineTrainConfig,
};
use surjcycle::numerics::rng::Rng;

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut rng = Rng::seed_from(seed);
    let gt = make_ground_truth(12, 4, 3, &mut rng).expect("ground truth");
    let (x, y, _) = sample_pairs(&gt, 100_000, &mut rng).expect("samples");

    let config = AffineTrainConfig {
        seed,
        ..AffineTrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (params, trace) = train_affine(&x, &y, &config).expect("training");
    println!(
        "trained {} iters in {:.1}s; final loss_x={:.4} loss_y={:.4} penalty={:.2e}",
        config.iters,
        start.elapsed().as_secs_f64(),
        trace.last("loss_x").unwrap(),
        trace.last("loss_y").unwrap(),
        trace.last("penalty").unwrap(),
    );
    println!("V_x column norms: {:?}", params.v_x.col_norms());
    println!("s: {:?}", params.s());
    println!("W_z row norms: {:?}", params.w_z.row_norms());

    let report = verify_recovery(&params, &gt, 0.05).expect("verify");
    for c in &report.conditions {
        println!(
            "  {:<24} residual {:.3e}  (tol {:.2e})  {}",
            c.name,
            c.residual,
            c.tol,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let (held_x, _, _) = sample_pairs(&gt, 2_000, &mut rng).expect("held-out");
    let pruning = verify_pruning_bijection(&params, &gt, &held_x, 0.05).expect("pruning");
    for c in &pruning.conditions {
        println!(
            "  {:<24} residual {:.3e}  (tol {:.2e})  {}",
            c.name,
            c.residual,
            c.tol,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    println!(
        "recovery: {}  pruning: {}",
        if report.passed { "PASS" } else { "FAIL" },
        if pruning.passed { "PASS" } else { "FAIL" }
    );
}

//! Evaluates the reduced objective along the alpha-beta interpolation grid
//! at the planted optimum of a random ground-truth system. The value should
//! decrease toward the corner (small alpha, large beta) and be monotone
//! along the diagonal path.

use surjcycle::affine::{alpha_beta_path, exact_optimum, make_ground_truth};
use surjcycle::numerics::rng::Rng;

fn main() {
    let mut rng = Rng::seed_from(0);
    let gt = make_ground_truth(12, 4, 3, &mut rng).unwrap();
    let planted = exact_optimum(&gt, 6, 1e-4).unwrap();

    let alphas = [1.0, 0.1, 0.01];
    let betas = [0.0, 0.5, 0.99];
    let report = alpha_beta_path(&planted, &gt, &alphas, &betas).unwrap();

    println!("value grid (rows: alpha, cols: beta)");
    print!("{:>8}", "");
    for b in &betas {
        print!("{:>14.2}", b);
    }
    println!();
    for a in &alphas {
        print!("{:>8.2}", a);
        for b in &betas {
            let p = report
                .points
                .iter()
                .find(|p| p.alpha == *a && p.beta == *b)
                .unwrap();
            print!("{:>14.4}", p.value);
        }
        println!();
    }
    println!(
        "minimum at alpha = {}, beta = {} (corner: {})",
        report.min_alpha, report.min_beta, report.min_at_corner
    );
    println!("diagonal monotone: {}", report.diagonal_monotone);
    assert!(report.min_at_corner && report.diagonal_monotone);
}

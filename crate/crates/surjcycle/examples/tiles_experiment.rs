//! Trains the deterministic base model and the latent-variable model on
//! the tiled-digit dataset with matched seeds, then compares their final
//! x-cycle reconstruction errors and generation diversity.
//!
//! Usage: tiles_experiment [seed]

use surjcycle::numerics::rng::Rng;
use surjcycle::tiles::{
    digit_accuracy, eval_diversity, gen_dataset, surjection_fidelity, train_base,
    train_cyclecvae, GlyphSet, InverseModel, TilesTrainConfig, N_DIGITS,
};

fn main() -> surjcycle::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    let glyphs = GlyphSet::standard();
    let mut data_rng = Rng::seed_from(seed);
    let data = gen_dataset(1024, &glyphs, &mut data_rng)?;
    let config = TilesTrainConfig { seed, ..TilesTrainConfig::default() };

    let t0 = std::time::Instant::now();
    let (base, base_trace) = train_base(&data, &config)?;
    println!("base trained in {:.1?}", t0.elapsed());
    let t1 = std::time::Instant::now();
    let (cvae, cvae_trace) = train_cyclecvae(&data, &config)?;
    println!("cvae trained in {:.1?}", t1.elapsed());

    let base_recon = base_trace.last("recon_x").unwrap();
    let cvae_recon = cvae_trace.last("recon_x").unwrap();
    println!(
        "final recon_x  base {:8.3}   cvae {:8.3}   (gap {:+.3})",
        base_recon,
        cvae_recon,
        base_recon - cvae_recon
    );
    println!(
        "final loss_y   base {:8.4}   cvae {:8.4}   final kl {:.3}",
        base_trace.last("loss_y").unwrap(),
        cvae_trace.last("loss_y").unwrap(),
        cvae_trace.last("kl").unwrap()
    );
    println!(
        "digit accuracy base {:.3}   cvae {:.3}   fidelity cvae {:.3}",
        digit_accuracy(&base.forward, &glyphs)?,
        digit_accuracy(&cvae.forward, &glyphs)?,
        surjection_fidelity(&cvae.forward, &glyphs)?
    );

    let base_inv = InverseModel { mlp: &base.inverse, z_dim: 1, ignore_z: true };
    let cvae_inv = InverseModel { mlp: &cvae.inverse, z_dim: cvae.z_dim, ignore_z: false };
    let mut eval_rng = Rng::seed_from(seed ^ 0x5eed);
    let mut ge2 = 0;
    for digit in 0..N_DIGITS {
        let b = eval_diversity(&base_inv, digit, 10, &mut eval_rng)?;
        let c = eval_diversity(&cvae_inv, digit, 10, &mut eval_rng)?;
        if c >= 2 {
            ge2 += 1;
        }
        println!("digit {}: base variations {}   cvae variations {}", digit, b, c);
    }
    println!("digits with >= 2 cvae variations: {}/10", ge2);
    Ok(())
}

//! Reproducible experiment commands.
//!
//! Every command is a pure function of a JSON config file plus an
//! optional seed override: rerunning with the same inputs produces
//! byte-identical artifacts. Exit codes: 0 success, 1 check failure or
//! runtime error, 2 invalid config.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::affine::ground_truth::{make_ground_truth, sample_pairs};
use crate::affine::path::{alpha_beta_path, PathReport};
use crate::affine::train::{train_affine, AffineTrainConfig};
use crate::affine::verify::{verify_pruning_bijection, verify_recovery, RecoveryReport};
use crate::cvae::{
    elbo_loss_x_node, importance_estimate_loss_x, AffineEncoder, AffineForward, AffineInverse,
    LikelihoodHead,
};
use crate::error::{Result, SurjError};
use crate::numerics::rng::Rng;
use crate::numerics::tape::Tape;
use crate::tiles::{
    eval_diversity, gen_dataset, render, train_base, train_cyclecvae, GlyphSet, InverseModel,
    TilesTrainConfig, N_BORDERS, N_DIGITS,
};
use crate::trace::TrainingTrace;

/// Top-level config document; the section matching the experiment kind
/// must be present (missing sections fall back to their defaults).
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    /// "affine-verify", "tiles", or "bound-check".
    pub experiment: String,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub affine: AffineExperiment,
    pub tiles: TilesExperiment,
    pub bound: BoundExperiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineExperiment {
    pub r_x: usize,
    pub r_y: usize,
    pub r_u: usize,
    pub n_samples: usize,
    pub n_holdout: usize,
    pub tol: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub train: AffineTrainConfig,
}

impl Default for AffineExperiment {
    fn default() -> Self {
        AffineExperiment {
            r_x: 12,
            r_y: 4,
            r_u: 3,
            n_samples: 100_000,
            n_holdout: 2000,
            tol: 0.05,
            alphas: vec![1.0, 0.1, 0.01],
            betas: vec![0.0, 0.5, 0.99],
            train: AffineTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TilesExperiment {
    pub n_train: usize,
    pub n_draws: usize,
    /// Integer upscaling factor for exported PGM images.
    pub pgm_scale: usize,
    pub train: TilesTrainConfig,
}

impl Default for TilesExperiment {
    fn default() -> Self {
        TilesExperiment {
            n_train: 1024,
            n_draws: 10,
            pgm_scale: 4,
            train: TilesTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundExperiment {
    pub n_models: usize,
    pub n_inputs: usize,
    /// importance samples per estimate
    pub m: usize,
    /// Monte-Carlo draws for the ELBO side
    pub n_z_elbo: usize,
    pub r_x: usize,
    pub r_y: usize,
    pub r_z: usize,
    pub gamma: f64,
    /// Fault injection: negate the KL term (the bound must then break).
    pub negate_kl: bool,
}

impl Default for BoundExperiment {
    fn default() -> Self {
        BoundExperiment {
            n_models: 10,
            n_inputs: 10,
            m: 10_000,
            n_z_elbo: 512,
            r_x: 6,
            r_y: 3,
            r_z: 2,
            gamma: 0.5,
            negate_kl: false,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "surjcycle", about = "Cycle-consistent training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the affine model and verify ground-truth recovery.
    AffineVerify(CommonArgs),
    /// Train the tiled-digit models and export curves plus samples.
    Tiles(CommonArgs),
    /// Verify the ELBO upper-bounds the exact loss on random models.
    BoundCheck(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses argv and runs; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let (kind, args) = match &cli.command {
        Command::AffineVerify(a) => ("affine-verify", a),
        Command::Tiles(a) => ("tiles", a),
        Command::BoundCheck(a) => ("bound-check", a),
    };
    match run_command(kind, args) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("{}: checks FAILED", kind);
            1
        }
        Err(e) => {
            eprintln!("{}: error: {}", kind, e);
            match e {
                SurjError::Config(_)
                | SurjError::Contract(_)
                | SurjError::Json(_)
                | SurjError::Shape(_) => 2,
                _ => 1,
            }
        }
    }
}

fn run_command(kind: &str, args: &CommonArgs) -> Result<bool> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| SurjError::Config(format!("cannot read {}: {}", args.config.display(), e)))?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if config.experiment.is_empty() {
        config.experiment = kind.to_string();
    }
    if config.experiment != kind {
        return Err(SurjError::Config(format!(
            "config is for experiment '{}', command is '{}'",
            config.experiment, kind
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    let out_dir = config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("out-{}", kind)));
    std::fs::create_dir_all(&out_dir)?;
    match kind {
        "affine-verify" => cmd_affine_verify(&config, &out_dir),
        "tiles" => cmd_tiles(&config, &out_dir),
        "bound-check" => cmd_bound_check(&config),
        _ => unreachable!(),
    }
}

/// Everything the affine verification run produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineVerifyReport {
    pub recovery: RecoveryReport,
    pub pruning: RecoveryReport,
    pub path: PathReport,
    pub passed: bool,
}

/// Ground truth -> samples -> training -> recovery, pruning, and
/// landscape-path checks. Writes recovery_report.json, trace.csv, path.csv.
pub fn cmd_affine_verify(config: &ExperimentConfig, out_dir: &Path) -> Result<bool> {
    let a = &config.affine;
    let mut rng = Rng::seed_from(config.seed);
    let gt = make_ground_truth(a.r_x, a.r_y, a.r_u, &mut rng)?;
    let (x, y, _) = sample_pairs(&gt, a.n_samples, &mut rng)?;
    let (hold_x, _, _) = sample_pairs(&gt, a.n_holdout, &mut rng)?;

    let mut train_config = a.train.clone();
    train_config.seed = config.seed;
    let (params, trace) = train_affine(&x, &y, &train_config)?;
    trace.write_csv(&out_dir.join("trace.csv"))?;

    let recovery = verify_recovery(&params, &gt, a.tol)?;
    let pruning = verify_pruning_bijection(&params, &gt, &hold_x, a.tol)?;
    let path = alpha_beta_path(&params, &gt, &a.alphas, &a.betas)?;

    let mut path_csv = TrainingTrace::new(&["alpha", "beta", "value"]);
    for p in &path.points {
        path_csv.push(vec![p.alpha, p.beta, p.value]);
    }
    path_csv.write_csv(&out_dir.join("path.csv"))?;

    let passed =
        recovery.passed && pruning.passed && path.min_at_corner && path.diagonal_monotone;
    let report = AffineVerifyReport { recovery, pruning, path, passed };
    write_json(&out_dir.join("recovery_report.json"), &report)?;
    for c in report.recovery.conditions.iter().chain(&report.pruning.conditions) {
        println!(
            "{:26} residual {:>12.3e}  tol {:>8.1e}  {}",
            c.name,
            c.residual,
            c.tol,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    println!(
        "path: min at (alpha={}, beta={}), corner={}, monotone={}",
        report.path.min_alpha,
        report.path.min_beta,
        report.path.min_at_corner,
        report.path.diagonal_monotone
    );
    Ok(passed)
}

/// Trains both tile models with matched seeds; writes curves.csv,
/// diversity.csv, and per-digit PGM samples.
pub fn cmd_tiles(config: &ExperimentConfig, out_dir: &Path) -> Result<bool> {
    let t = &config.tiles;
    let glyphs = GlyphSet::standard();
    let mut data_rng = Rng::seed_from(config.seed);
    let data = gen_dataset(t.n_train, &glyphs, &mut data_rng)?;
    let mut train_config = t.train.clone();
    train_config.seed = config.seed;

    let (base, base_trace) = train_base(&data, &train_config)?;
    let (cvae, cvae_trace) = train_cyclecvae(&data, &train_config)?;

    let mut curves = TrainingTrace::new(&[
        "iter",
        "base_recon",
        "base_loss_y",
        "cvae_recon",
        "cvae_loss_y",
        "cvae_kl",
    ]);
    let iters = base_trace.column("iter").unwrap();
    let b_recon = base_trace.column("recon_x").unwrap();
    let b_ly = base_trace.column("loss_y").unwrap();
    let c_recon = cvae_trace.column("recon_x").unwrap();
    let c_ly = cvae_trace.column("loss_y").unwrap();
    let c_kl = cvae_trace.column("kl").unwrap();
    for i in 0..iters.len() {
        curves.push(vec![iters[i], b_recon[i], b_ly[i], c_recon[i], c_ly[i], c_kl[i]]);
    }
    curves.write_csv(&out_dir.join("curves.csv"))?;

    let samples_dir = out_dir.join("samples");
    std::fs::create_dir_all(&samples_dir)?;
    let base_inv = InverseModel { mlp: &base.inverse, z_dim: 1, ignore_z: true };
    let cvae_inv = InverseModel { mlp: &cvae.inverse, z_dim: cvae.z_dim, ignore_z: false };
    let mut sample_rng = Rng::seed_from(config.seed ^ 0x70667331);
    let mut diversity = TrainingTrace::new(&["digit", "base_variations", "cvae_variations"]);
    let mut base_all_single = true;
    for digit in 0..N_DIGITS {
        let clean = render(digit, digit % N_BORDERS, &glyphs)?;
        crate::tiles::write_pgm(&clean, t.pgm_scale, &samples_dir.join(format!("digit{digit}_clean.pgm")))?;
        let mut y = crate::numerics::matrix::DenseMatrix::zeros(1, N_DIGITS);
        y.data[digit] = 1.0;
        let base_gen = crate::cvae::sample_inverse(&y, &base_inv, 1, &mut sample_rng);
        crate::tiles::write_pgm(
            &base_gen[0],
            t.pgm_scale,
            &samples_dir.join(format!("digit{digit}_base.pgm")),
        )?;
        let cvae_gen = crate::cvae::sample_inverse(&y, &cvae_inv, 3, &mut sample_rng);
        for (k, img) in cvae_gen.iter().enumerate() {
            crate::tiles::write_pgm(
                img,
                t.pgm_scale,
                &samples_dir.join(format!("digit{digit}_cvae{k}.pgm")),
            )?;
        }
        let b = eval_diversity(&base_inv, digit, t.n_draws, &mut sample_rng)?;
        let c = eval_diversity(&cvae_inv, digit, t.n_draws, &mut sample_rng)?;
        base_all_single &= b == 1;
        diversity.push(vec![digit as f64, b as f64, c as f64]);
    }
    diversity.write_csv(&out_dir.join("diversity.csv"))?;

    let base_final = base_trace.last("recon_x").unwrap();
    let cvae_final = cvae_trace.last("recon_x").unwrap();
    println!(
        "final recon_x: base {:.3}, cvae {:.3}; base single-variation: {}",
        base_final, cvae_final, base_all_single
    );
    Ok(cvae_final < base_final && base_all_single)
}

/// Checks elbo_loss_x >= importance estimate - 3 stderr on random tiny
/// affine models.
pub fn cmd_bound_check(config: &ExperimentConfig) -> Result<bool> {
    let b = &config.bound;
    let head = LikelihoodHead::GaussianIsotropic { gamma: b.gamma };
    let mut all_pass = true;
    for model_i in 0..b.n_models {
        let mut rng = Rng::seed_from(config.seed).split(model_i as u64 + 1);
        let forward = AffineForward {
            w: rng.normal_matrix(b.r_y, b.r_x, 0.5),
            b: rng.normal_matrix(1, b.r_y, 0.5),
            softmax_output: false,
        };
        let inverse = AffineInverse {
            w_x: rng.normal_matrix(b.r_x, b.r_y, 0.5),
            v_x: rng.normal_matrix(b.r_x, b.r_z, 0.5),
            b: rng.normal_matrix(1, b.r_x, 0.5),
            ignore_z: false,
        };
        let encoder = AffineEncoder {
            w_z: rng.normal_matrix(b.r_z, b.r_x, 0.3),
            b_z: rng.normal_matrix(1, b.r_z, 0.3),
            log_s: rng.normal_matrix(1, b.r_z, 0.2),
        };
        for input_j in 0..b.n_inputs {
            let x = rng.normal_matrix(1, b.r_x, 1.0);
            let mut tape = Tape::new();
            let (_, recon, kl) = elbo_loss_x_node(
                &mut tape,
                &x,
                &forward,
                &inverse,
                &encoder,
                &head,
                b.n_z_elbo,
                &mut rng,
            )?;
            let kl_sign = if b.negate_kl { -1.0 } else { 1.0 };
            let elbo = tape.scalar_value(recon) + kl_sign * tape.scalar_value(kl);
            let est =
                importance_estimate_loss_x(&x, &forward, &inverse, &encoder, &head, b.m, &mut rng)?;
            let ok = elbo >= est.estimate - 3.0 * est.stderr;
            all_pass &= ok;
            println!(
                "model {:2} input {:2}: elbo {:10.4}  estimate {:10.4}  stderr {:8.2e}  {}",
                model_i,
                input_j,
                elbo,
                est.estimate,
                est.stderr,
                if ok { "pass" } else { "VIOLATION" }
            );
        }
    }
    Ok(all_pass)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_json() {
        let config = ExperimentConfig {
            experiment: "affine-verify".into(),
            seed: 7,
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.experiment, "affine-verify");
        assert_eq!(back.seed, 7);
        assert_eq!(back.affine.r_x, config.affine.r_x);
    }

    #[test]
    fn empty_config_uses_defaults() {
        let config: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(config.affine.n_samples, 100_000);
        assert_eq!(config.tiles.train.epochs, 200);
        assert_eq!(config.bound.m, 10_000);
    }

    #[test]
    fn bound_check_passes_and_fault_injection_fails() {
        let mut config = ExperimentConfig {
            experiment: "bound-check".into(),
            ..ExperimentConfig::default()
        };
        config.bound.n_models = 2;
        config.bound.n_inputs = 2;
        config.bound.m = 2000;
        config.bound.n_z_elbo = 128;
        assert!(cmd_bound_check(&config).unwrap());
        config.bound.negate_kl = true;
        assert!(!cmd_bound_check(&config).unwrap());
    }
}

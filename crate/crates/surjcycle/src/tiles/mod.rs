//! The tiled-digit synthetic experiment.
//!
//! Each image is a 3x3 grid of tiles, every tile showing the same digit;
//! a hidden factor picks one tile and lights a 1-pixel frame around it.
//! The image-to-digit direction is a surjection (nine images per digit),
//! so a deterministic cycle model cannot reconstruct the frame, while the
//! latent-variable model can — and its latent draws move the frame around.

pub mod eval;
pub mod glyphs;
pub mod model;
pub mod render;
pub mod train;

pub use eval::{classify_border, digit_accuracy, eval_diversity, surjection_fidelity, BorderCall};
pub use glyphs::{GlyphSet, GLYPH_SIZE, IMG_DIM, IMG_SIZE, N_BORDERS, N_DIGITS, TILE_SIZE};
pub use model::{
    EncoderNet, ForwardModel, InverseModel, Mlp, MlpForward, MlpInverse, OutputHead,
};
pub use render::{
    build_affine_system, dataset_matrices, gen_dataset, render, render_clean, write_pgm,
    TileSample, TilesSystem,
};
pub use train::{train_base, train_cyclecvae, BaseModels, CvaeModels, TilesTrainConfig};

//! Cycle-consistent training for many-to-one (surjective) mappings with a
//! conditional-VAE branch, plus numerical verification of the affine
//! recovery theory and a synthetic tiled-digit experiment.
//!
//! The crate is organized as:
//! - [`numerics`]: dense matrices, Cholesky, a reverse-mode tape, an
//!   adaptive-moment optimizer, seeded RNG streams, gradient checking.
//! - [`cvae`]: the generic cycle objective (ELBO surrogate, degenerate
//!   y-cycle loss, combined loss, inference, importance-sampling bound
//!   verification).
//! - [`affine`]: the affine specialization (ground-truth generator, exact
//!   moment-based losses, closed-form encoder optima, recovery and
//!   pruning verification, the alpha-beta landscape path).
//! - [`tiles`]: the tiled-digit image experiment with known ground truth.
//! - [`cli`]: reproducible experiment commands behind JSON configs.

pub mod affine;
pub mod cli;
pub mod cvae;
pub mod error;
pub mod numerics;
pub mod tiles;
pub mod trace;

pub use error::{Result, SurjError};

//! Affine specialization: ground-truth surjective systems, exact
//! moment-based cycle losses, closed-form encoder optima, training,
//! and recovery verification.

pub mod closed_form;
pub mod ground_truth;
pub mod losses;
pub mod params;
pub mod path;
pub mod train;
pub mod verify;

pub use closed_form::{
    align_right_frame, optimal_biases, optimal_mu_z, optimal_s, reduced_loss_x, ridge_encoder,
    ridge_map, ReducedLossX,
};
pub use ground_truth::{make_ground_truth, sample_pairs, AffineGroundTruth};
pub use losses::{affine_loss_x, affine_loss_y, moment_penalty};
pub use params::{AffineCvaeParams, AffineLeaves, DataMoments};
pub use path::{alpha_beta_path, PathPoint, PathReport};
pub use train::{train_affine, AffineTrainConfig};
pub use verify::{
    exact_optimum, verify_pruning_bijection, verify_recovery, ConditionCheck, RecoveryReport,
};

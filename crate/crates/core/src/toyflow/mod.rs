//! The toy generator: an oracle scene renderer with known pathology, and a
//! small conditional rectified-flow model trained on its output.
//!
//! Time runs from `t = 0` (noise) to `t = 1` (data); the regression target
//! is the straight-line velocity `x1 - x0`. Images live in `[-1, 1]` floats
//! for all latent-space math.

mod model;
pub mod net;
mod scene;
mod train;

pub use model::{FlowModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use scene::{
    from_normalized, oracle_generate, oracle_ground_truth_mask, to_normalized, Condition, Dot,
    Ellipse, Health, IdentityParams, LatentCode, SceneSpec, EMBED_SCALE,
};
pub use train::{sample, sample_many, sample_normalized, sample_normalized_many, train_flow, training_batch, TrainConfig, TrainingBatch};

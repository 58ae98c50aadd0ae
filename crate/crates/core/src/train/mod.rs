//! Desk-scale label-efficient segmentation: synthetic scenes, augmentation,
//! a small network with hand-written gradients, the training loop and the
//! ablation sweep runner.

pub mod augment;
pub mod experiment;
pub mod metrics;
pub mod net;
pub mod scene;
pub mod trainer;

pub use augment::{augment, AugmentMode, AugmentSpec};
pub use experiment::{run_experiment, run_single, Cell, CellSummary, MeanStd, Report, RunRecord};
pub use metrics::{evaluate, miou_from_predictions, Metrics};
pub use net::{forward, NetShape, SegNetParams};
pub use scene::{gen_synthetic, SceneSpec, SyntheticScene};
pub use trainer::{
    batch_loss, batch_objective, init_state, sample_batch, train, train_step, PseudoLabelMode, StepBatch,
    StepMetrics, StepOutput, TrainConfig, TrainState,
};

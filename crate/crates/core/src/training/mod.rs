//! Losses, the optimiser, training loops and evaluation metrics.

mod adam;
mod config;
mod eval;
pub mod losses;
mod trainer;

pub use adam::AdamState;
pub use config::{
    ActivationName, Experiment, ModelKind, PermutationName, TrainConfig, TRAIN_LEAKY_SLOPE,
};
pub use eval::{
    evaluate_avg_log_density, evaluate_field_kl, mode_purity, sorted_sum, EvalSummary, FieldEval,
};
pub use losses::{composite_loss, kl_discrete, l1_loss, nll_loss, KL_FLOOR};
pub use trainer::{
    autoencoder_batch_gradients, field_batch_gradients, model_spec, sequence_batch_gradients,
    train, EpochMetrics, TrainOutcome, FIELD_EXTENT, INIT_STREAM, SHUFFLE_STREAM,
};

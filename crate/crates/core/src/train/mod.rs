//! Optimisation: one-cycle schedule, AdamW with clipping, length-bucketed
//! mixed-modality batching, the transducer trainer and external-LM training.

mod batch;
mod config;
mod engine;
mod lm_train;
mod optim;
mod trainer;

pub use batch::{make_batches, stacked_length, BatchPlan, Sample};
pub use config::TrainConfig;
pub use engine::{
    parallel_map, reduce_ordered, run_loop, BatchCtx, BatchResult, EpochMetrics, LoopState, Trainable,
};
pub use lm_train::{encode_texts, sentence_samples, train_external_lm};
pub use optim::{adamw_step, clip_grad_norm, one_cycle_lr, AdamState};
pub use trainer::{
    batch_inputs, estimate_norm_stats, load_items, text_items, training_samples, transducer_batch, TrainItem,
    Trainer,
};

//! Transducer network (encoder, prediction network, multiplicative joint,
//! optional NN-LM head), the external character LM, and their checkpoints.

mod checkpoint;
mod config;
mod lm;
mod transducer;

pub use checkpoint::{content_hash, Checkpoint, KvBlock, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use lm::{lm_loss_on_tape, ExternalLm, LmConfig, LmIds, LmState, SENTENCE_END};
pub use transducer::{
    encode_on_tape, head_on_tape, joint_on_tape, lm_targets, predict_on_tape,
    transducer_loss_on_tape, HeadIds, ModelIds, ParamGroup, PredState, TransducerModel,
};

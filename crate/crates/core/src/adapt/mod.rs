//! Text-only domain adaptation of a trained transducer: textogram-based
//! adaptation of the prediction (and optionally joint) network, the NN-LM
//! baseline through a temporary LM head, and their combination.

mod config;
mod nnlm;
mod tog;

pub use config::{AdaptConfig, AdaptMode, FreezePolicy};
pub use nnlm::{head_cross_entropy, nnlm_adapt, train_lm_head, HeadReport};
pub use tog::{adapt, tog_adapt, tog_plus_nnlm_adapt, AdaptOutcome};

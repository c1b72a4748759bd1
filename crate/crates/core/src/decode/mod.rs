//! Transducer search (greedy, beam, shallow fusion) and word error rate.

mod score;
mod search;
mod wer;

pub use score::{decode_one, score_corpus, CorpusScore, DecodeConfig, Transcript};
pub use search::{beam_decode, greedy_decode, BeamOptions, Fusion, Hypothesis, MAX_SYMBOLS_PER_FRAME};
pub use wer::{align, wer, WerReport};

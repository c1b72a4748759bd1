//! Encoder inputs: speech feature pipeline, textogram rasters, augmentation,
//! and the dual-modality layout that puts both into one frame vector.

mod augment;
mod featfile;
mod pipeline;
mod symbols;
mod textogram;

pub use augment::{mask_band, sequence_noise_inject, spec_mask, speed_tempo_perturb, AugmentPolicy};
pub use featfile::{decode_features, encode_features, read_features, write_features, FEAT_MAGIC, FEAT_VERSION};
pub use pipeline::{
    add_deltas, assemble_dual_input, modality_zeroing_holds, stack_and_skip, stack_sequence, unstack,
    FeatureSequence, Modality, NormStats,
};
pub use symbols::{SymbolTable, BLANK_NAME};
pub use textogram::{build_textogram, Textogram};

/// Input widths produced by the pipeline for a given raw speech width and
/// alphabet size (BLANK included).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputWidths {
    pub speech: usize,
    pub text: usize,
}

impl InputWidths {
    pub fn for_raw(raw_speech: usize, alphabet: usize) -> Self {
        InputWidths {
            speech: raw_speech * 3 * 2,
            text: alphabet * 2,
        }
    }

    pub fn combined(&self) -> usize {
        self.speech + self.text
    }
}

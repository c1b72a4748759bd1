//! Synthetic two-domain corpus: grammar-generated sentences, rendered
//! prototype-plus-noise speech features, and tab-separated manifests.

mod build;
mod grammar;
mod manifest;
mod render;

pub use build::{bigram_overlap, build_corpus, corpus_texts, CorpusSpec, CorpusSummary, CorpusTexts, SPLITS};
pub use grammar::{gen_domain_texts, word_bigrams, DomainGrammar, Token};
pub use manifest::{read_text_lines, Manifest, ManifestRecord};
pub use render::{
    derive_seed, nearest_prototype_accuracy, render_speech, render_with_alignment, RendererParams,
};

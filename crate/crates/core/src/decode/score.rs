use super::search::{beam_decode, greedy_decode, BeamOptions};
use super::wer::{align, WerReport};
use crate::corpus::Manifest;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::{ExternalLm, TransducerModel};
use crate::train::parallel_map;

#[derive(Clone, Copy)]
pub struct DecodeConfig<'a> {
    /// Width 1 without an LM runs greedy search.
    pub beam: usize,
    pub lm: Option<&'a ExternalLm>,
    pub fusion_weight: Option<f64>,
    pub workers: usize,
}

impl<'a> DecodeConfig<'a> {
    pub fn greedy() -> Self {
        DecodeConfig { beam: 1, lm: None, fusion_weight: None, workers: 1 }
    }

    pub fn beam(beam: usize) -> Self {
        DecodeConfig { beam, ..Self::greedy() }
    }

    pub fn with_lm(mut self, lm: &'a ExternalLm, weight: f64) -> Self {
        self.lm = Some(lm);
        self.fusion_weight = Some(weight);
        self
    }
}

/// Best symbol sequence for one prepared input.
pub fn decode_one(model: &TransducerModel, x: &FeatureSequence, cfg: &DecodeConfig) -> Result<Vec<usize>> {
    if cfg.beam == 1 && cfg.lm.is_none() && cfg.fusion_weight.is_none() {
        return greedy_decode(model, x);
    }
    let opts = BeamOptions { beam: cfg.beam, lm: cfg.lm, fusion_weight: cfg.fusion_weight };
    Ok(beam_decode(model, x, opts)?.into_iter().next().map(|h| h.symbols).unwrap_or_default())
}

/// Per-utterance output of corpus scoring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub report: WerReport,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusScore {
    pub report: WerReport,
    pub transcripts: Vec<Transcript>,
}

impl CorpusScore {
    /// `id<TAB>hypothesis` lines.
    pub fn hypotheses_text(&self) -> String {
        self.transcripts.iter().map(|t| format!("{}\t{}\n", t.id, t.hypothesis)).collect()
    }
}

/// Decodes every (speech) record of a manifest and pools edit counts.
pub fn score_corpus(model: &TransducerModel, manifest: &Manifest, cfg: &DecodeConfig) -> Result<CorpusScore> {
    if manifest.is_empty() {
        return Err(Error::invalid("cannot score an empty manifest"));
    }
    let transcripts = parallel_map(manifest.len(), cfg.workers, |i| {
        let r = &manifest.records[i];
        let feats = manifest.load_features(r)?;
        let x = model
            .prepare_speech(&feats.frames)
            .map_err(|e| Error::invalid(format!("utterance {}: {e}", r.id)))?;
        let hyp = model.config.alphabet.decode(&decode_one(model, &x, cfg)?);
        let hyp = hyp.split_whitespace().collect::<Vec<_>>().join(" ");
        let refs: Vec<&str> = r.text.split_whitespace().collect();
        let hyps: Vec<&str> = hyp.split_whitespace().collect();
        Ok(Transcript { id: r.id.clone(), reference: r.text.clone(), report: align(&refs, &hyps), hypothesis: hyp })
    })?;
    let mut report = WerReport::default();
    for t in &transcripts {
        report += t.report;
    }
    if report.reference_tokens == 0 {
        return Err(Error::invalid("references contain no tokens: WER is undefined"));
    }
    Ok(CorpusScore { report, transcripts })
}

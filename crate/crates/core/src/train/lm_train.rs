use super::batch::Sample;
use super::config::TrainConfig;
use super::engine::{parallel_map, reduce_ordered, run_loop, EpochMetrics, LoopState};
use super::optim::AdamState;
use crate::error::{Error, Result};
use crate::features::Modality;
use crate::model::{lm_loss_on_tape, ExternalLm};
use crate::substrate::{Gradients, Tape};

/// Encodes sentences for LM-style training, rejecting an empty set and
/// listing every grapheme outside the alphabet.
pub fn encode_texts(texts: &[String], table: &crate::features::SymbolTable) -> Result<Vec<Vec<usize>>> {
    if texts.is_empty() {
        return Err(Error::invalid("text set is empty"));
    }
    let mut unknown: Vec<char> = texts.iter().flat_map(|t| table.unknown_graphemes(t)).collect();
    unknown.sort();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(Error::OutOfAlphabetText(unknown.iter().collect()));
    }
    texts.iter().map(|t| table.encode(t)).collect()
}

/// One text sample per sentence, length measured in symbols.
pub fn sentence_samples(labels: &[Vec<usize>]) -> Vec<Sample> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| Sample { item: i, modality: Modality::Text, length: l.len() })
        .collect()
}

/// Trains the external character LM on sentences; the reported loss is
/// cross-entropy per predicted symbol (sentence end included).
pub fn train_external_lm(
    lm: &mut ExternalLm,
    texts: &[String],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    let labels = encode_texts(texts, &lm.config.alphabet)?;
    let samples = sentence_samples(&labels);
    let mut state = LoopState { adam: AdamState::for_store(&lm.params), step: 0 };
    let metrics = run_loop(
        lm,
        &mut state,
        cfg,
        &samples,
        None,
        |lm, batch, _| {
            let parts = parallel_map(batch.len(), cfg.workers, |p| {
                let y = &labels[batch[p].item];
                let mut tape = Tape::new();
                let loss = lm_loss_on_tape(&mut tape, &lm.params, &lm.ids, y)?;
                let mut g = Gradients::for_store(&lm.params);
                tape.backward(loss, &mut g)?;
                Ok((g, tape.scalar(loss) as f64, (y.len() + 1) as f64))
            })?;
            Ok(reduce_ordered(lm.params.len(), parts))
        },
        on_epoch,
    )?;
    lm.usable = true;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SymbolTable;
    use crate::model::LmConfig;

    #[test]
    fn lm_learns_a_repetitive_corpus() {
        let table = SymbolTable::new(&['a', 'b', ' ']).unwrap();
        let mut c = LmConfig::desk(table);
        c.hidden = 12;
        c.embedding_width = 6;
        c.layers = 1;
        let mut lm = ExternalLm::new(c, 3).unwrap();
        let texts: Vec<String> = (0..12).map(|i| if i % 2 == 0 { "ab ab".into() } else { "ba".into() }).collect();
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 30;
        cfg.warmup_epochs = 3;
        cfg.batch_size = 4;
        cfg.max_lr = 2e-2;
        cfg.start_lr = 2e-3;
        let m = train_external_lm(&mut lm, &texts, &cfg, &mut |_| {}).unwrap();
        assert!(lm.usable);
        assert!(m.last().unwrap().mean_loss < 0.6 * m[0].mean_loss, "{m:?}");
    }

    #[test]
    fn out_of_alphabet_graphemes_listed() {
        let table = SymbolTable::new(&['a', 'b']).unwrap();
        let e = encode_texts(&["ax".into(), "zb".into()], &table).unwrap_err().to_string();
        assert!(e.contains('x') && e.contains('z'), "{e}");
        assert!(encode_texts(&[], &table).is_err());
    }
}

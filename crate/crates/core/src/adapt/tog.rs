use super::config::{AdaptConfig, AdaptMode, FreezePolicy};
use super::nnlm::{nnlm_adapt, NnlmObjective};
use crate::corpus::derive_seed;
use crate::error::{Error, Result};
use crate::model::{transducer_loss_on_tape, ParamGroup, TransducerModel};
use crate::substrate::{Gradients, Tape};
use crate::train::{
    encode_texts, parallel_map, reduce_ordered, run_loop, stacked_length, AdamState, EpochMetrics, LoopState, Sample,
};
use crate::features::Modality;

/// An adapted copy of the model and the per-epoch training metrics.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub model: TransducerModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Shared driver for every adaptation mode. The transducer term is present
/// for the textogram modes and the NN-LM term whenever `cfg.mode` asks for
/// it (with a non-zero weight in the combined mode).
pub(crate) fn run_adaptation(
    model: &TransducerModel,
    texts: &[String],
    policy: &FreezePolicy,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let uses_rnnt = cfg.mode != AdaptMode::Nnlm;
    let nnlm_weight = match cfg.mode {
        AdaptMode::Nnlm => Some(1.0),
        AdaptMode::TogPNnlm if cfg.nnlm_weight > 0.0 => Some(cfg.nnlm_weight),
        _ => None,
    };
    if uses_rnnt {
        model.require_text_input()?;
    }
    if matches!(cfg.mode, AdaptMode::Nnlm | AdaptMode::TogPNnlm) {
        model.head()?;
    }
    let labels = encode_texts(texts, &model.config.alphabet)?;
    if let Some(i) = labels.iter().position(|y| y.is_empty()) {
        return Err(Error::invalid(format!("adaptation sentence {i} is empty")));
    }
    let nnlm = match nnlm_weight {
        Some(_) => Some(NnlmObjective::new(model, &labels, cfg)?),
        None => None,
    };

    let duration = model.config.textogram_duration;
    let samples: Vec<Sample> = labels
        .iter()
        .enumerate()
        .map(|(i, y)| Sample { item: i, modality: Modality::Text, length: stacked_length(y.len() * duration) })
        .collect();

    let mut adapted = model.clone();
    adapted.set_trainable_groups(policy.trainable());
    let train = &cfg.train;
    let mask_rate = train.augment.textogram_mask_rate;
    let mut state = LoopState { adam: AdamState::for_store(&adapted.params), step: 0 };
    let metrics = run_loop(
        &mut adapted,
        &mut state,
        train,
        &samples,
        None,
        |m, batch, ctx| {
            let mut parts = Vec::new();
            if uses_rnnt {
                parts = parallel_map(batch.len(), train.workers, |p| {
                    let i = batch[p].item;
                    let tag = format!("adapt-textogram/{}/{}/{p}", ctx.epoch, ctx.step);
                    let x = m.prepare_text(&texts[i], mask_rate, derive_seed(train.seed, &tag))?;
                    let mut tape = Tape::new();
                    let (loss, nll) = transducer_loss_on_tape(&mut tape, &m.params, &m.ids, &x.frames, &labels[i])?;
                    let mut g = Gradients::for_store(&m.params);
                    tape.backward(loss, &mut g)?;
                    Ok((g, nll, labels[i].len() as f64))
                })?;
            }
            if let (Some(obj), Some(w)) = (&nnlm, nnlm_weight) {
                let items: Vec<usize> = batch.iter().map(|s| s.item).collect();
                let lm_parts = obj.batch_parts(m, &labels, &items, w, train.workers)?;
                if uses_rnnt {
                    // Metrics stay on the transducer loss; the NN-LM term
                    // only contributes gradient.
                    parts.extend(lm_parts.into_iter().map(|(g, _, _)| (g, 0.0, 0.0)));
                } else {
                    parts = lm_parts;
                }
            }
            Ok(reduce_ordered(m.params.len(), parts))
        },
        &mut |_| {},
    )?;
    adapted.set_trainable_groups(&ParamGroup::ALL);
    Ok(AdaptOutcome { model: adapted, metrics })
}

/// Textogram adaptation: the transducer loss on masked textograms of the
/// new-domain text, updating only the groups `policy` allows.
pub fn tog_adapt(
    model: &TransducerModel,
    texts: &[String],
    policy: &FreezePolicy,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    let mut cfg = cfg.clone();
    if !matches!(cfg.mode, AdaptMode::TogP | AdaptMode::TogPj) {
        cfg.mode = AdaptMode::TogP;
    }
    run_adaptation(model, texts, policy, &cfg)
}

/// Textogram adaptation of the prediction network with the weighted NN-LM
/// loss added. A zero weight reproduces plain prediction-only adaptation.
pub fn tog_plus_nnlm_adapt(model: &TransducerModel, texts: &[String], cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    let mut cfg = cfg.clone();
    cfg.mode = AdaptMode::TogPNnlm;
    run_adaptation(model, texts, &FreezePolicy::prediction(), &cfg)
}

/// Runs the adaptation selected by `cfg.mode`.
pub fn adapt(model: &TransducerModel, texts: &[String], cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    match cfg.mode {
        AdaptMode::Nnlm => nnlm_adapt(model, texts, cfg),
        AdaptMode::TogP | AdaptMode::TogPj => tog_adapt(model, texts, &cfg.mode.freeze_policy(), cfg),
        AdaptMode::TogPNnlm => tog_plus_nnlm_adapt(model, texts, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SymbolTable;
    use crate::model::ModelConfig;

    fn model(text_input: bool) -> TransducerModel {
        let mut c = ModelConfig::desk();
        c.alphabet = SymbolTable::new(&['a', 'b', 'c', ' ']).unwrap();
        c.raw_speech_width = 3;
        c.text_input = text_input;
        c.encoder_layers = 1;
        c.encoder_width = 5;
        c.prediction_width = 6;
        c.embedding_width = 4;
        c.joint_width = 5;
        c.head_width = 6;
        TransducerModel::new(c, 9).unwrap()
    }

    fn texts() -> Vec<String> {
        vec!["ab c".into(), "ca".into(), "b ba".into(), "cc a".into(), "abc".into()]
    }

    fn cfg(mode: AdaptMode) -> AdaptConfig {
        let mut c = AdaptConfig::desk(mode);
        c.train.epochs = 3;
        c.train.warmup_epochs = 1;
        c.train.batch_size = 2;
        c.train.max_lr = 1e-2;
        c.train.start_lr = 1e-3;
        c
    }

    fn frozen_groups(mode: AdaptMode) -> Vec<ParamGroup> {
        let trainable = mode.freeze_policy();
        [ParamGroup::Encoder, ParamGroup::Prediction, ParamGroup::Joint, ParamGroup::Head, ParamGroup::Norm]
            .into_iter()
            .filter(|g| !trainable.trainable().contains(g))
            .collect()
    }

    #[test]
    fn freeze_contracts_hold() {
        let mut m = model(true);
        m.attach_head(4).unwrap();
        for mode in AdaptMode::ALL {
            let out = adapt(&m, &texts(), &cfg(mode)).unwrap();
            for g in frozen_groups(mode) {
                assert_eq!(m.group_bytes(g), out.model.group_bytes(g), "{mode}: {g:?} changed");
            }
            for &g in mode.freeze_policy().trainable() {
                assert_ne!(m.group_bytes(g), out.model.group_bytes(g), "{mode}: {g:?} did not move");
            }
            assert!(out.model.params.iter().filter(|p| ParamGroup::of(&p.name) != Some(ParamGroup::Norm)).all(|p| p.trainable));
        }
    }

    #[test]
    fn zero_nnlm_weight_matches_prediction_only() {
        let mut m = model(true);
        m.attach_head(4).unwrap();
        let mut c = cfg(AdaptMode::TogPNnlm);
        c.nnlm_weight = 0.0;
        let a = tog_plus_nnlm_adapt(&m, &texts(), &c).unwrap();
        let b = tog_adapt(&m, &texts(), &FreezePolicy::prediction(), &cfg(AdaptMode::TogP)).unwrap();
        assert_eq!(a.model.to_checkpoint().encode().unwrap(), b.model.to_checkpoint().encode().unwrap());
    }

    #[test]
    fn adaptation_is_deterministic_across_workers() {
        let m = model(true);
        let mut c = cfg(AdaptMode::TogP);
        let a = adapt(&m, &texts(), &c).unwrap();
        c.train.workers = 3;
        let b = adapt(&m, &texts(), &c).unwrap();
        assert_eq!(a.model.to_checkpoint().encode().unwrap(), b.model.to_checkpoint().encode().unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(true);
        assert!(adapt(&m, &[], &cfg(AdaptMode::TogP)).is_err());
        let err = adapt(&m, &["abz".into(), "xa".into()], &cfg(AdaptMode::TogP)).unwrap_err();
        assert!(matches!(&err, Error::OutOfAlphabetText(s) if s == "xz"), "{err}");
        let err = adapt(&model(false), &texts(), &cfg(AdaptMode::TogPj)).unwrap_err();
        assert!(err.to_string().contains("textogram"), "{err}");
        assert!(tog_plus_nnlm_adapt(&m, &texts(), &cfg(AdaptMode::TogPNnlm)).unwrap_err().to_string().contains("head"));
    }

    #[test]
    fn tog_loss_decreases() {
        let m = model(true);
        let mut c = cfg(AdaptMode::TogPj);
        c.train.epochs = 6;
        c.train.augment.textogram_mask_rate = 0.0;
        let out = adapt(&m, &texts(), &c).unwrap();
        assert!(out.metrics.last().unwrap().mean_loss < out.metrics[0].mean_loss, "{:?}", out.metrics);
    }
}

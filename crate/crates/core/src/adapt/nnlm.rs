use super::config::{AdaptConfig, AdaptMode, FreezePolicy};
use super::tog::{run_adaptation, AdaptOutcome};
use crate::corpus::derive_seed;
use crate::error::Result;
use crate::model::{head_on_tape, lm_targets, predict_on_tape, ParamGroup, TransducerModel};
use crate::substrate::{Gradients, ParamId, Tape, Tensor, Var};
use crate::train::{
    encode_texts, parallel_map, reduce_ordered, run_loop, sentence_samples, AdamState, EpochMetrics, LoopState,
    TrainConfig,
};

/// Head log-probabilities for every prefix of `labels`, as recorded on `tape`.
fn head_log_probs(tape: &mut Tape<f32>, model: &TransducerModel, labels: &[usize]) -> Result<Var> {
    let head = *model.head()?;
    let h = predict_on_tape(tape, &model.params, &model.ids, labels)?;
    head_on_tape(tape, &model.params, &head, h)
}

/// Summed head cross-entropy of one sentence (sentence end included).
fn sentence_ce(tape: &mut Tape<f32>, model: &TransducerModel, labels: &[usize]) -> Result<Var> {
    let lp = head_log_probs(tape, model, labels)?;
    tape.pick_nll(lp, lm_targets(labels))
}

/// Mean per-token cross-entropy of the NN-LM head over `texts`.
pub fn head_cross_entropy(model: &TransducerModel, texts: &[String]) -> Result<f64> {
    let labels = encode_texts(texts, &model.config.alphabet)?;
    let (mut ce, mut n) = (0.0, 0usize);
    for y in &labels {
        let mut tape = Tape::new();
        let l = sentence_ce(&mut tape, model, y)?;
        ce += tape.scalar(l) as f64;
        n += y.len() + 1;
    }
    Ok(ce / n as f64)
}

#[derive(Clone, Debug)]
pub struct HeadReport {
    pub metrics: Vec<EpochMetrics>,
    /// Per-token cross-entropy on the held-out texts (or the training texts
    /// when none are given).
    pub dev_cross_entropy: f64,
}

/// Attaches a fresh NN-LM head and trains it alone on base-domain
/// transcripts; every other parameter is left untouched.
pub fn train_lm_head(
    model: &TransducerModel,
    texts: &[String],
    dev_texts: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<(TransducerModel, HeadReport)> {
    let labels = encode_texts(texts, &model.config.alphabet)?;
    let mut m = model.clone();
    m.attach_head(derive_seed(cfg.seed, "lm-head"))?;
    m.set_trainable_groups(FreezePolicy::head_only().trainable());
    let samples = sentence_samples(&labels);
    let mut state = LoopState { adam: AdamState::for_store(&m.params), step: 0 };
    let metrics = run_loop(
        &mut m,
        &mut state,
        cfg,
        &samples,
        None,
        |m, batch, _| {
            let parts = parallel_map(batch.len(), cfg.workers, |p| {
                let y = &labels[batch[p].item];
                let mut tape = Tape::new();
                let l = sentence_ce(&mut tape, m, y)?;
                let mut g = Gradients::for_store(&m.params);
                tape.backward(l, &mut g)?;
                Ok((g, tape.scalar(l) as f64, (y.len() + 1) as f64))
            })?;
            Ok(reduce_ordered(m.params.len(), parts))
        },
        &mut |_| {},
    )?;
    m.set_trainable_groups(&ParamGroup::ALL);
    let dev_cross_entropy = head_cross_entropy(&m, dev_texts.unwrap_or(texts))?;
    Ok((m, HeadReport { metrics, dev_cross_entropy }))
}

/// The NN-LM adaptation objective over a batch of sentences:
/// per-token mean of `CE + kl·KL(adapted ‖ base)` plus `l2·‖θ − θ_base‖²`
/// over the prediction network.
pub(crate) struct NnlmObjective {
    base_log_probs: Vec<Tensor<f32>>,
    base_params: Vec<(ParamId, Tensor<f32>)>,
    kl_weight: f64,
    l2_weight: f64,
}

impl NnlmObjective {
    /// Anchors on `base`, evaluated through the same graph as the adapted
    /// model so the KL is exactly zero before the first update.
    pub(crate) fn new(base: &TransducerModel, labels: &[Vec<usize>], cfg: &AdaptConfig) -> Result<Self> {
        base.head()?;
        let base_log_probs = labels
            .iter()
            .map(|y| {
                let mut tape = Tape::new();
                let lp = head_log_probs(&mut tape, base, y)?;
                Ok(tape.value(lp).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let base_params = base
            .params
            .ids()
            .filter(|&id| ParamGroup::of(&base.params.get(id).name) == Some(ParamGroup::Prediction))
            .map(|id| (id, base.params.value(id).clone()))
            .collect();
        Ok(NnlmObjective { base_log_probs, base_params, kl_weight: cfg.kl_weight, l2_weight: cfg.l2_weight })
    }

    /// Gradient of `scale · (CE + kl·KL)` for one sentence; also returns the
    /// unscaled cross-entropy.
    fn sentence(&self, model: &TransducerModel, item: usize, labels: &[usize], scale: f64) -> Result<(Gradients<f32>, f64)> {
        let mut tape = Tape::new();
        let lp = head_log_probs(&mut tape, model, labels)?;
        let ce = tape.pick_nll(lp, lm_targets(labels))?;
        let ce_value = tape.scalar(ce) as f64;
        let mut total = ce;
        if self.kl_weight > 0.0 {
            let p = tape.exp(lp);
            let base = tape.constant(self.base_log_probs[item].clone());
            let d = tape.sub(lp, base)?;
            let pd = tape.mul(p, d)?;
            let kl = tape.sum(pd);
            let kl = tape.scale(kl, self.kl_weight);
            total = tape.add(total, kl)?;
        }
        let total = tape.scale(total, scale);
        let mut g = Gradients::for_store(&model.params);
        tape.backward(total, &mut g)?;
        Ok((g, ce_value))
    }

    /// Gradient of `scale · l2 · ‖θ − θ_base‖²`.
    fn anchor(&self, model: &TransducerModel, scale: f64) -> Result<Gradients<f32>> {
        let mut g = Gradients::for_store(&model.params);
        if self.l2_weight == 0.0 {
            return Ok(g);
        }
        let mut tape = Tape::new();
        let mut terms = Vec::new();
        for (id, base) in &self.base_params {
            let w = tape.param(&model.params, *id);
            let b = tape.constant(base.clone());
            let d = tape.sub(w, b)?;
            let sq = tape.mul(d, d)?;
            terms.push(tape.sum(sq));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let total = tape.scale(total, scale * self.l2_weight);
        tape.backward(total, &mut g)?;
        Ok(g)
    }

    /// Per-sentence parts `(gradient, reported CE, tokens)` for a batch, with
    /// the whole objective multiplied by `weight`; the anchor term is appended
    /// as a final part with zero reported loss.
    pub(crate) fn batch_parts(
        &self,
        model: &TransducerModel,
        labels: &[Vec<usize>],
        items: &[usize],
        weight: f64,
        workers: usize,
    ) -> Result<Vec<(Gradients<f32>, f64, f64)>> {
        let tokens: usize = items.iter().map(|&i| labels[i].len() + 1).sum();
        let scale = weight / tokens as f64;
        let mut parts = parallel_map(items.len(), workers, |p| {
            let i = items[p];
            let (g, ce) = self.sentence(model, i, &labels[i], scale)?;
            Ok((g, ce, (labels[i].len() + 1) as f64))
        })?;
        parts.push((self.anchor(model, weight)?, 0.0, 0.0));
        Ok(parts)
    }
}

/// NN-LM adaptation: the prediction network is tuned as a language model on
/// new-domain text through the (frozen) head, regularised towards the base
/// model by the KL and weight terms.
pub fn nnlm_adapt(model: &TransducerModel, texts: &[String], cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    let mut cfg = cfg.clone();
    cfg.mode = AdaptMode::Nnlm;
    run_adaptation(model, texts, &FreezePolicy::prediction(), &cfg)
}

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{make_batches, stacked_length, Sample};
use super::config::TrainConfig;
use super::engine::{parallel_map, reduce_ordered, run_loop, BatchCtx, BatchResult, EpochMetrics, LoopState};
use super::optim::AdamState;
use crate::corpus::{derive_seed, Manifest};
use crate::error::{Error, Result};
use crate::features::{
    sequence_noise_inject, spec_mask, speed_tempo_perturb, FeatureSequence, Modality, NormStats, SymbolTable,
};
use crate::model::{transducer_loss_on_tape, Checkpoint, TransducerModel};
use crate::substrate::{Gradients, Tape, Tensor};

/// A transcribed item: raw speech frames when it has audio, always its text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub text: String,
    pub labels: Vec<usize>,
    pub speech: Option<Tensor<f32>>,
}

/// Loads every record of a manifest, reading speech features from disk.
pub fn load_items(manifest: &Manifest, table: &SymbolTable) -> Result<Vec<TrainItem>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let labels = table
                .encode(&r.text)
                .map_err(|e| Error::invalid(format!("utterance {}: {e}", r.id)))?;
            let speech = match r.modality {
                Modality::Speech => Some(manifest.load_features(r)?.frames),
                Modality::Text => None,
            };
            Ok(TrainItem { id: r.id.clone(), text: r.text.clone(), labels, speech })
        })
        .collect()
}

/// Items made from plain sentences (no audio).
pub fn text_items(texts: &[String], table: &SymbolTable) -> Result<Vec<TrainItem>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(TrainItem { id: format!("text-{i:05}"), text: t.clone(), labels: table.encode(t)?, speech: None })
        })
        .collect()
}

/// Speech samples for audio items, plus a textogram sample per transcript
/// when the model reads text and replicas are enabled. Text-only items always
/// contribute a textogram sample.
pub fn training_samples(model: &TransducerModel, items: &[TrainItem], text_replicas: bool) -> Result<Vec<Sample>> {
    let dur = model.config.textogram_duration;
    let mut out = Vec::new();
    for (i, it) in items.iter().enumerate() {
        if let Some(s) = &it.speech {
            out.push(Sample { item: i, modality: Modality::Speech, length: stacked_length(s.rows()) });
        }
        if it.speech.is_none() || text_replicas && model.config.text_input {
            model.require_text_input()?;
            out.push(Sample {
                item: i,
                modality: Modality::Text,
                length: stacked_length(it.text.chars().count() * dur),
            });
        }
    }
    Ok(out)
}

/// Global mean/std of the stacked speech features of the training items.
pub fn estimate_norm_stats(model: &TransducerModel, items: &[TrainItem]) -> Result<NormStats> {
    let feats = items
        .iter()
        .filter_map(|it| it.speech.as_ref())
        .map(|raw| model.speech_features(raw))
        .collect::<Result<Vec<_>>>()?;
    NormStats::estimate(&feats)
}

fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Builds the augmented encoder inputs for one batch, in batch order.
///
/// Speech: speed perturbation → sequence-noise mixing with another batch
/// member (raw frames) → deltas and stacking → normalisation → time and
/// feature masking. Text: a textogram with random symbol masking.
pub fn batch_inputs(
    model: &TransducerModel,
    items: &[TrainItem],
    cfg: &TrainConfig,
    batch: &[Sample],
    ctx: BatchCtx,
) -> Result<Vec<FeatureSequence>> {
    let policy = &cfg.augment;
    let factors = policy.replica_factors();
    let tag = |what: &str, pos: usize| format!("{what}/{}/{}/{pos}", ctx.epoch, ctx.step);
    let speech_pos: Vec<usize> = (0..batch.len()).filter(|&p| batch[p].modality == Modality::Speech).collect();
    let mut raws = speech_pos
        .iter()
        .map(|&p| {
            let raw = items[batch[p].item].speech.as_ref().ok_or_else(|| {
                Error::invalid(format!("item {} has no speech", items[batch[p].item].id))
            })?;
            let f = factors[rng_for(cfg.seed, &tag("speed", p)).random_range(0..factors.len())];
            if f == 1.0 {
                Ok(raw.clone())
            } else {
                speed_tempo_perturb(raw, f)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if policy.seq_noise_prob > 0.0 && raws.len() > 1 {
        raws = sequence_noise_inject(&raws, policy, &mut rng_for(cfg.seed, &tag("noise", 0)))?;
    }
    let mut raws = raws.into_iter();
    batch
        .iter()
        .enumerate()
        .map(|(p, s)| match s.modality {
            Modality::Speech => {
                let raw = raws.next().expect("one raw sequence per speech sample");
                let mut f = model.speech_features(&raw)?;
                model.normalize(&mut f);
                spec_mask(&mut f, policy, &mut rng_for(cfg.seed, &tag("mask", p)));
                model.dual_from_speech(f)
            }
            Modality::Text => model.prepare_text(
                &items[s.item].text,
                policy.textogram_mask_rate,
                derive_seed(cfg.seed, &tag("textogram", p)),
            ),
        })
        .collect()
}

/// Summed transducer loss and gradient of one batch.
pub fn transducer_batch(
    model: &TransducerModel,
    items: &[TrainItem],
    cfg: &TrainConfig,
    batch: &[Sample],
    ctx: BatchCtx,
) -> Result<BatchResult> {
    let inputs = batch_inputs(model, items, cfg, batch, ctx)?;
    let parts = parallel_map(batch.len(), cfg.workers, |p| {
        let labels = &items[batch[p].item].labels;
        let mut tape = Tape::new();
        let (loss, nll) = transducer_loss_on_tape(&mut tape, &model.params, &model.ids, &inputs[p].frames, labels)?;
        let mut g = Gradients::for_store(&model.params);
        tape.backward(loss, &mut g)?;
        Ok((g, nll, labels.len().max(1) as f64))
    })?;
    Ok(reduce_ordered(model.params.len(), parts))
}

/// Transducer training with resumable optimiser state.
pub struct Trainer {
    pub model: TransducerModel,
    pub cfg: TrainConfig,
    pub state: LoopState,
}

impl Trainer {
    pub fn new(model: TransducerModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let state = LoopState { adam: AdamState::for_store(&model.params), step: 0 };
        Ok(Trainer { model, cfg, state })
    }

    pub fn steps_per_epoch(&self, items: &[TrainItem]) -> Result<usize> {
        let samples = training_samples(&self.model, items, self.cfg.text_replicas)?;
        Ok(make_batches(&samples, self.cfg.batch_size, self.cfg.bucket_width, self.cfg.seed, 0)?.len())
    }

    /// Trains until the configured number of epochs is reached, or for at
    /// most `max_steps` further steps. Normalisation statistics are estimated
    /// from the training speech before the first step.
    pub fn fit_steps(
        &mut self,
        items: &[TrainItem],
        max_steps: Option<usize>,
        on_epoch: &mut dyn FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        if items.is_empty() {
            return Err(Error::invalid("no training items"));
        }
        if self.state.step == 0 && items.iter().any(|it| it.speech.is_some()) {
            let stats = estimate_norm_stats(&self.model, items)?;
            self.model.set_norm_stats(&stats.mean, &stats.std)?;
        }
        let samples = training_samples(&self.model, items, self.cfg.text_replicas)?;
        let cfg = self.cfg.clone();
        run_loop(
            &mut self.model,
            &mut self.state,
            &cfg,
            &samples,
            max_steps,
            |m, batch, ctx| transducer_batch(m, items, &cfg, batch, ctx),
            on_epoch,
        )
    }

    pub fn fit(&mut self, items: &[TrainItem], on_epoch: &mut dyn FnMut(&EpochMetrics)) -> Result<Vec<EpochMetrics>> {
        self.fit_steps(items, None, on_epoch)
    }

    /// Like [`Trainer::fit`], writing a resumable checkpoint after every epoch.
    pub fn fit_with_checkpoints(
        &mut self,
        items: &[TrainItem],
        path: &Path,
        on_epoch: &mut dyn FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let per_epoch = self.steps_per_epoch(items)?;
        let mut all = Vec::new();
        while self.state.step < self.cfg.epochs * per_epoch {
            let left = per_epoch - self.state.step % per_epoch;
            all.extend(self.fit_steps(items, Some(left), on_epoch)?);
            self.save(path)?;
        }
        Ok(all)
    }

    /// Model checkpoint extended with optimiser moments, the global step and
    /// the training-config hash.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.config.set("train.step", self.state.step);
        ck.config.set("train.adam_t", self.state.adam.t);
        ck.config.set("train.config_hash", self.cfg.hash());
        for (i, p) in self.model.params.iter().enumerate() {
            if let (Some(m), Some(v)) = (self.state.adam.m.get(i), self.state.adam.v.get(i)) {
                ck.tensors.push((format!("opt.m.{}", p.name), m.clone()));
                ck.tensors.push((format!("opt.v.{}", p.name), v.clone()));
            }
        }
        ck
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Restores a training checkpoint; the training config must hash to the
    /// value it was written with.
    pub fn load(path: &Path, cfg: TrainConfig) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let model = TransducerModel::from_checkpoint(&ck, path)?;
        let stored = ck.config.require("train.config_hash")?;
        if stored != cfg.hash() {
            return Err(Error::format(
                path,
                "training configuration differs from the one this checkpoint was written with",
            ));
        }
        let mut adam = AdamState { t: ck.config.parse("train.adam_t")?, m: Vec::new(), v: Vec::new() };
        for p in model.params.iter() {
            let get = |kind: &str| {
                ck.tensor(&format!("opt.{kind}.{}", p.name))
                    .cloned()
                    .ok_or_else(|| Error::format(path, format!("missing optimiser state for {}", p.name)))
            };
            adam.m.push(get("m")?);
            adam.v.push(get("v")?);
        }
        let step = ck.config.parse("train.step")?;
        let mut t = Trainer::new(model, cfg)?;
        t.state = LoopState { adam, step };
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::AugmentPolicy;
    use crate::model::ModelConfig;

    pub(crate) fn tiny_model(text: bool) -> TransducerModel {
        let mut c = ModelConfig::desk();
        c.alphabet = SymbolTable::new(&['a', 'b', 'c', ' ']).unwrap();
        c.raw_speech_width = 3;
        c.encoder_layers = 1;
        c.encoder_width = 6;
        c.prediction_width = 6;
        c.embedding_width = 4;
        c.joint_width = 6;
        c.head_width = 5;
        c.text_input = text;
        TransducerModel::new(c, 7).unwrap()
    }

    pub(crate) fn tiny_items() -> Vec<TrainItem> {
        let table = SymbolTable::new(&['a', 'b', 'c', ' ']).unwrap();
        ["ab", "ca b", "bac", "a", "cc a", "b ab"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                let rows = 3 * t.len() + 2;
                let data = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
                TrainItem {
                    id: format!("u{i}"),
                    text: t.to_string(),
                    labels: table.encode(t).unwrap(),
                    speech: Some(Tensor::matrix(rows, 3, data).unwrap()),
                }
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.epochs = 3;
        c.warmup_epochs = 1;
        c.batch_size = 4;
        c.seed = 5;
        c.augment = AugmentPolicy { time_mask_max: 2, ..AugmentPolicy::default() };
        c
    }

    #[test]
    fn text_replicas_double_samples() {
        let items = tiny_items();
        assert_eq!(training_samples(&tiny_model(true), &items, true).unwrap().len(), 12);
        assert_eq!(training_samples(&tiny_model(false), &items, true).unwrap().len(), 6);
    }

    #[test]
    fn training_is_deterministic_and_worker_independent() {
        let items = tiny_items();
        let run = |workers| {
            let mut c = cfg();
            c.workers = workers;
            let mut t = Trainer::new(tiny_model(true), c).unwrap();
            let m = t.fit(&items, &mut |_| {}).unwrap();
            (t.model.to_checkpoint().encode().unwrap(), m.last().unwrap().mean_loss)
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a, run(3));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let items = tiny_items();
        let mut full = Trainer::new(tiny_model(true), cfg()).unwrap();
        full.fit(&items, &mut |_| {}).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let mut part = Trainer::new(tiny_model(true), cfg()).unwrap();
        part.fit_steps(&items, Some(4), &mut |_| {}).unwrap();
        part.save(&path).unwrap();
        let mut resumed = Trainer::load(&path, cfg()).unwrap();
        assert_eq!(resumed.state, part.state);
        resumed.fit(&items, &mut |_| {}).unwrap();
        assert_eq!(
            full.model.to_checkpoint().encode().unwrap(),
            resumed.model.to_checkpoint().encode().unwrap()
        );
    }

    #[test]
    fn changed_config_refuses_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        Trainer::new(tiny_model(true), cfg()).unwrap().save(&path).unwrap();
        let mut other = cfg();
        other.max_lr *= 2.0;
        assert!(Trainer::load(&path, other).is_err());
    }

    #[test]
    fn speech_and_text_inputs_respect_zeroing() {
        let items = tiny_items();
        let m = tiny_model(true);
        let samples = training_samples(&m, &items, true).unwrap();
        let ctx = BatchCtx { epoch: 0, step: 0, batch: 0 };
        let inputs = batch_inputs(&m, &items, &cfg(), &samples, ctx).unwrap();
        let d_sp = m.config.widths().speech;
        for x in &inputs {
            assert!(crate::features::modality_zeroing_holds(x, d_sp));
        }
    }
}

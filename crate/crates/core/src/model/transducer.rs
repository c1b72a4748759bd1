use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, KvBlock};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{
    add_deltas, assemble_dual_input, build_textogram, stack_and_skip, FeatureSequence, Modality,
};
use crate::loss::{rnnt_loss_on_tape, BLANK};
use crate::substrate::{
    bidirectional_sequence, lstm_sequence, lstm_step, LstmIds, ParamId, ParamStore, Real,
    RecurrentCellState, Tape, Tensor, Var,
};
use crate::substrate::tensor::{log_softmax_row, matmul_acc};

/// Parameter groups, keyed by name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Prediction,
    Joint,
    Head,
    Norm,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::Prediction,
        ParamGroup::Joint,
        ParamGroup::Head,
        ParamGroup::Norm,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "enc.",
            ParamGroup::Prediction => "pred.",
            ParamGroup::Joint => "joint.",
            ParamGroup::Head => "head.",
            ParamGroup::Norm => "norm.",
        }
    }

    pub fn of(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadIds {
    pub hid_w: ParamId,
    pub hid_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Handles into a model's [`ParamStore`]. Valid for any store produced from
/// it by [`ParamStore::cast`], which keeps the order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelIds {
    pub encoder: Vec<(LstmIds, LstmIds)>,
    pub embed: ParamId,
    pub pred: LstmIds,
    pub enc_proj_w: ParamId,
    pub enc_proj_b: ParamId,
    pub pred_proj_w: ParamId,
    pub pred_proj_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub norm_mean: ParamId,
    pub norm_std: ParamId,
    pub head: Option<HeadIds>,
}

fn id_of<R: Real>(store: &ParamStore<R>, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
}

impl ModelIds {
    pub fn lookup<R: Real>(store: &ParamStore<R>, layers: usize) -> Result<Self> {
        let encoder = (0..layers)
            .map(|l| {
                Ok((
                    LstmIds::lookup(store, &format!("enc.l{l}.fwd"))?,
                    LstmIds::lookup(store, &format!("enc.l{l}.bwd"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let head = match store.id("head.hid.w") {
            Some(hid_w) => Some(HeadIds {
                hid_w,
                hid_b: id_of(store, "head.hid.b")?,
                out_w: id_of(store, "head.out.w")?,
                out_b: id_of(store, "head.out.b")?,
            }),
            None => None,
        };
        Ok(ModelIds {
            encoder,
            embed: id_of(store, "pred.embed")?,
            pred: LstmIds::lookup(store, "pred.lstm")?,
            enc_proj_w: id_of(store, "joint.enc.w")?,
            enc_proj_b: id_of(store, "joint.enc.b")?,
            pred_proj_w: id_of(store, "joint.pred.w")?,
            pred_proj_b: id_of(store, "joint.pred.b")?,
            out_w: id_of(store, "joint.out.w")?,
            out_b: id_of(store, "joint.out.b")?,
            norm_mean: id_of(store, "norm.mean")?,
            norm_std: id_of(store, "norm.std")?,
            head,
        })
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    for (i, &y) in labels.iter().enumerate() {
        if y == BLANK {
            return Err(Error::invalid(format!(
                "BLANK at position {i} of a label sequence; prefixes hold emitted symbols only"
            )));
        }
        if y >= k {
            return Err(Error::invalid(format!(
                "symbol id {y} at position {i} is outside an alphabet of {k}"
            )));
        }
    }
    Ok(())
}

/// Encoder stack over a `T×D` input; returns `T×2H`.
pub fn encode_on_tape<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    ids: &ModelIds,
    x: Var,
) -> Result<Var> {
    let want = ids.encoder[0].0.input;
    if tape.value(x).cols() != want {
        return Err(Error::shape(
            "encode",
            format!("input width {} but the encoder expects {want}", tape.value(x).cols()),
        ));
    }
    let mut h = x;
    for (fwd, bwd) in &ids.encoder {
        let f = fwd.record(tape, store);
        let b = bwd.record(tape, store);
        h = bidirectional_sequence(tape, h, &f, &b)?;
    }
    Ok(h)
}

/// Prediction network over a label prefix; returns `(U+1)×P` where row 0 is
/// the zero-history state.
pub fn predict_on_tape<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    ids: &ModelIds,
    labels: &[usize],
) -> Result<Var> {
    let embed = tape.param(store, ids.embed);
    let (k, e) = {
        let v = tape.value(embed);
        (v.rows(), v.cols())
    };
    check_labels(labels, k)?;
    let start = tape.constant(Tensor::zeros(&[1, e]));
    let inputs = if labels.is_empty() {
        start
    } else {
        let rows = tape.gather_rows(embed, labels.to_vec())?;
        tape.stack_rows(&[start, rows])?
    };
    let p = ids.pred.record(tape, store);
    lstm_sequence(tape, inputs, &p, false)
}

/// Multiplicative joint over every (t, u) pair; returns `(T·(U+1))×K`
/// log-probabilities, row-major in (t, u).
pub fn joint_on_tape<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    ids: &ModelIds,
    h_enc: Var,
    h_pred: Var,
) -> Result<Var> {
    let t_len = tape.value(h_enc).rows();
    let u1 = tape.value(h_pred).rows();
    let we = tape.param(store, ids.enc_proj_w);
    let be = tape.param(store, ids.enc_proj_b);
    let wp = tape.param(store, ids.pred_proj_w);
    let bp = tape.param(store, ids.pred_proj_b);
    let wo = tape.param(store, ids.out_w);
    let bo = tape.param(store, ids.out_b);
    let e = tape.affine(h_enc, we, Some(be))?;
    let p = tape.affine(h_pred, wp, Some(bp))?;
    let e_idx = (0..t_len).flat_map(|t| std::iter::repeat_n(t, u1)).collect();
    let p_idx = (0..t_len).flat_map(|_| 0..u1).collect();
    let eg = tape.gather_rows(e, e_idx)?;
    let pg = tape.gather_rows(p, p_idx)?;
    let z = tape.mul(eg, pg)?;
    let a = tape.tanh(z);
    let logits = tape.affine(a, wo, Some(bo))?;
    Ok(tape.log_softmax(logits))
}

/// Transducer negative log-likelihood of `labels` given the `T×D` input.
pub fn transducer_loss_on_tape<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    ids: &ModelIds,
    x: &Tensor<R>,
    labels: &[usize],
) -> Result<(Var, f64)> {
    let xv = tape.constant(x.clone());
    let h_enc = encode_on_tape(tape, store, ids, xv)?;
    let h_pred = predict_on_tape(tape, store, ids, labels)?;
    let lp = joint_on_tape(tape, store, ids, h_enc, h_pred)?;
    rnnt_loss_on_tape(tape, lp, x.rows(), labels)
}

/// NN-LM head log-probabilities over `[end, symbol 1, …, symbol K−1]` for each
/// prediction row.
pub fn head_on_tape<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    head: &HeadIds,
    h_pred: Var,
) -> Result<Var> {
    let w1 = tape.param(store, head.hid_w);
    let b1 = tape.param(store, head.hid_b);
    let w2 = tape.param(store, head.out_w);
    let b2 = tape.param(store, head.out_b);
    let h = tape.affine(h_pred, w1, Some(b1))?;
    let h = tape.tanh(h);
    let logits = tape.affine(h, w2, Some(b2))?;
    Ok(tape.log_softmax(logits))
}

/// Next-symbol targets for LM-style objectives: each prefix row predicts the
/// following symbol, the last row predicts sentence end (index 0).
pub fn lm_targets(labels: &[usize]) -> Vec<usize> {
    labels.iter().copied().chain(std::iter::once(0)).collect()
}

/// Stepwise prediction-network state used by the decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct PredState {
    pub cell: RecurrentCellState<f32>,
    /// Prediction output after the joint's prediction projection (width J).
    pub proj: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct TransducerModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub ids: ModelIds,
    pub seed: u64,
}

impl TransducerModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (h, p, e, j, k) = (
            config.encoder_width,
            config.prediction_width,
            config.embedding_width,
            config.joint_width,
            config.alphabet_size(),
        );
        let mut encoder = Vec::new();
        for l in 0..config.encoder_layers {
            let input = if l == 0 { config.input_width() } else { 2 * h };
            let f = LstmIds::register(&mut s, &format!("enc.l{l}.fwd"), input, h, &mut rng)?;
            let b = LstmIds::register(&mut s, &format!("enc.l{l}.bwd"), input, h, &mut rng)?;
            encoder.push((f, b));
        }
        let embed = s.add_uniform("pred.embed", &[k, e], 1, &mut rng)?;
        let pred = LstmIds::register(&mut s, "pred.lstm", e, p, &mut rng)?;
        let enc_proj_w = s.add_uniform("joint.enc.w", &[2 * h, j], 2 * h, &mut rng)?;
        let enc_proj_b = s.add_uniform("joint.enc.b", &[j], 2 * h, &mut rng)?;
        let pred_proj_w = s.add_uniform("joint.pred.w", &[p, j], p, &mut rng)?;
        let pred_proj_b = s.add_uniform("joint.pred.b", &[j], p, &mut rng)?;
        let out_w = s.add_uniform("joint.out.w", &[j, k], j, &mut rng)?;
        let out_b = s.add_uniform("joint.out.b", &[k], j, &mut rng)?;
        // Centre both projections on one: the product (1+a)(1+b) then starts
        // close to 1+a+b, so encoder and predictor receive gradients of the
        // same scale instead of each being damped by the other's small output.
        for id in [enc_proj_b, pred_proj_b] {
            for v in s.get_mut(id).value.data_mut() {
                *v += 1.0;
            }
        }
        let d_sp = config.widths().speech;
        let norm_mean = s.add_zeros("norm.mean", &[d_sp])?;
        let norm_std = s.add("norm.std", Tensor::from_vec(&[d_sp], vec![1.0; d_sp])?)?;
        s.get_mut(norm_mean).trainable = false;
        s.get_mut(norm_std).trainable = false;
        Ok(TransducerModel {
            config,
            params: s,
            ids: ModelIds {
                encoder,
                embed,
                pred,
                enc_proj_w,
                enc_proj_b,
                pred_proj_w,
                pred_proj_b,
                out_w,
                out_b,
                norm_mean,
                norm_std,
                head: None,
            },
            seed,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.config.alphabet_size()
    }

    // ---- inputs -------------------------------------------------------

    pub fn set_norm_stats(&mut self, mean: &[f32], std: &[f32]) -> Result<()> {
        let d = self.config.widths().speech;
        if mean.len() != d || std.len() != d {
            return Err(Error::shape("set_norm_stats", format!("stats of width {} vs {d}", mean.len())));
        }
        self.params.get_mut(self.ids.norm_mean).value = Tensor::from_vec(&[d], mean.to_vec())?;
        self.params.get_mut(self.ids.norm_std).value = Tensor::from_vec(&[d], std.to_vec())?;
        Ok(())
    }

    /// Deltas and stacking only (before normalisation).
    pub fn speech_features(&self, raw: &Tensor<f32>) -> Result<Tensor<f32>> {
        if raw.cols() != self.config.raw_speech_width {
            return Err(Error::shape(
                "speech features",
                format!("frames of width {} but the model expects {}", raw.cols(), self.config.raw_speech_width),
            ));
        }
        stack_and_skip(&add_deltas(raw)?)
    }

    pub fn normalize(&self, frames: &mut Tensor<f32>) {
        let mean = self.params.value(self.ids.norm_mean).data();
        let std = self.params.value(self.ids.norm_std).data();
        for i in 0..frames.rows() {
            for ((v, m), s) in frames.row_mut(i).iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
    }

    /// Places stacked, normalised speech frames into the dual layout.
    pub fn dual_from_speech(&self, stacked: Tensor<f32>) -> Result<FeatureSequence> {
        let w = self.config.widths();
        let seq = FeatureSequence::new(stacked, self.config.frame_period_ms * 2, Modality::Speech);
        assemble_dual_input(Some(&seq), None, w.speech, w.text)
    }

    /// Full inference pipeline for raw speech frames.
    pub fn prepare_speech(&self, raw: &Tensor<f32>) -> Result<FeatureSequence> {
        let mut f = self.speech_features(raw)?;
        self.normalize(&mut f);
        self.dual_from_speech(f)
    }

    pub fn require_text_input(&self) -> Result<()> {
        if self.config.text_input {
            Ok(())
        } else {
            Err(Error::Config(
                "model was trained without the textogram modality (its input has no text block); \
                 text-only adaptation needs a speech+text model"
                    .into(),
            ))
        }
    }

    pub fn prepare_text(&self, text: &str, mask_rate: f64, seed: u64) -> Result<FeatureSequence> {
        self.require_text_input()?;
        let tg = build_textogram(
            text,
            &self.config.alphabet,
            self.config.textogram_duration,
            mask_rate,
            seed,
        )?;
        if tg.raster.rows() == 0 {
            return Err(Error::EmptySequence("textogram"));
        }
        let stacked = stack_and_skip(&tg.raster)?;
        let w = self.config.widths();
        let seq = FeatureSequence::new(stacked, self.config.frame_period_ms * 2, Modality::Text);
        assemble_dual_input(None, Some(&seq), w.speech, w.text)
    }

    // ---- forward --------------------------------------------------------

    pub fn encode(&self, x: &FeatureSequence) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.frames.clone());
        let h = encode_on_tape(&mut tape, &self.params, &self.ids, xv)?;
        Ok(tape.value(h).clone())
    }

    pub fn predict(&self, prefix: &[usize]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let h = predict_on_tape(&mut tape, &self.params, &self.ids, prefix)?;
        Ok(tape.value(h).clone())
    }

    /// Joint logits for one encoder frame and one prediction row.
    pub fn joint(&self, h_enc_t: &[f32], h_pred_u: &[f32]) -> Result<Vec<f32>> {
        let (h2, p) = (2 * self.config.encoder_width, self.config.prediction_width);
        if h_enc_t.len() != h2 || h_pred_u.len() != p {
            return Err(Error::shape(
                "joint",
                format!("got widths {} and {}, expected {h2} and {p}", h_enc_t.len(), h_pred_u.len()),
            ));
        }
        let e = self.project(h_enc_t, self.ids.enc_proj_w, self.ids.enc_proj_b);
        let q = self.project(h_pred_u, self.ids.pred_proj_w, self.ids.pred_proj_b);
        Ok(self.joint_logits_from_projections(&e, &q))
    }

    fn project(&self, x: &[f32], w: ParamId, b: ParamId) -> Vec<f32> {
        let wv = self.params.value(w);
        let mut out = self.params.value(b).data().to_vec();
        matmul_acc(x, 1, wv.rows(), wv.data(), wv.cols(), &mut out);
        out
    }

    pub fn joint_logits_from_projections(&self, e: &[f32], q: &[f32]) -> Vec<f32> {
        let z: Vec<f32> = e.iter().zip(q).map(|(a, b)| (a * b).tanh()).collect();
        let wo = self.params.value(self.ids.out_w);
        let mut logits = self.params.value(self.ids.out_b).data().to_vec();
        matmul_acc(&z, 1, wo.rows(), wo.data(), wo.cols(), &mut logits);
        logits
    }

    pub fn joint_log_probs(&self, e: &[f32], q: &[f32]) -> Vec<f32> {
        let logits = self.joint_logits_from_projections(e, q);
        let mut out = vec![0.0; logits.len()];
        log_softmax_row(&logits, &mut out);
        out
    }

    /// Encoder output projected into the joint space, `T×J`.
    pub fn encoder_projection(&self, h_enc: &Tensor<f32>) -> Tensor<f32> {
        let j = self.config.joint_width;
        let mut out = Tensor::zeros(&[h_enc.rows(), j]);
        for t in 0..h_enc.rows() {
            out.row_mut(t)
                .copy_from_slice(&self.project(h_enc.row(t), self.ids.enc_proj_w, self.ids.enc_proj_b));
        }
        out
    }

    /// `(T·(U+1))×K` log-probabilities for a labelled input.
    pub fn lattice_log_probs(&self, x: &FeatureSequence, labels: &[usize]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.frames.clone());
        let he = encode_on_tape(&mut tape, &self.params, &self.ids, xv)?;
        let hp = predict_on_tape(&mut tape, &self.params, &self.ids, labels)?;
        let lp = joint_on_tape(&mut tape, &self.params, &self.ids, he, hp)?;
        Ok(tape.value(lp).clone())
    }

    pub fn nll(&self, x: &FeatureSequence, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let (_, nll) = transducer_loss_on_tape(&mut tape, &self.params, &self.ids, &x.frames, labels)?;
        Ok(nll)
    }

    pub fn pred_start(&self) -> PredState {
        let e = self.config.embedding_width;
        let cell = lstm_step(
            &self.params,
            &self.ids.pred,
            &vec![0.0; e],
            &RecurrentCellState::zeros(self.config.prediction_width),
        );
        self.pred_state(cell)
    }

    pub fn pred_advance(&self, state: &PredState, symbol: usize) -> PredState {
        let emb = self.params.value(self.ids.embed).row(symbol);
        let cell = lstm_step(&self.params, &self.ids.pred, emb, &state.cell);
        self.pred_state(cell)
    }

    fn pred_state(&self, cell: RecurrentCellState<f32>) -> PredState {
        let proj = self.project(&cell.hidden, self.ids.pred_proj_w, self.ids.pred_proj_b);
        PredState { cell, proj }
    }

    // ---- NN-LM head ------------------------------------------------------

    /// Adds a fresh head: random hidden layer, zero output layer (so its
    /// initial distribution is uniform). Replaces any existing head.
    pub fn attach_head(&mut self, seed: u64) -> Result<()> {
        let (p, hh, k) = (
            self.config.prediction_width,
            self.config.head_width,
            self.alphabet_size(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fresh = |s: &mut ParamStore<f32>, name: &str, t: Tensor<f32>| -> Result<ParamId> {
            match s.id(name) {
                Some(id) => {
                    s.get_mut(id).value = t;
                    Ok(id)
                }
                None => s.add(name, t),
            }
        };
        let mut scratch = ParamStore::new();
        let w = scratch.add_uniform("w", &[p, hh], p, &mut rng)?;
        let b = scratch.add_uniform("b", &[hh], p, &mut rng)?;
        let head = HeadIds {
            hid_w: fresh(&mut self.params, "head.hid.w", scratch.value(w).clone())?,
            hid_b: fresh(&mut self.params, "head.hid.b", scratch.value(b).clone())?,
            out_w: fresh(&mut self.params, "head.out.w", Tensor::zeros(&[hh, k]))?,
            out_b: fresh(&mut self.params, "head.out.b", Tensor::zeros(&[k]))?,
        };
        self.ids.head = Some(head);
        Ok(())
    }

    pub fn head(&self) -> Result<&HeadIds> {
        self.ids.head.as_ref().ok_or_else(|| {
            Error::invalid("model has no NN-LM head; run train_lm_head (the lm-head-train subcommand) first")
        })
    }

    /// Head log-probabilities over `[end, symbols…]` for one prediction row.
    pub fn nnlm_head_forward(&self, h_pred_u: &[f32]) -> Result<Vec<f32>> {
        let head = *self.head()?;
        let mut hid = self.project(h_pred_u, head.hid_w, head.hid_b);
        for v in &mut hid {
            *v = v.tanh();
        }
        let logits = self.project(&hid, head.out_w, head.out_b);
        let mut out = vec![0.0; logits.len()];
        log_softmax_row(&logits, &mut out);
        Ok(out)
    }

    // ---- parameter groups ------------------------------------------------

    /// Makes exactly the listed groups trainable. Normalisation statistics
    /// are never trainable.
    pub fn set_trainable_groups(&mut self, groups: &[ParamGroup]) {
        self.params.set_trainable(|name| match ParamGroup::of(name) {
            Some(ParamGroup::Norm) | None => false,
            Some(g) => groups.contains(&g),
        });
    }

    /// Raw bytes of every parameter in `group`, in store order.
    pub fn group_bytes(&self, group: ParamGroup) -> Vec<u8> {
        self.params
            .iter()
            .filter(|p| ParamGroup::of(&p.name) == Some(group))
            .flat_map(|p| p.value.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    // ---- persistence -----------------------------------------------------

    pub fn checkpoint_config(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("kind", "transducer");
        kv.extend(&self.config.to_kv());
        kv.set("config_hash", self.config.hash());
        kv.set("seed", self.seed);
        kv.set("has_head", self.ids.head.is_some());
        kv
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.checkpoint_config(),
            tensors: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<Self> {
        let kind = ck.config.require("kind")?;
        if kind != "transducer" {
            return Err(Error::format(path, format!("checkpoint holds a {kind}, not a transducer")));
        }
        let config = ModelConfig::from_kv(&ck.config)?;
        let stored = ck.config.require("config_hash")?;
        if stored != config.hash() {
            return Err(Error::format(
                path,
                format!("config hash mismatch: file says {stored}, config block hashes to {}", config.hash()),
            ));
        }
        let mut model = TransducerModel::new(config, ck.config.parse("seed")?)?;
        if ck.config.parse::<bool>("has_head")? {
            model.attach_head(0)?;
        }
        let expected = model.params.len();
        let mut seen = 0;
        for (name, t) in &ck.tensors {
            if name.starts_with("opt.") {
                continue;
            }
            let id = model
                .params
                .id(name)
                .ok_or_else(|| Error::format(path, format!("unexpected parameter {name}")))?;
            if model.params.value(id).shape() != t.shape() {
                return Err(Error::format(
                    path,
                    format!("{name} has shape {:?}, expected {:?}", t.shape(), model.params.value(id).shape()),
                ));
            }
            model.params.get_mut(id).value = t.clone();
            seen += 1;
        }
        if seen != expected {
            return Err(Error::format(path, format!("{seen} of {expected} parameters present")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::{finite_difference_check, GradCheckOptions};

    fn tiny() -> ModelConfig {
        ModelConfig {
            alphabet: crate::features::SymbolTable::new(&['a', 'b', 'c']).unwrap(),
            raw_speech_width: 2,
            encoder_layers: 1,
            encoder_width: 3,
            prediction_width: 4,
            embedding_width: 2,
            joint_width: 3,
            head_width: 3,
            ..ModelConfig::desk()
        }
    }

    fn random_input(model: &TransducerModel, t: usize, seed: u64) -> FeatureSequence {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::from_vec(
            &[t, model.config.raw_speech_width],
            (0..t * model.config.raw_speech_width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        model.prepare_speech(&raw).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut m = TransducerModel::new(tiny(), 1).unwrap();
        for p in m.params.iter_mut() {
            if p.name.starts_with("enc.") {
                p.value.fill(0.0);
            }
        }
        let x = random_input(&m, 6, 2);
        assert!(m.encode(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_context_sensitive() {
        let m = TransducerModel::new(tiny(), 1).unwrap();
        let x = random_input(&m, 8, 3);
        let mut rev = x.clone();
        let rows: Vec<Vec<f32>> = x.frames.to_rows().into_iter().rev().collect();
        rev.frames = Tensor::from_rows(&rows).unwrap();
        let a = m.encode(&x).unwrap();
        let b = m.encode(&rev).unwrap();
        // the first reversed row sees the same frame but a different context
        assert_ne!(a.row(x.len() - 1), b.row(0));
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = TransducerModel::new(tiny(), 1).unwrap();
        let bad = FeatureSequence::new(Tensor::zeros(&[3, 5]), 20, Modality::Speech);
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn prediction_rows_and_causality() {
        let m = TransducerModel::new(tiny(), 1).unwrap();
        assert_eq!(m.predict(&[]).unwrap().rows(), 1);
        let a = m.predict(&[1, 2, 3, 1]).unwrap();
        assert_eq!(a.rows(), 5);
        let b = m.predict(&[1, 2, 1, 3]).unwrap();
        for u in 0..=2 {
            assert_eq!(a.row(u), b.row(u));
        }
        assert_ne!(a.row(3), b.row(3));
        assert!(m.predict(&[1, 0]).is_err());
    }

    #[test]
    fn stepwise_prediction_matches_tape() {
        let m = TransducerModel::new(tiny(), 4).unwrap();
        let labels = [2, 1, 3];
        let full = m.predict(&labels).unwrap();
        let mut s = m.pred_start();
        for u in 0..=labels.len() {
            for (a, b) in s.cell.hidden.iter().zip(full.row(u)) {
                assert!((a - b).abs() < 1e-6);
            }
            if u < labels.len() {
                s = m.pred_advance(&s, labels[u]);
            }
        }
    }

    #[test]
    fn annihilated_projection_gives_output_bias() {
        let mut m = TransducerModel::new(tiny(), 1).unwrap();
        let he = vec![0.3; 6];
        let hp = vec![-0.2; 4];
        let bias = m.params.value(m.ids.out_b).data().to_vec();
        let mut zeroed = m.clone();
        for id in [m.ids.enc_proj_w, m.ids.enc_proj_b] {
            zeroed.params.get_mut(id).value.fill(0.0);
        }
        assert_eq!(zeroed.joint(&he, &hp).unwrap(), bias);
        for id in [m.ids.pred_proj_w, m.ids.pred_proj_b] {
            m.params.get_mut(id).value.fill(0.0);
        }
        assert_eq!(m.joint(&he, &hp).unwrap(), bias);
    }

    #[test]
    fn joint_is_multiplicative() {
        let m = TransducerModel::new(tiny(), 1).unwrap();
        let e = vec![0.5, -1.0, 2.0];
        let q = vec![0.25, 0.5, -0.125];
        let c = 4.0f32;
        let e2: Vec<f32> = e.iter().map(|v| v * c).collect();
        let q2: Vec<f32> = q.iter().map(|v| v / c).collect();
        assert_eq!(
            m.joint_logits_from_projections(&e, &q),
            m.joint_logits_from_projections(&e2, &q2)
        );
    }

    #[test]
    fn lattice_rows_are_distributions() {
        let m = TransducerModel::new(tiny(), 1).unwrap();
        let x = random_input(&m, 5, 1);
        let lp = m.lattice_log_probs(&x, &[1, 2]).unwrap();
        assert_eq!(lp.rows(), x.len() * 3);
        for r in 0..lp.rows() {
            let s: f64 = lp.row(r).iter().map(|v| (*v as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn joint_projection_gradients() {
        let m = TransducerModel::new(tiny(), 7).unwrap();
        let x = random_input(&m, 5, 8);
        let mut store = m.params.cast::<f64>();
        store.set_trainable(|n| n.starts_with("joint.enc.w") || n.starts_with("joint.pred.w"));
        let frames = x.frames.cast::<f64>();
        let ids = m.ids.clone();
        let report = finite_difference_check(
            |tape, s| Ok(transducer_loss_on_tape(tape, s, &ids, &frames, &[1, 2])?.0),
            &mut store,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn end_to_end_gradients_all_parameters() {
        let m = TransducerModel::new(tiny(), 5).unwrap();
        let x = random_input(&m, 6, 6);
        let mut store = m.params.cast::<f64>();
        let frames = x.frames.cast::<f64>();
        let ids = m.ids.clone();
        let report = finite_difference_check(
            |tape, s| Ok(transducer_loss_on_tape(tape, s, &ids, &frames, &[1, 2])?.0),
            &mut store,
            &GradCheckOptions { max_coords_per_param: Some(12), ..GradCheckOptions::default() },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn head_starts_uniform_and_is_required() {
        let mut m = TransducerModel::new(tiny(), 1).unwrap();
        assert!(m.nnlm_head_forward(&[0.0; 4]).unwrap_err().to_string().contains("train_lm_head"));
        m.attach_head(3).unwrap();
        let lp = m.nnlm_head_forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        for v in &lp {
            assert!((v + (4f32).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let mut m = TransducerModel::new(tiny(), 9).unwrap();
        m.attach_head(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.togm");
        m.save(&p).unwrap();
        let back = TransducerModel::load(&p).unwrap();
        let x = random_input(&m, 4, 5);
        let a = m.lattice_log_probs(&x, &[3]).unwrap();
        let b = back.lattice_log_probs(&x, &[3]).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(std::fs::read(&p).unwrap(), back.to_checkpoint().encode().unwrap());
    }

    #[test]
    fn tampered_hash_rejected() {
        let m = TransducerModel::new(tiny(), 9).unwrap();
        let mut ck = m.to_checkpoint();
        ck.config.set("joint_width", 5);
        assert!(TransducerModel::from_checkpoint(&ck, Path::new("x")).is_err());
    }

    #[test]
    fn speech_only_model_rejects_text() {
        let m = TransducerModel::new(tiny().speech_only(), 1).unwrap();
        assert!(m.prepare_text("ab", 0.0, 1).is_err());
    }
}

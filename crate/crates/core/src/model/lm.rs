use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{content_hash, Checkpoint, KvBlock};
use crate::error::{Error, Result};
use crate::features::SymbolTable;
use crate::loss::BLANK;
use crate::substrate::tensor::{log_softmax_row, matmul_acc};
use crate::substrate::{
    lstm_sequence, lstm_step, LstmIds, ParamId, ParamStore, Real, RecurrentCellState, Tape,
    Tensor, Var,
};

/// Sentence-end index in the LM output layer (BLANK's slot is reused, since
/// BLANK is never predicted by a language model).
pub const SENTENCE_END: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub alphabet: SymbolTable,
    pub embedding_width: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl LmConfig {
    pub fn desk(alphabet: SymbolTable) -> Self {
        LmConfig {
            alphabet,
            embedding_width: 24,
            hidden: 64,
            layers: 2,
        }
    }

    fn to_kv(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.set("alphabet", self.alphabet.to_config_value());
        kv.set("lm_embedding_width", self.embedding_width);
        kv.set("lm_hidden", self.hidden);
        kv.set("lm_layers", self.layers);
        kv
    }

    fn from_kv(kv: &KvBlock) -> Result<Self> {
        Ok(LmConfig {
            alphabet: SymbolTable::from_config_value(kv.require("alphabet")?)?,
            embedding_width: kv.parse("lm_embedding_width")?,
            hidden: kv.parse("lm_hidden")?,
            layers: kv.parse("lm_layers")?,
        })
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_kv().to_text())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmIds {
    pub embed: ParamId,
    pub layers: Vec<LstmIds>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Causal character LM over non-BLANK symbols with a sentence-end output.
#[derive(Clone, Debug)]
pub struct ExternalLm {
    pub config: LmConfig,
    pub params: ParamStore<f32>,
    pub ids: LmIds,
    /// False only for a freshly initialised model that has not seen data.
    pub usable: bool,
}

/// Recurrent state plus the next-symbol distribution it implies.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState {
    pub layers: Vec<RecurrentCellState<f32>>,
    pub log_probs: Vec<f32>,
}

/// Sequence log-likelihood graph: returns the summed cross-entropy over the
/// symbols of `labels` followed by sentence end.
pub fn lm_loss_on_tape<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    ids: &LmIds,
    labels: &[usize],
) -> Result<Var> {
    let embed = tape.param(store, ids.embed);
    let (k, e) = (tape.value(embed).rows(), tape.value(embed).cols());
    if let Some(&bad) = labels.iter().find(|&&y| y == BLANK || y >= k) {
        return Err(Error::invalid(format!("symbol {bad} cannot be scored by the LM")));
    }
    let start = tape.constant(Tensor::zeros(&[1, e]));
    let mut h = if labels.is_empty() {
        start
    } else {
        let rows = tape.gather_rows(embed, labels.to_vec())?;
        tape.stack_rows(&[start, rows])?
    };
    for layer in &ids.layers {
        let p = layer.record(tape, store);
        h = lstm_sequence(tape, h, &p, false)?;
    }
    let w = tape.param(store, ids.out_w);
    let b = tape.param(store, ids.out_b);
    let logits = tape.affine(h, w, Some(b))?;
    let lp = tape.log_softmax(logits);
    let targets = labels.iter().copied().chain([SENTENCE_END]).collect();
    tape.pick_nll(lp, targets)
}

impl ExternalLm {
    /// Randomly initialised; rejected by the scoring calls until trained.
    pub fn new(config: LmConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let k = config.alphabet.len();
        let embed = s.add_uniform("lm.embed", &[k, config.embedding_width], 1, &mut rng)?;
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let input = if l == 0 { config.embedding_width } else { config.hidden };
            layers.push(LstmIds::register(&mut s, &format!("lm.l{l}"), input, config.hidden, &mut rng)?);
        }
        let out_w = s.add_uniform("lm.out.w", &[config.hidden, k], config.hidden, &mut rng)?;
        let out_b = s.add_uniform("lm.out.b", &[k], config.hidden, &mut rng)?;
        Ok(ExternalLm {
            config,
            params: s,
            ids: LmIds {
                embed,
                layers,
                out_w,
                out_b,
            },
            usable: false,
        })
    }

    /// All-zero weights: a deliberate uniform LM, usable as is.
    pub fn zeros(config: LmConfig) -> Result<Self> {
        let mut lm = Self::new(config, 0)?;
        for p in lm.params.iter_mut() {
            p.value.fill(0.0);
        }
        lm.usable = true;
        Ok(lm)
    }

    pub fn vocab(&self) -> usize {
        self.config.alphabet.len()
    }

    fn require_usable(&self) -> Result<()> {
        if self.usable {
            Ok(())
        } else {
            Err(Error::invalid("external LM is untrained; train it (lm-train) before scoring"))
        }
    }

    fn state_from(&self, layers: Vec<RecurrentCellState<f32>>) -> LmState {
        let top = &layers.last().expect("at least one layer").hidden;
        let w = self.params.value(self.ids.out_w);
        let mut logits = self.params.value(self.ids.out_b).data().to_vec();
        matmul_acc(top, 1, w.rows(), w.data(), w.cols(), &mut logits);
        let mut log_probs = vec![0.0; logits.len()];
        log_softmax_row(&logits, &mut log_probs);
        LmState { layers, log_probs }
    }

    fn feed(&self, prev: Option<&LmState>, input: &[f32]) -> LmState {
        let mut x = input.to_vec();
        let mut layers = Vec::with_capacity(self.ids.layers.len());
        for (l, ids) in self.ids.layers.iter().enumerate() {
            let s0 = match prev {
                Some(p) => p.layers[l].clone(),
                None => RecurrentCellState::zeros(self.config.hidden),
            };
            let s = lstm_step(&self.params, ids, &x, &s0);
            x = s.hidden.clone();
            layers.push(s);
        }
        self.state_from(layers)
    }

    pub fn start(&self) -> Result<LmState> {
        self.require_usable()?;
        Ok(self.feed(None, &vec![0.0; self.config.embedding_width]))
    }

    pub fn advance(&self, state: &LmState, symbol: usize) -> LmState {
        let emb = self.params.value(self.ids.embed).row(symbol).to_vec();
        self.feed(Some(state), &emb)
    }

    /// `log p(next | prefix)`; `next` may be [`SENTENCE_END`].
    pub fn logprob(&self, prefix: &[usize], next: usize) -> Result<f64> {
        let mut s = self.start()?;
        for &y in prefix {
            self.check_symbol(y)?;
            s = self.advance(&s, y);
        }
        if next >= self.vocab() {
            return Err(Error::invalid(format!("symbol {next} outside the LM vocabulary")));
        }
        Ok(s.log_probs[next] as f64)
    }

    fn check_symbol(&self, y: usize) -> Result<()> {
        if y == BLANK || y >= self.vocab() {
            Err(Error::invalid(format!("symbol {y} cannot be scored by the LM")))
        } else {
            Ok(())
        }
    }

    /// Log-probability of the whole sentence including its end token.
    pub fn sequence_logprob(&self, labels: &[usize]) -> Result<f64> {
        let mut s = self.start()?;
        let mut total = 0.0;
        for &y in labels {
            self.check_symbol(y)?;
            total += s.log_probs[y] as f64;
            s = self.advance(&s, y);
        }
        Ok(total + s.log_probs[SENTENCE_END] as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut kv = KvBlock::new();
        kv.set("kind", "lm");
        kv.extend(&self.config.to_kv());
        kv.set("config_hash", self.config.hash());
        kv.set("usable", self.usable);
        Checkpoint {
            config: kv,
            tensors: self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let kind = ck.config.require("kind")?;
        if kind != "lm" {
            return Err(Error::format(path, format!("checkpoint holds a {kind}, not an LM")));
        }
        let config = LmConfig::from_kv(&ck.config)?;
        if ck.config.require("config_hash")? != config.hash() {
            return Err(Error::format(path, "config hash mismatch"));
        }
        let mut lm = Self::new(config, 0)?;
        if ck.tensors.len() != lm.params.len() {
            return Err(Error::format(path, "parameter count mismatch"));
        }
        for (name, t) in &ck.tensors {
            let id = lm
                .params
                .id(name)
                .ok_or_else(|| Error::format(path, format!("unexpected parameter {name}")))?;
            if lm.params.value(id).shape() != t.shape() {
                return Err(Error::format(path, format!("{name} has the wrong shape")));
            }
            lm.params.get_mut(id).value = t.clone();
        }
        lm.usable = ck.config.parse("usable")?;
        Ok(lm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LmConfig {
        LmConfig {
            alphabet: SymbolTable::new(&['a', 'b']).unwrap(),
            embedding_width: 3,
            hidden: 5,
            layers: 2,
        }
    }

    #[test]
    fn zero_lm_is_uniform() {
        let lm = ExternalLm::zeros(cfg()).unwrap();
        let lp = lm.logprob(&[1, 2], 1).unwrap();
        assert!((lp + 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn untrained_lm_rejected() {
        let lm = ExternalLm::new(cfg(), 1).unwrap();
        assert!(lm.logprob(&[], 1).is_err());
    }

    #[test]
    fn chain_rule_and_tape_agree() {
        let mut lm = ExternalLm::new(cfg(), 3).unwrap();
        lm.usable = true;
        let y = [1, 2, 2, 1];
        let mut stepwise = 0.0;
        for i in 0..y.len() {
            stepwise += lm.logprob(&y[..i], y[i]).unwrap();
        }
        stepwise += lm.logprob(&y, SENTENCE_END).unwrap();
        let seq = lm.sequence_logprob(&y).unwrap();
        assert!((seq - stepwise).abs() < 1e-9);
        let mut tape = Tape::new();
        let l = lm_loss_on_tape(&mut tape, &lm.params, &lm.ids, &y).unwrap();
        assert!((tape.scalar(l) as f64 + seq).abs() < 1e-4);
    }

    #[test]
    fn save_load_round_trip() {
        let mut lm = ExternalLm::new(cfg(), 3).unwrap();
        lm.usable = true;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.togm");
        lm.save(&p).unwrap();
        let back = ExternalLm::load(&p).unwrap();
        assert_eq!(back.sequence_logprob(&[1, 2]).unwrap(), lm.sequence_logprob(&[1, 2]).unwrap());
    }
}

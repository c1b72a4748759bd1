use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::loss::BLANK;
use crate::model::{ExternalLm, LmState, PredState, TransducerModel, SENTENCE_END};

/// Emission cap per frame; guarantees termination on any model.
pub const MAX_SYMBOLS_PER_FRAME: usize = 10;

fn argmax(xs: &[f32]) -> usize {
    // First maximum wins, so ties resolve to the lowest symbol id.
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Frame-by-frame argmax search: emit while the best symbol is non-BLANK
/// (at most the per-frame cap), advance the frame on BLANK.
pub fn greedy_decode(model: &TransducerModel, x: &FeatureSequence) -> Result<Vec<usize>> {
    let e = model.encoder_projection(&model.encode(x)?);
    let mut state = model.pred_start();
    let mut out = Vec::new();
    for t in 0..e.rows() {
        for _ in 0..MAX_SYMBOLS_PER_FRAME {
            let k = argmax(&model.joint_log_probs(e.row(t), &state.proj));
            if k == BLANK {
                break;
            }
            out.push(k);
            state = model.pred_advance(&state, k);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub symbols: Vec<usize>,
    /// `transducer_score + fusion_weight · lm_score`.
    pub total: f64,
    pub transducer_score: f64,
    pub lm_score: f64,
    pub pred: PredState,
    pub lm_state: Option<LmState>,
}

/// Shallow-fusion LM and its weight.
#[derive(Clone, Copy)]
pub struct Fusion<'a> {
    pub lm: &'a ExternalLm,
    pub weight: f64,
}

#[derive(Clone, Copy)]
pub struct BeamOptions<'a> {
    pub beam: usize,
    pub lm: Option<&'a ExternalLm>,
    pub fusion_weight: Option<f64>,
}

impl<'a> BeamOptions<'a> {
    pub fn plain(beam: usize) -> Self {
        BeamOptions { beam, lm: None, fusion_weight: None }
    }

    fn fusion(&self) -> Result<Option<Fusion<'a>>> {
        if self.beam == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        match (self.lm, self.fusion_weight) {
            (None, None) => Ok(None),
            (None, Some(_)) => Err(Error::invalid("a fusion weight was given without an external LM")),
            (Some(lm), w) => {
                let weight = w.unwrap_or(0.0);
                if !(weight >= 0.0 && weight.is_finite()) {
                    return Err(Error::invalid(format!("fusion weight {weight} must be finite and >= 0")));
                }
                // λ = 0 takes exactly the no-LM path: no LM calls at all.
                Ok((weight != 0.0).then_some(Fusion { lm, weight }))
            }
        }
    }
}

/// A scored extension not yet materialised (prediction/LM states are only
/// computed for candidates that survive pruning).
struct Candidate {
    parent: usize,
    symbol: Option<usize>,
    total: f64,
    transducer_score: f64,
    lm_score: f64,
}

fn keep_best(mut cands: Vec<Candidate>, frontier: &[Hypothesis], beam: usize) -> Vec<Candidate> {
    // Merge candidates that spell the same prefix (keep the higher score).
    let mut best: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut merged: Vec<Candidate> = Vec::new();
    for c in cands.drain(..) {
        let mut key = frontier[c.parent].symbols.clone();
        key.extend(c.symbol);
        key.push(usize::from(c.symbol.is_none()));
        match best.get(&key) {
            Some(&i) if merged[i].total >= c.total => {}
            Some(&i) => merged[i] = c,
            None => {
                best.insert(key, merged.len());
                merged.push(c);
            }
        }
    }
    // Stable: on ties earlier candidates (BLANK first, then lower ids) win.
    merged.sort_by(|a, b| b.total.total_cmp(&a.total));
    merged.truncate(beam);
    merged
}

fn merge_into(finished: &mut Vec<Hypothesis>, h: Hypothesis) {
    match finished.iter_mut().find(|f| f.symbols == h.symbols) {
        Some(f) if f.total >= h.total => {}
        Some(f) => *f = h,
        None => finished.push(h),
    }
}

/// Time-synchronous beam search with optional shallow fusion.
///
/// Within a frame, hypotheses are expanded by up to the per-frame cap of
/// symbols. At each expansion step the BLANK and symbol extensions of the
/// live hypotheses are pooled, merged by prefix and pruned to the beam;
/// BLANK extensions finish the frame. After the frame, the finished set is
/// pruned to the beam. With width 1 this reduces exactly to greedy search.
/// The final ranking adds the weighted LM sentence-end score.
pub fn beam_decode(model: &TransducerModel, x: &FeatureSequence, opts: BeamOptions) -> Result<Vec<Hypothesis>> {
    let fusion = opts.fusion()?;
    let beam = opts.beam;
    let e = model.encoder_projection(&model.encode(x)?);
    let mut hyps = vec![Hypothesis {
        symbols: Vec::new(),
        total: 0.0,
        transducer_score: 0.0,
        lm_score: 0.0,
        pred: model.pred_start(),
        lm_state: fusion.map(|f| f.lm.start()).transpose()?,
    }];
    for t in 0..e.rows() {
        let mut finished: Vec<Hypothesis> = Vec::new();
        let mut frontier = hyps;
        for step in 0..=MAX_SYMBOLS_PER_FRAME {
            if frontier.is_empty() {
                break;
            }
            let worst_finished = (finished.len() >= beam)
                .then(|| finished.iter().map(|h| h.total).fold(f64::INFINITY, f64::min));
            let mut cands = Vec::new();
            for (i, h) in frontier.iter().enumerate() {
                // Scores only decrease with further expansion.
                if worst_finished.is_some_and(|w| h.total < w) {
                    continue;
                }
                let lp = model.joint_log_probs(e.row(t), &h.pred.proj);
                cands.push(Candidate {
                    parent: i,
                    symbol: None,
                    total: h.total + lp[BLANK] as f64,
                    transducer_score: h.transducer_score + lp[BLANK] as f64,
                    lm_score: h.lm_score,
                });
                if step == MAX_SYMBOLS_PER_FRAME {
                    continue;
                }
                for (k, &l) in lp.iter().enumerate().skip(1) {
                    let am = h.transducer_score + l as f64;
                    let (lm_score, total) = match (fusion, &h.lm_state) {
                        (Some(f), Some(s)) => {
                            let lm = h.lm_score + s.log_probs[k] as f64;
                            (lm, am + f.weight * lm)
                        }
                        _ => (h.lm_score, h.total + l as f64),
                    };
                    cands.push(Candidate { parent: i, symbol: Some(k), total, transducer_score: am, lm_score });
                }
            }
            let mut next = Vec::new();
            for c in keep_best(cands, &frontier, beam) {
                let parent = &frontier[c.parent];
                match c.symbol {
                    None => merge_into(
                        &mut finished,
                        Hypothesis {
                            symbols: parent.symbols.clone(),
                            total: c.total,
                            transducer_score: c.transducer_score,
                            lm_score: c.lm_score,
                            pred: parent.pred.clone(),
                            lm_state: parent.lm_state.clone(),
                        },
                    ),
                    Some(k) => {
                        let mut symbols = parent.symbols.clone();
                        symbols.push(k);
                        next.push(Hypothesis {
                            symbols,
                            total: c.total,
                            transducer_score: c.transducer_score,
                            lm_score: c.lm_score,
                            pred: model.pred_advance(&parent.pred, k),
                            lm_state: match (fusion, &parent.lm_state) {
                                (Some(f), Some(s)) => Some(f.lm.advance(s, k)),
                                _ => None,
                            },
                        });
                    }
                }
            }
            frontier = next;
        }
        finished.sort_by(|a, b| b.total.total_cmp(&a.total));
        finished.truncate(beam);
        hyps = finished;
    }
    if let Some(f) = fusion {
        for h in &mut hyps {
            if let Some(s) = &h.lm_state {
                h.lm_score += s.log_probs[SENTENCE_END] as f64;
                h.total = h.transducer_score + f.weight * h.lm_score;
            }
        }
    }
    hyps.sort_by(|a, b| b.total.total_cmp(&a.total));
    Ok(hyps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SymbolTable;
    use crate::model::{LmConfig, ModelConfig};
    use crate::substrate::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> TransducerModel {
        let mut c = ModelConfig::desk();
        c.alphabet = SymbolTable::new(&['a', 'b', 'c']).unwrap();
        c.raw_speech_width = 2;
        c.encoder_layers = 1;
        c.encoder_width = 8;
        c.prediction_width = 8;
        c.embedding_width = 4;
        c.joint_width = 8;
        TransducerModel::new(c, seed).unwrap()
    }

    fn input(m: &TransducerModel, seed: u64, rows: usize) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        m.prepare_speech(&Tensor::matrix(rows, 2, data).unwrap()).unwrap()
    }

    /// Zero output weights so the logits are exactly the output bias.
    fn rig(m: &mut TransducerModel, bias: &[f32]) {
        m.params.get_mut(m.ids.out_w).value.fill(0.0);
        m.params.get_mut(m.ids.out_b).value = Tensor::from_vec(&[bias.len()], bias.to_vec()).unwrap();
    }

    #[test]
    fn blank_rigged_joint_emits_nothing() {
        let mut m = model(1);
        rig(&mut m, &[5.0, 0.0, 0.0, 0.0]);
        assert!(greedy_decode(&m, &input(&m, 0, 6)).unwrap().is_empty());
        assert!(beam_decode(&m, &input(&m, 0, 6), BeamOptions::plain(4)).unwrap()[0].symbols.is_empty());
    }

    #[test]
    fn symbol_rigged_joint_hits_the_cap() {
        let mut m = model(1);
        rig(&mut m, &[0.0, 5.0, 0.0, 0.0]);
        let x = input(&m, 0, 6);
        assert_eq!(greedy_decode(&m, &x).unwrap(), vec![1; x.len() * MAX_SYMBOLS_PER_FRAME]);
    }

    #[test]
    fn width_one_beam_equals_greedy() {
        for s in 0..50 {
            let m = model(s % 5);
            let x = input(&m, s, 4 + (s as usize % 7));
            let g = greedy_decode(&m, &x).unwrap();
            let b = beam_decode(&m, &x, BeamOptions::plain(1)).unwrap();
            assert_eq!(g, b[0].symbols, "utterance {s}");
        }
    }

    #[test]
    fn nbest_sorted_and_totals_consistent() {
        let m = model(2);
        let mut lm = ExternalLm::new(LmConfig::desk(m.config.alphabet.clone()), 4).unwrap();
        lm.usable = true;
        let x = input(&m, 7, 10);
        let opts = BeamOptions { beam: 5, lm: Some(&lm), fusion_weight: Some(0.4) };
        let hs = beam_decode(&m, &x, opts).unwrap();
        for w in hs.windows(2) {
            assert!(w[0].total >= w[1].total);
        }
        for h in &hs {
            assert!((h.total - (h.transducer_score + 0.4 * h.lm_score)).abs() < 1e-9);
            assert!(!h.symbols.contains(&BLANK));
        }
    }

    #[test]
    fn zero_weight_fusion_is_bit_identical() {
        let m = model(3);
        let mut lm = ExternalLm::new(LmConfig::desk(m.config.alphabet.clone()), 4).unwrap();
        lm.usable = true;
        for s in 0..10 {
            let x = input(&m, s, 8);
            let a = beam_decode(&m, &x, BeamOptions::plain(4)).unwrap();
            let b = beam_decode(&m, &x, BeamOptions { beam: 4, lm: Some(&lm), fusion_weight: Some(0.0) }).unwrap();
            assert_eq!(a.len(), b.len());
            for (p, q) in a.iter().zip(&b) {
                assert_eq!(p.symbols, q.symbols);
                assert_eq!(p.total.to_bits(), q.total.to_bits());
            }
        }
    }

    #[test]
    fn weight_without_lm_rejected() {
        let m = model(3);
        let x = input(&m, 0, 4);
        let opts = BeamOptions { beam: 2, lm: None, fusion_weight: Some(0.3) };
        assert!(beam_decode(&m, &x, opts).is_err());
        assert!(beam_decode(&m, &x, BeamOptions::plain(0)).is_err());
    }
}

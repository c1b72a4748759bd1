//! Quick numerical self-test: the transducer loss against exhaustive
//! alignment enumeration, its logit gradient against finite differences, and
//! the full model gradient against finite differences at 64-bit.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::SymbolTable;
use crate::loss::{brute_force_nll, rnnt_nll, LossLattice};
use crate::model::{transducer_loss_on_tape, ModelConfig, TransducerModel};
use crate::substrate::{finite_difference_check, GradCheckOptions, Stencil, Tensor};

pub const ORACLE_TOLERANCE: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SelfCheckReport {
    pub oracle_instances: usize,
    pub oracle_max_abs_error: f64,
    pub logit_grad_max_rel_error: f64,
    pub model_grad_max_rel_error: f64,
    pub model_coords_checked: usize,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.oracle_max_abs_error < ORACLE_TOLERANCE
            && self.logit_grad_max_rel_error < GRADIENT_TOLERANCE
            && self.model_grad_max_rel_error < GRADIENT_TOLERANCE
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
        writeln!(
            f,
            "rnnt loss oracle: max |error| = {:.3e} over {} instances [{}]",
            self.oracle_max_abs_error,
            self.oracle_instances,
            mark(self.oracle_max_abs_error < ORACLE_TOLERANCE)
        )?;
        writeln!(
            f,
            "rnnt logit gradient: max relative error = {:.3e} [{}]",
            self.logit_grad_max_rel_error,
            mark(self.logit_grad_max_rel_error < GRADIENT_TOLERANCE)
        )?;
        write!(
            f,
            "end-to-end model gradient: max relative error = {:.3e} over {} coordinates [{}]",
            self.model_grad_max_rel_error,
            self.model_coords_checked,
            mark(self.model_grad_max_rel_error < GRADIENT_TOLERANCE)
        )
    }
}

fn log_softmax_nodes(logits: &[f64], k: usize) -> Vec<f64> {
    logits
        .chunks(k)
        .flat_map(|z| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            z.iter().map(move |v| v - lse)
        })
        .collect()
}

fn random_instance(rng: &mut ChaCha8Rng, t: usize, u: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let logits = (0..t * (u + 1) * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..u).map(|_| rng.random_range(1..k)).collect();
    (logits, labels)
}

pub fn run_self_check(seed: u64) -> Result<SelfCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let oracle_instances = 500;
    let mut oracle_max_abs_error: f64 = 0.0;
    for _ in 0..oracle_instances {
        let (t, u, k) = (rng.random_range(1..=5), rng.random_range(0..=4), rng.random_range(2..=5));
        let (logits, labels) = random_instance(&mut rng, t, u, k);
        let lp = log_softmax_nodes(&logits, k);
        let fast = rnnt_nll(&lp, t, k, &labels)?;
        let slow = brute_force_nll(&lp, t, k, &labels)?;
        oracle_max_abs_error = oracle_max_abs_error.max((fast - slow).abs());
    }

    let mut logit_grad_max_rel_error: f64 = 0.0;
    for _ in 0..5 {
        let (t, k) = (3, 4);
        let (logits, labels) = random_instance(&mut rng, t, 2, k);
        let analytic = LossLattice::new(&log_softmax_nodes(&logits, k), t, k, &labels)?.grad_logits()?;
        let f = |z: &[f64]| rnnt_nll(&log_softmax_nodes(z, k), t, k, &labels);
        let h = 1e-4;
        for (i, &g) in analytic.iter().enumerate() {
            let at = |d: f64| -> Result<f64> {
                let mut z = logits.clone();
                z[i] += d;
                f(&z)
            };
            let num = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            let rel = (g - num).abs() / g.abs().max(num.abs()).max(1e-8);
            logit_grad_max_rel_error = logit_grad_max_rel_error.max(rel);
        }
    }

    let config = ModelConfig {
        alphabet: SymbolTable::new(&['a', 'b', 'c'])?,
        raw_speech_width: 2,
        encoder_layers: 1,
        encoder_width: 3,
        prediction_width: 4,
        embedding_width: 2,
        joint_width: 3,
        head_width: 3,
        ..ModelConfig::desk()
    };
    let model = TransducerModel::new(config, seed)?;
    let raw = Tensor::from_vec(&[6, 2], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let frames = model.prepare_speech(&raw)?.frames.cast::<f64>();
    let mut store = model.params.cast::<f64>();
    let ids = model.ids.clone();
    let report = finite_difference_check(
        |tape, s| Ok(transducer_loss_on_tape(tape, s, &ids, &frames, &[1, 2])?.0),
        &mut store,
        &GradCheckOptions { epsilon: 1e-4, stencil: Stencil::Central4, max_coords_per_param: Some(12) },
    )?;

    Ok(SelfCheckReport {
        oracle_instances,
        oracle_max_abs_error,
        logit_grad_max_rel_error,
        model_grad_max_rel_error: report.max_rel_error,
        model_coords_checked: report.coords_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_check_passes() {
        let r = run_self_check(1).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.to_string().contains("rnnt loss oracle"));
    }
}

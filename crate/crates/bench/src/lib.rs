//! Seeded fixtures shared by the benchmarks in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tog_core::features::FeatureSequence;
use tog_core::model::{ModelConfig, TransducerModel};
use tog_core::substrate::Tensor;

/// A normalised `T × (U+1) × K` log-probability lattice and `U` labels.
pub fn random_lattice(t: usize, u: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lp = Vec::with_capacity(t * (u + 1) * k);
    for _ in 0..t * (u + 1) {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lp.extend(row.iter().map(|v| v - z));
    }
    let labels = (0..u).map(|_| rng.random_range(1..k)).collect();
    (lp, labels)
}

/// The desk model and one prepared utterance of `raw_frames` speech frames.
pub fn desk_model_and_input(raw_frames: usize, seed: u64) -> (TransducerModel, FeatureSequence) {
    let model = TransducerModel::new(ModelConfig::desk(), seed).expect("desk config is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.config.raw_speech_width;
    let raw = Tensor::from_vec(&[raw_frames, width], (0..raw_frames * width).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data");
    let x = model.prepare_speech(&raw).expect("speech input");
    (model, x)
}

/// Random non-BLANK labels for `model`.
pub fn random_labels(model: &TransducerModel, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(1..model.alphabet_size())).collect()
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::derive_seed;
use crate::error::{Error, Result};
use crate::features::Modality;

/// One training example: an item (utterance or sentence) seen through one
/// modality, with its encoder-input length after stacking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub item: usize,
    pub modality: Modality,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<Sample>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Groups samples into batches for one epoch.
///
/// Samples are bucketed by `length / bucket_width`, shuffled inside their
/// bucket, cut into batches of at most `batch_size`, and the batches are then
/// shuffled. Every batch therefore spans fewer than `bucket_width` frames of
/// length, and speech and text samples of similar length share batches.
pub fn make_batches(
    samples: &[Sample],
    batch_size: usize,
    bucket_width: usize,
    seed: u64,
    epoch: usize,
) -> Result<BatchPlan> {
    if batch_size == 0 || bucket_width == 0 {
        return Err(Error::invalid("batch size and bucket width must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("batches/{epoch}")));
    let mut keyed: Vec<(usize, u64, Sample)> = samples
        .iter()
        .map(|s| (s.length / bucket_width, rng.random(), *s))
        .collect();
    keyed.sort_by_key(|&(bucket, key, _)| (bucket, key));
    let mut batches = Vec::new();
    let mut start = 0;
    while start < keyed.len() {
        let bucket = keyed[start].0;
        let end = keyed[start..]
            .iter()
            .position(|k| k.0 != bucket)
            .map_or(keyed.len(), |p| start + p);
        for chunk in keyed[start..end].chunks(batch_size) {
            batches.push(chunk.iter().map(|k| k.2).collect());
        }
        start = end;
    }
    batches.shuffle(&mut rng);
    Ok(BatchPlan { batches })
}

/// Stacked (frame-rate-halved) length of `frames` input frames.
pub fn stacked_length(frames: usize) -> usize {
    frames.div_ceil(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n_speech: usize, n_text: usize, length: usize) -> Vec<Sample> {
        (0..n_speech)
            .map(|i| Sample { item: i, modality: Modality::Speech, length })
            .chain((0..n_text).map(|i| Sample { item: i, modality: Modality::Text, length }))
            .collect()
    }

    #[test]
    fn ten_and_ten_in_batches_of_four() {
        let plan = make_batches(&samples(10, 10, 20), 4, 32, 1, 0).unwrap();
        assert_eq!(plan.len(), 5);
        assert_eq!(plan.sample_count(), 20);
        let mixed = plan
            .batches
            .iter()
            .filter(|b| {
                b.iter().any(|s| s.modality == Modality::Speech)
                    && b.iter().any(|s| s.modality == Modality::Text)
            })
            .count();
        assert!(mixed >= 1);
    }

    #[test]
    fn every_sample_once_and_lengths_bounded() {
        let s: Vec<Sample> = (0..97)
            .map(|i| Sample { item: i, modality: Modality::Speech, length: (i * 7) % 150 + 1 })
            .collect();
        let plan = make_batches(&s, 8, 32, 3, 2).unwrap();
        let mut items: Vec<usize> = plan.batches.iter().flatten().map(|s| s.item).collect();
        items.sort();
        assert_eq!(items, (0..97).collect::<Vec<_>>());
        for b in &plan.batches {
            let lo = b.iter().map(|s| s.length).min().unwrap();
            let hi = b.iter().map(|s| s.length).max().unwrap();
            assert!(hi - lo < 32);
            assert!(b.len() <= 8);
        }
    }

    #[test]
    fn deterministic_per_epoch_and_varies_across_epochs() {
        let s = samples(30, 30, 10);
        assert_eq!(make_batches(&s, 4, 32, 9, 1).unwrap(), make_batches(&s, 4, 32, 9, 1).unwrap());
        assert_ne!(make_batches(&s, 4, 32, 9, 1).unwrap(), make_batches(&s, 4, 32, 9, 2).unwrap());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(make_batches(&[], 4, 32, 0, 0).is_err());
    }
}

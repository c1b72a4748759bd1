use rand::Rng;

use crate::error::{Error, Result};
use crate::substrate::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub seq_noise_prob: f64,
    pub seq_noise_scale: f32,
    pub time_mask_count: usize,
    pub time_mask_max: usize,
    pub feature_mask_count: usize,
    /// `None` means a quarter of the feature bins.
    pub feature_mask_max: Option<usize>,
    pub speed_factors: Vec<f64>,
    pub textogram_mask_rate: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            seq_noise_prob: 0.8,
            seq_noise_scale: 0.4,
            time_mask_count: 2,
            time_mask_max: 10,
            feature_mask_count: 1,
            feature_mask_max: None,
            speed_factors: vec![0.9, 1.1],
            textogram_mask_rate: 0.25,
        }
    }
}

impl AugmentPolicy {
    /// No augmentation at all.
    pub fn off() -> Self {
        AugmentPolicy {
            seq_noise_prob: 0.0,
            seq_noise_scale: 0.0,
            time_mask_count: 0,
            time_mask_max: 0,
            feature_mask_count: 0,
            feature_mask_max: Some(0),
            speed_factors: Vec::new(),
            textogram_mask_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("seq_noise_prob", self.seq_noise_prob),
            ("textogram_mask_rate", self.textogram_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.speed_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::Config("speed factors must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_mask_max_for(&self, width: usize) -> usize {
        self.feature_mask_max.unwrap_or(width / 4)
    }

    /// Speed factors for one original plus four perturbed replicas.
    pub fn replica_factors(&self) -> Vec<f64> {
        let mut out = vec![1.0];
        for i in 0..4 {
            if let Some(&f) = self.speed_factors.get(i % self.speed_factors.len().max(1)) {
                out.push(f);
            }
        }
        out
    }
}

/// Mixes each utterance with a scaled, length-looped partner drawn from the
/// other batch members. Partners are always taken from the unmixed input.
pub fn sequence_noise_inject<R: Rng>(
    batch: &[Tensor<f32>],
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<Vec<Tensor<f32>>> {
    let mut out = batch.to_vec();
    for (i, utt) in out.iter_mut().enumerate() {
        if !rng.random_bool(policy.seq_noise_prob) {
            continue;
        }
        let j = if batch.len() == 1 {
            0
        } else {
            let k = rng.random_range(0..batch.len() - 1);
            if k >= i {
                k + 1
            } else {
                k
            }
        };
        let partner = &batch[j];
        if partner.cols() != utt.cols() {
            return Err(Error::shape("sequence_noise_inject", "batch members differ in width"));
        }
        if partner.rows() == 0 {
            continue;
        }
        for t in 0..utt.rows() {
            let src = partner.row(t % partner.rows());
            for (v, s) in utt.row_mut(t).iter_mut().zip(src) {
                *v += policy.seq_noise_scale * s;
            }
        }
    }
    Ok(out)
}

fn draw_span<R: Rng>(extent: usize, max_width: usize, rng: &mut R) -> (usize, usize) {
    let w = rng.random_range(0..=max_width.min(extent));
    let start = rng.random_range(0..=extent - w);
    (start, w)
}

/// Zeroes random time spans and feature bands. Time-mask widths are capped
/// below the sequence length so a mask never blanks the whole utterance.
pub fn spec_mask<R: Rng>(frames: &mut Tensor<f32>, policy: &AugmentPolicy, rng: &mut R) {
    let (t, f) = (frames.rows(), frames.cols());
    if t == 0 || f == 0 {
        return;
    }
    let tmax = policy.time_mask_max.min(t - 1);
    for _ in 0..policy.time_mask_count {
        let (s, w) = draw_span(t, tmax, rng);
        for i in s..s + w {
            frames.row_mut(i).fill(0.0);
        }
    }
    let fmax = policy.feature_mask_max_for(f);
    for _ in 0..policy.feature_mask_count {
        let (s, w) = draw_span(f, fmax, rng);
        mask_band(frames, s, w);
    }
}

pub fn mask_band(frames: &mut Tensor<f32>, start: usize, width: usize) {
    for i in 0..frames.rows() {
        frames.row_mut(i)[start..start + width].fill(0.0);
    }
}

/// Resamples the time axis by linear interpolation to `round(T / factor)` frames.
pub fn speed_tempo_perturb(frames: &Tensor<f32>, factor: f64) -> Result<Tensor<f32>> {
    if !(factor > 0.0) {
        return Err(Error::invalid(format!("speed factor {factor} must be positive")));
    }
    let t = frames.rows();
    let n = (t as f64 / factor).round() as usize;
    if n == 0 {
        return Err(Error::invalid(format!(
            "speed factor {factor} leaves no frames from {t}"
        )));
    }
    let f = frames.cols();
    let mut out = Tensor::zeros(&[n, f]);
    for j in 0..n {
        let pos = (j as f64 * factor).min((t - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t - 1);
        let w = (pos - lo as f64) as f32;
        let (a, b) = (frames.row(lo), frames.row(hi));
        for (o, (x, y)) in out.row_mut(j).iter_mut().zip(a.iter().zip(b)) {
            *o = if w == 0.0 { *x } else { x + w * (y - x) };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(t: usize, f: usize, base: f32) -> Tensor<f32> {
        Tensor::from_vec(&[t, f], (0..t * f).map(|i| base + i as f32 * 0.1).collect()).unwrap()
    }

    #[test]
    fn noise_prob_zero_is_identity() {
        let batch = vec![seq(5, 3, 1.0), seq(7, 3, -1.0)];
        let mut p = AugmentPolicy::default();
        p.seq_noise_prob = 0.0;
        let out = sequence_noise_inject(&batch, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn noise_scale_zero_is_identity() {
        let batch = vec![seq(5, 3, 1.0), seq(7, 3, -1.0)];
        let mut p = AugmentPolicy::default();
        p.seq_noise_prob = 1.0;
        p.seq_noise_scale = 0.0;
        let out = sequence_noise_inject(&batch, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn identical_pair_scales_by_1_4() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let batch = vec![x.clone(), x.clone()];
        let mut p = AugmentPolicy::default();
        p.seq_noise_prob = 1.0;
        let out = sequence_noise_inject(&batch, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for o in &out {
            for (a, b) in o.data().iter().zip(x.data()) {
                assert!((a - 1.4 * b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn partner_is_never_self_in_larger_batches() {
        // Distinct constant utterances reveal the partner via the added offset.
        let batch: Vec<_> = (0..4)
            .map(|k| Tensor::from_vec(&[1, 1], vec![10f32.powi(k)]).unwrap())
            .collect();
        let mut p = AugmentPolicy::default();
        p.seq_noise_prob = 1.0;
        p.seq_noise_scale = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let out = sequence_noise_inject(&batch, &p, &mut rng).unwrap();
            for (i, o) in out.iter().enumerate() {
                let added = o.data()[0] - batch[i].data()[0];
                assert_ne!(added, batch[i].data()[0]);
            }
        }
    }

    #[test]
    fn zero_counts_mask_nothing() {
        let mut x = seq(20, 8, 1.0);
        let orig = x.clone();
        let mut p = AugmentPolicy::default();
        p.time_mask_count = 0;
        p.feature_mask_count = 0;
        spec_mask(&mut x, &p, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(x, orig);
    }

    #[test]
    fn full_band_is_zero() {
        let mut x = seq(6, 8, 1.0);
        mask_band(&mut x, 2, 3);
        for i in 0..6 {
            assert_eq!(&x.row(i)[2..5], &[0.0; 3]);
            assert_ne!(x.row(i)[1], 0.0);
        }
    }

    #[test]
    fn spec_mask_is_seeded() {
        let p = AugmentPolicy::default();
        let (mut a, mut b) = (seq(30, 8, 1.0), seq(30, 8, 1.0));
        spec_mask(&mut a, &p, &mut ChaCha8Rng::seed_from_u64(9));
        spec_mask(&mut b, &p, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn speed_lengths() {
        let x = seq(90, 2, 0.0);
        assert_eq!(speed_tempo_perturb(&x, 0.9).unwrap().rows(), 100);
        assert_eq!(speed_tempo_perturb(&seq(110, 2, 0.0), 1.1).unwrap().rows(), 100);
        assert_eq!(speed_tempo_perturb(&x, 1.0).unwrap(), x);
        assert!(speed_tempo_perturb(&seq(1, 2, 0.0), 3.0).is_err());
        assert!(speed_tempo_perturb(&x, 0.0).is_err());
    }

    #[test]
    fn replicas_are_one_plus_four() {
        assert_eq!(AugmentPolicy::default().replica_factors(), vec![1.0, 0.9, 1.1, 0.9, 1.1]);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, Modality, SymbolTable};
use crate::substrate::Tensor;

/// Stable 64-bit seed for a named stream under a base seed.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Synthetic acoustics: one prototype vector per grapheme, Gaussian frame
/// noise, and a constant per-utterance channel offset.
#[derive(Clone, Debug, PartialEq)]
pub struct RendererParams {
    /// `K×F`; row 0 (BLANK) is unused.
    pub prototypes: Tensor<f32>,
    pub d_min: usize,
    pub d_max: usize,
    pub sigma: f32,
    pub offset_scale: f32,
}

impl RendererParams {
    pub fn generate(
        table: &SymbolTable,
        width: usize,
        (d_min, d_max): (usize, usize),
        sigma: f32,
        offset_scale: f32,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "prototypes"));
        let k = table.len();
        let mut prototypes = Tensor::zeros(&[k, width]);
        for s in 1..k {
            for v in prototypes.row_mut(s) {
                *v = rng.sample(StandardNormal);
            }
        }
        let p = RendererParams {
            prototypes,
            d_min,
            d_max,
            sigma,
            offset_scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn width(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn min_prototype_distance(&self) -> f32 {
        let k = self.prototypes.rows();
        let mut best = f32::INFINITY;
        for a in 1..k {
            for b in a + 1..k {
                let d: f32 = self
                    .prototypes
                    .row(a)
                    .iter()
                    .zip(self.prototypes.row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f32>()
                    .sqrt();
                best = best.min(d);
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_min == 0 || self.d_max < self.d_min {
            return Err(Error::Config(format!(
                "duration range [{}, {}] is invalid",
                self.d_min, self.d_max
            )));
        }
        if !(self.sigma >= 0.0) || !(self.offset_scale >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        let d = self.min_prototype_distance();
        if self.prototypes.rows() > 2 && !(d > 4.0 * self.sigma) {
            return Err(Error::Config(format!(
                "closest prototypes are {d:.3} apart, not more than 4 sigma = {:.3}",
                4.0 * self.sigma
            )));
        }
        Ok(())
    }
}

/// Renders `text` as speech frames, returning the frames and the grapheme id
/// behind each frame.
pub fn render_with_alignment(
    text: &str,
    table: &SymbolTable,
    params: &RendererParams,
    seed: u64,
) -> Result<(FeatureSequence, Vec<usize>)> {
    if text.is_empty() {
        return Err(Error::EmptySequence("render_speech"));
    }
    let ids = table.encode(text)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = params.width();
    let offset: Vec<f32> = (0..f)
        .map(|_| params.offset_scale * rng.sample::<f32, _>(StandardNormal))
        .collect();
    let mut data = Vec::new();
    let mut align = Vec::new();
    for &id in &ids {
        let d = rng.random_range(params.d_min..=params.d_max);
        for _ in 0..d {
            for (j, &p) in params.prototypes.row(id).iter().enumerate() {
                let n: f32 = rng.sample(StandardNormal);
                data.push(p + params.sigma * n + offset[j]);
            }
            align.push(id);
        }
    }
    let frames = Tensor::from_vec(&[align.len(), f], data)?;
    Ok((FeatureSequence::new(frames, 10, Modality::Speech), align))
}

pub fn render_speech(
    text: &str,
    table: &SymbolTable,
    params: &RendererParams,
    seed: u64,
) -> Result<FeatureSequence> {
    Ok(render_with_alignment(text, table, params, seed)?.0)
}

/// Fraction of frames whose nearest prototype is the grapheme that produced
/// them.
pub fn nearest_prototype_accuracy(
    texts: &[String],
    table: &SymbolTable,
    params: &RendererParams,
    seed: u64,
) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for (i, t) in texts.iter().enumerate() {
        let (seq, align) = render_with_alignment(t, table, params, derive_seed(seed, &i.to_string()))?;
        for (r, &truth) in align.iter().enumerate() {
            let frame = seq.frames.row(r);
            let guess = (1..params.prototypes.rows())
                .map(|s| {
                    let d: f32 = frame
                        .iter()
                        .zip(params.prototypes.row(s))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, s)
                })
                .fold((f32::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
                .1;
            right += (guess == truth) as usize;
            total += 1;
        }
    }
    Ok(right as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(sigma: f32, offset: f32, d: (usize, usize)) -> RendererParams {
        RendererParams::generate(&SymbolTable::desk(), 16, d, sigma, offset, 11).unwrap()
    }

    #[test]
    fn noiseless_render_repeats_prototypes() {
        let p = params(0.0, 0.0, (4, 4));
        let t = SymbolTable::desk();
        let s = render_speech("ab", &t, &p, 3).unwrap();
        assert_eq!(s.len(), 8);
        for r in 0..4 {
            assert_eq!(s.frames.row(r), p.prototypes.row(1));
            assert_eq!(s.frames.row(4 + r), p.prototypes.row(2));
        }
    }

    #[test]
    fn length_bounds() {
        let p = params(0.5, 0.3, (3, 6));
        for seed in 0..20 {
            let n = render_speech("ideas", &SymbolTable::desk(), &p, seed).unwrap().len();
            assert!((15..=30).contains(&n));
        }
    }

    #[test]
    fn empty_text_rejected() {
        assert!(render_speech("", &SymbolTable::desk(), &params(0.1, 0.0, (3, 6)), 0).is_err());
    }

    #[test]
    fn separation_enforced() {
        assert!(RendererParams::generate(&SymbolTable::desk(), 16, (3, 6), 5.0, 0.0, 1).is_err());
    }

    #[test]
    fn low_noise_is_classifiable() {
        let p = params(0.1, 0.0, (3, 6));
        let texts = vec!["the quick brown fox".to_string(), "jumps over it's lazy dog".to_string()];
        let acc = nearest_prototype_accuracy(&texts, &SymbolTable::desk(), &p, 4).unwrap();
        assert!(acc >= 0.99, "{acc}");
    }
}

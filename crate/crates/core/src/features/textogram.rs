use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::symbols::SymbolTable;
use crate::error::{Error, Result};
use crate::substrate::Tensor;

/// Symbol raster over the full alphabet (BLANK column included, always zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Textogram {
    pub raster: Tensor<f32>,
    pub source_text: String,
    pub duration: usize,
    /// Per symbol occurrence: was it masked.
    pub masked: Vec<bool>,
}

/// One-hot rows, `duration` per grapheme in text order; each occurrence is
/// dropped whole with probability `mask_rate`.
pub fn build_textogram(
    text: &str,
    table: &SymbolTable,
    duration: usize,
    mask_rate: f64,
    seed: u64,
) -> Result<Textogram> {
    if duration == 0 {
        return Err(Error::invalid("textogram duration must be at least one frame"));
    }
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(Error::invalid(format!("mask rate {mask_rate} outside [0, 1]")));
    }
    let ids = table.encode(text)?;
    let k = table.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raster = Tensor::zeros(&[ids.len() * duration, k]);
    let mut masked = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        let drop = rng.random::<f64>() < mask_rate;
        masked.push(drop);
        if drop {
            continue;
        }
        for r in 0..duration {
            raster.row_mut(i * duration + r)[id] = 1.0;
        }
    }
    Ok(Textogram {
        raster,
        source_text: text.to_string(),
        duration,
        masked,
    })
}

impl Textogram {
    /// Reads the symbol sequence back; masked occurrences come back as BLANK (0).
    pub fn symbols(&self) -> Vec<usize> {
        (0..self.raster.rows() / self.duration)
            .map(|i| {
                self.raster
                    .row(i * self.duration)
                    .iter()
                    .position(|&v| v == 1.0)
                    .unwrap_or(0)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideas_with_four_frames() {
        let t = SymbolTable::desk();
        let tg = build_textogram("ideas", &t, 4, 0.0, 1).unwrap();
        assert_eq!(tg.raster.rows(), 20);
        let expect = ['i', 'd', 'e', 'a', 's'];
        for (s, ch) in expect.iter().enumerate() {
            for r in 0..4 {
                let row = tg.raster.row(s * 4 + r);
                let hot: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
                assert_eq!(hot, vec![t.id(*ch).unwrap()]);
            }
        }
        assert!((0..20).all(|r| tg.raster.row(r)[0] == 0.0));
    }

    #[test]
    fn empty_text_gives_empty_raster() {
        let tg = build_textogram("", &SymbolTable::desk(), 4, 0.25, 1).unwrap();
        assert_eq!(tg.raster.rows(), 0);
    }

    #[test]
    fn full_masking_zeroes_everything() {
        let tg = build_textogram("ideas", &SymbolTable::desk(), 4, 1.0, 1).unwrap();
        assert_eq!(tg.raster.rows(), 20);
        assert!(tg.raster.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unmasked_raster_is_invertible() {
        let t = SymbolTable::desk();
        let text = "it's a dog";
        let tg = build_textogram(text, &t, 3, 0.0, 9).unwrap();
        assert_eq!(t.decode(&tg.symbols()), text);
    }

    #[test]
    fn rejects_unknown_grapheme() {
        let err = build_textogram("aBc", &SymbolTable::desk(), 4, 0.0, 1).unwrap_err();
        assert!(err.to_string().contains("'B'") && err.to_string().contains("position 1"));
    }
}

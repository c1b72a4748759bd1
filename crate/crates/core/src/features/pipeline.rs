use crate::error::{Error, Result};
use crate::substrate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "speech" => Some(Modality::Speech),
            "text" => Some(Modality::Text),
            _ => None,
        }
    }
}

/// Time-major frames plus the period between them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor<f32>,
    pub frame_period_ms: u32,
    pub modality: Modality,
}

impl FeatureSequence {
    pub fn new(frames: Tensor<f32>, frame_period_ms: u32, modality: Modality) -> Self {
        FeatureSequence {
            frames,
            frame_period_ms,
            modality,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.frames.cols()
    }
}

fn central_delta(x: &Tensor<f32>) -> Tensor<f32> {
    let (t, f) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[t, f]);
    for i in 0..t {
        let prev = x.row(i.saturating_sub(1));
        let next = x.row((i + 1).min(t - 1));
        for (o, (a, b)) in out.row_mut(i).iter_mut().zip(next.iter().zip(prev)) {
            *o = (a - b) * 0.5;
        }
    }
    out
}

/// Appends first and second time differences, giving `[x | Δx | ΔΔx]`.
pub fn add_deltas(frames: &Tensor<f32>) -> Result<Tensor<f32>> {
    if frames.rows() == 0 {
        return Err(Error::EmptySequence("add_deltas"));
    }
    let d1 = central_delta(frames);
    let d2 = central_delta(&d1);
    let (t, f) = (frames.rows(), frames.cols());
    let mut out = Tensor::zeros(&[t, 3 * f]);
    for i in 0..t {
        let row = out.row_mut(i);
        row[..f].copy_from_slice(frames.row(i));
        row[f..2 * f].copy_from_slice(d1.row(i));
        row[2 * f..].copy_from_slice(d2.row(i));
    }
    Ok(out)
}

/// Concatenates frame pairs and keeps every second one; an odd tail frame is
/// paired with itself.
pub fn stack_and_skip(frames: &Tensor<f32>) -> Result<Tensor<f32>> {
    if frames.rows() == 0 {
        return Err(Error::EmptySequence("stack_and_skip"));
    }
    let (t, f) = (frames.rows(), frames.cols());
    let n = t.div_ceil(2);
    let mut out = Tensor::zeros(&[n, 2 * f]);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..f].copy_from_slice(frames.row(2 * i));
        row[f..].copy_from_slice(frames.row((2 * i + 1).min(t - 1)));
    }
    Ok(out)
}

/// Inverse of [`stack_and_skip`] for inputs of even length.
pub fn unstack(stacked: &Tensor<f32>) -> Tensor<f32> {
    let f = stacked.cols() / 2;
    let mut data = Vec::with_capacity(stacked.len());
    for i in 0..stacked.rows() {
        data.extend_from_slice(stacked.row(i));
    }
    Tensor::from_vec(&[stacked.rows() * 2, f], data).expect("even width")
}

/// Applies stacking to a whole sequence, doubling its frame period.
pub fn stack_sequence(seq: &FeatureSequence) -> Result<FeatureSequence> {
    Ok(FeatureSequence::new(
        stack_and_skip(&seq.frames)?,
        seq.frame_period_ms * 2,
        seq.modality,
    ))
}

/// Places one modality's frames in its own channel block, zeroing the other.
pub fn assemble_dual_input(
    speech: Option<&FeatureSequence>,
    text: Option<&FeatureSequence>,
    d_sp: usize,
    d_tx: usize,
) -> Result<FeatureSequence> {
    let (src, offset, width, modality) = match (speech, text) {
        (Some(s), None) => (s, 0, d_sp, Modality::Speech),
        (None, Some(t)) => (t, d_sp, d_tx, Modality::Text),
        (Some(_), Some(_)) => {
            return Err(Error::invalid("dual input needs exactly one modality, got both"))
        }
        (None, None) => return Err(Error::invalid("dual input needs exactly one modality, got neither")),
    };
    if src.width() != width {
        return Err(Error::shape(
            "assemble_dual_input",
            format!("{} frames have width {}, expected {width}", modality.as_str(), src.width()),
        ));
    }
    let t = src.len();
    let mut out = Tensor::zeros(&[t, d_sp + d_tx]);
    for i in 0..t {
        out.row_mut(i)[offset..offset + width].copy_from_slice(src.frames.row(i));
    }
    Ok(FeatureSequence::new(out, src.frame_period_ms, modality))
}

/// True when every coordinate outside the sample's own block is exactly 0.0.
pub fn modality_zeroing_holds(seq: &FeatureSequence, d_sp: usize) -> bool {
    (0..seq.len()).all(|i| {
        let row = seq.frames.row(i);
        let unused = match seq.modality {
            Modality::Speech => &row[d_sp..],
            Modality::Text => &row[..d_sp],
        };
        unused.iter().all(|&v| v.to_bits() == 0)
    })
}

/// Per-dimension mean and standard deviation over a set of speech frames.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn identity(width: usize) -> Self {
        NormStats {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn estimate<'a>(seqs: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.cols()];
                sq = vec![0.0; s.cols()];
            } else if s.cols() != sum.len() {
                return Err(Error::shape("NormStats::estimate", "inconsistent feature widths"));
            }
            for i in 0..s.rows() {
                for (j, &v) in s.row(i).iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
            }
            n += s.rows();
        }
        if n == 0 {
            return Err(Error::EmptySequence("NormStats::estimate"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt()).max(1e-5) as f32)
            .collect();
        Ok(NormStats {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, frames: &mut Tensor<f32>) -> Result<()> {
        if frames.cols() != self.mean.len() {
            return Err(Error::shape(
                "NormStats::apply",
                format!("width {} vs stats width {}", frames.cols(), self.mean.len()),
            ));
        }
        for i in 0..frames.rows() {
            for ((v, m), s) in frames.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> Tensor<f32> {
        Tensor::from_vec(&[t, 1], (1..=t).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let x = Tensor::from_vec(&[4, 2], vec![3.0; 8]).unwrap();
        let d = add_deltas(&x).unwrap();
        assert_eq!(d.shape(), &[4, 6]);
        for i in 0..4 {
            assert_eq!(&d.row(i)[2..], &[0.0; 4]);
        }
    }

    #[test]
    fn deltas_of_ramp_interior() {
        let d = add_deltas(&ramp(6)).unwrap();
        for t in 2..4 {
            assert_eq!(d.row(t)[1], 1.0);
            assert_eq!(d.row(t)[2], 0.0);
        }
        // edges clamp: (x2 - x1)/2
        assert_eq!(d.row(0)[1], 0.5);
    }

    #[test]
    fn delta_width_triples() {
        let x = Tensor::zeros(&[3, 40]);
        assert_eq!(add_deltas(&x).unwrap().cols(), 120);
        assert!(add_deltas(&Tensor::zeros(&[0, 40])).is_err());
    }

    #[test]
    fn stacking_odd_length_repeats_tail() {
        let s = stack_and_skip(&ramp(5)).unwrap();
        assert_eq!(s.to_rows(), vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 5.0]]);
        assert_eq!(stack_and_skip(&Tensor::zeros(&[3, 120])).unwrap().cols(), 240);
        assert_eq!(stack_and_skip(&Tensor::zeros(&[3, 42])).unwrap().cols(), 84);
    }

    #[test]
    fn stacking_even_length_is_invertible() {
        let x = Tensor::from_vec(&[6, 3], (0..18).map(|v| v as f32 * 0.37).collect()).unwrap();
        assert_eq!(unstack(&stack_and_skip(&x).unwrap()), x);
    }

    #[test]
    fn frame_period_doubles() {
        let seq = FeatureSequence::new(ramp(4), 10, Modality::Speech);
        assert_eq!(stack_sequence(&seq).unwrap().frame_period_ms, 20);
    }

    #[test]
    fn dual_input_zeroes_unused_block() {
        let sp = FeatureSequence::new(Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap(), 20, Modality::Speech);
        let tx = FeatureSequence::new(Tensor::from_vec(&[2, 2], vec![1.0; 4]).unwrap(), 20, Modality::Text);
        let a = assemble_dual_input(Some(&sp), None, 3, 2).unwrap();
        let b = assemble_dual_input(None, Some(&tx), 3, 2).unwrap();
        assert_eq!(a.width(), 5);
        assert_eq!(a.frames.row(0), &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.frames.row(1), &[0.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(modality_zeroing_holds(&a, 3) && modality_zeroing_holds(&b, 3));
        assert!(assemble_dual_input(Some(&sp), Some(&tx), 3, 2).is_err());
        assert!(assemble_dual_input(None, None, 3, 2).is_err());
        assert!(assemble_dual_input(Some(&tx), None, 3, 2).is_err());
    }

    #[test]
    fn normalization_whitens() {
        let x = Tensor::from_vec(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let stats = NormStats::estimate([&x]).unwrap();
        let mut y = x.clone();
        stats.apply(&mut y).unwrap();
        let mean: f32 = y.data().iter().sum::<f32>() / 4.0;
        let var: f32 = y.data().iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    }
}

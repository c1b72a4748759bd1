//! Transducer negative log-likelihood over the T×(U+1) alignment lattice.
//!
//! Log-probabilities are laid out `[(t * (U + 1) + u) * K + k]`. BLANK is
//! symbol 0 and advances `t`; emitting label `y_{u+1}` advances `u`.
//! All lattice arithmetic is done in `f64` regardless of the model precision.

use crate::error::{Error, Result};
use crate::substrate::{Real, Tape, Tensor, Var};

pub const BLANK: usize = 0;

/// Finite stand-in for log(0).
pub const LOG_ZERO: f64 = -1e30;

#[inline]
pub fn logadd(a: f64, b: f64) -> f64 {
    if a <= LOG_ZERO {
        return b.max(LOG_ZERO);
    }
    if b <= LOG_ZERO {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn validate(log_probs_len: usize, t_len: usize, k: usize, labels: &[usize]) -> Result<()> {
    if t_len == 0 {
        return Err(Error::EmptySequence("transducer loss"));
    }
    if k < 2 {
        return Err(Error::invalid("alphabet needs BLANK plus at least one symbol"));
    }
    if let Some(pos) = labels.iter().position(|&y| y == BLANK) {
        return Err(Error::invalid(format!("BLANK in label sequence at position {pos}")));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {y} outside alphabet of {k}")));
    }
    let want = t_len * (labels.len() + 1) * k;
    if log_probs_len != want {
        return Err(Error::shape(
            "transducer loss",
            format!(
                "{log_probs_len} log-probs for T={t_len}, U={}, K={k} (expected {want})",
                labels.len()
            ),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LossLattice {
    t_len: usize,
    u_len: usize,
    k: usize,
    labels: Vec<usize>,
    log_probs: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    nll: f64,
}

impl LossLattice {
    /// Runs the forward and backward recursions.
    pub fn new(log_probs: &[f64], t_len: usize, k: usize, labels: &[usize]) -> Result<Self> {
        let mut lat = Self::forward(log_probs, t_len, k, labels)?;
        lat.compute_beta();
        Ok(lat)
    }

    /// Forward recursion only; gradients are unavailable until [`Self::compute_beta`].
    pub fn forward(log_probs: &[f64], t_len: usize, k: usize, labels: &[usize]) -> Result<Self> {
        validate(log_probs.len(), t_len, k, labels)?;
        let u_len = labels.len();
        let mut lat = LossLattice {
            t_len,
            u_len,
            k,
            labels: labels.to_vec(),
            log_probs: log_probs.to_vec(),
            alpha: vec![LOG_ZERO; t_len * (u_len + 1)],
            beta: Vec::new(),
            nll: 0.0,
        };
        let w = u_len + 1;
        for t in 0..t_len {
            for u in 0..=u_len {
                let a = if t == 0 && u == 0 {
                    0.0
                } else {
                    let from_blank = if t > 0 {
                        lat.alpha[(t - 1) * w + u] + lat.blank(t - 1, u)
                    } else {
                        LOG_ZERO
                    };
                    let from_label = if u > 0 {
                        lat.alpha[t * w + u - 1] + lat.label(t, u - 1)
                    } else {
                        LOG_ZERO
                    };
                    logadd(from_blank, from_label)
                };
                lat.alpha[t * w + u] = a.max(LOG_ZERO);
            }
        }
        lat.nll = -(lat.alpha[(t_len - 1) * w + u_len] + lat.blank(t_len - 1, u_len));
        Ok(lat)
    }

    pub fn compute_beta(&mut self) {
        let (t_len, u_len) = (self.t_len, self.u_len);
        let w = u_len + 1;
        let mut beta = vec![LOG_ZERO; t_len * w];
        for t in (0..t_len).rev() {
            for u in (0..=u_len).rev() {
                let b = if t == t_len - 1 && u == u_len {
                    self.blank(t, u)
                } else {
                    let via_blank = if t + 1 < t_len {
                        beta[(t + 1) * w + u] + self.blank(t, u)
                    } else {
                        LOG_ZERO
                    };
                    let via_label = if u < u_len {
                        beta[t * w + u + 1] + self.label(t, u)
                    } else {
                        LOG_ZERO
                    };
                    logadd(via_blank, via_label)
                };
                beta[t * w + u] = b.max(LOG_ZERO);
            }
        }
        self.beta = beta;
    }

    #[inline]
    fn lp(&self, t: usize, u: usize, k: usize) -> f64 {
        self.log_probs[(t * (self.u_len + 1) + u) * self.k + k]
    }

    #[inline]
    fn blank(&self, t: usize, u: usize) -> f64 {
        self.lp(t, u, BLANK)
    }

    #[inline]
    fn label(&self, t: usize, u: usize) -> f64 {
        self.lp(t, u, self.labels[u])
    }

    pub fn nll(&self) -> f64 {
        self.nll
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t_len, self.u_len, self.k)
    }

    pub fn alpha(&self, t: usize, u: usize) -> f64 {
        self.alpha[t * (self.u_len + 1) + u]
    }

    pub fn beta(&self, t: usize, u: usize) -> Option<f64> {
        self.beta.get(t * (self.u_len + 1) + u).copied()
    }

    pub fn has_beta(&self) -> bool {
        !self.beta.is_empty()
    }

    /// d(nll)/d(log-prob) over the whole lattice.
    pub fn grad_log_probs(&self) -> Result<Vec<f64>> {
        if !self.has_beta() {
            return Err(Error::invalid("lattice backward pass not computed"));
        }
        let (t_len, u_len, k) = (self.t_len, self.u_len, self.k);
        let w = u_len + 1;
        let log_p = -self.nll;
        let mut grad = vec![0.0; self.log_probs.len()];
        for t in 0..t_len {
            for u in 0..=u_len {
                let a = self.alpha[t * w + u];
                let base = (t * w + u) * k;
                let next_blank = if t + 1 < t_len {
                    Some(self.beta[(t + 1) * w + u])
                } else if u == u_len {
                    Some(0.0)
                } else {
                    None
                };
                if let Some(b) = next_blank {
                    grad[base + BLANK] = -(a + self.blank(t, u) + b - log_p).exp();
                }
                if u < u_len {
                    let b = self.beta[t * w + u + 1];
                    grad[base + self.labels[u]] = -(a + self.label(t, u) + b - log_p).exp();
                }
            }
        }
        Ok(grad)
    }

    /// Gradient with respect to the logits that produced these log-probs
    /// through a per-node log-softmax.
    pub fn grad_logits(&self) -> Result<Vec<f64>> {
        let g = self.grad_log_probs()?;
        let k = self.k;
        let mut out = vec![0.0; g.len()];
        for (node, (gn, on)) in g.chunks(k).zip(out.chunks_mut(k)).enumerate() {
            let total: f64 = gn.iter().sum();
            for j in 0..k {
                on[j] = gn[j] - self.log_probs[node * k + j].exp() * total;
            }
        }
        Ok(out)
    }
}

pub fn rnnt_nll(log_probs: &[f64], t_len: usize, k: usize, labels: &[usize]) -> Result<f64> {
    Ok(LossLattice::forward(log_probs, t_len, k, labels)?.nll())
}

pub fn rnnt_grad(lattice: &LossLattice) -> Result<Vec<f64>> {
    lattice.grad_log_probs()
}

/// Number of monotone alignments: C(T-1+U, U).
pub fn alignment_count(t_len: usize, u_len: usize) -> u128 {
    if t_len == 0 {
        return 0;
    }
    let n = (t_len - 1 + u_len) as u128;
    let r = u_len.min(t_len - 1) as u128;
    (0..r).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Enumerates every alignment explicitly and log-sums their probabilities.
pub fn brute_force_nll(log_probs: &[f64], t_len: usize, k: usize, labels: &[usize]) -> Result<f64> {
    validate(log_probs.len(), t_len, k, labels)?;
    let u_len = labels.len();
    let count = alignment_count(t_len, u_len);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::invalid(format!(
            "{count} alignments exceeds enumeration limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let lp = |t: usize, u: usize, s: usize| log_probs[(t * (u_len + 1) + u) * k + s];
    let mut path_scores = Vec::with_capacity(count as usize);
    let mut stack = vec![(0usize, 0usize, 0.0f64)];
    while let Some((t, u, acc)) = stack.pop() {
        if t == t_len - 1 && u == u_len {
            path_scores.push(acc + lp(t, u, BLANK));
            continue;
        }
        if t + 1 < t_len {
            stack.push((t + 1, u, acc + lp(t, u, BLANK)));
        }
        if u < u_len {
            stack.push((t, u + 1, acc + lp(t, u, labels[u])));
        }
    }
    let m = path_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = path_scores.iter().map(|&x| (x - m).exp()).sum();
    Ok(-(m + s.ln()))
}

/// Records the transducer loss of a `(T·(U+1))×K` log-prob matrix on the tape.
pub fn rnnt_loss_on_tape<R: Real>(
    tape: &mut Tape<R>,
    log_probs: Var,
    t_len: usize,
    labels: &[usize],
) -> Result<(Var, f64)> {
    let v = tape.value(log_probs);
    let k = v.cols();
    let lp: Vec<f64> = v.data().iter().map(|x| x.as_f64()).collect();
    let lattice = LossLattice::new(&lp, t_len, k, labels)?;
    let nll = lattice.nll();
    if !nll.is_finite() {
        return Err(Error::NonFinite(format!("transducer loss {nll}")));
    }
    let grad: Vec<R> = lattice.grad_log_probs()?.into_iter().map(R::lit).collect();
    let grad = Tensor::from_vec(v.shape(), grad)?;
    let var = tape.external_scalar(log_probs, R::lit(nll), grad)?;
    Ok((var, nll))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::gradcheck::{check_vector_gradient, Stencil};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_log_probs(rng: &mut ChaCha8Rng, nodes: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
        let logits: Vec<f64> = (0..nodes * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        (log_softmax_nodes(&logits, k), logits)
    }

    fn log_softmax_nodes(logits: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; logits.len()];
        for (i, o) in logits.chunks(k).zip(out.chunks_mut(k)) {
            crate::substrate::tensor::log_softmax_row(i, o);
        }
        out
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, usize, usize, Vec<usize>) {
        let t = rng.random_range(1..=5);
        let u = rng.random_range(0..=4);
        let k = rng.random_range(2..=5);
        let labels: Vec<usize> = (0..u).map(|_| rng.random_range(1..k)).collect();
        let (lp, logits) = random_log_probs(rng, t * (u + 1), k);
        (lp, logits, t, k, labels)
    }

    #[test]
    fn single_frame_no_labels_is_blank() {
        let lp = [0.3f64.ln(), 0.7f64.ln()];
        let nll = rnnt_nll(&lp, 1, 2, &[]).unwrap();
        assert!((nll + 0.3f64.ln()).abs() < 1e-15);
        assert_eq!(nll, brute_force_nll(&lp, 1, 2, &[]).unwrap());
        let lat = LossLattice::new(&lp, 1, 2, &[]).unwrap();
        assert_eq!(lat.grad_log_probs().unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn two_frames_one_label_uniform_is_ln4() {
        let lp = vec![0.5f64.ln(); 2 * 2 * 2];
        let nll = rnnt_nll(&lp, 2, 2, &[1]).unwrap();
        assert!((nll - 4f64.ln()).abs() < 1e-12);
        assert_eq!(alignment_count(2, 1), 2);
    }

    #[test]
    fn rejects_blank_label_and_size_mismatch() {
        let lp = vec![0.5f64.ln(); 8];
        assert!(rnnt_nll(&lp, 2, 2, &[0]).is_err());
        assert!(rnnt_nll(&lp, 2, 2, &[1, 1]).is_err());
        assert!(rnnt_nll(&lp, 0, 2, &[]).is_err());
        assert!(brute_force_nll(&vec![0.0; 60 * 31 * 2], 60, 2, &[1; 30]).is_err());
    }

    #[test]
    fn beta_missing_is_rejected() {
        let lp = vec![0.5f64.ln(); 8];
        let lat = LossLattice::forward(&lp, 2, 2, &[1]).unwrap();
        assert!(rnnt_grad(&lat).is_err());
    }

    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (lp, _, t, k, labels) = random_instance(&mut rng);
            let a = rnnt_nll(&lp, t, k, &labels).unwrap();
            let b = brute_force_nll(&lp, t, k, &labels).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            assert!(a >= 0.0);
        }
    }

    #[test]
    fn anti_diagonals_carry_total_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (lp, _, t, k, labels) = random_instance(&mut rng);
            let lat = LossLattice::new(&lp, t, k, &labels).unwrap();
            let u_len = labels.len();
            for d in 0..(t + u_len) {
                let mut acc = LOG_ZERO;
                for tt in 0..t {
                    if d >= tt && d - tt <= u_len {
                        let uu = d - tt;
                        let ab = lat.alpha(tt, uu) + lat.beta(tt, uu).unwrap();
                        assert!(ab <= -lat.nll() + 1e-5);
                        acc = logadd(acc, ab);
                    }
                }
                assert!((acc + lat.nll()).abs() < 1e-5, "diagonal {d}");
            }
            assert_eq!(lat.alpha(0, 0), 0.0);
            assert!((lat.beta(0, 0).unwrap() + lat.nll()).abs() < 1e-9);
        }
    }

    #[test]
    fn logit_gradient_sums_to_zero_and_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, k, labels) = (3, 3, vec![2, 1]);
        let (lp, logits) = random_log_probs(&mut rng, t * 3, k);
        let lat = LossLattice::new(&lp, t, k, &labels).unwrap();
        let g = lat.grad_logits().unwrap();
        for node in g.chunks(k) {
            assert!(node.iter().sum::<f64>().abs() < 1e-12);
        }
        let err = check_vector_gradient(
            |z| rnnt_nll(&log_softmax_nodes(z, k), t, k, &labels).unwrap(),
            &logits,
            &g,
            1e-3,
            Stencil::Central4,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
        let glp = lat.grad_log_probs().unwrap();
        let err = check_vector_gradient(
            |x| rnnt_nll(x, t, k, &labels).unwrap(),
            &lp,
            &glp,
            1e-3,
            Stencil::Central4,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn certain_single_alignment_has_zero_loss() {
        // T=2, U=1: emit label at t=0 with prob 1, then blanks with prob 1.
        let z = LOG_ZERO;
        let lp = vec![
            z, 0.0, // (0,0): label
            0.0, z, // (0,1): blank
            0.0, z, // (1,0)
            0.0, z, // (1,1)
        ];
        assert_eq!(rnnt_nll(&lp, 2, 2, &[1]).unwrap(), 0.0);
    }
}

use std::fmt;
use std::time::Instant;

use super::batch::{make_batches, BatchPlan, Sample};
use super::config::TrainConfig;
use super::optim::{adamw_step, clip_grad_norm, one_cycle_lr, AdamState};
use crate::error::{Error, Result};
use crate::substrate::{Gradients, ParamStore};

/// Anything owning a parameter store the loop can update.
pub trait Trainable: Sync {
    fn params(&self) -> &ParamStore<f32>;
    fn params_mut(&mut self) -> &mut ParamStore<f32>;
}

impl Trainable for crate::model::TransducerModel {
    fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
}

impl Trainable for crate::model::ExternalLm {
    fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
}

/// Where in the run a batch sits; all randomness is derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchCtx {
    pub epoch: usize,
    pub step: usize,
    pub batch: usize,
}

/// Loss summed over a batch, the count it is normalised by for reporting
/// (labels or tokens), and the summed gradient.
pub struct BatchResult {
    pub grads: Gradients<f32>,
    pub loss: f64,
    pub count: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} mean_train_nll={:.4} lr={:.3e} wall_seconds={:.1}",
            self.epoch, self.mean_loss, self.lr, self.wall_seconds
        )
    }
}

/// Optimiser state that survives a checkpoint: everything else is derived
/// from the seed and the global step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopState {
    pub adam: AdamState,
    pub step: usize,
}

/// Runs `f` for `0..n` on up to `workers` scoped threads, returning results
/// in index order.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || n <= 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers.min(n));
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| s.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Result<Vec<T>>>()))
            .collect();
        let mut out = Vec::with_capacity(n);
        for h in handles {
            out.extend(h.join().map_err(|_| Error::invalid("worker thread panicked"))??);
        }
        Ok(out)
    })
}

/// Sums per-sample gradients in sample order so results do not depend on the
/// worker count.
pub fn reduce_ordered(n_params: usize, parts: Vec<(Gradients<f32>, f64, f64)>) -> BatchResult {
    let mut grads = Gradients::new(n_params);
    let (mut loss, mut count) = (0.0, 0.0);
    for (g, l, c) in parts {
        grads.merge(&g);
        loss += l;
        count += c;
    }
    BatchResult { grads, loss, count }
}

/// The epoch/step loop shared by every trainer: batching, one-cycle rate,
/// clipping and AdamW. Stops after `max_steps` steps if given (used to
/// interrupt and resume); returns metrics for every epoch completed.
pub fn run_loop<M, F>(
    model: &mut M,
    state: &mut LoopState,
    cfg: &TrainConfig,
    samples: &[Sample],
    max_steps: Option<usize>,
    mut batch_fn: F,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>>
where
    M: Trainable,
    F: FnMut(&M, &[Sample], BatchCtx) -> Result<BatchResult>,
{
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let plan_for = |epoch| make_batches(samples, cfg.batch_size, cfg.bucket_width, cfg.seed, epoch);
    let mut plan: BatchPlan = plan_for(state.step / plan_for(0)?.len())?;
    let per_epoch = plan.len();
    let total = cfg.epochs * per_epoch;
    let budget_end = max_steps.map_or(total, |m| (state.step + m).min(total));
    let mut metrics = Vec::new();
    let (mut loss_sum, mut count_sum) = (0.0, 0.0);
    let mut clock = Instant::now();
    let mut plan_epoch = state.step / per_epoch;
    while state.step < budget_end {
        let epoch = state.step / per_epoch;
        let b = state.step % per_epoch;
        if epoch != plan_epoch {
            plan = plan_for(epoch)?;
            plan_epoch = epoch;
        }
        let lr = one_cycle_lr(state.step, per_epoch, cfg)?;
        let ctx = BatchCtx { epoch, step: state.step, batch: b };
        let res = batch_fn(model, &plan.batches[b], ctx)?;
        if !res.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss in batch {b} of epoch {} (step {})",
                epoch + 1,
                state.step
            )));
        }
        let params = model.params_mut();
        params.zero_grads();
        params.accumulate(&res.grads);
        clip_grad_norm(params, cfg.clip_norm)?;
        adamw_step(params, &mut state.adam, lr, cfg)?;
        state.step += 1;
        loss_sum += res.loss;
        count_sum += res.count;
        if state.step % per_epoch == 0 {
            let m = EpochMetrics {
                epoch: epoch + 1,
                mean_loss: loss_sum / count_sum.max(1.0),
                lr,
                wall_seconds: clock.elapsed().as_secs_f64(),
            };
            log::info!("{m}");
            on_epoch(&m);
            metrics.push(m);
            loss_sum = 0.0;
            count_sum = 0.0;
            clock = Instant::now();
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Modality;
    use crate::substrate::{Tape, Tensor};

    struct Quad(ParamStore<f32>);
    impl Trainable for Quad {
        fn params(&self) -> &ParamStore<f32> {
            &self.0
        }
        fn params_mut(&mut self) -> &mut ParamStore<f32> {
            &mut self.0
        }
    }

    fn quad_batch(m: &Quad, batch: &[Sample], _: BatchCtx) -> Result<BatchResult> {
        let parts = batch
            .iter()
            .map(|s| {
                let mut tape = Tape::new();
                let w = tape.param(&m.0, m.0.id("w").unwrap());
                let target = tape.constant(Tensor::row_vector(vec![s.item as f32 * 0.1, 1.0]));
                let d = tape.sub(w, target)?;
                let sq = tape.mul(d, d)?;
                let l = tape.sum(sq);
                let mut g = Gradients::for_store(&m.0);
                tape.backward(l, &mut g)?;
                Ok((g, tape.scalar(l) as f64, 1.0))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce_ordered(m.0.len(), parts))
    }

    fn setup() -> (Quad, Vec<Sample>, TrainConfig) {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row_vector(vec![3.0, -3.0])).unwrap();
        let samples = (0..10)
            .map(|i| Sample { item: i, modality: Modality::Text, length: 5 })
            .collect();
        let mut cfg = TrainConfig::desk();
        cfg.epochs = 4;
        cfg.warmup_epochs = 1;
        cfg.batch_size = 3;
        cfg.max_lr = 0.3;
        cfg.start_lr = 0.03;
        (Quad(s), samples, cfg)
    }

    #[test]
    fn loss_decreases_and_metrics_per_epoch() {
        let (mut m, samples, cfg) = setup();
        let mut st = LoopState::default();
        let mut lines = Vec::new();
        let metrics =
            run_loop(&mut m, &mut st, &cfg, &samples, None, quad_batch, &mut |e| lines.push(e.to_string())).unwrap();
        assert_eq!(metrics.len(), 4);
        assert_eq!(st.step, 16);
        assert!(metrics[3].mean_loss < metrics[0].mean_loss);
        assert!(lines[0].starts_with("epoch=1 mean_train_nll="));
    }

    #[test]
    fn interrupted_run_resumes_identically() {
        let (mut a, samples, cfg) = setup();
        let mut sa = LoopState::default();
        run_loop(&mut a, &mut sa, &cfg, &samples, None, quad_batch, &mut |_| {}).unwrap();

        let (mut b, _, _) = setup();
        let mut sb = LoopState::default();
        run_loop(&mut b, &mut sb, &cfg, &samples, Some(7), quad_batch, &mut |_| {}).unwrap();
        assert_eq!(sb.step, 7);
        let mut resumed = Quad(b.0.clone());
        let mut sr = sb.clone();
        run_loop(&mut resumed, &mut sr, &cfg, &samples, None, quad_batch, &mut |_| {}).unwrap();
        assert_eq!(a.0.value(a.0.id("w").unwrap()).data(), resumed.0.value(resumed.0.id("w").unwrap()).data());
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let (mut m, samples, mut cfg) = setup();
        cfg.epochs = 0;
        cfg.warmup_epochs = 0;
        let before = m.0.value(m.0.id("w").unwrap()).clone();
        let out = run_loop(&mut m, &mut LoopState::default(), &cfg, &samples, None, quad_batch, &mut |_| {}).unwrap();
        assert!(out.is_empty());
        assert_eq!(&before, m.0.value(m.0.id("w").unwrap()));
    }

    #[test]
    fn non_finite_loss_names_batch() {
        let (mut m, samples, cfg) = setup();
        let e = run_loop(
            &mut m,
            &mut LoopState::default(),
            &cfg,
            &samples,
            None,
            |m: &Quad, _: &[Sample], _| {
                Ok(BatchResult { grads: Gradients::for_store(&m.0), loss: f64::NAN, count: 1.0 })
            },
            &mut |_| {},
        )
        .unwrap_err();
        assert!(e.to_string().contains("batch 0"), "{e}");
    }

    #[test]
    fn parallel_map_preserves_order() {
        let out = parallel_map(10, 3, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
    }
}
